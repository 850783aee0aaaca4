//! Cartesian embedded-boundary grids on the unit disc (n = 1) and the unit
//! ball in ℂ² (n = 2), together with the discrete complex Hessian.
//!
//! Real coordinates are ordered `(x1, y1, x2, y2)`. Nodes are stored in
//! row-major order with axis 0 slowest. Unknowns are the nodes strictly
//! inside the domain; every unknown carries a fixed stencil of neighbour
//! slots, each either another unknown or a crossing with the boundary.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::SpaceTimeFn;

/// Default eigenvalue floor for log-determinants and Newton linearizations.
pub const DEFAULT_DELTA: f64 = 1e-8;

const EXT: u32 = 1 << 31;
const MIN_THETA: f64 = 1e-6;

/// Coordinate pairs entering the off-diagonal entry of a 2×2 complex Hessian:
/// `(x1,x2) (y1,y2) (x1,y2) (y1,x2)`.
const MIXED: [(usize, usize); 4] = [(0, 2), (1, 3), (0, 3), (1, 2)];

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub n: usize,
    pub center: [f64; 4],
    pub radius: f64,
}

impl DomainSpec {
    pub fn disc() -> Self {
        DomainSpec {
            n: 1,
            center: [0.0; 4],
            radius: 1.0,
        }
    }

    pub fn ball() -> Self {
        DomainSpec {
            n: 2,
            center: [0.0; 4],
            radius: 1.0,
        }
    }

    pub fn unit(n: usize) -> Result<Self> {
        match n {
            1 => Ok(Self::disc()),
            2 => Ok(Self::ball()),
            _ => Err(Error::InvalidDomain(format!("dimension {n} is not 1 or 2"))),
        }
    }

    pub fn real_dim(&self) -> usize {
        2 * self.n
    }

    fn validate(&self) -> Result<()> {
        if !matches!(self.n, 1 | 2) {
            return Err(Error::InvalidDomain(format!("dimension {} is not 1 or 2", self.n)));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidDomain(format!("radius {} must be positive", self.radius)));
        }
        Ok(())
    }

    /// Defining function `|z − c|² − R²`.
    pub fn rho(&self, x: &[f64]) -> f64 {
        dist2(x, &self.center[..x.len()]) - self.radius * self.radius
    }

    /// Distance from `x` to the boundary sphere, positive inside.
    pub fn depth(&self, x: &[f64]) -> f64 {
        self.radius - dist2(x, &self.center[..x.len()]).sqrt()
    }

    /// Radial projection of a point onto the boundary sphere.
    pub fn project(&self, x: &[f64]) -> [f64; 4] {
        let d = self.real_dim();
        let r = dist2(&x[..d], &self.center[..d]).sqrt();
        let mut out = self.center;
        if r == 0.0 {
            out[0] += self.radius;
            return out;
        }
        for a in 0..d {
            out[a] += (x[a] - self.center[a]) * self.radius / r;
        }
        out
    }
}

pub(crate) fn dist2(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// A stencil neighbour lying outside the domain, replaced by the point where
/// the stencil ray leaves it.
#[derive(Debug, Clone)]
pub struct Crossing {
    /// Unknown whose stencil the crossing belongs to.
    pub owner: usize,
    /// Grid node that the crossing stands in for.
    pub node: usize,
    /// Fraction of the stencil arm lying inside the domain, in `[1e-6, 1]`.
    pub theta: f64,
    pub point: [f64; 4],
}

#[derive(Debug, Clone)]
pub struct Grid {
    pub spec: DomainSpec,
    pub nodes_per_axis: usize,
    pub h: f64,
    /// Unknown index per node, `None` outside the domain.
    pub unknown_of: Vec<Option<u32>>,
    /// Node index per unknown.
    pub node_of: Vec<usize>,
    pub crossings: Vec<Crossing>,
    slots: Vec<u32>,
    slots_per_node: usize,
    /// Unknowns with at least one crossing in their stencil.
    pub boundary_adjacent: Vec<bool>,
    pub(crate) pattern: Pattern,
}

/// Sparsity of the stencil matrix on the unknowns: one row per unknown,
/// columns sorted, with the storage position of every slot and of the
/// diagonal.
#[derive(Debug, Clone, Default)]
pub(crate) struct Pattern {
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    /// Position per slot, `u32::MAX` for crossings.
    pub slot_entry: Vec<u32>,
    pub diag_entry: Vec<u32>,
}

impl Pattern {
    fn build(g: &Grid) -> Self {
        let mut pat = Pattern {
            row_ptr: vec![0],
            ..Default::default()
        };
        for p in 0..g.unknowns() {
            let slots = g.slots(p);
            let mut row: Vec<u32> = slots.iter().copied().filter(|s| s & EXT == 0).collect();
            row.push(p as u32);
            row.sort_unstable();
            let base = pat.cols.len();
            for &s in slots {
                pat.slot_entry.push(if s & EXT == 0 {
                    (base + row.binary_search(&s).unwrap()) as u32
                } else {
                    u32::MAX
                });
            }
            pat.diag_entry.push((base + row.binary_search(&(p as u32)).unwrap()) as u32);
            pat.cols.extend_from_slice(&row);
            pat.row_ptr.push(pat.cols.len());
        }
        pat
    }
}

/// A point snapped to its nearest grid node.
#[derive(Debug, Clone, Copy)]
pub struct Snap {
    pub node: usize,
    pub distance: f64,
}

impl Grid {
    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn dim(&self) -> usize {
        self.spec.real_dim()
    }

    pub fn node_count(&self) -> usize {
        self.nodes_per_axis.pow(self.dim() as u32)
    }

    pub fn unknowns(&self) -> usize {
        self.node_of.len()
    }

    pub fn multi_index(&self, node: usize) -> [usize; 4] {
        let d = self.dim();
        let m = self.nodes_per_axis;
        let mut idx = [0; 4];
        let mut rest = node;
        for a in (0..d).rev() {
            idx[a] = rest % m;
            rest /= m;
        }
        idx
    }

    pub fn node_at(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.nodes_per_axis + i)
    }

    pub fn coords(&self, node: usize) -> [f64; 4] {
        let idx = self.multi_index(node);
        let mut x = [0.0; 4];
        for a in 0..self.dim() {
            x[a] = self.axis_coord(a, idx[a]);
        }
        x
    }

    fn axis_coord(&self, axis: usize, i: usize) -> f64 {
        self.spec.center[axis] - self.spec.radius + i as f64 * self.h
    }

    pub fn unknown_coords(&self, p: usize) -> [f64; 4] {
        self.coords(self.node_of[p])
    }

    pub fn is_interior(&self, node: usize) -> bool {
        self.unknown_of[node].is_some()
    }

    pub(crate) fn slots(&self, p: usize) -> &[u32] {
        &self.slots[p * self.slots_per_node..(p + 1) * self.slots_per_node]
    }

    /// Nearest node to `x`; the per-axis offset never exceeds h/2.
    pub fn snap(&self, x: &[f64]) -> Snap {
        let d = self.dim();
        let mut idx = [0usize; 4];
        for a in 0..d {
            let s = (x[a] - self.spec.center[a] + self.spec.radius) / self.h;
            idx[a] = s.round().clamp(0.0, (self.nodes_per_axis - 1) as f64) as usize;
        }
        let node = self.node_at(&idx[..d]);
        let c = self.coords(node);
        Snap {
            node,
            distance: dist2(&c[..d], &x[..d]).sqrt(),
        }
    }

    /// Sample a function at every node and, if `with_trace`, at every
    /// boundary crossing. Values are not clipped.
    pub fn sample(&self, f: &dyn SpaceTimeFn, t: f64, with_trace: bool) -> ScalarField {
        let d = self.dim();
        let values: Vec<f64> = (0..self.node_count())
            .into_par_iter()
            .map(|i| f.eval(&self.coords(i)[..d], t))
            .collect();
        let trace = with_trace.then(|| self.sample_trace(f, t));
        ScalarField {
            floor: vec![false; values.len()],
            values,
            time: t,
            m_cap: crate::DEFAULT_M_CAP,
            trace,
        }
    }

    pub fn sample_trace(&self, f: &dyn SpaceTimeFn, t: f64) -> Vec<f64> {
        let d = self.dim();
        self.crossings
            .par_iter()
            .map(|c| f.eval(&c.point[..d], t))
            .collect()
    }

    /// Multilinear interpolation of nodal values at an arbitrary point of the
    /// bounding box.
    pub fn interpolate(&self, u: &ScalarField, x: &[f64]) -> f64 {
        let d = self.dim();
        let top = (self.nodes_per_axis - 2) as f64;
        let mut base = [0usize; 4];
        let mut frac = [0.0; 4];
        for a in 0..d {
            let s = ((x[a] - self.spec.center[a] + self.spec.radius) / self.h).clamp(0.0, top + 1.0);
            let i = s.floor().min(top);
            base[a] = i as usize;
            frac[a] = s - i;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = [0usize; 4];
            for a in 0..d {
                let bit = (corner >> a) & 1;
                idx[a] = base[a] + bit;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w != 0.0 {
                acc += w * u.values[self.node_at(&idx[..d])];
            }
        }
        acc
    }
}

/// Offsets of the stencil slots, as per-axis steps in {−1, 0, 1}.
fn stencil_offsets(n: usize) -> Vec<[i32; 4]> {
    let d = 2 * n;
    let mut out = Vec::new();
    for a in 0..d {
        for s in [1, -1] {
            let mut o = [0; 4];
            o[a] = s;
            out.push(o);
        }
    }
    if n == 2 {
        for &(a, b) in &MIXED {
            for (sa, sb) in [(1, 1), (1, -1), (-1, 1), (-1, -1)] {
                let mut o = [0; 4];
                o[a] = sa;
                o[b] = sb;
                out.push(o);
            }
        }
    }
    out
}

pub fn build_grid(spec: &DomainSpec, resolution: usize) -> Result<Grid> {
    spec.validate()?;
    if resolution < 17 {
        return Err(Error::ResolutionTooSmall(resolution));
    }
    if resolution % 2 == 0 {
        return Err(Error::EvenResolution(resolution));
    }
    let d = spec.real_dim();
    let m = resolution;
    let h = 2.0 * spec.radius / (m - 1) as f64;
    let total = m.pow(d as u32);
    let r2 = spec.radius * spec.radius;

    let mut grid = Grid {
        spec: spec.clone(),
        nodes_per_axis: m,
        h,
        unknown_of: vec![None; total],
        node_of: Vec::new(),
        crossings: Vec::new(),
        slots: Vec::new(),
        slots_per_node: 0,
        boundary_adjacent: Vec::new(),
        pattern: Pattern::default(),
    };
    for node in 0..total {
        let x = grid.coords(node);
        if dist2(&x[..d], &spec.center[..d]) < r2 {
            grid.unknown_of[node] = Some(grid.node_of.len() as u32);
            grid.node_of.push(node);
        }
    }

    let offsets = stencil_offsets(spec.n);
    grid.slots_per_node = offsets.len();
    let mut slots = Vec::with_capacity(grid.node_of.len() * offsets.len());
    let mut crossings = Vec::new();
    let mut adjacent = vec![false; grid.node_of.len()];
    for (p, &node) in grid.node_of.iter().enumerate() {
        let idx = grid.multi_index(node);
        let x = grid.coords(node);
        for o in &offsets {
            let mut q = [0usize; 4];
            for a in 0..d {
                q[a] = (idx[a] as i64 + o[a] as i64) as usize;
            }
            let qn = grid.node_at(&q[..d]);
            match grid.unknown_of[qn] {
                Some(u) => slots.push(u),
                None => {
                    let mut v = [0.0; 4];
                    let mut dv = 0.0;
                    let mut vv = 0.0;
                    let mut dd = 0.0;
                    for a in 0..d {
                        v[a] = o[a] as f64 * h;
                        let da = x[a] - spec.center[a];
                        dv += da * v[a];
                        vv += v[a] * v[a];
                        dd += da * da;
                    }
                    let disc = (dv * dv - vv * (dd - r2)).max(0.0);
                    let theta = ((-dv + disc.sqrt()) / vv).clamp(MIN_THETA, 1.0);
                    let mut point = [0.0; 4];
                    for a in 0..d {
                        point[a] = x[a] + theta * v[a];
                    }
                    slots.push(EXT | crossings.len() as u32);
                    crossings.push(Crossing {
                        owner: p,
                        node: qn,
                        theta,
                        point,
                    });
                    adjacent[p] = true;
                }
            }
        }
    }
    grid.slots = slots;
    grid.crossings = crossings;
    grid.boundary_adjacent = adjacent;
    grid.pattern = Pattern::build(&grid);
    Ok(grid)
}

/// Grid samples of a real function.
///
/// Fields without a trace are differentiated with plain centered differences
/// using the stored exterior-node values. Fields with a trace treat the
/// domain boundary as a Dirichlet surface: each stencil arm that leaves the
/// domain reads a ghost value extrapolated linearly from the owning node and
/// the trace value at the crossing.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub values: Vec<f64>,
    pub floor: Vec<bool>,
    pub time: f64,
    pub m_cap: f64,
    pub trace: Option<Vec<f64>>,
}

impl ScalarField {
    pub fn zeros(g: &Grid) -> Self {
        ScalarField {
            values: vec![0.0; g.node_count()],
            floor: vec![false; g.node_count()],
            time: 0.0,
            m_cap: crate::DEFAULT_M_CAP,
            trace: None,
        }
    }

    /// Clip values below `−m_cap` and set the floor flags accordingly.
    pub fn clip(&mut self, m_cap: f64) {
        self.m_cap = m_cap;
        for (v, fl) in self.values.iter_mut().zip(self.floor.iter_mut()) {
            if !(*v > -m_cap) {
                *v = -m_cap;
                *fl = true;
            } else {
                *fl = false;
            }
        }
    }

    pub fn interior(&self, g: &Grid) -> Vec<f64> {
        g.node_of.iter().map(|&i| self.values[i]).collect()
    }

    pub fn set_interior(&mut self, g: &Grid, w: &[f64]) {
        for (&node, &v) in g.node_of.iter().zip(w) {
            self.values[node] = v;
        }
    }
}

/// A 2×2 Hermitian matrix; for n = 1 only `a11` is meaningful.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Herm {
    pub a11: f64,
    pub a22: f64,
    pub a12: Complex64,
}

impl Herm {
    pub fn identity() -> Self {
        Herm {
            a11: 1.0,
            a22: 1.0,
            a12: Complex64::new(0.0, 0.0),
        }
    }

    pub fn eigenvalues(&self, n: usize) -> [f64; 2] {
        if n == 1 {
            return [self.a11, self.a11];
        }
        let m = 0.5 * (self.a11 + self.a22);
        let r = (0.25 * (self.a11 - self.a22).powi(2) + self.a12.norm_sqr()).sqrt();
        [m - r, m + r]
    }

    /// Log-determinant after clamping eigenvalues at `delta`, its gradient,
    /// the smallest raw eigenvalue and the clamp count.
    ///
    /// The gradient is `Σ P_i/λ_i` over the unclamped eigenpairs: the exact
    /// derivative of `Σ log max(λ_i, δ)` away from the kink, the inverse
    /// Hessian when nothing is clamped.
    pub fn clamped(&self, n: usize, delta: f64) -> Clamped {
        let zero = Complex64::new(0.0, 0.0);
        if n == 1 {
            let l = self.a11.max(delta);
            return Clamped {
                logdet: l.ln(),
                grad: Herm {
                    a11: if self.a11 >= delta { 1.0 / l } else { 0.0 },
                    a22: 0.0,
                    a12: zero,
                },
                min_eig: self.a11,
                clamps: usize::from(self.a11 < delta),
            };
        }
        let [lo, hi] = self.eigenvalues(2);
        let (clo, chi) = (lo.max(delta), hi.max(delta));
        let clamps = usize::from(lo < delta) + usize::from(hi < delta);
        let grad = match clamps {
            0 => {
                let det = self.a11 * self.a22 - self.a12.norm_sqr();
                Herm {
                    a11: self.a22 / det,
                    a22: self.a11 / det,
                    a12: -self.a12 / det,
                }
            }
            1 if hi - lo > 1e-14 * hi.abs().max(1.0) => {
                // Spectral projector onto the upper eigenvalue: (H − lo I)/(hi − lo).
                let s = 1.0 / ((hi - lo) * hi);
                Herm {
                    a11: (self.a11 - lo) * s,
                    a22: (self.a22 - lo) * s,
                    a12: self.a12 * s,
                }
            }
            _ => Herm {
                a11: 0.0,
                a22: 0.0,
                a12: zero,
            },
        };
        Clamped {
            logdet: clo.ln() + chi.ln(),
            grad,
            min_eig: lo,
            clamps,
        }
    }
}

impl Herm {
    /// Log-determinant with each eigenvalue passed through the concave C¹
    /// extension `L(λ) = log λ` for `λ ≥ δ`, `log δ + (λ − δ)/δ` below, and
    /// its exact gradient `Σ L'(λ_i) P_i`. Concavity of `L` makes the
    /// implicit step a convex monotone system for n = 1.
    pub fn extended(&self, n: usize, delta: f64) -> Clamped {
        let ext = |l: f64| if l >= delta { l.ln() } else { delta.ln() + (l - delta) / delta };
        let slope = |l: f64| 1.0 / l.max(delta);
        let zero = Complex64::new(0.0, 0.0);
        if n == 1 {
            return Clamped {
                logdet: ext(self.a11),
                grad: Herm {
                    a11: slope(self.a11),
                    a22: 0.0,
                    a12: zero,
                },
                min_eig: self.a11,
                clamps: usize::from(self.a11 < delta),
            };
        }
        let [lo, hi] = self.eigenvalues(2);
        let clamps = usize::from(lo < delta) + usize::from(hi < delta);
        let grad = if clamps == 0 {
            let det = self.a11 * self.a22 - self.a12.norm_sqr();
            Herm {
                a11: self.a22 / det,
                a22: self.a11 / det,
                a12: -self.a12 / det,
            }
        } else if hi - lo > 1e-14 * hi.abs().max(1.0) {
            // P_hi = (H − lo I)/(hi − lo), P_lo = I − P_hi.
            let (sl, sh) = (slope(lo), slope(hi));
            let gap = hi - lo;
            let w = (sh - sl) / gap;
            Herm {
                a11: sl + w * (self.a11 - lo),
                a22: sl + w * (self.a22 - lo),
                a12: self.a12 * w,
            }
        } else {
            let s = slope(lo);
            Herm { a11: s, a22: s, a12: zero }
        };
        Clamped {
            logdet: ext(lo) + ext(hi),
            grad,
            min_eig: lo,
            clamps,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Clamped {
    pub logdet: f64,
    pub grad: Herm,
    pub min_eig: f64,
    pub clamps: usize,
}

/// Complex Hessian at every unknown, in unknown order.
#[derive(Debug, Clone)]
pub struct HermitianField {
    pub n: usize,
    pub entries: Vec<Herm>,
}

/// Real second derivatives of a stencil: indices 0..2n are the pure
/// derivatives, the next four follow [`MIXED`] (n = 2 only).
pub(crate) fn second_derivs(g: &Grid, center: f64, nb: impl Fn(usize) -> f64) -> [f64; 8] {
    let d = g.dim();
    let ih2 = 1.0 / (g.h * g.h);
    let mut r = [0.0; 8];
    for a in 0..d {
        r[a] = (nb(2 * a) - 2.0 * center + nb(2 * a + 1)) * ih2;
    }
    if g.n() == 2 {
        for q in 0..4 {
            let s = 8 + 4 * q;
            r[4 + q] = (nb(s) - nb(s + 1) - nb(s + 2) + nb(s + 3)) * 0.25 * ih2;
        }
    }
    r
}

pub(crate) fn herm_from_derivs(n: usize, r: &[f64; 8]) -> Herm {
    if n == 1 {
        return Herm {
            a11: 0.25 * (r[0] + r[1]),
            a22: 0.0,
            a12: Complex64::new(0.0, 0.0),
        };
    }
    Herm {
        a11: 0.25 * (r[0] + r[1]),
        a22: 0.25 * (r[2] + r[3]),
        a12: Complex64::new(0.25 * (r[4] + r[5]), 0.25 * (r[6] - r[7])),
    }
}

/// Coefficients of the linearized log-determinant on the real second
/// derivatives, given the log-det gradient `k`.
pub(crate) fn linearization_weights(n: usize, k: &Herm) -> [f64; 8] {
    let mut c = [0.0; 8];
    c[0] = 0.25 * k.a11;
    c[1] = 0.25 * k.a11;
    if n == 2 {
        c[2] = 0.25 * k.a22;
        c[3] = 0.25 * k.a22;
        c[4] = 0.5 * k.a12.re;
        c[5] = 0.5 * k.a12.re;
        c[6] = 0.5 * k.a12.im;
        c[7] = -0.5 * k.a12.im;
    }
    c
}

/// Value of a stencil slot of unknown `p` for the field `u`.
#[inline]
pub(crate) fn slot_value(g: &Grid, u: &ScalarField, p: usize, slot: u32) -> f64 {
    if slot & EXT == 0 {
        u.values[g.node_of[slot as usize]]
    } else {
        let c = &g.crossings[(slot & !EXT) as usize];
        match &u.trace {
            None => u.values[c.node],
            Some(tr) => {
                let up = u.values[g.node_of[p]];
                up + (tr[(slot & !EXT) as usize] - up) / c.theta
            }
        }
    }
}

/// Decoded slot: an unknown or a crossing index.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Slot {
    Unknown,
    Crossing(usize),
}

#[inline]
pub(crate) fn decode(slot: u32) -> Slot {
    if slot & EXT == 0 {
        Slot::Unknown
    } else {
        Slot::Crossing((slot & !EXT) as usize)
    }
}

pub(crate) fn hessian_at(g: &Grid, u: &ScalarField, p: usize) -> Herm {
    let slots = g.slots(p);
    let center = u.values[g.node_of[p]];
    let r = second_derivs(g, center, |s| slot_value(g, u, p, slots[s]));
    herm_from_derivs(g.n(), &r)
}

pub fn complex_hessian(u: &ScalarField, g: &Grid) -> HermitianField {
    let entries = (0..g.unknowns())
        .into_par_iter()
        .map(|p| hessian_at(g, u, p))
        .collect();
    HermitianField { n: g.n(), entries }
}

/// Outcome of [`logdet_hessian`].
#[derive(Debug, Clone)]
pub struct LogDet {
    /// Log-determinant per node; nodes outside the domain carry 0.
    pub field: ScalarField,
    pub clamp_count: usize,
    pub min_eigenvalue: f64,
}

/// Per-unknown clamped log-determinants without the cone check.
pub(crate) fn logdet_values(h: &HermitianField, delta: f64) -> (Vec<f64>, usize, f64, usize) {
    let mut clamps = 0;
    let mut min_eig = f64::INFINITY;
    let mut argmin = 0;
    let vals = h
        .entries
        .iter()
        .enumerate()
        .map(|(p, m)| {
            let c = m.clamped(h.n, delta);
            clamps += c.clamps;
            if c.min_eig < min_eig {
                min_eig = c.min_eig;
                argmin = p;
            }
            c.logdet
        })
        .collect();
    (vals, clamps, min_eig, argmin)
}

pub fn logdet_hessian(h: &HermitianField, g: &Grid, delta: f64) -> Result<LogDet> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("eigenvalue floor {delta} must be positive")));
    }
    let (vals, clamp_count, min_eigenvalue, argmin) = logdet_values(h, delta);
    if min_eigenvalue < -10.0 * delta {
        return Err(Error::NotPsh {
            node: g.node_of[argmin],
            eigenvalue: min_eigenvalue,
        });
    }
    let mut field = ScalarField::zeros(g);
    field.set_interior(g, &vals);
    Ok(LogDet {
        field,
        clamp_count,
        min_eigenvalue,
    })
}

pub fn defining_function(spec: &DomainSpec, g: &Grid) -> ScalarField {
    let d = g.dim();
    let mut f = ScalarField::zeros(g);
    for (i, v) in f.values.iter_mut().enumerate() {
        *v = spec.rho(&g.coords(i)[..d]);
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::FnOf;
    use approx::assert_abs_diff_eq;

    fn sample(g: &Grid, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> ScalarField {
        g.sample(&FnOf(move |x: &[f64], _t: f64| f(x)), 0.0, false)
    }

    #[test]
    fn disc_grid_basics() {
        let g = build_grid(&DomainSpec::disc(), 33).unwrap();
        assert_eq!(g.node_count(), 33 * 33);
        let cells = (g.nodes_per_axis - 1).pow(2) as f64;
        let ratio = g.unknowns() as f64 / cells;
        assert!((ratio - std::f64::consts::FRAC_PI_4).abs() < 0.05, "{ratio}");
        let s = g.snap(&[0.0, 0.0]);
        assert_eq!(s.distance, 0.0);
        assert!(g.is_interior(s.node));
    }

    #[test]
    fn ball_grid_has_origin_node() {
        let g = build_grid(&DomainSpec::ball(), 17).unwrap();
        assert_eq!(g.node_count(), 17usize.pow(4));
        let s = g.snap(&[0.0; 4]);
        assert_eq!(s.distance, 0.0);
        assert_eq!(g.coords(s.node), [0.0; 4]);
    }

    #[test]
    fn resolution_preconditions() {
        assert!(matches!(build_grid(&DomainSpec::disc(), 16), Err(Error::ResolutionTooSmall(16))));
        assert!(matches!(build_grid(&DomainSpec::disc(), 18), Err(Error::EvenResolution(18))));
    }

    #[test]
    fn hessian_of_abs2_is_identity() {
        for (spec, m) in [(DomainSpec::disc(), 33), (DomainSpec::ball(), 17)] {
            let g = build_grid(&spec, m).unwrap();
            let u = sample(&g, |x| x.iter().map(|v| v * v).sum());
            let h = complex_hessian(&u, &g);
            for e in &h.entries {
                assert_abs_diff_eq!(e.a11, 1.0, epsilon = 1e-9);
                if spec.n == 2 {
                    assert_abs_diff_eq!(e.a22, 1.0, epsilon = 1e-9);
                    assert!(e.a12.norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn pluriharmonic_quadratics_vanish() {
        let g = build_grid(&DomainSpec::ball(), 17).unwrap();
        // Re(z1²) and Re(z1 z2) = x1x2 − y1y2.
        for f in [|x: &[f64]| x[0] * x[0] - x[1] * x[1], |x: &[f64]| x[0] * x[2] - x[1] * x[3]] {
            let u = sample(&g, f);
            for e in complex_hessian(&u, &g).entries {
                assert!(e.a11.abs() < 1e-9 && e.a22.abs() < 1e-9 && e.a12.norm() < 1e-9);
            }
        }
    }

    #[test]
    fn mixed_quadratic_matches_analytic_entry() {
        let g = build_grid(&DomainSpec::ball(), 17).unwrap();
        let u = sample(&g, |x| (x[0] * x[2] + x[1] * x[3]) + 2.0 * (x[1] * x[2] - x[0] * x[3]));
        for e in complex_hessian(&u, &g).entries {
            // u = Re(z1 z̄2) + 2 Im(z1 z̄2), so u_{1 2̄} = 1/2 + 2/(2i).
            assert_abs_diff_eq!(e.a12.re, 0.5, epsilon = 1e-9);
            assert_abs_diff_eq!(e.a12.im, -1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn quartic_entry_converges() {
        let g = build_grid(&DomainSpec::disc(), 129).unwrap();
        let u = sample(&g, |x| (x[0] * x[0] + x[1] * x[1]).powi(2));
        let h = complex_hessian(&u, &g);
        let mut worst: f64 = 0.0;
        for (p, e) in h.entries.iter().enumerate() {
            let x = g.unknown_coords(p);
            worst = worst.max((e.a11 - 4.0 * (x[0] * x[0] + x[1] * x[1])).abs());
        }
        // The truncation error of the five-point Laplacian of |z|⁴ is h²·(16/12)·2/4.
        assert!(worst < 2.0 * g.h * g.h, "{worst}");
    }

    #[test]
    fn logdet_examples() {
        let g = build_grid(&DomainSpec::ball(), 17).unwrap();
        let count = g.unknowns();
        let e = std::f64::consts::E;
        let diag = Herm {
            a11: e,
            a22: e * e,
            a12: Complex64::new(0.0, 0.0),
        };
        let ld = logdet_hessian(&HermitianField { n: 2, entries: vec![diag; count] }, &g, 1e-8).unwrap();
        assert_abs_diff_eq!(ld.field.values[g.node_of[0]], 3.0, epsilon = 1e-14);

        let id = logdet_hessian(&HermitianField { n: 2, entries: vec![Herm::identity(); count] }, &g, 1e-8).unwrap();
        assert!(id.field.values.iter().all(|&v| v == 0.0));

        let delta = 1e-8;
        let half = Herm {
            a11: -delta / 2.0,
            a22: 1.0,
            a12: Complex64::new(0.0, 0.0),
        };
        let ld = logdet_hessian(&HermitianField { n: 2, entries: vec![half] }, &g, delta).unwrap();
        assert_eq!(ld.clamp_count, 1);
        assert_abs_diff_eq!(ld.field.values[g.node_of[0]], delta.ln(), epsilon = 1e-12);

        let bad = Herm { a11: -1e-3, ..half };
        assert!(matches!(
            logdet_hessian(&HermitianField { n: 2, entries: vec![bad] }, &g, delta),
            Err(Error::NotPsh { .. })
        ));
    }

    #[test]
    fn clamped_inverse_is_inverse() {
        let m = Herm {
            a11: 2.0,
            a22: 3.0,
            a12: Complex64::new(0.5, -0.7),
        };
        let c = m.clamped(2, 1e-8);
        let k = c.grad;
        // (M K)_{11} and (M K)_{12}
        let p11 = m.a11 * k.a11 + m.a12 * k.a12.conj();
        let p12 = m.a11 * k.a12 + m.a12 * k.a22;
        assert_abs_diff_eq!(p11.re, 1.0, epsilon = 1e-14);
        assert!(p11.im.abs() < 1e-14 && p12.norm() < 1e-14);
        // Clamped path agrees with the direct path when nothing is clamped.
        let spectral = Herm {
            a11: 2.0,
            a22: 3.0,
            a12: Complex64::new(0.5, -0.7),
        }
        .clamped(2, 1e-300);
        assert_abs_diff_eq!(spectral.logdet, c.logdet, epsilon = 1e-14);
    }

    #[test]
    fn defining_function_values() {
        let spec = DomainSpec::disc();
        assert_eq!(spec.rho(&[0.0, 0.0]), -1.0);
        assert_abs_diff_eq!(spec.rho(&[0.6, 0.0]), -0.64, epsilon = 1e-15);
        let ball = DomainSpec::ball();
        assert_abs_diff_eq!(ball.rho(&[0.6, 0.0, 0.0, 0.8]), 0.0, epsilon = 1e-15);
        let g = build_grid(&spec, 33).unwrap();
        let rho = defining_function(&spec, &g);
        let inf = rho.values.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(inf, -1.0);
        for c in &g.crossings {
            assert!(spec.rho(&c.point[..2]).abs() < 1e-14 || c.theta == 1e-6);
        }
        assert!(complex_hessian(&rho, &g).entries.iter().all(|e| (e.a11 - 1.0).abs() < 1e-9));
    }

    #[test]
    fn hermitian_storage_is_exact() {
        // Storage keeps a single off-diagonal entry, so H − H* vanishes identically;
        // the real diagonal is the only other degree of freedom.
        let g = build_grid(&DomainSpec::ball(), 17).unwrap();
        let u = sample(&g, |x| (x[0] + 0.3 * x[3]).powi(2) + (x[1] * x[2]).sin());
        let h = complex_hessian(&u, &g);
        assert!(h.entries.iter().all(|e| e.a11.is_finite() && e.a22.is_finite()));
    }

    #[test]
    fn n1_logdet_is_log_quarter_laplacian() {
        let g = build_grid(&DomainSpec::disc(), 33).unwrap();
        let u = sample(&g, |x| (x[0] * x[0] + x[1] * x[1]).powi(2) + x[0] * x[0]);
        let h = complex_hessian(&u, &g);
        let ld = logdet_hessian(&h, &g, DEFAULT_DELTA).unwrap();
        for (p, e) in h.entries.iter().enumerate() {
            if e.a11 >= DEFAULT_DELTA {
                assert_abs_diff_eq!(ld.field.values[g.node_of[p]], e.a11.ln(), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn interpolation_reproduces_multilinear() {
        let g = build_grid(&DomainSpec::disc(), 33).unwrap();
        let u = sample(&g, |x| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1]);
        let v = g.interpolate(&u, &[0.123, -0.456]);
        assert_abs_diff_eq!(v, 1.0 + 0.246 + 0.456 + 0.5 * 0.123 * -0.456, epsilon = 1e-12);
    }
}
