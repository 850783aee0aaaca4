//! Bergman-kernel approximation of psh weights on the unit disc.
//!
//! For the weight `e^{−2mφ}` the Gram matrix of the monomials `z^j` is
//! assembled by polar quadrature. Each atom gets its own polar patch,
//! blended in by a smooth partition of unity, and its radial panels are
//! refined geometrically toward the atom. The sequence of partial integrals
//! over shrinking inner cutoffs decides integrability: a diagonal entry
//! whose partial sums keep growing is declared divergent and its monomial
//! excluded.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lelong::slope;
use crate::SpaceTimeFn;

/// Psh weight `φ = Σ ν_j log|z − a_j| + s(z)` on the unit disc, with level `m`.
#[derive(Clone)]
pub struct Weight {
    pub atoms: Vec<([f64; 2], f64)>,
    pub smooth: Arc<dyn SpaceTimeFn>,
    pub m: f64,
}

impl std::fmt::Debug for Weight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Weight")
            .field("atoms", &self.atoms)
            .field("m", &self.m)
            .finish_non_exhaustive()
    }
}

impl Weight {
    pub fn new(atoms: Vec<([f64; 2], f64)>, smooth: Arc<dyn SpaceTimeFn>, m: f64) -> Result<Self> {
        if !(m > 0.0) {
            return Err(Error::InvalidArgument(format!("level m = {m} must be positive")));
        }
        for (a, nu) in &atoms {
            if !(a[0] * a[0] + a[1] * a[1] < 1.0) {
                return Err(Error::InvalidArgument(format!("atom {a:?} is not inside the unit disc")));
            }
            if !(*nu > 0.0) {
                return Err(Error::InvalidArgument(format!("atom mass {nu} must be positive")));
            }
        }
        Ok(Weight { atoms, smooth, m })
    }

    /// `ν log|z|` with no smooth part.
    pub fn radial(nu: f64, m: f64) -> Result<Self> {
        let atoms = if nu > 0.0 { vec![([0.0, 0.0], nu)] } else { Vec::new() };
        Weight::new(atoms, Arc::new(crate::Const(0.0)), m)
    }

    pub fn phi(&self, x: &[f64]) -> f64 {
        let mut v = self.smooth.eval(x, 0.0);
        for (a, nu) in &self.atoms {
            v += 0.5 * nu * ((x[0] - a[0]).powi(2) + (x[1] - a[1]).powi(2)).ln();
        }
        v
    }

    /// Lelong number of `φ` at `z`: the mass of an atom located there.
    pub fn nu_at(&self, z: [f64; 2]) -> f64 {
        self.atoms
            .iter()
            .filter(|(a, _)| (a[0] - z[0]).hypot(a[1] - z[1]) < 1e-12)
            .fold(0.0, |acc, (_, nu)| acc + nu)
    }

    /// Monomial coefficients of `Q(z) = Π (z − a_j)^{⌊mν_j⌋}` over the atoms
    /// off the origin. Every polynomial in the weighted space is divisible by
    /// `Q`, so the Gram matrix is built on `z^j·Q` rather than on bare
    /// monomials, which would all be non-integrable at such an atom once
    /// `mν_j ≥ 1`.
    pub fn prefactor(&self) -> Vec<Complex64> {
        let mut q = vec![Complex64::new(1.0, 0.0)];
        for (a, order) in self.atoms.iter().map(|(a, _)| a).zip(self.forced_orders()) {
            let ac = Complex64::new(a[0], a[1]);
            for _ in 0..order {
                let mut next = vec![Complex64::new(0.0, 0.0); q.len() + 1];
                for (i, c) in q.iter().enumerate() {
                    next[i + 1] += c;
                    next[i] -= c * ac;
                }
                q = next;
            }
        }
        q
    }

    /// Exponent of `(z − a_j)` in [`Weight::prefactor`], zero at the origin.
    fn forced_orders(&self) -> Vec<usize> {
        self.atoms
            .iter()
            .map(|(a, nu)| {
                if a[0] == 0.0 && a[1] == 0.0 {
                    0
                } else {
                    (self.m * nu + 1e-12).floor() as usize
                }
            })
            .collect()
    }

    /// `|Q(z)|²` in factored form, without the factor of atom `skip`.
    fn prefactor_sq_without(&self, z: Complex64, skip: Option<usize>) -> f64 {
        let mut v = 1.0;
        for (i, ((a, _), order)) in self.atoms.iter().zip(self.forced_orders()).enumerate() {
            if Some(i) != skip && order > 0 {
                v *= (z - Complex64::new(a[0], a[1])).norm_sqr().powi(order as i32);
            }
        }
        v
    }

    fn radially_symmetric(&self) -> bool {
        self.atoms.iter().all(|(a, _)| a[0] == 0.0 && a[1] == 0.0)
    }

    /// Weight density `e^{−2mφ}` without the factor `|z − a|^{−2mν}` of the
    /// atom `skip`.
    fn density_without(&self, x: &[f64], skip: Option<usize>) -> f64 {
        let mut log = -2.0 * self.m * self.smooth.eval(x, 0.0);
        for (i, (a, nu)) in self.atoms.iter().enumerate() {
            if Some(i) != skip {
                log -= self.m * nu * ((x[0] - a[0]).powi(2) + (x[1] - a[1]).powi(2)).ln();
            }
        }
        log.exp()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadSpec {
    /// Inner-cutoff halvings toward each atom.
    pub levels: usize,
    /// Gauss–Legendre nodes per radial panel.
    pub radial_nodes: usize,
    /// Trapezoid nodes per circle.
    pub angular_nodes: usize,
}

impl Default for QuadSpec {
    fn default() -> Self {
        QuadSpec {
            levels: 48,
            radial_nodes: 24,
            angular_nodes: 128,
        }
    }
}

/// Gauss–Legendre nodes and weights on `[−1, 1]` by Newton iteration on
/// the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * p - pm) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// `C^∞` step from 1 (at `s ≤ 1/2`) to 0 (at `s ≥ 1`).
fn cutoff(s: f64) -> f64 {
    let bump = |t: f64| if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
    let t = 2.0 * (s - 0.5);
    let (a, b) = (bump(1.0 - t), bump(t));
    a / (a + b)
}

/// Gram matrix of the family `z^j·Q(z)`, `j ≤ degree`, and the indices
/// declared non-integrable. `Q = 1` unless an atom off the origin forces a
/// zero there (see [`Weight::prefactor`]).
#[derive(Debug, Clone)]
pub struct Gram {
    pub matrix: DMatrix<Complex64>,
    pub excluded: Vec<usize>,
    pub degree: usize,
    pub prefactor: Vec<Complex64>,
}


/// Accumulates `w·z^j·z̄^k` for one quadrature point.
fn accumulate(acc: &mut [Complex64], d1: usize, z: Complex64, w: f64, pows: &mut [Complex64]) {
    pows[0] = Complex64::new(1.0, 0.0);
    for j in 1..d1 {
        pows[j] = pows[j - 1] * z;
    }
    for j in 0..d1 {
        let wj = pows[j] * w;
        for k in j..d1 {
            acc[j * d1 + k] += wj * pows[k].conj();
        }
    }
}

/// Radius of the polar patch of atom `i`: clear of the boundary and of the
/// other atoms' patches.
fn patch_radius(w: &Weight, i: usize) -> f64 {
    let a = w.atoms[i].0;
    let mut r = 1.0 - a[0].hypot(a[1]);
    for (j, (b, _)) in w.atoms.iter().enumerate() {
        if j != i {
            r = r.min(0.5 * (a[0] - b[0]).hypot(a[1] - b[1]));
        }
    }
    r
}

pub fn gram_matrix(w: &Weight, degree: usize, quad: &QuadSpec) -> Result<Gram> {
    if degree > 64 {
        return Err(Error::InvalidArgument(format!("degree cap {degree} exceeds 64")));
    }
    if quad.levels < 3 {
        return Err(Error::InvalidArgument("at least 3 cutoff refinements are required".into()));
    }
    let d1 = degree + 1;
    let (gx, gw) = gauss_legendre(quad.radial_nodes);
    let na = quad.angular_nodes;
    let angles: Vec<Complex64> = (0..na)
        .map(|i| Complex64::from_polar(1.0, 2.0 * PI * i as f64 / na as f64))
        .collect();
    let dth = 2.0 * PI / na as f64;
    let prefactor = w.prefactor();
    let orders = w.forced_orders();
    let mut pows = vec![Complex64::new(0.0, 0.0); d1];
    let radii: Vec<f64> = (0..w.atoms.len()).map(|i| patch_radius(w, i)).collect();
    let blend = |x: &[f64]| -> f64 {
        w.atoms
            .iter()
            .zip(&radii)
            .map(|((a, _), r)| cutoff((x[0] - a[0]).hypot(x[1] - a[1]) / r))
            .sum()
    };

    // Background: polar about the origin on the whole disc, weighted by the
    // complement of the patches. Panels are geometric toward the origin when
    // no atom sits there.
    let mut fixed = vec![Complex64::new(0.0, 0.0); d1 * d1];
    let has_center = w.atoms.iter().any(|(a, _)| a[0] == 0.0 && a[1] == 0.0);
    let bg_panels = 40;
    for l in 0..bg_panels {
        let (lo, hi) = if l + 1 == bg_panels && !has_center {
            (0.0, 0.5f64.powi(l as i32))
        } else {
            (0.5f64.powi(l as i32 + 1), 0.5f64.powi(l as i32))
        };
        for (x, gwi) in gx.iter().zip(&gw) {
            let r = 0.5 * (hi + lo) + 0.5 * (hi - lo) * x;
            let wr = 0.5 * (hi - lo) * gwi * r * dth;
            for e in &angles {
                let z = e * r;
                let xy = [z.re, z.im];
                let outside = 1.0 - blend(&xy);
                if outside <= 0.0 {
                    continue;
                }
                let dens = w.density_without(&xy, None) * w.prefactor_sq_without(z, None);
                accumulate(&mut fixed, d1, z, wr * outside * dens, &mut pows);
            }
        }
    }

    // Atom patches, level by level toward the atom.
    let mut per_level = vec![vec![Complex64::new(0.0, 0.0); d1 * d1]; quad.levels];
    for (i, ((a, nu), &rad)) in w.atoms.iter().zip(&radii).enumerate() {
        let ac = Complex64::new(a[0], a[1]);
        let power = 2.0 * orders[i] as f64 - 2.0 * w.m * nu;
        for (l, acc) in per_level.iter_mut().enumerate() {
            let hi = rad * 0.5f64.powi(l as i32);
            let lo = 0.5 * hi;
            for (x, gwi) in gx.iter().zip(&gw) {
                let rho = 0.5 * (hi + lo) + 0.5 * (hi - lo) * x;
                let wr = 0.5 * (hi - lo) * gwi * rho * dth * rho.powf(power);
                for e in &angles {
                    let z = ac + e * rho;
                    let xy = [z.re, z.im];
                    let part = cutoff(rho / rad);
                    if part <= 0.0 {
                        continue;
                    }
                    let dens = w.density_without(&xy, Some(i)) * w.prefactor_sq_without(z, Some(i));
                    accumulate(acc, d1, z, wr * part * dens, &mut pows);
                }
            }
        }
    }

    let mut matrix = DMatrix::from_element(d1, d1, Complex64::new(0.0, 0.0));
    let partial = |idx: usize| -> Vec<Complex64> {
        let mut s = fixed[idx];
        per_level
            .iter()
            .map(|lvl| {
                s += lvl[idx];
                s
            })
            .collect()
    };
    let mut excluded = Vec::new();
    for j in 0..d1 {
        let idx = j * d1 + j;
        let (value, div) = settle(&partial(idx), &per_level, idx, j, j)?;
        matrix[(j, j)] = value;
        if div {
            excluded.push(j);
        }
    }
    // Entries touching an excluded monomial are never used.
    for j in 0..d1 {
        for k in j + 1..d1 {
            if excluded.contains(&j) || excluded.contains(&k) {
                continue;
            }
            let idx = j * d1 + k;
            let (value, _) = settle(&partial(idx), &per_level, idx, j, k)?;
            matrix[(j, k)] = value;
            matrix[(k, j)] = value.conj();
        }
    }
    if w.radially_symmetric() {
        for j in 0..d1 {
            for k in 0..d1 {
                if j != k {
                    matrix[(j, k)] = Complex64::new(0.0, 0.0);
                }
            }
        }
    }
    Ok(Gram {
        matrix,
        excluded,
        degree,
        prefactor,
    })
}

/// Limit of a sequence of partial integrals over shrinking cutoffs.
///
/// Divergent if it grows tenfold over the last refinement, or if the
/// increments stop shrinking (ratio ≥ 3/4, the logarithmic case). Otherwise
/// the geometric tail `Δ q/(1 − q)` is added and the last two extrapolated
/// values must agree to 1e−8.
fn settle(
    partial: &[Complex64],
    per_level: &[Vec<Complex64>],
    idx: usize,
    row: usize,
    col: usize,
) -> Result<(Complex64, bool)> {
    let l = partial.len();
    let last = partial[l - 1];
    let before = partial[l - 2];
    if last.norm() > 10.0 * before.norm() && last.norm() > 0.0 {
        return Ok((last, true));
    }
    let inc = |i: usize| per_level[i][idx];
    let (d1, d2, d3) = (inc(l - 1), inc(l - 2), inc(l - 3));
    let tiny = 1e-300 + 1e-15 * last.norm();
    if d2.norm() > tiny && d1.norm() >= 0.75 * d2.norm() {
        return Ok((last, true));
    }
    let extrapolate = |s: Complex64, a: Complex64, b: Complex64| {
        if b.norm() <= tiny {
            return s;
        }
        let q = (a.norm() / b.norm()).min(0.75);
        s + a * (q / (1.0 - q))
    };
    let e1 = extrapolate(last, d1, d2);
    let e0 = extrapolate(before, d2, d3);
    let scale = e1.norm().max(1e-300);
    let change = (e1 - e0).norm() / scale;
    if change > 1e-8 && e1.norm() > 1e-14 {
        return Err(Error::QuadratureNotConverged { row, col, change });
    }
    Ok((e1, false))
}

/// Orthonormal polynomials `g_l = Σ_j c_{l,j} z^j` of the weighted space.
#[derive(Debug, Clone)]
pub struct OrthoBasis {
    pub degree: usize,
    /// Row `l` holds the monomial coefficients of `g_l`.
    pub coeffs: DMatrix<Complex64>,
    /// Indices `j` of the kept family members `z^j·Q`; plain monomial
    /// degrees when all atoms sit at the origin.
    pub kept: Vec<usize>,
    pub excluded: Vec<usize>,
    pub condition: f64,
}

impl OrthoBasis {
    pub fn eval(&self, z: Complex64) -> Vec<Complex64> {
        let mut pows = vec![Complex64::new(1.0, 0.0); self.degree + 1];
        for j in 1..=self.degree {
            pows[j] = pows[j - 1] * z;
        }
        (0..self.coeffs.nrows())
            .map(|l| (0..=self.degree).map(|j| self.coeffs[(l, j)] * pows[j]).sum())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.nrows() == 0
    }

    /// Smallest kept monomial degree.
    pub fn k_min(&self) -> Option<usize> {
        self.kept.first().copied()
    }

    /// Order of vanishing at `a` of the basis: the least order over `g_l`.
    pub fn vanishing_order(&self, a: Complex64) -> Option<usize> {
        let d = self.degree;
        let mut best: Option<usize> = None;
        for l in 0..self.len() {
            // Taylor coefficients of g_l about a: b_i = Σ_j C(j,i) a^{j−i} c_j.
            let mut b = vec![Complex64::new(0.0, 0.0); d + 1];
            for j in 0..=d {
                let c = self.coeffs[(l, j)];
                if c == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let mut binom = 1.0;
                for (i, bi) in b.iter_mut().enumerate().take(j + 1) {
                    *bi += c * binom * a.powu((j - i) as u32);
                    binom *= (j - i) as f64 / (i + 1) as f64;
                }
            }
            let scale = b.iter().map(|v| v.norm()).fold(0.0, f64::max);
            if let Some(o) = b.iter().position(|v| v.norm() > 1e-9 * scale) {
                best = Some(best.map_or(o, |x: usize| x.min(o)));
            }
        }
        best
    }
}

/// Triangular (Cholesky) orthonormalization of the kept members of the
/// family, lowest degree first, re-verified against `G`. The result is
/// expanded back to monomial coefficients.
pub fn orthonormal_basis(g: &Gram) -> Result<OrthoBasis> {
    let d1 = g.degree + 1;
    let kept: Vec<usize> = (0..d1).filter(|j| !g.excluded.contains(j)).collect();
    let k = kept.len();
    let sub = DMatrix::from_fn(k, k, |a, b| g.matrix[(kept[a], kept[b])]);
    let chol = sub.clone().cholesky().ok_or(Error::GramNotPd)?;
    let l = chol.l();
    let linv = l
        .solve_lower_triangular(&DMatrix::identity(k, k))
        .ok_or(Error::GramNotPd)?;
    let q = &g.prefactor;
    let degree = g.degree + q.len() - 1;
    let mut coeffs = DMatrix::from_element(k, degree + 1, Complex64::new(0.0, 0.0));
    for r in 0..k {
        for c in 0..k {
            // g = L⁻¹·(kept family): C G C* = L⁻¹ L L* L⁻* = I.
            for (i, qi) in q.iter().enumerate() {
                coeffs[(r, kept[c] + i)] += linv[(r, c)] * qi;
            }
        }
    }
    let check = &linv * &sub * linv.adjoint();
    let err = (0..k)
        .flat_map(|a| (0..k).map(move |b| (a, b)))
        .map(|(a, b)| (check[(a, b)] - if a == b { 1.0 } else { 0.0 }).norm())
        .fold(0.0, f64::max);
    if err > 1e-8 {
        return Err(Error::GramNotPd);
    }
    let diag: Vec<f64> = (0..k).map(|i| l[(i, i)].re).collect();
    let (mx, mn) = diag
        .iter()
        .fold((0.0f64, f64::INFINITY), |(a, b), &v| (a.max(v), b.min(v)));
    Ok(OrthoBasis {
        degree,
        coeffs,
        kept,
        excluded: g.excluded.clone(),
        condition: (mx / mn).powi(2),
    })
}

/// Exact basis `c_k z^k`, `c_k = sqrt((k − mν + 1)/π)`, for the weight `ν log|z|`.
pub fn radial_closed_form(nu: f64, m: f64, degree: usize) -> Result<OrthoBasis> {
    let mnu = m * nu;
    if !(mnu < degree as f64) {
        return Err(Error::InvalidArgument(format!("mν = {mnu} must be below the degree cap {degree}")));
    }
    let kept: Vec<usize> = (0..=degree).filter(|&k| k as f64 > mnu - 1.0).collect();
    let excluded: Vec<usize> = (0..=degree).filter(|&k| !(k as f64 > mnu - 1.0)).collect();
    let mut coeffs = DMatrix::from_element(kept.len(), degree + 1, Complex64::new(0.0, 0.0));
    for (r, &k) in kept.iter().enumerate() {
        coeffs[(r, k)] = Complex64::new(((k as f64 - mnu + 1.0) / PI).sqrt(), 0.0);
    }
    let c = |k: usize| (k as f64 - mnu + 1.0) / PI;
    let condition = c(*kept.last().unwrap()) / c(kept[0]);
    Ok(OrthoBasis {
        degree,
        coeffs,
        kept,
        excluded,
        condition,
    })
}

/// Largest relative deviation of the numeric basis of `mν log|z|` from
/// [`radial_closed_form`], together with the numeric basis.
pub fn radial_oracle_error(m_nu: f64, degree: usize, quad: &QuadSpec) -> Result<(f64, OrthoBasis)> {
    let basis = orthonormal_basis(&gram_matrix(&Weight::radial(m_nu, 1.0)?, degree, quad)?)?;
    let exact = radial_closed_form(m_nu, 1.0, degree)?;
    if basis.kept != exact.kept {
        return Ok((f64::INFINITY, basis));
    }
    let worst = basis
        .kept
        .iter()
        .enumerate()
        .map(|(r, &k)| {
            let e = exact.coeffs[(r, k)].norm();
            (basis.coeffs[(r, k)].norm() - e).abs() / e
        })
        .fold(0.0, f64::max);
    Ok((worst, basis))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiValue {
    /// `−∞` where every basis element vanishes.
    pub value: f64,
    /// `|g_last(z)|² / Σ_l |g_l(z)|²`.
    pub last_fraction: f64,
}

/// `φ_m(z) = (1/2m) log Σ_l |g_l(z)|²`.
pub fn phi_m(b: &OrthoBasis, w: &Weight, z: [f64; 2]) -> PhiValue {
    let g = b.eval(Complex64::new(z[0], z[1]));
    let s: f64 = g.iter().map(|v| v.norm_sqr()).sum();
    let last = g.last().map_or(0.0, |v| v.norm_sqr());
    PhiValue {
        value: if s > 0.0 { s.ln() / (2.0 * w.m) } else { f64::NEG_INFINITY },
        last_fraction: if s > 0.0 { last / s } else { 0.0 },
    }
}

/// One point of the sandwich check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SandwichRow {
    pub z: [f64; 2],
    pub nu_phi: f64,
    /// Exact: vanishing order of the basis at `z` over `m`.
    pub nu_phi_m: f64,
    /// Slope of sphere maxima of `φ_m` against `log r`.
    pub nu_phi_m_estimate: f64,
    pub lower: f64,
    pub pass: bool,
    /// `φ_m` finite on a small circle around `z` (only meaningful where
    /// `ν(φ, z) < 1/m`).
    pub finite_nearby: bool,
    pub last_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemReport {
    pub rows: Vec<SandwichRow>,
    /// Lower bound `φ_m ≥ N Σ log|z − a_j| − C` on the disc of radius 0.8.
    pub fit_n: f64,
    pub fit_c: f64,
    pub truncation_ok: bool,
    pub pass: bool,
}

fn sphere_max_phi(b: &OrthoBasis, w: &Weight, z: [f64; 2], r: f64) -> f64 {
    (0..64)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / 64.0;
            phi_m(b, w, [z[0] + r * t.cos(), z[1] + r * t.sin()]).value
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Sandwich `ν(φ) − 1/m ≤ ν(φ_m) ≤ ν(φ)` at every atom and at `smooth_points`,
/// finiteness near smooth points, and the feasibility fit of the lower bound.
pub fn verify_dem_bounds(w: &Weight, b: &OrthoBasis, smooth_points: &[[f64; 2]], radii: &[f64]) -> DemReport {
    let mut pts: Vec<[f64; 2]> = w.atoms.iter().map(|(a, _)| *a).collect();
    pts.extend_from_slice(smooth_points);
    let logs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let rows: Vec<SandwichRow> = pts
        .iter()
        .map(|&z| {
            let nu_phi = w.nu_at(z);
            let order = b.vanishing_order(Complex64::new(z[0], z[1])).unwrap_or(usize::MAX);
            let nu_phi_m = order as f64 / w.m;
            let maxima: Vec<f64> = radii.iter().map(|&r| sphere_max_phi(b, w, z, r)).collect();
            let est = slope(&logs, &maxima);
            let lower = nu_phi - 1.0 / w.m;
            let finite_nearby = (0..16).all(|i| {
                let t = 2.0 * PI * i as f64 / 16.0;
                phi_m(b, w, [z[0] + 1e-3 * t.cos(), z[1] + 1e-3 * t.sin()]).value.is_finite()
            });
            let smooth_ok = nu_phi >= 1.0 / w.m || finite_nearby;
            SandwichRow {
                z,
                nu_phi,
                nu_phi_m,
                nu_phi_m_estimate: est,
                lower,
                pass: lower <= nu_phi_m + 1e-12 && nu_phi_m <= nu_phi + 1e-12 && smooth_ok,
                finite_nearby,
                last_fraction: phi_m(b, w, [z[0] + 1e-3, z[1]]).last_fraction,
            }
        })
        .collect();

    // N from the largest discrete Lelong number at the atoms; C as the
    // smallest constant making the bound hold on the sample cloud.
    let fit_n = rows[..w.atoms.len()].iter().map(|r| r.nu_phi_m).fold(0.0, f64::max);
    let mut fit_c = f64::NEG_INFINITY;
    for i in 1..=24 {
        let r = 0.8 * i as f64 / 24.0;
        for j in 0..48 {
            let t = 2.0 * PI * (j as f64 + 0.5) / 48.0;
            let z = [r * t.cos(), r * t.sin()];
            let v = phi_m(b, w, z).value;
            let logs: f64 = w
                .atoms
                .iter()
                .map(|(a, _)| 0.5 * ((z[0] - a[0]).powi(2) + (z[1] - a[1]).powi(2)).ln())
                .sum();
            fit_c = fit_c.max(fit_n * logs - v);
        }
    }
    let truncation_ok = rows.iter().all(|r| r.last_fraction < 1e-6);
    let pass = rows.iter().all(|r| r.pass) && fit_c.is_finite();
    DemReport {
        rows,
        fit_n,
        fit_c,
        truncation_ok,
        pass,
    }
}
