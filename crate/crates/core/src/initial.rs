//! Singular plurisubharmonic initial data and its smooth approximations.
//!
//! A potential is a finite sum of logarithmic poles plus a smooth part.
//! Level `k` of the approximation convolves each pole with a radial bump of
//! radius `δ_k` and adds the strictly psh lift `|z|²/k`; the boundary data of
//! that level is ramped from the compatible Taylor data `u_{0,k} + t·g_k`
//! to the true boundary data over `[ε_k, 2ε_k]`.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{complex_hessian, dist2, DomainSpec, Grid, ScalarField, DEFAULT_DELTA};
use crate::{abs2, SpaceTimeFn};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub center: [f64; 4],
    pub mass: f64,
}

impl Atom {
    pub fn new(center: &[f64], mass: f64) -> Self {
        let mut c = [0.0; 4];
        c[..center.len()].copy_from_slice(center);
        Atom { center: c, mass }
    }
}

/// `Σ N_j log|z − a_j| + smooth(z)`, clipped at `−m_cap` for storage.
#[derive(Clone)]
pub struct SingularPotential {
    pub atoms: Vec<Atom>,
    pub smooth: Arc<dyn SpaceTimeFn>,
    pub m_cap: f64,
}

impl std::fmt::Debug for SingularPotential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SingularPotential")
            .field("atoms", &self.atoms)
            .field("m_cap", &self.m_cap)
            .finish_non_exhaustive()
    }
}

impl SingularPotential {
    pub fn new(atoms: Vec<Atom>, smooth: Arc<dyn SpaceTimeFn>) -> Self {
        SingularPotential {
            atoms,
            smooth,
            m_cap: crate::DEFAULT_M_CAP,
        }
    }

    /// Unclipped value; `−∞` at a pole.
    pub fn raw(&self, x: &[f64]) -> f64 {
        let d = x.len();
        let mut v = self.smooth.eval(x, 0.0);
        for a in &self.atoms {
            v += a.mass * 0.5 * dist2(x, &a.center[..d]).ln();
        }
        v
    }

    /// Smallest distance from an atom to the boundary of `spec`.
    pub fn boundary_distance(&self, spec: &DomainSpec) -> f64 {
        self.atoms
            .iter()
            .map(|a| spec.depth(&a.center[..spec.real_dim()]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Atoms must sit at least `4h` inside the domain.
    pub fn validate(&self, g: &Grid) -> Result<()> {
        for a in &self.atoms {
            if !(a.mass > 0.0) {
                return Err(Error::InvalidArgument(format!("atom mass {} must be positive", a.mass)));
            }
            let depth = g.spec.depth(&a.center[..g.dim()]);
            if depth < 4.0 * g.h {
                return Err(Error::InvalidArgument(format!(
                    "atom at distance {depth:.4} from the boundary; at least 4h = {:.4} required",
                    4.0 * g.h
                )));
            }
        }
        Ok(())
    }

    pub fn sample(&self, g: &Grid) -> ScalarField {
        let d = g.dim();
        let mut f = ScalarField::zeros(g);
        f.values = (0..g.node_count())
            .into_par_iter()
            .map(|i| self.raw(&g.coords(i)[..d]))
            .collect();
        f.clip(self.m_cap);
        f
    }
}

impl SpaceTimeFn for SingularPotential {
    fn eval(&self, x: &[f64], _t: f64) -> f64 {
        self.raw(x).max(-self.m_cap)
    }
}

/// Value of `u₀` at `z` with its floor flag.
pub fn eval_u0(p: &SingularPotential, x: &[f64]) -> (f64, bool) {
    let v = p.raw(x);
    if v > -p.m_cap {
        (v, false)
    } else {
        (-p.m_cap, true)
    }
}

/// Mean of `log|x − y|` over `y` distributed by the radial bump
/// `(1 − |y|²/δ²)³` on `ℝ^{2n}`, as a function of `r = |x|`.
///
/// The sphere means of `log|·|` are `log max(r, s)` for n = 1 and
/// `log max(r, s) + min(r, s)²/(4 max(r, s)²)` for n = 2, so the radial
/// average reduces to polynomial-times-log integrals evaluated in closed form.
pub fn mollified_log(n: usize, r: f64, delta: f64) -> f64 {
    let p0 = 2 * n - 1;
    // Radial density (2/B(n,4)) σ^{2n−1}(1 − σ²)³ on [0, 1].
    let scale = if n == 1 { 8.0 } else { 40.0 };
    let terms: [(f64, i32); 4] = [
        (1.0, p0 as i32),
        (-3.0, p0 as i32 + 2),
        (3.0, p0 as i32 + 4),
        (-1.0, p0 as i32 + 6),
    ];
    let rho = r / delta;
    let q = rho.min(1.0);
    let mut acc = 0.0;
    for &(c, p) in &terms {
        let p1 = (p + 1) as f64;
        let qp1 = q.powi(p + 1);
        // σ < q: log max = log ρ.
        if q > 0.0 {
            acc += c * rho.ln() * qp1 / p1;
        }
        // σ > q: log max = log σ.
        if q < 1.0 {
            let tail = if q > 0.0 { qp1 / p1 * (q.ln() - 1.0 / p1) } else { 0.0 };
            acc += c * (-1.0 / (p1 * p1) - tail);
        }
        if n == 2 {
            let p3 = (p + 3) as f64;
            if rho >= 1.0 {
                acc += c / (4.0 * rho * rho * p3);
            } else {
                acc += c * qp1 / (4.0 * p3);
                let pm1 = (p - 1) as f64;
                acc += c * rho * rho / 4.0 * (1.0 - q.powi(p - 1)) / pm1;
            }
        }
    }
    delta.ln() + scale * acc
}

/// Mollifier radius of level `k`: `2^{−k} · dist/4`.
pub fn delta_k(p: &SingularPotential, spec: &DomainSpec, k: u32) -> f64 {
    let dist = p.boundary_distance(spec);
    let dist = if dist.is_finite() { dist } else { spec.radius };
    0.25 * dist * 0.5f64.powi(k as i32)
}

/// Analytic `u_{0,k}` on the enlarged domain.
#[derive(Clone)]
pub struct MollifiedPotential {
    pub potential: SingularPotential,
    pub n: usize,
    pub k: u32,
    pub delta: f64,
}

impl MollifiedPotential {
    pub fn new(p: &SingularPotential, spec: &DomainSpec, k: u32) -> Result<Self> {
        Self::with_delta(p, spec, k, delta_k(p, spec, k))
    }

    pub fn with_delta(p: &SingularPotential, spec: &DomainSpec, k: u32, delta: f64) -> Result<Self> {
        if k < 1 {
            return Err(Error::InvalidArgument("approximation level k must be at least 1".into()));
        }
        let limit = 0.5 * p.boundary_distance(spec);
        if !(delta < limit) && !p.atoms.is_empty() {
            return Err(Error::MollifierTooWide { delta, limit });
        }
        Ok(MollifiedPotential {
            potential: p.clone(),
            n: spec.n,
            k,
            delta,
        })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let d = x.len();
        let mut v = self.potential.smooth.eval(x, 0.0) + abs2(x) / self.k as f64;
        for a in &self.potential.atoms {
            let r = dist2(x, &a.center[..d]).sqrt();
            v += a.mass * mollified_log(self.n, r, self.delta);
        }
        v
    }

    /// `log det` of the analytic complex Hessian by centered differences
    /// with step `1e-4`.
    pub fn logdet_at(&self, x: &[f64]) -> f64 {
        let h = 1e-4;
        let d = x.len();
        let mut y = [0.0; 4];
        y[..d].copy_from_slice(x);
        let mut at = |offs: &[(usize, f64)]| {
            let mut z = y;
            for &(a, s) in offs {
                z[a] += s * h;
            }
            self.value(&z[..d])
        };
        let c = at(&[]);
        let pure = |a: usize, at: &mut dyn FnMut(&[(usize, f64)]) -> f64| {
            (at(&[(a, 1.0)]) - 2.0 * c + at(&[(a, -1.0)])) / (h * h)
        };
        let mixed = |a: usize, b: usize, at: &mut dyn FnMut(&[(usize, f64)]) -> f64| {
            (at(&[(a, 1.0), (b, 1.0)]) - at(&[(a, 1.0), (b, -1.0)]) - at(&[(a, -1.0), (b, 1.0)])
                + at(&[(a, -1.0), (b, -1.0)]))
                / (4.0 * h * h)
        };
        let mut r = [0.0; 8];
        for a in 0..d {
            r[a] = pure(a, &mut at);
        }
        if self.n == 2 {
            for (q, &(a, b)) in [(0, 2), (1, 3), (0, 3), (1, 2)].iter().enumerate() {
                r[4 + q] = mixed(a, b, &mut at);
            }
        }
        crate::grid::herm_from_derivs(self.n, &r).clamped(self.n, DEFAULT_DELTA).logdet
    }
}

impl SpaceTimeFn for MollifiedPotential {
    fn eval(&self, x: &[f64], _t: f64) -> f64 {
        self.value(x)
    }
}

/// Grid field of `u_{0,k}`; nodal values everywhere, no trace.
pub fn mollify_decreasing(p: &SingularPotential, k: u32, g: &Grid) -> Result<ScalarField> {
    let m = MollifiedPotential::new(p, &g.spec, k)?;
    let mut f = g.sample(&m, 0.0, false);
    f.m_cap = p.m_cap;
    Ok(f)
}

/// `g_k = log det(u_{0,k})_{αβ̄} + f(·, 0)` at every unknown (other nodes
/// carry 0).
///
/// Only unknowns next to the boundary must be strictly psh: that is where
/// the compatibility condition lives. Near a mollified pole the discrete
/// Hessian of the exact log tail can dip below zero by its truncation error;
/// those nodes are clamped.
pub fn compat_g_k(u0k: &ScalarField, f: &dyn SpaceTimeFn, g: &Grid) -> Result<ScalarField> {
    let h = complex_hessian(u0k, g);
    let d = g.dim();
    let mut out = ScalarField::zeros(g);
    for (p, e) in h.entries.iter().enumerate() {
        let c = e.clamped(g.n(), DEFAULT_DELTA);
        if g.boundary_adjacent[p] && c.min_eig < DEFAULT_DELTA {
            return Err(Error::NotPsh {
                node: g.node_of[p],
                eigenvalue: c.min_eig,
            });
        }
        let x = g.unknown_coords(p);
        out.values[g.node_of[p]] = c.logdet + f.eval(&x[..d], 0.0);
    }
    Ok(out)
}

fn h_bump(x: f64) -> f64 {
    if x > 0.0 {
        (-1.0 / x).exp()
    } else {
        0.0
    }
}

/// Smooth cutoff: 1 on `(−∞, 1]`, 0 on `[2, ∞)`, decreasing between.
pub fn zeta(s: f64) -> f64 {
    let a = h_bump(2.0 - s);
    let b = h_bump(s - 1.0);
    if b == 0.0 {
        1.0
    } else if a == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RampParams {
    pub k: u32,
    pub eps: f64,
    pub delta: f64,
    /// `sup |g_k|` over the boundary crossings.
    pub sup_g: f64,
}

/// Boundary data `φ_k = ζ(t/ε_k)(t g_k + u_{0,k}) + (1 − ζ(t/ε_k)) φ`.
#[derive(Clone)]
pub struct BoundaryRamp {
    pub phi: Arc<dyn SpaceTimeFn>,
    pub forcing: Arc<dyn SpaceTimeFn>,
    pub u0k: MollifiedPotential,
    pub eps: f64,
}

impl BoundaryRamp {
    /// Compatibility forcing at a boundary point, from the analytic `u_{0,k}`.
    pub fn g_at(&self, x: &[f64]) -> f64 {
        self.u0k.logdet_at(x) + self.forcing.eval(x, 0.0)
    }
}

impl SpaceTimeFn for BoundaryRamp {
    fn eval(&self, x: &[f64], t: f64) -> f64 {
        let z = zeta(t / self.eps);
        let far = if z < 1.0 { self.phi.eval(x, t) } else { 0.0 };
        if z == 0.0 {
            return far;
        }
        z * (t * self.g_at(x) + self.u0k.value(x)) + (1.0 - z) * far
    }
}

pub fn boundary_ramp(
    phi: Arc<dyn SpaceTimeFn>,
    forcing: Arc<dyn SpaceTimeFn>,
    u0k: MollifiedPotential,
    rp: &RampParams,
) -> BoundaryRamp {
    BoundaryRamp {
        phi,
        forcing,
        u0k,
        eps: rp.eps,
    }
}

/// Accuracy of [`MollifiedPotential::logdet_at`].
const G_NOISE: f64 = 1e-6;

/// Ramp parameters for levels `1..=k_max`.
///
/// `ε_k = 2^{−k}/(1 + sup|g_k|)`, then lowered where needed so that both
/// `ε_k` and `ε_k·sup|g_k|` decrease along the levels. A level with
/// `sup|g_k| = 0` contributes a zero product and does not constrain the
/// next one.
pub fn ramp_schedule(
    p: &SingularPotential,
    forcing: &dyn SpaceTimeFn,
    g: &Grid,
    k_max: u32,
) -> Result<Vec<RampParams>> {
    let d = g.dim();
    let mut out: Vec<RampParams> = Vec::new();
    for k in 1..=k_max {
        let m = MollifiedPotential::new(p, &g.spec, k)?;
        let mut sup_g = g
            .crossings
            .par_iter()
            .map(|c| (m.logdet_at(&c.point[..d]) + forcing.eval(&c.point[..d], 0.0)).abs())
            .reduce(|| 0.0, f64::max);
        // Below the accuracy of the difference quotient the sup is zero.
        if sup_g < G_NOISE {
            sup_g = 0.0;
        }
        let mut eps = 0.5f64.powi(k as i32) / (1.0 + sup_g);
        if let Some(prev) = out.last() {
            let shrink = 1.0 - 1e-3;
            eps = eps.min(prev.eps * shrink);
            let prev_prod = prev.eps * prev.sup_g;
            if prev_prod > 0.0 && sup_g > 0.0 {
                eps = eps.min(prev_prod * shrink / sup_g);
            }
        }
        out.push(RampParams {
            k,
            eps,
            delta: m.delta,
            sup_g,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, DomainSpec};
    use crate::{Const, FnOf};
    use approx::assert_abs_diff_eq;

    fn log_pole() -> SingularPotential {
        SingularPotential::new(vec![Atom::new(&[0.0, 0.0], 1.0)], Arc::new(Const(0.0)))
    }

    /// Brute-force radial average by midpoint quadrature in σ and the
    /// angular variable(s).
    fn brute_mollified(n: usize, r: f64, delta: f64) -> f64 {
        let ns = 800;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..ns {
            let s = (i as f64 + 0.5) / ns as f64;
            let w = s.powi(2 * n as i32 - 1) * (1.0 - s * s).powi(3);
            let sd = s * delta;
            let mean = if n == 1 {
                let na = 720;
                (0..na)
                    .map(|j| {
                        let th = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / na as f64;
                        0.5 * ((r - sd * th.cos()).powi(2) + (sd * th.sin()).powi(2)).ln()
                    })
                    .sum::<f64>()
                    / na as f64
            } else {
                // In ℝ⁴ the polar angle to a fixed axis has density ∝ sin²χ.
                let na = 720;
                let mut acc = 0.0;
                let mut wsum = 0.0;
                for j in 0..na {
                    let chi = std::f64::consts::PI * (j as f64 + 0.5) / na as f64;
                    let wj = chi.sin().powi(2);
                    acc += wj * 0.5 * (r * r - 2.0 * r * sd * chi.cos() + sd * sd).ln();
                    wsum += wj;
                }
                acc / wsum
            };
            num += w * mean;
            den += w;
        }
        num / den
    }

    #[test]
    fn closed_form_mollified_log_matches_quadrature() {
        for n in [1, 2] {
            for &r in &[0.0, 0.01, 0.05, 0.099, 0.1, 0.2, 0.7] {
                let exact = mollified_log(n, r, 0.1);
                let brute = brute_mollified(n, r, 0.1);
                assert!((exact - brute).abs() < 2e-4, "n={n} r={r}: {exact} vs {brute}");
            }
        }
    }

    #[test]
    fn mollified_log_outside_support() {
        assert_abs_diff_eq!(mollified_log(1, 0.5, 0.1), 0.5f64.ln(), epsilon = 1e-14);
        let r: f64 = 0.5;
        let m2 = mollified_log(2, r, 0.1);
        // log r + E[s²]/(4r²) with E[s²] = δ²·B(3,4)/B(2,4) = δ²/3.
        assert_abs_diff_eq!(m2, r.ln() + 0.01 / 3.0 / (4.0 * r * r), epsilon = 1e-14);
    }

    #[test]
    fn eval_u0_examples() {
        let p = log_pole();
        let e = (-1.0f64).exp();
        assert_abs_diff_eq!(eval_u0(&p, &[e, 0.0]).0, -1.0, epsilon = 1e-15);
        assert_eq!(eval_u0(&p, &[0.0, 0.0]), (-40.0, true));
        let two = SingularPotential::new(
            vec![Atom::new(&[0.0, 0.0], 1.0), Atom::new(&[0.5, 0.0], 2.0)],
            Arc::new(Const(0.0)),
        );
        assert_abs_diff_eq!(eval_u0(&two, &[0.25, 0.0]).0, 3.0 * 0.25f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn smooth_potential_gets_lift_only() {
        let g = build_grid(&DomainSpec::disc(), 33).unwrap();
        let smooth = Arc::new(FnOf(|x: &[f64], _| 0.3 * x[0] * x[0] + x[1]));
        let p = SingularPotential::new(vec![], smooth.clone());
        let f = mollify_decreasing(&p, 1, &g).unwrap();
        for i in 0..g.node_count() {
            let x = g.coords(i);
            assert_abs_diff_eq!(f.values[i], smooth.eval(&x[..2], 0.0) + abs2(&x[..2]), epsilon = 1e-12);
        }
    }

    #[test]
    fn mollified_pole_value_and_monotonicity() {
        let g = build_grid(&DomainSpec::disc(), 65).unwrap();
        let p = log_pole();
        let u0 = p.sample(&g);
        let levels: Vec<ScalarField> = (1..=6).map(|k| mollify_decreasing(&p, k, &g).unwrap()).collect();
        let center = g.snap(&[0.0, 0.0]).node;
        for (k, l) in levels.iter().enumerate() {
            let dk = delta_k(&p, &g.spec, k as u32 + 1);
            assert!(l.values[center].is_finite());
            // E[log σ] under the bump is about −1.04.
            assert!(l.values[center] >= dk.ln() - 1.1);
        }
        for w in levels.windows(2) {
            let worst = g
                .node_of
                .iter()
                .map(|&i| w[0].values[i] - w[1].values[i])
                .fold(f64::INFINITY, f64::min);
            assert!(worst >= -1e-8, "{worst}");
        }
        for &i in &g.node_of {
            assert!(levels[5].values[i] >= u0.values[i] - 1e-8);
        }
    }

    #[test]
    fn n2_mollification_is_monotone_in_delta() {
        for i in 1..50 {
            let r = i as f64 * 0.01;
            let a = mollified_log(2, r, 0.2);
            let b = mollified_log(2, r, 0.1);
            assert!(a >= b - 1e-14, "r={r}");
            assert!(b >= r.ln() - 1e-14, "r={r}");
        }
    }

    #[test]
    fn mollifier_too_wide() {
        let g = build_grid(&DomainSpec::disc(), 33).unwrap();
        let p = SingularPotential::new(vec![Atom::new(&[0.5, 0.0], 1.0)], Arc::new(Const(0.0)));
        assert!(matches!(
            MollifiedPotential::with_delta(&p, &g.spec, 1, 0.3),
            Err(Error::MollifierTooWide { .. })
        ));
    }

    #[test]
    fn compat_examples() {
        let g = build_grid(&DomainSpec::disc(), 33).unwrap();
        let abs2f = g.sample(&FnOf(|x: &[f64], _| abs2(x)), 0.0, false);
        let g0 = compat_g_k(&abs2f, &Const(0.0), &g).unwrap();
        assert!(g.node_of.iter().all(|&i| g0.values[i].abs() < 1e-9));
        let gc = compat_g_k(&abs2f, &Const(0.7), &g).unwrap();
        assert!(g.node_of.iter().all(|&i| (gc.values[i] - 0.7).abs() < 1e-9));

        let b = build_grid(&DomainSpec::ball(), 17).unwrap();
        let two = b.sample(&FnOf(|x: &[f64], _| 2.0 * abs2(x)), 0.0, false);
        let g2 = compat_g_k(&two, &Const(0.0), &b).unwrap();
        assert!(b.node_of.iter().all(|&i| (g2.values[i] - 2.0 * 2f64.ln()).abs() < 1e-9));

        let concave = g.sample(&FnOf(|x: &[f64], _| -abs2(x)), 0.0, false);
        assert!(matches!(compat_g_k(&concave, &Const(0.0), &g), Err(Error::NotPsh { .. })));
    }

    #[test]
    fn zeta_examples() {
        assert_eq!(zeta(0.5), 1.0);
        assert_eq!(zeta(1.0), 1.0);
        assert_eq!(zeta(3.0), 0.0);
        assert_eq!(zeta(2.0), 0.0);
        assert_abs_diff_eq!(zeta(1.5), 0.5, epsilon = 1e-15);
        let mut prev = 1.0;
        for i in 0..=400 {
            let z = zeta(0.5 + i as f64 * 0.005);
            assert!(z <= prev);
            prev = z;
        }
    }

    #[test]
    fn ramp_examples() {
        let g = build_grid(&DomainSpec::disc(), 33).unwrap();
        let p = log_pole();
        let phi: Arc<dyn SpaceTimeFn> = Arc::new(FnOf(|x: &[f64], t: f64| 0.2 * t * x[0]));
        let f: Arc<dyn SpaceTimeFn> = Arc::new(Const(0.0));
        let sched = ramp_schedule(&p, f.as_ref(), &g, 3).unwrap();
        let rp = sched[1];
        let u0k = MollifiedPotential::new(&p, &g.spec, rp.k).unwrap();
        let ramp = boundary_ramp(phi.clone(), f, u0k.clone(), &rp);
        let b = [0.6, 0.8];
        assert_abs_diff_eq!(ramp.eval(&b, 0.0), u0k.value(&b), epsilon = 1e-15);
        assert_eq!(ramp.eval(&b, 3.0 * rp.eps), phi.eval(&b, 3.0 * rp.eps));
        let s = 1e-6 * rp.eps;
        let dt = (ramp.eval(&b, s) - ramp.eval(&b, -s)) / (2.0 * s);
        assert!((dt - ramp.g_at(&b)).abs() < 1e-6);
        // At the boundary u_{0,2} = |z|²/2, so g_2 = log(1/2).
        assert_abs_diff_eq!(ramp.g_at(&b), 0.5f64.ln(), epsilon = 1e-6);
    }

    #[test]
    fn schedule_is_decreasing() {
        let g = build_grid(&DomainSpec::disc(), 33).unwrap();
        let sched = ramp_schedule(&log_pole(), &Const(0.0), &g, 5).unwrap();
        for w in sched.windows(2) {
            assert!(w[1].eps < w[0].eps);
            if w[0].sup_g > 0.0 {
                assert!(w[1].eps * w[1].sup_g < w[0].eps * w[0].sup_g);
            }
            assert!(w[1].delta < w[0].delta);
        }
    }
}
