//! Lelong numbers of grid fields and the times at which poles disappear.
//!
//! The estimator regresses sphere maxima `M(r) = max_{|z−a|=r} u` against
//! `log r` over geometrically spaced radii. Maxima are used instead of means
//! because they are monotone in `r` for psh functions.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{FlowState, TimeSchedule};
use crate::grid::{Grid, ScalarField};
use crate::theory::epsilon_a;

/// Angular samples per circle for n = 1.
const ANGLES_1: usize = 256;
/// `(χ, θ₁, θ₂)` lattice on S³ for n = 2.
const CHI_2: usize = 12;
const THETA_2: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusSpec {
    pub r_min: f64,
    pub r_max: f64,
    pub n_radii: usize,
}

impl RadiusSpec {
    /// `[2h, 16h]` with the upper end capped at half the distance to the
    /// boundary, eight radii.
    pub fn default_for(g: &Grid, a: &[f64]) -> Self {
        let cap = 0.5 * g.spec.depth(&a[..g.dim()]);
        RadiusSpec {
            r_min: 2.0 * g.h,
            r_max: (16.0 * g.h).min(cap),
            n_radii: 8,
        }
    }

    pub fn radii(&self) -> Vec<f64> {
        let q = (self.r_max / self.r_min).powf(1.0 / (self.n_radii - 1) as f64);
        (0..self.n_radii).map(|i| self.r_min * q.powi(i as i32)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LelongEstimate {
    /// Slope truncated at zero.
    pub nu: f64,
    pub raw: f64,
}

/// Maximum of the interpolated field over the sphere of radius `r` about `a`.
pub fn sphere_max(u: &ScalarField, g: &Grid, a: &[f64], r: f64) -> f64 {
    if g.n() == 1 {
        return (0..ANGLES_1)
            .map(|i| {
                let th = 2.0 * PI * i as f64 / ANGLES_1 as f64;
                g.interpolate(u, &[a[0] + r * th.cos(), a[1] + r * th.sin()])
            })
            .fold(f64::NEG_INFINITY, f64::max);
    }
    let mut best = f64::NEG_INFINITY;
    for i in 0..=CHI_2 {
        let chi = 0.5 * PI * i as f64 / CHI_2 as f64;
        let (c, s) = (chi.cos(), chi.sin());
        let n1 = if c.abs() < 1e-12 { 1 } else { THETA_2 };
        let n2 = if s.abs() < 1e-12 { 1 } else { THETA_2 };
        for j in 0..n1 {
            let t1 = 2.0 * PI * j as f64 / THETA_2 as f64;
            for k in 0..n2 {
                let t2 = 2.0 * PI * k as f64 / THETA_2 as f64;
                let x = [
                    a[0] + r * c * t1.cos(),
                    a[1] + r * c * t1.sin(),
                    a[2] + r * s * t2.cos(),
                    a[3] + r * s * t2.sin(),
                ];
                best = best.max(g.interpolate(u, &x));
            }
        }
    }
    best
}

fn check_radii(g: &Grid, a: &[f64], rs: &RadiusSpec) -> Result<()> {
    let limit = 0.5 * g.spec.depth(&a[..g.dim()]);
    if rs.n_radii < 4 {
        return Err(Error::RadiiOutOfRange(format!("{} radii; at least 4 required", rs.n_radii)));
    }
    if rs.r_min < 2.0 * g.h * (1.0 - 1e-12) {
        return Err(Error::RadiiOutOfRange(format!("r_min {} below 2h = {}", rs.r_min, 2.0 * g.h)));
    }
    if rs.r_max > limit * (1.0 + 1e-12) {
        return Err(Error::RadiiOutOfRange(format!(
            "r_max {} above half the boundary distance {limit}",
            rs.r_max
        )));
    }
    if !(rs.r_max > rs.r_min) {
        return Err(Error::RadiiOutOfRange(format!("r_max {} not above r_min {}", rs.r_max, rs.r_min)));
    }
    Ok(())
}

/// Least-squares slope of `y` against `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

pub fn lelong_estimate(u: &ScalarField, g: &Grid, a: &[f64], rs: &RadiusSpec) -> Result<LelongEstimate> {
    check_radii(g, a, rs)?;
    let radii = rs.radii();
    let logs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let maxima: Vec<f64> = radii.par_iter().map(|&r| sphere_max(u, g, a, r)).collect();
    let raw = slope(&logs, &maxima);
    Ok(LelongEstimate { nu: raw.max(0.0), raw })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuSample {
    pub t: f64,
    pub u_at_atom: f64,
    pub nu_hat: f64,
    pub raw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Resolution {
    /// First snapshot of a run of persistent resolved snapshots, with the
    /// preceding snapshot time.
    Resolved { t: f64, previous: f64 },
    Unresolved,
}

impl Resolution {
    pub fn time(&self) -> Option<f64> {
        match self {
            Resolution::Resolved { t, .. } => Some(*t),
            Resolution::Unresolved => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolutionCriteria {
    pub nu_tol: f64,
    /// Consecutive snapshots that must satisfy the condition.
    pub persistence: usize,
    pub m_cap: f64,
}

impl Default for ResolutionCriteria {
    fn default() -> Self {
        ResolutionCriteria {
            nu_tol: 0.05,
            persistence: 2,
            m_cap: crate::DEFAULT_M_CAP,
        }
    }
}

impl ResolutionCriteria {
    pub fn resolved(&self, s: &NuSample) -> bool {
        s.nu_hat < self.nu_tol && s.u_at_atom > -0.5 * self.m_cap
    }
}

/// Lelong series of one atom across the snapshots of a flow.
pub fn nu_series(fs: &FlowState, g: &Grid, a: &[f64], rs: &RadiusSpec) -> Result<Vec<NuSample>> {
    let node = g.snap(a).node;
    fs.fields
        .iter()
        .zip(&fs.times)
        .map(|(u, &t)| {
            let e = lelong_estimate(u, g, a, rs)?;
            Ok(NuSample {
                t,
                u_at_atom: u.values[node],
                nu_hat: e.nu,
                raw: e.raw,
            })
        })
        .collect()
}

pub fn resolution_from_series(series: &[NuSample], c: &ResolutionCriteria) -> Resolution {
    let p = c.persistence.max(1);
    for i in 0..series.len() {
        if i + p > series.len() {
            break;
        }
        if series[i..i + p].iter().all(|s| c.resolved(s)) {
            let previous = if i == 0 { series[0].t } else { series[i - 1].t };
            return Resolution::Resolved {
                t: series[i].t,
                previous,
            };
        }
    }
    Resolution::Unresolved
}

pub fn resolution_time(
    fs: &FlowState,
    g: &Grid,
    a: &[f64],
    rs: &RadiusSpec,
    c: &ResolutionCriteria,
) -> Result<Resolution> {
    Ok(resolution_from_series(&nu_series(fs, g, a, rs)?, c))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingularityRecord {
    pub a: [f64; 4],
    pub nu0: f64,
    pub series: Vec<NuSample>,
    pub resolution: Resolution,
    pub bound_lo: f64,
    pub bound_hi: f64,
    pub snap_distance: f64,
    /// Snapshot spacing `stride·dt` of the generating run.
    pub snapshot_dt: f64,
}

impl SingularityRecord {
    pub fn epsilon_measured(&self) -> Option<f64> {
        self.resolution.time()
    }

    pub fn default_slack(&self) -> f64 {
        (2.0 * self.snapshot_dt).max(0.1 * self.bound_lo)
    }
}

/// Full record of one atom: series, measured resolution and the bounds
/// `ε_A(ν₀) ≤ ε ≤ ε_A(n ν₀)`.
#[allow(clippy::too_many_arguments)]
pub fn track(
    fs: &FlowState,
    g: &Grid,
    a: &[f64],
    nu0: f64,
    coeff_a: f64,
    sched: &TimeSchedule,
    rs: &RadiusSpec,
    c: &ResolutionCriteria,
) -> Result<SingularityRecord> {
    let n = g.n();
    let series = nu_series(fs, g, a, rs)?;
    let resolution = resolution_from_series(&series, c);
    let mut center = [0.0; 4];
    center[..g.dim()].copy_from_slice(&a[..g.dim()]);
    Ok(SingularityRecord {
        a: center,
        nu0,
        series,
        resolution,
        bound_lo: epsilon_a(coeff_a, n, nu0)?,
        bound_hi: epsilon_a(coeff_a, n, n as f64 * nu0)?,
        snap_distance: g.snap(a).distance,
        snapshot_dt: sched.dt * sched.stride as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsReport {
    pub measured: Option<f64>,
    pub lo: f64,
    pub hi: f64,
    pub slack: f64,
    pub pass: bool,
}

pub fn check_bounds(rec: &SingularityRecord, slack: Option<f64>) -> BoundsReport {
    let slack = slack.unwrap_or_else(|| rec.default_slack());
    let measured = rec.epsilon_measured();
    let pass = measured.is_some_and(|m| rec.bound_lo - slack <= m && m <= rec.bound_hi + slack);
    BoundsReport {
        measured,
        lo: rec.bound_lo,
        hi: rec.bound_hi,
        slack,
        pass,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityReport {
    /// Largest increase `ν̂(t_{i+1}) − ν̂(t_i)`.
    pub worst_rise: f64,
    pub at: f64,
    pub pass: bool,
}

pub fn nu_monotonicity(rec: &SingularityRecord, noise: f64) -> MonotonicityReport {
    let mut worst = f64::NEG_INFINITY;
    let mut at = rec.series.first().map_or(0.0, |s| s.t);
    for w in rec.series.windows(2) {
        let rise = w[1].nu_hat - w[0].nu_hat;
        if rise > worst {
            worst = rise;
            at = w[1].t;
        }
    }
    if rec.series.len() < 2 {
        worst = 0.0;
    }
    MonotonicityReport {
        worst_rise: worst,
        at,
        pass: worst <= noise,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, DomainSpec};
    use crate::{abs2, FnOf};

    fn field(g: &Grid, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> ScalarField {
        let mut u = g.sample(&FnOf(move |x: &[f64], _| f(x)), 0.0, false);
        u.clip(40.0);
        u
    }

    fn est(g: &Grid, u: &ScalarField) -> f64 {
        let a = [0.0; 4];
        lelong_estimate(u, g, &a, &RadiusSpec::default_for(g, &a)).unwrap().nu
    }

    #[test]
    fn log_pole_has_unit_number() {
        let g = build_grid(&DomainSpec::disc(), 257).unwrap();
        let u = field(&g, |x| 0.5 * abs2(x).ln());
        assert!((est(&g, &u) - 1.0).abs() <= 0.02, "{}", est(&g, &u));
    }

    #[test]
    fn smooth_point_has_zero_number() {
        let g = build_grid(&DomainSpec::disc(), 257).unwrap();
        let u = field(&g, abs2);
        assert!(est(&g, &u).abs() <= 0.02, "{}", est(&g, &u));
    }

    #[test]
    fn scaled_pole_plus_smooth() {
        let g = build_grid(&DomainSpec::disc(), 257).unwrap();
        let u = field(&g, |x| 2.5 * 0.5 * abs2(x).ln() + abs2(x));
        assert!((est(&g, &u) - 2.5).abs() <= 0.05, "{}", est(&g, &u));
    }

    #[test]
    fn radii_preconditions() {
        let g = build_grid(&DomainSpec::disc(), 33).unwrap();
        let u = field(&g, abs2);
        let a = [0.0; 4];
        let bad = |rs: RadiusSpec| matches!(lelong_estimate(&u, &g, &a, &rs), Err(Error::RadiiOutOfRange(_)));
        assert!(bad(RadiusSpec { r_min: g.h, r_max: 0.3, n_radii: 8 }));
        assert!(bad(RadiusSpec { r_min: 2.0 * g.h, r_max: 0.6, n_radii: 8 }));
        assert!(bad(RadiusSpec { r_min: 2.0 * g.h, r_max: 0.3, n_radii: 3 }));
    }

    #[test]
    fn n2_log_pole() {
        let g = build_grid(&DomainSpec::ball(), 33).unwrap();
        let u = field(&g, |x| 0.5 * abs2(x).ln());
        let a = [0.0; 4];
        let rs = RadiusSpec::default_for(&g, &a);
        let e = lelong_estimate(&u, &g, &a, &rs).unwrap();
        assert!((e.nu - 1.0).abs() <= 0.05, "{e:?}");
    }

    fn rec(series: &[(f64, f64, f64)]) -> SingularityRecord {
        SingularityRecord {
            a: [0.0; 4],
            nu0: 1.0,
            series: series
                .iter()
                .map(|&(t, u, nu)| NuSample { t, u_at_atom: u, nu_hat: nu, raw: nu })
                .collect(),
            resolution: Resolution::Unresolved,
            bound_lo: 0.5,
            bound_hi: 0.5,
            snap_distance: 0.0,
            snapshot_dt: 0.01,
        }
    }

    #[test]
    fn resolution_needs_persistence() {
        let r = rec(&[(0.0, -40.0, 1.0), (0.1, -3.0, 0.04), (0.2, -2.0, 0.3), (0.3, -1.0, 0.01), (0.4, -1.0, 0.0)]);
        let res = resolution_from_series(&r.series, &ResolutionCriteria::default());
        assert_eq!(res, Resolution::Resolved { t: 0.3, previous: 0.2 });
        let smooth = rec(&[(0.0, 0.0, 0.0), (0.1, 0.0, 0.0)]);
        assert_eq!(
            resolution_from_series(&smooth.series, &ResolutionCriteria::default()).time(),
            Some(0.0)
        );
        let never = rec(&[(0.0, -40.0, 1.0), (0.1, -40.0, 0.9)]);
        assert_eq!(resolution_from_series(&never.series, &ResolutionCriteria::default()), Resolution::Unresolved);
        // A floored atom value blocks resolution even with a flat slope.
        let floored = rec(&[(0.0, -40.0, 0.0), (0.1, -40.0, 0.0)]);
        assert_eq!(resolution_from_series(&floored.series, &ResolutionCriteria::default()), Resolution::Unresolved);
    }

    #[test]
    fn bounds_band() {
        let mut r = rec(&[]);
        r.resolution = Resolution::Resolved { t: 0.5, previous: 0.49 };
        assert!(check_bounds(&r, None).pass);
        let slack = r.default_slack();
        assert_eq!(slack, 0.05);
        r.resolution = Resolution::Resolved { t: 0.5 + 2.0 * slack, previous: 0.0 };
        assert!(!check_bounds(&r, None).pass);
        r.resolution = Resolution::Resolved { t: 0.5 + 0.9 * slack, previous: 0.0 };
        assert!(check_bounds(&r, None).pass);
    }

    #[test]
    fn monotonicity_examples() {
        assert!(nu_monotonicity(&rec(&[(0.0, 0.0, 0.5), (0.1, 0.0, 0.5), (0.2, 0.0, 0.5)]), 0.05).pass);
        assert!(!nu_monotonicity(&rec(&[(0.0, 0.0, 0.5), (0.1, 0.0, 0.7)]), 0.05).pass);
    }
}
