//! Task runners behind the command-line subcommands. Each returns an
//! [`Outcome`] and writes its artifacts under the output directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{manufactured, RunConfig};
use crate::demailly::{gram_matrix, orthonormal_basis, verify_dem_bounds, QuadSpec, Weight};
use crate::error::{Error, Result};
use crate::flow::{
    level_problem, max_interior_error, smooth_approx_sequence, solve_flow, ApproxSequence, FlowProblem, FlowState,
    InitialData, TimeSchedule,
};
use crate::grid::{build_grid, Grid};
use crate::io::{render, table_csv, write_atomic, write_field, write_series};
use crate::lelong::{check_bounds, nu_monotonicity, track, RadiusSpec, ResolutionCriteria, SingularityRecord};
use crate::rescale::equivalence_check;
use crate::verify::{
    comparison_check, continuity_at_zero_check, dotu_bounds_check, lower_lipschitz_check, measured_constants,
    monotone_sequence_check, subsolution_check, PrincipleReport,
};
use crate::{FnOf, SpaceTimeFn};

/// Verdict of a task with the lines of its human-readable summary.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub pass: bool,
    pub lines: Vec<String>,
}

impl Outcome {
    fn push(&mut self, line: impl Into<String>) {
        self.lines.push(line.into());
    }
}

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    Path::new(&cfg.out).join(name)
}

fn write_resolved(cfg: &RunConfig) -> Result<()> {
    write_atomic(&out_path(cfg, "resolved.toml"), cfg.to_toml().as_bytes())
}

fn diagnostics_csv(fs: &FlowState) -> String {
    let rows: Vec<Vec<f64>> = fs
        .diagnostics
        .iter()
        .map(|d| {
            vec![
                d.t,
                d.newton_iterations as f64,
                d.linear_iterations as f64,
                d.residual,
                d.clamp_count as f64,
                d.substeps as f64,
            ]
        })
        .collect();
    table_csv(&["t", "newton", "linear", "residual", "clamps", "substeps"], &rows)
}

fn singular_parts(cfg: &RunConfig) -> Result<(Grid, FlowProblem, ApproxSequence)> {
    let prob = cfg.problem()?;
    let g = build_grid(&prob.domain, cfg.numerics.resolution)?;
    let seq = smooth_approx_sequence(&g, &prob, cfg.numerics.k_max, &cfg.schedule(), &cfg.newton())?;
    Ok((g, prob, seq))
}

pub fn solve(cfg: &RunConfig) -> Result<Outcome> {
    write_resolved(cfg)?;
    let prob = cfg.problem()?;
    let g = build_grid(&prob.domain, cfg.numerics.resolution)?;
    let fs = match &prob.initial {
        InitialData::Smooth(_) => solve_flow(&g, &prob, &cfg.schedule(), &cfg.newton())?,
        InitialData::Singular(_) => {
            let seq = smooth_approx_sequence(&g, &prob, cfg.numerics.k_max, &cfg.schedule(), &cfg.newton())?;
            for (l, rp) in seq.levels.iter().zip(&seq.ramps) {
                write_atomic(&out_path(cfg, &format!("diagnostics_k{}.csv", rp.k)), diagnostics_csv(l).as_bytes())?;
            }
            seq.weak
        }
    };
    for (i, f) in fs.fields.iter().enumerate() {
        write_field(&g, f, &out_path(cfg, &format!("field_{i:04}.pcma")))?;
    }
    if !fs.diagnostics.is_empty() {
        write_atomic(&out_path(cfg, "diagnostics.csv"), diagnostics_csv(&fs).as_bytes())?;
    }
    let mut o = Outcome { pass: true, ..Default::default() };
    o.push(format!("solved to t = {:.4} with {} snapshots", fs.times.last().copied().unwrap_or(0.0), fs.times.len()));
    Ok(o)
}

/// Records of every atom of a singular run.
pub fn records(cfg: &RunConfig, g: &Grid, seq: &ApproxSequence) -> Result<Vec<SingularityRecord>> {
    let pot = cfg.potential()?;
    let criteria = ResolutionCriteria {
        m_cap: pot.m_cap,
        ..ResolutionCriteria::default()
    };
    let d = g.dim();
    pot.atoms
        .iter()
        .map(|atom| {
            let a = &atom.center[..d];
            let rs = RadiusSpec::default_for(g, a);
            track(&seq.weak, g, a, atom.mass, cfg.problem.a, &cfg.schedule(), &rs, &criteria)
        })
        .collect()
}

pub fn track_singularity(cfg: &RunConfig) -> Result<Outcome> {
    if cfg.problem.atoms.is_empty() {
        return Err(Error::InvalidArgument("tracking needs at least one atom".into()));
    }
    write_resolved(cfg)?;
    let (g, _, seq) = singular_parts(cfg)?;
    let recs = records(cfg, &g, &seq)?;
    write_series(&recs, &out_path(cfg, "series.csv"))?;
    let mut o = Outcome { pass: true, ..Default::default() };
    for rec in &recs {
        let b = check_bounds(rec, None);
        o.pass &= b.pass;
        let measured = b.measured.map_or_else(|| "unresolved".to_string(), |m| format!("{m:.4}"));
        o.push(format!(
            "atom {:?}: measured {measured}, band [{:.4}, {:.4}] ± {:.4} -> {}",
            &rec.a[..g.dim()],
            b.lo,
            b.hi,
            b.slack,
            if b.pass { "PASS" } else { "FAIL" }
        ));
        let m = nu_monotonicity(rec, 0.05);
        o.push(format!("  largest rise of ν̂ {:+.4} at t = {:.4}", m.worst_rise, m.at));
    }
    Ok(o)
}

pub fn demailly(cfg: &RunConfig) -> Result<Outcome> {
    if cfg.n() != 1 {
        return Err(Error::InvalidArgument("Demailly approximation is implemented on the disc".into()));
    }
    write_resolved(cfg)?;
    let atoms = cfg.problem.atoms.iter().map(|a| ([a.center[0], a.center[1]], a.mass)).collect();
    let smooth = crate::expr::ExprFn::shared(&cfg.problem.smooth)?;
    let w = Weight::new(atoms, smooth, cfg.demailly.m)?;
    let gram = gram_matrix(&w, cfg.demailly.degree, &QuadSpec::default())?;
    let basis = orthonormal_basis(&gram)?;
    let report = verify_dem_bounds(&w, &basis, &[[0.3, 0.2], [-0.4, 0.1]], &[0.02, 0.04, 0.08]);
    let rows: Vec<Vec<f64>> = report
        .rows
        .iter()
        .map(|r| vec![r.z[0], r.z[1], r.nu_phi, r.nu_phi_m, r.lower, f64::from(u8::from(r.pass))])
        .collect();
    write_atomic(
        &out_path(cfg, "sandwich.csv"),
        table_csv(&["x", "y", "nu_phi", "nu_phi_m", "lower", "pass"], &rows).as_bytes(),
    )?;
    let mut o = Outcome { pass: report.pass, ..Default::default() };
    o.push(format!(
        "basis of {} functions (k_min {:?}, condition {:.3e})",
        basis.len(),
        basis.k_min(),
        basis.condition
    ));
    for r in &report.rows {
        o.push(format!(
            "z = {:?}: ν(φ) = {}, ν(φ_m) = {} -> {}",
            r.z,
            r.nu_phi,
            r.nu_phi_m,
            if r.pass { "PASS" } else { "FAIL" }
        ));
    }
    o.push(format!("lower fit N = {:.4}, C = {:.4}", report.fit_n, report.fit_c));
    Ok(o)
}

fn reports_csv(reports: &[PrincipleReport]) -> String {
    let mut out = String::from("name,worst_violation,tolerance,pass\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.name,
            render(r.worst_violation),
            render(r.tolerance),
            u8::from(r.pass)
        ));
    }
    out
}

/// Bound checks on a smooth flow: the lower Lipschitz bound always, the
/// time-derivative bound when `A = 0`.
pub fn bound_reports(g: &Grid, prob: &FlowProblem, fs: &FlowState, tol: f64) -> Result<Vec<PrincipleReport>> {
    let consts = measured_constants(g, prob, &fs.times);
    let mut out = vec![lower_lipschitz_check(g, fs, &consts, tol)?];
    if prob.a == 0.0 {
        out.push(dotu_bounds_check(g, fs, &consts, tol)?);
    }
    Ok(out)
}

/// `f` and `f + p` with `p > 0` a random polynomial; returns the perturbed
/// forcing.
pub fn perturbed_forcing(base: Arc<dyn SpaceTimeFn>, rng: &mut impl Rng) -> Arc<dyn SpaceTimeFn> {
    let c: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..0.5));
    let shift = 0.05 + c[0];
    Arc::new(FnOf(move |x: &[f64], t: f64| {
        base.eval(x, t) + shift + c[1] * x[0] * x[0] + c[2] * x[1] * x[1] + c[3] * t
    }))
}

pub fn verify(cfg: &RunConfig) -> Result<Outcome> {
    write_resolved(cfg)?;
    let prob = cfg.problem()?;
    let g = build_grid(&prob.domain, cfg.numerics.resolution)?;
    let sched = cfg.schedule();
    let np = cfg.newton();
    let tol = np.tol;
    let mut reports = Vec::new();
    match &prob.initial {
        InitialData::Smooth(_) => {
            let fs = solve_flow(&g, &prob, &sched, &np)?;
            reports.extend(bound_reports(&g, &prob, &fs, tol)?);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let bigger = FlowProblem {
                forcing: perturbed_forcing(prob.forcing.clone(), &mut rng),
                ..prob.clone()
            };
            let v = solve_flow(&g, &bigger, &sched, &np)?;
            reports.push(comparison_check(&g, &fs, &v, tol + 1e-6)?);
            let (m, tried) = subsolution_check(&g, &prob, &fs.times, np.delta, 1e-8)?;
            let mut last = tried.last().cloned().expect("at least one multiplier tried");
            last.name = format!("subsolution (smallest M {m:?})");
            reports.push(last);
        }
        InitialData::Singular(pot) => {
            let seq = smooth_approx_sequence(&g, &prob, cfg.numerics.k_max, &sched, &np)?;
            let ks: Vec<u32> = seq.ramps.iter().map(|r| r.k).collect();
            reports.push(monotone_sequence_check(&g, &seq.levels, &ks, tol)?);
            reports.push(continuity_at_zero_check(&g, &seq.weak, &pot.sample(&g), 0.0)?);
            if let Some(i) = ks.iter().position(|&k| k == 3) {
                let (level, _) = level_problem(&prob, pot, &seq.ramps[i])?;
                for mut r in bound_reports(&g, &level, &seq.levels[i], tol)? {
                    r.name = format!("{} k=3", r.name);
                    reports.push(r);
                }
            }
        }
    }
    write_atomic(&out_path(cfg, "reports.csv"), reports_csv(&reports).as_bytes())?;
    let mut o = Outcome {
        pass: reports.iter().all(|r| r.pass),
        ..Default::default()
    };
    for r in &reports {
        o.push(r.summary());
    }
    Ok(o)
}

pub fn rescale_compare(cfg: &RunConfig) -> Result<Outcome> {
    write_resolved(cfg)?;
    let prob = cfg.problem()?;
    if !matches!(prob.initial, InitialData::Smooth(_)) {
        return Err(Error::InvalidArgument("the rescaling comparison needs smooth initial data".into()));
    }
    let g = build_grid(&prob.domain, cfg.numerics.resolution)?;
    let r = equivalence_check(&g, &prob, &cfg.schedule(), &cfg.newton(), 5e-2)?;
    let mut o = Outcome { pass: r.pass, ..Default::default() };
    o.push(format!(
        "sup |u_direct − u_rescaled| = {:.3e} (tol {:.1e}) -> {}",
        r.discrepancy,
        r.tolerance,
        if r.pass { "PASS" } else { "FAIL" }
    ));
    Ok(o)
}

/// One level of a convergence study.
#[derive(Debug, Clone, Copy)]
pub struct ConvergenceRow {
    pub resolution: usize,
    pub h: f64,
    pub dt: f64,
    pub error: f64,
}

/// Run the manufactured problem on `resolutions` with `dt = dt_per_h2·h²`.
pub fn convergence_study(cfg: &RunConfig, resolutions: &[usize], dt_per_h2: f64) -> Result<Vec<ConvergenceRow>> {
    let (prob, exact) = manufactured(cfg)?;
    resolutions
        .iter()
        .map(|&res| {
            let g = build_grid(&prob.domain, res)?;
            let dt = dt_per_h2 * g.h * g.h;
            let steps = (prob.t_end / dt).round() as usize;
            let sched = TimeSchedule {
                dt: prob.t_end / steps as f64,
                steps,
                stride: steps.max(1),
            };
            let fs = solve_flow(&g, &prob, &sched, &cfg.newton())?;
            Ok(ConvergenceRow {
                resolution: res,
                h: g.h,
                dt: sched.dt,
                error: max_interior_error(&g, &fs, exact.as_ref()),
            })
        })
        .collect()
}

pub fn manufactured_convergence(cfg: &RunConfig) -> Result<Outcome> {
    write_resolved(cfg)?;
    let r0 = cfg.numerics.resolution;
    let res = [r0, 2 * r0 - 1, 4 * r0 - 3];
    let h0 = 2.0 / (r0 - 1) as f64;
    let rows = convergence_study(cfg, &res, cfg.numerics.dt / (h0 * h0))?;
    let table: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.resolution as f64, r.h, r.dt, r.error]).collect();
    write_atomic(
        &out_path(cfg, "convergence.csv"),
        table_csv(&["resolution", "h", "dt", "error"], &table).as_bytes(),
    )?;
    let mut o = Outcome { pass: true, ..Default::default() };
    for w in rows.windows(2) {
        o.pass &= w[0].error >= 3.0 * w[1].error;
    }
    for r in &rows {
        o.push(format!("N = {:4}  h = {:.5}  dt = {:.3e}  error = {:.3e}", r.resolution, r.h, r.dt, r.error));
    }
    Ok(o)
}
