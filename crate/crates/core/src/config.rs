//! Run configuration in TOML. Unknown keys are rejected, defaults are
//! filled in, and [`RunConfig::to_toml`] echoes the resolved configuration
//! in a form that parses back to an equal value.
//!
//! ```toml
//! task = "track"
//!
//! [problem]
//! domain = "disc"        # or "ball"
//! a = 0.0
//! t_end = 0.65
//! boundary = "0"
//! forcing = "0"
//! smooth = "0"
//! atoms = [{ center = [0.0, 0.0], mass = 1.0 }]
//!
//! [numerics]
//! resolution = 129
//! dt = 1e-3
//! stride = 10
//! k_max = 4
//! ```

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::ExprFn;
use crate::flow::{FlowProblem, InitialData, NewtonParams, TimeSchedule, MAX_DT};
use crate::grid::{DomainSpec, DEFAULT_DELTA};
use crate::initial::{Atom, SingularPotential};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Solve,
    Track,
    Demailly,
    Verify,
    RescaleCompare,
    ManufacturedConvergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Disc,
    Ball,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub center: Vec<f64>,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    pub domain: Domain,
    pub a: f64,
    pub t_end: f64,
    pub boundary: String,
    pub forcing: String,
    /// Smooth part of the initial data; the whole of it when there are no
    /// atoms.
    pub smooth: String,
    pub atoms: Vec<AtomConfig>,
    pub m_cap: f64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            domain: Domain::Disc,
            a: 0.0,
            t_end: 0.65,
            boundary: "0".into(),
            forcing: "0".into(),
            smooth: "0".into(),
            atoms: vec![AtomConfig {
                center: vec![0.0, 0.0],
                mass: 1.0,
            }],
            m_cap: crate::DEFAULT_M_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsConfig {
    pub resolution: usize,
    pub dt: f64,
    /// Steps between snapshots.
    pub stride: usize,
    pub k_max: u32,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub delta: f64,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        let np = NewtonParams::default();
        NumericsConfig {
            resolution: 129,
            dt: 1e-3,
            stride: 10,
            k_max: 4,
            newton_tol: np.tol,
            newton_max_iter: np.max_iter,
            delta: DEFAULT_DELTA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemaillyConfig {
    pub m: f64,
    pub degree: usize,
}

impl Default for DemaillyConfig {
    fn default() -> Self {
        DemaillyConfig { m: 4.0, degree: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: String,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub numerics: NumericsConfig,
    #[serde(default)]
    pub demailly: DemaillyConfig,
}

fn default_out() -> String {
    "out".into()
}

impl RunConfig {
    pub fn new(task: Task) -> Self {
        RunConfig {
            task,
            seed: 0,
            out: default_out(),
            problem: ProblemConfig::default(),
            numerics: NumericsConfig::default(),
            demailly: DemaillyConfig::default(),
        }
    }

    /// Resolved configuration with every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn n(&self) -> usize {
        match self.problem.domain {
            Domain::Disc => 1,
            Domain::Ball => 2,
        }
    }

    pub fn domain_spec(&self) -> DomainSpec {
        match self.problem.domain {
            Domain::Disc => DomainSpec::disc(),
            Domain::Ball => DomainSpec::ball(),
        }
    }

    pub fn newton(&self) -> NewtonParams {
        NewtonParams {
            tol: self.numerics.newton_tol,
            max_iter: self.numerics.newton_max_iter,
            delta: self.numerics.delta,
            ..NewtonParams::default()
        }
    }

    pub fn schedule(&self) -> TimeSchedule {
        TimeSchedule::covering(self.numerics.dt, self.problem.t_end, self.numerics.stride)
    }

    pub fn potential(&self) -> Result<SingularPotential> {
        let mut p = SingularPotential::new(
            self.problem
                .atoms
                .iter()
                .map(|a| Atom::new(&a.center, a.mass))
                .collect(),
            ExprFn::shared(&self.problem.smooth)?,
        );
        p.m_cap = self.problem.m_cap;
        Ok(p)
    }

    pub fn problem(&self) -> Result<FlowProblem> {
        let smooth = ExprFn::shared(&self.problem.smooth)?;
        let initial = if self.problem.atoms.is_empty() {
            InitialData::Smooth(smooth)
        } else {
            InitialData::Singular(self.potential()?)
        };
        Ok(FlowProblem {
            domain: self.domain_spec(),
            a: self.problem.a,
            t_end: self.problem.t_end,
            forcing: ExprFn::shared(&self.problem.forcing)?,
            boundary: ExprFn::shared(&self.problem.boundary)?,
            initial,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        let num = &self.numerics;
        let fail = |what: &str| Err(Error::Constraint(what.to_string()));
        if !(p.a >= 0.0) {
            return fail("A ≥ 0");
        }
        if !(p.t_end > 0.0) {
            return fail("T > 0");
        }
        if !(p.m_cap > 0.0) {
            return fail("M_cap > 0");
        }
        for e in [&p.boundary, &p.forcing, &p.smooth] {
            ExprFn::parse(e)?;
        }
        let dim = 2 * self.n();
        for a in &p.atoms {
            if a.center.len() != dim {
                return fail(&format!("atom centers have {dim} real coordinates"));
            }
            if !(a.mass > 0.0) {
                return fail("atom mass > 0");
            }
            let r2: f64 = a.center.iter().map(|c| c * c).sum();
            if !(r2 < 1.0) {
                return fail("atoms lie inside the domain");
            }
        }
        if num.resolution < 17 {
            return fail("resolution ≥ 17");
        }
        if num.resolution % 2 == 0 {
            return fail("resolution is odd");
        }
        if !(num.dt > 0.0 && num.dt <= MAX_DT) {
            return fail("0 < dt ≤ 0.1");
        }
        if num.stride == 0 {
            return fail("stride ≥ 1");
        }
        if num.k_max < 2 {
            return fail("k_max ≥ 2");
        }
        if !(num.newton_tol > 0.0) || num.newton_max_iter == 0 {
            return fail("Newton tolerance > 0 and at least one iteration");
        }
        if !(num.delta > 0.0) {
            return fail("eigenvalue floor δ > 0");
        }
        if !(self.demailly.m > 0.0) || self.demailly.degree == 0 {
            return fail("Demailly m > 0 and degree ≥ 1");
        }
        Ok(())
    }
}

/// Line and column (both 1-based) of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        if let Some(rest) = message.strip_prefix("unknown field `") {
            let key = rest.split('`').next().unwrap_or(rest);
            return Error::UnknownKey(key.to_string());
        }
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        Error::ConfigSyntax { line, column, message }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &std::path::Path) -> Result<RunConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

/// Problem used by the convergence study: the known exact solution on the
/// configured domain and decay.
pub fn manufactured(cfg: &RunConfig) -> Result<(FlowProblem, Arc<dyn crate::SpaceTimeFn>)> {
    let (mut prob, exact) = crate::flow::manufactured_problem(cfg.n(), cfg.problem.a)?;
    prob.t_end = cfg.problem.t_end;
    Ok((prob, exact))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
task = "track"

[problem]
domain = "disc"
a = 0.0
boundary = "0"
forcing = "0"
atoms = [{ center = [0.0, 0.0], mass = 1.0 }]
"#;

    #[test]
    fn minimal_config() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.task, Task::Track);
        assert_eq!(cfg.numerics, NumericsConfig::default());
        assert_eq!(cfg.n(), 1);
        let prob = cfg.problem().unwrap();
        assert!(matches!(prob.initial, InitialData::Singular(_)));
    }

    #[test]
    fn echo_is_a_fixpoint() {
        let cfg = parse_config(MINIMAL).unwrap();
        let echoed = cfg.to_toml();
        let again = parse_config(&echoed).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_toml(), echoed);
    }

    #[test]
    fn constraint_names_the_invariant() {
        let text = MINIMAL.replace("a = 0.0", "a = -1.0");
        match parse_config(&text) {
            Err(Error::Constraint(m)) => assert!(m.contains("A ≥ 0"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn expression_errors_carry_the_column() {
        let text = MINIMAL.replace("forcing = \"0\"", "forcing = \"log(\"");
        assert!(matches!(parse_config(&text), Err(Error::ExpressionSyntax { column: 5, .. })));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("a = 0.0", "a = 0.0\nbeta = 2");
        match parse_config(&text) {
            Err(Error::UnknownKey(k)) => assert_eq!(k, "beta"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_errors_have_positions() {
        match parse_config("task = \"solve\"\n[numerics]\nresolution = = 3\n") {
            Err(Error::ConfigSyntax { line, column, .. }) => {
                assert_eq!(line, 3);
                assert!(column > 1);
            }
            other => panic!("{other:?}"),
        }
    }
}
