//! Experiment configuration: sectioned `key = value` text (TOML) with
//! expression strings, validated before any compute.

use crate::error::CliError;
use bspde_core::coefficients::library::builtin_counterexamples;
use bspde_core::coefficients::{CoefficientSet, ScalarFn};
use bspde_core::control::{AdjointPairing, ControlProblem};
use bspde_core::expr::{parse_in, VarSpace};
use bspde_core::grid::SpatialGrid;
use bspde_core::lattice::{PathTree, TimeGrid, TreeMode};
use bspde_core::random::{seeded_rng, SmoothRandomField};
use bspde_core::solver::{ProblemData, SolverConfig, TimeStepping};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub grid: GridSection,
    pub tree: TreeSection,
    pub problem: ProblemSection,
    #[serde(default)]
    pub energy: EnergySection,
    pub sweep: Option<SweepSection>,
    pub control: Option<ControlSection>,
    pub random_phi: Option<RandomPhiSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub half_width: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    Full,
    Recombining,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSection {
    pub horizon: f64,
    pub n_steps: usize,
    pub wiener_dim: usize,
    pub mode: ModeName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    Degenerate,
    SuperParabolic,
    Symmetry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleName {
    Heat,
    WienerLinear,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    /// `rotation-sum`, `decaying` or `rotation-radius`; supplies `a` and `σ`.
    pub builtin: Option<String>,
    /// Row-major `d × d`.
    pub a: Option<Vec<String>>,
    pub b: Option<Vec<String>>,
    pub c: Option<String>,
    /// Row-major `d × d'`.
    pub sigma: Option<Vec<String>>,
    pub nu: Option<Vec<String>>,
    #[serde(default = "zero_expr")]
    pub terminal: String,
    #[serde(default = "zero_expr")]
    pub forcing: String,
    #[serde(default)]
    pub viscosity: f64,
    #[serde(default = "default_stepping")]
    pub stepping: String,
    #[serde(default = "one")]
    pub corrector_iterations: usize,
    #[serde(default = "default_safety")]
    pub cfl_safety: f64,
    pub smoothness: Option<usize>,
    pub bound: Option<f64>,
    #[serde(default = "default_assert")]
    pub assert: Vec<Condition>,
    #[serde(default = "default_delta_floor")]
    pub delta_floor: f64,
    pub oracle: Option<OracleName>,
    /// Oracle-test failure threshold on the `u` and `q` errors.
    pub oracle_tolerance: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySection {
    #[serde(default = "one")]
    pub m: usize,
    #[serde(default = "default_m1")]
    pub m1: Vec<usize>,
    #[serde(default = "default_p")]
    pub p: Vec<f64>,
}

impl Default for EnergySection {
    fn default() -> Self {
        Self {
            m: 1,
            m1: default_m1(),
            p: default_p(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    Viscosity,
    Exponent,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub kind: SweepKind,
    pub values: Vec<f64>,
    #[serde(default = "one")]
    pub m1: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairingName {
    Predictor,
    Node,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub gamma: Vec<f64>,
    #[serde(default = "zero_expr")]
    pub drift: String,
    #[serde(default)]
    pub noise: Vec<String>,
    #[serde(default = "zero_expr")]
    pub cost: String,
    #[serde(default = "zero_expr")]
    pub terminal_weight: String,
    #[serde(default = "zero_expr")]
    pub initial: String,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance_factor")]
    pub tolerance_factor: f64,
    #[serde(default = "default_pairing")]
    pub pairing: PairingName,
    /// Run the brute-force search when the policy space fits the budget.
    #[serde(default = "yes")]
    pub exhaustive: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomPhiSection {
    #[serde(default = "default_freq")]
    pub max_freq: i32,
    #[serde(default = "yes")]
    pub unit_h1: bool,
    #[serde(default)]
    pub stream: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Json,
    Csv,
    Bin,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            formats: default_formats(),
        }
    }
}

fn zero_expr() -> String {
    "0".into()
}
fn default_stepping() -> String {
    "semi_implicit".into()
}
fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_safety() -> f64 {
    0.9
}
fn default_assert() -> Vec<Condition> {
    vec![Condition::Degenerate]
}
fn default_delta_floor() -> f64 {
    1e-3
}
fn default_m1() -> Vec<usize> {
    vec![1]
}
fn default_p() -> Vec<f64> {
    vec![2.0]
}
fn default_max_iterations() -> usize {
    20
}
fn default_tolerance_factor() -> f64 {
    5.0
}
fn default_pairing() -> PairingName {
    PairingName::Predictor
}
fn default_freq() -> i32 {
    3
}
fn default_directory() -> PathBuf {
    PathBuf::from("out")
}
fn default_formats() -> Vec<Format> {
    vec![Format::Json, Format::Csv]
}

/// A parsed config together with the hash of its source text.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub hash: String,
}

impl LoadedConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::from_text(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(Self {
            config,
            hash: hex::encode(Sha256::digest(text.as_bytes())),
        })
    }

    /// Apply `--seed` and `--out`. A seed override changes the hash, since
    /// it changes the artifacts.
    pub fn with_overrides(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        if let Some(s) = seed {
            self.config.seed = s;
            let mut h = Sha256::new();
            h.update(self.hash.as_bytes());
            h.update(s.to_le_bytes());
            self.hash = hex::encode(h.finalize());
        }
        if let Some(dir) = out {
            self.config.output.directory = dir;
        }
        self
    }
}

impl ExperimentConfig {
    pub fn space(&self) -> VarSpace {
        VarSpace {
            dim: self.grid.dim,
            wiener_dim: self.tree.wiener_dim,
        }
    }

    fn expr(&self, key: &str, src: &str) -> Result<ScalarFn, CliError> {
        parse_in(src, self.space())
            .map(ScalarFn::from)
            .map_err(|e| CliError::Config(format!("{key} = \"{src}\": {e}")))
    }

    fn exprs(&self, key: &str, list: &[String], expected: usize) -> Result<Vec<ScalarFn>, CliError> {
        if list.len() != expected {
            return Err(CliError::Config(format!(
                "{key} needs {expected} entries, got {}",
                list.len()
            )));
        }
        list.iter()
            .enumerate()
            .map(|(i, s)| self.expr(&format!("{key}[{i}]"), s))
            .collect()
    }

    /// Cross-field checks that need no numerical work.
    pub fn validate(&self) -> Result<(), CliError> {
        let (d, dp) = (self.grid.dim, self.tree.wiener_dim);
        if !(1..=2).contains(&d) {
            return Err(CliError::Config(format!("grid.dim must be 1 or 2, got {d}")));
        }
        if dp == 0 {
            return Err(CliError::Config("tree.wiener_dim must be at least 1".into()));
        }
        if self.tree.mode == ModeName::Recombining && dp != 1 {
            return Err(CliError::Config(
                "the recombining tree needs tree.wiener_dim = 1".into(),
            ));
        }
        self.coefficients()?;
        self.expr("problem.terminal", &self.problem.terminal)?;
        self.expr("problem.forcing", &self.problem.forcing)?;
        self.stepping()?;
        if let Some(ctrl) = &self.control {
            if ctrl.gamma.is_empty() {
                return Err(CliError::Config("control.gamma must not be empty".into()));
            }
            self.expr("control.drift", &ctrl.drift)?;
            self.expr("control.cost", &ctrl.cost)?;
            self.expr("control.terminal_weight", &ctrl.terminal_weight)?;
            self.expr("control.initial", &ctrl.initial)?;
            if !ctrl.noise.is_empty() {
                self.exprs("control.noise", &ctrl.noise, dp)?;
            }
        }
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() {
                return Err(CliError::Config("sweep.values must not be empty".into()));
            }
        }
        if self.problem.oracle.is_some() && self.problem.builtin.is_some() {
            return Err(CliError::Config(
                "problem.oracle cannot be combined with problem.builtin".into(),
            ));
        }
        Ok(())
    }

    pub fn stepping(&self) -> Result<TimeStepping, CliError> {
        self.problem
            .stepping
            .parse()
            .map_err(|e: String| CliError::Config(format!("problem.stepping: {e}")))
    }

    pub fn coefficients(&self) -> Result<CoefficientSet, CliError> {
        let (d, dp) = (self.grid.dim, self.tree.wiener_dim);
        let p = &self.problem;
        let mut cs = match &p.builtin {
            Some(name) => {
                let found = builtin_counterexamples()
                    .into_iter()
                    .find(|c| c.name == name)
                    .ok_or_else(|| CliError::Config(format!("unknown problem.builtin '{name}'")))?;
                if d != 2 || dp != 2 {
                    return Err(CliError::Config(format!(
                        "builtin '{name}' needs grid.dim = 2 and tree.wiener_dim = 2"
                    )));
                }
                if p.a.is_some() || p.sigma.is_some() {
                    return Err(CliError::Config("problem.builtin already fixes a and sigma".into()));
                }
                found.coefficients
            }
            None => CoefficientSet::zeros(d, dp),
        };
        if let Some(src) = &p.a {
            cs.a = self.exprs("problem.a", src, d * d)?;
            for i in 0..d {
                for j in (i + 1)..d {
                    if parse_in(&src[i * d + j], self.space()) != parse_in(&src[j * d + i], self.space()) {
                        return Err(CliError::Config(format!(
                            "problem.a must be symmetric: entries ({i},{j}) and ({j},{i}) differ"
                        )));
                    }
                }
            }
        }
        if let Some(b) = &p.b {
            cs.b = self.exprs("problem.b", b, d)?;
        }
        if let Some(c) = &p.c {
            cs.c = self.expr("problem.c", c)?;
        }
        if let Some(s) = &p.sigma {
            cs.sigma = self.exprs("problem.sigma", s, d * dp)?;
        }
        if let Some(nu) = &p.nu {
            cs.nu = self.exprs("problem.nu", nu, dp)?;
        }
        if let Some(m) = p.smoothness {
            cs.smoothness = m;
        }
        cs.bound = p.bound.or(cs.bound);
        Ok(cs)
    }

    pub fn grid(&self) -> Result<SpatialGrid, CliError> {
        SpatialGrid::new(self.grid.dim, self.grid.half_width, self.grid.points)
            .map_err(|e| CliError::Config(format!("grid: {e}")))
    }

    pub fn tree(&self) -> Result<PathTree, CliError> {
        let time =
            TimeGrid::new(self.tree.horizon, self.tree.n_steps).map_err(|e| CliError::Config(format!("tree: {e}")))?;
        let mode = match self.tree.mode {
            ModeName::Full => TreeMode::Full,
            ModeName::Recombining => TreeMode::Recombining,
        };
        PathTree::build(time, self.tree.wiener_dim, mode).map_err(|e| CliError::Config(format!("tree: {e}")))
    }

    pub fn solver_config(&self) -> Result<SolverConfig, CliError> {
        Ok(SolverConfig {
            viscosity: self.problem.viscosity,
            stepping: self.stepping()?,
            corrector_iterations: self.problem.corrector_iterations,
            cfl_safety: self.problem.cfl_safety,
            ..SolverConfig::default()
        })
    }

    /// Terminal condition, replaced by a seeded random field when
    /// `[random_phi]` is present.
    pub fn terminal(&self) -> Result<ScalarFn, CliError> {
        match &self.random_phi {
            Some(rp) => {
                let mut rng = seeded_rng(self.seed, rp.stream);
                let field = SmoothRandomField::generate(
                    &mut rng,
                    self.grid.dim,
                    self.tree.wiener_dim,
                    self.grid.half_width,
                    rp.max_freq,
                    rp.unit_h1,
                );
                Ok(field.into_scalar_fn())
            }
            None => self.expr("problem.terminal", &self.problem.terminal),
        }
    }

    pub fn problem_data(&self) -> Result<ProblemData, CliError> {
        Ok(ProblemData::new(self.grid()?, self.tree()?, self.coefficients()?)
            .with_terminal(self.terminal()?)
            .with_forcing(self.expr("problem.forcing", &self.problem.forcing)?))
    }

    pub fn control_problem(&self) -> Result<(ControlProblem, &ControlSection), CliError> {
        let ctrl = self
            .control
            .as_ref()
            .ok_or_else(|| CliError::Usage("the control command needs a [control] section".into()))?;
        let mut p = ControlProblem::new(self.grid()?, self.tree()?, ctrl.gamma.clone(), self.coefficients()?);
        p.drift_forcing = self.expr("control.drift", &ctrl.drift)?;
        if !ctrl.noise.is_empty() {
            p.noise_forcing = self.exprs("control.noise", &ctrl.noise, self.tree.wiener_dim)?;
        }
        p.cost_density = self.expr("control.cost", &ctrl.cost)?;
        p.terminal_weight = self.expr("control.terminal_weight", &ctrl.terminal_weight)?;
        p.initial = self.expr("control.initial", &ctrl.initial)?;
        p.cfl_safety = self.problem.cfl_safety;
        Ok((p, ctrl))
    }

    pub fn wants(&self, f: Format) -> bool {
        self.output.formats.contains(&f)
    }
}

impl PairingName {
    pub fn pairing(self) -> AdjointPairing {
        match self {
            PairingName::Predictor => AdjointPairing::Predictor,
            PairingName::Node => AdjointPairing::Node,
        }
    }
}
