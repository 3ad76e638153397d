//! Backward induction over the path tree for
//!
//! `du = −[a^{ij}u_{x^i x^j} + b^i u_{x^i} + cu + σ^{ik} q^k_{x^i} + ν^k q^k + f] dt + q^k dW^k`,
//! `u(T) = φ`,
//!
//! with optional `εΔ` viscosity.
//!
//! One step at node `n` with children `c`: `ū = E[u_c | n]`,
//! `q^k = E[u_c ΔW^k | n] / dt`, then
//! `u_n = ū + dt [ (εΔ + 𝒜) u* + b·D ū + c ū + 𝒮q + ν·q + f ]`
//! where `u* = ū` (explicit) or `u* = u_n` (semi-implicit, one periodic
//! linear solve). `r^k = q^k + σ^{ik} D_i u_n`.

mod continuation;
pub mod operators;
pub mod output;
mod residual;

pub use continuation::{viscosity_continuation, CauchyDiagnostic, ContinuationReport};
pub use operators::{div_a_grad, NodeOperators};
pub use residual::{bump_test_functions, weak_form_residual, WeakFormReport};

use crate::coefficients::{CoefficientError, CoefficientSet, ScalarFn, PSD_TOLERANCE};
use crate::grid::spectral::PeriodicFft;
use crate::grid::{GridField, SpatialGrid};
use crate::lattice::{AdaptedField, LatticeError, NodeId, PathTree, TreeMode};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Coefficients(#[from] CoefficientError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("explicit step dt = {dt} exceeds the stability bound {bound:.6e} at node {node}; use dt <= {suggested_dt:.6e} or the semi-implicit scheme")]
    Cfl {
        dt: f64,
        bound: f64,
        suggested_dt: f64,
        node: NodeId,
    },
    #[error(
        "degenerate parabolicity fails at node {node}: min eigenvalue of 2a - σσ* is {min_eigenvalue:.3e} at x = {x:?}"
    )]
    NotParabolic {
        min_eigenvalue: f64,
        x: Vec<f64>,
        node: NodeId,
    },
    #[error("implicit operator could not be inverted: {diagnostics}")]
    SingularOperator { diagnostics: String },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeStepping {
    Explicit,
    SemiImplicit,
}

impl std::str::FromStr for TimeStepping {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "explicit" => Ok(TimeStepping::Explicit),
            "semi_implicit" | "semi-implicit" => Ok(TimeStepping::SemiImplicit),
            other => Err(format!("unknown time stepping '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub viscosity: f64,
    pub stepping: TimeStepping,
    /// 0: `r` from the predictor; 1: `r` from the stepped `u`; each further
    /// iteration re-applies the first- and zeroth-order terms to the updated `u`.
    pub corrector_iterations: usize,
    pub cfl_safety: f64,
    /// Run explicit steps above the stability bound anyway.
    pub cfl_override: bool,
    /// Refuse coefficients with `2a − σσ*` not positive semidefinite.
    pub require_parabolicity: bool,
    pub linear_tolerance: f64,
    pub linear_max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            viscosity: 0.0,
            stepping: TimeStepping::SemiImplicit,
            corrector_iterations: 1,
            cfl_safety: 0.9,
            cfl_override: false,
            require_parabolicity: true,
            linear_tolerance: 1e-13,
            linear_max_iterations: 500,
        }
    }
}

impl SolverConfig {
    pub fn explicit() -> Self {
        Self {
            stepping: TimeStepping::Explicit,
            ..Self::default()
        }
    }

    pub fn semi_implicit() -> Self {
        Self::default()
    }

    pub fn with_viscosity(self, viscosity: f64) -> Self {
        Self { viscosity, ..self }
    }

    fn validate(&self) -> Result<(), SolverError> {
        if !(self.viscosity.is_finite() && self.viscosity >= 0.0) {
            return Err(SolverError::InvalidConfig(format!(
                "viscosity must be >= 0, got {}",
                self.viscosity
            )));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(SolverError::InvalidConfig(format!(
                "cfl_safety must lie in (0, 1], got {}",
                self.cfl_safety
            )));
        }
        Ok(())
    }
}

/// Data of one backward problem.
#[derive(Debug, Clone)]
pub struct ProblemData {
    pub grid: SpatialGrid,
    pub tree: PathTree,
    pub coeffs: CoefficientSet,
    /// `f(t, x, w, v)`.
    pub forcing: ScalarFn,
    /// `φ(x, w)` evaluated at the leaves with `t = T`.
    pub terminal: ScalarFn,
    /// Control value `v` per node, passed to every sampler.
    pub control: Option<AdaptedField<f64>>,
}

impl ProblemData {
    pub fn new(grid: SpatialGrid, tree: PathTree, coeffs: CoefficientSet) -> Self {
        Self {
            grid,
            tree,
            coeffs,
            forcing: ScalarFn::default(),
            terminal: ScalarFn::default(),
            control: None,
        }
    }

    pub fn with_terminal(mut self, terminal: impl Into<ScalarFn>) -> Self {
        self.terminal = terminal.into();
        self
    }

    pub fn with_forcing(mut self, forcing: impl Into<ScalarFn>) -> Self {
        self.forcing = forcing.into();
        self
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        self.coeffs.validate_shape()?;
        if self.coeffs.dim() != self.grid.dim() {
            return Err(SolverError::Shape(format!(
                "coefficients are {}-dimensional but the grid is {}-dimensional",
                self.coeffs.dim(),
                self.grid.dim()
            )));
        }
        if self.coeffs.wiener_dim() != self.tree.wiener_dim() {
            return Err(SolverError::Shape(format!(
                "coefficients expect d' = {} but the tree has d' = {}",
                self.coeffs.wiener_dim(),
                self.tree.wiener_dim()
            )));
        }
        if let Some(c) = &self.control {
            for level in 0..self.tree.n_steps() {
                if c.levels.get(level).map_or(0, |l| l.len()) != self.tree.level_size(level) {
                    return Err(SolverError::Shape(format!("control values missing on level {level}")));
                }
            }
        }
        Ok(())
    }

    /// Tree modes this problem can be solved in. Every sampler sees the
    /// Wiener path only through the current state `W_n` and controls are
    /// stored per node, so the recombining mode is admissible whenever
    /// `d' = 1`.
    pub fn admissible_modes(&self) -> Vec<TreeMode> {
        let mut modes = vec![TreeMode::Full];
        if self.tree.wiener_dim() == 1 {
            modes.push(TreeMode::Recombining);
        }
        modes
    }

    pub fn control_at(&self, node: NodeId) -> f64 {
        match &self.control {
            Some(c) if node.level < c.levels.len() && node.index < c.levels[node.level].len() => *c.get(node),
            _ => 0.0,
        }
    }

    pub fn forcing_at(&self, node: NodeId) -> Result<GridField, SolverError> {
        let t = self.tree.time_of(node);
        Ok(self
            .forcing
            .sample(&self.grid, t, &self.tree.wiener(node), self.control_at(node))?)
    }

    pub fn terminal_at(&self, leaf: NodeId) -> Result<GridField, SolverError> {
        Ok(self.terminal.sample(
            &self.grid,
            self.tree.time_grid().horizon(),
            &self.tree.wiener(leaf),
            0.0,
        )?)
    }
}

/// Metadata stored with every solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeMetadata {
    pub dt: f64,
    pub h: f64,
    pub viscosity: f64,
    pub stepping: TimeStepping,
    pub mode: TreeMode,
    pub corrector_iterations: usize,
    pub n_steps: usize,
    pub points_per_dim: usize,
    pub dim: usize,
    pub wiener_dim: usize,
    /// Smallest eigenvalue of `2a − σσ*` met during the sweep.
    pub min_parabolicity: f64,
    /// Tightest explicit stability bound met during the sweep.
    pub cfl_bound: Option<f64>,
    pub max_linear_iterations: usize,
    pub max_linear_residual: f64,
}

/// `(u, q, r)` over the whole tree. `q` and `r` are empty at the leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPair {
    pub u: AdaptedField<GridField>,
    pub q: AdaptedField<Vec<GridField>>,
    pub r: AdaptedField<Vec<GridField>>,
    pub meta: SchemeMetadata,
}

/// Result of one backward step.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStep {
    pub u: GridField,
    pub q: Vec<GridField>,
    pub r: Vec<GridField>,
    pub linear_iterations: usize,
    pub linear_residual: f64,
    pub cfl_bound: Option<f64>,
    pub min_parabolicity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scope {
    Global,
    PerLevel,
    PerNode,
}

/// Backward solver bound to one problem and configuration.
pub struct Solver<'p> {
    problem: &'p ProblemData,
    config: SolverConfig,
    fft: PeriodicFft,
    scope: Scope,
    global: OnceLock<Arc<NodeOperators>>,
    per_level: Mutex<HashMap<usize, Arc<NodeOperators>>>,
}

impl<'p> Solver<'p> {
    pub fn new(problem: &'p ProblemData, config: SolverConfig) -> Result<Self, SolverError> {
        problem.validate()?;
        config.validate()?;
        let dep = problem.coeffs.dependence();
        let node_dependent = dep.w || (dep.v && problem.control.is_some());
        let scope = if node_dependent {
            Scope::PerNode
        } else if dep.t {
            Scope::PerLevel
        } else {
            Scope::Global
        };
        Ok(Self {
            problem,
            config,
            fft: PeriodicFft::new(&problem.grid),
            scope,
            global: OnceLock::new(),
            per_level: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn problem(&self) -> &ProblemData {
        self.problem
    }

    fn build_operators(&self, node: NodeId) -> Result<Arc<NodeOperators>, SolverError> {
        let p = self.problem;
        let nc = p.coeffs.sample_at_node(&p.grid, &p.tree, node, p.control_at(node))?;
        let ops = NodeOperators::new(&p.grid, &nc, self.config.viscosity);
        if self.config.require_parabolicity && ops.min_parabolicity < -PSD_TOLERANCE {
            return Err(SolverError::NotParabolic {
                min_eigenvalue: ops.min_parabolicity,
                x: ops.parabolicity_witness.clone(),
                node,
            });
        }
        Ok(Arc::new(ops))
    }

    /// Operators at a node, shared when the coefficients allow.
    pub fn operators(&self, node: NodeId) -> Result<Arc<NodeOperators>, SolverError> {
        match self.scope {
            Scope::Global => {
                if let Some(op) = self.global.get() {
                    return Ok(op.clone());
                }
                let op = self.build_operators(node)?;
                Ok(self.global.get_or_init(|| op).clone())
            }
            Scope::PerLevel => {
                if let Some(op) = self.per_level.lock().expect("operator cache").get(&node.level) {
                    return Ok(op.clone());
                }
                let op = self.build_operators(node)?;
                Ok(self
                    .per_level
                    .lock()
                    .expect("operator cache")
                    .entry(node.level)
                    .or_insert(op)
                    .clone())
            }
            Scope::PerNode => self.build_operators(node),
        }
    }

    /// Explicit stability bound at these operators, if any applies.
    pub fn cfl_bound(&self, ops: &NodeOperators) -> Option<f64> {
        let g = &self.problem.grid;
        let h = g.spacing();
        let d = g.dim() as f64;
        let s = self.config.cfl_safety;
        let mut bound: Option<f64> = None;
        let diff = self.config.viscosity + ops.max_a_norm;
        if diff > 0.0 {
            bound = Some(s * h * h / (2.0 * d * diff));
        }
        let degenerate = ops.min_parabolicity <= PSD_TOLERANCE;
        if self.config.viscosity == 0.0 && degenerate && ops.max_b_tilde > 0.0 {
            let transport = s * h / ops.max_b_tilde;
            bound = Some(bound.map_or(transport, |b| b.min(transport)));
        }
        bound
    }

    /// One backward step from the children's values (branch order) to `node`.
    pub fn backward_step(&self, node: NodeId, children: &[&GridField]) -> Result<NodeStep, SolverError> {
        let p = self.problem;
        let tree = &p.tree;
        let dt = tree.dt();
        let slices: Vec<&[f64]> = children.iter().map(|c| c.as_slice()).collect();
        for c in &slices {
            if c.len() != p.grid.len() {
                return Err(SolverError::Shape(format!(
                    "child field has {} values, grid has {}",
                    c.len(),
                    p.grid.len()
                )));
            }
        }
        let u_bar = GridField::from_vec(tree.expect_fields(node, &slices)?);
        let q: Vec<GridField> = tree
            .represent_fields(node, &slices)?
            .into_iter()
            .map(GridField::from_vec)
            .collect();
        let ops = self.operators(node)?;
        let cfl_bound = self.cfl_bound(&ops);
        let explicit = self.config.stepping == TimeStepping::Explicit;
        if explicit && !self.config.cfl_override {
            if let Some(bound) = cfl_bound {
                if dt > bound {
                    return Err(SolverError::Cfl {
                        dt,
                        bound,
                        suggested_dt: bound,
                        node,
                    });
                }
            }
        }

        let f = if p.forcing.is_zero() {
            None
        } else {
            Some(p.forcing_at(node)?)
        };
        // Terms that do not change across corrector passes.
        let mut fixed = ops.noise(&q);
        if let Some(f) = &f {
            fixed.add_assign(f);
        }
        if explicit {
            fixed.add_assign(&ops.principal(&u_bar));
        }
        let mut iterations = 0;
        let mut residual: f64 = 0.0;
        let mut step = |lower_of: &GridField| -> Result<GridField, SolverError> {
            let mut rhs = u_bar.clone();
            let mut bracket = fixed.clone();
            bracket.add_assign(&ops.lower(lower_of));
            rhs.axpy(dt, &bracket);
            if explicit {
                Ok(rhs)
            } else {
                let (u, it, res) = ops.solve_implicit(
                    &self.fft,
                    &rhs,
                    dt,
                    self.config.linear_tolerance,
                    self.config.linear_max_iterations,
                )?;
                iterations = iterations.max(it);
                residual = residual.max(res);
                Ok(u)
            }
        };
        let mut u = step(&u_bar)?;
        for _ in 1..self.config.corrector_iterations {
            u = step(&u)?;
        }
        let r = if self.config.corrector_iterations == 0 {
            ops.r_field(&u_bar, &q)
        } else {
            ops.r_field(&u, &q)
        };
        if !u.is_finite() {
            return Err(SolverError::SingularOperator {
                diagnostics: format!("non-finite values at node {node}"),
            });
        }
        Ok(NodeStep {
            u,
            q,
            r,
            linear_iterations: iterations,
            linear_residual: residual,
            cfl_bound,
            min_parabolicity: ops.min_parabolicity,
        })
    }

    /// Full backward sweep from the leaves to the root.
    pub fn solve(&self) -> Result<SolutionPair, SolverError> {
        let p = self.problem;
        let tree = &p.tree;
        let n = tree.n_steps();
        let leaves: Vec<GridField> = tree
            .nodes_at(n)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|leaf| p.terminal_at(leaf))
            .collect::<Result<_, _>>()?;
        let mut u_levels = vec![Vec::new(); n + 1];
        let mut q_levels = vec![Vec::new(); n + 1];
        let mut r_levels = vec![Vec::new(); n + 1];
        q_levels[n] = vec![Vec::new(); leaves.len()];
        r_levels[n] = vec![Vec::new(); leaves.len()];
        u_levels[n] = leaves;
        let mut meta = self.metadata();
        for level in (0..n).rev() {
            let next = &u_levels[level + 1];
            let steps: Vec<NodeStep> = tree
                .nodes_at(level)
                .collect::<Vec<_>>()
                .into_par_iter()
                .map(|node| {
                    let children: Vec<&GridField> = tree.children(node).map(|c| &next[c.index]).collect();
                    self.backward_step(node, &children)
                })
                .collect::<Result<_, _>>()?;
            let mut us = Vec::with_capacity(steps.len());
            let mut qs = Vec::with_capacity(steps.len());
            let mut rs = Vec::with_capacity(steps.len());
            for s in steps {
                meta.min_parabolicity = meta.min_parabolicity.min(s.min_parabolicity);
                if let Some(b) = s.cfl_bound {
                    meta.cfl_bound = Some(meta.cfl_bound.map_or(b, |m: f64| m.min(b)));
                }
                meta.max_linear_iterations = meta.max_linear_iterations.max(s.linear_iterations);
                meta.max_linear_residual = meta.max_linear_residual.max(s.linear_residual);
                us.push(s.u);
                qs.push(s.q);
                rs.push(s.r);
            }
            u_levels[level] = us;
            q_levels[level] = qs;
            r_levels[level] = rs;
        }
        Ok(SolutionPair {
            u: AdaptedField::from_levels(u_levels),
            q: AdaptedField::from_levels(q_levels),
            r: AdaptedField::from_levels(r_levels),
            meta,
        })
    }

    fn metadata(&self) -> SchemeMetadata {
        let p = self.problem;
        SchemeMetadata {
            dt: p.tree.dt(),
            h: p.grid.spacing(),
            viscosity: self.config.viscosity,
            stepping: self.config.stepping,
            mode: p.tree.mode(),
            corrector_iterations: self.config.corrector_iterations,
            n_steps: p.tree.n_steps(),
            points_per_dim: p.grid.points_per_dim(),
            dim: p.grid.dim(),
            wiener_dim: p.tree.wiener_dim(),
            min_parabolicity: f64::INFINITY,
            cfl_bound: None,
            max_linear_iterations: 0,
            max_linear_residual: 0.0,
        }
    }
}

/// Solve `problem` under `config`.
pub fn solve(problem: &ProblemData, config: SolverConfig) -> Result<SolutionPair, SolverError> {
    Solver::new(problem, config)?.solve()
}

impl SolutionPair {
    /// Largest `‖r − q − σ^T ∇u‖` over all non-leaf nodes, with `σ` resampled.
    pub fn r_consistency(&self, problem: &ProblemData, config: SolverConfig) -> Result<f64, SolverError> {
        let solver = Solver::new(problem, config)?;
        let mut worst = 0.0f64;
        for level in 0..problem.tree.n_steps() {
            for node in problem.tree.nodes_at(level) {
                let ops = solver.operators(node)?;
                let u = if config.corrector_iterations == 0 {
                    let children: Vec<&[f64]> = problem.tree.children(node).map(|c| self.u.get(c).as_slice()).collect();
                    GridField::from_vec(problem.tree.expect_fields(node, &children)?)
                } else {
                    self.u.get(node).clone()
                };
                let expected = ops.r_field(&u, self.q.get(node));
                for (r, e) in self.r.get(node).iter().zip(&expected) {
                    worst = worst.max(r.sub(e).max_abs());
                }
            }
        }
        Ok(worst)
    }
}
