//! Closed-form and brute-force references.
//!
//! Both closed-form families are evaluated spectrally with the continuous
//! wavenumbers of the box, independently of the solver's difference
//! operators.

use crate::grid::spectral::PeriodicFft;
use crate::grid::{GridField, SpatialGrid};
use crate::lattice::{LatticeError, NodeId, PathTree, TreeMode};
use crate::solver::{ProblemData, Solver, SolverConfig, SolverError};
use rustfft::num_complex::Complex;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle parameters rejected: {0}")]
    Parameters(String),
    #[error("problem is outside the oracle family: {0}")]
    NotApplicable(String),
    #[error("brute force needs a full tree with at most {limit} steps, got {got}")]
    Budget { got: usize, limit: usize },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Exact `(u, q)` as functions of `(t, W_t)`.
pub trait Oracle: Sync {
    fn u(&self, t: f64, w: &[f64]) -> GridField;
    fn q(&self, t: f64, w: &[f64]) -> Vec<GridField>;
    fn provenance(&self) -> &'static str;
    /// True when `u` and `q` ignore `w`, so one evaluation per level suffices.
    fn path_independent(&self) -> bool {
        false
    }
}

fn heat_propagate(
    fft: &PeriodicFft,
    phi: &GridField,
    a: [[f64; 2]; 2],
    tau: f64,
    derivative_axis: Option<usize>,
) -> GridField {
    let grid = fft.grid();
    let d = grid.dim();
    let m = grid.points_per_dim();
    fft.apply_symbol(phi, |modes| {
        let k = [
            fft.wavenumber(modes[0]),
            if d == 2 { fft.wavenumber(modes[1]) } else { 0.0 },
        ];
        let mut quad = 0.0;
        for i in 0..d {
            for j in 0..d {
                quad += a[i][j] * k[i] * k[j];
            }
        }
        let decay = (-tau * quad).exp();
        match derivative_axis {
            None => Complex::new(decay, 0.0),
            Some(ax) => {
                // The Nyquist mode has no odd real part; its derivative is dropped.
                if modes[ax] == m / 2 {
                    Complex::new(0.0, 0.0)
                } else {
                    Complex::new(0.0, k[ax] * decay)
                }
            }
        }
    })
}

/// Deterministic data, constant `a ⪰ 0`, everything else zero: `q = 0` and
/// `u(t) = exp((T−t) aᵢⱼ∂ᵢ∂ⱼ) φ`.
pub struct HeatOracle {
    fft: PeriodicFft,
    phi: GridField,
    a: [[f64; 2]; 2],
    horizon: f64,
    wiener_dim: usize,
}

impl std::fmt::Debug for HeatOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HeatOracle")
            .field("a", &self.a)
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl HeatOracle {
    pub fn new(
        grid: &SpatialGrid,
        phi: GridField,
        a: [[f64; 2]; 2],
        horizon: f64,
        wiener_dim: usize,
    ) -> Result<Self, OracleError> {
        let d = grid.dim();
        let (lo, _) = crate::coefficients::sym_eigen(a, d);
        if lo < -1e-12 || (d == 2 && a[0][1] != a[1][0]) {
            return Err(OracleError::Parameters(format!(
                "diffusion matrix {a:?} is not symmetric PSD"
            )));
        }
        if !(horizon > 0.0) {
            return Err(OracleError::Parameters(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        Ok(Self {
            fft: PeriodicFft::new(grid),
            phi,
            a,
            horizon,
            wiener_dim,
        })
    }

    /// Build from a problem, checking it belongs to the family.
    pub fn from_problem(problem: &ProblemData) -> Result<Self, OracleError> {
        let cs = &problem.coeffs;
        let dep = cs.dependence().union(problem.terminal.dependence());
        if dep.t || dep.w || dep.v {
            return Err(OracleError::NotApplicable(
                "coefficients and terminal data must be deterministic and time-independent".into(),
            ));
        }
        let zero = cs.b.iter().chain(&cs.nu).all(|f| f.is_zero()) && cs.c.is_zero() && problem.forcing.is_zero();
        if !zero {
            return Err(OracleError::NotApplicable("b, c, ν and f must vanish".into()));
        }
        let grid = &problem.grid;
        let nc = cs
            .sample(grid, 0.0, &vec![0.0; cs.wiener_dim()], 0.0)
            .map_err(SolverError::from)?;
        let a = nc
            .constant_a()
            .ok_or_else(|| OracleError::NotApplicable("a must be constant in x".into()))?;
        if nc.sigma.iter().any(|s| s.spread() != 0.0) {
            return Err(OracleError::NotApplicable("σ must be constant in x".into()));
        }
        let phi = problem.terminal_at(NodeId::new(problem.tree.n_steps(), 0))?;
        Self::new(grid, phi, a, problem.tree.time_grid().horizon(), cs.wiener_dim())
    }
}

impl Oracle for HeatOracle {
    fn u(&self, t: f64, _w: &[f64]) -> GridField {
        heat_propagate(&self.fft, &self.phi, self.a, self.horizon - t, None)
    }

    fn q(&self, _t: f64, _w: &[f64]) -> Vec<GridField> {
        vec![self.fft.grid().zeros(); self.wiener_dim]
    }

    fn provenance(&self) -> &'static str {
        "heat: deterministic data, q = 0, backward heat semigroup"
    }

    fn path_independent(&self) -> bool {
        true
    }
}

/// `d = d' = 1`, constants `a ≥ ½σ²`, `φ = g(x) W_T`:
/// `u = W_t h + σ (T−t) h_x`, `q = h`, with `h(t) = exp((T−t) a ∂²) g`.
pub struct WienerLinearOracle {
    fft: PeriodicFft,
    g: GridField,
    a: f64,
    sigma: f64,
    horizon: f64,
}

impl WienerLinearOracle {
    pub fn new(grid: &SpatialGrid, g: GridField, a: f64, sigma: f64, horizon: f64) -> Result<Self, OracleError> {
        if grid.dim() != 1 {
            return Err(OracleError::Parameters(
                "the Wiener-linear family is one-dimensional".into(),
            ));
        }
        if a < 0.5 * sigma * sigma - 1e-14 {
            return Err(OracleError::Parameters(format!(
                "a = {a} is below σ²/2 = {}",
                0.5 * sigma * sigma
            )));
        }
        if !(horizon > 0.0) {
            return Err(OracleError::Parameters(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        Ok(Self {
            fft: PeriodicFft::new(grid),
            g,
            a,
            sigma,
            horizon,
        })
    }

    pub fn h(&self, t: f64) -> GridField {
        heat_propagate(&self.fft, &self.g, [[self.a, 0.0], [0.0, 0.0]], self.horizon - t, None)
    }

    /// The `W`-free part `m = σ (T−t) h_x`.
    pub fn m(&self, t: f64) -> GridField {
        let tau = self.horizon - t;
        heat_propagate(&self.fft, &self.g, [[self.a, 0.0], [0.0, 0.0]], tau, Some(0)).scale(self.sigma * tau)
    }
}

impl Oracle for WienerLinearOracle {
    fn u(&self, t: f64, w: &[f64]) -> GridField {
        let mut u = self.m(t);
        u.axpy(w[0], &self.h(t));
        u
    }

    fn q(&self, t: f64, _w: &[f64]) -> Vec<GridField> {
        vec![self.h(t)]
    }

    fn provenance(&self) -> &'static str {
        "wiener-linear: u = W h + σ(T−t) h_x, q = h, h backward heat flow of g"
    }
}

/// Errors of a solution against an oracle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleErrors {
    /// `max_nodes ‖u − u_exact‖_{0,2}`.
    pub u_l2_sup: f64,
    /// `max_nodes ‖q − q_exact‖_{0,2}` over non-leaf nodes.
    pub q_l2_sup: f64,
    /// `max_levels (E‖u − u_exact‖²_{0,2})^{1/2}`, weighted by node probability.
    pub u_l2_mean: f64,
    /// Same for `q` over non-leaf levels.
    pub q_l2_mean: f64,
}

pub fn compare(problem: &ProblemData, solution: &crate::solver::SolutionPair, oracle: &dyn Oracle) -> OracleErrors {
    let tree = &problem.tree;
    let grid = &problem.grid;
    let mut out = OracleErrors {
        u_l2_sup: 0.0,
        q_l2_sup: 0.0,
        u_l2_mean: 0.0,
        q_l2_mean: 0.0,
    };
    for level in 0..=tree.n_steps() {
        let t = tree.time_grid().time(level);
        let (mut u_mean, mut q_mean) = (0.0, 0.0);
        let shared = oracle.path_independent().then(|| {
            let w = vec![0.0; tree.wiener_dim()];
            (oracle.u(t, &w), oracle.q(t, &w))
        });
        let probs = tree.level_probabilities(level);
        for node in tree.nodes_at(level) {
            let w = tree.wiener(node);
            let prob = probs[node.index];
            let exact_u = match &shared {
                Some((u, _)) => u.clone(),
                None => oracle.u(t, &w),
            };
            let du = solution.u.get(node).sub(&exact_u);
            let su = grid.inner_product(&du, &du);
            u_mean += prob * su;
            out.u_l2_sup = out.u_l2_sup.max(su.sqrt());
            if level < tree.n_steps() {
                let q = solution.q.get(node);
                let qe = match &shared {
                    Some((_, q)) => q.clone(),
                    None => oracle.q(t, &w),
                };
                let sq: f64 = q
                    .iter()
                    .zip(&qe)
                    .map(|(a, b)| {
                        let d = a.sub(b);
                        grid.inner_product(&d, &d)
                    })
                    .sum();
                q_mean += prob * sq;
                out.q_l2_sup = out.q_l2_sup.max(sq.sqrt());
            }
        }
        out.u_l2_mean = out.u_l2_mean.max(u_mean.sqrt());
        out.q_l2_mean = out.q_l2_mean.max(q_mean.sqrt());
    }
    out
}

/// Substitution check: feed the oracle's `u` at the children into one
/// solver step and compare with the oracle at the node. Returns
/// `max_nodes ‖step − u_exact‖_{0,2} / dt`, a local truncation error that
/// scales like `dt + h²`.
pub fn step_residual(problem: &ProblemData, config: SolverConfig, oracle: &dyn Oracle) -> Result<f64, OracleError> {
    let solver = Solver::new(problem, config)?;
    let tree = &problem.tree;
    let grid = &problem.grid;
    let mut worst = 0.0f64;
    for level in 0..tree.n_steps() {
        for node in tree.nodes_at(level) {
            let children: Vec<GridField> = tree
                .children(node)
                .map(|c| oracle.u(tree.time_of(c), &tree.wiener(c)))
                .collect();
            let refs: Vec<&GridField> = children.iter().collect();
            let step = solver.backward_step(node, &refs)?;
            let diff = step.u.sub(&oracle.u(tree.time_of(node), &tree.wiener(node)));
            worst = worst.max(grid.inner_product(&diff, &diff).sqrt() / tree.dt());
        }
    }
    Ok(worst)
}

/// Deepest full tree brute force will enumerate.
pub const BRUTE_FORCE_MAX_STEPS: usize = 8;

/// `E[X | node]` for every node, where `X` is given on the leaves, by direct
/// enumeration of each node's descendant leaves.
pub fn brute_force_leaf_expectation(tree: &PathTree, leaf_values: &[f64]) -> Result<Vec<Vec<f64>>, OracleError> {
    if tree.mode() != TreeMode::Full || tree.n_steps() > BRUTE_FORCE_MAX_STEPS {
        return Err(OracleError::Budget {
            got: tree.n_steps(),
            limit: BRUTE_FORCE_MAX_STEPS,
        });
    }
    let n = tree.n_steps();
    if leaf_values.len() != tree.level_size(n) {
        return Err(LatticeError::IncompleteField {
            level: n,
            index: 0,
            expected: tree.level_size(n),
            got: leaf_values.len(),
        }
        .into());
    }
    let b = tree.branching();
    Ok((0..=n)
        .map(|level| {
            let span = b.pow((n - level) as u32);
            (0..tree.level_size(level))
                .map(|index| {
                    let leaves = &leaf_values[index * span..(index + 1) * span];
                    // Every descendant leaf is equally likely given the node.
                    leaves.iter().sum::<f64>() / span as f64
                })
                .collect()
        })
        .collect())
}

/// `E[F(path)]` by enumerating every branch sequence of a full tree.
pub fn brute_force_path_expectation(tree: &PathTree, f: impl Fn(&[usize]) -> f64) -> Result<f64, OracleError> {
    if tree.mode() != TreeMode::Full || tree.n_steps() > BRUTE_FORCE_MAX_STEPS {
        return Err(OracleError::Budget {
            got: tree.n_steps(),
            limit: BRUTE_FORCE_MAX_STEPS,
        });
    }
    let n = tree.n_steps();
    let b = tree.branching();
    let count = b.pow(n as u32);
    let mut path = vec![0usize; n];
    let mut total = 0.0;
    for code in 0..count {
        let mut c = code;
        for slot in path.iter_mut().rev() {
            *slot = c % b;
            c /= b;
        }
        total += f(&path);
    }
    Ok(total / count as f64)
}
