//! Controlled linear SPDE: forward state, cost, adjoint BSPDE, Hamiltonian,
//! maximum-principle certification and policy iteration.
//!
//! The forward drift `b·∇ξ` is discretized as `Σ D_i(b^i ξ) − (D_i b^i) ξ`
//! and the adjoint coefficients are built from the same difference
//! operators, so the explicit adjoint step is the exact discrete transpose
//! of the forward step. Pairing the Hamiltonian with the conditional mean
//! `ū = E[u_{n+1} | node]` then makes `J` exactly linear in the per-node
//! forcing terms.

use crate::coefficients::{
    check_parabolicity, CoefficientError, CoefficientSet, Dependence, NodeCoefficients, ParabolicityMode, Point,
    SamplePoint, ScalarFn,
};
use crate::grid::{GridField, SpatialGrid};
use crate::lattice::{AdaptedField, LatticeError, NodeId, PathTree};
use crate::solver::{div_a_grad, ProblemData, SolutionPair, SolverConfig, SolverError};
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error(transparent)]
    Coefficients(#[from] CoefficientError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("invalid control problem: {0}")]
    Invalid(String),
    #[error("forward step dt = {dt:.4e} exceeds the explicit stability bound {bound:.4e} at node {node}")]
    Cfl { dt: f64, bound: f64, node: NodeId },
    #[error("degenerate parabolicity fails for v = {v}: min eigenvalue {min_eigenvalue:.3e}")]
    NotParabolic { v: f64, min_eigenvalue: f64 },
    #[error("exhaustive search over {count} policies exceeds the budget {limit}")]
    Budget { count: f64, limit: usize },
}

/// Data of a finite-control-set problem on a shared grid and tree.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub grid: SpatialGrid,
    pub tree: PathTree,
    /// Control set `Γ` in declared order.
    pub gamma: Vec<f64>,
    /// `a, b, c, σ, ν` as functions of `(t, x, w, v)`.
    pub coeffs: CoefficientSet,
    /// Drift forcing `F`.
    pub drift_forcing: ScalarFn,
    /// Noise forcing `G^k`.
    pub noise_forcing: Vec<ScalarFn>,
    /// Running cost density `f`.
    pub cost_density: ScalarFn,
    /// Terminal weight `φ`.
    pub terminal_weight: ScalarFn,
    /// Initial state `ξ_0`.
    pub initial: ScalarFn,
    /// Stability safety factor of the explicit forward scheme.
    pub cfl_safety: f64,
}

impl ControlProblem {
    pub fn new(grid: SpatialGrid, tree: PathTree, gamma: Vec<f64>, coeffs: CoefficientSet) -> Self {
        let dp = tree.wiener_dim();
        Self {
            grid,
            tree,
            gamma,
            coeffs,
            drift_forcing: ScalarFn::default(),
            noise_forcing: vec![ScalarFn::default(); dp],
            cost_density: ScalarFn::default(),
            terminal_weight: ScalarFn::default(),
            initial: ScalarFn::default(),
            cfl_safety: 0.9,
        }
    }

    /// Shapes, a non-empty finite `Γ`, and degenerate parabolicity for every
    /// `v ∈ Γ` on a sample of nodes.
    pub fn validate(&self) -> Result<(), ControlError> {
        self.coeffs.validate_shape()?;
        if self.coeffs.dim() != self.grid.dim() || self.coeffs.wiener_dim() != self.tree.wiener_dim() {
            return Err(ControlError::Invalid(
                "coefficient, grid and tree dimensions disagree".into(),
            ));
        }
        if self.noise_forcing.len() != self.tree.wiener_dim() {
            return Err(ControlError::Invalid(format!(
                "{} noise forcings for d' = {}",
                self.noise_forcing.len(),
                self.tree.wiener_dim()
            )));
        }
        if self.gamma.is_empty() || self.gamma.iter().any(|v| !v.is_finite()) {
            return Err(ControlError::Invalid(format!(
                "control set must be non-empty and finite, got {:?}",
                self.gamma
            )));
        }
        for &v in &self.gamma {
            let samples = SamplePoint::from_tree(&self.tree, 8, v);
            let rep = check_parabolicity(&self.coeffs, &self.grid, &samples, ParabolicityMode::Degenerate)?;
            if !rep.passed {
                return Err(ControlError::NotParabolic {
                    v,
                    min_eigenvalue: rep.min_eigenvalue,
                });
            }
        }
        Ok(())
    }

    fn v_dependence(&self) -> bool {
        self.coeffs.dependence().v
            || self.drift_forcing.dependence().v
            || self.noise_forcing.iter().any(|g| g.dependence().v)
            || self.cost_density.dependence().v
    }
}

/// Control value per non-leaf node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlPolicy {
    pub values: AdaptedField<f64>,
}

impl ControlPolicy {
    pub fn constant(tree: &PathTree, v: f64) -> Self {
        Self {
            values: AdaptedField::from_levels((0..tree.n_steps()).map(|l| vec![v; tree.level_size(l)]).collect()),
        }
    }

    /// Policy from one `Γ` index per non-leaf node in level order.
    pub fn from_indices(tree: &PathTree, gamma: &[f64], indices: &[usize]) -> Self {
        let mut it = indices.iter();
        Self {
            values: AdaptedField::from_levels(
                (0..tree.n_steps())
                    .map(|l| {
                        (0..tree.level_size(l))
                            .map(|_| gamma[*it.next().expect("one index per node")])
                            .collect()
                    })
                    .collect(),
            ),
        }
    }

    pub fn get(&self, node: NodeId) -> f64 {
        *self.values.get(node)
    }

    pub fn set(&mut self, node: NodeId, v: f64) {
        *self.values.get_mut(node) = v;
    }

    pub fn node_count(&self) -> usize {
        self.values.levels.iter().map(|l| l.len()).sum()
    }

    /// `(node, v)` pairs in level order.
    pub fn dump(&self) -> Vec<(NodeId, f64)> {
        self.values
            .levels
            .iter()
            .enumerate()
            .flat_map(|(level, vs)| {
                vs.iter()
                    .enumerate()
                    .map(move |(index, v)| (NodeId::new(level, index), *v))
            })
            .collect()
    }

    fn check(&self, tree: &PathTree) -> Result<(), ControlError> {
        let ok = self.values.n_levels() == tree.n_steps()
            && (0..tree.n_steps()).all(|l| self.values.level(l).len() == tree.level_size(l));
        if ok {
            Ok(())
        } else {
            Err(ControlError::Invalid(
                "policy does not cover every non-leaf node".into(),
            ))
        }
    }
}

/// Adjoint `(u, q)` under a fixed policy.
pub type AdjointPair = SolutionPair;

/// Forward operators and forcings at one node for one control value.
#[derive(Debug, Clone)]
struct NodeData {
    nc: NodeCoefficients,
    /// `Σ_i D_i b^i`.
    div_b: GridField,
    drift: GridField,
    noise: Vec<GridField>,
    cost: GridField,
    max_a_norm: f64,
    max_b: f64,
}

impl NodeData {
    fn build(problem: &ControlProblem, node: NodeId, v: f64) -> Result<Self, ControlError> {
        let grid = &problem.grid;
        let tree = &problem.tree;
        let t = tree.time_of(node);
        let w = tree.wiener(node);
        let nc = problem.coeffs.sample(grid, t, &w, v)?;
        let mut div_b = grid.zeros();
        for (i, b) in nc.b.iter().enumerate() {
            div_b.add_assign(&grid.d1(b, i));
        }
        let max_b = (0..grid.len())
            .map(|idx| nc.b.iter().map(|b| b[idx] * b[idx]).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        Ok(Self {
            max_a_norm: nc.max_a_norm(),
            max_b,
            div_b,
            drift: problem.drift_forcing.sample(grid, t, &w, v)?,
            noise: problem
                .noise_forcing
                .iter()
                .map(|g| g.sample(grid, t, &w, v))
                .collect::<Result<_, _>>()?,
            cost: problem.cost_density.sample(grid, t, &w, v)?,
            nc,
        })
    }

    /// `Lξ = Σ D_i(a^{ij} D_j ξ) + Σ [D_i(b^i ξ) − (D_i b^i) ξ] + cξ`.
    fn apply_l(&self, grid: &SpatialGrid, xi: &GridField) -> GridField {
        let mut out = div_a_grad(grid, &self.nc.a, xi);
        for (i, b) in self.nc.b.iter().enumerate() {
            out.add_assign(&grid.d1(&b.mul(xi), i));
        }
        out.axpy(-1.0, &self.div_b.mul(xi));
        out.add_product(&self.nc.c, xi);
        out
    }

    /// `M^k ξ = σ^{ik} D_i ξ + ν^k ξ`.
    fn apply_m(&self, grid: &SpatialGrid, xi: &GridField, k: usize) -> GridField {
        let mut out = self.nc.nu[k].mul(xi);
        for i in 0..grid.dim() {
            out.add_product(self.nc.sigma(i, k), &grid.d1(xi, i));
        }
        out
    }

    fn cfl_bound(&self, grid: &SpatialGrid, safety: f64) -> Option<f64> {
        let h = grid.spacing();
        let mut bound = None;
        if self.max_a_norm > 0.0 {
            bound = Some(safety * h * h / (2.0 * grid.dim() as f64 * self.max_a_norm));
        }
        if self.max_b > 0.0 {
            let t = safety * h / self.max_b;
            bound = Some(bound.map_or(t, |b: f64| b.min(t)));
        }
        bound
    }
}

fn forward_with(
    problem: &ControlProblem,
    policy: &ControlPolicy,
    data: impl Fn(NodeId, f64) -> Result<Arc<NodeData>, ControlError> + Sync,
) -> Result<AdaptedField<GridField>, ControlError> {
    let tree = &problem.tree;
    let grid = &problem.grid;
    let dt = tree.dt();
    let dp = tree.wiener_dim();
    let p_branch = tree.branch_probability();
    let xi0 = problem.initial.sample(grid, 0.0, &vec![0.0; dp], 0.0)?;
    // Unnormalized conditional means `Z = P(node) E[ξ | node]`.
    let mut z_levels: Vec<Vec<GridField>> = vec![vec![xi0]];
    for level in 0..tree.n_steps() {
        let parents: Vec<NodeId> = tree.nodes_at(level).collect();
        let z = &z_levels[level];
        let probs = tree.level_probabilities(level);
        let parts: Vec<(GridField, Vec<GridField>)> = parents
            .par_iter()
            .map(|&node| -> Result<_, ControlError> {
                let nd = data(node, policy.get(node))?;
                if let Some(bound) = nd.cfl_bound(grid, problem.cfl_safety) {
                    if dt > bound {
                        return Err(ControlError::Cfl { dt, bound, node });
                    }
                }
                let zn = &z[node.index];
                let prob = probs[node.index];
                let mut base = zn.clone();
                let mut lz = nd.apply_l(grid, zn);
                lz.axpy(prob, &nd.drift);
                base.axpy(dt, &lz);
                let noise = (0..dp)
                    .map(|k| {
                        let mut m = nd.apply_m(grid, zn, k);
                        m.axpy(prob, &nd.noise[k]);
                        m
                    })
                    .collect();
                Ok((base, noise))
            })
            .collect::<Result<_, _>>()?;
        let mut next = vec![grid.zeros(); tree.level_size(level + 1)];
        for (node, (base, noise)) in parents.iter().zip(&parts) {
            for b in 0..tree.branching() {
                let child = tree.child(*node, b);
                let slot = &mut next[child.index];
                slot.axpy(p_branch, base);
                for (k, m) in noise.iter().enumerate() {
                    slot.axpy(p_branch * tree.increment(b, k), m);
                }
            }
        }
        z_levels.push(next);
    }
    let levels = z_levels
        .into_iter()
        .enumerate()
        .map(|(level, zs)| {
            let probs = tree.level_probabilities(level);
            zs.into_iter().zip(probs).map(|(z, p)| z.scale(1.0 / p)).collect()
        })
        .collect();
    Ok(AdaptedField::from_levels(levels))
}

/// Explicit Euler–Maruyama forward sweep. In full mode every node holds the
/// pathwise state; in recombining mode it holds `E[ξ | node]`, which is all
/// the cost, Hamiltonian and duality pairings need.
pub fn solve_forward(
    problem: &ControlProblem,
    policy: &ControlPolicy,
) -> Result<AdaptedField<GridField>, ControlError> {
    policy.check(&problem.tree)?;
    forward_with(problem, policy, |node, v| {
        Ok(Arc::new(NodeData::build(problem, node, v)?))
    })
}

fn cost_with(
    problem: &ControlProblem,
    policy: &ControlPolicy,
    xi: &AdaptedField<GridField>,
    data: impl Fn(NodeId, f64) -> Result<Arc<NodeData>, ControlError>,
    terminal: &[GridField],
) -> Result<f64, ControlError> {
    let tree = &problem.tree;
    let grid = &problem.grid;
    let n = tree.n_steps();
    let mut j = 0.0;
    for level in 0..n {
        let vals: Vec<f64> = tree
            .nodes_at(level)
            .map(|node| Ok(grid.inner_product(&data(node, policy.get(node))?.cost, xi.get(node))))
            .collect::<Result<_, ControlError>>()?;
        j += tree.dt() * tree.tree_expectation(level, &vals)?;
    }
    let vals: Vec<f64> = tree
        .nodes_at(n)
        .map(|node| grid.inner_product(&terminal[node.index], xi.get(node)))
        .collect();
    Ok(j + tree.tree_expectation(n, &vals)?)
}

fn terminal_fields(problem: &ControlProblem) -> Result<Vec<GridField>, ControlError> {
    let tree = &problem.tree;
    let n = tree.n_steps();
    let t = tree.time_grid().horizon();
    tree.nodes_at(n)
        .map(|leaf| {
            Ok(problem
                .terminal_weight
                .sample(&problem.grid, t, &tree.wiener(leaf), 0.0)?)
        })
        .collect()
}

/// `J = Σ_{n<N} dt E⟨f(t_n, v_n), ξ_n⟩ + E⟨φ, ξ_N⟩`.
pub fn cost(
    problem: &ControlProblem,
    policy: &ControlPolicy,
    xi: &AdaptedField<GridField>,
) -> Result<f64, ControlError> {
    policy.check(&problem.tree)?;
    let terminal = terminal_fields(problem)?;
    cost_with(
        problem,
        policy,
        xi,
        |node, v| Ok(Arc::new(NodeData::build(problem, node, v)?)),
        &terminal,
    )
}

fn wrap(x: f64, r: f64) -> f64 {
    (x + r).rem_euclid(2.0 * r) - r
}

/// The grid's central difference of `f` along `axis`, as a pointwise
/// function on the periodic box. Exact at grid points.
fn discrete_partial(f: &ScalarFn, axis: usize, grid: &SpatialGrid) -> ScalarFn {
    let deps = f.dependence();
    if !deps.x {
        return ScalarFn::Const(0.0);
    }
    let f = f.clone();
    let h = grid.spacing();
    let r = grid.half_width();
    ScalarFn::func(deps, move |p: &Point<'_>| {
        let eval = |shift: f64| {
            let mut x = p.x.to_vec();
            x[axis] = wrap(x[axis] + shift, r);
            f.eval(&Point { x: &x, ..*p }).unwrap_or(f64::NAN)
        };
        (eval(h) - eval(-h)) / (2.0 * h)
    })
}

fn sum_fns(terms: Vec<(f64, ScalarFn)>) -> ScalarFn {
    let terms: Vec<(f64, ScalarFn)> = terms.into_iter().filter(|(_, f)| !f.is_zero()).collect();
    match terms.len() {
        0 => ScalarFn::Const(0.0),
        1 if terms[0].0 == 1.0 => terms[0].1.clone(),
        _ => {
            let deps = terms
                .iter()
                .fold(Dependence::default(), |d, (_, f)| d.union(f.dependence()));
            ScalarFn::func(deps, move |p| {
                terms.iter().map(|(s, f)| s * f.eval(p).unwrap_or(f64::NAN)).sum()
            })
        }
    }
}

/// Backward problem for `(u, q)`:
/// `−du = [∂_i(a^{ij}∂_j u) − ∂_i(b^i u) + cu − ∂_i(σ^{ik}q^k) + ν^k q^k + f] dt − q dW`,
/// `u(T) = φ`, written in the solver's coefficient form with the grid's own
/// difference operators.
pub fn adjoint_problem(problem: &ControlProblem, policy: &ControlPolicy) -> Result<ProblemData, ControlError> {
    policy.check(&problem.tree)?;
    let grid = &problem.grid;
    let d = grid.dim();
    let dp = problem.tree.wiener_dim();
    let cs = &problem.coeffs;
    let mut adj = CoefficientSet::zeros(d, dp);
    adj.a = cs.a.clone();
    adj.sigma = cs.sigma.iter().map(|s| sum_fns(vec![(-1.0, s.clone())])).collect();
    for i in 0..d {
        let mut terms = vec![(-1.0, cs.b[i].clone())];
        for j in 0..d {
            terms.push((1.0, discrete_partial(&cs.a[i * d + j], j, grid)));
        }
        adj.b[i] = sum_fns(terms);
    }
    let mut c_terms = vec![(1.0, cs.c.clone())];
    for i in 0..d {
        c_terms.push((-1.0, discrete_partial(&cs.b[i], i, grid)));
    }
    adj.c = sum_fns(c_terms);
    for k in 0..dp {
        let mut terms = vec![(1.0, cs.nu[k].clone())];
        for i in 0..d {
            terms.push((-1.0, discrete_partial(&cs.sigma[i * dp + k], i, grid)));
        }
        adj.nu[k] = sum_fns(terms);
    }
    adj.smoothness = cs.smoothness.saturating_sub(1);
    adj.bound = cs.bound;
    let mut pd = ProblemData::new(grid.clone(), problem.tree.clone(), adj)
        .with_forcing(problem.cost_density.clone())
        .with_terminal(problem.terminal_weight.clone());
    pd.control = Some(policy.values.clone());
    Ok(pd)
}

pub fn solve_adjoint(
    problem: &ControlProblem,
    policy: &ControlPolicy,
    config: SolverConfig,
) -> Result<AdjointPair, ControlError> {
    let pd = adjoint_problem(problem, policy)?;
    Ok(crate::solver::solve(&pd, config)?)
}

/// Which adjoint value the Hamiltonian pairs with at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjointPairing {
    /// `ū = E[u_{n+1} | node]`, the value the explicit step acts on.
    #[default]
    Predictor,
    /// `u_n` at the node itself.
    Node,
}

/// Conditional means `E[u_{n+1} | node]` on every non-leaf node.
pub fn predictor_field(tree: &PathTree, adjoint: &AdjointPair) -> Result<AdaptedField<GridField>, ControlError> {
    let levels = (0..tree.n_steps())
        .map(|level| {
            tree.nodes_at(level)
                .map(|node| {
                    let kids: Vec<&[f64]> = tree.children(node).map(|c| adjoint.u.get(c).as_slice()).collect();
                    Ok(GridField::from_vec(tree.expect_fields(node, &kids)?))
                })
                .collect::<Result<Vec<_>, ControlError>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AdaptedField::from_levels(levels))
}

fn hamiltonian_with(grid: &SpatialGrid, nd: &NodeData, xi: &GridField, u: &GridField, q: &[GridField]) -> f64 {
    let mut h = -grid.inner_product(&nd.apply_l(grid, xi), u) - grid.inner_product(&nd.drift, u);
    for (k, qk) in q.iter().enumerate() {
        h -= grid.inner_product(&nd.apply_m(grid, xi, k), qk) + grid.inner_product(&nd.noise[k], qk);
    }
    h - grid.inner_product(&nd.cost, xi)
}

/// `H = −⟨Lξ, u⟩ − ⟨F, u⟩ − ⟨M^k ξ, q^k⟩ − ⟨G^k, q^k⟩ − ⟨f, ξ⟩` at `node`
/// with every coefficient evaluated at control value `v`.
pub fn hamiltonian(
    problem: &ControlProblem,
    node: NodeId,
    xi: &GridField,
    v: f64,
    u: &GridField,
    q: &[GridField],
) -> Result<f64, ControlError> {
    let nd = NodeData::build(problem, node, v)?;
    Ok(hamiltonian_with(&problem.grid, &nd, xi, u, q))
}

/// Hamiltonian values over `Γ` at every non-leaf node.
fn hamiltonian_table(
    problem: &ControlProblem,
    xi: &AdaptedField<GridField>,
    adjoint: &AdjointPair,
    pairing: AdjointPairing,
) -> Result<Vec<(NodeId, Vec<f64>)>, ControlError> {
    let tree = &problem.tree;
    let predictor = match pairing {
        AdjointPairing::Predictor => Some(predictor_field(tree, adjoint)?),
        AdjointPairing::Node => None,
    };
    let nodes: Vec<NodeId> = (0..tree.n_steps()).flat_map(|l| tree.nodes_at(l)).collect();
    nodes
        .par_iter()
        .map(|&node| {
            let u = match &predictor {
                Some(p) => p.get(node),
                None => adjoint.u.get(node),
            };
            let q = adjoint.q.get(node);
            let hs = problem
                .gamma
                .iter()
                .map(|&v| {
                    Ok(hamiltonian_with(
                        &problem.grid,
                        &NodeData::build(problem, node, v)?,
                        xi.get(node),
                        u,
                        q,
                    ))
                })
                .collect::<Result<Vec<_>, ControlError>>()?;
            Ok((node, hs))
        })
        .collect()
}

/// First index attaining the maximum; later values must exceed the running
/// best by a relative margin to displace it.
fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &h) in values.iter().enumerate().skip(1) {
        if h > values[best] + 1e-13 * values[best].abs().max(1.0) {
            best = i;
        }
    }
    best
}

/// How the maximum-condition tolerance is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tolerance {
    Absolute(f64),
    /// `factor · (dt + h²) · scale`, with `scale = max |H|` over nodes and `Γ`.
    SchemeScaled(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeCheck {
    pub node: NodeId,
    pub chosen: f64,
    pub h_chosen: f64,
    pub h_max: f64,
    /// First maximizer in `Γ`'s declared order.
    pub argmax: f64,
    pub passed: bool,
    /// `H` varies by at most the tolerance across `Γ`, so the check is vacuous.
    pub flat: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxPrincipleReport {
    pub tolerance: f64,
    pub scale: f64,
    pub pairing: AdjointPairing,
    pub pass_fraction: f64,
    pub flat_nodes: usize,
    pub nodes: Vec<NodeCheck>,
}

impl MaxPrincipleReport {
    pub fn failures(&self) -> impl Iterator<Item = &NodeCheck> {
        self.nodes.iter().filter(|n| !n.passed)
    }
}

/// Pass at a node iff `H(policy(node)) ≥ max_{v∈Γ} H(v) − tol`.
pub fn check_max_principle(
    problem: &ControlProblem,
    policy: &ControlPolicy,
    xi: &AdaptedField<GridField>,
    adjoint: &AdjointPair,
    tolerance: Tolerance,
    pairing: AdjointPairing,
) -> Result<MaxPrincipleReport, ControlError> {
    policy.check(&problem.tree)?;
    let table = hamiltonian_table(problem, xi, adjoint, pairing)?;
    let scale = table
        .iter()
        .flat_map(|(_, hs)| hs.iter().map(|h| h.abs()))
        .fold(0.0, f64::max);
    let tol = match tolerance {
        Tolerance::Absolute(t) => t,
        Tolerance::SchemeScaled(factor) => {
            let h = problem.grid.spacing();
            factor * (problem.tree.dt() + h * h) * scale
        }
    };
    let mut nodes = Vec::with_capacity(table.len());
    for (node, hs) in table {
        let chosen = policy.get(node);
        let ci = problem
            .gamma
            .iter()
            .position(|&g| g == chosen)
            .ok_or_else(|| ControlError::Invalid(format!("policy value {chosen} at {node} is not in Γ")))?;
        let best = first_argmax(&hs);
        let lo = hs.iter().cloned().fold(f64::INFINITY, f64::min);
        let passed = hs[ci] >= hs[best] - tol;
        nodes.push(NodeCheck {
            node,
            chosen,
            h_chosen: hs[ci],
            h_max: hs[best],
            argmax: problem.gamma[best],
            passed,
            flat: hs[best] - lo <= tol,
        });
    }
    let passed = nodes.iter().filter(|n| n.passed).count();
    let flat_nodes = nodes.iter().filter(|n| n.flat).count();
    if flat_nodes > 0 {
        log::info!("{flat_nodes} nodes have a Hamiltonian flat across Γ; their checks are vacuous");
    }
    Ok(MaxPrincipleReport {
        tolerance: tol,
        scale,
        pairing,
        pass_fraction: if nodes.is_empty() {
            1.0
        } else {
            passed as f64 / nodes.len() as f64
        },
        flat_nodes,
        nodes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualityReport {
    pub cost: f64,
    /// `E⟨ξ_0, u(0)⟩ + Σ_n dt E[⟨F, u_n⟩ + ⟨G^k, q^k_n⟩]`.
    pub dual: f64,
    pub defect: f64,
}

/// Compare the direct cost with its adjoint representation, pairing with
/// the node values `u_n` as in continuous time.
pub fn duality_check(
    problem: &ControlProblem,
    policy: &ControlPolicy,
    xi: &AdaptedField<GridField>,
    adjoint: &AdjointPair,
) -> Result<DualityReport, ControlError> {
    let cost = cost(problem, policy, xi)?;
    let dual = dual_value(problem, policy, xi, adjoint, AdjointPairing::Node)?;
    Ok(DualityReport {
        cost,
        dual,
        defect: (cost - dual).abs(),
    })
}

/// The adjoint representation of `J` with the chosen pairing. With
/// [`AdjointPairing::Predictor`] and an explicit adjoint it equals the
/// direct cost up to rounding.
pub fn dual_value(
    problem: &ControlProblem,
    policy: &ControlPolicy,
    xi: &AdaptedField<GridField>,
    adjoint: &AdjointPair,
    pairing: AdjointPairing,
) -> Result<f64, ControlError> {
    policy.check(&problem.tree)?;
    let tree = &problem.tree;
    let grid = &problem.grid;
    let predictor = match pairing {
        AdjointPairing::Predictor => Some(predictor_field(tree, adjoint)?),
        AdjointPairing::Node => None,
    };
    let mut total = grid.inner_product(xi.get(NodeId::ROOT), adjoint.u.get(NodeId::ROOT));
    for level in 0..tree.n_steps() {
        let vals: Vec<f64> = tree
            .nodes_at(level)
            .map(|node| {
                let nd = NodeData::build(problem, node, policy.get(node))?;
                let u = predictor.as_ref().map_or(adjoint.u.get(node), |p| p.get(node));
                let mut s = grid.inner_product(&nd.drift, u);
                for (g, q) in nd.noise.iter().zip(adjoint.q.get(node)) {
                    s += grid.inner_product(g, q);
                }
                Ok(s)
            })
            .collect::<Result<_, ControlError>>()?;
        total += tree.dt() * tree.tree_expectation(level, &vals)?;
    }
    Ok(total)
}

/// Pointwise Hamiltonian maximization; ties go to the first value of `Γ`.
pub fn improve_policy(
    problem: &ControlProblem,
    xi: &AdaptedField<GridField>,
    adjoint: &AdjointPair,
    pairing: AdjointPairing,
) -> Result<ControlPolicy, ControlError> {
    let tree = &problem.tree;
    let mut policy = ControlPolicy::constant(tree, problem.gamma[0]);
    for (node, hs) in hamiltonian_table(problem, xi, adjoint, pairing)? {
        policy.set(node, problem.gamma[first_argmax(&hs)]);
    }
    Ok(policy)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub defect: f64,
    pub pass_fraction: f64,
    pub changed_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyIterationReport {
    pub iterations: Vec<IterationRecord>,
    pub policy: ControlPolicy,
    pub cost: f64,
    pub converged: bool,
    pub oscillation: bool,
    pub max_principle: MaxPrincipleReport,
}

/// Alternate forward solve, adjoint solve and pointwise maximization until
/// the policy is a fixed point, a period-2 cycle appears, or `max_iters`
/// runs out. Returns the best-cost iterate.
pub fn policy_iteration(
    problem: &ControlProblem,
    initial: ControlPolicy,
    config: SolverConfig,
    tolerance: Tolerance,
    pairing: AdjointPairing,
    max_iters: usize,
) -> Result<PolicyIterationReport, ControlError> {
    problem.validate()?;
    let mut history: Vec<ControlPolicy> = vec![initial];
    let mut records = Vec::new();
    let mut best: Option<(f64, usize, MaxPrincipleReport)> = None;
    let mut converged = false;
    let mut oscillation = false;
    for it in 0..max_iters.max(1) {
        let policy = history.last().expect("non-empty history").clone();
        let xi = solve_forward(problem, &policy)?;
        let adjoint = solve_adjoint(problem, &policy, config)?;
        let duality = duality_check(problem, &policy, &xi, &adjoint)?;
        let mp = check_max_principle(problem, &policy, &xi, &adjoint, tolerance, pairing)?;
        let next = improve_policy(problem, &xi, &adjoint, pairing)?;
        let changed = policy
            .dump()
            .iter()
            .zip(next.dump())
            .filter(|(a, b)| a.1 != b.1)
            .count();
        records.push(IterationRecord {
            iteration: it,
            cost: duality.cost,
            defect: duality.defect,
            pass_fraction: mp.pass_fraction,
            changed_nodes: changed,
        });
        if best.as_ref().is_none_or(|(j, _, _)| duality.cost < *j) {
            best = Some((duality.cost, history.len() - 1, mp));
        }
        if changed == 0 {
            converged = true;
            break;
        }
        if history.len() >= 2 && history[history.len() - 2] == next {
            log::warn!("policy iteration entered a period-2 cycle; returning the best iterate");
            oscillation = true;
            break;
        }
        history.push(next);
    }
    let (cost, idx, max_principle) = best.expect("at least one iteration");
    Ok(PolicyIterationReport {
        iterations: records,
        policy: history.swap_remove(idx),
        cost,
        converged,
        oscillation,
        max_principle,
    })
}

/// Largest policy count [`exhaustive_optimum`] will enumerate.
pub const EXHAUSTIVE_BUDGET: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExhaustiveResult {
    pub policy: ControlPolicy,
    pub cost: f64,
    pub evaluated: usize,
}

/// Minimize `J` by direct forward solves over every policy in `Γ^{#nodes}`.
/// Ties go to the first policy in lexicographic order of `Γ` indices.
pub fn exhaustive_optimum(problem: &ControlProblem) -> Result<ExhaustiveResult, ControlError> {
    let tree = &problem.tree;
    let nodes: Vec<NodeId> = (0..tree.n_steps()).flat_map(|l| tree.nodes_at(l)).collect();
    let g = problem.gamma.len();
    let count = (g as f64).powi(nodes.len() as i32);
    if count > EXHAUSTIVE_BUDGET as f64 {
        return Err(ControlError::Budget {
            count,
            limit: EXHAUSTIVE_BUDGET,
        });
    }
    let count = count as usize;
    let cache: Vec<Vec<Arc<NodeData>>> = nodes
        .par_iter()
        .map(|&node| {
            problem
                .gamma
                .iter()
                .map(|&v| Ok(Arc::new(NodeData::build(problem, node, v)?)))
                .collect::<Result<Vec<_>, ControlError>>()
        })
        .collect::<Result<_, _>>()?;
    let offsets: Vec<usize> = (0..tree.n_steps())
        .scan(0, |acc, l| {
            let o = *acc;
            *acc += tree.level_size(l);
            Some(o)
        })
        .collect();
    let lookup = |node: NodeId, v: f64| -> Result<Arc<NodeData>, ControlError> {
        let gi = problem
            .gamma
            .iter()
            .position(|&x| x == v)
            .expect("policy values come from Γ");
        Ok(cache[offsets[node.level] + node.index][gi].clone())
    };
    let terminal = terminal_fields(problem)?;
    let decode = |code: usize| -> Vec<usize> {
        let mut c = code;
        let mut idx = vec![0; nodes.len()];
        for slot in idx.iter_mut().rev() {
            *slot = c % g;
            c /= g;
        }
        idx
    };
    let (best_cost, best_code) = (0..count)
        .into_par_iter()
        .map(|code| -> Result<(f64, usize), ControlError> {
            let policy = ControlPolicy::from_indices(tree, &problem.gamma, &decode(code));
            // Forward sweeps here run one per task, so keep them sequential.
            let xi = forward_with(problem, &policy, lookup)?;
            Ok((cost_with(problem, &policy, &xi, lookup, &terminal)?, code))
        })
        .try_reduce(
            || (f64::INFINITY, usize::MAX),
            |a, b| Ok(if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a }),
        )?;
    Ok(ExhaustiveResult {
        policy: ControlPolicy::from_indices(tree, &problem.gamma, &decode(best_code)),
        cost: best_cost,
        evaluated: count,
    })
}

/// Whether any sampler depends on the control value.
pub fn is_controlled(problem: &ControlProblem) -> bool {
    problem.v_dependence()
}
