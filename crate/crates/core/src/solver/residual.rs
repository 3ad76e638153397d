use super::{ProblemData, SolutionPair, Solver, SolverConfig, SolverError, TimeStepping};
use crate::grid::{GridField, SpatialGrid};
use crate::lattice::NodeId;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakFormReport {
    /// Largest projected residual divided by `dt`.
    pub max_residual: f64,
    pub worst_node: Option<NodeId>,
    pub per_level: Vec<f64>,
    pub tests: usize,
}

/// Smooth bumps `exp(1/(s²−1))`, `s = |x − c| / ρ`, supported inside the box.
pub fn bump_test_functions(grid: &SpatialGrid, count: usize) -> Vec<GridField> {
    let r = grid.half_width();
    let rho = 0.45 * r;
    (0..count)
        .map(|n| {
            // Centres on a fixed low-discrepancy sequence in [−0.45R, 0.45R]^d.
            let frac = |k: f64| ((n as f64 + 1.0) * k).fract() - 0.5;
            let c = [0.9 * r * frac(0.618_033_988_75), 0.9 * r * frac(0.754_877_666_25)];
            let dim = grid.dim();
            grid.sample(|x| {
                let s2 = (0..dim).map(|i| (x[i] - c[i]).powi(2)).sum::<f64>() / (rho * rho);
                if s2 < 1.0 {
                    (1.0 / (s2 - 1.0)).exp()
                } else {
                    0.0
                }
            })
        })
        .collect()
}

/// Discrete weak-form residual in integrated-by-parts form.
///
/// Per child `c` of a node and test `η`:
/// `R_c = ⟨u_n,η⟩ − ⟨u_c,η⟩ − dt·B(η) + Σ_k ⟨q^k,η⟩ ΔW^k_c`, with
/// `B(η) = −⟨a^{ij}D_i u + σ^{jk}q^k, D_jη⟩ + ⟨(b^i − D_j a^{ij})D_i u + cu
/// + (ν^k − D_jσ^{jk})q^k + f, η⟩` (plus `−ε⟨D u, D η⟩`). `R` is projected
/// onto `span{1, ΔW^1..ΔW^{d'}}`, the part a lattice step can represent.
/// Each term is evaluated at the time placement the scheme uses.
pub fn weak_form_residual(
    solution: &SolutionPair,
    problem: &ProblemData,
    config: SolverConfig,
    tests: &[GridField],
) -> Result<WeakFormReport, SolverError> {
    let solver = Solver::new(problem, config)?;
    let tree = &problem.tree;
    let grid = &problem.grid;
    let d = grid.dim();
    let dp = tree.wiener_dim();
    let dt = tree.dt();
    let test_grads: Vec<Vec<GridField>> = tests.iter().map(|eta| grid.gradient(eta)).collect();
    let mut per_level = Vec::with_capacity(tree.n_steps());
    let mut worst = (0.0f64, None);
    for level in 0..tree.n_steps() {
        let results: Vec<(f64, NodeId)> = tree
            .nodes_at(level)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|node| -> Result<(f64, NodeId), SolverError> {
                let ops = solver.operators(node)?;
                let children: Vec<&GridField> = tree.children(node).map(|c| solution.u.get(c)).collect();
                let slices: Vec<&[f64]> = children.iter().map(|c| c.as_slice()).collect();
                let u_bar = GridField::from_vec(tree.expect_fields(node, &slices)?);
                let u_n = solution.u.get(node);
                let q = solution.q.get(node);
                let u_impl = if config.stepping == TimeStepping::SemiImplicit {
                    u_n
                } else {
                    &u_bar
                };
                let u_low = if config.corrector_iterations >= 2 { u_n } else { &u_bar };
                let grad_impl = grid.gradient(u_impl);
                let grad_low = grid.gradient(u_low);
                let f = if problem.forcing.is_zero() {
                    grid.zeros()
                } else {
                    problem.forcing_at(node)?
                };
                // Pointwise pieces paired with η and with D_j η.
                let mut with_eta = f;
                for i in 0..d {
                    for idx in 0..with_eta.len() {
                        with_eta[idx] += ops.b(i)[idx] * grad_low[i][idx] - ops.a_drift(i)[idx] * grad_impl[i][idx];
                    }
                }
                with_eta.add_product(ops.c(), u_low);
                for (k, qk) in q.iter().enumerate() {
                    for idx in 0..with_eta.len() {
                        with_eta[idx] += (ops.nu(k)[idx] - ops.sigma_drift(k)[idx]) * qk[idx];
                    }
                }
                let with_grad: Vec<GridField> = (0..d)
                    .map(|j| {
                        let mut flux = grad_impl[j].scale(ops.viscosity());
                        for i in 0..d {
                            flux.add_product(ops.a(i, j), &grad_impl[i]);
                        }
                        for (k, qk) in q.iter().enumerate() {
                            flux.add_product(ops.sigma(j, k), qk);
                        }
                        flux
                    })
                    .collect();
                let mut node_worst = 0.0f64;
                for (eta, deta) in tests.iter().zip(&test_grads) {
                    let mut bracket = grid.inner_product(&with_eta, eta);
                    for j in 0..d {
                        bracket -= grid.inner_product(&with_grad[j], &deta[j]);
                    }
                    let un_eta = grid.inner_product(u_n, eta);
                    let q_eta: Vec<f64> = q.iter().map(|qk| grid.inner_product(qk, eta)).collect();
                    let p = tree.branch_probability();
                    let mut mean = 0.0;
                    let mut along = vec![0.0; dp];
                    for (b, uc) in children.iter().enumerate() {
                        let dw = tree.increments(b);
                        let mut res = un_eta - grid.inner_product(uc, eta) - dt * bracket;
                        for k in 0..dp {
                            res += q_eta[k] * dw[k];
                        }
                        mean += p * res;
                        for k in 0..dp {
                            along[k] += p * res * dw[k] / dt;
                        }
                    }
                    let norm = (mean * mean + dt * along.iter().map(|v| v * v).sum::<f64>()).sqrt();
                    node_worst = node_worst.max(norm / dt);
                }
                Ok((node_worst, node))
            })
            .collect::<Result<_, _>>()?;
        let level_max = results.iter().fold(0.0f64, |m, r| m.max(r.0));
        for (v, node) in results {
            if worst.1.is_none() || v > worst.0 {
                worst = (v, Some(node));
            }
        }
        per_level.push(level_max);
    }
    Ok(WeakFormReport {
        max_residual: worst.0,
        worst_node: worst.1,
        per_level,
        tests: tests.len(),
    })
}
