use super::{solve, ProblemData, SolutionPair, SolverConfig, SolverError};
use crate::grid::{GridField, SpatialGrid};
use serde::Serialize;

/// Differences between the solutions at two consecutive viscosities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CauchyDiagnostic {
    pub eps_from: f64,
    pub eps_to: f64,
    /// `max_nodes ‖u^{ε_i} − u^{ε_{i+1}}‖_{m,2}`.
    pub sup_u_difference: f64,
    /// `E Σ_n dt ‖r^{ε_i} − r^{ε_{i+1}}‖²_{m,2}`.
    pub r_difference_integral: f64,
}

#[derive(Debug, Clone)]
pub struct ContinuationReport {
    pub schedule: Vec<f64>,
    pub solutions: Vec<SolutionPair>,
    pub diagnostics: Vec<CauchyDiagnostic>,
    /// Viscosity whose solve failed, with the error; later entries were skipped.
    pub failure: Option<(f64, SolverError)>,
}

impl ContinuationReport {
    /// Whether `sup_u_difference` strictly decreases along the schedule.
    pub fn strictly_decreasing(&self) -> bool {
        self.diagnostics
            .windows(2)
            .all(|w| w[1].sup_u_difference < w[0].sup_u_difference)
    }
}

fn norm_sq(grid: &SpatialGrid, f: &GridField, m: usize) -> Result<f64, SolverError> {
    grid.sobolev_norm_pow(f, m, 2.0)
        .map_err(|e| SolverError::InvalidConfig(e.to_string()))
}

/// Solve along a strictly decreasing viscosity schedule and measure how fast
/// consecutive solutions approach each other in `W^{m,2}`.
pub fn viscosity_continuation(
    problem: &ProblemData,
    config: SolverConfig,
    schedule: &[f64],
    m: usize,
) -> Result<ContinuationReport, SolverError> {
    if schedule.is_empty() {
        return Err(SolverError::InvalidConfig("empty viscosity schedule".into()));
    }
    if schedule.iter().any(|e| !(e.is_finite() && *e > 0.0)) || schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(SolverError::InvalidConfig(format!(
            "viscosity schedule must be positive and strictly decreasing, got {schedule:?}"
        )));
    }
    let mut report = ContinuationReport {
        schedule: schedule.to_vec(),
        solutions: Vec::new(),
        diagnostics: Vec::new(),
        failure: None,
    };
    for &eps in schedule {
        match solve(problem, config.with_viscosity(eps)) {
            Ok(s) => report.solutions.push(s),
            Err(e) => {
                log::warn!("continuation stopped at viscosity {eps}: {e}");
                report.failure = Some((eps, e));
                break;
            }
        }
    }
    let tree = &problem.tree;
    let grid = &problem.grid;
    for (i, pair) in report.solutions.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        let mut sup_u = 0.0f64;
        let mut r_int = 0.0;
        for level in 0..=tree.n_steps() {
            let mut r_level = Vec::with_capacity(tree.level_size(level));
            for node in tree.nodes_at(level) {
                sup_u = sup_u.max(norm_sq(grid, &a.u.get(node).sub(b.u.get(node)), m)?.sqrt());
                let mut acc = 0.0;
                for (ra, rb) in a.r.get(node).iter().zip(b.r.get(node)) {
                    acc += norm_sq(grid, &ra.sub(rb), m)?;
                }
                r_level.push(acc);
            }
            if level < tree.n_steps() {
                r_int += tree.dt() * tree.tree_expectation(level, &r_level)?;
            }
        }
        report.diagnostics.push(CauchyDiagnostic {
            eps_from: schedule[i],
            eps_to: schedule[i + 1],
            sup_u_difference: sup_u,
            r_difference_integral: r_int,
        });
    }
    Ok(report)
}
