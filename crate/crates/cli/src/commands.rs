//! The five subcommands. Each returns `Ok(report path)` or a `CliError`
//! whose kind fixes the exit code.

use crate::artifacts::{num, write_csv, write_json};
use crate::config::{Condition, ExperimentConfig, Format, LoadedConfig, OracleName, SweepKind};
use crate::error::{failure, CliError};
use bspde_core::coefficients::{
    check_parabolicity, check_symmetry, estimate_bound, oleinik_constant, BoundEstimate, ParabolicityMode,
    ParabolicityReport, SamplePoint, SEAM_BAND,
};
use bspde_core::control::{
    cost, duality_check, exhaustive_optimum, policy_iteration, solve_adjoint, solve_forward, ControlError,
    ControlPolicy, DualityReport, ExhaustiveResult, PolicyIterationReport, Tolerance, EXHAUSTIVE_BUDGET,
};
use bspde_core::energy::{
    constant_sweep, norm_series, verify_main_estimates, EstimateReport, Sweep, SweepTable, Verdict,
};
use bspde_core::grid::GridField;
use bspde_core::lattice::NodeId;
use bspde_core::oracles::{compare, step_residual, HeatOracle, Oracle, OracleErrors, WienerLinearOracle};
use bspde_core::random::{seeded_rng, SmoothRandomField};
use bspde_core::solver::output::write_solution;
use bspde_core::solver::{solve, ProblemData, SolutionPair, SolverError};
use log::info;
use serde::Serialize;
use std::path::PathBuf;

fn solver_error(e: SolverError) -> CliError {
    match e {
        SolverError::Cfl { .. } | SolverError::NotParabolic { .. } => CliError::Violation(e.to_string()),
        other => failure(other),
    }
}

fn control_error(e: ControlError) -> CliError {
    match e {
        ControlError::Cfl { .. } | ControlError::NotParabolic { .. } => CliError::Violation(e.to_string()),
        ControlError::Invalid(m) => CliError::Config(m),
        other => failure(other),
    }
}

fn control_values(cfg: &ExperimentConfig) -> Vec<f64> {
    cfg.control
        .as_ref()
        .map(|c| c.gamma.clone())
        .unwrap_or_else(|| vec![0.0])
}

// ------------------------------------------------------------------ check

#[derive(Debug, Serialize)]
pub struct SymmetrySummary {
    pub status: &'static str,
    pub max_violation: f64,
    pub tolerance: f64,
    pub location: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum OleinikSummary {
    Computed {
        constant: f64,
        location: Option<Vec<f64>>,
        evaluated: usize,
        skipped: usize,
    },
    NotApplicable {
        reason: String,
    },
}

#[derive(Debug, Serialize)]
pub struct BoundSummary {
    pub declared: Option<f64>,
    pub estimate: BoundEstimate,
    pub holds: Option<bool>,
}

#[derive(Debug, Serialize)]
pub struct CheckReport {
    pub asserted: Vec<String>,
    pub degenerate: ParabolicityReport,
    pub super_parabolic: Option<ParabolicityReport>,
    pub symmetry: SymmetrySummary,
    pub oleinik: OleinikSummary,
    pub bound: BoundSummary,
    pub violations: Vec<String>,
}

pub fn check(loaded: &LoadedConfig) -> Result<PathBuf, CliError> {
    let cfg = &loaded.config;
    let grid = cfg.grid()?;
    let tree = cfg.tree()?;
    let coeffs = cfg.coefficients()?;
    let samples: Vec<SamplePoint> = control_values(cfg)
        .into_iter()
        .flat_map(|v| SamplePoint::from_tree(&tree, 8, v))
        .collect();
    let degenerate = check_parabolicity(&coeffs, &grid, &samples, ParabolicityMode::Degenerate).map_err(failure)?;
    let asserts = |c: Condition| cfg.problem.assert.contains(&c);
    let super_parabolic = if asserts(Condition::SuperParabolic) {
        let mode = ParabolicityMode::SuperParabolic {
            delta_floor: cfg.problem.delta_floor,
        };
        Some(check_parabolicity(&coeffs, &grid, &samples, mode).map_err(failure)?)
    } else {
        None
    };
    let mut worst = None;
    for sp in &samples {
        let rep = check_symmetry(&coeffs, &grid, sp).map_err(failure)?;
        if worst
            .as_ref()
            .is_none_or(|w: &bspde_core::coefficients::SymmetryReport| rep.max_violation > w.max_violation)
        {
            worst = Some(rep);
        }
    }
    let worst = worst.ok_or_else(|| failure("no sample points"))?;
    let symmetry = SymmetrySummary {
        status: if worst.satisfied { "holds" } else { "violated" },
        max_violation: worst.max_violation,
        tolerance: worst.tolerance,
        location: worst.location.clone(),
    };
    let first = &samples[0];
    let nc = coeffs.sample(&grid, first.t, &first.w, first.v).map_err(failure)?;
    let derived = nc.derive(&grid);
    let probes: Vec<GridField> = (0..4)
        .map(|k| {
            let mut rng = seeded_rng(cfg.seed, 1000 + k);
            SmoothRandomField::generate(&mut rng, grid.dim(), 0, grid.half_width(), 3, false).sample(&grid, &[])
        })
        .collect();
    let oleinik = match oleinik_constant(&grid, &derived.cap_a, &probes, SEAM_BAND) {
        Ok(r) => OleinikSummary::Computed {
            constant: r.constant,
            location: r.location,
            evaluated: r.evaluated,
            skipped: r.skipped,
        },
        Err(e) => OleinikSummary::NotApplicable { reason: e.to_string() },
    };
    let estimate = estimate_bound(&coeffs, &grid, &samples).map_err(failure)?;
    let bound = BoundSummary {
        declared: coeffs.bound,
        holds: coeffs.bound.map(|k| estimate.estimate <= k),
        estimate,
    };
    let mut violations = Vec::new();
    if asserts(Condition::Degenerate) && !degenerate.passed {
        violations.push(format!(
            "degenerate parabolicity: min eigenvalue {:.3e}",
            degenerate.min_eigenvalue
        ));
    }
    if let Some(sp) = &super_parabolic {
        if !sp.passed {
            violations.push(format!(
                "super-parabolicity: min eigenvalue {:.3e} below floor {:.3e}",
                sp.min_eigenvalue, cfg.problem.delta_floor
            ));
        }
    }
    if asserts(Condition::Symmetry) && !worst.satisfied {
        violations.push(format!(
            "symmetry: violation {:.3e} above {:.3e}",
            worst.max_violation, worst.tolerance
        ));
    }
    if bound.holds == Some(false) {
        violations.push(format!(
            "coefficient bound: estimate {:.3e} above declared {:.3e}",
            bound.estimate.estimate,
            bound.declared.unwrap_or(f64::NAN)
        ));
    }
    let report = CheckReport {
        asserted: cfg.problem.assert.iter().map(|c| format!("{c:?}")).collect(),
        degenerate,
        super_parabolic,
        symmetry,
        oleinik,
        bound,
        violations,
    };
    let path = write_json(&cfg.output.directory, "check.json", &loaded.hash, "check", &report)?;
    println!(
        "degenerate parabolicity: {}",
        if report.degenerate.passed { "holds" } else { "violated" }
    );
    if let Some(sp) = &report.super_parabolic {
        println!("super-parabolicity: {}", if sp.passed { "holds" } else { "violated" });
    }
    println!(
        "symmetry: {} (max {:.3e})",
        report.symmetry.status, report.symmetry.max_violation
    );
    if report.violations.is_empty() {
        Ok(path)
    } else {
        Err(CliError::Violation(report.violations.join("; ")))
    }
}

// ------------------------------------------------------------------ solve

fn build_oracle(cfg: &ExperimentConfig, problem: &ProblemData) -> Result<Option<Box<dyn Oracle>>, CliError> {
    let Some(which) = cfg.problem.oracle else {
        return Ok(None);
    };
    let not_applicable = |m: String| CliError::Config(format!("problem.oracle: {m}"));
    match which {
        OracleName::Heat => Ok(Some(Box::new(
            HeatOracle::from_problem(problem).map_err(|e| not_applicable(e.to_string()))?,
        ))),
        OracleName::WienerLinear => {
            let grid = &problem.grid;
            let cs = &problem.coeffs;
            if grid.dim() != 1 || cs.wiener_dim() != 1 {
                return Err(not_applicable(
                    "the Wiener-linear family needs dim = wiener_dim = 1".into(),
                ));
            }
            let constant = |f: &bspde_core::coefficients::ScalarFn, name: &str| -> Result<f64, CliError> {
                let d = f.dependence();
                if d.t || d.x || d.w || d.v {
                    return Err(not_applicable(format!("{name} must be constant")));
                }
                f.sample(grid, 0.0, &[0.0], 0.0).map(|s| s[0]).map_err(failure)
            };
            let a = constant(&cs.a[0], "a")?;
            let sigma = constant(&cs.sigma[0], "sigma")?;
            // φ = g(x) W_T: recover g at W = 1 and check linearity in W.
            let horizon = problem.tree.time_grid().horizon();
            let at = |w: f64| problem.terminal.sample(grid, horizon, &[w], 0.0).map_err(failure);
            let (g, g0, g2) = (at(1.0)?, at(0.0)?, at(2.0)?);
            if g0.max_abs() > 1e-12 || g2.sub(&g.scale(2.0)).max_abs() > 1e-12 * g.max_abs().max(1.0) {
                return Err(not_applicable("the terminal value must be g(x)*w1".into()));
            }
            let o = WienerLinearOracle::new(grid, g, a, sigma, horizon).map_err(|e| not_applicable(e.to_string()))?;
            Ok(Some(Box::new(o)))
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SolveReport {
    pub scheme: bspde_core::solver::SchemeMetadata,
    pub estimates: Vec<EstimateReport>,
    pub oracle: Option<OracleErrors>,
    pub oracle_provenance: Option<&'static str>,
    pub norms_csv: Option<String>,
    pub manifest: Option<String>,
}

fn run_solve(cfg: &ExperimentConfig) -> Result<(ProblemData, SolutionPair), CliError> {
    let problem = cfg.problem_data()?;
    let config = cfg.solver_config()?;
    info!(
        "solving: {} nodes, {} grid points",
        problem.tree.node_count(),
        problem.grid.len()
    );
    let solution = solve(&problem, config).map_err(solver_error)?;
    Ok((problem, solution))
}

pub fn solve_cmd(loaded: &LoadedConfig) -> Result<PathBuf, CliError> {
    let cfg = &loaded.config;
    let dir = &cfg.output.directory;
    let (problem, solution) = run_solve(cfg)?;
    let mut estimates = Vec::new();
    for &m1 in &cfg.energy.m1 {
        for &p in &cfg.energy.p {
            estimates.push(verify_main_estimates(&solution, &problem, m1, p).map_err(failure)?);
        }
    }
    let oracle = build_oracle(cfg, &problem)?;
    let errors = oracle.as_ref().map(|o| compare(&problem, &solution, o.as_ref()));
    let mut norms_csv = None;
    if cfg.wants(Format::Csv) {
        let series = norm_series(&solution, &problem, cfg.energy.m).map_err(failure)?;
        let rows: Vec<Vec<String>> = series.iter().map(|(t, u, r)| vec![num(*t), num(*u), num(*r)]).collect();
        let p = write_csv(
            dir,
            "norms.csv",
            &loaded.hash,
            &["t", "mean_u_norm", "mean_r_norm"],
            &rows,
        )?;
        norms_csv = Some(
            p.file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
    }
    let mut manifest = None;
    if cfg.wants(Format::Bin) {
        let residuals = serde_json::to_value(&errors).map_err(failure)?;
        let p = write_solution(dir, &problem, &solution, &loaded.hash, &residuals)?;
        manifest = Some(
            p.file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
    }
    let report = SolveReport {
        scheme: solution.meta.clone(),
        estimates,
        oracle_provenance: oracle.as_ref().map(|o| o.provenance()),
        oracle: errors,
        norms_csv,
        manifest,
    };
    let path = write_json(dir, "solve.json", &loaded.hash, "solve", &report)?;
    for e in &report.estimates {
        println!(
            "m1 = {}, p = {}: C_fit quadratic {}, power {}",
            e.metadata.m1,
            e.metadata.p,
            fmt_fit(e.quadratic.c_fit),
            fmt_fit(e.power.c_fit)
        );
    }
    if let Some(o) = &report.oracle {
        println!("oracle L2 error: u {:.3e}, q {:.3e}", o.u_l2_sup, o.q_l2_sup);
    }
    let violated: Vec<String> = report
        .estimates
        .iter()
        .flat_map(|e| [&e.quadratic, &e.power])
        .filter(|r| r.verdict == Verdict::Violation)
        .map(|r| r.name.clone())
        .collect();
    if violated.is_empty() {
        Ok(path)
    } else {
        Err(CliError::Violation(format!(
            "estimates with a vanishing right side: {}",
            violated.join(", ")
        )))
    }
}

fn fmt_fit(c: Option<f64>) -> String {
    c.map(|v| format!("{v:.4}")).unwrap_or_else(|| "none".into())
}

// ------------------------------------------------------------------ sweep

#[derive(Debug, Serialize)]
pub struct SweepReport {
    pub table: SweepTable,
    /// `C_fit` never increases as the swept value decreases.
    pub monotone: bool,
    pub csv: String,
}

pub fn sweep(loaded: &LoadedConfig) -> Result<PathBuf, CliError> {
    let cfg = &loaded.config;
    let section = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Usage("the sweep command needs a [sweep] section".into()))?;
    let problem = cfg.problem_data()?;
    let plan = match section.kind {
        SweepKind::Viscosity => Sweep::Viscosity(section.values.clone()),
        SweepKind::Exponent => Sweep::Exponent(section.values.clone()),
    };
    let table = constant_sweep(&problem, cfg.solver_config()?, &plan, section.m1).map_err(|e| match e {
        bspde_core::energy::EnergyError::Solver(s) => solver_error(s),
        other => failure(other),
    })?;
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| vec![num(r.sweep_value), num(r.lhs), num(r.rhs), num(r.c_fit)])
        .collect();
    let dir = &cfg.output.directory;
    let csv = write_csv(
        dir,
        "sweep.csv",
        &loaded.hash,
        &["sweep_value", "lhs", "rhs", "c_fit"],
        &rows,
    )?;
    let mut ordered: Vec<(f64, f64)> = table.rows.iter().map(|r| (r.sweep_value, r.c_fit)).collect();
    ordered.sort_by(|a, b| b.0.total_cmp(&a.0));
    let monotone = ordered.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-12));
    println!(
        "{} sweep: {} rows, max/min C_fit {:.4}{}",
        table.kind,
        table.rows.len(),
        table.spread_ratio,
        table
            .log_slope
            .map(|s| format!(", log-log slope {s:.4}"))
            .unwrap_or_default()
    );
    let report = SweepReport {
        table,
        monotone,
        csv: csv
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    Ok(write_json(dir, "sweep.json", &loaded.hash, "sweep", &report)?)
}

// ------------------------------------------------------------------ control

#[derive(Debug, Serialize)]
pub struct ControlReport {
    pub iteration: PolicyIterationReport,
    pub duality: DualityReport,
    pub exhaustive: Option<ExhaustiveResult>,
    /// `|J_iteration − J*|` when the exhaustive search ran.
    pub optimality_gap: Option<f64>,
    pub certified: bool,
}

pub fn control(loaded: &LoadedConfig) -> Result<PathBuf, CliError> {
    let cfg = &loaded.config;
    let (problem, section) = cfg.control_problem()?;
    problem.validate().map_err(control_error)?;
    let config = cfg.solver_config()?;
    let tolerance = Tolerance::SchemeScaled(section.tolerance_factor);
    let initial = ControlPolicy::constant(&problem.tree, problem.gamma[0]);
    let iteration = policy_iteration(
        &problem,
        initial,
        config,
        tolerance,
        section.pairing.pairing(),
        section.max_iterations,
    )
    .map_err(control_error)?;
    let xi = solve_forward(&problem, &iteration.policy).map_err(control_error)?;
    let adjoint = solve_adjoint(&problem, &iteration.policy, config).map_err(control_error)?;
    let duality = duality_check(&problem, &iteration.policy, &xi, &adjoint).map_err(control_error)?;
    let nodes = (0..problem.tree.n_steps())
        .map(|l| problem.tree.level_size(l))
        .sum::<usize>();
    let fits = (problem.gamma.len() as f64).powi(nodes as i32) <= EXHAUSTIVE_BUDGET as f64;
    let exhaustive = if section.exhaustive && fits {
        Some(exhaustive_optimum(&problem).map_err(control_error)?)
    } else {
        None
    };
    let optimality_gap = exhaustive.as_ref().map(|e| (iteration.cost - e.cost).abs());
    let gap_ok = optimality_gap.is_none_or(|g| g <= 1e-10 * iteration.cost.abs().max(1.0));
    let certified = iteration.max_principle.pass_fraction == 1.0 && gap_ok;
    debug_assert_eq!(cost(&problem, &iteration.policy, &xi).ok(), Some(duality.cost));
    println!(
        "J = {:.10}, {} iterations, max condition at {:.1}% of nodes, duality defect {:.3e}",
        iteration.cost,
        iteration.iterations.len(),
        100.0 * iteration.max_principle.pass_fraction,
        duality.defect
    );
    if let Some(e) = &exhaustive {
        println!("exhaustive optimum J* = {:.10} over {} policies", e.cost, e.evaluated);
    }
    let report = ControlReport {
        iteration,
        duality,
        exhaustive,
        optimality_gap,
        certified,
    };
    let path = write_json(&cfg.output.directory, "control.json", &loaded.hash, "control", &report)?;
    if cfg.wants(Format::Csv) {
        let rows: Vec<Vec<String>> = report
            .iteration
            .policy
            .dump()
            .into_iter()
            .map(|(node, v): (NodeId, f64)| vec![node.level.to_string(), node.index.to_string(), num(v)])
            .collect();
        write_csv(
            &cfg.output.directory,
            "policy.csv",
            &loaded.hash,
            &["level", "index", "control"],
            &rows,
        )?;
    }
    if certified {
        Ok(path)
    } else {
        Err(CliError::Violation(format!(
            "maximum condition holds at {:.1}% of nodes{}",
            100.0 * report.iteration.max_principle.pass_fraction,
            report
                .optimality_gap
                .map(|g| format!(", optimality gap {g:.3e}"))
                .unwrap_or_default()
        )))
    }
}

// ------------------------------------------------------------------ oracle-test

#[derive(Debug, Serialize)]
pub struct OracleTestReport {
    pub provenance: &'static str,
    pub n_steps: usize,
    pub errors: OracleErrors,
    /// Errors with `n_steps` doubled.
    pub refined: OracleErrors,
    pub u_ratio: f64,
    pub q_ratio: f64,
    pub step_residual: f64,
    pub tolerance: Option<f64>,
}

pub fn oracle_test(loaded: &LoadedConfig) -> Result<PathBuf, CliError> {
    let cfg = &loaded.config;
    if cfg.problem.oracle.is_none() {
        return Err(CliError::Usage("oracle-test needs problem.oracle".into()));
    }
    let (problem, solution) = run_solve(cfg)?;
    let oracle = build_oracle(cfg, &problem)?.expect("oracle configured");
    let errors = compare(&problem, &solution, oracle.as_ref());
    let mut fine_cfg = cfg.clone();
    fine_cfg.tree.n_steps *= 2;
    let (fine_problem, fine_solution) = run_solve(&fine_cfg)?;
    let refined = compare(&fine_problem, &fine_solution, oracle.as_ref());
    let residual = step_residual(&problem, cfg.solver_config()?, oracle.as_ref()).map_err(failure)?;
    let ratio = |a: f64, b: f64| if a > 0.0 { b / a } else { 0.0 };
    let report = OracleTestReport {
        provenance: oracle.provenance(),
        n_steps: cfg.tree.n_steps,
        u_ratio: ratio(errors.u_l2_sup, refined.u_l2_sup),
        q_ratio: ratio(errors.q_l2_sup, refined.q_l2_sup),
        errors,
        refined,
        step_residual: residual,
        tolerance: cfg.problem.oracle_tolerance,
    };
    println!(
        "oracle: u error {:.3e} -> {:.3e}, q error {:.3e} -> {:.3e}, step residual {:.3e}",
        report.errors.u_l2_sup,
        report.refined.u_l2_sup,
        report.errors.q_l2_sup,
        report.refined.q_l2_sup,
        report.step_residual
    );
    let path = write_json(
        &cfg.output.directory,
        "oracle.json",
        &loaded.hash,
        "oracle-test",
        &report,
    )?;
    match report.tolerance {
        Some(tol) if report.errors.u_l2_sup > tol || report.errors.q_l2_sup > tol => Err(CliError::Violation(format!(
            "oracle error above {tol:e}: u {:.3e}, q {:.3e}",
            report.errors.u_l2_sup, report.errors.q_l2_sup
        ))),
        _ => Ok(path),
    }
}
