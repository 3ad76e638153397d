//! Energy densities `Ψ, Υ`, the Itô drift functional `Θ`, the basic
//! pointwise-integrated inequality, and fitted constants for the main
//! a-priori estimates.

use crate::coefficients::{CoefficientError, DerivedCoefficients, NodeCoefficients, PSD_TOLERANCE};
use crate::grid::{GridError, GridField, MultiIndex, SpatialGrid, MAX_SOBOLEV_ORDER};
use crate::lattice::LatticeError;
use crate::solver::{ProblemData, SolutionPair, SolverConfig, SolverError};
use serde::Serialize;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Coefficients(#[from] CoefficientError),
    #[error("invalid energy configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate parabolicity fails: min eigenvalue of 2a - σσ* is {0:.3e}")]
    NotParabolic(f64),
}

/// `G(s) = s^p` with `p = 1` or `p ≥ 2`, so `G, G' > 0` and `G'' ≥ 0` on `(0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerG {
    pub p: f64,
}

impl PowerG {
    pub fn new(p: f64) -> Result<Self, EnergyError> {
        if !(p == 1.0 || p >= 2.0) || !p.is_finite() {
            return Err(EnergyError::InvalidConfig(format!(
                "G(s) = s^p needs p = 1 or p >= 2, got {p}"
            )));
        }
        Ok(Self { p })
    }

    pub fn g(&self, s: f64) -> f64 {
        s.powf(self.p)
    }

    pub fn g1(&self, s: f64) -> f64 {
        if self.p == 1.0 {
            1.0
        } else {
            self.p * s.powf(self.p - 1.0)
        }
    }

    pub fn g2(&self, s: f64) -> f64 {
        if self.p == 1.0 {
            0.0
        } else if self.p == 2.0 {
            2.0
        } else {
            self.p * (self.p - 1.0) * s.powf(self.p - 2.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyConfig {
    /// Derivative order `m`.
    pub order: usize,
    pub g: PowerG,
}

impl EnergyConfig {
    pub fn new(order: usize, p: f64) -> Result<Self, EnergyError> {
        // Θ differentiates u to order m + 2.
        if order + 2 > crate::grid::MAX_DIFF_ORDER || order > MAX_SOBOLEV_ORDER {
            return Err(EnergyError::InvalidConfig(format!(
                "order {order} exceeds the supported cap {MAX_SOBOLEV_ORDER}"
            )));
        }
        Ok(Self {
            order,
            g: PowerG::new(p)?,
        })
    }
}

/// `Ψ = Σ_{|α|≤m} |D^α u|²`, `Υ = Σ_{|α|≤m} ‖D^α r‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyFields {
    pub psi: GridField,
    pub upsilon: GridField,
}

pub fn energy_fields(
    grid: &SpatialGrid,
    u: &GridField,
    r: &[GridField],
    m: usize,
) -> Result<EnergyFields, EnergyError> {
    let mut psi = grid.zeros();
    let mut upsilon = grid.zeros();
    for alpha in grid.multi_indices(m) {
        let du = grid.diff(u, alpha)?;
        psi.add_product(&du, &du);
        for rk in r {
            let dr = grid.diff(rk, alpha)?;
            upsilon.add_product(&dr, &dr);
        }
    }
    Ok(EnergyFields { psi, upsilon })
}

/// Pointwise `Θ(u, r, f)`:
/// `2G'(Ψ) Σ_β D^βu D^β X − G'(Ψ) Σ_β ‖D^β Y‖² − 2G''(Ψ) ‖Σ_β D^βu D^β Y‖²`
/// with `X = (a − 2α)^{ij} u_{x^i x^j} + b̃·∇u + cu + σ^{ik} r^k_{x^i} + ν·r + f`
/// and `Y^k = r^k − σ^{ik} u_{x^i}`.
pub fn theta(
    grid: &SpatialGrid,
    u: &GridField,
    r: &[GridField],
    f: &GridField,
    nc: &NodeCoefficients,
    config: &EnergyConfig,
) -> Result<GridField, EnergyError> {
    let derived = nc.derive(grid);
    theta_with(grid, u, r, f, nc, &derived, config)
}

fn theta_with(
    grid: &SpatialGrid,
    u: &GridField,
    r: &[GridField],
    f: &GridField,
    nc: &NodeCoefficients,
    dc: &DerivedCoefficients,
    config: &EnergyConfig,
) -> Result<GridField, EnergyError> {
    let d = grid.dim();
    let dp = nc.wiener_dim;
    if r.len() != dp {
        return Err(EnergyError::InvalidConfig(format!(
            "r has {} components, expected {dp}",
            r.len()
        )));
    }
    let grad = grid.gradient(u);
    let mut x = f.clone();
    for i in 0..d {
        for j in 0..d {
            let coef = nc.a(i, j).sub(&dc.alpha(i, j).scale(2.0));
            x.add_product(&coef, &grid.d1(&grad[i], j));
        }
        x.add_product(&dc.b_tilde[i], &grad[i]);
    }
    x.add_product(&nc.c, u);
    for (k, rk) in r.iter().enumerate() {
        for i in 0..d {
            x.add_product(nc.sigma(i, k), &grid.d1(rk, i));
        }
        x.add_product(&nc.nu[k], rk);
    }
    let y: Vec<GridField> = (0..dp)
        .map(|k| {
            let mut yk = r[k].clone();
            for i in 0..d {
                yk.axpy(-1.0, &nc.sigma(i, k).mul(&grad[i]));
            }
            yk
        })
        .collect();
    let alphas: Vec<MultiIndex> = grid.multi_indices(config.order);
    let n = grid.len();
    let mut psi = GridField::zeros(n);
    let mut cross_x = GridField::zeros(n);
    let mut y_sq = GridField::zeros(n);
    let mut cross_y = vec![GridField::zeros(n); dp];
    for alpha in &alphas {
        let du = grid.diff(u, *alpha)?;
        psi.add_product(&du, &du);
        cross_x.add_product(&du, &grid.diff(&x, *alpha)?);
        for k in 0..dp {
            let dy = grid.diff(&y[k], *alpha)?;
            y_sq.add_product(&dy, &dy);
            cross_y[k].add_product(&du, &dy);
        }
    }
    let g = config.g;
    Ok(GridField::from_vec(
        (0..n)
            .map(|idx| {
                let s = psi[idx];
                let cy: f64 = cross_y.iter().map(|c| c[idx] * c[idx]).sum();
                2.0 * g.g1(s) * cross_x[idx] - g.g1(s) * y_sq[idx] - 2.0 * g.g2(s) * cy
            })
            .collect(),
    ))
}

/// Terms of the basic inequality
/// `∫Θ ≤ −(1−ε)∫G'(Ψ)Υ + (C/ε)∫[G(Ψ) + G'(Ψ)Ψ] + Σ_β ∫G'(Ψ)|D^βf|²`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasicEstimateReport {
    pub theta_integral: f64,
    /// `∫G'(Ψ)Υ`.
    pub absorbed: f64,
    /// `∫[G(Ψ) + G'(Ψ)Ψ]`.
    pub growth: f64,
    /// `Σ_β ∫G'(Ψ)|D^βf|²`.
    pub forcing: f64,
    pub eps_split: f64,
    pub constant: f64,
    pub rhs: f64,
    pub holds: bool,
    /// `rhs − ∫Θ`.
    pub slack: f64,
    /// Smallest `C ≥ 0` for which the inequality holds; infinite if the
    /// growth term vanishes while the rest is violated.
    pub minimal_constant: f64,
}

pub fn check_basic_estimate(
    grid: &SpatialGrid,
    u: &GridField,
    r: &[GridField],
    f: &GridField,
    nc: &NodeCoefficients,
    config: &EnergyConfig,
    eps_split: f64,
    constant: f64,
) -> Result<BasicEstimateReport, EnergyError> {
    if !(eps_split > 0.0 && eps_split < 1.0) {
        return Err(EnergyError::InvalidConfig(format!(
            "ε must lie in (0, 1), got {eps_split}"
        )));
    }
    let d = grid.dim();
    let mut min_eig = f64::INFINITY;
    for idx in 0..grid.len() {
        let a = nc.a_at(idx);
        let ss = nc.sigma_sigma_at(idx);
        let mut m = [[0.0; 2]; 2];
        for i in 0..d {
            for j in 0..d {
                m[i][j] = 2.0 * a[i][j] - ss[i][j];
            }
        }
        min_eig = min_eig.min(crate::coefficients::sym_eigen(m, d).0);
    }
    if min_eig < -PSD_TOLERANCE {
        return Err(EnergyError::NotParabolic(min_eig));
    }
    let th = theta(grid, u, r, f, nc, config)?;
    let ef = energy_fields(grid, u, r, config.order)?;
    let g = config.g;
    let g1 = ef.psi.map(|s| g.g1(s));
    let theta_integral = grid.integrate(&th);
    let absorbed = grid.inner_product(&g1, &ef.upsilon);
    let growth = grid.integrate(&ef.psi.map(|s| g.g(s) + g.g1(s) * s));
    let mut fsq = grid.zeros();
    for alpha in grid.multi_indices(config.order) {
        let df = grid.diff(f, alpha)?;
        fsq.add_product(&df, &df);
    }
    let forcing = grid.inner_product(&g1, &fsq);
    let rhs = -(1.0 - eps_split) * absorbed + constant / eps_split * growth + forcing;
    let excess = theta_integral + (1.0 - eps_split) * absorbed - forcing;
    let minimal_constant = if excess <= 0.0 {
        0.0
    } else if growth > 0.0 {
        eps_split * excess / growth
    } else {
        f64::INFINITY
    };
    Ok(BasicEstimateReport {
        theta_integral,
        absorbed,
        growth,
        forcing,
        eps_split,
        constant,
        rhs,
        holds: theta_integral <= rhs,
        slack: rhs - theta_integral,
        minimal_constant,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    /// `C_fit` finite, or both sides zero.
    Pass,
    /// Positive left side with a vanishing right side.
    Violation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub c_fit: Option<f64>,
    pub verdict: Verdict,
}

impl InequalityReport {
    fn new(name: &str, lhs: f64, rhs: f64) -> Self {
        let (c_fit, verdict) = if rhs > 0.0 {
            (Some(lhs / rhs), Verdict::Pass)
        } else if lhs > 0.0 {
            (None, Verdict::Violation)
        } else {
            (None, Verdict::Pass)
        };
        Self {
            name: name.to_string(),
            lhs,
            rhs,
            c_fit,
            verdict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateMetadata {
    pub m1: usize,
    pub p: f64,
    pub viscosity: f64,
    pub dt: f64,
    pub h: f64,
    pub n_steps: usize,
    pub points_per_dim: usize,
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    /// `E sup ‖u‖²_{m1,2} + E∫‖r‖²_{m1,2}` against `E(‖φ‖²_{m1,2} + ∫‖f‖²_{m1,2})`.
    pub quadratic: InequalityReport,
    /// `E sup ‖u‖^p_{m1,p}` against `E(‖φ‖^p_{m1,p} + ∫‖f‖^p_{m1,p})`.
    pub power: InequalityReport,
    pub metadata: EstimateMetadata,
}

/// Discrete versions of the two main estimates with fitted constants.
/// Expectations are exact tree sums, the supremum is taken along paths and
/// time integrals are left Riemann sums over the non-leaf levels.
pub fn verify_main_estimates(
    solution: &SolutionPair,
    problem: &ProblemData,
    m1: usize,
    p: f64,
) -> Result<EstimateReport, EnergyError> {
    if m1 > MAX_SOBOLEV_ORDER {
        return Err(EnergyError::InvalidConfig(format!(
            "m1 = {m1} exceeds {MAX_SOBOLEV_ORDER}"
        )));
    }
    if !(p >= 2.0) {
        return Err(EnergyError::InvalidConfig(format!("p must be >= 2, got {p}")));
    }
    let tree = &problem.tree;
    let grid = &problem.grid;
    let n = tree.n_steps();
    let dt = tree.dt();
    let u2 = solution
        .u
        .map(|_, u| grid.sobolev_norm_pow(u, m1, 2.0).unwrap_or(f64::NAN));
    let up = solution
        .u
        .map(|_, u| grid.sobolev_norm_pow(u, m1, p).unwrap_or(f64::NAN));
    let sup2 = tree.expected_path_supremum(&u2)?;
    let supp = tree.expected_path_supremum(&up)?;
    let mut r_int = 0.0;
    let mut f2_int = 0.0;
    let mut fp_int = 0.0;
    let has_f = !problem.forcing.is_zero();
    for level in 0..n {
        let mut rl = Vec::with_capacity(tree.level_size(level));
        let mut f2 = Vec::new();
        let mut fp = Vec::new();
        for node in tree.nodes_at(level) {
            rl.push(grid.sobolev_norm_pow_vec(solution.r.get(node), m1, 2.0)?);
            if has_f {
                let f = problem.forcing_at(node)?;
                f2.push(grid.sobolev_norm_pow(&f, m1, 2.0)?);
                fp.push(grid.sobolev_norm_pow(&f, m1, p)?);
            }
        }
        r_int += dt * tree.tree_expectation(level, &rl)?;
        if has_f {
            f2_int += dt * tree.tree_expectation(level, &f2)?;
            fp_int += dt * tree.tree_expectation(level, &fp)?;
        }
    }
    let leaf_u2: Vec<f64> = u2.level(n).to_vec();
    let leaf_up: Vec<f64> = up.level(n).to_vec();
    let phi2 = tree.tree_expectation(n, &leaf_u2)?;
    let phip = tree.tree_expectation(n, &leaf_up)?;
    Ok(EstimateReport {
        quadratic: InequalityReport::new("quadratic", sup2 + r_int, phi2 + f2_int),
        power: InequalityReport::new("power", supp, phip + fp_int),
        metadata: EstimateMetadata {
            m1,
            p,
            viscosity: solution.meta.viscosity,
            dt,
            h: grid.spacing(),
            n_steps: n,
            points_per_dim: grid.points_per_dim(),
            half_width: grid.half_width(),
        },
    })
}

/// A family member of a constant sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub sweep_value: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub c_fit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    Viscosity(Vec<f64>),
    Exponent(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub kind: &'static str,
    pub rows: Vec<SweepRow>,
    /// `max C_fit / min C_fit`.
    pub spread_ratio: f64,
    /// Least-squares slope of `ln C_fit` against `p` (exponent sweeps).
    pub log_slope: Option<f64>,
    /// `max_p C_fit(p)^{1/p}` (exponent sweeps).
    pub max_root: Option<f64>,
}

impl SweepTable {
    fn from_rows(kind: &'static str, rows: Vec<SweepRow>) -> Self {
        let (lo, hi) = rows.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), r| {
            (lo.min(r.c_fit), hi.max(r.c_fit))
        });
        let (log_slope, max_root) = if kind == "exponent" {
            let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.sweep_value, r.c_fit.ln())).collect();
            let slope = if pts.len() >= 2 {
                let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
                let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
                let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
                let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
                Some(sxy / sxx)
            } else {
                None
            };
            let root = rows
                .iter()
                .map(|r| r.c_fit.powf(1.0 / r.sweep_value))
                .fold(0.0, f64::max);
            (slope, Some(root))
        } else {
            (None, None)
        };
        Self {
            kind,
            rows,
            spread_ratio: hi / lo,
            log_slope,
            max_root,
        }
    }

    /// RFC-4180 CSV with columns `sweep_value,lhs,rhs,c_fit`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "sweep_value,lhs,rhs,c_fit\r\n")?;
        for r in &self.rows {
            write!(out, "{},{},{},{}\r\n", r.sweep_value, r.lhs, r.rhs, r.c_fit)?;
        }
        Ok(())
    }
}

/// `C_fit` across a viscosity list (quadratic estimate, one solve each) or
/// an exponent list (power estimate, one solve at `config.viscosity`).
pub fn constant_sweep(
    problem: &ProblemData,
    config: SolverConfig,
    sweep: &Sweep,
    m1: usize,
) -> Result<SweepTable, EnergyError> {
    let row = |value: f64, ir: &InequalityReport| SweepRow {
        sweep_value: value,
        lhs: ir.lhs,
        rhs: ir.rhs,
        c_fit: ir.c_fit.unwrap_or(f64::NAN),
    };
    match sweep {
        Sweep::Viscosity(list) => {
            let mut rows = Vec::with_capacity(list.len());
            for &eps in list {
                let sol = crate::solver::solve(problem, config.with_viscosity(eps))?;
                let rep = verify_main_estimates(&sol, problem, m1, 2.0)?;
                rows.push(row(eps, &rep.quadratic));
            }
            Ok(SweepTable::from_rows("viscosity", rows))
        }
        Sweep::Exponent(list) => {
            let sol = crate::solver::solve(problem, config)?;
            let mut rows = Vec::with_capacity(list.len());
            for &p in list {
                let rep = verify_main_estimates(&sol, problem, m1, p)?;
                rows.push(row(p, &rep.power));
            }
            Ok(SweepTable::from_rows("exponent", rows))
        }
    }
}

/// Per-level `E‖u‖_{m,2}` and `E‖r‖_{m,2}` time series.
pub fn norm_series(
    solution: &SolutionPair,
    problem: &ProblemData,
    m: usize,
) -> Result<Vec<(f64, f64, f64)>, EnergyError> {
    let tree = &problem.tree;
    let grid = &problem.grid;
    let mut out = Vec::new();
    for level in 0..=tree.n_steps() {
        let mut us = Vec::new();
        let mut rs = Vec::new();
        for node in tree.nodes_at(level) {
            us.push(grid.sobolev_norm(solution.u.get(node), m, 2.0)?);
            let r = solution.r.get(node);
            rs.push(if r.is_empty() {
                0.0
            } else {
                grid.sobolev_norm_vec(r, m, 2.0)?
            });
        }
        out.push((
            tree.time_grid().time(level),
            tree.tree_expectation(level, &us)?,
            tree.tree_expectation(level, &rs)?,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{CoefficientSet, ScalarFn};
    use std::f64::consts::PI;

    fn line() -> SpatialGrid {
        SpatialGrid::new(1, PI, 64).unwrap()
    }

    #[test]
    fn energy_fields_basics() {
        let g = line();
        let z = energy_fields(&g, &g.zeros(), &[g.zeros()], 1).unwrap();
        assert_eq!(z.psi.max_abs(), 0.0);
        assert_eq!(z.upsilon.max_abs(), 0.0);
        let u = g.sample(|x| x[0].cos());
        let r = g.sample(|x| x[0].sin() + 0.5);
        let e0 = energy_fields(&g, &u, std::slice::from_ref(&r), 0).unwrap();
        assert!(e0.psi.sub(&u.mul(&u)).max_abs() == 0.0);
        assert!(e0.upsilon.sub(&r.mul(&r)).max_abs() == 0.0);
        let e1 = energy_fields(&g, &u, &[], 1).unwrap();
        let h = g.spacing();
        assert!(e1.psi.sub(&g.constant(1.0)).max_abs() < h * h);
        let neg = energy_fields(&g, &u.scale(-1.0), &[r.scale(-1.0)], 1).unwrap();
        assert_eq!(neg, energy_fields(&g, &u, &[r], 1).unwrap());
    }

    #[test]
    fn theta_vanishes_at_zero_u_for_square_g() {
        let g = line();
        let mut cs = CoefficientSet::zeros(1, 1);
        cs.set_a(0, 0, 0.7)
            .set_sigma(0, 0, ScalarFn::parse("0.3*sin(x1)").unwrap());
        let nc = cs.sample(&g, 0.0, &[0.0], 0.0).unwrap();
        let cfg = EnergyConfig::new(1, 2.0).unwrap();
        let r = vec![g.sample(|x| x[0].cos())];
        let th = theta(&g, &g.zeros(), &r, &g.sample(|x| x[0].sin()), &nc, &cfg).unwrap();
        assert_eq!(th.max_abs(), 0.0);
    }

    #[test]
    fn power_g_rejects_bad_exponents() {
        assert!(PowerG::new(1.5).is_err());
        assert!(PowerG::new(0.5).is_err());
        assert!(PowerG::new(1.0).is_ok());
        assert!(EnergyConfig::new(4, 2.0).is_err());
    }
}
