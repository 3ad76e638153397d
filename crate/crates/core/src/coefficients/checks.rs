use super::{sym_eigen, CoefficientError, CoefficientSet, SamplePoint};
use crate::grid::{GridField, MultiIndex, SpatialGrid, MAX_SOBOLEV_ORDER};
use rayon::prelude::*;
use serde::Serialize;

/// Eigenvalues of `2a − σσ*` above `−PSD_TOLERANCE` count as nonnegative.
pub const PSD_TOLERANCE: f64 = 1e-10;
/// Oleinik ratios with a smaller denominator are skipped.
pub const DEN_TOLERANCE: f64 = 1e-12;
/// Cells next to the periodic seam excluded from derivative-based checks.
pub const SEAM_BAND: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ParabolicityMode {
    /// `2a − σσ* ⪰ 0`.
    Degenerate,
    /// `2a − σσ* ⪰ δ I` with `δ ≥ delta_floor`.
    SuperParabolic { delta_floor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ParabolicityVerdict {
    DegenerateOk,
    SuperParabolic { delta: f64 },
    Violated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub t: f64,
    pub w: Vec<f64>,
    pub v: f64,
    pub x: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParabolicityReport {
    pub mode: ParabolicityMode,
    pub min_eigenvalue: f64,
    pub delta: f64,
    pub verdict: ParabolicityVerdict,
    pub passed: bool,
    /// Location of the smallest eigenvalue.
    pub witness: Option<Witness>,
    pub samples: usize,
}

/// Smallest eigenvalue of `2a − σσ*` over all sample points and grid points.
pub fn check_parabolicity(
    coeffs: &CoefficientSet,
    grid: &SpatialGrid,
    samples: &[SamplePoint],
    mode: ParabolicityMode,
) -> Result<ParabolicityReport, CoefficientError> {
    let d = grid.dim();
    let per_sample: Vec<(f64, Witness)> = samples
        .par_iter()
        .map(|sp| {
            let nc = coeffs.sample(grid, sp.t, &sp.w, sp.v)?;
            let mut best = (f64::INFINITY, 0usize);
            for idx in 0..grid.len() {
                let a = nc.a_at(idx);
                let ss = nc.sigma_sigma_at(idx);
                let mut m = [[0.0; 2]; 2];
                for i in 0..d {
                    for j in 0..d {
                        m[i][j] = 2.0 * a[i][j] - ss[i][j];
                    }
                }
                let (lo, _) = sym_eigen(m, d);
                if lo < best.0 {
                    best = (lo, idx);
                }
            }
            Ok((
                best.0,
                Witness {
                    t: sp.t,
                    w: sp.w.clone(),
                    v: sp.v,
                    x: grid.coords(best.1)[..d].to_vec(),
                    value: best.0,
                },
            ))
        })
        .collect::<Result<_, CoefficientError>>()?;
    let (min_eigenvalue, witness) = per_sample
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(m, w)| (m, Some(w)))
        .unwrap_or((f64::INFINITY, None));
    let floor = match mode {
        ParabolicityMode::Degenerate => f64::INFINITY,
        ParabolicityMode::SuperParabolic { delta_floor } => delta_floor,
    };
    let verdict = if min_eigenvalue < -PSD_TOLERANCE {
        ParabolicityVerdict::Violated
    } else if min_eigenvalue >= floor.min(1e-8) && min_eigenvalue > PSD_TOLERANCE {
        ParabolicityVerdict::SuperParabolic { delta: min_eigenvalue }
    } else {
        ParabolicityVerdict::DegenerateOk
    };
    let passed = match mode {
        ParabolicityMode::Degenerate => min_eigenvalue >= -PSD_TOLERANCE,
        ParabolicityMode::SuperParabolic { delta_floor } => min_eigenvalue >= delta_floor,
    };
    Ok(ParabolicityReport {
        mode,
        min_eigenvalue,
        delta: min_eigenvalue.max(0.0),
        verdict,
        passed,
        witness,
        samples: samples.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymmetryReport {
    pub max_violation: f64,
    pub location: Option<Vec<f64>>,
    /// `10 h²`.
    pub tolerance: f64,
    pub satisfied: bool,
    /// Per-point violation, zero inside the seam band.
    #[serde(skip)]
    pub field: GridField,
}

/// `max_{i,j,l,x} |Σ_k σ^{ik} ∂_l σ^{jk} − σ^{jk} ∂_l σ^{ik}|`.
pub fn check_symmetry(
    coeffs: &CoefficientSet,
    grid: &SpatialGrid,
    at: &SamplePoint,
) -> Result<SymmetryReport, CoefficientError> {
    let h = grid.spacing();
    let tolerance = 10.0 * h * h;
    let mut field = grid.zeros();
    let d = grid.dim();
    if d > 1 {
        let nc = coeffs.sample(grid, at.t, &at.w, at.v)?;
        let dp = nc.wiener_dim;
        // ds[l][i*dp + k] = ∂_l σ^{ik}
        let ds: Vec<Vec<GridField>> = (0..d)
            .map(|l| nc.sigma.iter().map(|s| grid.d1(s, l)).collect())
            .collect();
        for idx in 0..grid.len() {
            if grid.seam_distance(idx) < SEAM_BAND {
                continue;
            }
            let mut worst = 0.0f64;
            for i in 0..d {
                for j in (i + 1)..d {
                    for dl in &ds {
                        let mut s = 0.0;
                        for k in 0..dp {
                            s += nc.sigma(i, k)[idx] * dl[j * dp + k][idx] - nc.sigma(j, k)[idx] * dl[i * dp + k][idx];
                        }
                        worst = worst.max(s.abs());
                    }
                }
            }
            field[idx] = worst;
        }
    }
    let (argmax, max_violation) =
        field.iter().enumerate().fold(
            (None, 0.0f64),
            |(loc, m), (i, &v)| if v > m { (Some(i), v) } else { (loc, m) },
        );
    Ok(SymmetryReport {
        max_violation,
        location: argmax.map(|i| grid.coords(i)[..d].to_vec()),
        tolerance,
        satisfied: max_violation <= tolerance,
        field,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OleinikReport {
    pub constant: f64,
    pub location: Option<Vec<f64>>,
    pub probe: Option<usize>,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Largest `(A^{ij}_{x^ρ} v_{x^i x^j})² / (A^{ij} v_{x^i x^k} v_{x^j x^k})`
/// over probes `v`, directions `ρ` and grid points outside `seam_band`.
///
/// `cap_a` is row-major `d × d`.
pub fn oleinik_constant(
    grid: &SpatialGrid,
    cap_a: &[GridField],
    probes: &[GridField],
    seam_band: usize,
) -> Result<OleinikReport, CoefficientError> {
    let d = grid.dim();
    if cap_a.len() != d * d {
        return Err(CoefficientError::Shape(format!(
            "A must have {} entries, got {}",
            d * d,
            cap_a.len()
        )));
    }
    for idx in 0..grid.len() {
        let mut m = [[0.0; 2]; 2];
        for i in 0..d {
            for j in 0..d {
                m[i][j] = cap_a[i * d + j][idx];
            }
        }
        let (lo, _) = sym_eigen(m, d);
        if lo < -PSD_TOLERANCE {
            return Err(CoefficientError::NotPsd {
                min_eigenvalue: lo,
                x: grid.coords(idx)[..d].to_vec(),
            });
        }
    }
    // dA[rho][i*d + j]
    let da: Vec<Vec<GridField>> = (0..d)
        .map(|rho| cap_a.iter().map(|f| grid.d1(f, rho)).collect())
        .collect();
    let mut report = OleinikReport {
        constant: 0.0,
        location: None,
        probe: None,
        evaluated: 0,
        skipped: 0,
    };
    for (p, v) in probes.iter().enumerate() {
        let grad: Vec<GridField> = (0..d).map(|i| grid.d1(v, i)).collect();
        // hess[i*d + j] = D_j D_i v
        let hess: Vec<GridField> = (0..d * d).map(|ij| grid.d1(&grad[ij / d], ij % d)).collect();
        for idx in 0..grid.len() {
            if grid.seam_distance(idx) < seam_band {
                continue;
            }
            let mut den = 0.0;
            for i in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        den += cap_a[i * d + j][idx] * hess[i * d + k][idx] * hess[j * d + k][idx];
                    }
                }
            }
            if den < DEN_TOLERANCE {
                report.skipped += 1;
                continue;
            }
            report.evaluated += 1;
            for dr in &da {
                let mut num = 0.0;
                for ij in 0..d * d {
                    num += dr[ij][idx] * hess[ij][idx];
                }
                let ratio = num * num / den;
                if ratio > report.constant {
                    report.constant = ratio;
                    report.location = Some(grid.coords(idx)[..d].to_vec());
                    report.probe = Some(p);
                }
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundEstimate {
    /// Largest `|D^α coefficient|` found.
    pub estimate: f64,
    /// Highest derivative order probed.
    pub order: usize,
}

/// Sampled estimate of `K_m`: the largest absolute value of any coefficient
/// and its differences up to order `min(max(2, m), 3)`, away from the seam.
pub fn estimate_bound(
    coeffs: &CoefficientSet,
    grid: &SpatialGrid,
    samples: &[SamplePoint],
) -> Result<BoundEstimate, CoefficientError> {
    let order = coeffs.smoothness.max(2).min(MAX_SOBOLEV_ORDER);
    let alphas: Vec<MultiIndex> = grid.multi_indices(order);
    let mut estimate = 0.0f64;
    for sp in samples {
        let nc = coeffs.sample(grid, sp.t, &sp.w, sp.v)?;
        let fields =
            nc.a.iter()
                .chain(&nc.b)
                .chain(std::iter::once(&nc.c))
                .chain(&nc.sigma)
                .chain(&nc.nu);
        for f in fields {
            for alpha in &alphas {
                let df = grid
                    .diff(f, *alpha)
                    .map_err(|e| CoefficientError::Shape(e.to_string()))?;
                for idx in 0..grid.len() {
                    if alpha.order() == 0 || grid.seam_distance(idx) > alpha.order() {
                        estimate = estimate.max(df[idx].abs());
                    }
                }
            }
        }
    }
    Ok(BoundEstimate { estimate, order })
}
