//! Coefficient fields `a, b, c, σ, ν`, the derived `α, A, b̃`, and checks
//! for parabolicity, the σ symmetry condition and the Oleinik constant.

mod checks;
pub mod library;
mod sampler;

pub use checks::{
    check_parabolicity, check_symmetry, estimate_bound, oleinik_constant, BoundEstimate, OleinikReport,
    ParabolicityMode, ParabolicityReport, ParabolicityVerdict, SymmetryReport, Witness, DEN_TOLERANCE, PSD_TOLERANCE,
    SEAM_BAND,
};
pub use sampler::{Dependence, Point, ScalarFn};

use crate::grid::{GridField, SpatialGrid};
use crate::lattice::{NodeId, PathTree};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoefficientError {
    #[error("a is not symmetric: a[{i}][{j}] = {aij} but a[{j}][{i}] = {aji} at x = {x:?}, t = {t}")]
    NonSymmetric {
        i: usize,
        j: usize,
        aij: f64,
        aji: f64,
        x: Vec<f64>,
        t: f64,
    },
    #[error("evaluation failed at x = {x:?}, t = {t}: {message}")]
    Eval { message: String, x: Vec<f64>, t: f64 },
    #[error("non-finite coefficient value at x = {x:?}, t = {t}")]
    NonFinite { x: Vec<f64>, t: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix is not positive semidefinite: min eigenvalue {min_eigenvalue} at x = {x:?}")]
    NotPsd { min_eigenvalue: f64, x: Vec<f64> },
}

/// Samplers for the coefficients. Matrices are row-major: `a[i*d + j]`,
/// `sigma[i*d' + k]`.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    dim: usize,
    wiener_dim: usize,
    pub a: Vec<ScalarFn>,
    pub b: Vec<ScalarFn>,
    pub c: ScalarFn,
    pub sigma: Vec<ScalarFn>,
    pub nu: Vec<ScalarFn>,
    /// Declared smoothness order `m`.
    pub smoothness: usize,
    /// Declared bound `K_m`, if any.
    pub bound: Option<f64>,
}

impl CoefficientSet {
    /// All coefficients zero.
    pub fn zeros(dim: usize, wiener_dim: usize) -> Self {
        Self {
            dim,
            wiener_dim,
            a: vec![ScalarFn::default(); dim * dim],
            b: vec![ScalarFn::default(); dim],
            c: ScalarFn::default(),
            sigma: vec![ScalarFn::default(); dim * wiener_dim],
            nu: vec![ScalarFn::default(); wiener_dim],
            smoothness: 1,
            bound: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn wiener_dim(&self) -> usize {
        self.wiener_dim
    }

    /// Set `a^{ij}` and `a^{ji}` together.
    pub fn set_a(&mut self, i: usize, j: usize, f: impl Into<ScalarFn>) -> &mut Self {
        let f = f.into();
        self.a[i * self.dim + j] = f.clone();
        self.a[j * self.dim + i] = f;
        self
    }

    pub fn set_sigma(&mut self, i: usize, k: usize, f: impl Into<ScalarFn>) -> &mut Self {
        self.sigma[i * self.wiener_dim + k] = f.into();
        self
    }

    pub fn validate_shape(&self) -> Result<(), CoefficientError> {
        let (d, dp) = (self.dim, self.wiener_dim);
        if self.a.len() != d * d || self.b.len() != d || self.sigma.len() != d * dp || self.nu.len() != dp {
            return Err(CoefficientError::Shape(format!(
                "expected a {d}x{d}, b {d}, sigma {d}x{dp}, nu {dp}; got a {}, b {}, sigma {}, nu {}",
                self.a.len(),
                self.b.len(),
                self.sigma.len(),
                self.nu.len()
            )));
        }
        Ok(())
    }

    fn all(&self) -> impl Iterator<Item = &ScalarFn> {
        self.a
            .iter()
            .chain(&self.b)
            .chain(std::iter::once(&self.c))
            .chain(&self.sigma)
            .chain(&self.nu)
    }

    pub fn dependence(&self) -> Dependence {
        self.all().fold(Dependence::default(), |d, f| d.union(f.dependence()))
    }

    /// Sample every coefficient over the grid at `(t, w, v)`.
    pub fn sample(&self, grid: &SpatialGrid, t: f64, w: &[f64], v: f64) -> Result<NodeCoefficients, CoefficientError> {
        self.validate_shape()?;
        if grid.dim() != self.dim {
            return Err(CoefficientError::Shape(format!(
                "grid dimension {} does not match coefficient dimension {}",
                grid.dim(),
                self.dim
            )));
        }
        let s = |f: &ScalarFn| f.sample(grid, t, w, v);
        let a = self.a.iter().map(s).collect::<Result<Vec<_>, _>>()?;
        let d = self.dim;
        for i in 0..d {
            for j in (i + 1)..d {
                let (aij, aji) = (&a[i * d + j], &a[j * d + i]);
                for idx in 0..grid.len() {
                    let scale = 1.0f64.max(aij[idx].abs());
                    if (aij[idx] - aji[idx]).abs() > 1e-12 * scale {
                        return Err(CoefficientError::NonSymmetric {
                            i,
                            j,
                            aij: aij[idx],
                            aji: aji[idx],
                            x: grid.coords(idx)[..d].to_vec(),
                            t,
                        });
                    }
                }
            }
        }
        Ok(NodeCoefficients {
            dim: d,
            wiener_dim: self.wiener_dim,
            a,
            b: self.b.iter().map(s).collect::<Result<_, _>>()?,
            c: s(&self.c)?,
            sigma: self.sigma.iter().map(s).collect::<Result<_, _>>()?,
            nu: self.nu.iter().map(s).collect::<Result<_, _>>()?,
        })
    }

    pub fn sample_at_node(
        &self,
        grid: &SpatialGrid,
        tree: &PathTree,
        node: NodeId,
        v: f64,
    ) -> Result<NodeCoefficients, CoefficientError> {
        self.sample(grid, tree.time_of(node), &tree.wiener(node), v)
    }
}

/// Coefficients sampled on the grid at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeCoefficients {
    pub dim: usize,
    pub wiener_dim: usize,
    pub a: Vec<GridField>,
    pub b: Vec<GridField>,
    pub c: GridField,
    pub sigma: Vec<GridField>,
    pub nu: Vec<GridField>,
}

impl NodeCoefficients {
    pub fn a(&self, i: usize, j: usize) -> &GridField {
        &self.a[i * self.dim + j]
    }

    pub fn sigma(&self, i: usize, k: usize) -> &GridField {
        &self.sigma[i * self.wiener_dim + k]
    }

    /// `a` as a constant matrix when it does not vary in `x`.
    pub fn constant_a(&self) -> Option<[[f64; 2]; 2]> {
        let mut out = [[0.0; 2]; 2];
        for i in 0..self.dim {
            for j in 0..self.dim {
                let f = self.a(i, j);
                if f.spread() != 0.0 {
                    return None;
                }
                out[i][j] = f[0];
            }
        }
        Some(out)
    }

    /// Largest spectral norm of `a` over the grid.
    pub fn max_a_norm(&self) -> f64 {
        let n = self.a[0].len();
        (0..n)
            .map(|idx| {
                let m = self.a_at(idx);
                let (lo, hi) = sym_eigen(m, self.dim);
                lo.abs().max(hi.abs())
            })
            .fold(0.0, f64::max)
    }

    pub fn a_at(&self, idx: usize) -> [[f64; 2]; 2] {
        let mut m = [[0.0; 2]; 2];
        for i in 0..self.dim {
            for j in 0..self.dim {
                m[i][j] = self.a(i, j)[idx];
            }
        }
        m
    }

    /// `(σσ*)^{ij}` at one grid point.
    pub fn sigma_sigma_at(&self, idx: usize) -> [[f64; 2]; 2] {
        let mut m = [[0.0; 2]; 2];
        for i in 0..self.dim {
            for j in 0..self.dim {
                m[i][j] = (0..self.wiener_dim)
                    .map(|k| self.sigma(i, k)[idx] * self.sigma(j, k)[idx])
                    .sum();
            }
        }
        m
    }

    pub fn derive(&self, grid: &SpatialGrid) -> DerivedCoefficients {
        DerivedCoefficients::new(grid, self)
    }
}

/// `α = ½σσ*`, `A = a − α`, `b̃^i = b^i − σ^{ik}_{x^j}σ^{jk} − ν^kσ^{ik}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedCoefficients {
    pub dim: usize,
    pub alpha: Vec<GridField>,
    pub cap_a: Vec<GridField>,
    pub b_tilde: Vec<GridField>,
}

impl DerivedCoefficients {
    pub fn new(grid: &SpatialGrid, nc: &NodeCoefficients) -> Self {
        let (d, dp) = (nc.dim, nc.wiener_dim);
        let n = grid.len();
        let mut alpha = Vec::with_capacity(d * d);
        let mut cap_a = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                let mut al = GridField::zeros(n);
                for k in 0..dp {
                    al.add_product(nc.sigma(i, k), nc.sigma(j, k));
                }
                let al = al.scale(0.5);
                cap_a.push(nc.a(i, j).sub(&al));
                alpha.push(al);
            }
        }
        let mut b_tilde = nc.b.clone();
        for (i, bt) in b_tilde.iter_mut().enumerate() {
            for k in 0..dp {
                for j in 0..d {
                    let ds = grid.d1(nc.sigma(i, k), j);
                    for idx in 0..n {
                        bt[idx] -= ds[idx] * nc.sigma(j, k)[idx];
                    }
                }
                for idx in 0..n {
                    bt[idx] -= nc.nu[k][idx] * nc.sigma(i, k)[idx];
                }
            }
        }
        Self {
            dim: d,
            alpha,
            cap_a,
            b_tilde,
        }
    }

    pub fn alpha(&self, i: usize, j: usize) -> &GridField {
        &self.alpha[i * self.dim + j]
    }

    pub fn cap_a(&self, i: usize, j: usize) -> &GridField {
        &self.cap_a[i * self.dim + j]
    }
}

/// Eigenvalues (min, max) of the leading `dim × dim` block of a symmetric matrix.
pub fn sym_eigen(m: [[f64; 2]; 2], dim: usize) -> (f64, f64) {
    if dim == 1 {
        return (m[0][0], m[0][0]);
    }
    let mean = 0.5 * (m[0][0] + m[1][1]);
    let half = 0.5 * (m[0][0] - m[1][1]);
    let rad = (half * half + m[0][1] * m[1][0]).max(0.0).sqrt();
    (mean - rad, mean + rad)
}

/// A `(t, w, v)` point at which coefficients are sampled.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplePoint {
    pub t: f64,
    pub w: Vec<f64>,
    pub v: f64,
}

impl SamplePoint {
    /// Every node of the tree (at most `max_per_level` per level, evenly
    /// spaced), with control value `v`.
    pub fn from_tree(tree: &PathTree, max_per_level: usize, v: f64) -> Vec<SamplePoint> {
        let mut out = Vec::new();
        for level in 0..=tree.n_steps() {
            let size = tree.level_size(level);
            let stride = size.div_ceil(max_per_level.max(1)).max(1);
            for index in (0..size).step_by(stride) {
                let node = NodeId { level, index };
                out.push(SamplePoint {
                    t: tree.time_of(node),
                    w: tree.wiener(node),
                    v,
                });
            }
        }
        out
    }
}
