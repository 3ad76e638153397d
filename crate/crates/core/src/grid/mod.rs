//! Periodic spatial grid on the box `[−R, R)^d` with central-difference
//! calculus, discrete Sobolev norms and the bump-kernel mollifier.
//!
//! `D^α` is always the composition of the per-axis first-order central
//! stencil `(f[i+1] − f[i−1]) / 2h`. Composition makes `D^α D^β = D^{α+β}`
//! hold exactly, and periodic summation by parts
//! `⟨D_axis f, g⟩ = −⟨f, D_axis g⟩` holds to rounding.

mod field;
pub mod io;
pub mod spectral;

pub use field::GridField;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest total derivative order a single `diff` call accepts.
pub const MAX_DIFF_ORDER: usize = 5;
/// Largest Sobolev order supported by the norm routines.
pub const MAX_SOBOLEV_ORDER: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("derivative order {order} exceeds the supported cap {cap}")]
    UnsupportedOrder { order: usize, cap: usize },
    #[error("field has {got} values but the grid has {expected} points")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("mollifier width must be positive, got {0}")]
    InvalidWidth(f64),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("malformed field dump: {0}")]
    Malformed(String),
}

/// Uniform periodic grid with `M` points per axis, `h = 2R / M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    dim: usize,
    half_width: f64,
    points: usize,
}

/// Multi-index `α = (α_1, .., α_d)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiIndex(pub [usize; 2]);

impl MultiIndex {
    pub const ZERO: MultiIndex = MultiIndex([0, 0]);

    pub fn axis(axis: usize, order: usize) -> Self {
        let mut a = [0, 0];
        a[axis] = order;
        MultiIndex(a)
    }

    pub fn order(&self) -> usize {
        self.0[0] + self.0[1]
    }

    pub fn plus(&self, other: MultiIndex) -> MultiIndex {
        MultiIndex([self.0[0] + other.0[0], self.0[1] + other.0[1]])
    }
}

impl SpatialGrid {
    pub fn new(dim: usize, half_width: f64, points: usize) -> Result<Self, GridError> {
        if !(dim == 1 || dim == 2) {
            return Err(GridError::InvalidGrid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(GridError::InvalidGrid(format!(
                "half-width must be positive, got {half_width}"
            )));
        }
        if points < 8 || points % 2 != 0 {
            return Err(GridError::InvalidGrid(format!(
                "points per axis must be even and at least 8, got {points}"
            )));
        }
        Ok(Self {
            dim,
            half_width,
            points,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points_per_dim(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.points as f64
    }

    /// `h^d`, the quadrature weight of one grid point.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Total number of grid points, `M^d`.
    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Per-axis integer coordinates of a flat index (axis 0 varies fastest).
    pub fn unflatten(&self, idx: usize) -> [usize; 2] {
        if self.dim == 1 {
            [idx, 0]
        } else {
            [idx % self.points, idx / self.points]
        }
    }

    pub fn flatten(&self, i: [usize; 2]) -> usize {
        if self.dim == 1 {
            i[0]
        } else {
            i[0] + self.points * i[1]
        }
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    /// Physical coordinates of a flat index; unused axes are zero.
    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let i = self.unflatten(idx);
        let mut x = [0.0; 2];
        for axis in 0..self.dim {
            x[axis] = self.coordinate(i[axis]);
        }
        x
    }

    /// Distance (in cells) from the periodic seam, minimised over axes.
    pub fn seam_distance(&self, idx: usize) -> usize {
        let i = self.unflatten(idx);
        (0..self.dim)
            .map(|a| i[a].min(self.points - 1 - i[a]))
            .min()
            .unwrap_or(usize::MAX)
    }

    pub fn sample(&self, mut f: impl FnMut(&[f64]) -> f64) -> GridField {
        GridField::from_vec(
            (0..self.len())
                .map(|idx| {
                    let x = self.coords(idx);
                    f(&x[..self.dim])
                })
                .collect(),
        )
    }

    pub fn zeros(&self) -> GridField {
        GridField::zeros(self.len())
    }

    pub fn constant(&self, c: f64) -> GridField {
        GridField::from_vec(vec![c; self.len()])
    }

    fn check(&self, f: &GridField) -> Result<(), GridError> {
        if f.len() != self.len() {
            return Err(GridError::ShapeMismatch {
                expected: self.len(),
                got: f.len(),
            });
        }
        Ok(())
    }

    /// All multi-indices with `|α| ≤ max_order` for this dimension, in
    /// graded order.
    pub fn multi_indices(&self, max_order: usize) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        for order in 0..=max_order {
            if self.dim == 1 {
                out.push(MultiIndex([order, 0]));
            } else {
                for a0 in (0..=order).rev() {
                    out.push(MultiIndex([a0, order - a0]));
                }
            }
        }
        out
    }

    /// Central first difference along `axis`.
    pub fn d1(&self, f: &GridField, axis: usize) -> GridField {
        debug_assert!(axis < self.dim);
        let m = self.points;
        let inv = 1.0 / (2.0 * self.spacing());
        let mut out = GridField::zeros(f.len());
        if axis == 0 {
            let rows = f.len() / m;
            for r in 0..rows {
                let row = &f[r * m..(r + 1) * m];
                let o = &mut out[r * m..(r + 1) * m];
                for i in 0..m {
                    let ip = if i + 1 == m { 0 } else { i + 1 };
                    let im = if i == 0 { m - 1 } else { i - 1 };
                    o[i] = (row[ip] - row[im]) * inv;
                }
            }
        } else {
            for j in 0..m {
                let jp = if j + 1 == m { 0 } else { j + 1 };
                let jm = if j == 0 { m - 1 } else { j - 1 };
                for i in 0..m {
                    out[i + m * j] = (f[i + m * jp] - f[i + m * jm]) * inv;
                }
            }
        }
        out
    }

    /// `D^α f` by composing central first differences.
    pub fn diff(&self, f: &GridField, alpha: MultiIndex) -> Result<GridField, GridError> {
        self.check(f)?;
        if alpha.order() > MAX_DIFF_ORDER {
            return Err(GridError::UnsupportedOrder {
                order: alpha.order(),
                cap: MAX_DIFF_ORDER,
            });
        }
        if self.dim == 1 && alpha.0[1] > 0 {
            return Err(GridError::InvalidGrid("second axis derivative on a 1-d grid".into()));
        }
        let mut out = f.clone();
        for axis in 0..self.dim {
            for _ in 0..alpha.0[axis] {
                out = self.d1(&out, axis);
            }
        }
        Ok(out)
    }

    /// Discrete gradient `(D_1 f, .., D_d f)`.
    pub fn gradient(&self, f: &GridField) -> Vec<GridField> {
        (0..self.dim).map(|a| self.d1(f, a)).collect()
    }

    /// `Σ_axis D_axis D_axis f`.
    pub fn laplacian(&self, f: &GridField) -> GridField {
        let mut out = self.zeros();
        for a in 0..self.dim {
            let dd = self.d1(&self.d1(f, a), a);
            out.add_assign(&dd);
        }
        out
    }

    /// `⟨f, g⟩ = Σ_x f g h^d`.
    pub fn inner_product(&self, f: &GridField, g: &GridField) -> f64 {
        debug_assert_eq!(f.len(), g.len());
        f.iter().zip(g.iter()).map(|(a, b)| a * b).sum::<f64>() * self.cell_volume()
    }

    pub fn integrate(&self, f: &GridField) -> f64 {
        f.iter().sum::<f64>() * self.cell_volume()
    }

    /// p-th power of the `W^{m,p}` norm of a scalar field.
    pub fn sobolev_norm_pow(&self, f: &GridField, m: usize, p: f64) -> Result<f64, GridError> {
        self.sobolev_norm_pow_vec(std::slice::from_ref(f), m, p)
    }

    /// p-th power of the `W^{m,p}` norm of a vector field: per-component
    /// p-th powers are summed.
    pub fn sobolev_norm_pow_vec(&self, fields: &[GridField], m: usize, p: f64) -> Result<f64, GridError> {
        if m > MAX_SOBOLEV_ORDER {
            return Err(GridError::UnsupportedOrder {
                order: m,
                cap: MAX_SOBOLEV_ORDER,
            });
        }
        let mut total = 0.0;
        for f in fields {
            self.check(f)?;
            for alpha in self.multi_indices(m) {
                let d = self.diff(f, alpha)?;
                total += if p == 2.0 {
                    d.iter().map(|v| v * v).sum::<f64>()
                } else {
                    d.iter().map(|v| v.abs().powf(p)).sum::<f64>()
                };
            }
        }
        Ok(total * self.cell_volume())
    }

    /// `‖f‖_{m,p}`.
    pub fn sobolev_norm(&self, f: &GridField, m: usize, p: f64) -> Result<f64, GridError> {
        Ok(self.sobolev_norm_pow(f, m, p)?.powf(1.0 / p))
    }

    pub fn sobolev_norm_vec(&self, fields: &[GridField], m: usize, p: f64) -> Result<f64, GridError> {
        Ok(self.sobolev_norm_pow_vec(fields, m, p)?.powf(1.0 / p))
    }

    /// Periodic convolution with the normalised bump `ζ_ε`.
    ///
    /// The discrete kernel `exp(1/(s² − 1))`, `s = |offset| / ε`, is
    /// renormalised to sum to one, so constants are preserved exactly.
    pub fn mollify(&self, f: &GridField, eps: f64) -> Result<Mollified, GridError> {
        self.check(f)?;
        if !(eps.is_finite() && eps > 0.0) {
            return Err(GridError::InvalidWidth(eps));
        }
        let h = self.spacing();
        let under_resolved = eps < 2.0 * h;
        if under_resolved {
            log::warn!("mollifier width {eps} is below 2h = {}; kernel under-resolved", 2.0 * h);
        }
        let reach = ((eps / h).ceil() as isize).min(self.points as isize / 2);
        let mut kernel: Vec<([isize; 2], f64)> = Vec::new();
        let r1 = if self.dim == 2 { reach } else { 0 };
        for o1 in -r1..=r1 {
            for o0 in -reach..=reach {
                let dist = ((o0 * o0 + o1 * o1) as f64).sqrt() * h;
                let s = dist / eps;
                if s < 1.0 {
                    kernel.push(([o0, o1], (1.0 / (s * s - 1.0)).exp()));
                }
            }
        }
        let total: f64 = kernel.iter().map(|k| k.1).sum();
        for k in kernel.iter_mut() {
            k.1 /= total;
        }
        let m = self.points as isize;
        let wrap = |i: isize| -> usize { i.rem_euclid(m) as usize };
        let mut out = self.zeros();
        for idx in 0..self.len() {
            let i = self.unflatten(idx);
            let mut acc = 0.0;
            for (o, w) in &kernel {
                let j = [wrap(i[0] as isize + o[0]), wrap(i[1] as isize + o[1])];
                acc += w * f[self.flatten(j)];
            }
            out[idx] = acc;
        }
        Ok(Mollified {
            field: out,
            under_resolved,
            kernel_points: kernel.len(),
        })
    }
}

/// Result of [`SpatialGrid::mollify`].
#[derive(Debug, Clone)]
pub struct Mollified {
    pub field: GridField,
    /// `ε < 2h`: the kernel spans too few cells to be a faithful mollifier.
    pub under_resolved: bool,
    pub kernel_points: usize,
}
