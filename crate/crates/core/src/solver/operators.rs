//! Discrete spatial operators at one node.
//!
//! The second-order part is applied as
//! `𝒜u = Σ D_j(a^{ij} D_i u) − (D_j a^{ij}) D_i u` and the noise coupling as
//! `𝒮q = Σ D_i(σ^{ik} q^k) − (D_i σ^{ik}) q^k`. Both approximate the
//! nondivergence forms `a^{ij}u_{x^i x^j}` and `σ^{ik} q^k_{x^i}` to second
//! order, and summation by parts turns them into the integrated weak-form
//! terms exactly.

use crate::coefficients::{sym_eigen, NodeCoefficients};
use crate::grid::spectral::{bicgstab, PeriodicFft};
use crate::grid::{GridField, SpatialGrid};

use super::SolverError;

/// `Σ_{ij} D_j(a^{ij} D_i u)` for row-major `a`.
pub fn div_a_grad(grid: &SpatialGrid, a: &[GridField], u: &GridField) -> GridField {
    let d = grid.dim();
    let grad = grid.gradient(u);
    let mut out = grid.zeros();
    for j in 0..d {
        let mut flux = grid.zeros();
        for (i, g) in grad.iter().enumerate() {
            flux.add_product(&a[i * d + j], g);
        }
        out.add_assign(&grid.d1(&flux, j));
    }
    out
}

#[derive(Debug, Clone)]
pub struct NodeOperators {
    grid: SpatialGrid,
    dim: usize,
    wiener_dim: usize,
    viscosity: f64,
    a: Vec<GridField>,
    a_const: Option<[[f64; 2]; 2]>,
    a_mean: [[f64; 2]; 2],
    /// `Σ_j D_j a^{ij}` per `i`.
    a_drift: Vec<GridField>,
    a_zero: bool,
    b: Vec<GridField>,
    b_zero: bool,
    c: GridField,
    c_zero: bool,
    sigma: Vec<GridField>,
    /// `Σ_i D_i σ^{ik}` per `k`.
    sigma_drift: Vec<GridField>,
    nu: Vec<GridField>,
    /// Smallest eigenvalue of `2a − σσ*` over the grid.
    pub min_parabolicity: f64,
    pub parabolicity_witness: Vec<f64>,
    pub max_a_norm: f64,
    /// `max |b̃|` over the grid.
    pub max_b_tilde: f64,
}

impl NodeOperators {
    pub fn new(grid: &SpatialGrid, nc: &NodeCoefficients, viscosity: f64) -> Self {
        let d = grid.dim();
        let dp = nc.wiener_dim;
        let a_const = nc.constant_a();
        let mut a_mean = [[0.0; 2]; 2];
        for i in 0..d {
            for j in 0..d {
                a_mean[i][j] = nc.a(i, j).iter().sum::<f64>() / grid.len() as f64;
            }
        }
        let a_drift = (0..d)
            .map(|i| {
                let mut g = grid.zeros();
                if a_const.is_none() {
                    for j in 0..d {
                        g.add_assign(&grid.d1(nc.a(i, j), j));
                    }
                }
                g
            })
            .collect();
        let sigma_drift = (0..dp)
            .map(|k| {
                let mut g = grid.zeros();
                for i in 0..d {
                    g.add_assign(&grid.d1(nc.sigma(i, k), i));
                }
                g
            })
            .collect();
        let mut min_parabolicity = f64::INFINITY;
        let mut witness = 0;
        for idx in 0..grid.len() {
            let a = nc.a_at(idx);
            let ss = nc.sigma_sigma_at(idx);
            let mut m = [[0.0; 2]; 2];
            for i in 0..d {
                for j in 0..d {
                    m[i][j] = 2.0 * a[i][j] - ss[i][j];
                }
            }
            let lo = sym_eigen(m, d).0;
            if lo < min_parabolicity {
                min_parabolicity = lo;
                witness = idx;
            }
        }
        let derived = nc.derive(grid);
        let max_b_tilde = (0..grid.len())
            .map(|idx| derived.b_tilde.iter().map(|f| f[idx] * f[idx]).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        Self {
            grid: grid.clone(),
            dim: d,
            wiener_dim: dp,
            viscosity,
            a_zero: nc.a.iter().all(|f| f.max_abs() == 0.0),
            a: nc.a.clone(),
            a_const,
            a_mean,
            a_drift,
            b_zero: nc.b.iter().all(|f| f.max_abs() == 0.0),
            b: nc.b.clone(),
            c_zero: nc.c.max_abs() == 0.0,
            c: nc.c.clone(),
            sigma: nc.sigma.clone(),
            sigma_drift,
            nu: nc.nu.clone(),
            min_parabolicity,
            parabolicity_witness: grid.coords(witness)[..d].to_vec(),
            max_a_norm: nc.max_a_norm(),
            max_b_tilde,
        }
    }

    pub fn viscosity(&self) -> f64 {
        self.viscosity
    }

    pub fn has_principal(&self) -> bool {
        self.viscosity != 0.0 || !self.a_zero
    }

    /// `a^{ij}` entry.
    pub fn a(&self, i: usize, j: usize) -> &GridField {
        &self.a[i * self.dim + j]
    }

    pub fn a_drift(&self, i: usize) -> &GridField {
        &self.a_drift[i]
    }

    pub fn b(&self, i: usize) -> &GridField {
        &self.b[i]
    }

    pub fn c(&self) -> &GridField {
        &self.c
    }

    pub fn sigma(&self, i: usize, k: usize) -> &GridField {
        &self.sigma[i * self.wiener_dim + k]
    }

    pub fn sigma_drift(&self, k: usize) -> &GridField {
        &self.sigma_drift[k]
    }

    pub fn nu(&self, k: usize) -> &GridField {
        &self.nu[k]
    }

    /// `εΔu + 𝒜u`.
    pub fn principal(&self, u: &GridField) -> GridField {
        let g = &self.grid;
        let mut out = if self.viscosity != 0.0 {
            g.laplacian(u).scale(self.viscosity)
        } else {
            g.zeros()
        };
        if self.a_zero {
            return out;
        }
        if let Some(a) = self.a_const {
            let grad = g.gradient(u);
            for i in 0..self.dim {
                for j in 0..self.dim {
                    if a[i][j] != 0.0 {
                        out.axpy(a[i][j], &g.d1(&grad[i], j));
                    }
                }
            }
        } else {
            out.add_assign(&div_a_grad(g, &self.a, u));
            let grad = g.gradient(u);
            for i in 0..self.dim {
                for idx in 0..out.len() {
                    out[idx] -= self.a_drift[i][idx] * grad[i][idx];
                }
            }
        }
        out
    }

    /// `b^i D_i u + c u`.
    pub fn lower(&self, u: &GridField) -> GridField {
        let g = &self.grid;
        let mut out = g.zeros();
        if !self.b_zero {
            for i in 0..self.dim {
                out.add_product(&self.b[i], &g.d1(u, i));
            }
        }
        if !self.c_zero {
            out.add_product(&self.c, u);
        }
        out
    }

    /// `𝒮q + ν^k q^k`.
    pub fn noise(&self, q: &[GridField]) -> GridField {
        let g = &self.grid;
        let mut out = g.zeros();
        for (k, qk) in q.iter().enumerate() {
            for i in 0..self.dim {
                let s = self.sigma(i, k);
                if s.max_abs() == 0.0 {
                    continue;
                }
                out.add_assign(&g.d1(&s.mul(qk), i));
            }
            for idx in 0..out.len() {
                out[idx] += (self.nu[k][idx] - self.sigma_drift[k][idx]) * qk[idx];
            }
        }
        out
    }

    /// `r^k = q^k + σ^{ik} D_i u`.
    pub fn r_field(&self, u: &GridField, q: &[GridField]) -> Vec<GridField> {
        let grad = self.grid.gradient(u);
        q.iter()
            .enumerate()
            .map(|(k, qk)| {
                let mut r = qk.clone();
                for (i, gi) in grad.iter().enumerate() {
                    r.add_product(self.sigma(i, k), gi);
                }
                r
            })
            .collect()
    }

    /// Solve `(I − dt(εΔ + 𝒜)) u = rhs`.
    pub fn solve_implicit(
        &self,
        fft: &PeriodicFft,
        rhs: &GridField,
        dt: f64,
        tol: f64,
        max_iter: usize,
    ) -> Result<(GridField, usize, f64), SolverError> {
        if !self.has_principal() {
            return Ok((rhs.clone(), 0, 0.0));
        }
        let symbol = |a: &[[f64; 2]; 2], modes: [usize; 2]| {
            let s = [fft.difference_symbol(modes[0]), fft.difference_symbol(modes[1])];
            let mut q = 0.0;
            for i in 0..self.dim {
                q += self.viscosity * s[i] * s[i];
                for j in 0..self.dim {
                    q += a[i][j] * s[i] * s[j];
                }
            }
            1.0 + dt * q
        };
        if self.a_zero || self.a_const.is_some() {
            let a = self.a_const.unwrap_or([[0.0; 2]; 2]);
            return fft
                .solve_diagonal(rhs, |m| symbol(&a, m))
                .map(|u| (u, 0, 0.0))
                .ok_or_else(|| SolverError::SingularOperator {
                    diagnostics: "constant-coefficient symbol vanishes".into(),
                });
        }
        let apply = |u: &GridField| {
            let mut out = u.clone();
            out.axpy(-dt, &self.principal(u));
            out
        };
        let pre = |r: &GridField| {
            fft.solve_diagonal(r, |m| symbol(&self.a_mean, m))
                .unwrap_or_else(|| r.clone())
        };
        match bicgstab(apply, pre, rhs, rhs.clone(), tol, max_iter) {
            Ok(s) => Ok((s.solution, s.iterations, s.relative_residual)),
            Err(s) => Err(SolverError::SingularOperator {
                diagnostics: format!(
                    "BiCGSTAB stalled after {} iterations at relative residual {:.3e}",
                    s.iterations, s.relative_residual
                ),
            }),
        }
    }
}
