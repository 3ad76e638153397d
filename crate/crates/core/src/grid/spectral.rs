//! FFT helpers on the periodic grid: diagonal solves for constant-coefficient
//! difference operators, continuous-wavenumber semigroups used by the
//! oracles, and a preconditioned BiCGSTAB for the variable-coefficient case.

use super::{GridField, SpatialGrid};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;

pub struct PeriodicFft {
    grid: SpatialGrid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for PeriodicFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PeriodicFft").field("grid", &self.grid).finish()
    }
}

impl PeriodicFft {
    pub fn new(grid: &SpatialGrid) -> Self {
        let mut planner = FftPlanner::new();
        let m = grid.points_per_dim();
        Self {
            grid: grid.clone(),
            forward: planner.plan_fft_forward(m),
            inverse: planner.plan_fft_inverse(m),
        }
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    fn transform(&self, data: &mut [Complex<f64>], plan: &Arc<dyn Fft<f64>>) {
        let m = self.grid.points_per_dim();
        // Axis 0 rows are contiguous.
        for row in data.chunks_exact_mut(m) {
            plan.process(row);
        }
        if self.grid.dim() == 2 {
            let mut column = vec![Complex::new(0.0, 0.0); m];
            for i in 0..m {
                for j in 0..m {
                    column[j] = data[i + m * j];
                }
                plan.process(&mut column);
                for j in 0..m {
                    data[i + m * j] = column[j];
                }
            }
        }
    }

    pub fn forward(&self, f: &GridField) -> Vec<Complex<f64>> {
        let mut data: Vec<Complex<f64>> = f.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.transform(&mut data, &self.forward);
        data
    }

    pub fn inverse(&self, mut data: Vec<Complex<f64>>) -> GridField {
        self.transform(&mut data, &self.inverse);
        let scale = 1.0 / self.grid.len() as f64;
        GridField::from_vec(data.iter().map(|c| c.re * scale).collect())
    }

    /// Per-axis FFT mode indices of a flat index.
    pub fn modes(&self, idx: usize) -> [usize; 2] {
        self.grid.unflatten(idx)
    }

    /// Symbol of the central first difference, `sin(k h) / h` (times `i`).
    pub fn difference_symbol(&self, mode: usize) -> f64 {
        let m = self.grid.points_per_dim() as f64;
        let h = self.grid.spacing();
        (2.0 * PI * mode as f64 / m).sin() / h
    }

    /// Continuous wavenumber of a mode on the box `[−R, R)`; the Nyquist
    /// mode maps to `+π/h`.
    pub fn wavenumber(&self, mode: usize) -> f64 {
        let m = self.grid.points_per_dim();
        let signed = if mode <= m / 2 {
            mode as f64
        } else {
            mode as f64 - m as f64
        };
        PI * signed / self.grid.half_width()
    }

    /// Multiply in Fourier space by `symbol(modes)`.
    pub fn apply_symbol(&self, f: &GridField, symbol: impl Fn([usize; 2]) -> Complex<f64>) -> GridField {
        let mut data = self.forward(f);
        for (idx, c) in data.iter_mut().enumerate() {
            *c *= symbol(self.modes(idx));
        }
        self.inverse(data)
    }

    /// Solve `S u = rhs` for a real diagonal symbol `S`; `None` when the
    /// symbol vanishes or changes sign through zero.
    pub fn solve_diagonal(&self, rhs: &GridField, symbol: impl Fn([usize; 2]) -> f64) -> Option<GridField> {
        let mut data = self.forward(rhs);
        for (idx, c) in data.iter_mut().enumerate() {
            let s = symbol(self.modes(idx));
            if !(s.is_finite() && s.abs() > 1e-300) {
                return None;
            }
            *c /= s;
        }
        Some(self.inverse(data))
    }
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone)]
pub struct IterativeSolve {
    pub solution: GridField,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Right-preconditioned BiCGSTAB for `A x = b`.
pub fn bicgstab(
    apply: impl Fn(&GridField) -> GridField,
    precondition: impl Fn(&GridField) -> GridField,
    rhs: &GridField,
    initial: GridField,
    tol: f64,
    max_iter: usize,
) -> Result<IterativeSolve, IterativeSolve> {
    let dot = |a: &GridField, b: &GridField| a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>();
    let bnorm = dot(rhs, rhs).sqrt().max(f64::MIN_POSITIVE);
    let mut x = initial;
    let mut r = rhs.sub(&apply(&x));
    let r0 = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = GridField::zeros(rhs.len());
    let mut p = GridField::zeros(rhs.len());
    let mut res = dot(&r, &r).sqrt() / bnorm;
    if res <= tol {
        return Ok(IterativeSolve {
            solution: x,
            iterations: 0,
            relative_residual: res,
        });
    }
    for it in 1..=max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new.abs() < 1e-300 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        // p = r + beta (p − omega v)
        for i in 0..p.len() {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let ph = precondition(&p);
        v = apply(&ph);
        let denom = dot(&r0, &v);
        if denom.abs() < 1e-300 {
            break;
        }
        alpha = rho / denom;
        let mut s = r.clone();
        s.axpy(-alpha, &v);
        let sh = precondition(&s);
        let t = apply(&sh);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        x.axpy(alpha, &ph);
        x.axpy(omega, &sh);
        r = s;
        r.axpy(-omega, &t);
        res = dot(&r, &r).sqrt() / bnorm;
        if res <= tol {
            return Ok(IterativeSolve {
                solution: x,
                iterations: it,
                relative_residual: res,
            });
        }
        if omega == 0.0 {
            break;
        }
    }
    Err(IterativeSolve {
        solution: x,
        iterations: max_iter,
        relative_residual: res,
    })
}
