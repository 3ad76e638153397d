use crate::expr::{Bindings, Expr, Var};
use crate::grid::{GridField, SpatialGrid};
use std::fmt;
use std::sync::Arc;

use super::CoefficientError;

/// Evaluation point: time, space, Wiener state and control value.
#[derive(Debug, Clone, Copy)]
pub struct Point<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub w: &'a [f64],
    pub v: f64,
}

/// Which arguments a sampler actually reads.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Dependence {
    pub t: bool,
    pub x: bool,
    pub w: bool,
    pub v: bool,
}

impl Dependence {
    pub const ALL: Dependence = Dependence {
        t: true,
        x: true,
        w: true,
        v: true,
    };

    pub fn union(self, o: Dependence) -> Dependence {
        Dependence {
            t: self.t || o.t,
            x: self.x || o.x,
            w: self.w || o.w,
            v: self.v || o.v,
        }
    }
}

type Closure = dyn Fn(&Point<'_>) -> f64 + Send + Sync;

/// A pure scalar function of `(t, x, w, v)`.
#[derive(Clone)]
pub enum ScalarFn {
    Const(f64),
    Expr(Arc<Expr>),
    Func { deps: Dependence, f: Arc<Closure> },
}

impl fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarFn::Const(c) => write!(f, "Const({c})"),
            ScalarFn::Expr(e) => write!(f, "Expr({e})"),
            ScalarFn::Func { deps, .. } => write!(f, "Func({deps:?})"),
        }
    }
}

impl Default for ScalarFn {
    fn default() -> Self {
        ScalarFn::Const(0.0)
    }
}

impl From<f64> for ScalarFn {
    fn from(c: f64) -> Self {
        ScalarFn::Const(c)
    }
}

impl From<Expr> for ScalarFn {
    fn from(e: Expr) -> Self {
        match e.as_constant() {
            Some(c) => ScalarFn::Const(c),
            None => ScalarFn::Expr(Arc::new(e)),
        }
    }
}

impl ScalarFn {
    pub fn func(deps: Dependence, f: impl Fn(&Point<'_>) -> f64 + Send + Sync + 'static) -> Self {
        ScalarFn::Func { deps, f: Arc::new(f) }
    }

    /// Closure of `x` only.
    pub fn of_x(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::func(
            Dependence {
                x: true,
                ..Dependence::default()
            },
            move |p| f(p.x),
        )
    }

    /// Parse an expression string.
    pub fn parse(src: &str) -> Result<Self, crate::expr::ParseError> {
        Ok(crate::expr::parse(src)?.into())
    }

    pub fn dependence(&self) -> Dependence {
        match self {
            ScalarFn::Const(_) => Dependence::default(),
            ScalarFn::Expr(e) => {
                let mut d = Dependence::default();
                for v in e.variables() {
                    match v {
                        Var::T => d.t = true,
                        Var::X(_) => d.x = true,
                        Var::W(_) => d.w = true,
                        Var::V => d.v = true,
                    }
                }
                d
            }
            ScalarFn::Func { deps, .. } => *deps,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ScalarFn::Const(c) if *c == 0.0)
    }

    pub fn eval(&self, p: &Point<'_>) -> Result<f64, CoefficientError> {
        let value = match self {
            ScalarFn::Const(c) => *c,
            ScalarFn::Expr(e) => e
                .eval(&Bindings::new(p.t, p.x, p.w, p.v))
                .map_err(|err| CoefficientError::Eval {
                    message: err.to_string(),
                    x: p.x.to_vec(),
                    t: p.t,
                })?,
            ScalarFn::Func { f, .. } => f(p),
        };
        if !value.is_finite() {
            return Err(CoefficientError::NonFinite {
                x: p.x.to_vec(),
                t: p.t,
            });
        }
        Ok(value)
    }

    /// Values over the whole grid at fixed `(t, w, v)`.
    pub fn sample(&self, grid: &SpatialGrid, t: f64, w: &[f64], v: f64) -> Result<GridField, CoefficientError> {
        if let ScalarFn::Const(c) = self {
            return Ok(grid.constant(*c));
        }
        let mut out = grid.zeros();
        for (idx, slot) in out.iter_mut().enumerate() {
            let xs = grid.coords(idx);
            *slot = self.eval(&Point {
                t,
                x: &xs[..grid.dim()],
                w,
                v,
            })?;
        }
        Ok(out)
    }
}
