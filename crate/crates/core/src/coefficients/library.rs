//! The three σ fields in `d = d' = 2` that violate the symmetry condition
//! while being exactly degenerate with `a = ½σσ*`.

use super::{CoefficientSet, ScalarFn};
use crate::expr;

#[derive(Debug, Clone)]
pub struct Counterexample {
    pub name: &'static str,
    /// Row-major σ entries as expression source.
    pub sigma_source: [&'static str; 4],
    pub coefficients: CoefficientSet,
}

pub const SIGMA_ROTATION_SUM: [&str; 4] = ["sin(x1+x2)", "cos(x1+x2)", "cos(x1+x2)", "-sin(x1+x2)"];
pub const SIGMA_DECAYING: [&str; 4] = ["1/sqrt(1+x1^2+x2^2)", "1", "0", "-1/sqrt(1+x1^2+x2^2)"];
pub const SIGMA_ROTATION_RADIUS: [&str; 4] = [
    "sin(sqrt(x1^2+x2^2))",
    "cos(sqrt(x1^2+x2^2))",
    "cos(sqrt(x1^2+x2^2))",
    "-sin(sqrt(x1^2+x2^2))",
];

/// Exactly degenerate coefficients `a = ½σσ*`, `b = c = ν = 0` for a
/// row-major 2×2 σ given as expressions.
pub fn degenerate_from_sigma(sigma: [&str; 4]) -> Result<CoefficientSet, expr::ParseError> {
    let mut cs = CoefficientSet::zeros(2, 2);
    for (slot, src) in sigma.iter().enumerate() {
        cs.sigma[slot] = ScalarFn::parse(src)?;
    }
    for i in 0..2 {
        for j in i..2 {
            let src = format!(
                "0.5*(({})*({}) + ({})*({}))",
                sigma[2 * i],
                sigma[2 * j],
                sigma[2 * i + 1],
                sigma[2 * j + 1]
            );
            cs.set_a(i, j, ScalarFn::parse(&src)?);
        }
    }
    cs.smoothness = 3;
    Ok(cs)
}

pub fn builtin_counterexamples() -> [Counterexample; 3] {
    let make = |name, sigma_source| Counterexample {
        name,
        sigma_source,
        coefficients: degenerate_from_sigma(sigma_source).expect("built-in expressions parse"),
    };
    [
        make("rotation-sum", SIGMA_ROTATION_SUM),
        make("decaying", SIGMA_DECAYING),
        make("rotation-radius", SIGMA_ROTATION_RADIUS),
    ]
}
