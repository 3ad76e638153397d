//! Parser golden suite: hand-computed values, the three counterexample σ
//! matrices, and seeded random expressions cross-checked against the
//! shunting-yard reference.

use super::shunting;
use bspde_core::coefficients::library::{SIGMA_DECAYING, SIGMA_ROTATION_RADIUS, SIGMA_ROTATION_SUM};
use bspde_core::expr::{parse, Bindings};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SUITE_SIZE: usize = 200;

#[derive(Debug, Clone)]
pub struct GoldenCase {
    pub source: String,
    pub t: f64,
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub v: f64,
    /// Hand-computed value, or `None` to use the reference evaluator.
    pub expected: Option<f64>,
}

impl GoldenCase {
    fn at(source: impl Into<String>, x: &[f64], expected: f64) -> Self {
        Self {
            source: source.into(),
            t: 0.3,
            x: x.to_vec(),
            w: vec![-0.4, 0.9],
            v: 1.5,
            expected: Some(expected),
        }
    }

    fn lookup(&self, name: &str) -> Option<f64> {
        match name {
            "t" => Some(self.t),
            "v" => Some(self.v),
            _ => {
                let (head, digits) = name.split_at(1);
                let i: usize = digits.parse().ok()?;
                match head {
                    "x" => self.x.get(i.checked_sub(1)?).copied(),
                    "w" => self.w.get(i.checked_sub(1)?).copied(),
                    _ => None,
                }
            }
        }
    }
}

fn hand_cases() -> Vec<GoldenCase> {
    let p = [0.7, -1.2];
    let (x1, x2) = (p[0], p[1]);
    let (t, v, w1, w2) = (0.3, 1.5, -0.4, 0.9);
    let pi = std::f64::consts::PI;
    vec![
        GoldenCase::at("1+2*3", &p, 7.0),
        GoldenCase::at("(1+2)*3", &p, 9.0),
        GoldenCase::at("2^3^2", &p, 512.0),
        GoldenCase::at("(2^3)^2", &p, 64.0),
        GoldenCase::at("-2^2", &p, -4.0),
        GoldenCase::at("(-2)^2", &p, 4.0),
        GoldenCase::at("2^-1", &p, 0.5),
        GoldenCase::at("1-2-3", &p, -4.0),
        GoldenCase::at("8/4/2", &p, 1.0),
        GoldenCase::at("--3", &p, 3.0),
        GoldenCase::at("-3*-2", &p, 6.0),
        GoldenCase::at("1e-3*2E2", &p, 0.2),
        GoldenCase::at(".5 + 2.", &p, 2.5),
        GoldenCase::at("pi", &p, pi),
        GoldenCase::at("sin(pi/6)", &p, (pi / 6.0).sin()),
        GoldenCase::at("cos(0)", &p, 1.0),
        GoldenCase::at("exp(1)", &p, std::f64::consts::E),
        GoldenCase::at("sqrt(16)", &p, 4.0),
        GoldenCase::at("abs(-3.25)", &p, 3.25),
        GoldenCase::at("tanh(0.5)", &p, 0.5f64.tanh()),
        GoldenCase::at("min(2, -1)", &p, -1.0),
        GoldenCase::at("max(2, -1)", &p, 2.0),
        GoldenCase::at("x1", &p, x1),
        GoldenCase::at("x2", &p, x2),
        GoldenCase::at("t", &p, t),
        GoldenCase::at("v", &p, v),
        GoldenCase::at("w1", &p, w1),
        GoldenCase::at("w2", &p, w2),
        GoldenCase::at("x1^2 + x2^2", &p, x1 * x1 + x2 * x2),
        GoldenCase::at("sin(x1)*cos(x2)", &p, x1.sin() * x2.cos()),
        GoldenCase::at("exp(-t)*x1", &p, (-t).exp() * x1),
        GoldenCase::at("v*cos(x1) + w1", &p, v * x1.cos() + w1),
        GoldenCase::at("0.5*(1 + tanh(x1 - x2))", &p, 0.5 * (1.0 + (x1 - x2).tanh())),
        GoldenCase::at("max(x1, x2) - min(x1, x2)", &p, (x1 - x2).abs()),
        GoldenCase::at("sqrt(abs(x2))", &p, x2.abs().sqrt()),
        GoldenCase::at("1/(1 + x1^2)", &p, 1.0 / (1.0 + x1 * x1)),
        GoldenCase::at("x1*x2/t", &p, x1 * x2 / t),
        GoldenCase::at("2*pi*x1", &p, 2.0 * pi * x1),
        GoldenCase::at("-x1^2", &p, -(x1 * x1)),
        GoldenCase::at("(x1 + x2)^3", &p, (x1 + x2).powi(3)),
        GoldenCase::at("w1*w2 - t*v", &p, w1 * w2 - t * v),
        GoldenCase::at("exp(sin(x1 + w2))", &p, (x1 + w2).sin().exp()),
        GoldenCase::at("  3 *  ( x1-1 )  ", &p, 3.0 * (x1 - 1.0)),
        GoldenCase::at("2^0.5", &p, 2f64.sqrt()),
        GoldenCase::at("abs(x1)^1.5", &p, x1.abs().powf(1.5)),
        GoldenCase::at("cos(x1)^2 + sin(x1)^2", &p, x1.cos().powi(2) + x1.sin().powi(2)),
        GoldenCase::at("1 - 2*3^2/6", &p, -2.0),
        GoldenCase::at("min(max(x1, 0), 0.5)", &p, 0.5),
        GoldenCase::at("-(-(x2))", &p, x2),
        GoldenCase::at("t^2*v - w1/2", &p, t * t * v - w1 / 2.0),
    ]
}

/// Hand-computed row-major σ entries for the three counterexamples.
fn sigma_values(which: usize, x1: f64, x2: f64) -> [f64; 4] {
    match which {
        0 => {
            let s = x1 + x2;
            [s.sin(), s.cos(), s.cos(), -s.sin()]
        }
        1 => {
            let g = 1.0 / (1.0 + x1 * x1 + x2 * x2).sqrt();
            [g, 1.0, 0.0, -g]
        }
        _ => {
            let r = (x1 * x1 + x2 * x2).sqrt();
            [r.sin(), r.cos(), r.cos(), -r.sin()]
        }
    }
}

pub const COUNTEREXAMPLE_POINTS: [[f64; 2]; 3] = [[0.0, 0.0], [0.7, -1.2], [-2.5, 1.9]];

fn counterexample_cases() -> Vec<GoldenCase> {
    let sources = [SIGMA_ROTATION_SUM, SIGMA_DECAYING, SIGMA_ROTATION_RADIUS];
    let mut out = Vec::new();
    for (which, src) in sources.iter().enumerate() {
        for p in COUNTEREXAMPLE_POINTS {
            let want = sigma_values(which, p[0], p[1]);
            for (slot, s) in src.iter().enumerate() {
                out.push(GoldenCase::at(*s, &p, want[slot]));
            }
        }
    }
    out
}

/// Bounded positive factor in `[0.3, e]`, so quotients and powers stay
/// well conditioned.
fn positive_atom(rng: &mut ChaCha8Rng, depth: usize) -> String {
    match rng.random_range(0..4) {
        0 => format!("{:.3}", rng.random_range(0.5..2.5)),
        1 => format!("exp(tanh({}))", expression(rng, depth + 1)),
        2 => format!("(1 + tanh({})^2)", atom(rng, depth + 1)),
        _ => format!("sqrt(1 + tanh({})^2)", expression(rng, depth + 1)),
    }
}

fn atom(rng: &mut ChaCha8Rng, depth: usize) -> String {
    let leaf = depth >= 3 || rng.random_bool(0.4);
    if leaf {
        return match rng.random_range(0..7) {
            0 => format!("{:.4}", rng.random_range(-3.0..3.0)),
            1 => "x1".into(),
            2 => "x2".into(),
            3 => "t".into(),
            4 => "w1".into(),
            5 => "v".into(),
            _ => "pi".into(),
        };
    }
    match rng.random_range(0..8) {
        0 => format!("({})", expression(rng, depth + 1)),
        1 => format!("sin({})", expression(rng, depth + 1)),
        2 => format!("cos({})", expression(rng, depth + 1)),
        3 => format!("tanh({})", expression(rng, depth + 1)),
        4 => format!("exp(tanh({}))", expression(rng, depth + 1)),
        5 => format!("min({}, {})", expression(rng, depth + 1), expression(rng, depth + 1)),
        6 => format!("max({}, {})", expression(rng, depth + 1), expression(rng, depth + 1)),
        _ => format!("-{}", atom(rng, depth + 1)),
    }
}

/// A flat operator chain so that precedence and associativity matter.
fn expression(rng: &mut ChaCha8Rng, depth: usize) -> String {
    let mut s = atom(rng, depth);
    let terms = if depth >= 3 { 1 } else { rng.random_range(1..4) };
    for _ in 0..terms {
        match rng.random_range(0..6) {
            0 => s = format!("{s} + {}", atom(rng, depth)),
            1 => s = format!("{s} - {}", atom(rng, depth)),
            2 => s = format!("{s} * {}", atom(rng, depth)),
            3 => s = format!("{s} / {}", positive_atom(rng, depth)),
            4 => {
                s = format!(
                    "{s} * {}^{}",
                    positive_atom(rng, depth),
                    ["2", "3", "0.5", "-1", "-2"][rng.random_range(0..5)]
                )
            }
            _ => s = format!("{s} - -{}^2", atom(rng, depth)),
        }
    }
    s
}

fn random_cases(count: usize) -> Vec<GoldenCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_9e11);
    (0..count)
        .map(|_| GoldenCase {
            source: expression(&mut rng, 0),
            t: rng.random_range(0.0..1.0),
            x: vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
            w: vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
            v: rng.random_range(-1.0..1.0),
            expected: None,
        })
        .collect()
}

pub fn golden_cases() -> Vec<GoldenCase> {
    let mut cases = hand_cases();
    cases.extend(counterexample_cases());
    let rest = SUITE_SIZE - cases.len();
    cases.extend(random_cases(rest));
    cases
}

#[derive(Debug, Clone)]
pub struct GoldenFailure {
    pub source: String,
    pub message: String,
}

/// Parse, evaluate, compare with the expected value to `1e-12` (relative
/// above magnitude one), and check the printer round trip.
pub fn run_case(case: &GoldenCase) -> Result<(), GoldenFailure> {
    let fail = |message: String| GoldenFailure {
        source: case.source.clone(),
        message,
    };
    let expr = parse(&case.source).map_err(|e| fail(format!("parse: {e}")))?;
    let got = expr
        .eval(&Bindings::new(case.t, &case.x, &case.w, case.v))
        .map_err(|e| fail(format!("eval: {e}")))?;
    let want = match case.expected {
        Some(v) => v,
        None => shunting::evaluate(&case.source, &|n| case.lookup(n)).map_err(|e| fail(format!("reference: {e}")))?,
    };
    if (got - want).abs() > 1e-12 * want.abs().max(1.0) {
        return Err(fail(format!("got {got:e}, want {want:e}")));
    }
    let printed = expr.to_string();
    let again = parse(&printed).map_err(|e| fail(format!("reparse of {printed}: {e}")))?;
    if again != expr {
        return Err(fail(format!("printer round trip changed the tree: {printed}")));
    }
    Ok(())
}
