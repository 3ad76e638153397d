//! Small expression language for coefficients and data.
//!
//! Variables are `t`, `x1..xd`, `w1..wd'` and `v`; the named constant `pi`
//! is also accepted. Operators bind as `^` > unary `−` > `* /` > `+ −`; all
//! binary operators are left-associative except `^`. So `-x^2` is `−(x²)`,
//! `2*-3` is `−6` and `2^3^2` is `2^9`.

use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    T,
    /// Spatial coordinate, zero-based (`x1` is `X(0)`).
    X(usize),
    /// Wiener component, zero-based (`w1` is `W(0)`).
    W(usize),
    V,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
    Tanh,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "tanh" => Func::Tanh,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Tanh => "tanh",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(&self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }

    /// (left, right) binding powers.
    fn binding(&self) -> (u8, u8) {
        match self {
            BinOp::Add | BinOp::Sub => (1, 2),
            BinOp::Mul | BinOp::Div => (3, 4),
            BinOp::Pow => (7, 6),
        }
    }
}

const UNARY_BINDING: u8 = 5;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnknownIdentifier(String),
    Arity { func: String, expected: usize, got: usize },
    UnbalancedParen,
    UnexpectedToken(String),
    UnexpectedEnd,
    InvalidNumber(String),
    VariableOutOfRange(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at byte {offset}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub offset: usize,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::UnknownIdentifier(s) => write!(f, "unknown identifier '{s}'"),
            ParseErrorKind::Arity { func, expected, got } => {
                write!(f, "{func} takes {expected} argument(s), got {got}")
            }
            ParseErrorKind::UnbalancedParen => write!(f, "unbalanced parenthesis"),
            ParseErrorKind::UnexpectedToken(s) => write!(f, "unexpected '{s}'"),
            ParseErrorKind::UnexpectedEnd => write!(f, "unexpected end of input"),
            ParseErrorKind::InvalidNumber(s) => write!(f, "invalid number '{s}'"),
            ParseErrorKind::VariableOutOfRange(s) => write!(f, "variable '{s}' exceeds the declared dimensions"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable {0}")]
    Unbound(String),
    #[error("division by zero in {0}")]
    DivisionByZero(String),
    #[error("domain error in {0}")]
    Domain(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == b'.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let value: f64 = text.parse().map_err(|_| ParseError {
                kind: ParseErrorKind::InvalidNumber(text.to_string()),
                offset: start,
            })?;
            out.push((Tok::Num(value), start));
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), start));
            continue;
        }
        let tok = match c {
            b'+' | b'-' | b'*' | b'/' | b'^' => Tok::Op(c as char),
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            _ => {
                let ch = src[start..].chars().next().unwrap_or('?');
                return Err(ParseError {
                    kind: ParseErrorKind::UnexpectedToken(ch.to_string()),
                    offset: start,
                });
            }
        };
        out.push((tok, start));
        i += 1;
    }
    Ok(out)
}

/// Declared problem dimensions used to validate variable names.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarSpace {
    pub dim: usize,
    pub wiener_dim: usize,
}

struct Parser<'a> {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
    len: usize,
    space: Option<VarSpace>,
    _src: &'a str,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&(Tok, usize)> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<(Tok, usize)> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn err<T>(&self, kind: ParseErrorKind, offset: usize) -> Result<T, ParseError> {
        Err(ParseError { kind, offset })
    }

    fn expr(&mut self, min_bp: u8) -> Result<Expr, ParseError> {
        let mut lhs = self.prefix()?;
        loop {
            let op = match self.peek() {
                Some((Tok::Op(c), _)) => match c {
                    '+' => BinOp::Add,
                    '-' => BinOp::Sub,
                    '*' => BinOp::Mul,
                    '/' => BinOp::Div,
                    _ => BinOp::Pow,
                },
                Some((Tok::RParen, _)) | Some((Tok::Comma, _)) | None => break,
                Some((tok, off)) => {
                    let off = *off;
                    return self.err(ParseErrorKind::UnexpectedToken(describe(tok)), off);
                }
            };
            let (lbp, rbp) = op.binding();
            if lbp < min_bp {
                break;
            }
            self.next();
            let rhs = self.expr(rbp)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn prefix(&mut self) -> Result<Expr, ParseError> {
        let (tok, off) = match self.next() {
            Some(t) => t,
            None => return self.err(ParseErrorKind::UnexpectedEnd, self.len),
        };
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Op('-') => {
                let inner = self.expr(UNARY_BINDING)?;
                Ok(Expr::Neg(Box::new(inner)))
            }
            Tok::LParen => {
                let inner = self.expr(0)?;
                match self.next() {
                    Some((Tok::RParen, _)) => Ok(inner),
                    Some((_, o)) => self.err(ParseErrorKind::UnbalancedParen, o),
                    None => self.err(ParseErrorKind::UnbalancedParen, off),
                }
            }
            Tok::Ident(name) => self.identifier(name, off),
            Tok::RParen => self.err(ParseErrorKind::UnbalancedParen, off),
            other => self.err(ParseErrorKind::UnexpectedToken(describe(&other)), off),
        }
    }

    fn identifier(&mut self, name: String, off: usize) -> Result<Expr, ParseError> {
        if let Some(func) = Func::lookup(&name) {
            match self.next() {
                Some((Tok::LParen, _)) => {}
                Some((_, o)) => return self.err(ParseErrorKind::UnexpectedToken(format!("{name} without '('")), o),
                None => return self.err(ParseErrorKind::UnexpectedEnd, self.len),
            }
            let mut args = Vec::new();
            if matches!(self.peek(), Some((Tok::RParen, _))) {
                self.next();
            } else {
                loop {
                    args.push(self.expr(0)?);
                    match self.next() {
                        Some((Tok::Comma, _)) => continue,
                        Some((Tok::RParen, _)) => break,
                        Some((t, o)) => return self.err(ParseErrorKind::UnexpectedToken(describe(&t)), o),
                        None => return self.err(ParseErrorKind::UnbalancedParen, off),
                    }
                }
            }
            if args.len() != func.arity() {
                return self.err(
                    ParseErrorKind::Arity {
                        func: name,
                        expected: func.arity(),
                        got: args.len(),
                    },
                    off,
                );
            }
            return Ok(Expr::Call(func, args));
        }
        if name == "pi" {
            return Ok(Expr::Num(std::f64::consts::PI));
        }
        let var = parse_var(&name).ok_or_else(|| ParseError {
            kind: ParseErrorKind::UnknownIdentifier(name.clone()),
            offset: off,
        })?;
        if let Some(space) = self.space {
            let ok = match var {
                Var::X(i) => i < space.dim,
                Var::W(k) => k < space.wiener_dim,
                _ => true,
            };
            if !ok {
                return self.err(ParseErrorKind::VariableOutOfRange(name), off);
            }
        }
        Ok(Expr::Var(var))
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("{v}"),
        Tok::Ident(s) => s.clone(),
        Tok::Op(c) => c.to_string(),
        Tok::LParen => "(".into(),
        Tok::RParen => ")".into(),
        Tok::Comma => ",".into(),
    }
}

fn parse_var(name: &str) -> Option<Var> {
    match name {
        "t" => return Some(Var::T),
        "v" => return Some(Var::V),
        _ => {}
    }
    let (head, digits) = name.split_at(1);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
        return None;
    }
    let k: usize = digits.parse().ok()?;
    match head {
        "x" => Some(Var::X(k - 1)),
        "w" => Some(Var::W(k - 1)),
        _ => None,
    }
}

/// Parse without dimension checks.
pub fn parse(source: &str) -> Result<Expr, ParseError> {
    parse_inner(source, None)
}

/// Parse and reject variables outside `x1..x_dim`, `w1..w_d'`.
pub fn parse_in(source: &str, space: VarSpace) -> Result<Expr, ParseError> {
    parse_inner(source, Some(space))
}

fn parse_inner(source: &str, space: Option<VarSpace>) -> Result<Expr, ParseError> {
    let tokens = tokenize(source)?;
    let mut p = Parser {
        len: source.len(),
        tokens,
        pos: 0,
        space,
        _src: source,
    };
    let e = p.expr(0)?;
    if let Some((tok, off)) = p.next() {
        let kind = if tok == Tok::RParen {
            ParseErrorKind::UnbalancedParen
        } else {
            ParseErrorKind::UnexpectedToken(describe(&tok))
        };
        return Err(ParseError { kind, offset: off });
    }
    Ok(e)
}

/// Variable values for evaluation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bindings<'a> {
    pub t: Option<f64>,
    pub x: &'a [f64],
    pub w: &'a [f64],
    pub v: Option<f64>,
}

impl<'a> Bindings<'a> {
    pub fn new(t: f64, x: &'a [f64], w: &'a [f64], v: f64) -> Self {
        Self {
            t: Some(t),
            x,
            w,
            v: Some(v),
        }
    }
}

impl Expr {
    pub fn eval(&self, b: &Bindings<'_>) -> Result<f64, EvalError> {
        let value = match self {
            Expr::Num(v) => *v,
            Expr::Var(var) => {
                let got = match var {
                    Var::T => b.t,
                    Var::V => b.v,
                    Var::X(i) => b.x.get(*i).copied(),
                    Var::W(k) => b.w.get(*k).copied(),
                };
                return got.ok_or_else(|| EvalError::Unbound(Expr::Var(*var).to_string()));
            }
            Expr::Neg(e) => -e.eval(b)?,
            Expr::Bin(op, l, r) => {
                let (a, c) = (l.eval(b)?, r.eval(b)?);
                match op {
                    BinOp::Add => a + c,
                    BinOp::Sub => a - c,
                    BinOp::Mul => a * c,
                    BinOp::Div => {
                        if c == 0.0 {
                            return Err(EvalError::DivisionByZero(self.to_string()));
                        }
                        a / c
                    }
                    BinOp::Pow => {
                        if c == 2.0 {
                            a * a
                        } else if c.fract() == 0.0 && c.abs() < 64.0 {
                            a.powi(c as i32)
                        } else {
                            a.powf(c)
                        }
                    }
                }
            }
            Expr::Call(f, args) => {
                let a = args[0].eval(b)?;
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(EvalError::Domain(self.to_string()));
                        }
                        a.sqrt()
                    }
                    Func::Abs => a.abs(),
                    Func::Tanh => a.tanh(),
                    Func::Min => a.min(args[1].eval(b)?),
                    Func::Max => a.max(args[1].eval(b)?),
                }
            }
        };
        if !value.is_finite() {
            return Err(EvalError::Domain(self.to_string()));
        }
        Ok(value)
    }

    pub fn variables(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => {
                out.insert(*v);
            }
            Expr::Neg(e) => e.collect_vars(out),
            Expr::Bin(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
        }
    }

    /// Whether the variables fit in `space`.
    pub fn fits(&self, space: VarSpace) -> bool {
        self.variables().iter().all(|v| match v {
            Var::X(i) => *i < space.dim,
            Var::W(k) => *k < space.wiener_dim,
            _ => true,
        })
    }

    pub fn as_constant(&self) -> Option<f64> {
        if self.variables().is_empty() {
            self.eval(&Bindings::default()).ok()
        } else {
            None
        }
    }
}

/// Canonical printer: binary operations fully parenthesised, numbers in
/// shortest round-trip form.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(Var::T) => write!(f, "t"),
            Expr::Var(Var::V) => write!(f, "v"),
            Expr::Var(Var::X(i)) => write!(f, "x{}", i + 1),
            Expr::Var(Var::W(k)) => write!(f, "w{}", k + 1),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

impl std::str::FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: &[f64]) -> f64 {
        parse(s).unwrap().eval(&Bindings::new(0.0, x, &[], 0.0)).unwrap()
    }

    #[test]
    fn grammar_shapes() {
        let e = parse("sin(x1+x2)").unwrap();
        assert_eq!(
            e,
            Expr::Call(
                Func::Sin,
                vec![Expr::Bin(
                    BinOp::Add,
                    Box::new(Expr::Var(Var::X(0))),
                    Box::new(Expr::Var(Var::X(1)))
                )]
            )
        );
        assert_eq!(ev("2*-3", &[]), -6.0);
        assert_eq!(ev("-2^2", &[]), -4.0);
        assert_eq!(ev("2^3^2", &[]), 512.0);
        assert_eq!(ev("8/4/2", &[]), 1.0);
        assert_eq!(ev("1-2-3", &[]), -4.0);
        assert_eq!(ev("2^-1", &[]), 0.5);
        assert_eq!(ev(" ( 1 + 2 ) * 3 ", &[]), 9.0);
        assert_eq!(ev("1.5e1 + .5", &[]), 15.5);
        assert_eq!(ev("max(1, min(5, 3))", &[]), 3.0);
    }

    #[test]
    fn counterexample_entry() {
        let e = parse("1/sqrt(1+x1^2+x2^2)").unwrap();
        let x = [0.3, -1.2];
        let want = 1.0 / (1.0f64 + 0.09 + 1.44).sqrt();
        assert!((e.eval(&Bindings::new(0.0, &x, &[], 0.0)).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn parse_errors_carry_offsets() {
        let e = parse("1 + foo(2)").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownIdentifier("foo".into()));
        assert_eq!(e.offset, 4);
        let e = parse("max(1)").unwrap_err();
        assert!(matches!(
            e.kind,
            ParseErrorKind::Arity {
                expected: 2,
                got: 1,
                ..
            }
        ));
        assert_eq!(parse("(1 + 2").unwrap_err().kind, ParseErrorKind::UnbalancedParen);
        let e = parse("1 + 2)").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnbalancedParen);
        assert_eq!(e.offset, 5);
        assert_eq!(parse("1 +").unwrap_err().kind, ParseErrorKind::UnexpectedEnd);
        assert!(parse("x0").is_err());
        let e = parse_in("x3 + w1", VarSpace { dim: 2, wiener_dim: 1 }).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::VariableOutOfRange("x3".into()));
    }

    #[test]
    fn eval_errors() {
        let b = Bindings::new(0.0, &[0.0], &[], 0.0);
        assert!(matches!(
            parse("1/x1").unwrap().eval(&b),
            Err(EvalError::DivisionByZero(_))
        ));
        assert!(matches!(
            parse("sqrt(x1-1)").unwrap().eval(&b),
            Err(EvalError::Domain(_))
        ));
        assert!(matches!(parse("w1").unwrap().eval(&b), Err(EvalError::Unbound(_))));
        assert!(matches!(
            parse("t").unwrap().eval(&Bindings::default()),
            Err(EvalError::Unbound(_))
        ));
    }

    #[test]
    fn identities() {
        for x in [-3.0, -0.2, 0.0, 1.7, 40.0] {
            assert!((ev("sin(x1)^2+cos(x1)^2", &[x]) - 1.0).abs() < 1e-15);
        }
        assert_eq!(ev("sin(x1+x2)", &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn printer_round_trip() {
        for s in ["-x1^2*3", "1/sqrt(1+x1^2+x2^2)", "max(t, -w1) - 2^-v", "pi*x1"] {
            let e = parse(s).unwrap();
            let again = parse(&e.to_string()).unwrap();
            assert_eq!(e, again, "{s} printed as {e}");
        }
    }

    #[test]
    fn variable_analysis() {
        let e = parse("sin(x2)*w1 + t").unwrap();
        let vars: Vec<_> = e.variables().into_iter().collect();
        assert_eq!(vars, vec![Var::T, Var::X(1), Var::W(0)]);
        assert_eq!(parse("2*pi").unwrap().as_constant(), Some(2.0 * std::f64::consts::PI));
    }
}
