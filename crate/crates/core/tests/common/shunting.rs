//! Reference evaluator: Dijkstra's shunting-yard to postfix, then a stack
//! machine. Shares no code with the library parser.

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Name(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

#[derive(Debug, Clone, PartialEq)]
enum Item {
    Num(f64),
    Var(String),
    Bin(char),
    Neg,
    Call(String, usize),
}

#[derive(Debug, Clone, PartialEq)]
enum Stacked {
    Bin(char),
    Neg,
    LParen,
    Func(String),
}

fn lex(src: &str) -> Result<Vec<Tok>, String> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text: String = chars[start..i].iter().collect();
            out.push(Tok::Num(text.parse().map_err(|_| format!("bad number {text}"))?));
        } else if c.is_ascii_alphabetic() {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Name(chars[start..i].iter().collect()));
        } else {
            out.push(match c {
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ',' => Tok::Comma,
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                _ => return Err(format!("bad character {c}")),
            });
            i += 1;
        }
    }
    Ok(out)
}

fn precedence(s: &Stacked) -> Option<(u8, bool)> {
    // (precedence, right associative)
    match s {
        Stacked::Bin('+') | Stacked::Bin('-') => Some((1, false)),
        Stacked::Bin('*') | Stacked::Bin('/') => Some((2, false)),
        Stacked::Neg => Some((3, true)),
        Stacked::Bin('^') => Some((4, true)),
        _ => None,
    }
}

fn is_function(name: &str) -> bool {
    matches!(name, "sin" | "cos" | "exp" | "sqrt" | "abs" | "tanh" | "min" | "max")
}

fn to_postfix(tokens: &[Tok]) -> Result<Vec<Item>, String> {
    let mut out = Vec::new();
    let mut ops: Vec<Stacked> = Vec::new();
    let mut arg_counts: Vec<usize> = Vec::new();
    // True when the next token must start an operand.
    let mut expect_operand = true;
    let pop_into = |s: Stacked, out: &mut Vec<Item>| match s {
        Stacked::Bin(c) => out.push(Item::Bin(c)),
        Stacked::Neg => out.push(Item::Neg),
        _ => unreachable!(),
    };
    let mut k = 0;
    while k < tokens.len() {
        match &tokens[k] {
            Tok::Num(v) => {
                out.push(Item::Num(*v));
                expect_operand = false;
            }
            Tok::Name(n) if is_function(n) => {
                ops.push(Stacked::Func(n.clone()));
                if tokens.get(k + 1) != Some(&Tok::LParen) {
                    return Err(format!("{n} without parenthesis"));
                }
            }
            Tok::Name(n) => {
                if n == "pi" {
                    out.push(Item::Num(std::f64::consts::PI));
                } else {
                    out.push(Item::Var(n.clone()));
                }
                expect_operand = false;
            }
            Tok::Op('-') if expect_operand => ops.push(Stacked::Neg),
            Tok::Op(c) => {
                let me = Stacked::Bin(*c);
                let (p1, _) = precedence(&me).unwrap();
                while let Some(top) = ops.last() {
                    match precedence(top) {
                        Some((p2, _)) if p2 > p1 || (p2 == p1 && !precedence(&me).unwrap().1) => {
                            let s = ops.pop().unwrap();
                            pop_into(s, &mut out);
                        }
                        _ => break,
                    }
                }
                ops.push(me);
                expect_operand = true;
            }
            Tok::LParen => {
                ops.push(Stacked::LParen);
                arg_counts.push(1);
                if tokens.get(k + 1) == Some(&Tok::RParen) {
                    *arg_counts.last_mut().unwrap() = 0;
                }
                expect_operand = true;
            }
            Tok::Comma => {
                while let Some(top) = ops.last() {
                    if *top == Stacked::LParen {
                        break;
                    }
                    let s = ops.pop().unwrap();
                    pop_into(s, &mut out);
                }
                *arg_counts.last_mut().ok_or("comma outside call")? += 1;
                expect_operand = true;
            }
            Tok::RParen => {
                loop {
                    match ops.pop() {
                        Some(Stacked::LParen) => break,
                        Some(s) => pop_into(s, &mut out),
                        None => return Err("unbalanced ')'".into()),
                    }
                }
                let count = arg_counts.pop().unwrap();
                if let Some(Stacked::Func(_)) = ops.last() {
                    if let Some(Stacked::Func(n)) = ops.pop() {
                        out.push(Item::Call(n, count));
                    }
                }
                expect_operand = false;
            }
        }
        k += 1;
    }
    while let Some(s) = ops.pop() {
        match s {
            Stacked::LParen | Stacked::Func(_) => return Err("unbalanced '('".into()),
            s => pop_into(s, &mut out),
        }
    }
    Ok(out)
}

/// Variable values by name (`t`, `x1`, `w2`, `v`, ...).
pub fn evaluate(src: &str, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64, String> {
    let postfix = to_postfix(&lex(src)?)?;
    let mut stack: Vec<f64> = Vec::new();
    for item in postfix {
        let value = match item {
            Item::Num(v) => v,
            Item::Var(n) => lookup(&n).ok_or_else(|| format!("unbound {n}"))?,
            Item::Neg => -stack.pop().ok_or("stack underflow")?,
            Item::Bin(c) => {
                let r = stack.pop().ok_or("stack underflow")?;
                let l = stack.pop().ok_or("stack underflow")?;
                match c {
                    '+' => l + r,
                    '-' => l - r,
                    '*' => l * r,
                    '/' if r == 0.0 => return Err("division by zero".into()),
                    '/' => l / r,
                    _ => l.powf(r),
                }
            }
            Item::Call(name, argc) => {
                let want = if name == "min" || name == "max" { 2 } else { 1 };
                if argc != want {
                    return Err(format!("{name} takes {want} arguments, got {argc}"));
                }
                let b = if want == 2 {
                    stack.pop().ok_or("stack underflow")?
                } else {
                    0.0
                };
                let a = stack.pop().ok_or("stack underflow")?;
                match name.as_str() {
                    "sin" => a.sin(),
                    "cos" => a.cos(),
                    "exp" => a.exp(),
                    "sqrt" if a < 0.0 => return Err("sqrt of negative".into()),
                    "sqrt" => a.sqrt(),
                    "abs" => a.abs(),
                    "tanh" => a.tanh(),
                    "min" => a.min(b),
                    _ => a.max(b),
                }
            }
        };
        if !value.is_finite() {
            return Err(format!("non-finite value in {src}"));
        }
        stack.push(value);
    }
    match stack.as_slice() {
        [v] => Ok(*v),
        _ => Err(format!("malformed expression {src}")),
    }
}
