//! A small arithmetic language for coefficient functions of one variable `x`.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | 'x' | 'pi' | func '(' args ')' | '(' expr ')'
//! ```
//!
//! Functions: `exp log sqrt sin cos abs` (one argument), `min max` (two) and
//! `indicator(a OP b)` with `OP` one of `< <= > >= == !=`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::real::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func1 {
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Abs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func2 {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

/// Expression tree. Literal constants produced by the parser are nonnegative;
/// a leading minus is a [`Expr::Neg`] node.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var,
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call1(Func1, Box<Expr>),
    Call2(Func2, Box<Expr>, Box<Expr>),
    Indicator(CmpOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at byte {offset}: expected one of [{}], found {found}", expected.join(", "))]
pub struct ParseError {
    pub offset: usize,
    pub expected: Vec<String>,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot evaluate `{subexpr}`: {reason}")]
pub struct EvalError {
    pub subexpr: String,
    pub reason: String,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

impl Func1 {
    fn name(self) -> &'static str {
        match self {
            Func1::Exp => "exp",
            Func1::Log => "log",
            Func1::Sqrt => "sqrt",
            Func1::Sin => "sin",
            Func1::Cos => "cos",
            Func1::Abs => "abs",
        }
    }
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Var => f.write_str("x"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Binary(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Expr::Call1(func, a) => write!(f, "{}({a})", func.name()),
            Expr::Call2(func, a, b) => {
                let name = match func {
                    Func2::Min => "min",
                    Func2::Max => "max",
                };
                write!(f, "{name}({a}, {b})")
            }
            Expr::Indicator(op, a, b) => write!(f, "indicator({a} {} {b})", op.symbol()),
        }
    }
}

impl FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::parse(s)
    }
}

impl Expr {
    pub fn parse(source: &str) -> Result<Expr, ParseError> {
        let tokens = tokenize(source)?;
        if tokens.len() == 1 {
            return Err(ParseError {
                offset: 0,
                expected: vec!["expression".into()],
                found: "end of input".into(),
            });
        }
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expr()?;
        p.expect_end()?;
        Ok(e)
    }

    /// Evaluates at `x`. Domain violations are errors, infinities propagate.
    pub fn eval<T: Real>(&self, x: T) -> Result<T, EvalError> {
        let v = match self {
            Expr::Const(c) => lit(*c),
            Expr::Var => x,
            Expr::Neg(e) => -e.eval(x)?,
            Expr::Binary(op, l, r) => {
                let a = l.eval(x)?;
                let b = r.eval(x)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == T::zero() {
                            return Err(self.fail("division by zero"));
                        }
                        a / b
                    }
                    BinOp::Pow => {
                        let integral = b.fract() == T::zero();
                        if a < T::zero() && !integral {
                            return Err(self.fail("negative base with non-integer exponent"));
                        }
                        if a == T::zero() && b < T::zero() {
                            return Err(self.fail("zero raised to a negative power"));
                        }
                        if integral && b.abs() <= lit(1024.0) {
                            a.powi(b.to_i32().unwrap_or(0))
                        } else {
                            a.powf(b)
                        }
                    }
                }
            }
            Expr::Call1(func, a) => {
                let v = a.eval(x)?;
                match func {
                    Func1::Exp => v.exp(),
                    Func1::Log => {
                        if v <= T::zero() {
                            return Err(self.fail("logarithm of a nonpositive number"));
                        }
                        v.ln()
                    }
                    Func1::Sqrt => {
                        if v < T::zero() {
                            return Err(self.fail("square root of a negative number"));
                        }
                        v.sqrt()
                    }
                    Func1::Sin => v.sin(),
                    Func1::Cos => v.cos(),
                    Func1::Abs => v.abs(),
                }
            }
            Expr::Call2(func, a, b) => {
                let u = a.eval(x)?;
                let v = b.eval(x)?;
                match func {
                    Func2::Min => u.min(v),
                    Func2::Max => u.max(v),
                }
            }
            Expr::Indicator(op, a, b) => {
                let u = a.eval(x)?;
                let v = b.eval(x)?;
                let holds = match op {
                    CmpOp::Lt => u < v,
                    CmpOp::Le => u <= v,
                    CmpOp::Gt => u > v,
                    CmpOp::Ge => u >= v,
                    CmpOp::Eq => u == v,
                    CmpOp::Ne => u != v,
                };
                if holds {
                    T::one()
                } else {
                    T::zero()
                }
            }
        };
        if v.is_nan() {
            return Err(self.fail("result is not a number"));
        }
        Ok(v)
    }

    fn fail(&self, reason: &str) -> EvalError {
        EvalError {
            subexpr: self.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(&'static str),
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::End => "end of input".into(),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
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
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            match text.parse::<f64>() {
                Ok(v) if v.is_finite() => out.push((start, Tok::Num(v))),
                _ => {
                    return Err(ParseError {
                        offset: start,
                        expected: vec!["finite number".into()],
                        found: format!("`{text}`"),
                    })
                }
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
            continue;
        }
        let two = if i + 1 < bytes.len() { &src[i..i + 2] } else { "" };
        let sym: &'static str = match two {
            "<=" => "<=",
            ">=" => ">=",
            "==" => "==",
            "!=" => "!=",
            _ => match c {
                b'+' => "+",
                b'-' => "-",
                b'*' => "*",
                b'/' => "/",
                b'^' => "^",
                b'(' => "(",
                b')' => ")",
                b',' => ",",
                b'<' => "<",
                b'>' => ">",
                _ => {
                    let ch = src[i..].chars().next().unwrap_or('?');
                    return Err(ParseError {
                        offset: i,
                        expected: vec!["number".into(), "identifier".into(), "operator".into()],
                        found: format!("`{ch}`"),
                    });
                }
            },
        };
        i += sym.len();
        out.push((start, Tok::Sym(sym)));
    }
    out.push((src.len(), Tok::End));
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].1
    }

    fn offset(&self) -> usize {
        self.tokens[self.pos].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.pos].1.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> ParseError {
        ParseError {
            offset: self.offset(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek().describe(),
        }
    }

    fn eat(&mut self, sym: &str) -> bool {
        if matches!(self.peek(), Tok::Sym(s) if *s == sym) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, sym: &'static str) -> Result<(), ParseError> {
        if self.eat(sym) {
            Ok(())
        } else {
            Err(self.error(&[sym]))
        }
    }

    fn expect_end(&self) -> Result<(), ParseError> {
        if *self.peek() == Tok::End {
            Ok(())
        } else {
            Err(self.error(&["+", "-", "*", "/", "^", "end of input"]))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat("+") {
                BinOp::Add
            } else if self.eat("-") {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat("*") {
                BinOp::Mul
            } else if self.eat("/") {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat("-") {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.eat("^") {
            let exponent = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        const START: &[&str] = &["number", "x", "pi", "function", "(", "-"];
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Const(v))
            }
            Tok::Sym("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let here = self.offset();
                self.bump();
                match name.as_str() {
                    "x" => Ok(Expr::Var),
                    "pi" => Ok(Expr::Const(std::f64::consts::PI)),
                    "exp" | "log" | "sqrt" | "sin" | "cos" | "abs" => {
                        let func = match name.as_str() {
                            "exp" => Func1::Exp,
                            "log" => Func1::Log,
                            "sqrt" => Func1::Sqrt,
                            "sin" => Func1::Sin,
                            "cos" => Func1::Cos,
                            _ => Func1::Abs,
                        };
                        self.expect("(")?;
                        let a = self.expr()?;
                        self.expect(")")?;
                        Ok(Expr::Call1(func, Box::new(a)))
                    }
                    "min" | "max" => {
                        let func = if name == "min" { Func2::Min } else { Func2::Max };
                        self.expect("(")?;
                        let a = self.expr()?;
                        self.expect(",")?;
                        let b = self.expr()?;
                        self.expect(")")?;
                        Ok(Expr::Call2(func, Box::new(a), Box::new(b)))
                    }
                    "indicator" => {
                        self.expect("(")?;
                        let a = self.expr()?;
                        let op = match self.peek() {
                            Tok::Sym("<") => CmpOp::Lt,
                            Tok::Sym("<=") => CmpOp::Le,
                            Tok::Sym(">") => CmpOp::Gt,
                            Tok::Sym(">=") => CmpOp::Ge,
                            Tok::Sym("==") => CmpOp::Eq,
                            Tok::Sym("!=") => CmpOp::Ne,
                            _ => return Err(self.error(&["<", "<=", ">", ">=", "==", "!="])),
                        };
                        self.bump();
                        let b = self.expr()?;
                        self.expect(")")?;
                        Ok(Expr::Indicator(op, Box::new(a), Box::new(b)))
                    }
                    _ => Err(ParseError {
                        offset: here,
                        expected: vec![
                            "x".into(),
                            "pi".into(),
                            "exp".into(),
                            "log".into(),
                            "sqrt".into(),
                            "sin".into(),
                            "cos".into(),
                            "abs".into(),
                            "min".into(),
                            "max".into(),
                            "indicator".into(),
                        ],
                        found: format!("identifier `{name}`"),
                    }),
                }
            }
            _ => Err(self.error(START)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(src: &str, x: f64) -> f64 {
        Expr::parse(src).unwrap().eval(x).unwrap()
    }

    #[test]
    fn basic_examples() {
        assert_eq!(ev("0", 3.7), 0.0);
        assert_eq!(ev("2*x^2", 3.0), 18.0);
        assert!((ev("exp(-2*x)", 1.0) - 0.135_335_283_236_612_7).abs() < 1e-15);
        assert_eq!(ev("max(x,0)", -2.0), 0.0);
        assert_eq!(ev("x^2", -1.5), 2.25);
        assert_eq!(ev("x^2 * indicator(x < 0)", -2.0), 4.0);
        assert_eq!(ev("x^2 * indicator(x < 0)", 2.0), 0.0);
        assert!((ev("pi", 0.0) - std::f64::consts::PI).abs() < 1e-16);
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("-x^2", 3.0), -9.0);
        assert_eq!(ev("2^3^2", 0.0), 512.0);
        assert_eq!(ev("8-3-2", 0.0), 3.0);
        assert_eq!(ev("8/4/2", 0.0), 1.0);
        assert_eq!(ev("2*-x", 3.0), -6.0);
        assert_eq!(ev("x^-1", 4.0), 0.25);
        let e = Expr::parse("a_plus").unwrap_err();
        assert_eq!(e.offset, 0);
    }

    #[test]
    fn domain_errors() {
        let e = Expr::parse("x/x").unwrap().eval(0.0).unwrap_err();
        assert_eq!(e.subexpr, "(x / x)");
        assert!(Expr::parse("log(x)").unwrap().eval(-1.0).is_err());
        assert!(Expr::parse("sqrt(x)").unwrap().eval(-1.0).is_err());
        assert!(Expr::parse("x^0.5").unwrap().eval(-4.0).is_err());
        // infinities propagate
        assert_eq!(ev("exp(x)", 1e4), f64::INFINITY);
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        let e = Expr::parse("2 * (x + 1").unwrap_err();
        assert_eq!(e.offset, 10);
        assert!(e.expected.contains(&")".to_string()));
        let e = Expr::parse("2 $ x").unwrap_err();
        assert_eq!(e.offset, 2);
        assert!(Expr::parse("").is_err());
        assert!(Expr::parse("max(x)").is_err());
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0f64..10.0).prop_map(Expr::Const),
            Just(Expr::Var),
            (0u32..5).prop_map(|k| Expr::Const(k as f64)),
        ];
        leaf.prop_recursive(5, 40, 3, |inner| {
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                (
                    prop_oneof![
                        Just(BinOp::Add),
                        Just(BinOp::Sub),
                        Just(BinOp::Mul),
                        Just(BinOp::Div),
                        Just(BinOp::Pow)
                    ],
                    inner.clone(),
                    inner.clone()
                )
                    .prop_map(|(op, l, r)| Expr::Binary(op, Box::new(l), Box::new(r))),
                (
                    prop_oneof![
                        Just(Func1::Exp),
                        Just(Func1::Log),
                        Just(Func1::Sqrt),
                        Just(Func1::Sin),
                        Just(Func1::Cos),
                        Just(Func1::Abs)
                    ],
                    inner.clone()
                )
                    .prop_map(|(f, a)| Expr::Call1(f, Box::new(a))),
                (prop_oneof![Just(Func2::Min), Just(Func2::Max)], inner.clone(), inner.clone())
                    .prop_map(|(f, a, b)| Expr::Call2(f, Box::new(a), Box::new(b))),
                (prop_oneof![Just(CmpOp::Lt), Just(CmpOp::Ge), Just(CmpOp::Ne)], inner.clone(), inner)
                    .prop_map(|(op, a, b)| Expr::Indicator(op, Box::new(a), Box::new(b))),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn print_parse_roundtrip(e in arb_expr(), x in -5.0f64..5.0) {
            let reparsed = Expr::parse(&e.to_string()).unwrap();
            prop_assert_eq!(&reparsed, &e);
            match (e.eval(x), reparsed.eval(x)) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a.to_bits(), b.to_bits()),
                (Err(a), Err(b)) => prop_assert_eq!(a, b),
                _ => prop_assert!(false, "evaluation outcome differs"),
            }
        }

        #[test]
        fn sum_binds_looser_than_product(a in 0.0f64..9.0, b in 0.0f64..9.0, c in 0.0f64..9.0) {
            let src = format!("{a:?}+{b:?}*{c:?}");
            let expect = Expr::Binary(
                BinOp::Add,
                Box::new(Expr::Const(a)),
                Box::new(Expr::Binary(BinOp::Mul, Box::new(Expr::Const(b)), Box::new(Expr::Const(c)))),
            );
            prop_assert_eq!(Expr::parse(&src).unwrap(), expect);
        }
    }
}
