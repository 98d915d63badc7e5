//! Arithmetic expressions in the variables `x1..xn`.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?          // right associative
//! atom    := number | variable | func '(' args ')' | '(' sum ')'
//! ```
//!
//! `x` is accepted as an alias for `x1` when the arity is 1.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::dual::{Dual, Scalar};
use crate::error::{LabError, Result};
use crate::functionals::TestFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Abs,
    Sqrt,
    Min,
    Max,
}

impl Func {
    const ALL: [Func; 8] = [
        Func::Exp,
        Func::Log,
        Func::Sin,
        Func::Cos,
        Func::Abs,
        Func::Sqrt,
        Func::Min,
        Func::Max,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Func::ALL.iter().copied().find(|f| f.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Ast {
    Num(f64),
    /// Zero-based variable index.
    Var(usize),
    Neg(Box<Ast>),
    Bin(BinOp, Box<Ast>, Box<Ast>),
    Call(Func, Vec<Ast>),
}

impl Ast {
    pub fn eval<S: Scalar>(&self, x: &[S]) -> S {
        match self {
            Ast::Num(v) => S::constant(*v),
            Ast::Var(i) => x[*i],
            Ast::Neg(a) => -a.eval(x),
            Ast::Bin(op, a, b) => {
                let (a, b) = (a.eval(x), b.eval(x));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.pow(b),
                }
            }
            Ast::Call(f, args) => {
                let a = args[0].eval(x);
                match f {
                    Func::Exp => a.exp(),
                    Func::Log => a.ln(),
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Abs => a.abs(),
                    Func::Sqrt => a.sqrt(),
                    Func::Min => a.min(args[1].eval(x)),
                    Func::Max => a.max(args[1].eval(x)),
                }
            }
        }
    }

    /// Largest variable index used, plus one.
    pub fn max_var(&self) -> usize {
        match self {
            Ast::Num(_) => 0,
            Ast::Var(i) => i + 1,
            Ast::Neg(a) => a.max_var(),
            Ast::Bin(_, a, b) => a.max_var().max(b.max_var()),
            Ast::Call(_, args) => args.iter().map(Ast::max_var).max().unwrap_or(0),
        }
    }
}

/// Fully parenthesised rendering; numbers use the shortest round-trip form.
impl fmt::Display for Ast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ast::Num(v) => write!(f, "{v:?}"),
            Ast::Var(i) => write!(f, "x{}", i + 1),
            Ast::Neg(a) => write!(f, "(-{a})"),
            Ast::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Ast::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// A parsed expression together with its source and declared arity.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    pub source: String,
    pub arity: usize,
    pub ast: Ast,
}

impl Expression {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.ast.eval(x)
    }

    /// Gradient by one forward pass per coordinate.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.gradient_into(x, &mut out);
        out
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let mut duals: Vec<Dual> = x.iter().map(|&v| Dual::constant(v)).collect();
        for i in 0..x.len() {
            duals[i].d = 1.0;
            out[i] = self.ast.eval(&duals).d;
            duals[i].d = 0.0;
        }
    }

    /// Wraps the expression as a [`TestFunction`] with its dual-number
    /// gradient; the gradient is validated against central differences.
    pub fn to_test_function(&self) -> Result<TestFunction> {
        let e = Arc::new(self.clone());
        let g = e.clone();
        TestFunction::new(
            self.source.clone(),
            self.arity,
            move |x: &[f64]| e.eval(x),
            Some(move |x: &[f64], out: &mut [f64]| g.gradient_into(x, out)),
        )
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.ast.fmt(f)
    }
}

pub fn parse_expression(src: &str, arity: usize) -> Result<Expression> {
    if arity == 0 {
        return Err(LabError::domain("expression arity must be >= 1"));
    }
    let mut p = Parser {
        src: src.as_bytes(),
        pos: 0,
        arity,
    };
    p.skip_ws();
    if p.pos == p.src.len() {
        return Err(p.error("expression"));
    }
    let ast = p.sum()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("operator or end of input"));
    }
    Ok(Expression {
        source: src.to_string(),
        arity,
        ast,
    })
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    arity: usize,
}

const ATOM_START: &str = "number, variable, function name, '(' or '-'";

impl Parser<'_> {
    fn error(&self, expected: &str) -> LabError {
        LabError::Parse {
            offset: self.pos,
            expected: expected.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("'{}'", c as char)))
        }
    }

    fn sum(&mut self) -> Result<Ast> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.product()?;
            lhs = Ast::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Ast> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Ast::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Ast> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Ast::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Ast> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Ast::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Ast> {
        match self.peek() {
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.word(),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.sum()?;
                self.expect(b')')?;
                Ok(inner)
            }
            _ => Err(self.error(ATOM_START)),
        }
    }

    fn number(&mut self) -> Result<Ast> {
        let start = self.pos;
        let s = self.src;
        let mut i = self.pos;
        while i < s.len() && (s[i].is_ascii_digit() || s[i] == b'.') {
            i += 1;
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if j < s.len() && s[j].is_ascii_digit() {
                while j < s.len() && s[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = std::str::from_utf8(&s[start..i]).expect("ascii slice");
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => {
                self.pos = i;
                Ok(Ast::Num(v))
            }
            _ => Err(self.error("finite number")),
        }
    }

    fn word(&mut self) -> Result<Ast> {
        let start = self.pos;
        let s = self.src;
        let mut i = self.pos;
        while i < s.len() && s[i].is_ascii_alphanumeric() {
            i += 1;
        }
        let word = std::str::from_utf8(&s[start..i]).expect("ascii slice");
        if word == "x" {
            if self.arity != 1 {
                return Err(LabError::Arity {
                    index: 0,
                    arity: self.arity,
                });
            }
            self.pos = i;
            return Ok(Ast::Var(0));
        }
        if let Some(digits) = word.strip_prefix('x') {
            if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                let index: usize = digits.parse().map_err(|_| self.error("variable index"))?;
                if index == 0 || index > self.arity {
                    return Err(LabError::Arity {
                        index,
                        arity: self.arity,
                    });
                }
                self.pos = i;
                return Ok(Ast::Var(index - 1));
            }
        }
        let Some(func) = Func::from_name(word) else {
            return Err(self.error("variable x1..xn or one of exp, log, sin, cos, abs, sqrt, min, max"));
        };
        self.pos = i;
        self.expect(b'(')?;
        let mut args = vec![self.sum()?];
        while args.len() < func.arity() {
            self.expect(b',')?;
            args.push(self.sum()?);
        }
        self.expect(b')')?;
        Ok(Ast::Call(func, args))
    }
}

/// Random source text for a smooth, everywhere-defined expression: only
/// `+ - *`, squares, `sin`, `cos` and a bounded `exp`.
pub fn random_smooth_source<R: Rng + ?Sized>(rng: &mut R, arity: usize, depth: u32) -> String {
    if depth == 0 || rng.random_bool(0.25) {
        return if rng.random_bool(0.6) {
            if arity == 1 {
                "x".to_string()
            } else {
                format!("x{}", rng.random_range(1..=arity))
            }
        } else {
            format!("{:.3}", rng.random_range(0.1..3.0))
        };
    }
    let a = random_smooth_source(rng, arity, depth - 1);
    match rng.random_range(0..7) {
        0 => format!("({a} + {})", random_smooth_source(rng, arity, depth - 1)),
        1 => format!("({a} - {})", random_smooth_source(rng, arity, depth - 1)),
        2 => format!("({a} * {})", random_smooth_source(rng, arity, depth - 1)),
        3 => format!("sin({a})"),
        4 => format!("cos({a})"),
        5 => format!("exp(-0.1*({a})^2)"),
        _ => format!("({a})^2"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let e = parse_expression("-2^2", 1).unwrap();
        assert_eq!(e.eval(&[0.0]), -4.0);
        let e = parse_expression("2^3^2", 1).unwrap();
        assert_eq!(e.eval(&[0.0]), 512.0);
        let e = parse_expression("2^-1", 1).unwrap();
        assert_eq!(e.eval(&[0.0]), 0.5);
        let e = parse_expression("1 - 2 - 3 * 4 / 2", 1).unwrap();
        assert_eq!(e.eval(&[0.0]), -7.0);
    }

    #[test]
    fn sine_example() {
        let e = parse_expression("1+0.5*sin(x)", 1).unwrap();
        assert_eq!(e.eval(&[0.0]), 1.0);
    }

    #[test]
    fn polynomial_gradient() {
        let e = parse_expression("x1^2+x2^2", 2).unwrap();
        assert_eq!(e.gradient(&[1.0, 1.0]), vec![2.0, 2.0]);
    }

    #[test]
    fn max_abs_sqrt() {
        let e = parse_expression("max(1, abs(x)^0.5)", 1).unwrap();
        assert_eq!(e.eval(&[0.25]), 1.0);
        assert!((e.eval(&[2.0]) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn errors_carry_offsets() {
        match parse_expression("1 + * x", 1) {
            Err(LabError::Parse { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
        match parse_expression("sin(x", 1) {
            Err(LabError::Parse { offset, expected }) => {
                assert_eq!(offset, 5);
                assert!(expected.contains(')'));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_expression("x3", 2), Err(LabError::Arity { index: 3, arity: 2 })));
        assert!(matches!(parse_expression("x", 2), Err(LabError::Arity { .. })));
        assert!(matches!(parse_expression("", 1), Err(LabError::Parse { offset: 0, .. })));
        assert!(matches!(parse_expression("foo(x)", 1), Err(LabError::Parse { offset: 0, .. })));
        assert!(matches!(parse_expression("1e999", 1), Err(LabError::Parse { .. })));
    }

    #[test]
    fn print_reparses() {
        let e = parse_expression("-x^2 - 3e-5*min(x, 2)/(1+exp(-x))", 1).unwrap();
        let again = parse_expression(&e.to_string(), 1).unwrap();
        assert_eq!(e.ast, again.ast);
    }
}
