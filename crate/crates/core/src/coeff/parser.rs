//! Recursive-descent parser for coefficient expressions.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' '-'? INTEGER)*
//! primary := NUMBER | 't' | 'x' INDEX | FUNC '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! `FUNC` is one of `sin cos exp tanh abs` (one argument) or `min max` (two arguments).

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Tanh,
    Abs,
    Min,
    Max,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "tanh" => Func::Tanh,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Tanh => "tanh",
            Func::Abs => "abs",
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
}

/// Expression tree. Variables are `t` and `x1 … xd`; `Var(i)` is zero-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Time,
    Var(usize),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnknownIdentifier(String),
    WrongArity {
        func: &'static str,
        expected: usize,
        got: usize,
    },
    UnexpectedChar(char),
    UnexpectedToken(String),
    UnexpectedEnd,
    NonIntegerExponent,
    InvalidNumber(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at offset {offset}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub offset: usize,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::UnknownIdentifier(s) => write!(f, "unknown identifier '{s}'"),
            ParseErrorKind::WrongArity {
                func,
                expected,
                got,
            } => {
                write!(f, "{func} takes {expected} argument(s), got {got}")
            }
            ParseErrorKind::UnexpectedChar(c) => write!(f, "unexpected character '{c}'"),
            ParseErrorKind::UnexpectedToken(s) => write!(f, "unexpected '{s}'"),
            ParseErrorKind::UnexpectedEnd => write!(f, "unexpected end of input"),
            ParseErrorKind::NonIntegerExponent => write!(f, "exponent must be an integer literal"),
            ParseErrorKind::InvalidNumber(s) => write!(f, "invalid number '{s}'"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EvalErrorKind {
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-finite result")]
    NonFinite,
    #[error("variable x{0} out of range")]
    VariableOutOfRange(usize),
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

fn tokenize(src: &str) -> Result<Vec<(Token, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
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
            out.push((Token::Num(value), start));
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Token::Ident(src[start..i].to_string()), start));
        } else {
            let tok = match c {
                '+' | '-' | '*' | '/' | '^' => Token::Op(c),
                '(' => Token::LParen,
                ')' => Token::RParen,
                ',' => Token::Comma,
                _ => {
                    let ch = src[start..].chars().next().unwrap_or(c);
                    return Err(ParseError {
                        kind: ParseErrorKind::UnexpectedChar(ch),
                        offset: start,
                    });
                }
            };
            i += 1;
            out.push((tok, start));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<(Token, usize)>,
    pos: usize,
    dim: usize,
    src: &'a str,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|(_, o)| *o)
            .unwrap_or(self.src.len())
    }

    fn error<T>(&self, kind: ParseErrorKind) -> Result<T, ParseError> {
        Err(ParseError {
            kind,
            offset: self.offset(),
        })
    }

    fn unexpected<T>(&self) -> Result<T, ParseError> {
        match self.peek() {
            None => self.error(ParseErrorKind::UnexpectedEnd),
            Some(tok) => self.error(ParseErrorKind::UnexpectedToken(token_text(tok))),
        }
    }

    fn expect(&mut self, want: Token) -> Result<(), ParseError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            self.unexpected()
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Token::Op('+')) => BinOp::Add,
                Some(Token::Op('-')) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Token::Op('*')) => BinOp::Mul,
                Some(Token::Op('/')) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Some(&Token::Op('-')) {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let mut base = self.primary()?;
        while self.peek() == Some(&Token::Op('^')) {
            self.pos += 1;
            let negative = if self.peek() == Some(&Token::Op('-')) {
                self.pos += 1;
                true
            } else {
                false
            };
            let offset = self.offset();
            match self.peek() {
                Some(&Token::Num(v))
                    if is_integer_literal(&self.src[offset..]) && v.abs() <= i32::MAX as f64 =>
                {
                    self.pos += 1;
                    let k = v as i32;
                    base = Expr::Pow(Box::new(base), if negative { -k } else { k });
                }
                Some(Token::Num(_)) => return self.error(ParseErrorKind::NonIntegerExponent),
                _ => return self.unexpected(),
            }
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let offset = self.offset();
        match self.peek().cloned() {
            Some(Token::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Token::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(e)
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                if let Some(func) = Func::from_name(&name) {
                    self.expect(Token::LParen)?;
                    let mut args = vec![self.expr()?];
                    while self.peek() == Some(&Token::Comma) {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect(Token::RParen)?;
                    if args.len() != func.arity() {
                        return Err(ParseError {
                            kind: ParseErrorKind::WrongArity {
                                func: func.name(),
                                expected: func.arity(),
                                got: args.len(),
                            },
                            offset,
                        });
                    }
                    return Ok(Expr::Call(func, args));
                }
                if name == "t" {
                    return Ok(Expr::Time);
                }
                if let Some(idx) = variable_index(&name) {
                    if idx >= 1 && idx <= self.dim {
                        return Ok(Expr::Var(idx - 1));
                    }
                }
                Err(ParseError {
                    kind: ParseErrorKind::UnknownIdentifier(name),
                    offset,
                })
            }
            _ => self.unexpected(),
        }
    }
}

fn variable_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
        return None;
    }
    digits.parse().ok()
}

fn is_integer_literal(rest: &str) -> bool {
    let len = rest.bytes().take_while(|b| b.is_ascii_digit()).count();
    len > 0
        && !rest[len..]
            .bytes()
            .next()
            .is_some_and(|b| b == b'.' || b == b'e' || b == b'E')
}

fn token_text(tok: &Token) -> String {
    match tok {
        Token::Num(v) => v.to_string(),
        Token::Ident(s) => s.clone(),
        Token::Op(c) => c.to_string(),
        Token::LParen => "(".into(),
        Token::RParen => ")".into(),
        Token::Comma => ",".into(),
    }
}

/// Parses `source` as an expression in `t, x1, …, x{dim}`.
pub fn parse_expr(source: &str, dim: usize) -> Result<Expr, ParseError> {
    let tokens = tokenize(source)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        dim,
        src: source,
    };
    let e = p.expr()?;
    if p.pos != p.tokens.len() {
        return p.unexpected();
    }
    Ok(e)
}

impl Expr {
    pub fn eval(&self, t: f64, x: &[f64]) -> Result<f64, EvalErrorKind> {
        let v = self.eval_inner(t, x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalErrorKind::NonFinite)
        }
    }

    fn eval_inner(&self, t: f64, x: &[f64]) -> Result<f64, EvalErrorKind> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Time => t,
            Expr::Var(i) => *x.get(*i).ok_or(EvalErrorKind::VariableOutOfRange(i + 1))?,
            Expr::Neg(e) => -e.eval_inner(t, x)?,
            Expr::Binary(op, a, b) => {
                let a = a.eval_inner(t, x)?;
                let b = b.eval_inner(t, x)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(EvalErrorKind::DivisionByZero);
                        }
                        a / b
                    }
                }
            }
            Expr::Pow(e, k) => {
                let base = e.eval_inner(t, x)?;
                if base == 0.0 && *k < 0 {
                    return Err(EvalErrorKind::DivisionByZero);
                }
                base.powi(*k)
            }
            Expr::Call(func, args) => {
                let a = args[0].eval_inner(t, x)?;
                match func {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Tanh => a.tanh(),
                    Func::Abs => a.abs(),
                    Func::Min => a.min(args[1].eval_inner(t, x)?),
                    Func::Max => a.max(args[1].eval_inner(t, x)?),
                }
            }
        })
    }

    /// True if the expression does not reference `t` or any coordinate.
    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Num(_) => true,
            Expr::Time | Expr::Var(_) => false,
            Expr::Neg(e) | Expr::Pow(e, _) => e.is_constant(),
            Expr::Binary(_, a, b) => a.is_constant() && b.is_constant(),
            Expr::Call(_, args) => args.iter().all(Expr::is_constant),
        }
    }

    /// True if `t` appears anywhere in the expression.
    pub fn uses_time(&self) -> bool {
        match self {
            Expr::Time => true,
            Expr::Num(_) | Expr::Var(_) => false,
            Expr::Neg(e) | Expr::Pow(e, _) => e.uses_time(),
            Expr::Binary(_, a, b) => a.uses_time() || b.uses_time(),
            Expr::Call(_, args) => args.iter().any(Expr::uses_time),
        }
    }

    /// Largest referenced coordinate index (one-based), 0 if none.
    pub fn max_variable(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Time => 0,
            Expr::Var(i) => i + 1,
            Expr::Neg(e) | Expr::Pow(e, _) => e.max_variable(),
            Expr::Binary(_, a, b) => a.max_variable().max(b.max_variable()),
            Expr::Call(_, args) => args.iter().map(Expr::max_variable).max().unwrap_or(0),
        }
    }
}

/// Fully parenthesized form; parsing the output reproduces the tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Time => write!(f, "t"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Pow(e, k) => write!(f, "({e}^{k})"),
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

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eval(src: &str, t: f64, x: &[f64]) -> f64 {
        parse_expr(src, x.len()).unwrap().eval(t, x).unwrap()
    }

    #[test]
    fn parse_examples() {
        assert_eq!(eval("1 + 0.5*sin(x2)", 0.0, &[0.0, 0.0]), 1.0);
        assert_eq!(eval("2+3*t", 2.0, &[0.0]), 8.0);
        let err = parse_expr("x3", 2).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnknownIdentifier("x3".into()));
        assert_eq!(err.offset, 0);
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(eval("-2^2", 0.0, &[]), -4.0);
        assert_eq!(eval("2*-3", 0.0, &[]), -6.0);
        assert_eq!(eval("8/4/2", 0.0, &[]), 1.0);
        assert_eq!(eval("8-4-2", 0.0, &[]), 2.0);
        assert_eq!(eval("2^3^2", 0.0, &[]), 64.0);
        assert_eq!(eval("2^-2", 0.0, &[]), 0.25);
        assert_eq!(eval(" ( 1+2 ) * 3 ", 0.0, &[]), 9.0);
        assert_eq!(eval("max(1, x1) + min(t, 2)", 5.0, &[3.0]), 5.0);
        assert_eq!(eval("1.5e2 + 2E-1", 0.0, &[]), 150.2);
    }

    #[test]
    fn parse_errors_carry_offsets() {
        let e = parse_expr("1 + sin(x1, x2)", 2).unwrap_err();
        assert_eq!(e.offset, 4);
        assert!(matches!(
            e.kind,
            ParseErrorKind::WrongArity {
                func: "sin",
                expected: 1,
                got: 2
            }
        ));
        let e = parse_expr("max(1)", 1).unwrap_err();
        assert!(matches!(
            e.kind,
            ParseErrorKind::WrongArity { func: "max", .. }
        ));
        let e = parse_expr("x1^2.5", 1).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::NonIntegerExponent);
        assert_eq!(e.offset, 3);
        let e = parse_expr("1 +", 1).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnexpectedEnd);
        assert_eq!(e.offset, 3);
        let e = parse_expr("1 $ 2", 1).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnexpectedChar('$'));
        assert_eq!(e.offset, 2);
        let e = parse_expr("(1 + 2", 1).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnexpectedEnd);
        let e = parse_expr("1 2", 1).unwrap_err();
        assert_eq!(e.offset, 2);
        let e = parse_expr("x0 + y", 1).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownIdentifier("x0".into()));
    }

    #[test]
    fn evaluation_errors() {
        let e = parse_expr("1/x1", 1).unwrap();
        assert_eq!(e.eval(0.0, &[0.0]), Err(EvalErrorKind::DivisionByZero));
        let e = parse_expr("x1^-1", 1).unwrap();
        assert_eq!(e.eval(0.0, &[0.0]), Err(EvalErrorKind::DivisionByZero));
        let e = parse_expr("exp(exp(x1))", 1).unwrap();
        assert_eq!(e.eval(0.0, &[10.0]), Err(EvalErrorKind::NonFinite));
    }

    fn arb_expr(dim: usize) -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0..10.0f64).prop_map(Expr::Num),
            Just(Expr::Time),
            (0..dim).prop_map(Expr::Var),
        ];
        leaf.prop_recursive(5, 40, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                (inner.clone(), inner.clone(), 0..3usize).prop_map(|(a, b, k)| {
                    let op = [BinOp::Add, BinOp::Sub, BinOp::Mul][k];
                    Expr::Binary(op, Box::new(a), Box::new(b))
                }),
                (inner.clone(), 0..4i32).prop_map(|(e, k)| Expr::Pow(Box::new(e), k)),
                (inner.clone(), 0..5usize).prop_map(|(e, k)| {
                    let f = [Func::Sin, Func::Cos, Func::Tanh, Func::Abs, Func::Exp][k];
                    let arg = if f == Func::Exp {
                        Expr::Call(Func::Tanh, vec![e])
                    } else {
                        e
                    };
                    Expr::Call(f, vec![arg])
                }),
                (inner.clone(), inner, any::<bool>()).prop_map(|(a, b, m)| {
                    Expr::Call(if m { Func::Min } else { Func::Max }, vec![a, b])
                }),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(e in arb_expr(3), pts in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64), 50)) {
            let printed = e.to_string();
            let reparsed = parse_expr(&printed, 3).unwrap();
            prop_assert_eq!(&reparsed, &e);
            for (t, a, b, c) in pts {
                let x = [a, b, c];
                match (e.eval(t, &x), reparsed.eval(t, &x)) {
                    (Ok(u), Ok(v)) => prop_assert!(u == v || (u - v).abs() <= 1e-15 * u.abs()),
                    (Err(u), Err(v)) => prop_assert_eq!(u, v),
                    other => prop_assert!(false, "mismatch {:?}", other),
                }
            }
        }
    }
}
