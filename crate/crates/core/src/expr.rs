//! Expression language used to describe frames, charts, maps and curves.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = "-" unary | power ;
//! power   = atom [ "^" unary ] ;            (* right-associative *)
//! atom    = number | ident | func "(" expr ")" | "(" expr ")" ;
//! func    = "sin" | "cos" | "exp" ;
//! number  = digit { digit } [ "." { digit } ] [ ("e" | "E") [ "+" | "-" ] digit { digit } ] ;
//! ```
//!
//! Exponents must fold to an integer constant at parse time, so `x ^ 2 ^ 3`
//! is stored as `x^8`.

use std::fmt;

use crate::error::{Error, Result};
use crate::jets::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => " + ",
            BinOp::Sub => " - ",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

/// Expression tree. Variables are indices into the declared variable list.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Func(Func, Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
}

// constructors named after the operators they build, not operator impls
#[allow(clippy::should_implement_trait)]
impl Expr {
    pub fn num(v: f64) -> Self {
        Expr::Num(v)
    }

    pub fn add(a: Expr, b: Expr) -> Self {
        Expr::Bin(BinOp::Add, Box::new(a), Box::new(b))
    }

    pub fn sub(a: Expr, b: Expr) -> Self {
        Expr::Bin(BinOp::Sub, Box::new(a), Box::new(b))
    }

    pub fn mul(a: Expr, b: Expr) -> Self {
        Expr::Bin(BinOp::Mul, Box::new(a), Box::new(b))
    }

    pub fn div(a: Expr, b: Expr) -> Self {
        Expr::Bin(BinOp::Div, Box::new(a), Box::new(b))
    }

    pub fn neg(a: Expr) -> Self {
        Expr::Neg(Box::new(a))
    }

    fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 0.0)
    }

    fn is_one(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 1.0)
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Num(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Neg(a) | Expr::Func(_, a) | Expr::Pow(a, _) => a.max_var(),
            Expr::Bin(_, a, b) => match (a.max_var(), b.max_var()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            },
        }
    }

    /// Evaluates the tree with `env[i]` bound to variable `i`.
    pub fn eval<S: Scalar>(&self, env: &[S]) -> Result<S> {
        Ok(match self {
            Expr::Num(v) => S::from_f64(*v),
            Expr::Var(i) => env.get(*i).cloned().ok_or(Error::UnboundVariable(*i))?,
            Expr::Neg(a) => -a.eval(env)?,
            Expr::Func(f, a) => {
                let x = a.eval(env)?;
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Exp => x.exp(),
                }
            }
            Expr::Bin(op, a, b) => {
                let x = a.eval(env)?;
                let y = b.eval(env)?;
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x.checked_div(&y)?,
                }
            }
            Expr::Pow(a, n) => a.eval(env)?.powi(*n)?,
        })
    }

    /// Symbolic partial derivative with respect to variable `var`, with
    /// trivial zero/one folding only.
    pub fn derivative(&self, var: usize) -> Expr {
        match self {
            Expr::Num(_) => Expr::Num(0.0),
            Expr::Var(i) => Expr::Num(if *i == var { 1.0 } else { 0.0 }),
            Expr::Neg(a) => {
                let da = a.derivative(var);
                if da.is_zero() {
                    da
                } else {
                    Expr::neg(da)
                }
            }
            Expr::Func(f, a) => {
                let da = a.derivative(var);
                if da.is_zero() {
                    return da;
                }
                let outer = match f {
                    Func::Sin => Expr::Func(Func::Cos, a.clone()),
                    Func::Cos => Expr::neg(Expr::Func(Func::Sin, a.clone())),
                    Func::Exp => self.clone(),
                };
                fold_mul(outer, da)
            }
            Expr::Bin(op, a, b) => {
                let da = a.derivative(var);
                let db = b.derivative(var);
                match op {
                    BinOp::Add => fold_add(da, db),
                    BinOp::Sub => fold_sub(da, db),
                    BinOp::Mul => fold_add(
                        fold_mul(da, (**b).clone()),
                        fold_mul((**a).clone(), db),
                    ),
                    BinOp::Div => {
                        // (a' b - a b') / b^2
                        let num = fold_sub(
                            fold_mul(da, (**b).clone()),
                            fold_mul((**a).clone(), db),
                        );
                        if num.is_zero() {
                            num
                        } else {
                            Expr::div(num, Expr::Pow(b.clone(), 2))
                        }
                    }
                }
            }
            Expr::Pow(a, n) => {
                let da = a.derivative(var);
                if da.is_zero() || *n == 0 {
                    return Expr::Num(0.0);
                }
                let outer = if *n == 1 {
                    Expr::Num(1.0)
                } else if *n == 2 {
                    fold_mul(Expr::Num(2.0), (**a).clone())
                } else {
                    fold_mul(Expr::Num(*n as f64), Expr::Pow(a.clone(), n - 1))
                };
                fold_mul(outer, da)
            }
        }
    }

    fn write(&self, f: &mut fmt::Formatter<'_>, names: &[String]) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(i) => match names.get(*i) {
                Some(n) => write!(f, "{n}"),
                None => write!(f, "${i}"),
            },
            Expr::Neg(a) => {
                write!(f, "-")?;
                // unary minus binds tighter than * and /, looser than ^
                let paren = matches!(**a, Expr::Bin(..) | Expr::Neg(_))
                    || matches!(**a, Expr::Num(v) if v.is_sign_negative());
                write_wrapped(f, a, names, paren)
            }
            Expr::Func(func, a) => {
                write!(f, "{}(", func.name())?;
                a.write(f, names)?;
                write!(f, ")")
            }
            Expr::Bin(op, a, b) => {
                let p = op.precedence();
                let left_paren = matches!(**a, Expr::Bin(o, ..) if o.precedence() < p);
                let right_paren = matches!(**b, Expr::Bin(o, ..) if o.precedence() <= p);
                write_wrapped(f, a, names, left_paren)?;
                write!(f, "{}", op.symbol())?;
                write_wrapped(f, b, names, right_paren)
            }
            Expr::Pow(a, n) => {
                let paren = match **a {
                    Expr::Var(_) | Expr::Func(..) => false,
                    Expr::Num(v) => v.is_sign_negative(),
                    _ => true,
                };
                write_wrapped(f, a, names, paren)?;
                if *n < 0 {
                    write!(f, "^({n})")
                } else {
                    write!(f, "^{n}")
                }
            }
        }
    }
}

fn write_wrapped(
    f: &mut fmt::Formatter<'_>,
    e: &Expr,
    names: &[String],
    paren: bool,
) -> fmt::Result {
    if paren {
        write!(f, "(")?;
        e.write(f, names)?;
        write!(f, ")")
    } else {
        e.write(f, names)
    }
}

fn fold_add(a: Expr, b: Expr) -> Expr {
    if a.is_zero() {
        b
    } else if b.is_zero() {
        a
    } else {
        Expr::add(a, b)
    }
}

fn fold_sub(a: Expr, b: Expr) -> Expr {
    if b.is_zero() {
        a
    } else if a.is_zero() {
        Expr::neg(b)
    } else {
        Expr::sub(a, b)
    }
}

fn fold_mul(a: Expr, b: Expr) -> Expr {
    if a.is_zero() || b.is_zero() {
        Expr::Num(0.0)
    } else if a.is_one() {
        b
    } else if b.is_one() {
        a
    } else {
        Expr::mul(a, b)
    }
}

/// A parsed expression together with the variable names it was parsed
/// against.
#[derive(Clone, Debug, PartialEq)]
pub struct Expression {
    root: Expr,
    vars: Vec<String>,
}

impl Expression {
    pub fn new(root: Expr, vars: Vec<String>) -> Result<Self> {
        if let Some(i) = root.max_var() {
            if i >= vars.len() {
                return Err(Error::UnboundVariable(i));
            }
        }
        Ok(Self { root, vars })
    }

    pub fn constant(v: f64, vars: &[String]) -> Self {
        Self {
            root: Expr::Num(v),
            vars: vars.to_vec(),
        }
    }

    pub fn root(&self) -> &Expr {
        &self.root
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn eval<S: Scalar>(&self, env: &[S]) -> Result<S> {
        self.root.eval(env)
    }

    pub fn derivative(&self, var: usize) -> Expression {
        Expression {
            root: self.root.derivative(var),
            vars: self.vars.clone(),
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.write(f, &self.vars)
    }
}

/// Parses `text` against the declared variable list.
pub fn parse_expr(text: &str, vars: &[&str]) -> Result<Expression> {
    let names: Vec<String> = vars.iter().map(|s| s.to_string()).collect();
    parse_at(text, &names, 1, 1)
}

/// Evaluates an expression on jets (or any scalar); `env[i]` binds variable
/// `i`.
pub fn eval_jet<S: Scalar>(e: &Expression, env: &[S]) -> Result<S> {
    e.eval(env)
}

/// Parses with positions reported relative to `(line, column)` of the first
/// character of `text`.
pub(crate) fn parse_at(
    text: &str,
    vars: &[String],
    line: usize,
    column: usize,
) -> Result<Expression> {
    let tokens = tokenize(text, line, column)?;
    let end = match tokens.last() {
        Some(t) => t.end,
        None => (line, column),
    };
    let mut p = Parser {
        tokens,
        pos: 0,
        vars,
        end,
    };
    let root = p.expr()?;
    if let Some(t) = p.peek() {
        return Err(syntax(t.start, format!("unexpected {}", t.kind.describe())));
    }
    Ok(Expression {
        root,
        vars: vars.to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
        }
    }
}

#[derive(Clone, Debug)]
struct Token {
    kind: Tok,
    start: (usize, usize),
    end: (usize, usize),
}

fn syntax(at: (usize, usize), message: String) -> Error {
    Error::Syntax {
        line: at.0,
        column: at.1,
        message,
    }
}

fn tokenize(text: &str, line0: usize, col0: usize) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut line, mut col) = (line0, col0);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = (line, col);
        if c == '\n' {
            line += 1;
            col = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        let single = match c {
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '^' => Some(Tok::Caret),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(kind) = single {
            i += 1;
            col += 1;
            out.push(Token {
                kind,
                start,
                end: (line, col),
            });
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let begin = i;
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
            let lexeme: String = chars[begin..i].iter().collect();
            col += i - begin;
            let v: f64 = lexeme
                .parse()
                .map_err(|_| syntax(start, format!("malformed number `{lexeme}`")))?;
            out.push(Token {
                kind: Tok::Num(v),
                start,
                end: (line, col),
            });
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let begin = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - begin;
            out.push(Token {
                kind: Tok::Ident(chars[begin..i].iter().collect()),
                start,
                end: (line, col),
            });
            continue;
        }
        return Err(syntax(start, format!("unexpected character `{c}`")));
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    vars: &'a [String],
    end: (usize, usize),
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn eat(&mut self, kind: &Tok) -> bool {
        if self.peek().map(|t| &t.kind) == Some(kind) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().map(|t| &t.kind) {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().map(|t| &t.kind) {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(&Tok::Minus) {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if let Some(caret) = self.peek().filter(|t| t.kind == Tok::Caret).cloned() {
            self.pos += 1;
            let exponent_start = self.peek().map(|t| t.start).unwrap_or(caret.end);
            let exponent = self.unary()?;
            let n = fold_integer(&exponent).ok_or(Error::NonIntegerExponent {
                line: exponent_start.0,
                column: exponent_start.1,
            })?;
            return Ok(Expr::Pow(Box::new(base), n));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let Some(tok) = self.next() else {
            return Err(syntax(self.end, "unexpected end of expression".into()));
        };
        match tok.kind {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect_rparen(tok.start)?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let func = match name.as_str() {
                    "sin" => Some(Func::Sin),
                    "cos" => Some(Func::Cos),
                    "exp" => Some(Func::Exp),
                    _ => None,
                };
                if let Some(func) = func {
                    let open = self.next();
                    if !matches!(open.as_ref().map(|t| &t.kind), Some(Tok::LParen)) {
                        let at = open.map(|t| t.start).unwrap_or(self.end);
                        return Err(syntax(at, format!("expected `(` after `{name}`")));
                    }
                    let arg = self.expr()?;
                    self.expect_rparen(tok.start)?;
                    return Ok(Expr::Func(func, Box::new(arg)));
                }
                match self.vars.iter().position(|v| *v == name) {
                    Some(i) => Ok(Expr::Var(i)),
                    None => Err(Error::UnknownIdentifier {
                        name,
                        line: tok.start.0,
                        column: tok.start.1,
                    }),
                }
            }
            other => Err(syntax(tok.start, format!("unexpected {}", other.describe()))),
        }
    }

    fn expect_rparen(&mut self, opened_at: (usize, usize)) -> Result<()> {
        match self.next() {
            Some(t) if t.kind == Tok::RParen => Ok(()),
            Some(t) => Err(syntax(t.start, format!("expected `)`, found {}", t.kind.describe()))),
            None => Err(syntax(
                self.end,
                format!(
                    "unclosed `(` opened at line {}, column {}",
                    opened_at.0, opened_at.1
                ),
            )),
        }
    }
}

/// Folds a variable-free exponent to an integer.
fn fold_integer(e: &Expr) -> Option<i32> {
    if e.max_var().is_some() {
        return None;
    }
    let v: f64 = e.eval::<f64>(&[]).ok()?;
    if v.is_finite() && v.fract() == 0.0 && v.abs() <= i32::MAX as f64 {
        Some(v as i32)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jets::seed;

    fn p(text: &str, vars: &[&str]) -> Expr {
        parse_expr(text, vars).unwrap().root
    }

    #[test]
    fn grammar_shapes() {
        assert_eq!(
            p("x + 2*y", &["x", "y"]),
            Expr::add(Expr::Var(0), Expr::mul(Expr::Num(2.0), Expr::Var(1)))
        );
        assert_eq!(
            p("-y/2", &["x", "y", "z"]),
            Expr::div(Expr::neg(Expr::Var(1)), Expr::Num(2.0))
        );
    }

    #[test]
    fn negation_binds_looser_than_power() {
        assert_eq!(
            p("-x^2", &["x"]),
            Expr::neg(Expr::Pow(Box::new(Expr::Var(0)), 2))
        );
    }

    #[test]
    fn power_is_right_associative() {
        let e = parse_expr("x ^ 2 ^ 3", &["x"]).unwrap();
        assert_eq!(e.root, Expr::Pow(Box::new(Expr::Var(0)), 8));
        assert_eq!(e.eval(&[2.0_f64]).unwrap(), 256.0);
        assert_eq!(e.to_string(), "x^8");
    }

    #[test]
    fn exponent_must_be_integer_constant() {
        assert!(matches!(
            parse_expr("x^1.5", &["x"]),
            Err(Error::NonIntegerExponent { line: 1, column: 3 })
        ));
        assert!(matches!(
            parse_expr("x^y", &["x", "y"]),
            Err(Error::NonIntegerExponent { .. })
        ));
        assert_eq!(p("x^-1", &["x"]), Expr::Pow(Box::new(Expr::Var(0)), -1));
    }

    #[test]
    fn errors_are_positioned() {
        assert_eq!(
            parse_expr("x + * y", &["x", "y"]).unwrap_err(),
            Error::Syntax {
                line: 1,
                column: 5,
                message: "unexpected `*`".into()
            }
        );
        assert_eq!(
            parse_expr("x + w", &["x"]).unwrap_err(),
            Error::UnknownIdentifier {
                name: "w".into(),
                line: 1,
                column: 5
            }
        );
        assert!(matches!(
            parse_expr("sin(x", &["x"]),
            Err(Error::Syntax { column: 6, .. })
        ));
        assert!(matches!(parse_expr("", &["x"]), Err(Error::Syntax { .. })));
        assert!(matches!(
            parse_expr("x $ 2", &["x"]),
            Err(Error::Syntax { column: 3, .. })
        ));
    }

    #[test]
    fn eval_on_jets() {
        let e = parse_expr("x*y", &["x", "y"]).unwrap();
        let j = eval_jet(&e, &seed(&[1.0, 2.0])).unwrap();
        assert_eq!(j.value(), 2.0);
        assert_eq!(j.grad(2), vec![2.0, 1.0]);

        let e = parse_expr("z + x^2", &["x", "y", "z"]).unwrap();
        let j = eval_jet(&e, &seed(&[0.0, 0.0, 0.0])).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let expected = if a == 0 && b == 0 { 2.0 } else { 0.0 };
                assert_eq!(j.d2(a, b), expected);
            }
        }

        let e = parse_expr("5", &["x"]).unwrap();
        let j = eval_jet(&e, &seed(&[0.7])).unwrap();
        assert_eq!((j.value(), j.d(0), j.d2(0, 0)), (5.0, 0.0, 0.0));
    }

    #[test]
    fn unbound_variable() {
        let e = parse_expr("x + y", &["x", "y"]).unwrap();
        assert_eq!(e.eval(&[1.0_f64]), Err(Error::UnboundVariable(1)));
    }

    #[test]
    fn division_by_zero_propagates() {
        let e = parse_expr("1/x", &["x"]).unwrap();
        assert!(matches!(e.eval(&[0.0_f64]), Err(Error::DivisionByZero(_))));
    }

    #[test]
    fn printing_is_canonical() {
        for (src, printed) in [
            ("a - (b - c)", "a - (b - c)"),
            ("(a - b) - c", "a - b - c"),
            ("a / (b * c)", "a/(b*c)"),
            ("-(a*b)", "-(a*b)"),
            ("(-a)*b", "-a*b"),
            ("(a + b)^2", "(a + b)^2"),
            ("sin(a)^3", "sin(a)^3"),
            ("2.5e-3 * a", "0.0025*a"),
            ("--a", "-(-a)"),
        ] {
            let e = parse_expr(src, &["a", "b", "c"]).unwrap();
            assert_eq!(e.to_string(), printed, "{src}");
            let again = parse_expr(&e.to_string(), &["a", "b", "c"]).unwrap();
            assert_eq!(again, e, "{src}");
        }
    }

    #[test]
    fn symbolic_derivative_matches_jets() {
        let vars = ["x", "y", "z"];
        let e = parse_expr("sin(x*y) + exp(z)/(1 + x^2) - cos(y)^3", &vars).unwrap();
        let pt = [0.3, -0.7, 0.2];
        let j = e.eval(&seed(&pt)).unwrap();
        for v in 0..3 {
            let d = e.derivative(v).eval(&pt).unwrap();
            assert!((d - j.d(v)).abs() < 1e-13, "var {v}: {d} vs {}", j.d(v));
        }
    }
}
