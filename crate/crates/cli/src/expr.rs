//! Arithmetic expressions for coefficient strings.
//!
//! Grammar: identifiers `x` (first coordinate) and `y` (solution value),
//! numeric literals, `+ - * / ^` (with `×` and `÷` as aliases), unary minus,
//! parentheses and the functions `sin cos exp abs min max clamp`.

use std::fmt;
use std::sync::Arc;

use fklab_core::{CoefFn, SpatialFn};

#[derive(Clone, Debug, PartialEq)]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at character {}: {}", self.position, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Abs,
    Min,
    Max,
    Clamp,
}

impl Func {
    fn lookup(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Self::Sin,
            "cos" => Self::Cos,
            "exp" => Self::Exp,
            "abs" => Self::Abs,
            "min" => Self::Min,
            "max" => Self::Max,
            "clamp" => Self::Clamp,
            _ => return None,
        })
    }

    fn arity(self) -> usize {
        match self {
            Self::Sin | Self::Cos | Self::Exp | Self::Abs => 1,
            Self::Min | Self::Max => 2,
            Self::Clamp => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Num(f64),
    X,
    Y,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    /// Integer exponent, evaluated with `powi`.
    PowI(Box<Node>, i32),
    Call(Func, Vec<Node>),
}

impl Node {
    fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Node::Num(c) => *c,
            Node::X => x,
            Node::Y => y,
            Node::Neg(a) => -a.eval(x, y),
            Node::Add(a, b) => a.eval(x, y) + b.eval(x, y),
            Node::Sub(a, b) => a.eval(x, y) - b.eval(x, y),
            Node::Mul(a, b) => a.eval(x, y) * b.eval(x, y),
            Node::Div(a, b) => a.eval(x, y) / b.eval(x, y),
            Node::Pow(a, b) => a.eval(x, y).powf(b.eval(x, y)),
            Node::PowI(a, n) => a.eval(x, y).powi(*n),
            Node::Call(f, args) => {
                let a = args[0].eval(x, y);
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Abs => a.abs(),
                    Func::Min => a.min(args[1].eval(x, y)),
                    Func::Max => a.max(args[1].eval(x, y)),
                    Func::Clamp => a.max(args[1].eval(x, y)).min(args[2].eval(x, y)),
                }
            }
        }
    }

    fn uses(&self, var: &Node) -> bool {
        match self {
            Node::Num(_) => false,
            Node::X | Node::Y => self == var,
            Node::Neg(a) | Node::PowI(a, _) => a.uses(var),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                a.uses(var) || b.uses(var)
            }
            Node::Call(_, args) => args.iter().any(|a| a.uses(var)),
        }
    }

    /// Folds constant subtrees.
    fn fold(self) -> Node {
        let node = match self {
            Node::Neg(a) => Node::Neg(Box::new(a.fold())),
            Node::Add(a, b) => Node::Add(Box::new(a.fold()), Box::new(b.fold())),
            Node::Sub(a, b) => Node::Sub(Box::new(a.fold()), Box::new(b.fold())),
            Node::Mul(a, b) => Node::Mul(Box::new(a.fold()), Box::new(b.fold())),
            Node::Div(a, b) => Node::Div(Box::new(a.fold()), Box::new(b.fold())),
            Node::Pow(a, b) => {
                let (a, b) = (a.fold(), b.fold());
                match b {
                    Node::Num(n) if n.fract() == 0.0 && n.abs() <= 64.0 => Node::PowI(Box::new(a), n as i32),
                    b => Node::Pow(Box::new(a), Box::new(b)),
                }
            }
            Node::PowI(a, n) => Node::PowI(Box::new(a.fold()), n),
            Node::Call(f, args) => Node::Call(f, args.into_iter().map(Node::fold).collect()),
            leaf => leaf,
        };
        if !node.uses(&Node::X) && !node.uses(&Node::Y) && !matches!(node, Node::Num(_)) {
            Node::Num(node.eval(0.0, 0.0))
        } else {
            node
        }
    }
}

/// A parsed expression in `x` and `y`.
#[derive(Clone, Debug)]
pub struct Expr {
    source: String,
    root: Arc<Node>,
}

impl Expr {
    pub fn parse(source: &str) -> Result<Self, ParseError> {
        let tokens = lex(source)?;
        let mut p = Parser { tokens, pos: 0 };
        let root = p.expr()?;
        if let Some(t) = p.tokens.get(p.pos) {
            return Err(ParseError { position: t.at, message: format!("unexpected {}", t.kind) });
        }
        Ok(Self { source: source.to_string(), root: Arc::new(root.fold()) })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.root.eval(x, y)
    }

    pub fn uses_x(&self) -> bool {
        self.root.uses(&Node::X)
    }

    pub fn uses_y(&self) -> bool {
        self.root.uses(&Node::Y)
    }

    pub fn constant(&self) -> Option<f64> {
        match *self.root {
            Node::Num(c) => Some(c),
            _ => None,
        }
    }

    /// As a function of position; errors if `y` appears.
    pub fn spatial(&self) -> Result<SpatialFn<f64>, ParseError> {
        if self.uses_y() {
            return Err(ParseError { position: 0, message: "y is not available in a function of position".into() });
        }
        if let Some(c) = self.constant() {
            return Ok(SpatialFn::constant(c));
        }
        let root = self.root.clone();
        Ok(SpatialFn::new(self.source.clone(), move |x: &[f64]| root.eval(x[0], 0.0)))
    }

    /// As a coefficient `(x, y) ↦ e(x, y)`.
    pub fn coefficient(&self) -> CoefFn<f64> {
        if let Some(c) = self.constant() {
            return CoefFn::constant(c);
        }
        let root = self.root.clone();
        if self.uses_y() {
            CoefFn::new(self.source.clone(), move |x: &[f64], y| root.eval(x[0], y))
        } else {
            CoefFn::of_x(self.source.clone(), move |x: &[f64]| root.eval(x[0], 0.0))
        }
    }

    /// As a scalar function of `y` alone; errors if `x` appears.
    pub fn of_y(&self) -> Result<impl Fn(f64) -> f64 + Send + Sync + 'static, ParseError> {
        if self.uses_x() {
            return Err(ParseError { position: 0, message: "x is not available in a function of the solution".into() });
        }
        let root = self.root.clone();
        Ok(move |y: f64| root.eval(0.0, y))
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Kind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kind::Num(v) => write!(f, "number {v}"),
            Kind::Ident(s) => write!(f, "identifier '{s}'"),
            Kind::Op(c) => write!(f, "operator '{c}'"),
            Kind::LParen => f.write_str("'('"),
            Kind::RParen => f.write_str("')'"),
            Kind::Comma => f.write_str("','"),
        }
    }
}

#[derive(Clone, Debug)]
struct Token {
    kind: Kind,
    at: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let at = i;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let kind = if c.is_ascii_digit() || c == '.' {
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
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| ParseError { position: start, message: format!("malformed number '{text}'") })?;
            out.push(Token { kind: Kind::Num(v), at });
            continue;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token { kind: Kind::Ident(chars[start..i].iter().collect()), at });
            continue;
        } else {
            match c {
                '+' | '-' | '*' | '/' | '^' => Kind::Op(c),
                '×' => Kind::Op('*'),
                '÷' => Kind::Op('/'),
                '(' => Kind::LParen,
                ')' => Kind::RParen,
                ',' => Kind::Comma,
                _ => return Err(ParseError { position: at, message: format!("unexpected character '{c}'") }),
            }
        };
        out.push(Token { kind, at });
        i += 1;
    }
    if out.is_empty() {
        return Err(ParseError { position: 0, message: "empty expression".into() });
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Kind> {
        self.tokens.get(self.pos).map(|t| &t.kind)
    }

    fn here(&self) -> usize {
        self.tokens.get(self.pos).map(|t| t.at).unwrap_or_else(|| self.tokens.last().map_or(0, |t| t.at + 1))
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { position: self.here(), message: message.into() })
    }

    fn expect(&mut self, kind: Kind) -> Result<(), ParseError> {
        if self.peek() == Some(&kind) {
            self.pos += 1;
            Ok(())
        } else {
            match self.peek() {
                Some(k) => self.fail(format!("expected {kind}, found {k}")),
                None => self.fail(format!("expected {kind}, found end of input")),
            }
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        while let Some(Kind::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' { Node::Add(Box::new(lhs), Box::new(rhs)) } else { Node::Sub(Box::new(lhs), Box::new(rhs)) };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(Kind::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' { Node::Mul(Box::new(lhs), Box::new(rhs)) } else { Node::Div(Box::new(lhs), Box::new(rhs)) };
        }
        Ok(lhs)
    }

    // unary minus binds looser than ^, so -y^2 = -(y^2)
    fn unary(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            Some(Kind::Op('-')) => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(Kind::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if let Some(Kind::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        let Some(kind) = self.peek().cloned() else {
            return self.fail("unexpected end of input");
        };
        match kind {
            Kind::Num(v) => {
                self.pos += 1;
                Ok(Node::Num(v))
            }
            Kind::LParen => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(Kind::RParen)?;
                Ok(e)
            }
            Kind::Ident(name) => {
                let at = self.here();
                self.pos += 1;
                match name.as_str() {
                    "x" => return Ok(Node::X),
                    "y" => return Ok(Node::Y),
                    _ => {}
                }
                let Some(f) = Func::lookup(&name) else {
                    return Err(ParseError { position: at, message: format!("unknown identifier '{name}'") });
                };
                self.expect(Kind::LParen)?;
                let mut args = vec![self.expr()?];
                while self.peek() == Some(&Kind::Comma) {
                    self.pos += 1;
                    args.push(self.expr()?);
                }
                self.expect(Kind::RParen)?;
                if args.len() != f.arity() {
                    return Err(ParseError {
                        position: at,
                        message: format!("{name} takes {} argument(s), got {}", f.arity(), args.len()),
                    });
                }
                Ok(Node::Call(f, args))
            }
            other => self.fail(format!("unexpected {other}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: f64, y: f64) -> f64 {
        Expr::parse(s).unwrap().eval(x, y)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", 0.0, 0.0), 7.0);
        assert_eq!(ev("(1 + 2) * 3", 0.0, 0.0), 9.0);
        assert_eq!(ev("2 ^ 3 ^ 2", 0.0, 0.0), 512.0);
        assert_eq!(ev("-y^2", 0.0, 3.0), -9.0);
        assert_eq!(ev("8 / 4 / 2", 0.0, 0.0), 1.0);
        assert_eq!(ev("10 - 4 - 3", 0.0, 0.0), 3.0);
        assert_eq!(ev("2 × x ÷ 4", 3.0, 0.0), 1.5);
    }

    #[test]
    fn functions_and_literals() {
        assert_eq!(ev("-y^3 + 1", 0.0, 2.0), -7.0);
        assert_eq!(ev("1/(1 + max(y, 0))", 0.0, -5.0), 1.0);
        assert_eq!(ev("clamp(x, -1, 1)", 4.0, 0.0), 1.0);
        assert_eq!(ev("min(x, 1 - x)", 0.25, 0.0), 0.25);
        assert!((ev("sin(3.141592653589793*x)", 0.5, 0.0) - 1.0).abs() < 1e-15);
        assert_eq!(ev("2.5e-1 * 4", 0.0, 0.0), 1.0);
        assert_eq!(ev("abs(-x) + exp(0) + cos(0)", 2.0, 0.0), 4.0);
        assert_eq!(ev("y^0.5", 0.0, 4.0), 2.0);
    }

    #[test]
    fn rejects_everything_else() {
        for bad in ["", "z", "pi", "sqrt(x)", "x +", "(x", "x)", "2 ** 3", "max(x)", "sin(x, y)", "x % 2", "1..2", "x y", "exp"] {
            assert!(Expr::parse(bad).is_err(), "accepted '{bad}'");
        }
    }

    #[test]
    fn dependence_and_folding() {
        let e = Expr::parse("2 * 3 + 1").unwrap();
        assert_eq!(e.constant(), Some(7.0));
        assert!(matches!(e.coefficient(), CoefFn::Const(c) if c == 7.0));
        let e = Expr::parse("x * 2").unwrap();
        assert!(e.uses_x() && !e.uses_y());
        assert!(e.coefficient().is_linear_free());
        let e = Expr::parse("y + x").unwrap();
        assert!(!e.coefficient().is_linear_free());
        assert!(e.spatial().is_err());
        assert!(e.of_y().is_err());
    }
}
