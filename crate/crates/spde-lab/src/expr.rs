//! Minimal arithmetic expressions for user-supplied coefficient functions.
//!
//! Grammar (one-dimensional spatial variable `x`, state variable `y`):
//!
//! ```text
//!     expr    := term  (('+' | '-') term)*
//!     term    := unary (('*' | '/') unary)*
//!     unary   := '-' unary | primary
//!     primary := NUMBER | 'x' | 'y' | 'pi' | 'e'
//!              | ('sin' | 'cos' | 'exp' | 'tanh') '(' expr ')'
//!              | '(' expr ')'
//! ```
//!
//! The subset is deliberately closed: no exponentiation, no user names, no
//! side effects, so configs stay reproducible and safe to evaluate.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    X,
    Y,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Tanh,
}

/// A parsed scalar expression in the variables `x` and `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    source: String,
}

impl Expr {
    pub fn parse(source: &str) -> Result<Self> {
        let tokens = tokenize(source)?;
        let mut parser = Parser { tokens, pos: 0 };
        let root = parser.expr()?;
        if parser.pos != parser.tokens.len() {
            return Err(Error::Config(format!(
                "unexpected trailing input at token {:?} in {source:?}",
                parser.tokens[parser.pos]
            )));
        }
        Ok(Self {
            root,
            source: source.to_string(),
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        eval_node(&self.root, x, y)
    }

    /// Whether the expression reads the spatial variable.
    pub fn uses_x(&self) -> bool {
        node_uses(&self.root, &Node::X)
    }
}

fn node_uses(node: &Node, probe: &Node) -> bool {
    match node {
        Node::Num(_) | Node::X | Node::Y => node == probe,
        Node::Neg(a) | Node::Call(_, a) => node_uses(a, probe),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            node_uses(a, probe) || node_uses(b, probe)
        }
    }
}

fn eval_node(node: &Node, x: f64, y: f64) -> f64 {
    match node {
        Node::Num(c) => *c,
        Node::X => x,
        Node::Y => y,
        Node::Neg(a) => -eval_node(a, x, y),
        Node::Add(a, b) => eval_node(a, x, y) + eval_node(b, x, y),
        Node::Sub(a, b) => eval_node(a, x, y) - eval_node(b, x, y),
        Node::Mul(a, b) => eval_node(a, x, y) * eval_node(b, x, y),
        Node::Div(a, b) => eval_node(a, x, y) / eval_node(b, x, y),
        Node::Call(f, a) => {
            let v = eval_node(a, x, y);
            match f {
                Func::Sin => v.sin(),
                Func::Cos => v.cos(),
                Func::Exp => v.exp(),
                Func::Tanh => v.tanh(),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
}

fn tokenize(source: &str) -> Result<Vec<Token>> {
    let mut tokens = Vec::new();
    let bytes = source.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                tokens.push(Token::Plus);
                i += 1;
            }
            '-' => {
                tokens.push(Token::Minus);
                i += 1;
            }
            '*' => {
                tokens.push(Token::Star);
                i += 1;
            }
            '/' => {
                tokens.push(Token::Slash);
                i += 1;
            }
            '(' => {
                tokens.push(Token::LParen);
                i += 1;
            }
            ')' => {
                tokens.push(Token::RParen);
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && matches!(bytes[i] as char, '0'..='9' | '.') {
                    i += 1;
                }
                // Exponent suffix such as 1e-3 or 2.5E+10.
                if i < bytes.len() && matches!(bytes[i] as char, 'e' | 'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && matches!(bytes[j] as char, '+' | '-') {
                        j += 1;
                    }
                    if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &source[start..i];
                let value: f64 = text.parse().map_err(|_| {
                    Error::Config(format!("invalid numeric literal {text:?} in {source:?}"))
                })?;
                tokens.push(Token::Num(value));
            }
            'a'..='z' | 'A'..='Z' => {
                let start = i;
                while i < bytes.len() && (bytes[i] as char).is_ascii_alphabetic() {
                    i += 1;
                }
                tokens.push(Token::Ident(source[start..i].to_string()));
            }
            _ => {
                return Err(Error::Config(format!(
                    "unexpected character {c:?} in expression {source:?}"
                )))
            }
        }
    }
    if tokens.is_empty() {
        return Err(Error::Config("empty expression".into()));
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn advance(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, token: Token) -> Result<()> {
        match self.advance() {
            Some(ref t) if *t == token => Ok(()),
            other => Err(Error::Config(format!(
                "expected {token:?}, found {other:?}"
            ))),
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut node = self.term()?;
        while let Some(op) = self.peek() {
            match op {
                Token::Plus => {
                    self.advance();
                    node = Node::Add(Box::new(node), Box::new(self.term()?));
                }
                Token::Minus => {
                    self.advance();
                    node = Node::Sub(Box::new(node), Box::new(self.term()?));
                }
                _ => break,
            }
        }
        Ok(node)
    }

    fn term(&mut self) -> Result<Node> {
        let mut node = self.unary()?;
        while let Some(op) = self.peek() {
            match op {
                Token::Star => {
                    self.advance();
                    node = Node::Mul(Box::new(node), Box::new(self.unary()?));
                }
                Token::Slash => {
                    self.advance();
                    node = Node::Div(Box::new(node), Box::new(self.unary()?));
                }
                _ => break,
            }
        }
        Ok(node)
    }

    fn unary(&mut self) -> Result<Node> {
        if matches!(self.peek(), Some(Token::Minus)) {
            self.advance();
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Node> {
        match self.advance() {
            Some(Token::Num(v)) => Ok(Node::Num(v)),
            Some(Token::LParen) => {
                let node = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(node)
            }
            Some(Token::Ident(name)) => match name.as_str() {
                "x" => Ok(Node::X),
                "y" => Ok(Node::Y),
                "pi" => Ok(Node::Num(std::f64::consts::PI)),
                "e" => Ok(Node::Num(std::f64::consts::E)),
                "sin" | "cos" | "exp" | "tanh" => {
                    let func = match name.as_str() {
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        "exp" => Func::Exp,
                        _ => Func::Tanh,
                    };
                    self.expect(Token::LParen)?;
                    let arg = self.expr()?;
                    self.expect(Token::RParen)?;
                    Ok(Node::Call(func, Box::new(arg)))
                }
                other => Err(Error::Config(format!(
                    "unknown identifier {other:?}; allowed: x, y, pi, e, sin, cos, exp, tanh"
                ))),
            },
            other => Err(Error::Config(format!(
                "expected a value, found {other:?}"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn precedence_and_arithmetic() {
        let e = Expr::parse("2 + 3 * 4").unwrap();
        assert_relative_eq!(e.eval(0.0, 0.0), 14.0);
        let e = Expr::parse("(2 + 3) * 4").unwrap();
        assert_relative_eq!(e.eval(0.0, 0.0), 20.0);
        let e = Expr::parse("1 - 2 - 3").unwrap();
        assert_relative_eq!(e.eval(0.0, 0.0), -4.0);
        let e = Expr::parse("8 / 4 / 2").unwrap();
        assert_relative_eq!(e.eval(0.0, 0.0), 1.0);
    }

    #[test]
    fn variables_constants_functions() {
        let e = Expr::parse("sin(pi * x) + y / (1 + y * y)").unwrap();
        assert_relative_eq!(e.eval(0.5, 1.0), 1.5, epsilon = 1e-15);
        assert!(e.uses_x());
        let e = Expr::parse("tanh(y) - exp(-y) + cos(0)").unwrap();
        assert!(!e.uses_x());
        assert_relative_eq!(
            e.eval(0.0, 2.0),
            2f64.tanh() - (-2f64).exp() + 1.0,
            epsilon = 1e-15
        );
        let e = Expr::parse("e").unwrap();
        assert_relative_eq!(e.eval(0.0, 0.0), std::f64::consts::E);
    }

    #[test]
    fn unary_minus_and_literals() {
        let e = Expr::parse("-x * -y").unwrap();
        assert_relative_eq!(e.eval(3.0, 4.0), 12.0);
        let e = Expr::parse("2.5e-2 + 1E3").unwrap();
        assert_relative_eq!(e.eval(0.0, 0.0), 1000.025);
        let e = Expr::parse("-pi").unwrap();
        assert_relative_eq!(e.eval(0.0, 0.0), -PI);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(Expr::parse("").is_err());
        assert!(Expr::parse("2 +").is_err());
        assert!(Expr::parse("(1 + 2").is_err());
        assert!(Expr::parse("1 + 2)").is_err());
        assert!(Expr::parse("foo(3)").is_err());
        assert!(Expr::parse("z + 1").is_err());
        assert!(Expr::parse("sin 3").is_err());
        assert!(Expr::parse("1 & 2").is_err());
        assert!(Expr::parse("1..2").is_err());
    }

    #[test]
    fn round_trips_source_text() {
        let e = Expr::parse("sin(y) + sin(pi*x)").unwrap();
        assert_eq!(e.source(), "sin(y) + sin(pi*x)");
    }
}
