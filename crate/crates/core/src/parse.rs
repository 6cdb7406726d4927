//! Recursive-descent parser for the polynomial expression language.
//!
//! ```text
//! expr     := term (('+'|'-') term)*
//! term     := factor ('*' factor)*
//! factor   := base ('^' uint)?
//! base     := rational | var | '(' expr ')' | '-' base
//! rational := int | '(' int '/' uint ')' | int '/' uint
//! var      := ('x'|'y'|'q'|'r'|'p') uint | 'eps' | 'hbar'
//! ```
//!
//! Indices are 1-based. `eps` additionally accepts a positive index (`eps1`,
//! `eps2`) so that polynomials in several deformation parameters round-trip
//! through the printer.

use num_bigint::BigInt;
use num_traits::Zero;
use thiserror::Error;

use crate::poly::{Family, Polynomial, Rational, Var};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: expected {}, found {found}", expected.join(" or "))]
    Syntax {
        offset: usize,
        expected: Vec<&'static str>,
        found: String,
    },
    #[error("unknown variable `{name}` at offset {offset}")]
    UnknownVariable { offset: usize, name: String },
    #[error("division by zero in rational literal at offset {offset}")]
    DivisionByZero { offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UnknownVariable { offset, .. }
            | ParseError::DivisionByZero { offset } => *offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Int(BigInt),
    Var(Var),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Int(n) => format!("integer `{n}`"),
            Tok::Var(v) => format!("variable `{v}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' | b'-' | b'*' | b'/' | b'^' | b'(' | b')' => {
                let t = match c {
                    b'+' => Tok::Plus,
                    b'-' => Tok::Minus,
                    b'*' => Tok::Star,
                    b'/' => Tok::Slash,
                    b'^' => Tok::Caret,
                    b'(' => Tok::LParen,
                    _ => Tok::RParen,
                };
                out.push((start, t));
                i += 1;
            }
            b'0'..=b'9' => {
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let n: BigInt = text[start..i].parse().expect("digits");
                out.push((start, Tok::Int(n)));
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphabetic() || bytes[i] == b'_') {
                    i += 1;
                }
                let word_end = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let word = &text[start..word_end];
                let digits = &text[word_end..i];
                let var = resolve_var(word, digits).ok_or_else(|| ParseError::UnknownVariable {
                    offset: start,
                    name: text[start..i].to_string(),
                })?;
                out.push((start, Tok::Var(var)));
            }
            _ => {
                let ch = text[i..].chars().next().unwrap();
                return Err(ParseError::Syntax {
                    offset: start,
                    expected: vec!["expression"],
                    found: format!("character `{ch}`"),
                });
            }
        }
    }
    out.push((text.len(), Tok::Eof));
    Ok(out)
}

fn resolve_var(word: &str, digits: &str) -> Option<Var> {
    let index = if digits.is_empty() {
        None
    } else {
        Some(digits.parse::<u32>().ok()?)
    };
    let family = match word {
        "x" => Family::X,
        "y" => Family::Y,
        "q" => Family::Q,
        "r" => Family::R,
        "p" => Family::P,
        "eps" => {
            return match index {
                None => Some(Var::EPS),
                Some(0) => None,
                Some(k) => Some(Var::eps_k(k)),
            }
        }
        "hbar" => return index.is_none().then_some(Var::HBAR),
        _ => return None,
    };
    match index {
        Some(i) if i >= 1 => Some(Var::new(family, i)),
        _ => None,
    }
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].1
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].1.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn fail<T>(&self, expected: Vec<&'static str>) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            offset: self.offset(),
            expected,
            found: self.peek().describe(),
        })
    }

    fn expr(&mut self) -> Result<Polynomial, ParseError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    acc = acc + self.term()?;
                }
                Tok::Minus => {
                    self.bump();
                    acc = acc - self.term()?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Polynomial, ParseError> {
        let mut acc = self.factor()?;
        while *self.peek() == Tok::Star {
            self.bump();
            acc = &acc * &self.factor()?;
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<Polynomial, ParseError> {
        let base = self.base()?;
        if *self.peek() != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        match self.peek().clone() {
            Tok::Int(n) => {
                let e: u32 = match u32::try_from(&n) {
                    Ok(e) => e,
                    Err(_) => return self.fail(vec!["exponent fitting in 32 bits"]),
                };
                self.bump();
                Ok(base.pow(e))
            }
            _ => self.fail(vec!["unsigned integer exponent"]),
        }
    }

    fn base(&mut self) -> Result<Polynomial, ParseError> {
        match self.peek().clone() {
            Tok::Int(n) => {
                self.bump();
                if *self.peek() != Tok::Slash {
                    return Ok(Polynomial::constant(Rational::from_integer(n)));
                }
                self.bump();
                let at = self.offset();
                match self.peek().clone() {
                    Tok::Int(d) => {
                        self.bump();
                        if d.is_zero() {
                            return Err(ParseError::DivisionByZero { offset: at });
                        }
                        Ok(Polynomial::constant(Rational::new(n, d)))
                    }
                    _ => self.fail(vec!["unsigned integer denominator"]),
                }
            }
            Tok::Var(v) => {
                self.bump();
                Ok(Polynomial::var(v))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                if *self.peek() != Tok::RParen {
                    return self.fail(vec!["`)`", "operator"]);
                }
                self.bump();
                Ok(inner)
            }
            Tok::Minus => {
                self.bump();
                Ok(-self.base()?)
            }
            _ => self.fail(vec!["number", "variable", "`(`", "`-`"]),
        }
    }
}

/// Parses an expression into canonical form.
pub fn parse(text: &str) -> Result<Polynomial, ParseError> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let e = p.expr()?;
    if *p.peek() != Tok::Eof {
        return p.fail(vec!["operator", "end of input"]);
    }
    Ok(e)
}
