//! Scalar time expressions of the form `c0 + c1*sin(w1*t) + c2*cos(w2*t) + ...`.
//!
//! Grammar (whitespace is insignificant):
//!
//! ```text
//! expr := [sign] term (('+' | '-') term)*
//! term := NUMBER | [NUMBER '*'] ('sin' | 'cos') '(' [NUMBER '*'] 't' ')'
//! ```
//!
//! `NUMBER` is an unsigned decimal literal with an optional exponent.
//! Products of time functions and nesting are intentionally not expressible.

use std::fmt;

use thiserror::Error;

/// Kind of a single additive term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TermKind {
    Constant,
    /// `sin(omega * t)`, omega in rad/s.
    Sin(f64),
    /// `cos(omega * t)`, omega in rad/s.
    Cos(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub coefficient: f64,
    pub kind: TermKind,
}

impl Term {
    pub fn constant(coefficient: f64) -> Self {
        Self { coefficient, kind: TermKind::Constant }
    }

    /// `coefficient * sin(omega * t)`. A negative frequency is folded into the coefficient.
    pub fn sin(coefficient: f64, omega: f64) -> Self {
        if omega < 0.0 {
            Self { coefficient: -coefficient, kind: TermKind::Sin(-omega) }
        } else {
            Self { coefficient, kind: TermKind::Sin(omega) }
        }
    }

    /// `coefficient * cos(omega * t)`. A negative frequency is dropped (cos is even).
    pub fn cos(coefficient: f64, omega: f64) -> Self {
        Self { coefficient, kind: TermKind::Cos(omega.abs()) }
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        match self.kind {
            TermKind::Constant => self.coefficient,
            TermKind::Sin(w) => self.coefficient * (w * t).sin(),
            TermKind::Cos(w) => self.coefficient * (w * t).cos(),
        }
    }

    /// Angular frequency of the term, or `None` for constants.
    pub fn frequency(&self) -> Option<f64> {
        match self.kind {
            TermKind::Constant => None,
            TermKind::Sin(w) | TermKind::Cos(w) => Some(w),
        }
    }
}

/// An affine combination of `1`, `sin(w t)` and `cos(w t)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScalarExpr {
    terms: Vec<Term>,
}

impl ScalarExpr {
    pub fn new(terms: Vec<Term>) -> Self {
        Self { terms }
    }

    pub fn constant(value: f64) -> Self {
        Self { terms: vec![Term::constant(value)] }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        self.terms.iter().map(|term| term.eval(t)).sum()
    }

    /// True when no term depends on time (zero-frequency sinusoids included).
    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|term| match term.kind {
            TermKind::Constant => true,
            TermKind::Sin(w) => w == 0.0 || term.coefficient == 0.0,
            TermKind::Cos(w) => w == 0.0 || term.coefficient == 0.0,
        })
    }

    /// Nonzero angular frequencies appearing in the expression.
    pub fn frequencies(&self) -> impl Iterator<Item = f64> + '_ {
        self.terms
            .iter()
            .filter(|term| term.coefficient != 0.0)
            .filter_map(Term::frequency)
            .filter(|w| *w > 0.0)
    }

    /// Every coefficient multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            terms: self
                .terms
                .iter()
                .map(|term| Term { coefficient: term.coefficient * factor, kind: term.kind })
                .collect(),
        }
    }
}

impl fmt::Display for ScalarExpr {
    /// Canonical form; parses back to an identical expression.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (idx, term) in self.terms.iter().enumerate() {
            let negative = term.coefficient.is_sign_negative();
            let magnitude = term.coefficient.abs();
            match (idx, negative) {
                (0, true) => f.write_str("-")?,
                (0, false) => {}
                (_, true) => f.write_str(" - ")?,
                (_, false) => f.write_str(" + ")?,
            }
            match term.kind {
                TermKind::Constant => write!(f, "{magnitude}")?,
                TermKind::Sin(w) => write!(f, "{magnitude}*sin({w}*t)")?,
                TermKind::Cos(w) => write!(f, "{magnitude}*cos({w}*t)")?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { offset: usize, name: String },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. } | ParseError::UnknownFunction { offset, .. } => *offset,
        }
    }
}

/// Parse an expression string.
pub fn parse_expr(text: &str) -> Result<ScalarExpr, ParseError> {
    Parser { src: text.as_bytes(), pos: 0 }.expr()
}

impl std::str::FromStr for ScalarExpr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_expr(s)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn syntax<T>(&self, offset: usize, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax { offset, message: message.into() })
    }

    fn expect(&mut self, byte: u8) -> Result<(), ParseError> {
        match self.peek() {
            Some(b) if b == byte => {
                self.pos += 1;
                Ok(())
            }
            Some(b) => self.syntax(self.pos, format!("expected `{}`, found `{}`", byte as char, b as char)),
            None => self.syntax(self.pos, format!("expected `{}`, found end of input", byte as char)),
        }
    }

    fn expr(&mut self) -> Result<ScalarExpr, ParseError> {
        let mut terms = Vec::new();
        let mut sign = match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                -1.0
            }
            Some(b'+') => {
                self.pos += 1;
                1.0
            }
            _ => 1.0,
        };
        loop {
            let term = self.term()?;
            terms.push(Term { coefficient: sign * term.coefficient, kind: term.kind });
            match self.peek() {
                None => break,
                Some(b'+') => {
                    self.pos += 1;
                    sign = 1.0;
                }
                Some(b'-') => {
                    self.pos += 1;
                    sign = -1.0;
                }
                Some(b) => return self.syntax(self.pos, format!("unexpected `{}`", b as char)),
            }
        }
        Ok(ScalarExpr { terms })
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        match self.peek() {
            Some(b) if b.is_ascii_digit() || b == b'.' => {
                let value = self.number()?;
                if self.peek() == Some(b'*') {
                    self.pos += 1;
                    self.function(value)
                } else {
                    Ok(Term::constant(value))
                }
            }
            Some(b) if b.is_ascii_alphabetic() => self.function(1.0),
            Some(b) => self.syntax(self.pos, format!("expected a number or function, found `{}`", b as char)),
            None => self.syntax(self.pos, "expected a term, found end of input"),
        }
    }

    fn function(&mut self, coefficient: f64) -> Result<Term, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        if start == self.pos {
            return self.syntax(start, "expected `sin` or `cos`");
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default();
        let is_sin = match name {
            "sin" => true,
            "cos" => false,
            other if self.peek() == Some(b'(') => {
                return Err(ParseError::UnknownFunction { offset: start, name: other.to_string() })
            }
            _ => return self.syntax(start, "expected `sin` or `cos`"),
        };
        self.expect(b'(')?;
        let omega = match self.peek() {
            Some(b) if b.is_ascii_digit() || b == b'.' => {
                let w = self.number()?;
                self.expect(b'*')?;
                w
            }
            _ => 1.0,
        };
        self.expect(b't')?;
        self.expect(b')')?;
        Ok(if is_sin { Term::sin(coefficient, omega) } else { Term::cos(coefficient, omega) })
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        self.skip_ws();
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut count = digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            count += digits(self);
        }
        if count == 0 {
            return self.syntax(start, "malformed number");
        }
        if matches!(self.src.get(self.pos), Some(b'e') | Some(b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                // not an exponent after all; leave `e` for the caller to reject
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default();
        text.parse::<f64>().or_else(|_| self.syntax(start, format!("malformed number `{text}`")))
    }
}
