use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest basis dimension accepted for a smooth.
pub const MIN_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Term {
    /// Numeric column entering with a single coefficient.
    Linear(String),
    /// Categorical interaction: one coefficient per observed level pair.
    Interaction(String, String),
    /// Penalized cubic spline of one variable.
    Smooth { var: String, dim: usize, cyclic: bool },
    /// Tensor product smooth; `linear_first` swaps the first marginal for a
    /// linear basis of dimension 2.
    Tensor { var1: String, var2: String, dim: usize, linear_first: bool },
    /// Numeric column with one coefficient per level of a categorical.
    Lag { var: String, by: String },
}

impl Term {
    pub fn variables(&self) -> Vec<&str> {
        match self {
            Term::Linear(v) => vec![v],
            Term::Interaction(a, b) => vec![a, b],
            Term::Smooth { var, .. } => vec![var],
            Term::Tensor { var1, var2, .. } => vec![var1, var2],
            Term::Lag { var, by } => vec![var, by],
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Linear(v) => write!(f, "{v}"),
            Term::Interaction(a, b) => write!(f, "{a}:{b}"),
            Term::Smooth { var, dim, cyclic } => {
                write!(f, "s({var}, k={dim}")?;
                if *cyclic {
                    write!(f, ", cyclic")?;
                }
                write!(f, ")")
            }
            Term::Tensor { var1, var2, dim, linear_first } => {
                write!(f, "te({var1}, {var2}, k={dim}")?;
                if *linear_first {
                    write!(f, ", lin1")?;
                }
                write!(f, ")")
            }
            Term::Lag { var, by } => write!(f, "lagterm({var}, by={by})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Formula {
    pub response: String,
    pub terms: Vec<Term>,
}

impl Formula {
    /// Regressor columns in order of first appearance.
    pub fn variables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.terms {
            for v in t.variables() {
                if !out.iter().any(|o| o == v) {
                    out.push(v.to_string());
                }
            }
        }
        out
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ~ ", self.response)?;
        if self.terms.is_empty() {
            return write!(f, "1");
        }
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(usize),
    Sym(char),
    End,
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

fn err(position: usize, message: impl Into<String>) -> Error {
    Error::Parse { position, message: message.into() }
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let s = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(text[s..i].to_ascii_lowercase()), s));
        } else if c.is_ascii_digit() {
            let s = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let v = text[s..i].parse().map_err(|_| err(s, "integer too large"))?;
            out.push((Tok::Int(v), s));
        } else if "~+:(),=".contains(c) {
            out.push((Tok::Sym(c), i));
            i += 1;
        } else {
            return Err(err(i, format!("unexpected character `{c}`")));
        }
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn at(&self) -> usize {
        self.toks[self.pos].1
    }

    fn next(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect_sym(&mut self, c: char) -> Result<()> {
        match self.next() {
            (Tok::Sym(s), _) if s == c => Ok(()),
            (_, p) => Err(err(p, format!("expected `{c}`"))),
        }
    }

    fn ident(&mut self) -> Result<(String, usize)> {
        match self.next() {
            (Tok::Ident(s), p) => Ok((s, p)),
            (_, p) => Err(err(p, "expected a column name")),
        }
    }

    fn dim_arg(&mut self) -> Result<usize> {
        let (key, p) = self.ident()?;
        if key != "k" {
            return Err(err(p, format!("unknown argument `{key}`")));
        }
        self.expect_sym('=')?;
        match self.next() {
            (Tok::Int(k), p) if k < MIN_DIM => Err(err(p, format!("k below minimum ({k} < {MIN_DIM})"))),
            (Tok::Int(k), _) => Ok(k),
            (_, p) => Err(err(p, "expected an integer")),
        }
    }

    fn flag(&mut self, allowed: &str) -> Result<bool> {
        if *self.peek() == Tok::Sym(',') {
            self.next();
            let (f, p) = self.ident()?;
            if f != allowed {
                return Err(err(p, format!("unknown option `{f}`")));
            }
            return Ok(true);
        }
        Ok(false)
    }

    fn term(&mut self) -> Result<Term> {
        let (name, p) = self.ident()?;
        if *self.peek() == Tok::Sym('(') {
            self.next();
            let term = match name.as_str() {
                "s" => {
                    let (var, _) = self.ident()?;
                    self.expect_sym(',')?;
                    let dim = self.dim_arg()?;
                    let cyclic = self.flag("cyclic")?;
                    Term::Smooth { var, dim, cyclic }
                }
                "te" => {
                    let (var1, _) = self.ident()?;
                    self.expect_sym(',')?;
                    let (var2, _) = self.ident()?;
                    self.expect_sym(',')?;
                    let dim = self.dim_arg()?;
                    let linear_first = self.flag("lin1")?;
                    Term::Tensor { var1, var2, dim, linear_first }
                }
                "lagterm" => {
                    let (var, _) = self.ident()?;
                    self.expect_sym(',')?;
                    let (key, kp) = self.ident()?;
                    if key != "by" {
                        return Err(err(kp, format!("unknown argument `{key}`")));
                    }
                    self.expect_sym('=')?;
                    let (by, _) = self.ident()?;
                    Term::Lag { var, by }
                }
                other => return Err(err(p, format!("unknown function `{other}`"))),
            };
            self.expect_sym(')')?;
            return Ok(term);
        }
        if *self.peek() == Tok::Sym(':') {
            self.next();
            let (b, _) = self.ident()?;
            return Ok(Term::Interaction(name, b));
        }
        Ok(Term::Linear(name))
    }
}

/// Parses `response ~ term (+ term)*` or `response ~ 1`.
pub fn parse_formula(text: &str) -> Result<Formula> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let (response, _) = p.ident()?;
    p.expect_sym('~')?;
    if let Tok::Int(1) = p.peek() {
        p.next();
        return match p.next() {
            (Tok::End, _) => Ok(Formula { response, terms: Vec::new() }),
            (_, pos) => Err(err(pos, "intercept-only formula takes no further terms")),
        };
    }
    let mut terms: Vec<Term> = Vec::new();
    loop {
        let start = p.at();
        let t = p.term()?;
        if terms.contains(&t) {
            return Err(err(start, format!("duplicate term `{t}`")));
        }
        if t.variables().contains(&response.as_str()) {
            return Err(err(start, "the response cannot appear among the regressors"));
        }
        terms.push(t);
        match p.next() {
            (Tok::Sym('+'), _) => continue,
            (Tok::End, _) => break,
            (_, pos) => Err(err(pos, "expected `+` or end of formula"))?,
        }
    }
    Ok(Formula { response, terms })
}

/// Eq. (1)-style reference model of the 48-model bank.
pub const REFERENCE_FORMULA: &str = "load ~ daytype:dls + lagterm(load1d, by=daytype) + load1w + time \
     + s(toy, k=20, cyclic) + te(time, temp, k=4, lin1) + s(temp95, k=5) + s(temp99, k=5) \
     + te(tempmin99, tempmax99, k=4)";

/// Calendar and weather only: no trend, no load lags.
pub const SEASONALITY_FORMULA: &str = "load ~ daytype:dls + s(toy, k=20, cyclic) + s(temp95, k=5) \
     + s(temp99, k=5) + te(tempmin99, tempmax99, k=4)";

/// The nested models comparing calendar, lag and work-index regressors.
pub const NESTED_FORMULAS: [(&str, &str); 7] = [
    ("Temp", "load ~ s(temp95, k=5)"),
    ("Temp + Work", "load ~ s(temp95, k=5) + s(work, k=5)"),
    ("Temp + Time", "load ~ daytype:dls + holiday + s(toy, k=20, cyclic) + s(temp95, k=5)"),
    (
        "Temp + Time + Work",
        "load ~ daytype:dls + holiday + s(toy, k=20, cyclic) + s(temp95, k=5) + s(work, k=5)",
    ),
    (
        "Temp + Work + Lags",
        "load ~ s(temp95, k=5) + s(work, k=5) + lagterm(load1d, by=daytype) + load1w",
    ),
    (
        "Temp + Time + Lags",
        "load ~ daytype:dls + holiday + s(toy, k=20, cyclic) + s(temp95, k=5) + lagterm(load1d, by=daytype) + load1w",
    ),
    (
        "All variables",
        "load ~ daytype:dls + holiday + s(toy, k=20, cyclic) + s(temp95, k=5) + lagterm(load1d, by=daytype) + load1w + s(work, k=5)",
    ),
];
