//! Declarative kernel descriptions and the `name(key=value,...)` mini-grammar.
//!
//! ```text
//! spec   := ident [ '(' [ arg { ',' arg } ] ')' ]
//! arg    := ident '=' value
//! value  := number | matrix | spec
//! matrix := '[' row { ',' row } ']'      row := '[' number { ',' number } ']'
//! ```
//!
//! Whitespace is ignored everywhere. The canonical rendering lists every key,
//! sorted alphabetically, so `parse(render(s)) == s`.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{min_max_sym_eig, psd_tolerance, symmetry_defect};

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// `σ² exp(-‖s-t‖²/2ℓ²) · I_dim`
    Gaussian { sigma: f64, ell: f64, dim: usize },
    /// `diag(1, e^{-|s-t|}, e^{-|s-t|²})` on R³.
    DiagExp3,
    /// `[[1/(1+r), 1/(1+r²)], [1/(1+r²), 1/(1+r)]]` with `r = |s-t|`.
    Rational2,
    /// `value · I_dim` for every pair of sites.
    Constant { value: f64, dim: usize },
    /// `base(s,t) · B` with a scalar base kernel.
    Separable { b: DMatrix<f64>, base: Box<KernelSpec> },
    /// `C(s)^{-1/2} K(s,t) C(t)^{-1/2}` with `C(s) = K(s,s)`.
    Normalized { inner: Box<KernelSpec> },
    /// `base(s,t) · M` with `M: R^{d1} -> R^{d2}`.
    TwoSpace {
        d1: usize,
        d2: usize,
        m: DMatrix<f64>,
        base: Box<KernelSpec>,
    },
}

impl KernelSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut p = Parser { src: text, pos: 0 };
        let node = p.node()?;
        p.skip_ws();
        if p.pos != text.len() {
            return Err(p.err("trailing input"));
        }
        Self::from_node(&node)
    }

    /// Output and input dimension of `K(s,t)`, as `(rows, cols)`.
    pub fn shape(&self) -> (usize, usize) {
        match self {
            KernelSpec::Gaussian { dim, .. } | KernelSpec::Constant { dim, .. } => (*dim, *dim),
            KernelSpec::DiagExp3 => (3, 3),
            KernelSpec::Rational2 => (2, 2),
            KernelSpec::Separable { b, .. } => (b.nrows(), b.ncols()),
            KernelSpec::Normalized { inner } => inner.shape(),
            KernelSpec::TwoSpace { d1, d2, .. } => (*d2, *d1),
        }
    }

    pub fn is_square(&self) -> bool {
        !matches!(self, KernelSpec::TwoSpace { .. })
    }

    /// Canonical text form; keys sorted alphabetically.
    pub fn render(&self) -> String {
        self.to_string()
    }

    fn from_node(node: &Node) -> Result<Self> {
        let mut args = Args::new(node);
        let spec = match node.name.as_str() {
            "gauss" | "gaussian" => {
                let sigma = args.number("sigma", Some(1.0))?;
                let ell = args.number("ell", Some(1.0))?;
                let dim = args.positive_int("dim", Some(1))?;
                if !(sigma > 0.0) {
                    return Err(Error::Domain("sigma must be > 0".into()));
                }
                if !(ell > 0.0) {
                    return Err(Error::Domain("ell must be > 0".into()));
                }
                KernelSpec::Gaussian { sigma, ell, dim }
            }
            "diagexp3" => KernelSpec::DiagExp3,
            "rational2" => KernelSpec::Rational2,
            "const" | "constant" => {
                let value = args.number("value", Some(1.0))?;
                let dim = args.positive_int("dim", Some(1))?;
                if !(value >= 0.0) {
                    return Err(Error::Domain("constant value must be >= 0".into()));
                }
                KernelSpec::Constant { value, dim }
            }
            "separable" => {
                let b = args.matrix("b")?;
                let base = args.spec("base")?;
                if b.nrows() != b.ncols() {
                    return Err(Error::Domain("separable B must be square".into()));
                }
                check_psd_matrix(&b)?;
                require_scalar(&base, "separable base")?;
                KernelSpec::Separable { b, base: Box::new(base) }
            }
            "normalized" => {
                let inner = args.spec("inner")?;
                if !inner.is_square() {
                    return Err(Error::Domain("normalized inner kernel must be square".into()));
                }
                KernelSpec::Normalized { inner: Box::new(inner) }
            }
            "twospace" => {
                let m = args.matrix("m")?;
                let base = args.spec("base")?;
                let d1 = args.positive_int("d1", Some(m.ncols()))?;
                let d2 = args.positive_int("d2", Some(m.nrows()))?;
                if m.nrows() != d2 || m.ncols() != d1 {
                    return Err(Error::Domain(format!(
                        "twospace M must be d2 x d1 = {d2}x{d1}, got {}x{}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                require_scalar(&base, "twospace base")?;
                KernelSpec::TwoSpace { d1, d2, m, base: Box::new(base) }
            }
            other => {
                return Err(Error::Syntax {
                    pos: node.pos,
                    msg: format!("unknown kernel '{other}'"),
                })
            }
        };
        args.finish()?;
        Ok(spec)
    }
}

impl std::str::FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KernelSpec::parse(s)
    }
}

fn require_scalar(spec: &KernelSpec, what: &str) -> Result<()> {
    if spec.shape() != (1, 1) {
        let (r, c) = spec.shape();
        return Err(Error::Domain(format!("{what} must be a scalar kernel (dim 1), got {r}x{c}")));
    }
    Ok(())
}

fn check_psd_matrix(b: &DMatrix<f64>) -> Result<()> {
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("separable B"));
    }
    if symmetry_defect(b) > 1e-12 * (1.0 + b.amax()) {
        return Err(Error::Domain("separable B must be symmetric".into()));
    }
    let (min, max) = min_max_sym_eig(b);
    if min < -psd_tolerance(max) {
        return Err(Error::Domain(format!(
            "separable B must be positive semi-definite (min eigenvalue {min:e})"
        )));
    }
    Ok(())
}

fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x:?}")
    }
}

fn fmt_matrix(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| {
            let cells: Vec<String> = r.iter().map(|&v| fmt_num(v)).collect();
            format!("[{}]", cells.join(","))
        })
        .collect();
    format!("[{}]", rows.join(","))
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Gaussian { sigma, ell, dim } => write!(
                f,
                "gauss(dim={dim},ell={},sigma={})",
                fmt_num(*ell),
                fmt_num(*sigma)
            ),
            KernelSpec::DiagExp3 => write!(f, "diagexp3"),
            KernelSpec::Rational2 => write!(f, "rational2"),
            KernelSpec::Constant { value, dim } => {
                write!(f, "const(dim={dim},value={})", fmt_num(*value))
            }
            KernelSpec::Separable { b, base } => {
                write!(f, "separable(b={},base={base})", fmt_matrix(b))
            }
            KernelSpec::Normalized { inner } => write!(f, "normalized(inner={inner})"),
            KernelSpec::TwoSpace { d1, d2, m, base } => write!(
                f,
                "twospace(base={base},d1={d1},d2={d2},m={})",
                fmt_matrix(m)
            ),
        }
    }
}

// ---------------------------------------------------------------------------
// Parser

#[derive(Debug)]
struct Node {
    name: String,
    pos: usize,
    args: Vec<(String, usize, Value)>,
}

#[derive(Debug)]
enum Value {
    Number(f64),
    Matrix(DMatrix<f64>),
    Spec(Node),
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Syntax { pos: self.pos, msg: msg.into() }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn expect(&mut self, want: char) -> Result<()> {
        self.skip_ws();
        match self.peek() {
            Some(c) if c == want => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => Err(self.err(format!("expected '{want}', found '{c}'"))),
            None => Err(self.err(format!("expected '{want}', found end of input"))),
        }
    }

    fn eat(&mut self, want: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(want) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<String> {
        self.skip_ws();
        let start = self.pos;
        match self.peek() {
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
            Some(c) => return Err(self.err(format!("expected a name, found '{c}'"))),
            None => return Err(self.err("expected a name, found end of input")),
        }
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == '_' {
                self.pos += 1;
            } else {
                break;
            }
        }
        Ok(self.src[start..self.pos].to_ascii_lowercase())
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || matches!(c, '+' | '-' | '.' | 'e' | 'E') {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = &self.src[start..self.pos];
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::Syntax { pos: start, msg: format!("invalid number '{text}'") }),
        }
    }

    fn matrix(&mut self) -> Result<DMatrix<f64>> {
        let start = self.pos;
        self.expect('[')?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        loop {
            self.expect('[')?;
            let mut row = vec![self.number()?];
            while self.eat(',') {
                row.push(self.number()?);
            }
            self.expect(']')?;
            rows.push(row);
            if !self.eat(',') {
                break;
            }
        }
        self.expect(']')?;
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Syntax { pos: start, msg: "ragged matrix rows".into() });
        }
        Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.into_iter().flatten()))
    }

    fn value(&mut self) -> Result<Value> {
        self.skip_ws();
        match self.peek() {
            Some('[') => Ok(Value::Matrix(self.matrix()?)),
            Some(c) if c.is_ascii_digit() || matches!(c, '+' | '-' | '.') => {
                Ok(Value::Number(self.number()?))
            }
            Some(c) if c.is_ascii_alphabetic() => Ok(Value::Spec(self.node()?)),
            Some(c) => Err(self.err(format!("unexpected '{c}'"))),
            None => Err(self.err("expected a value, found end of input")),
        }
    }

    fn node(&mut self) -> Result<Node> {
        self.skip_ws();
        let pos = self.pos;
        let name = self.ident()?;
        let mut args = Vec::new();
        if self.eat('(') && !self.eat(')') {
            loop {
                self.skip_ws();
                let kpos = self.pos;
                let key = self.ident()?;
                self.expect('=')?;
                let value = self.value()?;
                args.push((key, kpos, value));
                if self.eat(')') {
                    break;
                }
                self.expect(',')?;
            }
        }
        Ok(Node { name, pos, args })
    }
}

/// Keyed access to a node's arguments; rejects duplicates and leftovers.
struct Args<'n> {
    node: &'n Node,
    used: Vec<bool>,
}

impl<'n> Args<'n> {
    fn new(node: &'n Node) -> Self {
        Args { node, used: vec![false; node.args.len()] }
    }

    fn take(&mut self, key: &str) -> Result<Option<(usize, &'n Value)>> {
        let mut found = None;
        for (i, (k, pos, v)) in self.node.args.iter().enumerate() {
            if k == key {
                if found.is_some() {
                    return Err(Error::Syntax { pos: *pos, msg: format!("duplicate key '{key}'") });
                }
                self.used[i] = true;
                found = Some((*pos, v));
            }
        }
        Ok(found)
    }

    fn number(&mut self, key: &str, default: Option<f64>) -> Result<f64> {
        match (self.take(key)?, default) {
            (Some((_, Value::Number(v))), _) => Ok(*v),
            (Some((pos, _)), _) => {
                Err(Error::Syntax { pos, msg: format!("'{key}' must be a number") })
            }
            (None, Some(d)) => Ok(d),
            (None, None) => Err(self.missing(key)),
        }
    }

    fn positive_int(&mut self, key: &str, default: Option<usize>) -> Result<usize> {
        let v = self.number(key, default.map(|d| d as f64))?;
        if v.fract() != 0.0 || v < 1.0 {
            return Err(Error::Domain(format!("{key} must be an integer >= 1")));
        }
        Ok(v as usize)
    }

    fn matrix(&mut self, key: &str) -> Result<DMatrix<f64>> {
        match self.take(key)? {
            Some((_, Value::Matrix(m))) => Ok(m.clone()),
            Some((pos, _)) => Err(Error::Syntax { pos, msg: format!("'{key}' must be a matrix") }),
            None => Err(self.missing(key)),
        }
    }

    fn spec(&mut self, key: &str) -> Result<KernelSpec> {
        match self.take(key)? {
            Some((_, Value::Spec(n))) => KernelSpec::from_node(n),
            Some((pos, _)) => {
                Err(Error::Syntax { pos, msg: format!("'{key}' must be a kernel spec") })
            }
            None => Err(self.missing(key)),
        }
    }

    fn missing(&self, key: &str) -> Error {
        Error::Syntax {
            pos: self.node.pos,
            msg: format!("'{}' requires '{key}'", self.node.name),
        }
    }

    fn finish(self) -> Result<()> {
        for (i, (k, pos, _)) in self.node.args.iter().enumerate() {
            if !self.used[i] {
                return Err(Error::Syntax {
                    pos: *pos,
                    msg: format!("unknown key '{k}' for '{}'", self.node.name),
                });
            }
        }
        Ok(())
    }
}
