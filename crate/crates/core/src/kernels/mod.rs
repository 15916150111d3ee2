//! Operator-valued kernels `K: S × S → B(H)` with `S ⊂ R^m` and `H = R^d`.
//!
//! An [`OperatorKernel`] wraps a validated [`KernelSpec`] and evaluates it to
//! dense `d × d` matrices. Evaluation is pure; for every square variant
//! `evaluate(s, t)` is bitwise equal to `evaluate(t, s)ᵀ` because both
//! orderings are routed through the same canonical argument order.

mod spec;

pub use spec::KernelSpec;

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{bilinear, clamp_roundoff, symmetrize};

/// A vector in the ambient Hilbert space `H = R^d`.
pub type HVec = DVector<f64>;

/// A bounded operator `R^{d_in} → R^{d_out}`, stored densely.
pub type OpMatrix = DMatrix<f64>;

/// A point of the index set, `s ∈ R^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Site(Vec<f64>);

impl Site {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Empty("site coordinates"));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("site coordinates"));
        }
        Ok(Site(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    fn sq_dist(&self, other: &Site) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    /// Euclidean distance; exactly `|s - t|` for scalar sites.
    fn dist(&self, other: &Site) -> f64 {
        if self.0.len() == 1 {
            (self.0[0] - other.0[0]).abs()
        } else {
            self.sq_dist(other).sqrt()
        }
    }

    fn canonical_cmp(&self, other: &Site) -> Ordering {
        for (a, b) in self.0.iter().zip(&other.0) {
            match a.total_cmp(b) {
                Ordering::Equal => continue,
                ord => return ord,
            }
        }
        Ordering::Equal
    }
}

/// Scalar site; panics on a non-finite coordinate.
impl From<f64> for Site {
    fn from(x: f64) -> Self {
        assert!(x.is_finite(), "site coordinate must be finite");
        Site(vec![x])
    }
}

impl TryFrom<Vec<f64>> for Site {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Site::new(v)
    }
}

impl From<Site> for Vec<f64> {
    fn from(s: Site) -> Self {
        s.0
    }
}

/// Equispaced sites on `[a, b]` with both endpoints included.
pub fn grid(a: f64, b: f64, n: usize) -> Result<Vec<Site>> {
    if n == 0 {
        return Err(Error::Empty("grid"));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::NonFinite("grid bounds"));
    }
    if n == 1 {
        return Ok(vec![Site::from(a)]);
    }
    let denom = (n - 1) as f64;
    Ok((0..n).map(|k| Site::from(a + (b - a) * (k as f64 / denom))).collect())
}

/// An evaluable operator-valued kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorKernel {
    spec: KernelSpec,
    rows: usize,
    cols: usize,
}

impl OperatorKernel {
    pub fn new(spec: KernelSpec) -> Self {
        let (rows, cols) = spec.shape();
        OperatorKernel { spec, rows, cols }
    }

    pub fn parse(text: &str) -> Result<Self> {
        KernelSpec::parse(text).map(Self::new)
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    /// Dimension `d` of `H` (the output dimension for two-space kernels).
    pub fn dim(&self) -> usize {
        self.rows
    }

    /// `(d_out, d_in)` of each value `K(s,t)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.spec.is_square()
    }

    /// `K(s,t)` as a `d_out × d_in` matrix.
    pub fn evaluate(&self, s: &Site, t: &Site) -> Result<OpMatrix> {
        if s.dim() != t.dim() {
            return Err(Error::DimensionMismatch { expected: s.dim(), got: t.dim() });
        }
        if !self.spec.is_square() {
            return raw_eval(&self.spec, s, t);
        }
        match s.canonical_cmp(t) {
            Ordering::Less => raw_eval(&self.spec, s, t),
            Ordering::Greater => Ok(raw_eval(&self.spec, t, s)?.transpose()),
            Ordering::Equal => Ok(symmetrize(&raw_eval(&self.spec, s, s)?)),
        }
    }

    /// `K̃((s,a),(t,b)) = aᵀ K(s,t) b`
    pub fn induced_scalar(&self, s: &Site, a: &HVec, t: &Site, b: &HVec) -> Result<f64> {
        self.check_vec(a, self.rows)?;
        self.check_vec(b, self.cols)?;
        Ok(bilinear(a, &self.evaluate(s, t)?, b))
    }

    /// `‖V_s a - V_t a‖²` in the RKHS, evaluated in closed form as
    /// `aᵀ (K(s,s) - K(s,t) - K(t,s) + K(t,t)) a`.
    ///
    /// Values in `[-1e-12, 0)` are clamped to zero. Anything more negative
    /// is returned as is: it means the kernel is not positive definite.
    ///
    /// The Gaussian kernel uses `2σ²‖a‖²·(1 - e^{-r²/2ℓ²})` with `expm1`, which
    /// keeps full relative accuracy as `r → 0`.
    pub fn continuity_increment(&self, s: &Site, t: &Site, a: &HVec) -> Result<f64> {
        self.require_square()?;
        self.check_vec(a, self.rows)?;
        if let KernelSpec::Gaussian { sigma, ell, .. } = &self.spec {
            self.evaluate(s, t)?;
            let decay = -(-s.sq_dist(t) / (2.0 * ell * ell)).exp_m1();
            return Ok(2.0 * sigma * sigma * decay * a.norm_squared());
        }
        let kss = self.evaluate(s, s)?;
        let kst = self.evaluate(s, t)?;
        let kts = self.evaluate(t, s)?;
        let ktt = self.evaluate(t, t)?;
        // grouped so that each difference of nearby values is exact
        let diff = (kss - kst) + (ktt - kts);
        Ok(clamp_roundoff(bilinear(a, &diff, a)))
    }

    /// The four-argument form of a two-space kernel `K(s,t) = base(s,t)·M`.
    ///
    /// Returns `(bᵀ K(s,t) a, |bᵀ K(s,t) a - dᵀ K(t,s) c|)`. The second value
    /// measures how far the form is from Hermitian; no positivity is implied.
    #[allow(clippy::too_many_arguments)]
    pub fn two_space_form(
        &self,
        s: &Site,
        a: &HVec,
        b: &HVec,
        t: &Site,
        c: &HVec,
        d: &HVec,
    ) -> Result<(f64, f64)> {
        if self.spec.is_square() {
            return Err(Error::Domain("two_space_form requires a twospace kernel".into()));
        }
        for (v, n) in [(a, self.cols), (b, self.rows), (c, self.cols), (d, self.rows)] {
            self.check_vec(v, n)?;
        }
        let forward = bilinear(b, &self.evaluate(s, t)?, a);
        let backward = bilinear(d, &self.evaluate(t, s)?, c);
        Ok((forward, (forward - backward).abs()))
    }

    fn require_square(&self) -> Result<()> {
        if self.spec.is_square() {
            Ok(())
        } else {
            Err(Error::NotSquare { rows: self.rows, cols: self.cols })
        }
    }

    fn check_vec(&self, v: &HVec, n: usize) -> Result<()> {
        if v.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: v.len() });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("H vector"));
        }
        Ok(())
    }
}

fn scalar_eval(spec: &KernelSpec, s: &Site, t: &Site) -> Result<f64> {
    let m = raw_eval(spec, s, t)?;
    Ok(m[(0, 0)])
}

fn raw_eval(spec: &KernelSpec, s: &Site, t: &Site) -> Result<OpMatrix> {
    Ok(match spec {
        KernelSpec::Gaussian { sigma, ell, dim } => {
            let v = sigma * sigma * (-s.sq_dist(t) / (2.0 * ell * ell)).exp();
            DMatrix::from_diagonal_element(*dim, *dim, v)
        }
        KernelSpec::DiagExp3 => {
            let r = s.dist(t);
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, (-r).exp(), (-r * r).exp()]))
        }
        KernelSpec::Rational2 => {
            let r = s.dist(t);
            let diag = 1.0 / (1.0 + r);
            let off = 1.0 / (1.0 + r * r);
            DMatrix::from_row_slice(2, 2, &[diag, off, off, diag])
        }
        KernelSpec::Constant { value, dim } => DMatrix::from_diagonal_element(*dim, *dim, *value),
        KernelSpec::Separable { b, base } => b * scalar_eval(base, s, t)?,
        KernelSpec::TwoSpace { m, base, .. } => m * scalar_eval(base, s, t)?,
        KernelSpec::Normalized { inner } => {
            let left = inv_sqrt(&symmetrize(&raw_eval(inner, s, s)?))?;
            let right = inv_sqrt(&symmetrize(&raw_eval(inner, t, t)?))?;
            &left * raw_eval(inner, s, t)? * &right
        }
    })
}

/// `C^{-1/2}` of a symmetric matrix; rejects eigenvalues below `1e-12 · λ_max`.
fn inv_sqrt(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(c.clone());
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min < 1e-12 * max {
        return Err(Error::NotNormalizable { min_eig: min, max_eig: max });
    }
    let scaled = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(symmetrize(&(&eig.eigenvectors * scaled * eig.eigenvectors.transpose())))
}
