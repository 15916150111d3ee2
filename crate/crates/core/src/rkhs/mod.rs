//! Finite-span realization of the RKHS of the induced scalar kernel
//! `K̃((s,a),(t,b)) = aᵀ K(s,t) b`.
//!
//! An [`RkhsContext`] freezes a kernel and `n` sites. Its elements are
//! coefficient vectors `c ∈ R^{nd}` over the sections `K̃(·,(s_i, e_a))`, with
//! inner product `⟨x, y⟩ = xᵀ G y` where `G` is the block Gram matrix. Two
//! elements are equal in the RKHS when their difference lies (numerically) in
//! the null space of `G`.
//!
//! Site indices are zero-based throughout.

mod expansion;
mod family;
mod verify;

pub use expansion::ExpansionReport;
pub use family::TransformFamily;
pub use verify::{verify_identities, IdentityReport, IdentityResult, DEFAULT_SEED};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gram::{assemble_gram, BlockGram};
use crate::kernels::{HVec, OpMatrix, OperatorKernel, Site};
use crate::linalg::clamp_roundoff;

/// Default tolerance for equality modulo the null space of `G`.
pub const DEFAULT_NULL_TOL: f64 = 1e-10;

/// A frozen `(kernel, sites)` pair together with its Gram matrix.
#[derive(Debug, Clone)]
pub struct RkhsContext {
    kernel: OperatorKernel,
    gram: BlockGram,
    null_tol: f64,
    hash: String,
}

impl RkhsContext {
    /// Assemble the Gram matrix and require it to be PSD.
    pub fn new(kernel: OperatorKernel, sites: Vec<Site>) -> Result<Self> {
        let gram = assemble_gram(&kernel, &sites)?;
        Self::with_gram(kernel, gram)
    }

    /// Use a supplied Gram matrix; it must still pass the PSD check.
    pub fn with_gram(kernel: OperatorKernel, gram: BlockGram) -> Result<Self> {
        let report = gram.psd_check()?;
        if !report.psd {
            return Err(Error::NotPsd { min_eig: report.min_eig });
        }
        Self::with_gram_unchecked(kernel, gram)
    }

    /// Use a supplied Gram matrix without certifying it.
    ///
    /// This is the fault-injection path: the identity suite is expected to
    /// flag any disagreement between the matrix and the kernel.
    pub fn with_gram_unchecked(kernel: OperatorKernel, gram: BlockGram) -> Result<Self> {
        if !kernel.is_square() {
            let (rows, cols) = kernel.shape();
            return Err(Error::NotSquare { rows, cols });
        }
        if gram.d() != kernel.dim() {
            return Err(Error::DimensionMismatch { expected: kernel.dim(), got: gram.d() });
        }
        let hash = context_hash(&kernel, &gram);
        Ok(RkhsContext { kernel, gram, null_tol: DEFAULT_NULL_TOL, hash })
    }

    pub fn with_null_tol(mut self, null_tol: f64) -> Self {
        self.null_tol = null_tol;
        self
    }

    pub fn kernel(&self) -> &OperatorKernel {
        &self.kernel
    }

    pub fn sites(&self) -> &[Site] {
        self.gram.sites()
    }

    pub fn gram(&self) -> &BlockGram {
        &self.gram
    }

    pub fn n(&self) -> usize {
        self.gram.n()
    }

    pub fn d(&self) -> usize {
        self.gram.d()
    }

    pub fn null_tol(&self) -> f64 {
        self.null_tol
    }

    /// Hex digest of the canonical kernel spec, the sites and the Gram data.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn zero(&self) -> RkhsElement<'_> {
        RkhsElement { ctx: self, coeffs: DVector::zeros(self.n() * self.d()) }
    }

    pub fn element(&self, coeffs: DVector<f64>) -> Result<RkhsElement<'_>> {
        let len = self.n() * self.d();
        if coeffs.len() != len {
            return Err(Error::DimensionMismatch { expected: len, got: coeffs.len() });
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("element coefficients"));
        }
        Ok(RkhsElement { ctx: self, coeffs })
    }

    /// The section `K̃(·,(s_i, e_a))`.
    pub fn section(&self, i: usize, a: usize) -> Result<RkhsElement<'_>> {
        self.check_index(i)?;
        if a >= self.d() {
            return Err(Error::IndexOutOfRange { index: a, len: self.d() });
        }
        let mut x = self.zero();
        x.coeffs[i * self.d() + a] = 1.0;
        Ok(x)
    }

    /// `xᵀ G y`; the self inner product is clamped at zero within roundoff.
    pub fn inner_product(&self, x: &RkhsElement<'_>, y: &RkhsElement<'_>) -> Result<f64> {
        self.check_member(x)?;
        self.check_member(y)?;
        let v = x.coeffs.dot(&self.apply_gram(&y.coeffs));
        if std::ptr::eq(x, y) || x.coeffs == y.coeffs {
            Ok(clamp_roundoff(v))
        } else {
            Ok(v)
        }
    }

    /// `V_i a = K̃(·,(s_i, a))`, i.e. coefficients `e_i ⊗ a`.
    pub fn feature_embed(&self, i: usize, a: &HVec) -> Result<RkhsElement<'_>> {
        self.check_index(i)?;
        self.check_hvec(a)?;
        Ok(self.embed_unchecked(i, a))
    }

    /// `V_i^* x`: block `i` of `G c`. On a section `(j, b)` this is `K(s_i, s_j) b`.
    pub fn feature_adjoint(&self, i: usize, x: &RkhsElement<'_>) -> Result<HVec> {
        self.check_index(i)?;
        self.check_member(x)?;
        Ok(self.gram_block_row(i, &x.coeffs))
    }

    /// `Σ_i = K(s_i, s_i)`, evaluated from the kernel.
    pub fn covariance(&self, i: usize) -> Result<OpMatrix> {
        self.check_index(i)?;
        let s = &self.sites()[i];
        self.kernel.evaluate(s, s)
    }

    /// `V_i V_i^* x = e_i ⊗ (G c)_i`.
    pub fn frame_projection(&self, i: usize, x: &RkhsElement<'_>) -> Result<RkhsElement<'_>> {
        let block = self.feature_adjoint(i, x)?;
        Ok(self.embed_unchecked(i, &block))
    }

    pub(crate) fn embed_unchecked(&self, i: usize, a: &HVec) -> RkhsElement<'_> {
        let d = self.d();
        let mut x = self.zero();
        x.coeffs.rows_mut(i * d, d).copy_from(a);
        x
    }

    pub(crate) fn apply_gram(&self, c: &DVector<f64>) -> DVector<f64> {
        self.gram.data() * c
    }

    pub(crate) fn gram_block_row(&self, i: usize, c: &DVector<f64>) -> HVec {
        let d = self.d();
        self.gram.data().rows(i * d, d) * c
    }

    pub(crate) fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            return Err(Error::IndexOutOfRange { index: i, len: self.n() });
        }
        Ok(())
    }

    pub(crate) fn check_hvec(&self, a: &HVec) -> Result<()> {
        if a.len() != self.d() {
            return Err(Error::DimensionMismatch { expected: self.d(), got: a.len() });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("H vector"));
        }
        Ok(())
    }

    pub(crate) fn check_member(&self, x: &RkhsElement<'_>) -> Result<()> {
        if std::ptr::eq(self, x.ctx) || self.hash == x.ctx.hash {
            Ok(())
        } else {
            Err(Error::ContextMismatch)
        }
    }

    /// Rebuild an element from its serialized form.
    pub fn element_from_record(&self, rec: &ElementRecord) -> Result<RkhsElement<'_>> {
        if rec.context_hash != self.hash {
            return Err(Error::ContextMismatch);
        }
        self.element(DVector::from_vec(rec.coeffs.clone()))
    }
}

fn context_hash(kernel: &OperatorKernel, gram: &BlockGram) -> String {
    let mut h = Sha256::new();
    h.update(kernel.spec().render().as_bytes());
    h.update([0u8]);
    for s in gram.sites() {
        h.update((s.dim() as u64).to_le_bytes());
        for c in s.coords() {
            h.update(c.to_le_bytes());
        }
    }
    h.update([0u8]);
    h.update((gram.d() as u64).to_le_bytes());
    for v in gram.data().iter() {
        h.update(v.to_le_bytes());
    }
    hex::encode(&h.finalize()[..16])
}

/// Serialized form of an element, `{context_hash, coeffs}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementRecord {
    pub context_hash: String,
    pub coeffs: Vec<f64>,
}

/// `Σ c_{(i,a)} K̃(·,(s_i, e_a))` within one context.
#[derive(Debug, Clone)]
pub struct RkhsElement<'c> {
    ctx: &'c RkhsContext,
    coeffs: DVector<f64>,
}

impl<'c> RkhsElement<'c> {
    pub fn context(&self) -> &'c RkhsContext {
        self.ctx
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    /// Coefficient block of site `i`.
    pub fn block(&self, i: usize) -> HVec {
        let d = self.ctx.d();
        self.coeffs.rows(i * d, d).into_owned()
    }

    pub fn norm_sq(&self) -> f64 {
        clamp_roundoff(self.coeffs.dot(&self.ctx.apply_gram(&self.coeffs))).max(0.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn plus(&self, other: &RkhsElement<'_>) -> Result<RkhsElement<'c>> {
        self.ctx.check_member(other)?;
        Ok(RkhsElement { ctx: self.ctx, coeffs: &self.coeffs + &other.coeffs })
    }

    pub fn minus(&self, other: &RkhsElement<'_>) -> Result<RkhsElement<'c>> {
        self.ctx.check_member(other)?;
        Ok(RkhsElement { ctx: self.ctx, coeffs: &self.coeffs - &other.coeffs })
    }

    pub fn scaled(&self, factor: f64) -> RkhsElement<'c> {
        RkhsElement { ctx: self.ctx, coeffs: &self.coeffs * factor }
    }

    /// `‖x - y‖_G`
    pub fn distance(&self, other: &RkhsElement<'_>) -> Result<f64> {
        Ok(self.minus(other)?.norm())
    }

    /// Equality modulo `null(G)`: `‖x - y‖_G ≤ tol·(1 + ‖x‖_G + ‖y‖_G)`.
    pub fn equals(&self, other: &RkhsElement<'_>) -> Result<bool> {
        let dist = self.distance(other)?;
        Ok(dist <= self.ctx.null_tol * (1.0 + self.norm() + other.norm()))
    }

    /// `x(t, a) = Σ_j aᵀ K(t, s_j) c_j`; `t` need not be a context site.
    pub fn evaluate(&self, t: &Site, a: &HVec) -> Result<f64> {
        self.ctx.check_hvec(a)?;
        let mut acc = 0.0;
        for (j, s) in self.ctx.sites().iter().enumerate() {
            let k = self.ctx.kernel.evaluate(t, s)?;
            acc += a.dot(&(k * self.block(j)));
        }
        Ok(acc)
    }

    pub fn to_record(&self) -> ElementRecord {
        ElementRecord { context_hash: self.ctx.hash.clone(), coeffs: self.coeffs.iter().copied().collect() }
    }
}

/// `max |a - b|` over two H vectors, scaled by `max(1, |a|_∞, |b|_∞)`.
pub(crate) fn vec_rel(a: &HVec, b: &HVec) -> f64 {
    let diff = (a - b).amax();
    diff / 1f64.max(a.amax()).max(b.amax())
}

pub(crate) fn scalar_rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// `e_a ∈ R^d`
pub(crate) fn basis_vec(d: usize, a: usize) -> HVec {
    let mut v = HVec::zeros(d);
    v[a] = 1.0;
    v
}

pub(crate) fn identity_gap(m: &DMatrix<f64>) -> f64 {
    (m - DMatrix::identity(m.nrows(), m.ncols())).amax()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::grid;

    fn ctx(text: &str, xs: &[f64]) -> RkhsContext {
        let sites = xs.iter().map(|&x| Site::from(x)).collect();
        RkhsContext::new(OperatorKernel::parse(text).unwrap(), sites).unwrap()
    }

    fn v(xs: &[f64]) -> HVec {
        HVec::from_row_slice(xs)
    }

    #[test]
    fn make_context_examples() {
        let c = ctx("gauss(sigma=1,ell=1)", &[0.0, 1.0]);
        let e = (-0.5f64).exp();
        assert_eq!(c.gram().data(), &DMatrix::from_row_slice(2, 2, &[1.0, e, e, 1.0]));
        let c3 = ctx("diagexp3", &[0.0, 1.0]);
        assert_eq!(c3.gram().data().nrows(), 6);

        let bad = BlockGram::from_raw(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            1,
            vec![Site::from(0.0), Site::from(1.0)],
        )
        .unwrap();
        let err = RkhsContext::with_gram(OperatorKernel::parse("gauss").unwrap(), bad).unwrap_err();
        assert!(matches!(err, Error::NotPsd { .. }));
    }

    #[test]
    fn indefinite_kernel_context_fails() {
        let sites = vec![Site::from(0.0), Site::from(2.0)];
        let err = RkhsContext::new(OperatorKernel::parse("rational2").unwrap(), sites).unwrap_err();
        assert!(matches!(err, Error::NotPsd { .. }));
    }

    #[test]
    fn inner_product_examples() {
        let c = ctx("diagexp3", &[0.0, 1.0, 2.5]);
        for i in 0..3 {
            for a in 0..3 {
                let x = c.section(i, a).unwrap();
                let k = c.covariance(i).unwrap()[(a, a)];
                assert_eq!(c.inner_product(&x, &x).unwrap(), k);
            }
        }
        let g = ctx("gauss(sigma=1,ell=1)", &[0.0, 1.0]);
        let x = g.section(0, 0).unwrap();
        let y = g.section(1, 0).unwrap();
        assert_eq!(g.inner_product(&x, &y).unwrap(), (-0.5f64).exp());
        assert_eq!(g.inner_product(&g.zero(), &y).unwrap(), 0.0);
    }

    #[test]
    fn context_mismatch_is_an_error() {
        let a = ctx("gauss", &[0.0, 1.0]);
        let b = ctx("gauss", &[0.0, 2.0]);
        let x = a.section(0, 0).unwrap();
        let y = b.section(0, 0).unwrap();
        assert_eq!(a.inner_product(&x, &y), Err(Error::ContextMismatch));
        assert_eq!(a.feature_adjoint(0, &y), Err(Error::ContextMismatch));
        // identical content hashes to the same context
        let a2 = ctx("gauss", &[0.0, 1.0]);
        assert!(a.inner_product(&x, &a2.section(1, 0).unwrap()).is_ok());
    }

    #[test]
    fn evaluate_element_examples() {
        let g = ctx("gauss(sigma=1,ell=1)", &[0.0]);
        let x = g.feature_embed(0, &v(&[1.0])).unwrap();
        let val = x.evaluate(&Site::from(1.0), &v(&[1.0])).unwrap();
        assert!((val - 0.606531).abs() < 1e-6);
        assert_eq!(g.zero().evaluate(&Site::from(0.3), &v(&[2.0])).unwrap(), 0.0);

        let c = ctx("separable(b=[[2,0.5],[0.5,1]],base=gauss(sigma=1,ell=0.5))", &[0.0, 0.4]);
        let s = c.section(1, 1).unwrap();
        let at_site = s.evaluate(&c.sites()[1], &v(&[0.0, 1.0])).unwrap();
        assert_eq!(at_site, c.covariance(1).unwrap()[(1, 1)]);
        assert!(s.evaluate(&c.sites()[1], &v(&[1.0])).is_err());
    }

    #[test]
    fn evaluate_at_site_matches_gram_row() {
        let c = ctx("normalized(inner=separable(b=[[2,0.5],[0.5,1]],base=gauss(sigma=2,ell=0.7)))", &[0.0, 0.3, 1.1]);
        let x = c.element(DVector::from_vec(vec![0.3, -1.0, 2.0, 0.5, -0.7, 1.2])).unwrap();
        let gc = c.apply_gram(x.coeffs());
        for i in 0..3 {
            let a = v(&[0.6, -0.8]);
            let direct = x.evaluate(&c.sites()[i], &a).unwrap();
            let via_gram = gc.rows(i * 2, 2).dot(&a);
            assert!((direct - via_gram).abs() < 1e-14);
        }
    }

    #[test]
    fn feature_embed_examples() {
        let n = ctx("normalized(inner=gauss(sigma=3,ell=0.5))", &[0.0, 0.2, 0.9]);
        for i in 0..3 {
            let x = n.feature_embed(i, &v(&[1.0])).unwrap();
            assert!((x.norm() - 1.0).abs() < 1e-12);
        }
        let z = n.feature_embed(1, &v(&[0.0])).unwrap();
        assert_eq!(z.coeffs(), n.zero().coeffs());
        let d = ctx("diagexp3", &[0.0, 1.0]);
        let x = d.feature_embed(0, &v(&[0.0, 1.0, 0.0])).unwrap();
        assert_eq!(x.norm_sq(), 1.0);
        assert!(matches!(d.feature_embed(2, &v(&[0.0, 1.0, 0.0])), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(d.feature_embed(0, &v(&[0.0, 1.0])), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn feature_adjoint_examples() {
        let d = ctx("diagexp3", &[0.0, 1.0]);
        let x = d.feature_embed(1, &v(&[0.0, 1.0, 0.0])).unwrap();
        let e = (-1.0f64).exp();
        assert_eq!(d.feature_adjoint(0, &x).unwrap(), v(&[0.0, e, 0.0]));
        assert_eq!(d.feature_adjoint(0, &d.zero()).unwrap(), v(&[0.0, 0.0, 0.0]));
        let g = ctx("gauss(sigma=1,ell=1)", &[0.0, 1.0]);
        assert_eq!(g.feature_adjoint(0, &g.section(0, 0).unwrap()).unwrap(), v(&[1.0]));
    }

    #[test]
    fn covariance_examples() {
        assert_eq!(ctx("gauss(sigma=2)", &[0.5]).covariance(0).unwrap(), DMatrix::from_element(1, 1, 4.0));
        assert_eq!(ctx("diagexp3", &[0.5, 2.0]).covariance(1).unwrap(), DMatrix::identity(3, 3));
        assert_eq!(ctx("rational2", &[0.5]).covariance(0).unwrap(), DMatrix::from_element(2, 2, 1.0));
        assert!(ctx("rational2", &[0.5]).covariance(1).is_err());
    }

    #[test]
    fn frame_projection_examples() {
        let n = ctx("normalized(inner=gauss(sigma=3,ell=0.5))", &[0.0, 0.2, 0.9]);
        let x = n.section(1, 0).unwrap();
        let p = n.frame_projection(1, &x).unwrap();
        assert!(p.equals(&x).unwrap());
        assert!(p.distance(&x).unwrap() < 1e-12);
        assert_eq!(n.frame_projection(2, &n.zero()).unwrap().coeffs(), n.zero().coeffs());

        // dense oracle: e_0 ⊗ (G c)_0 with c the section (1, e_2)
        let d = ctx("diagexp3", &[0.0, 1.0]);
        let x = d.feature_embed(1, &v(&[0.0, 1.0, 0.0])).unwrap();
        let p = d.frame_projection(0, &x).unwrap();
        let gc = d.gram().data() * x.coeffs();
        let mut oracle = DVector::zeros(6);
        oracle.rows_mut(0, 3).copy_from(&gc.rows(0, 3));
        assert_eq!(p.coeffs(), &oracle);
        let e = (-1.0f64).exp();
        assert_eq!(p.coeffs(), &DVector::from_vec(vec![0.0, e, 0.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn equality_is_modulo_null_space() {
        // constant kernel: all sections at different sites coincide
        let c = ctx("const", &[0.0, 1.0, 2.0]);
        let x = c.section(0, 0).unwrap();
        let y = c.section(2, 0).unwrap();
        assert!(x.equals(&y).unwrap());
        assert!(!x.equals(&c.zero()).unwrap());
    }

    #[test]
    fn records_round_trip() {
        let c = ctx("gauss(dim=2)", &[0.0, 1.0]);
        let x = c.feature_embed(1, &v(&[0.25, -3.0])).unwrap();
        let json = serde_json::to_string(&x.to_record()).unwrap();
        let rec: ElementRecord = serde_json::from_str(&json).unwrap();
        let back = c.element_from_record(&rec).unwrap();
        assert_eq!(back.coeffs(), x.coeffs());
        let other = ctx("gauss(dim=2)", &[0.0, 1.5]);
        assert_eq!(other.element_from_record(&rec).unwrap_err(), Error::ContextMismatch);
    }

    #[test]
    fn hash_depends_on_sites_kernel_and_gram() {
        let k = OperatorKernel::parse("gauss").unwrap();
        let s = grid(0.0, 1.0, 3).unwrap();
        let a = RkhsContext::new(k.clone(), s.clone()).unwrap();
        let b = RkhsContext::new(OperatorKernel::parse("gauss(ell=2)").unwrap(), s.clone()).unwrap();
        let mut data = a.gram().data().clone();
        data[(0, 0)] += 0.1;
        let raw = BlockGram::from_raw(data, 1, s).unwrap();
        let c = RkhsContext::with_gram_unchecked(k, raw).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 32);
    }
}
