use nalgebra::DMatrix;

use super::{identity_gap, RkhsContext, RkhsElement};
use crate::error::{Error, Result};
use crate::kernels::{HVec, OpMatrix};

/// Per-site bounded maps `B_i` defining `W_i a = K̃(·,(s_i, B_i a))`.
#[derive(Debug, Clone)]
pub struct TransformFamily<'c> {
    ctx: &'c RkhsContext,
    mats: Vec<OpMatrix>,
    unitary: bool,
}

impl<'c> TransformFamily<'c> {
    pub fn new(ctx: &'c RkhsContext, mats: Vec<OpMatrix>) -> Result<Self> {
        if mats.len() != ctx.n() {
            return Err(Error::DimensionMismatch { expected: ctx.n(), got: mats.len() });
        }
        let d = ctx.d();
        for m in &mats {
            if m.shape() != (d, d) {
                return Err(Error::DimensionMismatch { expected: d, got: m.nrows().max(m.ncols()) });
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("transform matrix"));
            }
        }
        let unitary = mats.iter().all(|b| identity_gap(&(b.transpose() * b)) <= 1e-10);
        Ok(TransformFamily { ctx, mats, unitary })
    }

    /// `B_i = I` for every site.
    pub fn identity(ctx: &'c RkhsContext) -> Self {
        let mats = vec![DMatrix::identity(ctx.d(), ctx.d()); ctx.n()];
        TransformFamily { ctx, mats, unitary: true }
    }

    pub fn context(&self) -> &'c RkhsContext {
        self.ctx
    }

    pub fn mats(&self) -> &[OpMatrix] {
        &self.mats
    }

    /// Set when every `B_i` satisfies `max |B_iᵀB_i - I| ≤ 1e-10`.
    pub fn is_unitary(&self) -> bool {
        self.unitary
    }

    /// `W_i a`, coefficients `e_i ⊗ (B_i a)`.
    pub fn transformed_embed(&self, i: usize, a: &HVec) -> Result<RkhsElement<'c>> {
        self.ctx.check_index(i)?;
        self.ctx.check_hvec(a)?;
        Ok(self.ctx.embed_unchecked(i, &(&self.mats[i] * a)))
    }

    /// `W_i^* x = B_iᵀ (G c)_i`.
    pub fn transformed_adjoint(&self, i: usize, x: &RkhsElement<'_>) -> Result<HVec> {
        self.ctx.check_index(i)?;
        self.ctx.check_member(x)?;
        Ok(self.mats[i].transpose() * self.ctx.gram_block_row(i, x.coeffs()))
    }

    /// `(W_{i₁}W_{i₁}^*) ⋯ (W_{i_k}W_{i_k}^*) x`, applied as literal compositions
    /// with the rightmost factor first. Each factor maps `c` to
    /// `e_i ⊗ (B_i B_iᵀ (G c)_i)`.
    pub fn chain_apply(&self, indices: &[usize], x: &RkhsElement<'_>) -> Result<RkhsElement<'c>> {
        if indices.is_empty() {
            return Err(Error::Empty("chain index list"));
        }
        self.ctx.check_member(x)?;
        for &i in indices {
            self.ctx.check_index(i)?;
        }
        let mut cur = self.ctx.element(x.coeffs().clone())?;
        for &i in indices.iter().rev() {
            let pulled = self.transformed_adjoint(i, &cur)?;
            cur = self.ctx.embed_unchecked(i, &(&self.mats[i] * pulled));
        }
        Ok(cur)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{OperatorKernel, Site};
    use nalgebra::DVector;

    fn ctx(text: &str, xs: &[f64]) -> RkhsContext {
        let sites = xs.iter().map(|&x| Site::from(x)).collect();
        RkhsContext::new(OperatorKernel::parse(text).unwrap(), sites).unwrap()
    }

    fn v(xs: &[f64]) -> HVec {
        HVec::from_row_slice(xs)
    }

    fn rotation(theta: f64) -> OpMatrix {
        let (s, c) = theta.sin_cos();
        DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
    }

    #[test]
    fn identity_transform_matches_feature_maps() {
        let c = ctx("diagexp3", &[0.0, 0.4, 1.0]);
        let fam = TransformFamily::identity(&c);
        let a = v(&[0.3, -1.0, 2.0]);
        let w = fam.transformed_embed(2, &a).unwrap();
        assert_eq!(w.coeffs(), c.feature_embed(2, &a).unwrap().coeffs());
        let x = c.element(DVector::from_fn(9, |k, _| k as f64 - 4.0)).unwrap();
        assert_eq!(fam.transformed_adjoint(1, &x).unwrap(), c.feature_adjoint(1, &x).unwrap());
        assert!(fam.is_unitary());
    }

    #[test]
    fn zero_transform_gives_zero() {
        let c = ctx("gauss(dim=2)", &[0.0, 1.0]);
        let fam = TransformFamily::new(&c, vec![DMatrix::zeros(2, 2); 2]).unwrap();
        let w = fam.transformed_embed(0, &v(&[1.0, 2.0])).unwrap();
        assert_eq!(w.coeffs(), c.zero().coeffs());
        assert!(!fam.is_unitary());
    }

    #[test]
    fn rotation_preserves_norm_under_scalar_kernel() {
        let sigma: f64 = 1.7;
        let c = ctx("gauss(sigma=1.7,ell=0.5,dim=2)", &[0.0, 0.3]);
        let fam = TransformFamily::new(&c, vec![rotation(0.3), rotation(-2.0)]).unwrap();
        assert!(fam.is_unitary());
        let a = v(&[0.6, 0.8]);
        for i in 0..2 {
            let w = fam.transformed_embed(i, &a).unwrap();
            assert!((w.norm_sq() - sigma * sigma).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_with_masking_transform() {
        // dense oracle Bᵀ (G c)_0 for c the section (1, (1,1,1))
        let c = ctx("diagexp3", &[0.0, 1.0]);
        let b0 = DMatrix::from_diagonal(&v(&[0.0, 1.0, 0.0]));
        let fam = TransformFamily::new(&c, vec![b0.clone(), DMatrix::identity(3, 3)]).unwrap();
        let x = c.feature_embed(1, &v(&[1.0, 1.0, 1.0])).unwrap();
        let gc = c.gram().data() * x.coeffs();
        let oracle = b0.transpose() * gc.rows(0, 3);
        let got = fam.transformed_adjoint(0, &x).unwrap();
        assert_eq!(got, oracle);
        assert_eq!(got, v(&[0.0, (-1.0f64).exp(), 0.0]));
        assert_eq!(fam.transformed_adjoint(0, &c.zero()).unwrap(), v(&[0.0, 0.0, 0.0]));
    }

    #[test]
    fn chain_fixes_range_under_normalization() {
        let c = ctx("normalized(inner=gauss(sigma=2,ell=0.4))", &[0.0, 0.5, 1.0]);
        let fam = TransformFamily::identity(&c);
        let x = c.section(1, 0).unwrap();
        assert!(fam.chain_apply(&[1], &x).unwrap().equals(&x).unwrap());
    }

    #[test]
    fn chain_is_idempotent_for_unitary_normalized() {
        let c = ctx("normalized(inner=gauss(sigma=2,ell=0.4,dim=2))", &[0.0, 0.5, 1.0]);
        let fam =
            TransformFamily::new(&c, vec![rotation(0.1), rotation(1.0), rotation(2.5)]).unwrap();
        let x = c.element(DVector::from_vec(vec![1.0, -0.5, 0.2, 2.0, -1.5, 0.7])).unwrap();
        let once = fam.chain_apply(&[2], &x).unwrap();
        let twice = fam.chain_apply(&[2, 2], &x).unwrap();
        assert!(twice.distance(&once).unwrap() <= 1e-12 * (1.0 + x.norm()));
    }

    #[test]
    fn chain_errors() {
        let c = ctx("gauss", &[0.0, 1.0]);
        let fam = TransformFamily::identity(&c);
        assert_eq!(fam.chain_apply(&[], &c.zero()).unwrap_err(), Error::Empty("chain index list"));
        assert!(matches!(fam.chain_apply(&[0, 5], &c.zero()), Err(Error::IndexOutOfRange { .. })));
        assert!(TransformFamily::new(&c, vec![DMatrix::identity(1, 1)]).is_err());
        assert!(TransformFamily::new(&c, vec![DMatrix::identity(2, 2); 2]).is_err());
    }
}
