use nalgebra::DMatrix;
use serde::Serialize;

use super::{basis_vec, RkhsContext, RkhsElement};
use crate::error::{Error, Result};
use crate::linalg::{sorted_sym_eigen, symmetrize};

/// How well an orthonormal family reproduces `K̃` on the context grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionReport {
    pub basis_size: usize,
    pub trunc_tol: f64,
    /// `max |Σ_k φ_k(s_i,e_a) φ_k(s_j,e_b) - K̃((s_i,e_a),(s_j,e_b))|`
    pub max_reconstruction_error: f64,
    /// `max |⟨φ_k, φ_l⟩ - δ_kl|`
    pub max_orthonormality_error: f64,
    pub eigenvalues: Vec<f64>,
}

impl RkhsContext {
    /// Orthonormal family `φ_k = u_k / √λ_k` from the eigenpairs of `G` with
    /// `λ_k > trunc_tol · λ_max`.
    pub fn onb_expansion(&self, trunc_tol: f64) -> Result<Vec<RkhsElement<'_>>> {
        Ok(self.onb_with_values(trunc_tol)?.0)
    }

    fn onb_with_values(&self, trunc_tol: f64) -> Result<(Vec<RkhsElement<'_>>, Vec<f64>)> {
        if !(trunc_tol >= 0.0) || !trunc_tol.is_finite() {
            return Err(Error::Domain("trunc_tol must be finite and >= 0".into()));
        }
        let (values, vectors) = sorted_sym_eigen(&symmetrize(self.gram().data()));
        let threshold = trunc_tol * values[0].max(0.0);
        let mut basis = Vec::new();
        let mut kept = Vec::new();
        for (k, &lambda) in values.iter().enumerate() {
            if lambda > threshold && lambda > 0.0 {
                basis.push(self.element(vectors.column(k) / lambda.sqrt())?);
                kept.push(lambda);
            }
        }
        if basis.is_empty() {
            return Err(Error::EmptyExpansion { threshold });
        }
        Ok((basis, kept))
    }

    /// Build the truncated expansion and measure it against the kernel.
    pub fn expansion_report(&self, trunc_tol: f64) -> Result<ExpansionReport> {
        let (basis, eigenvalues) = self.onb_with_values(trunc_tol)?;
        let (n, d) = (self.n(), self.d());
        let size = n * d;

        // values[(i,a), k] = φ_k(s_i, e_a), evaluated through the kernel
        let mut values = DMatrix::zeros(size, basis.len());
        for (k, phi) in basis.iter().enumerate() {
            for (i, s) in self.sites().iter().enumerate() {
                for a in 0..d {
                    values[(i * d + a, k)] = phi.evaluate(s, &basis_vec(d, a))?;
                }
            }
        }
        let reproduced = &values * values.transpose();
        let mut max_err = 0.0f64;
        for (i, si) in self.sites().iter().enumerate() {
            for (j, sj) in self.sites().iter().enumerate() {
                let block = self.kernel().evaluate(si, sj)?;
                for a in 0..d {
                    for b in 0..d {
                        let err = (reproduced[(i * d + a, j * d + b)] - block[(a, b)]).abs();
                        max_err = max_err.max(err);
                    }
                }
            }
        }

        let mut ortho_err = 0.0f64;
        for (k, x) in basis.iter().enumerate() {
            for (l, y) in basis.iter().enumerate() {
                let target = if k == l { 1.0 } else { 0.0 };
                ortho_err = ortho_err.max((self.inner_product(x, y)? - target).abs());
            }
        }

        Ok(ExpansionReport {
            basis_size: basis.len(),
            trunc_tol,
            max_reconstruction_error: max_err,
            max_orthonormality_error: ortho_err,
            eigenvalues,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{grid, OperatorKernel, Site};

    fn ctx(text: &str, sites: Vec<Site>) -> RkhsContext {
        RkhsContext::new(OperatorKernel::parse(text).unwrap(), sites).unwrap()
    }

    #[test]
    fn constant_kernel_has_one_basis_function() {
        let c = ctx("const", grid(0.0, 1.0, 3).unwrap());
        let basis = c.onb_expansion(1e-12).unwrap();
        assert_eq!(basis.len(), 1);
        let report = c.expansion_report(1e-12).unwrap();
        assert_eq!(report.basis_size, 1);
        assert!(report.max_reconstruction_error < 1e-14);
    }

    #[test]
    fn gaussian_two_sites_against_closed_form() {
        // oracle: [[1,e],[e,1]] has eigenpairs (1±e, (1,±1)/√2), so
        // φ_± = (1,±1)/√(2(1±e)) in coefficient space
        let c = ctx("gauss(sigma=1,ell=1)", vec![Site::from(0.0), Site::from(1.0)]);
        let e = (-0.5f64).exp();
        let basis = c.onb_expansion(1e-12).unwrap();
        assert_eq!(basis.len(), 2);
        let plus = 1.0 / (2.0 * (1.0 + e)).sqrt();
        let minus = 1.0 / (2.0 * (1.0 - e)).sqrt();
        let c0 = basis[0].coeffs();
        let c1 = basis[1].coeffs();
        assert!((c0[0].abs() - plus).abs() < 1e-12 && (c0[0] - c0[1]).abs() < 1e-12);
        assert!((c1[0].abs() - minus).abs() < 1e-12 && (c1[0] + c1[1]).abs() < 1e-12);
        let report = c.expansion_report(1e-12).unwrap();
        assert!(report.max_reconstruction_error <= 1e-10);
        assert!(report.max_orthonormality_error <= 1e-12);
    }

    #[test]
    fn everything_truncated_is_an_error() {
        let c = ctx("gauss", grid(0.0, 1.0, 4).unwrap());
        assert!(matches!(c.onb_expansion(2.0), Err(Error::EmptyExpansion { .. })));
        assert!(matches!(c.onb_expansion(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn vector_valued_expansion() {
        let c = ctx(
            "separable(b=[[2,0.5],[0.5,1]],base=gauss(sigma=1,ell=0.3))",
            grid(0.0, 1.0, 6).unwrap(),
        );
        let report = c.expansion_report(1e-13).unwrap();
        assert!(report.max_reconstruction_error <= 1e-9);
        assert!(report.max_orthonormality_error <= 1e-9);
    }
}
