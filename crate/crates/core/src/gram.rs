//! Block Gram matrices `G[i,j] = K(s_i, s_j)`, PSD certificates, jittered
//! Cholesky factors and spectral-decay diagnostics.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{grid, OperatorKernel, Site};
use crate::linalg::{max_abs_diff, psd_tolerance, sorted_sym_eigen, symmetrize};

/// Default cap on `n·d`.
pub const DEFAULT_SIZE_CAP: usize = 5000;

/// Tolerances reported in every [`SpectrumReport::effective_rank`] map.
pub const EFFECTIVE_RANK_TOLS: [f64; 6] = [1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12];

/// Relative bound on `max |LLᵀ - (G + εI)|`, scaled by `1 + max |G|`.
pub const RECONSTRUCTION_TOL: f64 = 1e-8;

/// Jitter ladder exponents applied to `tr(G)/(nd)` after the jitter-free attempt.
const JITTER_EXPONENTS: [i32; 7] = [-12, -11, -10, -9, -8, -7, -6];

/// Eigen-summary of a symmetric matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    /// Nonincreasing.
    pub eigenvalues: Vec<f64>,
    pub lambda_max: f64,
    pub min_eig: f64,
    pub psd: bool,
    pub trace: f64,
    /// Keyed by the tolerance rendered as `1e-6` etc.
    pub effective_rank: BTreeMap<String, usize>,
}

impl SpectrumReport {
    /// Full symmetric eigendecomposition of `(M + Mᵀ)/2`.
    pub fn of_matrix(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
        }
        if m.nrows() == 0 {
            return Err(Error::Empty("matrix"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Eigen("non-finite matrix entries".into()));
        }
        let (eigenvalues, _) = sorted_sym_eigen(&symmetrize(m));
        if eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::Eigen("non-finite eigenvalues".into()));
        }
        let lambda_max = eigenvalues[0];
        let min_eig = *eigenvalues.last().unwrap();
        let psd = min_eig >= -psd_tolerance(lambda_max);
        let mut report = SpectrumReport {
            eigenvalues,
            lambda_max,
            min_eig,
            psd,
            trace: m.trace(),
            effective_rank: BTreeMap::new(),
        };
        for eps in EFFECTIVE_RANK_TOLS {
            let k = report.effective_rank_at(eps);
            report.effective_rank.insert(format!("{eps:e}"), k);
        }
        Ok(report)
    }

    /// Smallest `k` with `Σ_{m ≥ k} λ_m ≤ ε · trace`.
    pub fn effective_rank_at(&self, eps: f64) -> usize {
        let len = self.eigenvalues.len();
        // tails[k] = Σ_{m ≥ k} λ_m, summed smallest-first
        let mut tails = vec![0.0; len + 1];
        for k in (0..len).rev() {
            tails[k] = tails[k + 1] + self.eigenvalues[k];
        }
        let budget = eps * tails[0];
        (0..=len).find(|&k| tails[k] <= budget).unwrap_or(len)
    }
}

/// Lower-triangular `L` with `LLᵀ = G + εI`.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub l: DMatrix<f64>,
    pub jitter: f64,
}

/// An `nd × nd` block Gram matrix plus lazily populated spectrum and factor.
#[derive(Debug)]
pub struct BlockGram {
    n: usize,
    d: usize,
    sites: Vec<Site>,
    data: DMatrix<f64>,
    spectrum: OnceLock<SpectrumReport>,
    factor: OnceLock<Factor>,
}

impl Clone for BlockGram {
    fn clone(&self) -> Self {
        BlockGram {
            n: self.n,
            d: self.d,
            sites: self.sites.clone(),
            data: self.data.clone(),
            spectrum: self.spectrum.clone(),
            factor: self.factor.clone(),
        }
    }
}

/// Assemble `G` for `k` on `sites` with the default size cap.
pub fn assemble_gram(k: &OperatorKernel, sites: &[Site]) -> Result<BlockGram> {
    BlockGram::assemble(k, sites, DEFAULT_SIZE_CAP)
}

impl BlockGram {
    pub fn assemble(k: &OperatorKernel, sites: &[Site], cap: usize) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::Empty("site list"));
        }
        if !k.is_square() {
            let (rows, cols) = k.shape();
            return Err(Error::NotSquare { rows, cols });
        }
        let n = sites.len();
        let d = k.dim();
        let size = n * d;
        if size > cap {
            return Err(Error::SizeCap { size, cap });
        }
        let blocks: Vec<DMatrix<f64>> = (0..n * n)
            .into_par_iter()
            .map(|p| k.evaluate(&sites[p / n], &sites[p % n]))
            .collect::<Result<_>>()?;
        let mut data = DMatrix::zeros(size, size);
        for (p, block) in blocks.iter().enumerate() {
            let (i, j) = (p / n, p % n);
            data.view_mut((i * d, j * d), (d, d)).copy_from(block);
        }
        Ok(Self::from_parts(n, d, sites.to_vec(), symmetrize(&data)))
    }

    /// Wrap an externally supplied matrix without symmetrizing it.
    ///
    /// Used to inject faults and to certify matrices that did not come from a
    /// kernel. `sites` must have `rows / d` entries.
    pub fn from_raw(data: DMatrix<f64>, d: usize, sites: Vec<Site>) -> Result<Self> {
        if !data.is_square() {
            return Err(Error::NotSquare { rows: data.nrows(), cols: data.ncols() });
        }
        if d == 0 || !data.nrows().is_multiple_of(d) {
            return Err(Error::DimensionMismatch { expected: d, got: data.nrows() });
        }
        let n = data.nrows() / d;
        if sites.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: sites.len() });
        }
        if n == 0 {
            return Err(Error::Empty("Gram matrix"));
        }
        Ok(Self::from_parts(n, d, sites, data))
    }

    fn from_parts(n: usize, d: usize, sites: Vec<Site>, data: DMatrix<f64>) -> Self {
        BlockGram { n, d, sites, data, spectrum: OnceLock::new(), factor: OnceLock::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.data.view((i * self.d, j * self.d), (self.d, self.d)).into_owned()
    }

    /// The `n × n` matrix of entries `((i,a), (j,a))` for one component `a`.
    pub fn component(&self, a: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.data[(i * self.d + a, j * self.d + a)])
    }

    /// Eigendecomposition and PSD flag; cached after the first call.
    pub fn psd_check(&self) -> Result<&SpectrumReport> {
        if let Some(r) = self.spectrum.get() {
            return Ok(r);
        }
        let report = SpectrumReport::of_matrix(&self.data)?;
        Ok(self.spectrum.get_or_init(|| report))
    }

    pub fn spectrum(&self) -> Option<&SpectrumReport> {
        self.spectrum.get()
    }

    /// Cholesky factor of `G + εI` with the smallest ε on the jitter ladder
    /// `{0, 1e-12·τ, 1e-11·τ, …, 1e-6·τ}`, `τ = tr(G)/(nd)`. Cached.
    ///
    /// When `τ ≤ 0` (e.g. an all-zero Gram) the ladder is scaled by 1 instead.
    pub fn factorize(&self) -> Result<&Factor> {
        if let Some(f) = self.factor.get() {
            return Ok(f);
        }
        let size = self.data.nrows();
        let mut scale = self.data.trace() / size as f64;
        if !(scale > 0.0) || !scale.is_finite() {
            scale = 1.0;
        }
        let tol = RECONSTRUCTION_TOL * (1.0 + self.data.amax());
        let sym = symmetrize(&self.data);
        let ladder =
            std::iter::once(0.0).chain(JITTER_EXPONENTS.iter().map(|&e| 10f64.powi(e) * scale));
        for jitter in ladder {
            let mut shifted = sym.clone();
            for k in 0..size {
                shifted[(k, k)] += jitter;
            }
            let Some(chol) = Cholesky::new(shifted) else { continue };
            let l = chol.l();
            let mut target = self.data.clone();
            for k in 0..size {
                target[(k, k)] += jitter;
            }
            if max_abs_diff(&(&l * l.transpose()), &target) <= tol {
                return Ok(self.factor.get_or_init(|| Factor { l, jitter }));
            }
        }
        Err(Error::Indefinite { max_jitter: 1e-6 * scale })
    }

    pub fn factor(&self) -> Option<&Factor> {
        self.factor.get()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.amax()
    }
}

/// Spectra of the Gram matrices of `k` on equispaced grids over `domain`.
///
/// Grids include both endpoints, so a grid with `n` points is nested in one
/// with `m` points whenever `n - 1` divides `m - 1`.
pub fn spectral_decay_profile(
    k: &OperatorKernel,
    site_counts: &[usize],
    domain: (f64, f64),
) -> Result<Vec<SpectrumReport>> {
    if site_counts.is_empty() {
        return Err(Error::Empty("site counts"));
    }
    if site_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain("site counts must be strictly increasing".into()));
    }
    site_counts
        .iter()
        .map(|&n| {
            let g = assemble_gram(k, &grid(domain.0, domain.1, n)?)?;
            g.psd_check().cloned()
        })
        .collect()
}
