//! Centered Gaussian processes on the context sites with covariance
//! `G + εI`, sampled as `L z` from the cached Cholesky factor.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::OpMatrix;
use crate::rkhs::RkhsContext;

/// `count` sampled paths, each a flat `n·d` vector in block order.
#[derive(Debug, Clone)]
pub struct SampleBatch<'c> {
    ctx: &'c RkhsContext,
    seed: u64,
    jitter: f64,
    paths: Vec<DVector<f64>>,
}

/// Path `p` draws its normals from ChaCha stream `p` of `seed`, so any
/// subset of paths can be regenerated independently.
pub fn sample_paths(ctx: &RkhsContext, count: usize, seed: u64) -> Result<SampleBatch<'_>> {
    if count == 0 {
        return Err(Error::Domain("count must be >= 1".into()));
    }
    let factor = ctx.gram().factorize()?;
    let size = ctx.n() * ctx.d();
    let paths = (0..count)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let z = DVector::from_fn(size, |_, _| rng.sample::<f64, _>(StandardNormal));
            &factor.l * z
        })
        .collect();
    Ok(SampleBatch { ctx, seed, jitter: factor.jitter, paths })
}

impl<'c> SampleBatch<'c> {
    /// Wrap externally produced paths, e.g. read back from disk.
    pub fn from_paths(ctx: &'c RkhsContext, seed: u64, jitter: f64, paths: Vec<DVector<f64>>) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::Empty("sample batch"));
        }
        let size = ctx.n() * ctx.d();
        if let Some(p) = paths.iter().find(|p| p.len() != size) {
            return Err(Error::DimensionMismatch { expected: size, got: p.len() });
        }
        Ok(SampleBatch { ctx, seed, jitter, paths })
    }

    pub fn context(&self) -> &'c RkhsContext {
        self.ctx
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn count(&self) -> usize {
        self.paths.len()
    }

    /// Diagonal jitter `ε` of the factor the paths were drawn from.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn paths(&self) -> &[DVector<f64>] {
        &self.paths
    }

    /// Value of path `p` at site `i`.
    pub fn value(&self, p: usize, i: usize) -> DVector<f64> {
        let d = self.ctx.d();
        self.paths[p].rows(i * d, d).into_owned()
    }

    /// `(1/N) Σ_p f_p f_pᵀ` as an `nd × nd` matrix, summed serially in path
    /// order.
    pub fn empirical_covariance_matrix(&self) -> DMatrix<f64> {
        let size = self.ctx.n() * self.ctx.d();
        let mut acc = DMatrix::zeros(size, size);
        for p in &self.paths {
            acc.ger(1.0, p, p, 1.0);
        }
        acc / self.paths.len() as f64
    }

    /// `Ĉ[i][j]`, the `d × d` blocks of [`Self::empirical_covariance_matrix`].
    pub fn empirical_covariance(&self) -> Vec<Vec<OpMatrix>> {
        let (n, d) = (self.ctx.n(), self.ctx.d());
        let full = self.empirical_covariance_matrix();
        (0..n)
            .map(|i| (0..n).map(|j| full.view((i * d, j * d), (d, d)).into_owned()).collect())
            .collect()
    }

    /// `G + εI` with the jitter actually used.
    pub fn target_covariance(&self) -> DMatrix<f64> {
        let g = self.ctx.gram().data();
        g + DMatrix::identity(g.nrows(), g.ncols()) * self.jitter
    }

    pub fn covariance_error_report(&self) -> CovErrorReport {
        self.covariance_error_against(&self.target_covariance())
    }

    /// Compare against an arbitrary `nd × nd` target. The Monte Carlo
    /// tolerance is `4·max √((T_aa T_bb + T_ab²)/N)`.
    pub fn covariance_error_against(&self, target: &DMatrix<f64>) -> CovErrorReport {
        let (n, d) = (self.ctx.n(), self.ctx.d());
        let emp = self.empirical_covariance_matrix();
        let count = self.paths.len() as f64;
        let mut per_block_err = DMatrix::zeros(n, n);
        let mut max_abs_err = 0.0f64;
        let mut worst_sd = 0.0f64;
        for r in 0..n * d {
            for c in 0..n * d {
                let err = (emp[(r, c)] - target[(r, c)]).abs();
                let blk = &mut per_block_err[(r / d, c / d)];
                *blk = f64::max(*blk, err);
                max_abs_err = max_abs_err.max(err);
                let var = (target[(r, r)] * target[(c, c)] + target[(r, c)].powi(2)) / count;
                worst_sd = worst_sd.max(var.max(0.0).sqrt());
            }
        }
        let mc_tolerance = 4.0 * worst_sd;
        CovErrorReport {
            max_abs_err,
            per_block_err,
            mc_tolerance,
            pass: max_abs_err <= mc_tolerance,
            jitter_used: self.jitter,
            count: self.paths.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovErrorReport {
    pub max_abs_err: f64,
    /// `max |Ĉ - T|` within each `d × d` block.
    #[serde(serialize_with = "rows")]
    pub per_block_err: DMatrix<f64>,
    pub mc_tolerance: f64,
    pub pass: bool,
    pub jitter_used: f64,
    pub count: usize,
}

fn rows<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for r in m.row_iter() {
        seq.serialize_element(&r.iter().copied().collect::<Vec<_>>())?;
    }
    seq.end()
}
