//! Seeded randomized check of every identity of the feature/covariance
//! operator calculus on a frozen context.
//!
//! Trials run in parallel; trial `t` draws from the ChaCha stream `t` of the
//! suite seed, so the report does not depend on the thread count. Residuals
//! are merged by `max`, which is order independent.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::{basis_vec, identity_gap, scalar_rel, vec_rel, RkhsContext, RkhsElement, TransformFamily};
use crate::error::{Error, Result};
use crate::gram::assemble_gram;
use crate::kernels::{HVec, OpMatrix};
use crate::linalg::{min_max_sym_eig, sym_op_norm, symmetry_defect};

pub const DEFAULT_SEED: u64 = 0x5EED;

/// Name and pass threshold of every identity, in report order.
const TOLERANCES: &[(&str, f64)] = &[
    ("reproducing_property", 1e-12),
    ("feature_norm", 1e-12),
    ("covariance_self_adjoint", 1e-12),
    ("covariance_psd", 1e-10),
    ("covariance_factorization", 1e-12),
    ("kernel_factorization", 1e-12),
    ("adjoint_relation", 1e-10),
    ("frame_projection_action", 1e-10),
    ("projection_self_adjoint", 1e-10),
    ("projection_norm_bound", 1e-10),
    ("isometry", 1e-10),
    ("projection_idempotent", 1e-8),
    ("w_norm", 1e-10),
    ("w_adjoint", 1e-10),
    ("w_adjoint_relation", 1e-10),
    ("w_composition", 1e-10),
    ("w_composition_chain", 1e-10),
    ("w_frame_chain", 1e-10),
    ("w_cross", 1e-10),
    ("w_isometry", 1e-10),
    ("w_projection_idempotent", 1e-8),
    ("w_projection_self_adjoint", 1e-10),
    ("continuity_increment", 1e-12),
    ("evaluation_errors", 0.0),
];

const MAX_CHAIN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityResult {
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub trials: usize,
    pub seed: u64,
    /// Identities that apply to this context, keyed by name.
    pub identities: BTreeMap<String, IdentityResult>,
    /// Residuals of alternative closed forms that are recorded but not
    /// asserted (`W W^*` factors written with `B^*` only).
    pub diagnostics: BTreeMap<String, f64>,
}

impl IdentityReport {
    pub fn all_pass(&self) -> bool {
        self.identities.values().all(|r| r.pass)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.identities.iter().filter(|(_, r)| !r.pass).map(|(k, _)| k.as_str()).collect()
    }

    /// Worst residual across all identities.
    pub fn max_residual(&self) -> f64 {
        self.identities.values().map(|r| r.max_residual).fold(0.0, f64::max)
    }

    /// `{identity_name: {max_residual, tolerance, pass}}`
    pub fn identities_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.identities).expect("identity map serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<28} {:>12} {:>10}  status", "identity", "max_residual", "tolerance");
        for (name, r) in &self.identities {
            let status = if r.pass { "pass" } else { "FAIL" };
            let _ = writeln!(out, "{name:<28} {:>12.3e} {:>10.0e}  {status}", r.max_residual, r.tolerance);
        }
        for (name, v) in &self.diagnostics {
            let _ = writeln!(out, "{name:<28} {v:>12.3e} {:>10}  info", "-");
        }
        out
    }
}

/// Per-identity running maxima; NaN is recorded as +∞.
#[derive(Debug, Default, Clone)]
struct Residuals(BTreeMap<&'static str, f64>);

impl Residuals {
    fn record(&mut self, name: &'static str, value: f64) {
        let value = if value.is_nan() { f64::INFINITY } else { value };
        let slot = self.0.entry(name).or_insert(0.0);
        *slot = slot.max(value);
    }

    fn merge(&mut self, other: Residuals) {
        for (k, v) in other.0 {
            self.record(k, v);
        }
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

fn normal_mat(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |_, _| rng.sample(StandardNormal))
}

fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let qr = normal_mat(rng, d).qr();
    let r = qr.r();
    let mut q = qr.q();
    for k in 0..d {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    q
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// `‖x - y‖_G / (1 + ‖x‖_G + ‖y‖_G)`
fn g_rel(x: &RkhsElement<'_>, y: &RkhsElement<'_>) -> Result<f64> {
    Ok(x.distance(y)? / (1.0 + x.norm() + y.norm()))
}

/// Run the identity suite.
///
/// `fam` supplies the transforms `B_i` for the `W` identities; when absent a
/// seeded Gaussian family is drawn. The isometry/projection identities for
/// `V` and `W` are only included when the kernel is normalized on every
/// context site (`max |K(s_i,s_i) - I| ≤ 1e-10`); the `W` variants use `fam`
/// if it is unitary and a seeded random orthogonal family otherwise.
pub fn verify_identities(
    ctx: &RkhsContext,
    fam: Option<&TransformFamily<'_>>,
    trials: usize,
    seed: u64,
) -> Result<IdentityReport> {
    if trials == 0 {
        return Err(Error::Domain("trials must be >= 1".into()));
    }
    if let Some(f) = fam {
        if f.context().hash() != ctx.hash() {
            return Err(Error::ContextMismatch);
        }
    }
    let (n, d) = (ctx.n(), ctx.d());

    let mut fam_rng = stream(seed, u64::MAX);
    let drawn;
    let general = match fam {
        Some(f) => f,
        None => {
            drawn = TransformFamily::new(ctx, (0..n).map(|_| normal_mat(&mut fam_rng, d)).collect())?;
            &drawn
        }
    };

    let mut global = Residuals::default();
    let normalized = structural_checks(ctx, &mut global);

    let unitary_drawn;
    let unitary = match fam {
        Some(f) if f.is_unitary() => Some(f),
        _ if normalized => {
            let mut rng = stream(seed, u64::MAX - 1);
            unitary_drawn =
                TransformFamily::new(ctx, (0..n).map(|_| random_orthogonal(&mut rng, d)).collect())?;
            Some(&unitary_drawn)
        }
        _ => None,
    };

    let per_trial: Vec<(Residuals, Residuals)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut res = Residuals::default();
            let mut diag = Residuals::default();
            let mut rng = stream(seed, t as u64);
            if run_trial(ctx, general, unitary.filter(|_| normalized), normalized, &mut rng, &mut res, &mut diag)
                .is_err()
            {
                res.record("evaluation_errors", f64::INFINITY);
            }
            (res, diag)
        })
        .collect();

    let mut diagnostics = Residuals::default();
    for (res, diag) in per_trial {
        global.merge(res);
        diagnostics.merge(diag);
    }

    let mut identities = BTreeMap::new();
    for &(name, tolerance) in TOLERANCES {
        if let Some(&max_residual) = global.0.get(name) {
            let pass = max_residual <= tolerance;
            identities.insert(name.to_string(), IdentityResult { max_residual, tolerance, pass });
        }
    }
    Ok(IdentityReport {
        trials,
        seed,
        identities,
        diagnostics: diagnostics.0.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
    })
}

/// Deterministic checks over every site and site pair. Returns whether the
/// kernel is normalized on the context.
fn structural_checks(ctx: &RkhsContext, res: &mut Residuals) -> bool {
    let (n, d) = (ctx.n(), ctx.d());
    let scale = 1.0 + ctx.gram().max_abs();
    let mut normalized = true;
    for i in 0..n {
        let Ok(cov) = ctx.covariance(i) else {
            res.record("evaluation_errors", f64::INFINITY);
            return false;
        };
        res.record("covariance_self_adjoint", symmetry_defect(&cov) / (1.0 + cov.amax()));
        let (min, max) = min_max_sym_eig(&cov);
        res.record("covariance_psd", (-min).max(0.0) / max.max(1.0));
        normalized &= identity_gap(&cov) <= 1e-10;

        for j in 0..n {
            let Ok(k) = ctx.kernel().evaluate(&ctx.sites()[i], &ctx.sites()[j]) else {
                res.record("evaluation_errors", f64::INFINITY);
                return false;
            };
            // column b of V_i^* V_j is V_i^*(V_j e_b)
            let composed = DMatrix::from_fn(d, d, |r, b| {
                let col = ctx.gram_block_row(i, ctx.embed_unchecked(j, &basis_vec(d, b)).coeffs());
                col[r]
            });
            let gap = (composed - &k).amax() / scale;
            res.record("kernel_factorization", gap);
            if i == j {
                res.record("covariance_factorization", gap);
            }
        }
    }
    normalized
}

fn run_trial(
    ctx: &RkhsContext,
    fam: &TransformFamily<'_>,
    unitary: Option<&TransformFamily<'_>>,
    normalized: bool,
    rng: &mut ChaCha8Rng,
    res: &mut Residuals,
    diag: &mut Residuals,
) -> Result<()> {
    let (n, d) = (ctx.n(), ctx.d());
    let kernel = ctx.kernel();
    let sites = ctx.sites();
    let i = rng.random_range(0..n);
    let j = rng.random_range(0..n);
    let comp = rng.random_range(0..d);
    let a = normal_vec(rng, d);
    let b = normal_vec(rng, d);
    let x = ctx.element(normal_vec(rng, n * d))?;
    let y = ctx.element(normal_vec(rng, n * d))?;
    let cov = ctx.covariance(i)?;
    let k_ij = kernel.evaluate(&sites[i], &sites[j])?;

    // reproducing property
    let direct = x.evaluate(&sites[i], &basis_vec(d, comp))?;
    let via_inner = ctx.inner_product(&ctx.section(i, comp)?, &x)?;
    res.record("reproducing_property", scalar_rel(direct, via_inner));

    // ⟨Σ_i a, a⟩ = ‖V_i a‖²
    let va = ctx.feature_embed(i, &a)?;
    res.record("feature_norm", scalar_rel(a.dot(&(&cov * &a)), va.norm_sq()));

    // ⟨V_i a, x⟩ = ⟨a, V_i^* x⟩
    res.record(
        "adjoint_relation",
        scalar_rel(ctx.inner_product(&va, &x)?, a.dot(&ctx.feature_adjoint(i, &x)?)),
    );

    // V_i V_i^* K̃(·,(s_j,b)) = K̃(·,(s_i, K(s_i,s_j) b))
    let sec_jb = ctx.feature_embed(j, &b)?;
    let projected = ctx.frame_projection(i, &sec_jb)?;
    let target = ctx.feature_embed(i, &(&k_ij * &b))?;
    res.record("frame_projection_action", g_rel(&projected, &target)?);

    let px = ctx.frame_projection(i, &x)?;
    let py = ctx.frame_projection(i, &y)?;
    res.record(
        "projection_self_adjoint",
        scalar_rel(ctx.inner_product(&px, &y)?, ctx.inner_product(&x, &py)?),
    );
    let xpx = ctx.inner_product(&x, &px)?;
    let bound = sym_op_norm(&cov) * x.norm_sq();
    res.record("projection_norm_bound", (xpx - bound).max(-xpx).max(0.0));

    if normalized {
        let unit = a.normalize();
        res.record("isometry", (ctx.feature_embed(i, &unit)?.norm() - 1.0).abs());
        let ppx = ctx.frame_projection(i, &px)?;
        res.record("projection_idempotent", relative_to(ppx.distance(&px)?, x.norm()));
    }

    w_identities(ctx, fam, rng, res, diag)?;
    if let Some(u) = unitary {
        let i = rng.random_range(0..n);
        let unit = normal_vec(rng, d).normalize();
        res.record("w_isometry", (u.transformed_embed(i, &unit)?.norm() - 1.0).abs());
        let q = |z: &RkhsElement<'_>| -> Result<RkhsElement<'_>> { u.transformed_embed(i, &u.transformed_adjoint(i, z)?) };
        let qx = q(&x)?;
        res.record("w_projection_idempotent", relative_to(q(&qx)?.distance(&qx)?, x.norm()));
        res.record(
            "w_projection_self_adjoint",
            scalar_rel(ctx.inner_product(&qx, &y)?, ctx.inner_product(&x, &q(&y)?)?),
        );
    }

    // continuity: ‖V_s a - V_t a‖² inside a two-site context
    let pair = vec![sites[i].clone(), sites[j].clone()];
    let two = RkhsContext::with_gram_unchecked(kernel.clone(), assemble_gram(kernel, &pair)?)?;
    let diff = two.feature_embed(0, &a)?.minus(&two.feature_embed(1, &a)?)?;
    let closed = kernel.continuity_increment(&sites[i], &sites[j], &a)?;
    res.record("continuity_increment", scalar_rel(diff.norm_sq(), closed));
    Ok(())
}

fn relative_to(num: f64, denom: f64) -> f64 {
    if denom > 0.0 {
        num / denom
    } else {
        num
    }
}

fn w_identities(
    ctx: &RkhsContext,
    fam: &TransformFamily<'_>,
    rng: &mut ChaCha8Rng,
    res: &mut Residuals,
    diag: &mut Residuals,
) -> Result<()> {
    let (n, d) = (ctx.n(), ctx.d());
    let kernel = ctx.kernel();
    let sites = ctx.sites();
    let bs = fam.mats();
    let k = |p: usize, q: usize| kernel.evaluate(&sites[p], &sites[q]);

    let i = rng.random_range(0..n);
    let j = rng.random_range(0..n);
    let a = normal_vec(rng, d);
    let b = normal_vec(rng, d);
    let x = ctx.element(normal_vec(rng, n * d))?;
    let k_ij = k(i, j)?;

    // ‖W_i a‖² = (B_i a)ᵀ K(s_i,s_i) (B_i a)
    let wa = fam.transformed_embed(i, &a)?;
    let ba = &bs[i] * &a;
    res.record("w_norm", scalar_rel(wa.norm_sq(), ba.dot(&(k(i, i)? * &ba))));

    // W_i^* on a section, and the adjoint relation
    let sec_jb = ctx.feature_embed(j, &b)?;
    res.record(
        "w_adjoint",
        vec_rel(&fam.transformed_adjoint(i, &sec_jb)?, &(bs[i].transpose() * &k_ij * &b)),
    );
    res.record(
        "w_adjoint_relation",
        scalar_rel(ctx.inner_product(&wa, &x)?, a.dot(&fam.transformed_adjoint(i, &x)?)),
    );

    // W_i^* W_j b = B_iᵀ K(s_i,s_j) B_j b
    let composed = fam.transformed_adjoint(i, &fam.transformed_embed(j, &b)?)?;
    res.record("w_composition", vec_rel(&composed, &(bs[i].transpose() * &k_ij * &bs[j] * &b)));

    let len = rng.random_range(1..=MAX_CHAIN);
    let pairs: Vec<(usize, usize)> =
        (0..len).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).collect();
    let mut v = b.clone();
    for &(s, t) in pairs.iter().rev() {
        v = fam.transformed_adjoint(s, &fam.transformed_embed(t, &v)?)?;
    }
    let mut dense = DMatrix::identity(d, d);
    for &(s, t) in &pairs {
        dense *= bs[s].transpose() * k(s, t)? * &bs[t];
    }
    res.record("w_composition_chain", vec_rel(&v, &(dense * &b)));

    // chains of W W^* against explicit nd×nd factors and the closed form
    let len = rng.random_range(1..=MAX_CHAIN);
    let idx: Vec<usize> = (0..len).map(|_| rng.random_range(0..n)).collect();
    let chained = fam.chain_apply(&idx, &x)?;
    let oracle = ctx.element(dense_chain(ctx, bs, &idx) * x.coeffs())?;
    let mut worst = g_rel(&chained, &oracle)?;

    let on_section = fam.chain_apply(&idx, &sec_jb)?;
    let (derived, bt_only) = chain_closed_forms(bs, &idx, j, &k, &b)?;
    worst = worst.max(g_rel(&on_section, &ctx.feature_embed(idx[0], &derived)?)?);
    res.record("w_frame_chain", worst);
    diag.record("bt_only_chain_residual", g_rel(&on_section, &ctx.feature_embed(idx[0], &bt_only)?)?);

    // single and cross projections W_k W_i^* applied to a section
    let single = fam.chain_apply(&[i], &sec_jb)?;
    let bt_only3 = ctx.feature_embed(i, &(bs[i].transpose() * &k_ij * &b))?;
    diag.record("bt_only_projection_residual", g_rel(&single, &bt_only3)?);

    let i2 = rng.random_range(0..n);
    let cross = fam.transformed_embed(i2, &fam.transformed_adjoint(i, &sec_jb)?)?;
    let derived5 = ctx.feature_embed(i2, &(&bs[i2] * bs[i].transpose() * &k_ij * &b))?;
    let bt_only5 = ctx.feature_embed(i2, &(bs[i2].transpose() * &k_ij * &bs[i] * &b))?;
    res.record("w_cross", g_rel(&cross, &derived5)?);
    diag.record("bt_only_cross_residual", g_rel(&cross, &bt_only5)?);
    Ok(())
}

/// `Π_k (E_{i_k} B B^T E_{i_k}^T G)` as an `nd × nd` matrix.
fn dense_chain(ctx: &RkhsContext, bs: &[OpMatrix], idx: &[usize]) -> DMatrix<f64> {
    let (n, d) = (ctx.n(), ctx.d());
    let g = ctx.gram().data();
    let mut total = DMatrix::identity(n * d, n * d);
    for &i in idx {
        let mut select = DMatrix::zeros(n * d, n * d);
        select.view_mut((i * d, i * d), (d, d)).copy_from(&(&bs[i] * bs[i].transpose()));
        total *= select * g;
    }
    total
}

/// Coefficient vectors at site `idx[0]` of the chain applied to the section
/// `(j, b)`: the composed form with `B B^T` factors, and the variant with
/// `B^T` factors only.
fn chain_closed_forms(
    bs: &[OpMatrix],
    idx: &[usize],
    j: usize,
    k: &dyn Fn(usize, usize) -> Result<OpMatrix>,
    b: &HVec,
) -> Result<(HVec, HVec)> {
    let mut derived = b.clone();
    let mut bt_only = b.clone();
    let mut next = j;
    for &i in idx.iter().rev() {
        let kk = k(i, next)?;
        derived = &bs[i] * bs[i].transpose() * &kk * derived;
        bt_only = bs[i].transpose() * &kk * bt_only;
        next = i;
    }
    Ok((derived, bt_only))
}
