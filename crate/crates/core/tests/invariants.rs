//! Cross-module invariants on seeded random inputs.

use nalgebra::{DMatrix, DVector};
use opkern::gram::RECONSTRUCTION_TOL;
use opkern::rkhs::DEFAULT_SEED;
use opkern::{
    assemble_gram, grid, sample_paths, spectral_decay_profile, verify_identities, OperatorKernel, RkhsContext,
    Site,
};
use proptest::prelude::*;

/// Every builtin that is positive definite on arbitrary site sets.
const PSD_ZOO: &[&str] = &[
    "gauss(sigma=1.3,ell=0.6,dim=2)",
    "diagexp3",
    "const(value=2,dim=2)",
    "separable(b=[[2,0.5],[0.5,1]],base=gauss(sigma=1,ell=0.4))",
    "normalized(inner=separable(b=[[3,1,0],[1,2,0],[0,0,1]],base=gauss(sigma=2,ell=0.8)))",
];

fn kernel(text: &str) -> OperatorKernel {
    OperatorKernel::parse(text).unwrap()
}

fn site_sets() -> impl Strategy<Value = Vec<Site>> {
    (1usize..=3, 1usize..=20).prop_flat_map(|(m, n)| {
        prop::collection::vec(prop::collection::vec(-3.0f64..3.0, m), n)
            .prop_map(|pts| pts.into_iter().map(|p| Site::new(p).unwrap()).collect())
    })
}

/// Textbook Jacobi sweeps; an eigenvalue oracle independent of the library.
fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[(i, j)].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn zoo_gram_is_psd_and_factorizes(sites in site_sets(), which in 0..PSD_ZOO.len()) {
        let g = assemble_gram(&kernel(PSD_ZOO[which]), &sites).unwrap();
        let report = g.psd_check().unwrap();
        prop_assert!(report.psd, "{} min_eig {}", PSD_ZOO[which], report.min_eig);

        let f = g.factorize().unwrap();
        let target = g.data() + DMatrix::identity(g.data().nrows(), g.data().ncols()) * f.jitter;
        let err = (&f.l * f.l.transpose() - target).amax();
        prop_assert!(err <= RECONSTRUCTION_TOL * (1.0 + g.max_abs()));
    }

    #[test]
    fn spectra_are_monotone_with_exact_trace(sites in site_sets(), which in 0..PSD_ZOO.len()) {
        let g = assemble_gram(&kernel(PSD_ZOO[which]), &sites).unwrap();
        let r = g.psd_check().unwrap();
        prop_assert!(r.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        let sum: f64 = r.eigenvalues.iter().sum();
        prop_assert!((sum - g.data().trace()).abs() <= 1e-8 * g.data().trace().abs().max(1.0));
    }

    #[test]
    fn spectrum_matches_jacobi_oracle(sites in site_sets(), which in 0..PSD_ZOO.len()) {
        let g = assemble_gram(&kernel(PSD_ZOO[which]), &sites).unwrap();
        let oracle = jacobi_eigenvalues(g.data());
        let got = &g.psd_check().unwrap().eigenvalues;
        let scale = oracle[0].abs().max(1.0);
        for (a, b) in got.iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-11 * scale);
        }
    }

    #[test]
    fn strictly_pd_factor_blocks_realize_kernel(
        xs in prop::collection::btree_set(0u32..300, 2..12),
        ell in 0.2f64..1.0,
    ) {
        // sites at least 0.01 apart on [0, 3]
        let sites: Vec<Site> = xs.iter().map(|&k| Site::from(f64::from(k) * 0.01)).collect();
        let k = kernel(&format!("normalized(inner=gauss(sigma=2,ell={ell},dim=2))"));
        let g = assemble_gram(&k, &sites).unwrap();
        let spec = g.psd_check().unwrap();
        prop_assume!(spec.min_eig > 1e-8 * spec.lambda_max);
        let f = g.factorize().unwrap();
        prop_assert_eq!(f.jitter, 0.0);
        let d = g.d();
        let mut worst = 0.0f64;
        for i in 0..g.n() {
            for j in 0..g.n() {
                let li = f.l.rows(i * d, d);
                let lj = f.l.rows(j * d, d);
                let kij = k.evaluate(&sites[i], &sites[j]).unwrap();
                worst = worst.max((li * lj.transpose() - kij).amax());
            }
        }
        prop_assert!(worst <= RECONSTRUCTION_TOL * (1.0 + g.max_abs()));
    }

    #[test]
    fn nested_grids_have_nondecreasing_top_eigenvalue(base in 2usize..8, ell in 0.05f64..2.0) {
        // n - 1 divides 2n - 2 and 4n - 4, so the grids are nested
        let counts = [base, 2 * base - 1, 4 * base - 3];
        let k = kernel(&format!("gauss(ell={ell})"));
        let profile = spectral_decay_profile(&k, &counts, (0.0, 1.0)).unwrap();
        for w in profile.windows(2) {
            prop_assert!(w[1].lambda_max >= w[0].lambda_max - 1e-10);
        }
    }

    #[test]
    fn identity_suite_passes_on_random_normalized_kernels(
        sigma in 0.5f64..3.0,
        ell in 0.2f64..2.0,
        n in 1usize..6,
        seed in any::<u64>(),
    ) {
        let k = kernel(&format!("normalized(inner=separable(b=[[2,0.3],[0.3,1]],base=gauss(sigma={sigma},ell={ell})))"));
        let ctx = RkhsContext::new(k, grid(0.0, 1.0, n).unwrap()).unwrap();
        let r = verify_identities(&ctx, None, 20, seed).unwrap();
        prop_assert!(r.all_pass(), "{}", r.to_table());
    }

    #[test]
    fn onb_expansion_is_orthonormal_and_reproduces(which in 0..PSD_ZOO.len(), n in 1usize..8) {
        let ctx = RkhsContext::new(kernel(PSD_ZOO[which]), grid(0.0, 2.0, n).unwrap()).unwrap();
        let r = ctx.expansion_report(1e-12).unwrap();
        prop_assert!(r.max_orthonormality_error <= 1e-8, "{:?}", r);
        prop_assert!(r.max_reconstruction_error <= 1e-8, "{:?}", r);
    }
}

#[test]
fn rational2_is_indefinite_on_any_two_distinct_sites() {
    // oracle: with v = (1,-1,-1,1)/2, vᵀGv = -(2/15) at sites {0, 2}, so the
    // smallest eigenvalue is at most -2/15
    let k = kernel("rational2");
    let g = assemble_gram(&k, &[Site::from(0.0), Site::from(2.0)]).unwrap();
    let v = DVector::from_vec(vec![0.5, -0.5, -0.5, 0.5]);
    let rayleigh = v.dot(&(g.data() * &v));
    assert!((rayleigh + 2.0 / 15.0).abs() < 1e-15);
    let report = g.psd_check().unwrap();
    assert!(!report.psd);
    assert!(report.min_eig <= -2.0 / 15.0 + 1e-12);

    for r in [1e-3, 0.1, 0.7, 5.0] {
        let g = assemble_gram(&k, &[Site::from(0.0), Site::from(r)]).unwrap();
        assert!(!g.psd_check().unwrap().psd, "r = {r}");
    }
    // a single site is fine: K(s,s) is the all-ones matrix
    assert!(assemble_gram(&k, &[Site::from(1.0)]).unwrap().psd_check().unwrap().psd);
}

#[test]
fn covariance_recovery_for_every_psd_builtin() {
    let mut contexts = Vec::new();
    for (idx, text) in PSD_ZOO.iter().enumerate() {
        for n in [1usize, 3, 5] {
            contexts.push((idx, *text, n));
        }
    }
    contexts.push((99, "rational2", 1));
    for (idx, text, n) in contexts {
        let ctx = RkhsContext::new(kernel(text), grid(-1.0, 1.0, n).unwrap()).unwrap();
        let batch = sample_paths(&ctx, 50_000, idx as u64 * 10 + n as u64).unwrap();
        let report = batch.covariance_error_report();
        assert!(report.pass, "{text} n={n}: {} > {}", report.max_abs_err, report.mc_tolerance);
        // jitter transparency
        let f = ctx.gram().factor().unwrap();
        assert_eq!(report.jitter_used, f.jitter);
        let size = ctx.n() * ctx.d();
        assert_eq!(batch.target_covariance(), ctx.gram().data() + DMatrix::identity(size, size) * f.jitter);
    }
}

#[test]
fn default_seed_suite_on_three_dimensional_sites() {
    let sites: Vec<Site> = [[0.0, 0.0, 0.0], [0.3, -0.2, 1.0], [1.0, 1.0, 0.5], [-0.4, 0.8, 0.1]]
        .iter()
        .map(|p| Site::new(p.to_vec()).unwrap())
        .collect();
    let ctx = RkhsContext::new(kernel("normalized(inner=diagexp3)"), sites).unwrap();
    let r = verify_identities(&ctx, None, 100, DEFAULT_SEED).unwrap();
    assert!(r.all_pass(), "{}", r.to_table());
    assert!(r.identities.contains_key("isometry"));
}
