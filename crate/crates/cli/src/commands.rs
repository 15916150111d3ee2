use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use opkern::export::{
    read_matrix_csv, write_batch_binary, write_batch_csv, write_gram_csv, write_json, write_matrix_csv,
    GramReport,
};
use opkern::rkhs::DEFAULT_SEED;
use opkern::{
    assemble_gram, grid, sample_paths, spectral_decay_profile, verify_identities, BlockGram, OperatorKernel,
    RkhsContext, Site,
};
use serde_json::json;

use crate::args::{Command, Common, ExpandArgs, Format, GramArgs, SampleArgs, SpectrumArgs, VerifyArgs};
use crate::config::Config;
use crate::error::{CliError, EXIT_CHECK_FAILED, EXIT_NUMERICAL};
use crate::sites::{parse_counts, parse_domain, parse_sites};

pub fn run(command: Command) -> Result<u8, CliError> {
    match command {
        Command::Gram(a) => cmd_gram(a),
        Command::Spectrum(a) => cmd_spectrum(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Expand(a) => cmd_expand(a),
    }
}

/// Common flags merged with the config file.
struct Job {
    cfg: Config,
    kernel: Option<String>,
    sites: Option<String>,
    out: PathBuf,
    format: Format,
    seed: Option<u64>,
}

impl Job {
    fn new(common: Common) -> Result<Self, CliError> {
        let cfg = match &common.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        let format = match common.format {
            Some(f) => f,
            None => match cfg.get::<String>("format")? {
                None => Format::Csv,
                Some(s) => <Format as clap::ValueEnum>::from_str(&s, true)
                    .map_err(|_| CliError::Usage(format!("config: invalid format {s:?}")))?,
            },
        };
        Ok(Job {
            kernel: cfg.pick(common.kernel, "kernel")?,
            sites: cfg.pick(common.sites, "sites")?,
            out: cfg.pick(common.out, "out")?.unwrap_or_else(|| PathBuf::from(".")),
            seed: cfg.pick(common.seed, "seed")?,
            format,
            cfg,
        })
    }

    fn kernel(&self) -> Result<OperatorKernel, CliError> {
        let text = self.kernel.as_deref().ok_or_else(|| CliError::Usage("missing --kernel".into()))?;
        Ok(OperatorKernel::parse(text)?)
    }

    fn sites(&self) -> Result<Vec<Site>, CliError> {
        parse_sites(self.sites.as_deref().ok_or_else(|| CliError::Usage("missing --sites".into()))?)
    }

    fn output(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        fs::create_dir_all(&self.out)?;
        let path = self.out.join(name);
        let file = File::create(&path)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
        Ok(BufWriter::new(file))
    }

    fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        Ok(write_json(self.output(name)?, value)?)
    }
}

fn raw_gram(path: &Path, d: usize, sites: Vec<Site>) -> Result<BlockGram, CliError> {
    let file = File::open(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let data = read_matrix_csv(file)?;
    Ok(BlockGram::from_raw(data, d, sites)?)
}

fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn cmd_gram(args: GramArgs) -> Result<u8, CliError> {
    let job = Job::new(args.common)?;
    let raw: Option<PathBuf> = job.cfg.pick(args.raw, "raw")?;
    let kernel = job.kernel()?;
    let sites = job.sites()?;
    let gram = match &raw {
        Some(path) => raw_gram(path, kernel.dim(), sites)?,
        None => assemble_gram(&kernel, &sites)?,
    };
    let spectrum = gram.psd_check()?;
    let factor_err = if spectrum.psd { gram.factorize().err() } else { None };

    match job.format {
        Format::Csv => write_gram_csv(job.output("gram.csv")?, &gram)?,
        Format::Json => job.write_json(
            "gram.json",
            &json!({ "n": gram.n(), "d": gram.d(), "sites": gram.sites(), "matrix": matrix_rows(gram.data()) }),
        )?,
    }
    let report = GramReport::of(&gram)?;
    job.write_json("gram_report.json", &report)?;
    println!("gram: n={} d={} psd={} min_eig={:e}", report.n, report.d, report.psd, report.min_eig);

    if !report.psd {
        eprintln!("error: Gram matrix is not positive semi-definite (min eigenvalue {:e})", report.min_eig);
        return Ok(EXIT_NUMERICAL);
    }
    if let Some(e) = factor_err {
        eprintln!("error: {e}");
        return Ok(EXIT_NUMERICAL);
    }
    Ok(0)
}

fn cmd_spectrum(args: SpectrumArgs) -> Result<u8, CliError> {
    let job = Job::new(args.common)?;
    let kernel = job.kernel()?;
    let counts_text: String = job
        .cfg
        .pick(args.counts, "counts")?
        .ok_or_else(|| CliError::Usage("missing --counts".into()))?;
    let counts = parse_counts(&counts_text)?;
    if counts.is_empty() {
        return Err(CliError::Usage("--counts is empty".into()));
    }
    let domain = match job.cfg.pick(args.domain, "domain")? {
        Some(text) => parse_domain(&text)?,
        None => (0.0, 1.0),
    };
    // failures here are input problems, not numerical preconditions
    let profile = spectral_decay_profile(&kernel, &counts, domain).map_err(|e| CliError::Usage(e.to_string()))?;
    for (&n, spec) in counts.iter().zip(&profile) {
        let report = GramReport::from_spectrum(kernel.dim(), grid(domain.0, domain.1, n)?, None, spec);
        job.write_json(&format!("spectrum_n{n}.json"), &report)?;
    }
    println!("spectrum: {} reports", profile.len());
    Ok(0)
}

fn cmd_verify(args: VerifyArgs) -> Result<u8, CliError> {
    let job = Job::new(args.common)?;
    let trials = job.cfg.pick(args.trials, "trials")?.unwrap_or(100);
    if trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    let raw: Option<PathBuf> = job.cfg.pick(args.raw, "raw")?;
    let seed = job.seed.unwrap_or(DEFAULT_SEED);
    let kernel = job.kernel()?;
    let sites = job.sites()?;
    let ctx = match &raw {
        Some(path) => {
            let gram = raw_gram(path, kernel.dim(), sites)?;
            RkhsContext::with_gram_unchecked(kernel, gram)?
        }
        None => RkhsContext::new(kernel, sites)?,
    };
    let report = verify_identities(&ctx, None, trials, seed)?;
    job.write_json("verify.json", &report.identities_json())?;
    job.write_json(
        "verify_diagnostics.json",
        &json!({
            "trials": report.trials,
            "seed": report.seed,
            "context_hash": ctx.hash(),
            "diagnostics": report.diagnostics,
        }),
    )?;
    if report.all_pass() {
        println!("verify: pass ({} identities, max residual {:.3e})", report.identities.len(), report.max_residual());
        Ok(0)
    } else {
        eprint!("{}", report.to_table());
        let failing = report.failing().join(", ");
        eprintln!("error: identities failed: {failing}");
        println!("verify: FAIL {failing}");
        Ok(EXIT_CHECK_FAILED)
    }
}

fn cmd_sample(args: SampleArgs) -> Result<u8, CliError> {
    let job = Job::new(args.common)?;
    let count = job.cfg.pick(args.count, "count")?.unwrap_or(1000);
    if count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let binary = args.binary || job.cfg.get::<bool>("binary")?.unwrap_or(false);
    let seed = job.seed.unwrap_or(0);
    let ctx = RkhsContext::new(job.kernel()?, job.sites()?)?;
    let batch = sample_paths(&ctx, count, seed)?;

    match job.format {
        Format::Csv => write_batch_csv(job.output("samples.csv")?, &batch)?,
        Format::Json => job.write_json(
            "samples.json",
            &json!({
                "seed": seed,
                "context_hash": ctx.hash(),
                "jitter": batch.jitter(),
                "n": ctx.n(),
                "d": ctx.d(),
                "paths": batch.paths().iter().map(|p| p.as_slice()).collect::<Vec<_>>(),
            }),
        )?,
    }
    if binary {
        write_batch_binary(job.output("samples.bin")?, &batch)?;
    }
    let report = batch.covariance_error_report();
    job.write_json("cov_report.json", &report)?;
    println!(
        "sample: N={count} max_abs_err={:.3e} mc_tolerance={:.3e} pass={}",
        report.max_abs_err, report.mc_tolerance, report.pass
    );
    if report.pass {
        Ok(0)
    } else {
        eprintln!("error: empirical covariance outside the Monte Carlo tolerance");
        Ok(EXIT_CHECK_FAILED)
    }
}

fn cmd_expand(args: ExpandArgs) -> Result<u8, CliError> {
    let job = Job::new(args.common)?;
    let trunc_tol = job.cfg.pick(args.trunc_tol, "trunc-tol")?.unwrap_or(1e-12);
    let ctx = RkhsContext::new(job.kernel()?, job.sites()?)?;
    // an empty expansion means trunc_tol was out of range for this kernel
    let report = ctx.expansion_report(trunc_tol).map_err(|e| match e {
        opkern::Error::EmptyExpansion { .. } | opkern::Error::Domain(_) => CliError::Usage(e.to_string()),
        other => other.into(),
    })?;
    let basis = ctx.onb_expansion(trunc_tol)?;
    let coeffs = nalgebra::DMatrix::from_fn(basis.len(), ctx.n() * ctx.d(), |k, c| basis[k].coeffs()[c]);
    match job.format {
        Format::Csv => write_matrix_csv(job.output("basis.csv")?, &coeffs)?,
        Format::Json => job.write_json(
            "basis.json",
            &json!({ "context_hash": ctx.hash(), "coeffs": matrix_rows(&coeffs) }),
        )?,
    }
    job.write_json("expansion.json", &report)?;
    println!(
        "expand: basis_size={} max_reconstruction_error={:.3e}",
        report.basis_size, report.max_reconstruction_error
    );
    Ok(0)
}
