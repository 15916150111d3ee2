//! On-disk formats: Gram matrices and sample batches as CSV, spectrum
//! reports as JSON, and the compact binary batch layout.
//!
//! CSV writers put metadata on leading `#` lines; the readers skip them.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::SampleBatch;
use crate::gram::{BlockGram, SpectrumReport};
use crate::kernels::Site;

pub const BATCH_MAGIC: &[u8; 6] = b"OPKGP1";

fn sites_label(sites: &[Site]) -> String {
    let parts: Vec<String> = sites
        .iter()
        .map(|s| match s.coords() {
            [x] => format!("{x:?}"),
            cs => format!("[{}]", cs.iter().map(|c| format!("{c:?}")).collect::<Vec<_>>().join(";")),
        })
        .collect();
    parts.join(" ")
}

fn write_matrix_rows<W: Write>(out: W, m: &DMatrix<f64>, header: Option<Vec<String>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    if let Some(h) = header {
        w.write_record(&h)?;
    }
    for r in 0..m.nrows() {
        w.write_record(m.row(r).iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Plain row-major CSV, values printed at full round-trip precision.
pub fn write_matrix_csv<W: Write>(out: W, m: &DMatrix<f64>) -> Result<()> {
    write_matrix_rows(out, m, None)
}

/// Row-major CSV with a `# n=.. d=.. sites=..` comment line.
pub fn write_gram_csv<W: Write>(mut out: W, gram: &BlockGram) -> Result<()> {
    writeln!(out, "# n={} d={} sites={}", gram.n(), gram.d(), sites_label(gram.sites()))?;
    write_matrix_rows(out, gram.data(), None)
}

/// Read a rectangular numeric CSV, ignoring `#` lines and blank lines.
pub fn read_matrix_csv<R: Read>(input: R) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| Error::Format(format!("not a number: {f:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Format(format!(
                    "row {} has {} fields, expected {}",
                    rows.len() + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Empty("matrix file"));
    }
    let cols = rows[0].len();
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.into_iter().flatten()))
}

/// Spectrum summary of one Gram matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramReport {
    pub n: usize,
    pub d: usize,
    pub sites: Vec<Site>,
    /// `null` when no factorization was attempted or it failed.
    pub jitter_used: Option<f64>,
    pub eigenvalues: Vec<f64>,
    pub min_eig: f64,
    pub psd: bool,
    pub effective_rank: BTreeMap<String, usize>,
}

impl GramReport {
    pub fn of(gram: &BlockGram) -> Result<Self> {
        let spec = gram.psd_check()?;
        let jitter = gram.factor().map(|f| f.jitter);
        Ok(Self::from_spectrum(gram.d(), gram.sites().to_vec(), jitter, spec))
    }

    pub fn from_spectrum(d: usize, sites: Vec<Site>, jitter_used: Option<f64>, spec: &SpectrumReport) -> Self {
        GramReport {
            n: sites.len(),
            d,
            sites,
            jitter_used,
            eigenvalues: spec.eigenvalues.clone(),
            min_eig: spec.min_eig,
            psd: spec.psd,
            effective_rank: spec.effective_rank.clone(),
        }
    }
}

pub fn write_json<W: Write, T: Serialize>(mut out: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

/// One row per path, `n·d` columns named `s{i}_{a}`.
pub fn write_batch_csv<W: Write>(mut out: W, batch: &SampleBatch<'_>) -> Result<()> {
    let ctx = batch.context();
    writeln!(
        out,
        "# seed={} context_hash={} jitter={:?} n={} d={}",
        batch.seed(),
        ctx.hash(),
        batch.jitter(),
        ctx.n(),
        ctx.d()
    )?;
    let header = (0..ctx.n()).flat_map(|i| (0..ctx.d()).map(move |a| format!("s{i}_{a}"))).collect();
    let size = ctx.n() * ctx.d();
    let m = DMatrix::from_fn(batch.count(), size, |p, k| batch.paths()[p][k]);
    write_matrix_rows(out, &m, Some(header))
}

/// Binary batch: magic, u64 seed, u32 `N`, `n`, `d`, then `N·n·d` f64, all
/// little-endian.
pub fn write_batch_binary<W: Write>(mut out: W, batch: &SampleBatch<'_>) -> Result<()> {
    let ctx = batch.context();
    let narrow = |v: usize| u32::try_from(v).map_err(|_| Error::Format(format!("{v} exceeds u32")));
    out.write_all(BATCH_MAGIC)?;
    out.write_all(&batch.seed().to_le_bytes())?;
    for v in [batch.count(), ctx.n(), ctx.d()] {
        out.write_all(&narrow(v)?.to_le_bytes())?;
    }
    for p in batch.paths() {
        for v in p.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Contents of a binary batch file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBatch {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub paths: Vec<DVector<f64>>,
}

pub fn read_batch_binary<R: Read>(mut input: R) -> Result<RawBatch> {
    let mut magic = [0u8; 6];
    input.read_exact(&mut magic)?;
    if &magic != BATCH_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let mut b8 = [0u8; 8];
    let mut b4 = [0u8; 4];
    input.read_exact(&mut b8)?;
    let seed = u64::from_le_bytes(b8);
    let mut dims = [0usize; 3];
    for slot in &mut dims {
        input.read_exact(&mut b4)?;
        *slot = u32::from_le_bytes(b4) as usize;
    }
    let [count, n, d] = dims;
    let mut paths = Vec::with_capacity(count);
    for _ in 0..count {
        let mut p = DVector::zeros(n * d);
        for v in p.iter_mut() {
            input.read_exact(&mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        paths.push(p);
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", rest.len())));
    }
    Ok(RawBatch { seed, n, d, paths })
}
