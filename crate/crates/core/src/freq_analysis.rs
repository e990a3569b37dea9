//! Frequency-stratified residual error: quintile MSE and under/over SSE.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const QUINTILES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub word: String,
    pub log_freq: f64,
    /// Observed minus predicted, ms. Positive means underpredicted.
    pub residual: f64,
}

/// Group sizes for `n` records; the first `n % 5` groups take the extra one.
pub fn quintile_sizes(n: usize) -> [usize; QUINTILES] {
    let (base, rem) = (n / QUINTILES, n % QUINTILES);
    std::array::from_fn(|q| base + usize::from(q < rem))
}

/// Record indices per quintile, ascending by frequency; ties keep input order.
pub fn quintile_partition(records: &[ResidualRecord]) -> Result<Vec<Vec<usize>>> {
    if records.len() < QUINTILES {
        return Err(Error::domain(format!(
            "need at least {QUINTILES} records for quintiles, got {}",
            records.len()
        )));
    }
    if let Some(i) = records.iter().position(|r| !r.log_freq.is_finite()) {
        return Err(Error::domain(format!("record {i} has non-finite log_freq")));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[a].log_freq.total_cmp(&records[b].log_freq));
    let mut groups = Vec::with_capacity(QUINTILES);
    let mut start = 0;
    for size in quintile_sizes(records.len()) {
        groups.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(groups)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuintileRow {
    /// 1 is the rarest.
    pub quintile: usize,
    pub freq_lo: f64,
    pub freq_hi: f64,
    pub n: usize,
    pub mse: f64,
    pub sse_under: f64,
    pub sse_over: f64,
    pub norm_under: f64,
    pub norm_over: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuintileReport {
    pub reference_mean_error: f64,
    pub rows: Vec<QuintileRow>,
}

pub fn mean_squared_error(records: &[ResidualRecord]) -> f64 {
    records.iter().map(|r| r.residual * r.residual).sum::<f64>() / records.len() as f64
}

fn check_residuals(records: &[ResidualRecord]) -> Result<()> {
    match records.iter().position(|r| !r.residual.is_finite()) {
        Some(i) => Err(Error::domain(format!("record {i} ({:?}) has a non-finite residual", records[i].word))),
        None => Ok(()),
    }
}

/// Per-quintile squared error split by residual sign, normalised by
/// `reference_mean_error · n_q`.
pub fn under_over_sse(records: &[ResidualRecord], reference_mean_error: f64) -> Result<QuintileReport> {
    let groups = quintile_partition(records)?;
    under_over_sse_in(records, &groups, reference_mean_error)
}

/// As [`under_over_sse`] with quintiles fixed elsewhere, e.g. on a pooled list.
pub fn under_over_sse_in(
    records: &[ResidualRecord],
    groups: &[Vec<usize>],
    reference_mean_error: f64,
) -> Result<QuintileReport> {
    if !(reference_mean_error > 0.0) || !reference_mean_error.is_finite() {
        return Err(Error::domain(format!(
            "reference mean error must be positive, got {reference_mean_error}"
        )));
    }
    check_residuals(records)?;
    let rows = groups
        .iter()
        .enumerate()
        .map(|(q, idx)| {
            let (mut under, mut over) = (0.0, 0.0);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in idx {
                let r = &records[i];
                let sq = r.residual * r.residual;
                if r.residual > 0.0 {
                    under += sq;
                } else {
                    over += sq;
                }
                lo = lo.min(r.log_freq);
                hi = hi.max(r.log_freq);
            }
            let n = idx.len();
            let denom = reference_mean_error * n as f64;
            QuintileRow {
                quintile: q + 1,
                freq_lo: lo,
                freq_hi: hi,
                n,
                mse: (under + over) / n as f64,
                sse_under: under,
                sse_over: over,
                norm_under: under / denom,
                norm_over: over / denom,
            }
        })
        .collect();
    Ok(QuintileReport {
        reference_mean_error,
        rows,
    })
}

/// `MSE_q(a) − MSE_q(b)` with quintiles taken from `a`.
pub fn quintile_mse_diff(a: &[ResidualRecord], b: &[ResidualRecord]) -> Result<[f64; QUINTILES]> {
    if a.len() != b.len() {
        return Err(Error::domain(format!(
            "residual sets differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if let Some(i) = a
        .iter()
        .zip(b)
        .position(|(x, y)| x.word != y.word || x.log_freq != y.log_freq)
    {
        return Err(Error::domain(format!(
            "record {i} differs between residual sets: {:?} vs {:?}",
            a[i].word, b[i].word
        )));
    }
    check_residuals(a)?;
    check_residuals(b)?;
    let groups = quintile_partition(a)?;
    let mse = |rs: &[ResidualRecord], idx: &[usize]| {
        idx.iter().map(|&i| rs[i].residual * rs[i].residual).sum::<f64>() / idx.len() as f64
    };
    Ok(std::array::from_fn(|q| mse(a, &groups[q]) - mse(b, &groups[q])))
}

impl QuintileReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

#[derive(Deserialize)]
struct ResidualRow {
    word: String,
    log_freq: f64,
    residual: f64,
}

/// Reads the `word`, `log_freq` and `residual` columns of a residual table.
pub fn read_residuals_csv(path: &Path) -> Result<Vec<ResidualRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Ingest {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    rdr.deserialize::<ResidualRow>()
        .map(|r| {
            let r = r?;
            Ok(ResidualRecord {
                word: r.word,
                log_freq: r.log_freq,
                residual: r.residual,
            })
        })
        .collect()
}
