//! Paired bootstrap t-tests against zero and bootstrap confidence intervals.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::rng::{stream, Domain};

pub const MIN_BOOTSTRAPS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDiffs {
    pub metric: String,
    #[serde(default)]
    pub units: String,
    pub values: Vec<f64>,
}

impl PairedDiffs {
    pub fn new(metric: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let d = Self {
            metric: metric.into(),
            units: String::new(),
            values,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() < 2 {
            return Err(Error::domain(format!(
                "{}: need at least 2 paired differences, got {}",
                self.metric,
                self.values.len()
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("{}: difference {i} is not finite", self.metric)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub mean: f64,
    pub t_observed: f64,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub n_boot: usize,
    pub seed: u64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1).
fn sd(xs: &[f64], m: f64) -> f64 {
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Fills `idx` with the resample indices of bootstrap `b`; streams depend
/// only on `(seed, b, n)`.
fn resample(seed: u64, b: usize, n: usize, idx: &mut [usize]) {
    let mut rng = stream(seed, Domain::Bootstrap, b as u64);
    for slot in idx.iter_mut().take(n) {
        *slot = rng.random_range(0..n);
    }
}

fn t_stat(m: f64, s: f64, n: usize) -> f64 {
    if s > 0.0 {
        m / (s / (n as f64).sqrt())
    } else if m == 0.0 {
        0.0
    } else {
        m.signum() * f64::INFINITY
    }
}

/// Equal-tail bootstrap t-test of a zero mean, resampling the centred data.
pub fn bootstrap_t_test(diffs: &PairedDiffs, n_boot: usize, seed: u64) -> Result<BootstrapResult> {
    diffs.validate()?;
    if n_boot < MIN_BOOTSTRAPS {
        return Err(Error::domain(format!("n_boot must be at least {MIN_BOOTSTRAPS}, got {n_boot}")));
    }
    let p_value = bootstrap_p(&diffs.values, n_boot, seed)?;
    let x = &diffs.values;
    let m = mean(x);
    let (ci_low, ci_high) = bootstrap_ci(x, 0.95, n_boot, seed)?;
    Ok(BootstrapResult {
        mean: m,
        t_observed: t_stat(m, sd(x, m), x.len()),
        p_value,
        ci_low,
        ci_high,
        level: 0.95,
        n_boot,
        seed,
    })
}

/// The test's p-value alone, without the `n_boot` floor; used by
/// calibration studies and small enumerations.
pub fn bootstrap_p(values: &[f64], n_boot: usize, seed: u64) -> Result<f64> {
    let n = values.len();
    if n < 2 || n_boot == 0 {
        return Err(Error::domain("bootstrap needs n ≥ 2 and n_boot ≥ 1"));
    }
    let m = mean(values);
    let s = sd(values, m);
    if !(s > 0.0) {
        return Err(Error::DegenerateSample);
    }
    let t_obs = t_stat(m, s, n);
    let centred: Vec<f64> = values.iter().map(|v| v - m).collect();
    let mut idx = vec![0; n];
    let mut draw = vec![0.0; n];
    let (mut ge, mut le) = (0usize, 0usize);
    for b in 0..n_boot {
        resample(seed, b, n, &mut idx);
        for (d, &i) in draw.iter_mut().zip(&idx) {
            *d = centred[i];
        }
        let ms = mean(&draw);
        let t = t_stat(ms, sd(&draw, ms), n);
        ge += usize::from(t >= t_obs);
        le += usize::from(t <= t_obs);
    }
    let tail = |c: usize| (c + 1) as f64 / (n_boot + 1) as f64;
    Ok((2.0 * tail(ge).min(tail(le))).min(1.0))
}

/// Percentile interval of bootstrap means. The tail level is widened to
/// `2Φ(−√(n/(n−1))·t_{n−1}(1−α/2))` to undo the percentile method's
/// narrowness at small n.
pub fn bootstrap_ci(values: &[f64], level: f64, n_boot: usize, seed: u64) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(Error::domain(format!("need at least 2 values for an interval, got {n}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("level must lie in (0, 1), got {level}")));
    }
    if n_boot == 0 {
        return Err(Error::domain("n_boot must be positive"));
    }
    let alpha = expanded_alpha(1.0 - level, n);
    let mut idx = vec![0; n];
    let mut means: Vec<f64> = (0..n_boot)
        .map(|b| {
            resample(seed, b, n, &mut idx);
            idx.iter().map(|&i| values[i]).sum::<f64>() / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let m = mean(values);
    let lo = quantile(&means, alpha / 2.0).min(m);
    let hi = quantile(&means, 1.0 - alpha / 2.0).max(m);
    Ok((lo, hi))
}

fn expanded_alpha(alpha: f64, n: usize) -> f64 {
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom");
    let z = Normal::standard();
    2.0 * z.cdf(-(n as f64 / (n - 1) as f64).sqrt() * t.inverse_cdf(1.0 - alpha / 2.0))
}

/// Linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (i, frac) = (h.floor() as usize, h - h.floor());
    if i + 1 >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}

pub fn star_code(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        "ns"
    }
}

/// One row of the long metric table: `seed, condition, metric, value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub seed: u64,
    pub condition: String,
    pub metric: String,
    pub value: f64,
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Ingest {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn metrics_csv(rows: &[MetricRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// `a − b` per seed for one metric. Seeds missing either side, or repeated,
/// are errors.
pub fn paired_diffs(rows: &[MetricRow], metric: &str, a: &str, b: &str) -> Result<PairedDiffs> {
    let mut by_seed: BTreeMap<u64, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.metric == metric) {
        let slot = by_seed.entry(r.seed).or_default();
        let side = if r.condition == a {
            &mut slot.0
        } else if r.condition == b {
            &mut slot.1
        } else {
            continue;
        };
        if side.replace(r.value).is_some() {
            return Err(Error::domain(format!(
                "{metric}: seed {} has two rows for {}",
                r.seed, r.condition
            )));
        }
    }
    let mut values = Vec::with_capacity(by_seed.len());
    let mut unpaired = Vec::new();
    for (seed, pair) in by_seed {
        match pair {
            (Some(x), Some(y)) => values.push(x - y),
            _ => unpaired.push(seed.to_string()),
        }
    }
    if !unpaired.is_empty() {
        return Err(Error::domain(format!(
            "{metric}: seeds without both {a} and {b}: {}",
            unpaired.join(", ")
        )));
    }
    PairedDiffs::new(metric, values)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub metric: String,
    pub comparison: String,
    pub n: usize,
    pub mean: f64,
    pub ci: [f64; 2],
    pub t: f64,
    pub p: f64,
    pub stars: String,
    pub n_boot: usize,
    pub seed: u64,
}

impl StatsReport {
    pub fn new(diffs: &PairedDiffs, comparison: impl Into<String>, r: &BootstrapResult) -> Self {
        Self {
            metric: diffs.metric.clone(),
            comparison: comparison.into(),
            n: diffs.values.len(),
            mean: r.mean,
            ci: [r.ci_low, r.ci_high],
            t: r.t_observed,
            p: r.p_value,
            stars: star_code(r.p_value).into(),
            n_boot: r.n_boot,
            seed: r.seed,
        }
    }

    /// `mean Δ = …, 95% CI [lo, hi], p = … (stars)`.
    pub fn summary_line(&self) -> String {
        format!(
            "{} ({}): mean Δ = {:.4}, 95% CI [{:.4}, {:.4}], p = {:.4} ({})",
            self.metric, self.comparison, self.mean, self.ci[0], self.ci[1], self.p, self.stars
        )
    }
}
