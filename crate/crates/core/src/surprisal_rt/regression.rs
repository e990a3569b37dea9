//! Least-squares fits of reading times with Gaussian log-likelihood.
//!
//! Subject and part-of-speech random intercepts are approximated by
//! dummy-coded fixed intercepts.

use std::collections::BTreeSet;

use serde::Serialize;

use super::ReadingTimeRecord;
use crate::error::{Error, Result};

/// Variance floor keeping the log-likelihood finite on exact fits.
pub const SIGMA2_FLOOR: f64 = 1e-12;
/// A column whose norm drops below this fraction after projection is
/// treated as linearly dependent on earlier columns.
const ALIAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Formula {
    Baseline,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coefficient {
    pub name: String,
    /// `None` when the column is aliased with earlier ones.
    pub estimate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionFit {
    pub formula: Formula,
    pub coefficients: Vec<Coefficient>,
    pub aliased: Vec<String>,
    #[serde(skip)]
    pub residuals: Vec<f64>,
    #[serde(skip)]
    pub fitted: Vec<f64>,
    pub sse: f64,
    pub sigma2: f64,
    pub log_likelihood: f64,
    pub n_observations: usize,
    pub design: Vec<String>,
}

impl RegressionFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.coefficients
            .iter()
            .find(|c| c.name == name)
            .and_then(|c| c.estimate)
    }
}

pub fn gaussian_log_likelihood(sse: f64, n: usize) -> (f64, f64) {
    let sigma2 = (sse / n as f64).max(SIGMA2_FLOOR);
    let ll = -0.5 * n as f64 * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0);
    (sigma2, ll)
}

struct Design {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

fn levels<'a>(values: impl Iterator<Item = &'a str>) -> Vec<String> {
    values.collect::<BTreeSet<_>>().into_iter().map(String::from).collect()
}

fn baseline_design(records: &[ReadingTimeRecord]) -> Result<Design> {
    let n = records.len();
    let subjects = levels(records.iter().map(|r| r.subject.as_str()));
    if subjects.len() < 2 {
        return Err(Error::domain("regression needs at least two distinct subjects"));
    }
    let tags = levels(records.iter().map(|r| r.pos_tag.as_str()));
    let mut names = vec!["(intercept)".to_string(), "word_length".into(), "log_freq".into()];
    let mut columns = vec![
        vec![1.0; n],
        records.iter().map(|r| r.word_length as f64).collect(),
        records.iter().map(|r| r.log_freq).collect(),
    ];
    for s in &subjects[1..] {
        names.push(format!("subject[{s}]"));
        columns.push(records.iter().map(|r| f64::from(u8::from(&r.subject == s))).collect());
    }
    for t in tags.iter().skip(1) {
        names.push(format!("pos[{t}]"));
        columns.push(records.iter().map(|r| f64::from(u8::from(&r.pos_tag == t))).collect());
    }
    Ok(Design { names, columns })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Incremental modified Gram-Schmidt with one reorthogonalisation pass.
struct Qr {
    q: Vec<Vec<f64>>,
    /// Upper-triangular factor, column-major over the kept columns.
    r: Vec<Vec<f64>>,
    kept: Vec<usize>,
}

impl Qr {
    fn new() -> Self {
        Self {
            q: Vec::new(),
            r: Vec::new(),
            kept: Vec::new(),
        }
    }

    /// Adds column `idx`; returns the projection weights when it is aliased.
    fn push(&mut self, idx: usize, x: &[f64]) -> std::result::Result<(), Vec<f64>> {
        let norm0 = dot(x, x).sqrt();
        let mut v = x.to_vec();
        let mut coef = vec![0.0; self.q.len()];
        for _ in 0..2 {
            for (j, q) in self.q.iter().enumerate() {
                let c = dot(q, &v);
                coef[j] += c;
                v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= c * qi);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm0 == 0.0 || norm <= ALIAS_TOL * norm0 {
            return Err(coef);
        }
        v.iter_mut().for_each(|vi| *vi /= norm);
        coef.push(norm);
        self.q.push(v);
        self.r.push(coef);
        self.kept.push(idx);
        Ok(())
    }

    /// Projects `y` off the basis in order, returning the residual and the
    /// coefficients `Qᵀy`.
    fn residual(&self, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut r = y.to_vec();
        let mut qty = Vec::with_capacity(self.q.len());
        for q in &self.q {
            let c = dot(q, &r);
            qty.push(c);
            r.iter_mut().zip(q).for_each(|(ri, qi)| *ri -= c * qi);
        }
        (r, qty)
    }

    fn solve(&self, qty: &[f64]) -> Vec<f64> {
        let k = qty.len();
        let mut beta = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = qty[i];
            for j in i + 1..k {
                s -= self.r[j][i] * beta[j];
            }
            beta[i] = s / self.r[i][i];
        }
        beta
    }
}

fn finish(
    formula: Formula,
    design: &Design,
    qr: &Qr,
    y: &[f64],
    sse: f64,
    residuals: Vec<f64>,
    qty: &[f64],
) -> RegressionFit {
    let beta = qr.solve(qty);
    let mut coefficients: Vec<Coefficient> = design
        .names
        .iter()
        .map(|n| Coefficient {
            name: n.clone(),
            estimate: None,
        })
        .collect();
    for (b, &idx) in beta.iter().zip(&qr.kept) {
        coefficients[idx].estimate = Some(*b);
    }
    let aliased = coefficients
        .iter()
        .filter(|c| c.estimate.is_none())
        .map(|c| c.name.clone())
        .collect();
    let fitted = y.iter().zip(&residuals).map(|(a, r)| a - r).collect();
    let (sigma2, log_likelihood) = gaussian_log_likelihood(sse, y.len());
    RegressionFit {
        formula,
        coefficients,
        aliased,
        residuals,
        fitted,
        sse,
        sigma2,
        log_likelihood,
        n_observations: y.len(),
        design: design.names.clone(),
    }
}

fn validate(records: &[ReadingTimeRecord], formula: Formula) -> Result<()> {
    if records.is_empty() {
        return Err(Error::domain("no reading-time records"));
    }
    for (i, r) in records.iter().enumerate() {
        let surprisal_ok = formula == Formula::Baseline || r.surprisal.is_some_and(f64::is_finite);
        if !(r.rt > 0.0 && r.rt.is_finite()) || r.word_length == 0 || !r.log_freq.is_finite() || !surprisal_ok {
            return Err(Error::domain(format!(
                "record {i} ({} {:?}) has a missing or invalid field",
                r.subject, r.word
            )));
        }
    }
    Ok(())
}

/// Baseline and full fits sharing one factorisation, so the full model's
/// error is the baseline error minus the surprisal projection.
pub fn fit_pair(records: &[ReadingTimeRecord]) -> Result<(RegressionFit, RegressionFit)> {
    validate(records, Formula::Full)?;
    let base = baseline_design(records)?;
    let y: Vec<f64> = records.iter().map(|r| r.rt).collect();
    let mut qr = Qr::new();
    for (i, col) in base.columns.iter().enumerate() {
        if let Err(coef) = qr.push(i, col) {
            let partners: Vec<&str> = coef
                .iter()
                .zip(&qr.kept)
                .filter(|(c, _)| c.abs() > 1e-12)
                .map(|(_, &k)| base.names[k].as_str())
                .collect();
            return Err(Error::RankDeficient(format!(
                "column {} is collinear with [{}]",
                base.names[i],
                partners.join(", ")
            )));
        }
    }
    let (res_b, qty_b) = qr.residual(&y);
    let sse_b = dot(&res_b, &res_b);
    let baseline = finish(Formula::Baseline, &base, &qr, &y, sse_b, res_b.clone(), &qty_b);

    let mut full_design = base;
    full_design.names.push("surprisal".into());
    let s: Vec<f64> = records.iter().map(|r| r.surprisal.unwrap_or(f64::NAN)).collect();
    full_design.columns.push(s.clone());
    let idx = full_design.names.len() - 1;
    let full = match qr.push(idx, &s) {
        Ok(()) => {
            let q = qr.q.last().expect("just pushed");
            let c = dot(q, &res_b);
            let residuals: Vec<f64> = res_b.iter().zip(q).map(|(r, qi)| r - c * qi).collect();
            let mut qty = qty_b;
            qty.push(c);
            // Exact nesting: the extra column can only remove error.
            let sse = (sse_b - c * c).max(0.0);
            finish(Formula::Full, &full_design, &qr, &y, sse, residuals, &qty)
        }
        Err(_) => finish(Formula::Full, &full_design, &qr, &y, sse_b, res_b, &qty_b),
    };
    Ok((baseline, full))
}

pub fn fit_linear(records: &[ReadingTimeRecord], formula: Formula) -> Result<RegressionFit> {
    match formula {
        Formula::Baseline => {
            validate(records, Formula::Baseline)?;
            let stripped: Vec<ReadingTimeRecord> = records
                .iter()
                .cloned()
                .map(|mut r| {
                    r.surprisal = Some(0.0);
                    r
                })
                .collect();
            fit_pair(&stripped).map(|(b, _)| b)
        }
        Formula::Full => fit_pair(records).map(|(_, f)| f),
    }
}

/// `LL(full) − LL(baseline)`.
pub fn delta_ll(records: &[ReadingTimeRecord]) -> Result<f64> {
    let (b, f) = fit_pair(records)?;
    Ok(f.log_likelihood - b.log_likelihood)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surprisal_rt::simulate::{simulate, SimulationSpec};

    #[test]
    fn exact_fit_hits_variance_floor() {
        let mut recs = simulate(&SimulationSpec::default(), 3);
        for r in recs.iter_mut() {
            r.rt = 100.0 + 2.0 * r.word_length as f64 - r.log_freq;
        }
        let fit = fit_linear(&recs, Formula::Baseline).unwrap();
        assert_eq!(fit.sigma2, SIGMA2_FLOOR);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-8));
        assert!(fit.log_likelihood.is_finite());
    }

    #[test]
    fn constant_or_copied_surprisal_adds_nothing() {
        let mut recs = simulate(&SimulationSpec::default(), 4);
        for r in recs.iter_mut() {
            r.surprisal = Some(3.5);
        }
        let (b, f) = fit_pair(&recs).unwrap();
        assert!((f.log_likelihood - b.log_likelihood).abs() < 1e-9);
        assert_eq!(f.aliased, ["surprisal"]);
        for r in recs.iter_mut() {
            r.surprisal = Some(r.word_length as f64);
        }
        assert!(delta_ll(&recs).unwrap().abs() < 1e-6);
    }

    #[test]
    fn rank_deficient_baseline_names_columns() {
        let mut recs = simulate(&SimulationSpec::default(), 5);
        for r in recs.iter_mut() {
            r.log_freq = -(r.word_length as f64);
        }
        match fit_linear(&recs, Formula::Baseline) {
            Err(Error::RankDeficient(msg)) => {
                assert!(msg.contains("log_freq") && msg.contains("word_length"), "{msg}")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_subject_is_rejected() {
        let mut recs = simulate(&SimulationSpec::default(), 6);
        for r in recs.iter_mut() {
            r.subject = "only".into();
        }
        assert!(fit_linear(&recs, Formula::Full).is_err());
    }

    #[test]
    fn full_fit_coefficients_match_normal_equations() {
        let recs = simulate(
            &SimulationSpec {
                subjects: 3,
                words_per_subject: 60,
                ..Default::default()
            },
            7,
        );
        let fit = fit_linear(&recs, Formula::Full).unwrap();
        // Xᵀ r = 0 for every kept column.
        let design = baseline_design(&recs).unwrap();
        for col in &design.columns {
            let g: f64 = col.iter().zip(&fit.residuals).map(|(x, r)| x * r).sum();
            assert!(g.abs() < 1e-6, "{g}");
        }
        let s: f64 = recs
            .iter()
            .zip(&fit.residuals)
            .map(|(r, e)| r.surprisal.unwrap() * e)
            .sum();
        assert!(s.abs() < 1e-6);
    }
}
