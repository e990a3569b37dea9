//! Minimal-pair acceptability scoring.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::retention::Condition;
use crate::tokenizer::{BpeVocab, EOT};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinimalPair {
    pub sentence_good: String,
    pub sentence_bad: String,
    #[serde(rename = "UID")]
    pub subtask: String,
    #[serde(rename = "linguistics_term", default)]
    pub phenomenon: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairVerdict {
    pub logprob_good: f64,
    pub logprob_bad: f64,
    pub correct: bool,
}

impl PairVerdict {
    /// Ties count as incorrect.
    pub fn new(logprob_good: f64, logprob_bad: f64) -> Self {
        Self {
            logprob_good,
            logprob_bad,
            correct: logprob_good > logprob_bad,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubtaskScore {
    pub subtask: String,
    pub phenomenon: String,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhenomenonScore {
    pub phenomenon: String,
    pub subtasks: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairReport {
    pub subtasks: Vec<SubtaskScore>,
    pub phenomena: Vec<PhenomenonScore>,
    /// Unweighted mean of subtask accuracies.
    pub overall: f64,
    pub n_pairs: usize,
    #[serde(skip)]
    pub verdicts: Vec<PairVerdict>,
}

pub fn read_pairs_jsonl(path: &Path) -> Result<Vec<MinimalPair>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs_jsonl(&text)
}

pub fn parse_pairs_jsonl(text: &str) -> Result<Vec<MinimalPair>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: MinimalPair = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("pairs line {}: {e}", i + 1)))?;
        if pair.sentence_good.trim().is_empty() || pair.sentence_bad.trim().is_empty() {
            return Err(Error::Parse(format!("pairs line {}: empty sentence", i + 1)));
        }
        if pair.sentence_good == pair.sentence_bad {
            return Err(Error::Parse(format!("pairs line {}: sentences are identical", i + 1)));
        }
        out.push(pair);
    }
    Ok(out)
}

/// Sum of `ln P(token | prefix)` over the sentence, conditioned on a
/// leading end-of-text marker.
pub fn sentence_logprob(
    state: &ModelState,
    vocab: &BpeVocab,
    condition: &Condition,
    text: &str,
) -> Result<f64> {
    let mut ids = Vec::with_capacity(text.len() / 2 + 1);
    ids.push(EOT);
    ids.extend(vocab.encode(text));
    if ids.len() > state.config().context {
        return Err(Error::domain(format!(
            "sentence of {} tokens plus the begin marker exceeds the context of {}: {text:?}",
            ids.len() - 1,
            state.config().context
        )));
    }
    Ok(state.next_token_logprobs(&ids, condition)?.iter().sum())
}

/// Scores every pair with an arbitrary sentence scorer.
pub fn score_with<F>(pairs: &[MinimalPair], mut logprob: F) -> Result<PairReport>
where
    F: FnMut(&str) -> Result<f64>,
{
    let mut verdicts = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let named = |e: Error| Error::domain(format!("pair {i} ({}): {e}", p.subtask));
        let good = logprob(&p.sentence_good).map_err(named)?;
        let bad = logprob(&p.sentence_bad).map_err(named)?;
        verdicts.push(PairVerdict::new(good, bad));
    }
    Ok(aggregate(pairs, verdicts))
}

pub fn score_pairs(
    state: &ModelState,
    vocab: &BpeVocab,
    condition: &Condition,
    pairs: &[MinimalPair],
) -> Result<PairReport> {
    score_with(pairs, |s| sentence_logprob(state, vocab, condition, s))
}

/// Per-subtask accuracy, per-phenomenon means and the unweighted overall
/// score.
pub fn aggregate(pairs: &[MinimalPair], verdicts: Vec<PairVerdict>) -> PairReport {
    let mut by_subtask: BTreeMap<&str, (String, usize, usize)> = BTreeMap::new();
    for (p, v) in pairs.iter().zip(&verdicts) {
        let e = by_subtask
            .entry(&p.subtask)
            .or_insert_with(|| (p.phenomenon.clone(), 0, 0));
        e.1 += 1;
        e.2 += usize::from(v.correct);
    }
    let subtasks: Vec<SubtaskScore> = by_subtask
        .into_iter()
        .map(|(name, (phenomenon, n, correct))| SubtaskScore {
            subtask: name.to_string(),
            phenomenon,
            n,
            correct,
            accuracy: correct as f64 / n as f64,
        })
        .collect();
    let mut by_phen: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in &subtasks {
        by_phen.entry(&s.phenomenon).or_default().push(s.accuracy);
    }
    let phenomena = by_phen
        .into_iter()
        .map(|(name, accs)| PhenomenonScore {
            phenomenon: name.to_string(),
            subtasks: accs.len(),
            accuracy: accs.iter().sum::<f64>() / accs.len() as f64,
        })
        .collect();
    let overall = if subtasks.is_empty() {
        f64::NAN
    } else {
        subtasks.iter().map(|s| s.accuracy).sum::<f64>() / subtasks.len() as f64
    };
    PairReport {
        subtasks,
        phenomena,
        overall,
        n_pairs: pairs.len(),
        verdicts,
    }
}

impl PairReport {
    /// Columns: subtask, phenomenon, n, accuracy.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["subtask", "phenomenon", "n", "accuracy"])?;
        for s in &self.subtasks {
            w.write_record([
                s.subtask.clone(),
                s.phenomenon.clone(),
                s.n.to_string(),
                s.accuracy.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}
