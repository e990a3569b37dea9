//! Per-word surprisal over running text and reading-time regressions.

pub mod regression;
pub mod simulate;
pub mod tagger;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::retention::Condition;
use crate::tokenizer::{BpeVocab, WordAlignment, EOT};

pub use regression::{delta_ll, fit_linear, fit_pair, Formula, RegressionFit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadingTimeRecord {
    pub item: String,
    pub position: usize,
    pub word: String,
    pub subject: String,
    /// Milliseconds.
    pub rt: f64,
    pub word_length: usize,
    pub log_freq: f64,
    pub pos_tag: String,
    /// Nats; attached after extraction.
    pub surprisal: Option<f64>,
}

/// `ln P(seq[i] | seq[..i])` for every `i ≥ 1` with a sliding window of
/// `context` inputs advanced by `context / 2`; entry 0 is NaN. Also returns
/// the history length each prediction saw.
pub fn strided_logprobs(
    state: &ModelState,
    condition: &Condition,
    seq: &[u32],
    stride: usize,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let w = state.config().context;
    if stride == 0 || stride > w {
        return Err(Error::domain(format!("stride {stride} must lie in 1..={w}")));
    }
    let n = seq.len();
    let mut lp = vec![f64::NAN; n];
    let mut history = vec![0; n];
    if n < 2 {
        return Ok((lp, history));
    }
    let mut next = 1;
    let mut begin = 0;
    loop {
        let end = (begin + w).min(n - 1);
        let window = state.next_token_logprobs(&seq[begin..=end], condition)?;
        for t in next.max(begin + 1)..=end {
            lp[t] = window[t - begin - 1];
            history[t] = t - begin;
        }
        next = end + 1;
        if end == n - 1 {
            break;
        }
        begin += stride;
    }
    Ok((lp, history))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WordSurprisal {
    pub word: String,
    pub surprisal: f64,
    pub tokens: usize,
    /// Smallest history any of the word's tokens was scored with.
    pub min_history: usize,
}

/// Summed `−ln P` over each word's tokens; the text is scored as one
/// document starting after an end-of-text marker.
pub fn word_surprisal(
    state: &ModelState,
    condition: &Condition,
    alignment: &WordAlignment,
) -> Result<Vec<WordSurprisal>> {
    if alignment.spans.is_empty() {
        return Err(Error::domain("empty word alignment"));
    }
    let mut seq = Vec::with_capacity(alignment.ids.len() + 1);
    seq.push(EOT);
    seq.extend_from_slice(&alignment.ids);
    let stride = (state.config().context / 2).max(1);
    let (lp, history) = strided_logprobs(state, condition, &seq, stride)?;
    Ok(alignment
        .spans
        .iter()
        .map(|s| {
            let toks = s.first + 1..=s.last + 1;
            WordSurprisal {
                word: alignment.words[s.word].clone(),
                surprisal: -toks.clone().map(|t| lp[t]).sum::<f64>(),
                tokens: s.width(),
                min_history: toks.map(|t| history[t]).min().unwrap_or(0),
            }
        })
        .collect())
}

pub fn text_surprisal(
    state: &ModelState,
    vocab: &BpeVocab,
    condition: &Condition,
    text: &str,
) -> Result<Vec<WordSurprisal>> {
    word_surprisal(state, condition, &vocab.align_words(text))
}

/// Lower-cased word with surrounding punctuation removed.
pub fn normalize_word(word: &str) -> String {
    word.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Unigram counts with add-one smoothed log probabilities.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrequencyTable {
    counts: HashMap<String, u64>,
    total: u64,
}

impl FrequencyTable {
    pub fn from_text(text: &str) -> Self {
        let mut t = Self::default();
        t.add_text(text);
        t
    }

    pub fn add_text(&mut self, text: &str) {
        for w in text.split_whitespace() {
            let k = normalize_word(w);
            if !k.is_empty() {
                *self.counts.entry(k).or_insert(0) += 1;
                self.total += 1;
            }
        }
    }

    /// `ln((count + 1) / (N + V))`.
    pub fn log_freq(&self, word: &str) -> f64 {
        let c = self.counts.get(&normalize_word(word)).copied().unwrap_or(0);
        ((c + 1) as f64 / (self.total + self.counts.len() as u64) as f64).ln()
    }
}

/// Column names in a reading-time CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub item: String,
    pub position: String,
    pub word: String,
    pub subject: String,
    pub rt: String,
    pub word_length: Option<String>,
    pub log_freq: Option<String>,
    pub pos: Option<String>,
}

impl ColumnMap {
    pub fn generic() -> Self {
        Self {
            item: "item".into(),
            position: "position".into(),
            word: "word".into(),
            subject: "subject".into(),
            rt: "rt".into(),
            word_length: Some("word_length".into()),
            log_freq: Some("log_freq".into()),
            pos: Some("pos".into()),
        }
    }

    /// Self-paced reading layout: one row per worker and zone.
    pub fn natural_stories() -> Self {
        Self {
            item: "item".into(),
            position: "zone".into(),
            word: "word".into(),
            subject: "WorkerId".into(),
            rt: "RT".into(),
            word_length: None,
            log_freq: None,
            pos: None,
        }
    }

    /// Eye-tracking layout with first-pass durations.
    pub fn dundee() -> Self {
        Self {
            item: "Itemno".into(),
            position: "WNUM".into(),
            word: "WORD".into(),
            subject: "SUBJ".into(),
            rt: "FPASSD".into(),
            word_length: Some("WLEN".into()),
            log_freq: None,
            pos: None,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "generic" => Ok(Self::generic()),
            "natural_stories" | "naturalstories" => Ok(Self::natural_stories()),
            "dundee" => Ok(Self::dundee()),
            other => Err(Error::domain(format!(
                "unknown column preset {other:?} (generic, natural_stories, dundee)"
            ))),
        }
    }
}

/// Reads reading times; optional columns absent from the header are
/// filled in later by [`complete_records`].
pub fn read_rt_csv(path: &Path, map: &ColumnMap) -> Result<Vec<RawRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Ingest {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| {
        find(name).ok_or_else(|| Error::Ingest {
            path: path.to_path_buf(),
            reason: format!("missing column {name:?}"),
        })
    };
    let (ci, cp, cw, cs, cr) = (
        need(&map.item)?,
        need(&map.position)?,
        need(&map.word)?,
        need(&map.subject)?,
        need(&map.rt)?,
    );
    let opt = |c: &Option<String>| c.as_deref().and_then(find);
    let (cl, cf, ct) = (opt(&map.word_length), opt(&map.log_freq), opt(&map.pos));
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = |what: &str| Error::Ingest {
            path: path.to_path_buf(),
            reason: format!("row {}: invalid {what}", line + 2),
        };
        let num = |c: usize, what: &str| -> Result<f64> {
            row.get(c).and_then(|v| v.trim().parse::<f64>().ok()).ok_or_else(|| bad(what))
        };
        let opt_num = |c: Option<usize>| c.and_then(|c| row.get(c)).and_then(|v| v.trim().parse::<f64>().ok());
        out.push(RawRecord {
            item: row.get(ci).unwrap_or_default().to_string(),
            position: num(cp, "position")? as usize,
            word: row.get(cw).unwrap_or_default().to_string(),
            subject: row.get(cs).unwrap_or_default().to_string(),
            rt: num(cr, "rt")?,
            word_length: opt_num(cl).map(|v| v as usize),
            log_freq: opt_num(cf),
            pos: ct.and_then(|c| row.get(c)).filter(|s| !s.is_empty()).map(String::from),
        });
    }
    Ok(out)
}

/// A reading-time row before defaults are filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub item: String,
    pub position: usize,
    pub word: String,
    pub subject: String,
    pub rt: f64,
    pub word_length: Option<usize>,
    pub log_freq: Option<f64>,
    pub pos: Option<String>,
}

/// How missing predictors were filled, for the report.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tagger: Option<String>,
    pub log_freq_from_corpus: bool,
}

/// Fills word length, frequency and part of speech where absent and drops
/// nothing; invalid rows are errors.
pub fn complete_records(
    raw: Vec<RawRecord>,
    freq: Option<&FrequencyTable>,
) -> Result<(Vec<ReadingTimeRecord>, Provenance)> {
    let mut prov = Provenance::default();
    let mut out = Vec::with_capacity(raw.len());
    for (i, r) in raw.into_iter().enumerate() {
        let word_length = r
            .word_length
            .unwrap_or_else(|| r.word.chars().filter(|c| c.is_alphanumeric()).count().max(1));
        let log_freq = match r.log_freq {
            Some(f) => f,
            None => {
                let table = freq.ok_or_else(|| {
                    Error::domain(format!("record {i} lacks log_freq and no corpus was given"))
                })?;
                prov.log_freq_from_corpus = true;
                table.log_freq(&r.word)
            }
        };
        let pos_tag = match r.pos {
            Some(p) => p,
            None => {
                prov.tagger = Some(tagger::TAGGER_ID.into());
                tagger::tag(&r.word).into()
            }
        };
        if !(r.rt > 0.0) || word_length == 0 {
            return Err(Error::domain(format!(
                "record {i} ({} {:?}): rt must be positive and word length at least 1",
                r.subject, r.word
            )));
        }
        out.push(ReadingTimeRecord {
            item: r.item,
            position: r.position,
            word: r.word,
            subject: r.subject,
            rt: r.rt,
            word_length,
            log_freq,
            pos_tag,
            surprisal: None,
        });
    }
    Ok((out, prov))
}

/// Item texts rebuilt from the records' words in position order.
pub fn item_texts(records: &[ReadingTimeRecord]) -> BTreeMap<String, Vec<(usize, String)>> {
    let mut items: BTreeMap<String, BTreeMap<usize, String>> = BTreeMap::new();
    for r in records {
        items
            .entry(r.item.clone())
            .or_default()
            .entry(r.position)
            .or_insert_with(|| r.word.clone());
    }
    items
        .into_iter()
        .map(|(k, v)| (k, v.into_iter().collect()))
        .collect()
}

/// Scores every item once and attaches surprisal to all matching records.
pub fn attach_surprisal(
    records: &mut [ReadingTimeRecord],
    state: &ModelState,
    vocab: &BpeVocab,
    condition: &Condition,
) -> Result<()> {
    let mut lookup: HashMap<(String, usize), f64> = HashMap::new();
    for (item, words) in item_texts(records) {
        let text = words.iter().map(|(_, w)| w.as_str()).collect::<Vec<_>>().join(" ");
        let scored = text_surprisal(state, vocab, condition, &text)?;
        if scored.len() != words.len() {
            return Err(Error::domain(format!(
                "item {item}: {} words in the file but {} after segmentation",
                words.len(),
                scored.len()
            )));
        }
        for ((pos, _), s) in words.iter().zip(scored) {
            lookup.insert((item.clone(), *pos), s.surprisal);
        }
    }
    for r in records.iter_mut() {
        r.surprisal = lookup.get(&(r.item.clone(), r.position)).copied();
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RtReport {
    pub n: usize,
    #[serde(rename = "LL_baseline")]
    pub ll_baseline: f64,
    #[serde(rename = "LL_full")]
    pub ll_full: f64,
    pub delta_ll: f64,
    pub coefficients: BTreeMap<String, Option<f64>>,
    pub aliased: Vec<String>,
    pub provenance: Provenance,
    pub approximation: &'static str,
}

pub const APPROXIMATION: &str =
    "subject and part-of-speech random intercepts approximated by fixed dummy-coded intercepts (OLS)";

pub fn rt_report(records: &[ReadingTimeRecord], provenance: Provenance) -> Result<(RtReport, RegressionFit)> {
    let (b, f) = fit_pair(records)?;
    let report = RtReport {
        n: records.len(),
        ll_baseline: b.log_likelihood,
        ll_full: f.log_likelihood,
        delta_ll: f.log_likelihood - b.log_likelihood,
        coefficients: f
            .coefficients
            .iter()
            .map(|c| (c.name.clone(), c.estimate))
            .collect(),
        aliased: f.aliased.clone(),
        provenance,
        approximation: APPROXIMATION,
    };
    Ok((report, f))
}

/// Records dropped before fitting; nothing is dropped by default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exclusions {
    /// First word of each item.
    pub item_initial: bool,
    /// Last word of each item.
    pub item_final: bool,
    pub rt_min: Option<f64>,
    pub rt_max: Option<f64>,
}

impl Exclusions {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    pub fn apply(&self, records: &[ReadingTimeRecord]) -> Vec<ReadingTimeRecord> {
        let mut bounds: HashMap<&str, (usize, usize)> = HashMap::new();
        for r in records {
            let b = bounds.entry(&r.item).or_insert((r.position, r.position));
            b.0 = b.0.min(r.position);
            b.1 = b.1.max(r.position);
        }
        records
            .iter()
            .filter(|r| {
                let (first, last) = bounds[r.item.as_str()];
                !(self.item_initial && r.position == first)
                    && !(self.item_final && r.position == last)
                    && self.rt_min.is_none_or(|m| r.rt >= m)
                    && self.rt_max.is_none_or(|m| r.rt <= m)
            })
            .cloned()
            .collect()
    }
}

/// Per-record residual table for the frequency analysis.
pub fn residuals_csv(records: &[ReadingTimeRecord], fit: &RegressionFit) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "item", "position", "word", "subject", "rt", "log_freq", "surprisal", "fitted", "residual",
    ])?;
    for (i, r) in records.iter().enumerate() {
        w.write_record([
            r.item.clone(),
            r.position.to_string(),
            r.word.clone(),
            r.subject.clone(),
            r.rt.to_string(),
            r.log_freq.to_string(),
            r.surprisal.map(|s| s.to_string()).unwrap_or_default(),
            fit.fitted[i].to_string(),
            fit.residuals[i].to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
