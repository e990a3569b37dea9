//! Values frozen from the generators under python/oracles.

use std::path::PathBuf;

use fleeting::data::ingest;
use fleeting::model::cross_entropy_loss;
use fleeting::retention::{retention_value, RetentionConfig};
use fleeting::tokenizer::train_bpe;
use serde::Deserialize;

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

#[derive(Deserialize)]
struct GridRow {
    d: usize,
    #[serde(rename = "E")]
    e: usize,
    alpha: f64,
    n: usize,
    retention: f64,
}

#[test]
fn retention_matches_high_precision_grid() {
    let mut rdr = csv::Reader::from_path(fixture("oracles/retention_grid.csv")).unwrap();
    let mut count = 0;
    for row in rdr.deserialize() {
        let r: GridRow = row.unwrap();
        let cfg = RetentionConfig::new(r.e, r.alpha, r.n).unwrap();
        let got = retention_value(r.d, &cfg).unwrap();
        assert!(
            (got - r.retention).abs() <= 1e-12,
            "d={} E={} alpha={} n={}: {got} vs {}",
            r.d, r.e, r.alpha, r.n, r.retention
        );
        count += 1;
    }
    assert_eq!(count, 1000);
}

#[derive(Deserialize)]
struct CrossEntropy {
    logits: Vec<Vec<[i64; 2]>>,
    targets: Vec<u32>,
    loss: String,
}

#[test]
fn cross_entropy_matches_exact_value() {
    let text = std::fs::read_to_string(fixture("oracles/cross_entropy.json")).unwrap();
    let o: CrossEntropy = serde_json::from_str(&text).unwrap();
    let vocab = o.logits[0].len();
    let logits: Vec<f64> = o.logits.iter().flatten().map(|[a, b]| *a as f64 / *b as f64).collect();
    let got = cross_entropy_loss(&logits, &o.targets, vocab).unwrap();
    let want: f64 = o.loss.parse().unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn bpe_merges_match_reference_trainer() {
    let text = std::fs::read(fixture("tokenizer_1k.txt")).unwrap();
    let v = train_bpe(&text, 400).unwrap();
    let want: Vec<(u32, u32)> = std::fs::read_to_string(fixture("oracles/bpe_1k_merges.txt"))
        .unwrap()
        .lines()
        .map(|l| {
            let (a, b) = l.split_once(' ').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    assert_eq!(want.len(), 143);
    assert_eq!(v.merges(), want.as_slice());
}

#[derive(Deserialize)]
struct IngestCount {
    vocab_size: usize,
    vocab_len: usize,
    tokens: usize,
}

#[test]
fn ingest_token_count_matches_reference() {
    let o: IngestCount =
        serde_json::from_str(&std::fs::read_to_string(fixture("oracles/ingest_count.json")).unwrap()).unwrap();
    let dir = fixture("corpus");
    let mut text = String::new();
    for f in fleeting::data::corpus_files(&dir).unwrap() {
        text.push_str(&std::fs::read_to_string(f).unwrap());
        text.push('\n');
    }
    let v = train_bpe(text.as_bytes(), o.vocab_size).unwrap();
    assert_eq!(v.len(), o.vocab_len);
    assert_eq!(ingest(&dir, &v).unwrap().len(), o.tokens);
}

#[derive(Deserialize)]
struct PretokenCase {
    text: String,
    spans: Vec<(usize, usize)>,
}

#[test]
fn pretokenizer_matches_regex_reference() {
    let text = std::fs::read_to_string(fixture("oracles/pretokens.json")).unwrap();
    let cases: Vec<PretokenCase> = serde_json::from_str(&text).unwrap();
    for c in &cases {
        assert_eq!(fleeting::tokenizer::pretokenize(&c.text), c.spans, "{:?}", c.text);
    }
}
