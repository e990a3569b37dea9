use std::collections::HashMap;

use fleeting::tokenizer::{pretokenize, train_bpe, BpeVocab, BASE_VOCAB};
use proptest::prelude::*;

/// Recounts every pair before each merge.
fn naive_merges(text: &str, vocab_size: usize) -> Vec<(u32, u32)> {
    let mut words: Vec<Vec<u32>> = Vec::new();
    let mut freq: Vec<u64> = Vec::new();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (a, b) in pretokenize(text) {
        let p = &text[a..b];
        match seen.get(p) {
            Some(&w) => freq[w] += 1,
            None => {
                seen.insert(p, words.len());
                words.push(p.bytes().map(u32::from).collect());
                freq.push(1);
            }
        }
    }
    let mut merges = Vec::new();
    while BASE_VOCAB + merges.len() < vocab_size {
        let mut stats: HashMap<(u32, u32), (u64, (usize, usize))> = HashMap::new();
        for (w, word) in words.iter().enumerate() {
            for i in 1..word.len() {
                let e = stats.entry((word[i - 1], word[i])).or_insert((0, (w, i)));
                e.0 += freq[w];
            }
        }
        let Some((&pair, _)) = stats
            .iter()
            .max_by(|x, y| x.1 .0.cmp(&y.1 .0).then(y.1 .1.cmp(&x.1 .1)))
        else {
            break;
        };
        let id = (BASE_VOCAB + merges.len()) as u32;
        for word in words.iter_mut() {
            let mut out = Vec::new();
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && (word[i], word[i + 1]) == pair {
                    out.push(id);
                    i += 2;
                } else {
                    out.push(word[i]);
                    i += 1;
                }
            }
            *word = out;
        }
        merges.push(pair);
    }
    merges
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn incremental_training_matches_naive_recount(text in "[abc .\\n']{1,120}", extra in 0usize..60) {
        let v = train_bpe(text.as_bytes(), BASE_VOCAB + extra).unwrap();
        let expect = naive_merges(&text, BASE_VOCAB + extra);
        prop_assert_eq!(v.merges(), expect.as_slice());
    }
}

#[test]
fn saved_vocabulary_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let v = train_bpe(b"one two three two one three three", 270).unwrap();
    v.save(dir.path()).unwrap();
    let back = BpeVocab::load(dir.path()).unwrap();
    assert_eq!(back, v);
    assert_eq!(back.hash(), v.hash());
    assert!(dir.path().join("vocab.json").exists());
}
