//! Regenerates the bundled fixtures: a grammar-generated corpus with
//! agreement phenomena, minimal-pair files and a synthetic reading-time
//! table.
//!
//! cargo run -p fleeting --example make_fixtures -- fixtures

use std::fmt::Write as _;
use std::path::Path;

use fleeting::rng::{stream, Domain};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const NOUNS: &[(&str, &str)] = &[
    ("cat", "cats"),
    ("dog", "dogs"),
    ("teacher", "teachers"),
    ("girl", "girls"),
    ("farmer", "farmers"),
    ("doctor", "doctors"),
    ("bird", "birds"),
    ("child", "children"),
    ("woman", "women"),
    ("student", "students"),
    ("queen", "queens"),
    ("horse", "horses"),
    ("friend", "friends"),
    ("writer", "writers"),
    ("baker", "bakers"),
    ("sailor", "sailors"),
    ("painter", "painters"),
    ("neighbor", "neighbors"),
    ("pilot", "pilots"),
    ("singer", "singers"),
    ("dancer", "dancers"),
    ("lawyer", "lawyers"),
    ("mouse", "mice"),
    ("goose", "geese"),
    ("wolf", "wolves"),
    ("fox", "foxes"),
    ("bear", "bears"),
    ("nurse", "nurses"),
    ("gardener", "gardeners"),
    ("merchant", "merchants"),
    ("soldier", "soldiers"),
    ("poet", "poets"),
    ("hunter", "hunters"),
    ("tailor", "tailors"),
    ("weaver", "weavers"),
    ("shepherd", "shepherds"),
];

const MALE: &[(&str, &str)] = &[
    ("boy", "boys"),
    ("man", "men"),
    ("king", "kings"),
    ("father", "fathers"),
    ("brother", "brothers"),
    ("uncle", "uncles"),
    ("prince", "princes"),
    ("monk", "monks"),
];

const INTRANSITIVE: &[(&str, &str)] = &[
    ("sleeps", "sleep"),
    ("runs", "run"),
    ("laughs", "laugh"),
    ("sings", "sing"),
    ("waits", "wait"),
    ("smiles", "smile"),
    ("falls", "fall"),
    ("works", "work"),
    ("dances", "dance"),
    ("cries", "cry"),
    ("arrives", "arrive"),
    ("leaves", "leave"),
    ("wanders", "wander"),
    ("rests", "rest"),
    ("hides", "hide"),
    ("listens", "listen"),
];

const TRANSITIVE: &[(&str, &str)] = &[
    ("sees", "see"),
    ("likes", "like"),
    ("helps", "help"),
    ("follows", "follow"),
    ("visits", "visit"),
    ("watches", "watch"),
    ("knows", "know"),
    ("finds", "find"),
    ("calls", "call"),
    ("meets", "meet"),
    ("admires", "admire"),
    ("remembers", "remember"),
    ("trusts", "trust"),
    ("chases", "chase"),
];

const ADVERBS: &[&str] = &[
    "quickly", "slowly", "today", "again", "often", "quietly", "loudly", "here", "there", "always",
    "rarely", "gladly", "early", "late", "outside", "together",
];

const ADJECTIVES: &[&str] = &[
    "old", "young", "small", "happy", "tall", "quiet", "clever", "brave", "tired", "angry",
    "gentle", "curious", "proud", "lonely", "cheerful", "careful",
];

const PLACES: &[&str] = &[
    "river", "house", "garden", "barn", "market", "forest", "bridge", "village", "church", "mill",
    "harbor", "tower", "meadow", "well", "castle", "station",
];

const PREPOSITIONS: &[&str] = &["near", "by", "in", "behind", "beside", "across", "under", "above"];

/// Zipf-weighted index so word frequencies spread over several decades.
fn zipf(rng: &mut ChaCha8Rng, n: usize) -> usize {
    let weights: Vec<f64> = (0..n).map(|r| 1.0 / (r as f64 + 1.0).powf(1.1)).collect();
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    n - 1
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &'a [&'a str]) -> &'a str {
    items[zipf(rng, items.len())]
}

fn pick_pair(rng: &mut ChaCha8Rng, items: &[(&'static str, &'static str)]) -> (&'static str, &'static str) {
    items[zipf(rng, items.len())]
}

fn np(rng: &mut ChaCha8Rng, noun: &str, plural: bool) -> String {
    let det = if plural {
        ["the", "these", "those", "some"][rng.random_range(0..4)]
    } else {
        ["the", "this", "that", "a"][rng.random_range(0..4)]
    };
    if rng.random_bool(0.3) {
        let adj = pick(rng, ADJECTIVES);
        let det = if det == "a" && adj.starts_with(['a', 'e', 'i', 'o', 'u']) { "an" } else { det };
        format!("{det} {adj} {noun}")
    } else {
        format!("{det} {noun}")
    }
}

fn place(rng: &mut ChaCha8Rng) -> String {
    format!("{} the {}", pick(rng, PREPOSITIONS), pick(rng, PLACES))
}

fn sentence_case(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => format!("{}{}.", f.to_uppercase(), c.as_str()),
        None => String::new(),
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Simple,
    Relative,
    Prepositional,
    Reflexive,
    Determiner,
}

const KINDS: [Kind; 5] = [
    Kind::Simple,
    Kind::Relative,
    Kind::Prepositional,
    Kind::Reflexive,
    Kind::Determiner,
];

impl Kind {
    fn subtask(self) -> &'static str {
        match self {
            Kind::Simple => "regular_plural_subject_verb_agreement",
            Kind::Relative => "distractor_agreement_relative_clause",
            Kind::Prepositional => "distractor_agreement_prepositional_phrase",
            Kind::Reflexive => "anaphor_number_agreement",
            Kind::Determiner => "determiner_noun_agreement",
        }
    }

    fn phenomenon(self) -> &'static str {
        match self {
            Kind::Simple | Kind::Relative | Kind::Prepositional => "subject_verb_agreement",
            Kind::Reflexive => "anaphor_agreement",
            Kind::Determiner => "determiner_noun_agreement",
        }
    }
}

/// A grammatical sentence and its minimally different violation.
fn generate(rng: &mut ChaCha8Rng, kind: Kind) -> (String, String) {
    let plural = rng.random_bool(0.5);
    let pick_num = |p: (&'static str, &'static str), pl: bool| if pl { p.1 } else { p.0 };
    let (good, bad) = match kind {
        Kind::Simple => {
            let n = pick_pair(rng, NOUNS);
            let v = pick_pair(rng, INTRANSITIVE);
            let subj = np(rng, pick_num(n, plural), plural);
            let tail = if rng.random_bool(0.6) {
                format!(" {}", pick(rng, ADVERBS))
            } else {
                format!(" {}", place(rng))
            };
            (
                format!("{subj} {}{tail}", pick_num(v, plural)),
                format!("{subj} {}{tail}", pick_num(v, !plural)),
            )
        }
        Kind::Relative => {
            let n = pick_pair(rng, NOUNS);
            let other = pick_pair(rng, NOUNS);
            let rel = pick_pair(rng, TRANSITIVE);
            let v = pick_pair(rng, INTRANSITIVE);
            let inner_pl = !plural;
            let subj = np(rng, pick_num(n, plural), plural);
            let obj = np(rng, pick_num(other, inner_pl), inner_pl);
            let tail = pick(rng, ADVERBS);
            let head = format!("{subj} that {obj} {}", pick_num(rel, inner_pl));
            (
                format!("{head} {} {tail}", pick_num(v, plural)),
                format!("{head} {} {tail}", pick_num(v, !plural)),
            )
        }
        Kind::Prepositional => {
            let n = pick_pair(rng, NOUNS);
            let other = pick_pair(rng, NOUNS);
            let v = pick_pair(rng, INTRANSITIVE);
            let subj = np(rng, pick_num(n, plural), plural);
            let obj = np(rng, pick_num(other, !plural), !plural);
            let prep = pick(rng, &["near", "with", "beside", "behind"]);
            let tail = pick(rng, ADVERBS);
            (
                format!("{subj} {prep} {obj} {} {tail}", pick_num(v, plural)),
                format!("{subj} {prep} {obj} {} {tail}", pick_num(v, !plural)),
            )
        }
        Kind::Reflexive => {
            let n = pick_pair(rng, MALE);
            let v = pick_pair(rng, TRANSITIVE);
            let subj = np(rng, pick_num(n, plural), plural);
            let refl = |pl: bool| if pl { "themselves" } else { "himself" };
            let verb = pick_num(v, plural);
            (
                format!("{subj} {verb} {}", refl(plural)),
                format!("{subj} {verb} {}", refl(!plural)),
            )
        }
        Kind::Determiner => {
            let n = pick_pair(rng, NOUNS);
            let v = pick_pair(rng, TRANSITIVE);
            let subj_pl = rng.random_bool(0.5);
            let s = pick_pair(rng, NOUNS);
            let subj = np(rng, pick_num(s, subj_pl), subj_pl);
            let (det_good, det_bad) = if plural {
                (["these", "those"][rng.random_range(0..2)], "this")
            } else {
                (["this", "that"][rng.random_range(0..2)], "these")
            };
            let noun = pick_num(n, plural);
            let verb = pick_num(v, subj_pl);
            (
                format!("{subj} {verb} {det_good} {noun}"),
                format!("{subj} {verb} {det_bad} {noun}"),
            )
        }
    };
    (sentence_case(&good), sentence_case(&bad))
}

fn corpus_file(seed: u64, target_bytes: usize) -> String {
    let mut rng = stream(seed, Domain::Simulation, 0);
    let mut out = String::with_capacity(target_bytes + 256);
    while out.len() < target_bytes {
        let sentences = rng.random_range(3..9);
        let para: Vec<String> = (0..sentences)
            .map(|_| {
                let k = KINDS[zipf(&mut rng, KINDS.len())];
                generate(&mut rng, k).0
            })
            .collect();
        out.push_str(&para.join(" "));
        out.push('\n');
    }
    out
}

fn pairs_jsonl(seed: u64, per_subtask: usize) -> String {
    let mut rng = stream(seed, Domain::Simulation, 1);
    let mut out = String::new();
    for kind in KINDS {
        let mut made = 0;
        let mut seen = std::collections::HashSet::new();
        while made < per_subtask {
            let (good, bad) = generate(&mut rng, kind);
            if good == bad || !seen.insert(good.clone()) {
                continue;
            }
            let line = serde_json::json!({
                "sentence_good": good,
                "sentence_bad": bad,
                "UID": kind.subtask(),
                "linguistics_term": kind.phenomenon(),
                "pair_id": made,
            });
            let _ = writeln!(out, "{line}");
            made += 1;
        }
    }
    out
}

/// Reading times driven by word length, corpus frequency and subject
/// offsets plus noise; the model's surprisal is estimated downstream.
fn rt_csv(seed: u64, corpus: &str, items: usize, subjects: usize) -> String {
    let mut counts = std::collections::HashMap::new();
    for w in corpus.split_whitespace() {
        *counts.entry(w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()).or_insert(0u64) += 1;
    }
    let total: u64 = counts.values().sum();
    let mut rng = stream(seed, Domain::Simulation, 2);
    let mut texts = Vec::new();
    for _ in 0..items {
        let n = rng.random_range(2..4);
        let s: Vec<String> = (0..n)
            .map(|_| {
                let k = KINDS[rng.random_range(0..KINDS.len())];
                generate(&mut rng, k).0
            })
            .collect();
        texts.push(s.join(" "));
    }
    let noise = Normal::new(0.0, 30.0).unwrap();
    let mut out = String::from("item,position,word,subject,rt\n");
    for s in 0..subjects {
        let offset = rng.random_range(-40.0..40.0);
        for (item, text) in texts.iter().enumerate() {
            for (pos, word) in text.split_whitespace().enumerate() {
                let key = word.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
                let c = counts.get(&key).copied().unwrap_or(0);
                let log_freq = ((c + 1) as f64 / (total + counts.len() as u64) as f64).ln();
                let len = word.chars().filter(|c| c.is_alphanumeric()).count() as f64;
                let rt = (300.0 + offset + 4.0 * len - 10.0 * log_freq + noise.sample(&mut rng)).max(80.0);
                let _ = writeln!(out, "{},{},{},s{:02},{:.1}", item + 1, pos + 1, word, s + 1, rt);
            }
        }
    }
    out
}

fn main() {
    let root = std::env::args().nth(1).unwrap_or_else(|| "fixtures".into());
    let root = Path::new(&root);
    let corpus_dir = root.join("corpus");
    std::fs::create_dir_all(&corpus_dir).expect("create fixture dirs");
    let mut all = String::new();
    for i in 0..4u64 {
        let text = corpus_file(1000 + i, 280_000);
        std::fs::write(corpus_dir.join(format!("part{i}.train")), &text).expect("write corpus");
        all.push_str(&text);
    }
    // A 1 kB slice for the tokenizer golden test.
    let small: String = all.chars().take(1024).collect();
    std::fs::write(root.join("tokenizer_1k.txt"), small).expect("write 1k corpus");
    std::fs::write(root.join("pairs.jsonl"), pairs_jsonl(2000, 40)).expect("write pairs");
    std::fs::write(root.join("pairs20.jsonl"), pairs_jsonl(3000, 4)).expect("write pairs");
    std::fs::write(root.join("rt.csv"), rt_csv(4000, &all, 12, 6)).expect("write rt");
    println!("corpus bytes: {}", all.len());
}
