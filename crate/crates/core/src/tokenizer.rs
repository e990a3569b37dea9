//! Byte-level BPE with GPT-2 style pre-tokenization.
//!
//! Ids `0..256` are raw bytes, [`EOT`] is the end-of-text marker and merged
//! symbols follow from [`BASE_VOCAB`] in merge order.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const EOT: u32 = 256;
pub const BASE_VOCAB: usize = 257;
pub const EOT_TEXT: &str = "<|endoftext|>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeVocab {
    merges: Vec<(u32, u32)>,
    ranks: HashMap<(u32, u32), u32>,
    pieces: Vec<Vec<u8>>,
}

/// Token span of one whitespace-delimited word; token indices are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WordSpan {
    pub word: usize,
    pub first: usize,
    pub last: usize,
}

impl WordSpan {
    pub fn width(&self) -> usize {
        self.last - self.first + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordAlignment {
    pub ids: Vec<u32>,
    pub words: Vec<String>,
    pub spans: Vec<WordSpan>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Letter,
    Number,
    Other,
    Space,
}

fn class(c: char) -> Class {
    if c.is_whitespace() {
        Class::Space
    } else if c.is_alphabetic() {
        Class::Letter
    } else if c.is_numeric() {
        Class::Number
    } else {
        Class::Other
    }
}

const CONTRACTIONS: [&str; 7] = ["'s", "'t", "'re", "'ve", "'m", "'ll", "'d"];

/// Byte ranges of the GPT-2 pre-tokens of `text`.
pub fn pretokenize(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let end_of = |k: usize| chars.get(k).map_or(text.len(), |&(b, _)| b);
    let mut out = Vec::new();
    let mut k = 0;
    while k < chars.len() {
        let (start, c) = chars[k];
        if let Some(m) = CONTRACTIONS.iter().find(|m| text[start..].starts_with(**m)) {
            out.push((start, start + m.len()));
            k += m.chars().count();
            continue;
        }
        let lead_space = c == ' ' && chars.get(k + 1).is_some_and(|&(_, n)| class(n) != Class::Space);
        let body = if lead_space { k + 1 } else { k };
        let cls = class(chars[body].1);
        if cls != Class::Space {
            let mut j = body;
            while j < chars.len() && class(chars[j].1) == cls {
                j += 1;
            }
            out.push((start, end_of(j)));
            k = j;
            continue;
        }
        let mut j = k;
        while j < chars.len() && class(chars[j].1) == Class::Space {
            j += 1;
        }
        if j == chars.len() || j - k == 1 {
            out.push((start, end_of(j)));
            k = j;
        } else {
            // Leave the final whitespace char to start the next pre-token.
            out.push((start, end_of(j - 1)));
            k = j - 1;
        }
    }
    out
}

struct Trainer {
    words: Vec<Vec<u32>>,
    freq: Vec<i64>,
    counts: HashMap<(u32, u32), i64>,
    holders: HashMap<(u32, u32), BTreeSet<usize>>,
    heap: BinaryHeap<(i64, Reverse<(u32, u32)>)>,
}

impl Trainer {
    fn new(text: &str) -> Self {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut words = Vec::new();
        let mut freq = Vec::new();
        for (a, b) in pretokenize(text) {
            let piece = &text[a..b];
            let w = *index.entry(piece).or_insert_with(|| {
                words.push(piece.bytes().map(u32::from).collect::<Vec<_>>());
                freq.push(0);
                words.len() - 1
            });
            freq[w] += 1;
        }
        let mut t = Self {
            words,
            freq,
            counts: HashMap::new(),
            holders: HashMap::new(),
            heap: BinaryHeap::new(),
        };
        for w in 0..t.words.len() {
            t.add_word(w, 1);
        }
        let entries: Vec<_> = t.counts.iter().map(|(&p, &c)| (c, Reverse(p))).collect();
        t.heap.extend(entries);
        t
    }

    fn add_word(&mut self, w: usize, sign: i64) {
        let f = self.freq[w] * sign;
        for i in 1..self.words[w].len() {
            let pair = (self.words[w][i - 1], self.words[w][i]);
            *self.counts.entry(pair).or_insert(0) += f;
            if sign > 0 {
                self.holders.entry(pair).or_default().insert(w);
            }
        }
    }

    fn first_seen(&self, pair: (u32, u32)) -> (usize, usize) {
        for &w in self.holders.get(&pair).into_iter().flatten() {
            let word = &self.words[w];
            if let Some(i) = (1..word.len()).find(|&i| (word[i - 1], word[i]) == pair) {
                return (w, i);
            }
        }
        (usize::MAX, usize::MAX)
    }

    /// Most frequent pair; ties go to the pair seen first in the corpus.
    fn best(&mut self) -> Option<(u32, u32)> {
        let mut tied = Vec::new();
        let mut top = 0;
        while let Some(&(c, Reverse(p))) = self.heap.peek() {
            if self.counts.get(&p).copied().unwrap_or(0) != c || c <= 0 {
                self.heap.pop();
                continue;
            }
            if tied.is_empty() {
                top = c;
            } else if c != top {
                break;
            }
            self.heap.pop();
            if !tied.contains(&p) {
                tied.push(p);
            }
        }
        let pick = tied.iter().copied().min_by_key(|&p| self.first_seen(p))?;
        for &p in &tied {
            if p != pick {
                self.heap.push((top, Reverse(p)));
            }
        }
        Some(pick)
    }

    fn apply(&mut self, pair: (u32, u32), id: u32) {
        let holders: Vec<usize> = self.holders.remove(&pair).into_iter().flatten().collect();
        let mut touched = BTreeSet::new();
        for w in holders {
            let word = self.words[w].clone();
            if !(1..word.len()).any(|i| (word[i - 1], word[i]) == pair) {
                continue;
            }
            for i in 1..word.len() {
                touched.insert((word[i - 1], word[i]));
            }
            self.add_word(w, -1);
            let mut merged = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && (word[i], word[i + 1]) == pair {
                    merged.push(id);
                    i += 2;
                } else {
                    merged.push(word[i]);
                    i += 1;
                }
            }
            for i in 1..merged.len() {
                touched.insert((merged[i - 1], merged[i]));
            }
            self.words[w] = merged;
            self.add_word(w, 1);
        }
        self.counts.remove(&pair);
        for p in touched {
            match self.counts.get(&p).copied() {
                Some(c) if c > 0 => self.heap.push((c, Reverse(p))),
                Some(_) => {
                    self.counts.remove(&p);
                }
                None => {}
            }
        }
    }
}

/// Learns merges until the table holds `vocab_size` entries or no pair
/// remains.
pub fn train_bpe(corpus: &[u8], vocab_size: usize) -> Result<BpeVocab> {
    if vocab_size < BASE_VOCAB {
        return Err(Error::domain(format!(
            "vocab_size {vocab_size} is below the base alphabet of {BASE_VOCAB}"
        )));
    }
    if corpus.is_empty() {
        return Err(Error::domain("empty training corpus"));
    }
    let text = String::from_utf8_lossy(corpus);
    let mut trainer = Trainer::new(&text);
    let mut merges = Vec::with_capacity(vocab_size - BASE_VOCAB);
    while BASE_VOCAB + merges.len() < vocab_size {
        let Some(pair) = trainer.best() else { break };
        let id = (BASE_VOCAB + merges.len()) as u32;
        trainer.apply(pair, id);
        merges.push(pair);
    }
    BpeVocab::from_merges(merges)
}

impl BpeVocab {
    pub fn from_merges(merges: Vec<(u32, u32)>) -> Result<Self> {
        let mut pieces: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        pieces.push(EOT_TEXT.as_bytes().to_vec());
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, &(a, b)) in merges.iter().enumerate() {
            let next = pieces.len() as u32;
            if a >= next || b >= next || a == EOT || b == EOT {
                return Err(Error::Parse(format!("merge {rank} refers to unknown symbols ({a}, {b})")));
            }
            let mut bytes = pieces[a as usize].clone();
            bytes.extend_from_slice(&pieces[b as usize]);
            pieces.push(bytes);
            ranks.insert((a, b), rank as u32);
        }
        Ok(Self {
            merges,
            ranks,
            pieces,
        })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    /// Bytes spelled by token `id`.
    pub fn piece(&self, id: u32) -> Option<&[u8]> {
        self.pieces.get(id as usize).map(Vec::as_slice)
    }

    fn encode_piece(&self, bytes: &[u8], out: &mut Vec<u32>) {
        let mut sym: Vec<u32> = bytes.iter().map(|&b| u32::from(b)).collect();
        while sym.len() > 1 {
            let best = (1..sym.len())
                .filter_map(|i| self.ranks.get(&(sym[i - 1], sym[i])).map(|&r| (r, i)))
                .min();
            let Some((rank, _)) = best else { break };
            let pair = self.merges[rank as usize];
            let id = BASE_VOCAB as u32 + rank;
            let mut merged = Vec::with_capacity(sym.len());
            let mut i = 0;
            while i < sym.len() {
                if i + 1 < sym.len() && (sym[i], sym[i + 1]) == pair {
                    merged.push(id);
                    i += 2;
                } else {
                    merged.push(sym[i]);
                    i += 1;
                }
            }
            sym = merged;
        }
        out.extend(sym);
    }

    /// Encodes text and records the byte range of every token.
    fn encode_ranges(&self, text: &str) -> (Vec<u32>, Vec<(usize, usize)>) {
        let mut ids = Vec::new();
        let mut ranges = Vec::new();
        let mut cache: HashMap<&str, Vec<u32>> = HashMap::new();
        for (a, b) in pretokenize(text) {
            let piece = &text[a..b];
            let toks = cache.entry(piece).or_insert_with(|| {
                let mut v = Vec::new();
                self.encode_piece(piece.as_bytes(), &mut v);
                v
            });
            let mut pos = a;
            for &t in toks.iter() {
                let n = self.pieces[t as usize].len();
                ranges.push((pos, pos + n));
                pos += n;
            }
            ids.extend_from_slice(toks);
        }
        (ids, ranges)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.encode_ranges(text).0
    }

    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let p = self
                .piece(id)
                .ok_or_else(|| Error::domain(format!("unknown token id {id} (vocabulary of {})", self.len())))?;
            out.extend_from_slice(p);
        }
        Ok(out)
    }

    /// Decodes ids; invalid UTF-8 from partial byte tokens is replaced.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let bytes = self.decode_bytes(ids)?;
        Ok(match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        })
    }

    /// Encodes `text` and maps each whitespace-delimited word to its tokens.
    pub fn align_words(&self, text: &str) -> WordAlignment {
        let (ids, ranges) = self.encode_ranges(text);
        let mut words = Vec::new();
        let mut bounds = Vec::new();
        let mut start = None;
        for (i, c) in text.char_indices().chain(std::iter::once((text.len(), ' '))) {
            match (c.is_whitespace(), start) {
                (true, Some(s)) => {
                    words.push(text[s..i].to_string());
                    bounds.push((s, i));
                    start = None;
                }
                (false, None) => start = Some(i),
                _ => {}
            }
        }
        let blank = whitespace_mask(text);
        let mut spans: Vec<WordSpan> = Vec::with_capacity(words.len());
        let mut w = 0;
        for (t, &(a, b)) in ranges.iter().enumerate() {
            // A token belongs to the word holding its first non-blank byte.
            let Some(off) = blank[a..b].iter().position(|&ws| !ws) else {
                continue;
            };
            let pos = a + off;
            while w < bounds.len() && bounds[w].1 <= pos {
                w += 1;
            }
            if w == bounds.len() || pos < bounds[w].0 {
                continue;
            }
            match spans.last_mut() {
                Some(s) if s.word == w => s.last = t,
                _ => spans.push(WordSpan {
                    word: w,
                    first: t,
                    last: t,
                }),
            }
        }
        WordAlignment { ids, words, spans }
    }

    /// Lines of the merges file, GPT-2 style.
    pub fn merges_text(&self) -> String {
        let table = byte_to_unicode();
        let mut s = String::from("#version: 0.2\n");
        for &(a, b) in &self.merges {
            let _ = writeln!(
                s,
                "{} {}",
                render(&self.pieces[a as usize], &table),
                render(&self.pieces[b as usize], &table)
            );
        }
        s
    }

    pub fn vocab_json(&self) -> String {
        let table = byte_to_unicode();
        let map: serde_json::Map<String, serde_json::Value> = self
            .pieces
            .iter()
            .enumerate()
            .map(|(id, p)| {
                let key = if id as u32 == EOT {
                    EOT_TEXT.to_string()
                } else {
                    render(p, &table)
                };
                (key, serde_json::Value::from(id))
            })
            .collect();
        serde_json::to_string_pretty(&map).expect("string map serialises")
    }

    /// Hex SHA-256 of the merges file, identifying the vocabulary.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.merges_text().as_bytes()))
    }

    pub fn parse_merges(text: &str) -> Result<Self> {
        let table = byte_to_unicode();
        let inverse: HashMap<char, u8> = table.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();
        let mut lookup: HashMap<Vec<u8>, u32> = (0..=255u8).map(|b| (vec![b], u32::from(b))).collect();
        let mut merges = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.starts_with("#version") || line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Parse(format!("merges line {}: expected two symbols", n + 1)));
            };
            let mut ids = [0u32; 2];
            let mut joined = Vec::new();
            for (slot, sym) in ids.iter_mut().zip([a, b]) {
                let bytes = sym
                    .chars()
                    .map(|c| inverse.get(&c).copied())
                    .collect::<Option<Vec<u8>>>()
                    .ok_or_else(|| Error::Parse(format!("merges line {}: bad symbol {sym:?}", n + 1)))?;
                *slot = *lookup
                    .get(&bytes)
                    .ok_or_else(|| Error::Parse(format!("merges line {}: unknown symbol {sym:?}", n + 1)))?;
                joined.extend(bytes);
            }
            let id = (BASE_VOCAB + merges.len()) as u32;
            lookup.entry(joined).or_insert(id);
            merges.push((ids[0], ids[1]));
        }
        Self::from_merges(merges)
    }

    /// Writes `merges.txt` and `vocab.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        crate::io::write_atomic(&dir.join("merges.txt"), self.merges_text().as_bytes())?;
        crate::io::write_atomic(&dir.join("vocab.json"), self.vocab_json().as_bytes())
    }

    /// Loads from a directory holding `merges.txt`, or from the file itself.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join("merges.txt")
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        Self::parse_merges(&text)
    }
}

/// Per-byte flag: does the byte belong to a whitespace char?
fn whitespace_mask(text: &str) -> Vec<bool> {
    let mut mask = vec![false; text.len()];
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            mask[i..i + c.len_utf8()].fill(true);
        }
    }
    mask
}

fn render(bytes: &[u8], table: &[char; 256]) -> String {
    bytes.iter().map(|&b| table[b as usize]).collect()
}

/// GPT-2's reversible map from bytes to printable characters.
fn byte_to_unicode() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut extra = 0u32;
    for b in 0..=255u32 {
        let printable = (33..=126).contains(&b) || (161..=172).contains(&b) || (174..=255).contains(&b);
        table[b as usize] = if printable {
            char::from_u32(b).unwrap()
        } else {
            extra += 1;
            char::from_u32(255 + extra).unwrap()
        };
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pieces(text: &str) -> Vec<&str> {
        pretokenize(text).into_iter().map(|(a, b)| &text[a..b]).collect()
    }

    #[test]
    fn pretokenizer_follows_gpt2_rules() {
        assert_eq!(pieces("Hello world"), ["Hello", " world"]);
        assert_eq!(pieces("don't stop"), ["don", "'t", " stop"]);
        assert_eq!(pieces("a  b"), ["a", " ", " b"]);
        assert_eq!(pieces("x 42!? y\n"), ["x", " 42", "!?", " y", "\n"]);
        assert_eq!(pieces("end.\n\nNext"), ["end", ".", "\n", "\n", "Next"]);
        assert_eq!(pieces("   lead"), ["  ", " lead"]);
    }

    #[test]
    fn first_merge_of_repeated_symbol() {
        let v = train_bpe(b"aaaa", BASE_VOCAB + 2).unwrap();
        assert_eq!(v.merges()[0], (97, 97));
        assert_eq!(v.merges()[1], (257, 257));
        assert_eq!(v.encode("aaaa"), [258]);
    }

    #[test]
    fn base_size_means_no_merges() {
        let v = train_bpe(b"some text here", BASE_VOCAB).unwrap();
        assert!(v.merges().is_empty());
        assert_eq!(v.len(), BASE_VOCAB);
        assert!(train_bpe(b"abc", BASE_VOCAB - 1).is_err());
    }

    #[test]
    fn ties_break_by_first_occurrence() {
        // "ab" and "cd" both occur twice; "cd" is seen first.
        let v = train_bpe(b"cd ab cd ab", BASE_VOCAB + 1).unwrap();
        assert_eq!(v.merges()[0], (99, 100));
    }

    #[test]
    fn round_trip_and_alignment() {
        let corpus = "the cat sat on the mat. the dog sat on the log!";
        let v = train_bpe(corpus.as_bytes(), 300).unwrap();
        let text = "hello world";
        assert_eq!(v.decode(&v.encode(text)).unwrap(), text);
        let a = v.align_words("  the cat,  (sat)\n on mats ");
        assert_eq!(a.words, ["the", "cat,", "(sat)", "on", "mats"]);
        assert_eq!(a.spans.len(), 5);
        assert_eq!(v.decode(&a.ids).unwrap(), "  the cat,  (sat)\n on mats ");
        for (w, s) in a.spans.iter().enumerate() {
            assert_eq!(s.word, w);
            let piece = v.decode(&a.ids[s.first..=s.last]).unwrap();
            assert_eq!(piece.trim_start(), a.words[w]);
        }
    }

    #[test]
    fn unknown_ids_are_rejected() {
        let v = train_bpe(b"abab", BASE_VOCAB + 1).unwrap();
        assert!(v.decode(&[9999]).is_err());
        assert_eq!(v.decode(&[EOT]).unwrap(), EOT_TEXT);
    }

    #[test]
    fn merges_file_round_trips() {
        let v = train_bpe("héllo wörld, hello world\n\tnew line".as_bytes(), 290).unwrap();
        let back = BpeVocab::parse_merges(&v.merges_text()).unwrap();
        assert_eq!(back, v);
        let json: serde_json::Value = serde_json::from_str(&v.vocab_json()).unwrap();
        assert_eq!(json[EOT_TEXT], 256);
        assert_eq!(json["Ġ"], 32);
    }

    proptest! {
        #[test]
        fn encode_decode_is_lossless(s in "\\PC{0,60}", extra in "[ \\n\\tab.,']{0,10}") {
            let v = train_bpe("a b, abc abc. the\n\n  tab\ttab ab's".as_bytes(), 280).unwrap();
            let text = format!("{s}{extra}");
            prop_assert_eq!(v.decode(&v.encode(&text)).unwrap(), text.clone());
            let a = v.align_words(&text);
            let width: usize = a.spans.iter().map(WordSpan::width).sum();
            let blank = whitespace_mask(&text);
            let (_, ranges) = v.encode_ranges(&text);
            let non_ws = ranges.iter().filter(|&&(x, y)| blank[x..y].iter().any(|&ws| !ws)).count();
            prop_assert_eq!(width, non_ws);
            prop_assert_eq!(a.spans.len(), a.words.len());
        }
    }
}
