//! Corpus ingestion, train/validation split and seeded batch sampling.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Domain};
use crate::tokenizer::{BpeVocab, EOT};

/// Fraction of the stream held out for validation.
pub const VAL_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Source {
    /// Path relative to the ingested directory.
    pub file: String,
    pub bytes: u64,
    /// Token range `[start, end)` in the stream, separator excluded.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenStream {
    pub ids: Vec<u32>,
    pub sources: Vec<Source>,
    pub vocab_size: usize,
    pub vocab_hash: String,
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else if matches!(
            path.extension().and_then(|e| e.to_str()),
            Some("txt") | Some("train")
        ) {
            out.push(path);
        }
    }
    Ok(())
}

/// Every `.txt`/`.train` file under `dir`, recursively, in sorted order.
pub fn corpus_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    files.sort();
    if files.is_empty() {
        return Err(Error::Ingest {
            path: dir.to_path_buf(),
            reason: "no .txt or .train files found".into(),
        });
    }
    Ok(files)
}

/// Tokenizes every corpus file in [`corpus_files`] order, appending the
/// end-of-text marker after each file.
pub fn ingest(dir: &Path, vocab: &BpeVocab) -> Result<TokenStream> {
    let files = corpus_files(dir)?;
    let mut ids = Vec::new();
    let mut sources = Vec::with_capacity(files.len());
    for path in files {
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::Ingest {
            path: path.clone(),
            reason: format!("invalid UTF-8 at byte {}", e.valid_up_to()),
        })?;
        let start = ids.len();
        ids.extend(vocab.encode(text));
        sources.push(Source {
            file: path
                .strip_prefix(dir)
                .unwrap_or(&path)
                .to_string_lossy()
                .replace('\\', "/"),
            bytes: bytes.len() as u64,
            start,
            end: ids.len(),
        });
        ids.push(EOT);
    }
    Ok(TokenStream {
        ids,
        sources,
        vocab_size: vocab.len(),
        vocab_hash: vocab.hash(),
    })
}

#[derive(Serialize, Deserialize)]
struct CacheSidecar {
    vocab_hash: String,
    vocab_size: usize,
    length: usize,
    sources: Vec<Source>,
}

fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Writes little-endian u16 ids to `path` and a JSON sidecar next to it.
    pub fn save_cache(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(self.ids.len() * 2);
        for &id in &self.ids {
            let v = u16::try_from(id)
                .map_err(|_| Error::domain(format!("token id {id} does not fit in 16 bits")))?;
            buf.extend_from_slice(&v.to_le_bytes());
        }
        crate::io::write_atomic(path, &buf)?;
        crate::io::write_json(
            &sidecar_path(path),
            &CacheSidecar {
                vocab_hash: self.vocab_hash.clone(),
                vocab_size: self.vocab_size,
                length: self.ids.len(),
                sources: self.sources.clone(),
            },
        )
    }

    pub fn load_cache(path: &Path) -> Result<Self> {
        let side = sidecar_path(path);
        let meta: CacheSidecar = serde_json::from_str(
            &std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?,
        )?;
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if buf.len() != meta.length * 2 {
            return Err(Error::Ingest {
                path: path.to_path_buf(),
                reason: format!("{} bytes on disk, sidecar promises {} tokens", buf.len(), meta.length),
            });
        }
        let ids = buf
            .chunks_exact(2)
            .map(|c| u32::from(u16::from_le_bytes([c[0], c[1]])))
            .collect();
        Ok(Self {
            ids,
            sources: meta.sources,
            vocab_size: meta.vocab_size,
            vocab_hash: meta.vocab_hash,
        })
    }

    /// Contiguous split: the final [`VAL_FRACTION`] of tokens (at least
    /// `context + 1`) is validation, everything before it is training.
    pub fn split(&self, context: usize) -> Result<(&[u32], &[u32])> {
        let n = self.ids.len();
        let val = ((n as f64 * VAL_FRACTION).ceil() as usize).max(context + 1);
        if n < val + context + 1 {
            return Err(Error::domain(format!(
                "stream of {n} tokens is too short for a context of {context} plus a validation split"
            )));
        }
        Ok(self.ids.split_at(n - val))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub data_seed: u64,
    pub batch_size: usize,
    pub context: usize,
    pub steps: usize,
}

/// Row-major `batch_size × context` inputs and their next-token targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
    pub offsets: Vec<usize>,
}

impl BatchPlan {
    /// Window start offsets for `step`, drawn with replacement.
    pub fn offsets(&self, len: usize, step: usize) -> Result<Vec<usize>> {
        if step >= self.steps {
            return Err(Error::domain(format!(
                "step {step} is outside a plan of {} steps",
                self.steps
            )));
        }
        if len < self.context + 1 {
            return Err(Error::domain(format!(
                "stream of {len} tokens is shorter than context + 1 = {}",
                self.context + 1
            )));
        }
        let mut rng = stream(self.data_seed, Domain::Batch, step as u64);
        let max = len - self.context - 1;
        Ok((0..self.batch_size).map(|_| rng.random_range(0..=max)).collect())
    }
}

pub fn sample_batch(plan: &BatchPlan, ids: &[u32], step: usize) -> Result<Batch> {
    let offsets = plan.offsets(ids.len(), step)?;
    let t = plan.context;
    let mut inputs = Vec::with_capacity(offsets.len() * t);
    let mut targets = Vec::with_capacity(offsets.len() * t);
    for &o in &offsets {
        inputs.extend_from_slice(&ids[o..o + t]);
        targets.extend_from_slice(&ids[o + 1..o + t + 1]);
    }
    Ok(Batch {
        inputs,
        targets,
        offsets,
    })
}

/// Non-overlapping evaluation windows over `ids`, at most `limit` of them.
pub fn eval_windows(ids: &[u32], context: usize, limit: usize) -> Vec<(&[u32], &[u32])> {
    let mut out = Vec::new();
    let mut s = 0;
    while s + context < ids.len() && out.len() < limit {
        out.push((&ids[s..s + context], &ids[s + 1..s + context + 1]));
        s += context;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::train_bpe;

    fn plan(seed: u64) -> BatchPlan {
        BatchPlan {
            data_seed: seed,
            batch_size: 4,
            context: 8,
            steps: 10,
        }
    }

    #[test]
    fn batches_are_pure_functions_of_plan_and_step() {
        let ids: Vec<u32> = (0..500).collect();
        let a = sample_batch(&plan(1), &ids, 3).unwrap();
        assert_eq!(a, sample_batch(&plan(1), &ids, 3).unwrap());
        assert_ne!(a.offsets, sample_batch(&plan(2), &ids, 3).unwrap().offsets);
        assert_ne!(a.offsets, sample_batch(&plan(1), &ids, 4).unwrap().offsets);
        for b in 0..4 {
            for t in 0..7 {
                assert_eq!(a.targets[b * 8 + t], a.inputs[b * 8 + t + 1]);
            }
        }
        assert!(sample_batch(&plan(1), &ids, 10).is_err());
        assert!(sample_batch(&plan(1), &ids[..8], 0).is_err());
    }

    #[test]
    fn split_is_disjoint_and_covers_stream() {
        let s = TokenStream {
            ids: (0..1000).collect(),
            sources: vec![],
            vocab_size: 1000,
            vocab_hash: String::new(),
        };
        let (train, val) = s.split(16).unwrap();
        assert_eq!(val.len(), 20);
        assert_eq!(train.len() + val.len(), 1000);
        assert_eq!(*train.last().unwrap() + 1, val[0]);
        let (_, val) = s.split(40).unwrap();
        assert_eq!(val.len(), 41);
        assert!(s.split(600).is_err());
    }

    #[test]
    fn ingest_separates_files_and_is_repeatable() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("b.train"), "second file").unwrap();
        std::fs::write(dir.path().join("a.txt"), "first one").unwrap();
        std::fs::write(dir.path().join("skip.md"), "ignored").unwrap();
        let v = train_bpe(b"first one second file", 280).unwrap();
        let s = ingest(dir.path(), &v).unwrap();
        let k = v.encode("first one").len();
        let m = v.encode("second file").len();
        assert_eq!(s.len(), k + m + 2);
        assert_eq!(s.ids[k], EOT);
        assert_eq!(s.sources[0].file, "a.txt");
        assert_eq!(s, ingest(dir.path(), &v).unwrap());

        let bin = dir.path().join("cache/tokens.bin");
        s.save_cache(&bin).unwrap();
        assert_eq!(TokenStream::load_cache(&bin).unwrap(), s);
    }

    #[test]
    fn ingest_errors_name_the_problem() {
        let dir = tempfile::tempdir().unwrap();
        let v = train_bpe(b"x", BASE).unwrap();
        assert!(matches!(ingest(dir.path(), &v), Err(Error::Ingest { .. })));
        std::fs::write(dir.path().join("bad.txt"), [0xff, 0xfe, 0x41]).unwrap();
        match ingest(dir.path(), &v) {
            Err(Error::Ingest { path, .. }) => assert!(path.ends_with("bad.txt")),
            other => panic!("unexpected {other:?}"),
        }
    }

    const BASE: usize = crate::tokenizer::BASE_VOCAB;

    #[test]
    fn eval_windows_do_not_overlap() {
        let ids: Vec<u32> = (0..20).collect();
        let w = eval_windows(&ids, 6, 10);
        assert_eq!(w.len(), 3);
        assert_eq!(w[1].0[0], 6);
        assert_eq!(w[2].1[5], 18);
        assert_eq!(eval_windows(&ids, 6, 1).len(), 1);
    }
}
