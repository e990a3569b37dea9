//! Versioned JSON experiment manifest.

use std::path::{Path, PathBuf};

use fleeting::surprisal_rt::{ColumnMap, Exclusions};
use fleeting::training::{OptimizerConfig, RunSpec};
use fleeting::{Condition, Error, ModelConfig, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Directory of `.txt` / `.train` files.
    pub corpus: PathBuf,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerSection {
    pub vocab_size: usize,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        Self { vocab_size: 8000 }
    }
}

/// Model shape; the vocabulary size comes from the trained tokenizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    pub context: usize,
    pub use_biases: bool,
    pub tie_embeddings: bool,
    pub dropout: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            layers: m.layers,
            heads: m.heads,
            width: m.width,
            context: m.context,
            use_biases: m.use_biases,
            tie_embeddings: m.tie_embeddings,
            dropout: m.dropout,
        }
    }
}

impl ModelSection {
    pub fn config(&self, vocab: usize) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            heads: self.heads,
            width: self.width,
            vocab,
            context: self.context,
            use_biases: self.use_biases,
            tie_embeddings: self.tie_embeddings,
            dropout: self.dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub steps: usize,
    pub batch_size: usize,
    pub eval_interval: usize,
    pub eval_windows: usize,
    pub optimizer: OptimizerConfig,
    pub jobs: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let r = RunSpec::new(ModelConfig::default(), Condition::Perfect, 0);
        Self {
            steps: r.steps,
            batch_size: r.batch_size,
            eval_interval: r.eval_interval,
            eval_windows: r.eval_windows,
            optimizer: r.optimizer,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub conditions: Vec<Condition>,
    pub seeds: Vec<u64>,
}

/// A column preset name or an explicit mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Columns {
    Preset(String),
    Map(ColumnMap),
}

impl Default for Columns {
    fn default() -> Self {
        Columns::Preset("generic".into())
    }
}

impl Columns {
    pub fn resolve(&self) -> Result<ColumnMap> {
        match self {
            Columns::Preset(name) => ColumnMap::preset(name),
            Columns::Map(m) => Ok(m.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadingTimeSource {
    /// Short identifier used in file and metric names.
    pub name: String,
    pub path: PathBuf,
    #[serde(default)]
    pub columns: Columns,
    #[serde(default, skip_serializing_if = "Exclusions::is_empty")]
    pub exclude: Exclusions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub pairs: Vec<PathBuf>,
    pub reading_times: Vec<ReadingTimeSource>,
    /// Reference condition for paired differences.
    pub baseline: Condition,
    pub n_boot: usize,
    pub stats_seed: u64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            pairs: Vec::new(),
            reading_times: Vec::new(),
            baseline: Condition::Perfect,
            n_boot: fleeting::stats::MIN_BOOTSTRAPS,
            stats_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub paths: Paths,
    #[serde(default)]
    pub tokenizer: TokenizerSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingSection,
    pub grid: GridSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    /// SHA-256 of the effective manifest with paths as written and the
    /// output directory blanked, so it does not depend on where the
    /// experiment lives or is written.
    #[serde(skip)]
    pub hash: String,
}

/// Command-line values that replace manifest fields one for one.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub conditions: Vec<Condition>,
    pub steps: Option<usize>,
}

const SECTIONS: [&str; 7] = ["version", "paths", "tokenizer", "model", "training", "grid", "evaluation"];

fn section<T: serde::de::DeserializeOwned>(
    obj: &serde_json::Map<String, serde_json::Value>,
    key: &str,
    violations: &mut Vec<String>,
) -> Option<T> {
    let value = match obj.get(key) {
        Some(v) => v.clone(),
        None => serde_json::Value::Object(Default::default()),
    };
    match serde_json::from_value(value) {
        Ok(v) => Some(v),
        Err(e) => {
            violations.push(format!("{key}: {e}"));
            None
        }
    }
}

impl Manifest {
    /// Parses, applies overrides, resolves relative paths against the
    /// manifest's directory and validates. All violations are reported
    /// together.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, overrides)
    }

    pub fn parse(text: &str, base: &Path, overrides: &Overrides) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Manifest(vec![format!("not JSON: {e}")]))?;
        let Some(obj) = value.as_object() else {
            return Err(Error::Manifest(vec!["top level must be an object".into()]));
        };
        let mut v = Vec::new();
        for key in obj.keys() {
            if !SECTIONS.contains(&key.as_str()) {
                v.push(format!("unknown section {key:?}"));
            }
        }
        for key in ["version", "paths", "grid"] {
            if !obj.contains_key(key) {
                v.push(format!("missing required section {key:?}"));
            }
        }
        let version = obj.get("version").and_then(|x| x.as_u64());
        let paths = obj.contains_key("paths").then(|| section::<Paths>(obj, "paths", &mut v)).flatten();
        let tokenizer = section::<TokenizerSection>(obj, "tokenizer", &mut v);
        let model = section::<ModelSection>(obj, "model", &mut v);
        let training = section::<TrainingSection>(obj, "training", &mut v);
        let grid = obj.contains_key("grid").then(|| section::<GridSection>(obj, "grid", &mut v)).flatten();
        let evaluation = section::<EvaluationSection>(obj, "evaluation", &mut v);
        if obj.contains_key("version") && version != Some(MANIFEST_VERSION as u64) {
            v.push(format!("version: expected {MANIFEST_VERSION}, got {}", obj["version"]));
        }
        let (Some(paths), Some(tokenizer), Some(model), Some(training), Some(grid), Some(evaluation)) =
            (paths, tokenizer, model, training, grid, evaluation)
        else {
            return Err(Error::Manifest(v));
        };
        let mut m = Manifest {
            version: MANIFEST_VERSION,
            paths,
            tokenizer,
            model,
            training,
            grid,
            evaluation,
            hash: String::new(),
        };
        let mut written = m.clone();
        written.apply(overrides);
        m.hash = written.digest();
        // Manifest paths are relative to the manifest; --out is not.
        m.resolve(base);
        m.apply(overrides);
        v.extend(m.violations());
        if v.is_empty() {
            Ok(m)
        } else {
            Err(Error::Manifest(v))
        }
    }

    fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.out {
            self.paths.out = out.clone();
        }
        if let Some(j) = o.jobs {
            self.training.jobs = j;
        }
        if let Some(s) = o.seed {
            self.grid.seeds = vec![s];
        }
        if !o.conditions.is_empty() {
            self.grid.conditions = o.conditions.clone();
        }
        if let Some(s) = o.steps {
            self.training.steps = s;
        }
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.corpus);
        fix(&mut self.paths.out);
        for p in &mut self.evaluation.pairs {
            fix(p);
        }
        for r in &mut self.evaluation.reading_times {
            fix(&mut r.path);
        }
    }

    /// Semantic checks on a structurally valid manifest.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !self.paths.corpus.is_dir() {
            v.push(format!("paths.corpus: {} is not a directory", self.paths.corpus.display()));
        }
        if self.tokenizer.vocab_size <= fleeting::tokenizer::BASE_VOCAB {
            v.push(format!(
                "tokenizer.vocab_size: must exceed the {} byte-level base entries",
                fleeting::tokenizer::BASE_VOCAB
            ));
        }
        if let Err(e) = self.model.config(self.tokenizer.vocab_size).validate() {
            v.push(format!("model: {e}"));
        }
        let t = &self.training;
        for (name, x) in [
            ("steps", t.steps),
            ("batch_size", t.batch_size),
            ("eval_interval", t.eval_interval),
            ("eval_windows", t.eval_windows),
            ("jobs", t.jobs),
        ] {
            if x == 0 {
                v.push(format!("training.{name}: must be positive"));
            }
        }
        if self.grid.conditions.is_empty() {
            v.push("grid.conditions: empty".into());
        }
        if self.grid.seeds.is_empty() {
            v.push("grid.seeds: empty".into());
        }
        let mut seeds = self.grid.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            v.push("grid.seeds: duplicate seed".into());
        }
        for (i, c) in self.grid.conditions.iter().enumerate() {
            if let Err(e) = c.retention(self.model.context) {
                v.push(format!("grid.conditions[{i}] ({c}): {e}"));
            }
            if self.grid.conditions[..i].contains(c) {
                v.push(format!("grid.conditions[{i}] ({c}): duplicate"));
            }
        }
        let e = &self.evaluation;
        if e.n_boot < fleeting::stats::MIN_BOOTSTRAPS {
            v.push(format!(
                "evaluation.n_boot: must be at least {}",
                fleeting::stats::MIN_BOOTSTRAPS
            ));
        }
        for p in &e.pairs {
            if !p.is_file() {
                v.push(format!("evaluation.pairs: {} does not exist", p.display()));
            }
        }
        for (i, r) in e.reading_times.iter().enumerate() {
            if !r.path.is_file() {
                v.push(format!("evaluation.reading_times[{i}]: {} does not exist", r.path.display()));
            }
            if r.name.is_empty() || !r.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                v.push(format!("evaluation.reading_times[{i}].name: use letters, digits, '_' or '-'"));
            }
            if e.reading_times[..i].iter().any(|o| o.name == r.name) {
                v.push(format!("evaluation.reading_times[{i}].name: duplicate {:?}", r.name));
            }
            if let Err(err) = r.columns.resolve() {
                v.push(format!("evaluation.reading_times[{i}].columns: {err}"));
            }
            if let (Some(lo), Some(hi)) = (r.exclude.rt_min, r.exclude.rt_max) {
                if lo > hi {
                    v.push(format!("evaluation.reading_times[{i}].exclude: rt_min {lo} exceeds rt_max {hi}"));
                }
            }
        }
        v
    }

    /// Run settings for one cell of the grid.
    pub fn run_spec(&self, condition: Condition, seed: u64, vocab: usize) -> RunSpec {
        RunSpec {
            model: self.model.config(vocab),
            condition,
            seed,
            steps: self.training.steps,
            batch_size: self.training.batch_size,
            optimizer: self.training.optimizer,
            eval_interval: self.training.eval_interval,
            eval_windows: self.training.eval_windows,
        }
    }

    fn digest(&self) -> String {
        let mut m = self.clone();
        m.paths.out = PathBuf::new();
        let bytes = serde_json::to_vec(&m).expect("manifest serialises");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_violation_is_listed() {
        let dir = tempfile::tempdir().unwrap();
        let text = r#"{
            "version": 2,
            "paths": {"corpus": "missing", "out": "out"},
            "tokenizer": {"vocab_size": 100},
            "grid": {"conditions": [], "seeds": [1, 1]},
            "extra": true
        }"#;
        let Err(Error::Manifest(v)) = Manifest::parse(text, dir.path(), &Overrides::default()) else {
            panic!("expected a manifest error");
        };
        let joined = v.join("\n");
        for needle in ["extra", "version", "paths.corpus", "vocab_size", "conditions: empty", "duplicate seed"] {
            assert!(joined.contains(needle), "{needle} missing from:\n{joined}");
        }
    }

    #[test]
    fn overrides_replace_fields() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("c")).unwrap();
        let text = r#"{"version": 1, "paths": {"corpus": "c", "out": "o"},
            "grid": {"conditions": [{"kind": "perfect"}], "seeds": [0, 1]}}"#;
        let o = Overrides {
            seed: Some(9),
            steps: Some(5),
            conditions: vec!["perfect".parse().unwrap(), "fleeting:3:5".parse().unwrap()],
            ..Default::default()
        };
        let m = Manifest::parse(text, dir.path(), &o).unwrap();
        assert_eq!(m.grid.seeds, vec![9]);
        assert_eq!(m.training.steps, 5);
        assert_eq!(m.grid.conditions.len(), 2);
        assert!(m.paths.corpus.is_absolute());
        let other = tempfile::tempdir().unwrap();
        std::fs::create_dir(other.path().join("c")).unwrap();
        let moved = Overrides {
            out: Some("/elsewhere".into()),
            ..o
        };
        assert_eq!(Manifest::parse(text, other.path(), &moved).unwrap().hash, m.hash);
    }
}
