//! AdamW training loop, checkpoints and the paired-seed experiment grid.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{eval_windows, sample_batch, BatchPlan, TokenStream};
use crate::error::{Error, Result};
use crate::model::{init_model, DropoutKey, ModelConfig, ModelState};
use crate::retention::Condition;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub peak_lr: f64,
    /// Final learning rate as a fraction of the peak.
    pub min_lr_ratio: f64,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            peak_lr: 6e-4,
            min_lr_ratio: 0.1,
            warmup_fraction: 0.02,
            weight_decay: 0.1,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            grad_clip: 1.0,
        }
    }
}

impl OptimizerConfig {
    /// Linear warmup then cosine decay to `min_lr_ratio · peak_lr`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let warmup = (self.warmup_fraction * total as f64).ceil() as usize;
        if step < warmup {
            return self.peak_lr * (step + 1) as f64 / warmup as f64;
        }
        let min = self.min_lr_ratio * self.peak_lr;
        let span = total.saturating_sub(warmup).max(1);
        let progress = ((step - warmup) as f64 / span as f64).min(1.0);
        min + 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()) * (self.peak_lr - min)
    }
}

/// One training run; the seed drives both initialisation and data order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default)]
    pub model: ModelConfig,
    pub condition: Condition,
    pub seed: u64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_eval_interval")]
    pub eval_interval: usize,
    /// Cap on the number of validation windows per evaluation.
    #[serde(default = "default_eval_windows")]
    pub eval_windows: usize,
}

fn default_steps() -> usize {
    2000
}
fn default_batch() -> usize {
    32
}
fn default_eval_interval() -> usize {
    100
}
fn default_eval_windows() -> usize {
    16
}

impl RunSpec {
    pub fn new(model: ModelConfig, condition: Condition, seed: u64) -> Self {
        Self {
            model,
            condition,
            seed,
            steps: default_steps(),
            batch_size: default_batch(),
            optimizer: OptimizerConfig::default(),
            eval_interval: default_eval_interval(),
            eval_windows: default_eval_windows(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.condition.retention(self.model.context)?;
        if self.batch_size == 0 || self.eval_interval == 0 || self.eval_windows == 0 {
            return Err(Error::domain(
                "batch_size, eval_interval and eval_windows must be positive",
            ));
        }
        let o = &self.optimizer;
        if !(o.peak_lr > 0.0 && o.peak_lr.is_finite()) || !(0.0..=1.0).contains(&o.min_lr_ratio) {
            return Err(Error::domain("learning rate settings out of range"));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || o.grad_clip < 0.0 {
            return Err(Error::domain("optimizer betas must lie in [0, 1) and grad_clip ≥ 0"));
        }
        Ok(())
    }

    pub fn plan(&self) -> BatchPlan {
        BatchPlan {
            data_seed: self.seed,
            batch_size: self.batch_size,
            context: self.model.context,
            steps: self.steps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub split: Split,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub condition: Condition,
    pub seed: u64,
    pub final_val_loss: f64,
    pub curve: Vec<LossPoint>,
    pub checkpoint: Option<PathBuf>,
    /// Not part of equality-relevant output; excluded from the results CSV.
    pub wall_time_secs: f64,
}

impl RunResult {
    pub fn val_loss_at(&self, step: usize) -> Option<f64> {
        self.curve
            .iter()
            .find(|p| p.step == step && p.split == Split::Val)
            .map(|p| p.loss)
    }
}

/// Optimizer state and progress of a run in flight.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub spec: RunSpec,
    pub model: ModelState,
    m: Vec<f64>,
    v: Vec<f64>,
    pub step: usize,
    pub curve: Vec<LossPoint>,
}

fn batch_hash(tokens: &[u32]) -> String {
    let mut h = Sha256::new();
    for t in tokens {
        h.update(t.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

/// Mean loss over the capped set of contiguous validation windows.
pub fn validation_loss(model: &ModelState, condition: &Condition, val: &[u32], limit: usize) -> Result<f64> {
    let windows = eval_windows(val, model.config().context, limit);
    if windows.is_empty() {
        return Err(Error::domain("validation split shorter than one window"));
    }
    let t = model.config().context;
    let mut inputs = Vec::with_capacity(windows.len() * t);
    let mut targets = Vec::with_capacity(windows.len() * t);
    for (x, y) in &windows {
        inputs.extend_from_slice(x);
        targets.extend_from_slice(y);
    }
    model.loss(&inputs, &targets, windows.len(), t, condition)
}

impl TrainState {
    pub fn new(spec: RunSpec) -> Result<Self> {
        spec.validate()?;
        let model = init_model(&spec.model, spec.seed)?;
        let n = model.params().len();
        Ok(Self {
            spec,
            model,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            curve: Vec::new(),
        })
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.spec.steps && self.has_val(self.spec.steps)
    }

    fn has_val(&self, step: usize) -> bool {
        self.curve.iter().any(|p| p.step == step && p.split == Split::Val)
    }

    fn check_stream(&self, stream: &TokenStream) -> Result<()> {
        if stream.vocab_size > self.spec.model.vocab {
            return Err(Error::domain(format!(
                "stream vocabulary of {} exceeds the model vocabulary of {}",
                stream.vocab_size, self.spec.model.vocab
            )));
        }
        Ok(())
    }

    fn evaluate(&mut self, val: &[u32]) -> Result<()> {
        let loss = validation_loss(&self.model, &self.spec.condition, val, self.spec.eval_windows)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step as u64,
                loss,
                batch_hash: batch_hash(val),
            });
        }
        self.curve.push(LossPoint {
            step: self.step,
            split: Split::Val,
            loss,
        });
        Ok(())
    }

    /// Advances to `until` completed steps (capped at `spec.steps`).
    pub fn run_to(&mut self, stream: &TokenStream, until: usize) -> Result<()> {
        self.check_stream(stream)?;
        let until = until.min(self.spec.steps);
        let (train, val) = stream.split(self.spec.model.context)?;
        let plan = self.spec.plan();
        let decay = self.model.layout().decay_mask();
        let cfg = self.spec.model;
        while self.step < until {
            if self.step.is_multiple_of(self.spec.eval_interval) && !self.has_val(self.step) {
                self.evaluate(val)?;
            }
            let batch = sample_batch(&plan, train, self.step)?;
            let dropout = (cfg.dropout > 0.0).then_some(DropoutKey {
                seed: self.spec.seed,
                step: self.step as u64,
            });
            let (loss, mut grads) = self.model.loss_and_grad_with(
                &batch.inputs,
                &batch.targets,
                self.spec.batch_size,
                cfg.context,
                &self.spec.condition,
                dropout,
            )?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: self.step as u64,
                    loss,
                    batch_hash: batch_hash(&batch.inputs),
                });
            }
            self.curve.push(LossPoint {
                step: self.step,
                split: Split::Train,
                loss,
            });
            self.update(&mut grads, &decay);
            self.step += 1;
        }
        if self.step == self.spec.steps && !self.has_val(self.step) {
            self.evaluate(val)?;
        }
        Ok(())
    }

    fn update(&mut self, grads: &mut [f64], decay: &[bool]) {
        let o = self.spec.optimizer;
        if o.grad_clip > 0.0 {
            let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > o.grad_clip {
                let s = o.grad_clip / norm;
                grads.iter_mut().for_each(|g| *g *= s);
            }
        }
        let lr = o.lr_at(self.step, self.spec.steps);
        let t = (self.step + 1) as i32;
        let c1 = 1.0 - o.beta1.powi(t);
        let c2 = 1.0 - o.beta2.powi(t);
        let params = self.model.params_mut();
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = o.beta1 * self.m[i] + (1.0 - o.beta1) * g;
            self.v[i] = o.beta2 * self.v[i] + (1.0 - o.beta2) * g * g;
            if decay[i] {
                params[i] -= lr * o.weight_decay * params[i];
            }
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + o.eps);
        }
    }

    pub fn result(&self, started: Instant, checkpoint: Option<PathBuf>) -> RunResult {
        let final_val_loss = self
            .curve
            .iter()
            .rev()
            .find(|p| p.split == Split::Val)
            .map_or(f64::NAN, |p| p.loss);
        RunResult {
            condition: self.spec.condition,
            seed: self.spec.seed,
            final_val_loss,
            curve: self.curve.clone(),
            checkpoint,
            wall_time_secs: started.elapsed().as_secs_f64(),
        }
    }
}

/// Runs `spec` to completion; returns the result and the trained model.
pub fn train(spec: &RunSpec, stream: &TokenStream) -> Result<(RunResult, ModelState)> {
    let started = Instant::now();
    let mut state = TrainState::new(spec.clone())?;
    state.run_to(stream, spec.steps)?;
    Ok((state.result(started, None), state.model))
}

const MAGIC: &[u8; 8] = b"FMCKPT01";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    spec: RunSpec,
    init_seed: u64,
    step: usize,
    curve: Vec<LossPoint>,
    param_count: usize,
    tensors: Vec<TensorEntry>,
}

impl TrainState {
    /// Layout: 8-byte magic, u64 LE header length, JSON header, then the
    /// parameters and both Adam moments as f64 LE arrays.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            init_seed: self.model.init_seed(),
            step: self.step,
            curve: self.curve.clone(),
            param_count: self.model.params().len(),
            tensors: self
                .model
                .layout()
                .tensors()
                .iter()
                .map(|t| TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    offset: t.offset,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let n = self.model.params().len();
        let mut buf = Vec::with_capacity(16 + json.len() + 24 * n);
        buf.extend_from_slice(MAGIC);
        buf.write_all(&(json.len() as u64).to_le_bytes()).unwrap();
        buf.extend_from_slice(&json);
        for arr in [self.model.params(), &self.m, &self.v] {
            for x in arr {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        crate::io::write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Ingest {
            path: path.to_path_buf(),
            reason,
        };
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if buf.len() < 16 || &buf[..8] != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let hlen = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
        let body = buf.get(16..16 + hlen).ok_or_else(|| bad("truncated header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(body)?;
        if header.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {}", header.version)));
        }
        let n = header.param_count;
        let data = &buf[16 + hlen..];
        if data.len() != 24 * n {
            return Err(bad(format!("expected {} bytes of tensors, found {}", 24 * n, data.len())));
        }
        let read = |k: usize| -> Vec<f64> {
            data[8 * n * k..8 * n * (k + 1)]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        };
        let model = ModelState::from_parts(header.spec.model, header.init_seed, read(0))?;
        Ok(Self {
            spec: header.spec,
            model,
            m: read(1),
            v: read(2),
            step: header.step,
            curve: header.curve,
        })
    }
}

/// Loads a checkpoint and trains it to completion.
pub fn resume(path: &Path, stream: &TokenStream) -> Result<(RunResult, ModelState)> {
    let started = Instant::now();
    let mut state = TrainState::load(path)?;
    let steps = state.spec.steps;
    state.run_to(stream, steps)?;
    Ok((state.result(started, None), state.model))
}

/// Conditions × seeds, all sharing the remaining settings of `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub conditions: Vec<Condition>,
    pub seeds: Vec<u64>,
    pub base: RunSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub condition: Condition,
    pub seed: u64,
    pub outcome: std::result::Result<RunResult, String>,
    /// Loaded from an up-to-date run directory instead of trained.
    pub reused: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridResults {
    pub cells: Vec<CellOutcome>,
}

fn condition_key(c: &Condition) -> (u8, f64, usize) {
    match *c {
        Condition::Perfect => (0, 0.0, 0),
        Condition::Naive { alpha } => (1, alpha, 1),
        Condition::Fleeting { alpha, echoic } => (2, alpha, echoic),
    }
}

fn cell_order(a: &(Condition, u64), b: &(Condition, u64)) -> std::cmp::Ordering {
    let (ka, kb) = (condition_key(&a.0), condition_key(&b.0));
    ka.0.cmp(&kb.0)
        .then(ka.1.total_cmp(&kb.1))
        .then(ka.2.cmp(&kb.2))
        .then(a.1.cmp(&b.1))
}

/// Directory name of one grid cell.
pub fn cell_dir_name(condition: &Condition, seed: u64) -> String {
    format!("{}-seed{seed}", condition.slug())
}

#[derive(Debug, Clone, Default)]
pub struct GridOptions {
    pub jobs: usize,
    /// When set, each cell writes `checkpoint.bin`, `result.json` and
    /// `spec.json` under `<out>/runs/<cell>/`, and cells already complete
    /// there are reused.
    pub out: Option<PathBuf>,
}

/// A finished cell whose stored spec matches `spec`.
fn completed_cell(dir: &Path, spec: &RunSpec) -> Option<RunResult> {
    let stored: RunSpec = serde_json::from_slice(&std::fs::read(dir.join("spec.json")).ok()?).ok()?;
    if &stored != spec || !dir.join("checkpoint.bin").is_file() {
        return None;
    }
    serde_json::from_slice(&std::fs::read(dir.join("result.json")).ok()?).ok()
}

fn run_cell(spec: &RunSpec, stream: &TokenStream, out: Option<&Path>) -> Result<(RunResult, bool)> {
    let dir = out.map(|root| root.join("runs").join(cell_dir_name(&spec.condition, spec.seed)));
    if let Some(done) = dir.as_deref().and_then(|d| completed_cell(d, spec)) {
        return Ok((done, true));
    }
    let started = Instant::now();
    let mut state = TrainState::new(spec.clone())?;
    state.run_to(stream, spec.steps)?;
    let ckpt = match &dir {
        Some(dir) => {
            let path = dir.join("checkpoint.bin");
            state.save(&path)?;
            Some(path)
        }
        None => None,
    };
    let result = state.result(started, ckpt);
    if let Some(dir) = &dir {
        crate::io::write_json(&dir.join("result.json"), &result)?;
        // Written last: its presence marks the cell complete.
        crate::io::write_json(&dir.join("spec.json"), spec)?;
    }
    Ok((result, false))
}

/// Runs every (condition, seed) cell, at most `jobs` at a time. Failed cells
/// are recorded, not fatal. Results come back in a canonical order so they
/// do not depend on scheduling.
pub fn run_grid(grid: &ExperimentGrid, stream: &TokenStream, opts: &GridOptions) -> Result<GridResults> {
    if grid.conditions.is_empty() || grid.seeds.is_empty() {
        return Err(Error::domain("experiment grid is empty"));
    }
    let mut cells: Vec<(Condition, u64)> = grid
        .conditions
        .iter()
        .flat_map(|c| grid.seeds.iter().map(move |&s| (*c, s)))
        .collect();
    cells.sort_by(cell_order);
    cells.dedup();
    let next = AtomicUsize::new(0);
    let done: Mutex<Vec<Option<CellOutcome>>> = Mutex::new(vec![None; cells.len()]);
    let workers = opts.jobs.clamp(1, cells.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(condition, seed)) = cells.get(i) else { break };
                let spec = RunSpec {
                    condition,
                    seed,
                    ..grid.base.clone()
                };
                let (outcome, reused) = match run_cell(&spec, stream, opts.out.as_deref()) {
                    Ok((r, reused)) => (Ok(r), reused),
                    Err(e) => (Err(e.to_string()), false),
                };
                done.lock().unwrap()[i] = Some(CellOutcome {
                    condition,
                    seed,
                    outcome,
                    reused,
                });
            });
        }
    });
    let cells = done
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|c| c.expect("every cell is visited"))
        .collect();
    Ok(GridResults { cells })
}

impl GridResults {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_err()).count()
    }

    /// Long-format table: condition, E, alpha, seed, step, split, loss.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["condition", "E", "alpha", "seed", "step", "split", "loss"])?;
        for cell in &self.cells {
            let Ok(r) = &cell.outcome else { continue };
            let e = cell.condition.echoic().map(|e| e.to_string()).unwrap_or_default();
            let a = cell.condition.alpha().map(|a| a.to_string()).unwrap_or_default();
            for p in &r.curve {
                w.write_record([
                    cell.condition.to_string(),
                    e.clone(),
                    a.clone(),
                    cell.seed.to_string(),
                    p.step.to_string(),
                    p.split.as_str().to_string(),
                    p.loss.to_string(),
                ])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ResultRow {
    pub condition: String,
    #[serde(rename = "E")]
    pub echoic: Option<usize>,
    pub alpha: Option<f64>,
    pub seed: u64,
    pub step: usize,
    pub split: Split,
    pub loss: f64,
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse(format!("{other:?}")),
    })?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays_to_floor() {
        let o = OptimizerConfig::default();
        assert!((o.lr_at(0, 100) - 3e-4).abs() < 1e-18);
        assert!((o.lr_at(1, 100) - 6e-4).abs() < 1e-18);
        assert!((o.lr_at(100, 100) - 6e-5).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for s in 2..100 {
            let lr = o.lr_at(s, 100);
            assert!(lr <= prev && lr >= 6e-5);
            prev = lr;
        }
    }

    #[test]
    fn run_spec_json_round_trips_with_defaults() {
        let spec: RunSpec = serde_json::from_str(
            r#"{"condition": {"kind": "fleeting", "alpha": 3, "E": 5}, "seed": 7}"#,
        )
        .unwrap();
        assert_eq!(spec.steps, 2000);
        assert_eq!(spec.batch_size, 32);
        assert_eq!(spec.model.context, 256);
        assert_eq!(spec.condition, Condition::Fleeting { alpha: 3.0, echoic: 5 });
        let back: RunSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        assert!(serde_json::from_str::<RunSpec>(r#"{"condition": {"kind": "perfect"}, "seed": 1, "bogus": 2}"#).is_err());
    }
}
