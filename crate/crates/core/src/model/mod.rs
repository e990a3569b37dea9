//! GPT-2 style decoder: configuration, parameter initialisation, forward
//! pass, loss and generation.

mod kernels;
pub mod layout;
pub(crate) mod network;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retention::{shared_bias, Condition};
use crate::rng::{stream, Domain};
pub use layout::{ParamLayout, TensorSpec};
pub(crate) use network::DropoutKey;

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    /// Hidden state dimensionality.
    pub width: usize,
    pub vocab: usize,
    /// Context window length `n`.
    pub context: usize,
    pub use_biases: bool,
    pub tie_embeddings: bool,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 6,
            heads: 6,
            width: 384,
            vocab: 8000,
            context: 256,
            use_biases: false,
            tie_embeddings: true,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("width", self.width),
            ("vocab", self.vocab),
            ("context", self.context),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::domain(format!("model {name} must be positive")));
            }
        }
        if !self.width.is_multiple_of(self.heads) {
            return Err(Error::domain(format!(
                "width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::domain(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }
}

/// Closed-form number of parameters.
pub fn param_count(cfg: &ModelConfig, exclude_position_embeddings: bool) -> usize {
    let (c, v, n) = (cfg.width, cfg.vocab, cfg.context);
    let mut block = 12 * c * c + 2 * c;
    if cfg.use_biases {
        block += 11 * c;
    }
    let mut total = v * c + cfg.layers * block + c;
    if cfg.use_biases {
        total += c;
    }
    if !cfg.tie_embeddings {
        total += v * c;
    }
    if !exclude_position_embeddings {
        total += n * c;
    }
    total
}

/// Decoding strategy for [`ModelState::generate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    Greedy,
    Temperature { temperature: f64, seed: u64 },
}

/// Model parameters plus the configuration and seed that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    config: ModelConfig,
    init_seed: u64,
    layout: ParamLayout,
    params: Vec<f64>,
}

impl PartialEq for ParamLayout {
    fn eq(&self, other: &Self) -> bool {
        self.tensors() == other.tensors()
    }
}

/// Draws every tensor from its own stream keyed by `(seed, tensor index)`.
pub fn init_model(cfg: &ModelConfig, seed: u64) -> Result<ModelState> {
    cfg.validate()?;
    let layout = ParamLayout::new(cfg);
    let mut params = vec![0.0; layout.total()];
    let residual_std = INIT_STD / (2.0 * cfg.layers as f64).sqrt();
    for (idx, spec) in layout.tensors().iter().enumerate() {
        let dst = &mut params[spec.offset..spec.offset + spec.numel()];
        let std = match spec.init {
            layout::Init::Ones => {
                dst.fill(1.0);
                continue;
            }
            layout::Init::Zeros => continue,
            layout::Init::Normal => INIT_STD,
            layout::Init::ResidualNormal => residual_std,
        };
        let mut rng = stream(seed, Domain::Init, idx as u64);
        for x in dst.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *x = z * std;
        }
    }
    Ok(ModelState {
        config: *cfg,
        init_seed: seed,
        layout,
        params,
    })
}

/// Mean cross-entropy in nats of `targets` under row-major `logits`
/// (`targets.len() × vocab`).
pub fn cross_entropy_loss(logits: &[f64], targets: &[u32], vocab: usize) -> Result<f64> {
    if vocab == 0 || targets.is_empty() || logits.len() != targets.len() * vocab {
        return Err(Error::shape(format!(
            "{} logits do not form {} rows of {vocab}",
            logits.len(),
            targets.len()
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t as usize >= vocab) {
        return Err(Error::domain(format!("target {bad} outside vocabulary of {vocab}")));
    }
    let mut total = 0.0;
    let mut row = vec![0.0; vocab];
    for (i, &t) in targets.iter().enumerate() {
        row.copy_from_slice(&logits[i * vocab..(i + 1) * vocab]);
        kernels::log_softmax_in_place(&mut row);
        total -= row[t as usize];
    }
    Ok(total / targets.len() as f64)
}

impl ModelState {
    /// Rebuilds a state from stored parameters.
    pub fn from_parts(config: ModelConfig, init_seed: u64, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if params.len() != layout.total() {
            return Err(Error::shape(format!(
                "{} parameters supplied, configuration needs {}",
                params.len(),
                layout.total()
            )));
        }
        Ok(Self {
            config,
            init_seed,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .get(name)
            .map(|t| &self.params[t.offset..t.offset + t.numel()])
    }

    fn check_tokens(&self, tokens: &[u32], batch: usize, seq: usize) -> Result<()> {
        if batch == 0 || seq == 0 {
            return Err(Error::domain("empty batch"));
        }
        if seq > self.config.context {
            return Err(Error::domain(format!(
                "sequence of {seq} tokens exceeds the context window of {}",
                self.config.context
            )));
        }
        if tokens.len() != batch * seq {
            return Err(Error::shape(format!(
                "{} tokens do not form a {batch}×{seq} batch",
                tokens.len()
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.config.vocab) {
            return Err(Error::domain(format!(
                "token {bad} outside vocabulary of {}",
                self.config.vocab
            )));
        }
        Ok(())
    }

    /// Logits for a `batch × seq` block of tokens, `(batch·seq) × vocab`.
    pub fn forward_batch(
        &self,
        tokens: &[u32],
        batch: usize,
        seq: usize,
        condition: &Condition,
    ) -> Result<Vec<f64>> {
        self.check_tokens(tokens, batch, seq)?;
        let bias = shared_bias(condition, self.config.context)?;
        let acts = network::forward(
            &self.config,
            &self.layout,
            &self.params,
            tokens,
            batch,
            seq,
            bias.as_deref(),
            None,
        );
        Ok(acts.logits)
    }

    /// Logits for one sequence, `len × vocab`.
    pub fn forward(&self, tokens: &[u32], condition: &Condition) -> Result<Vec<f64>> {
        self.forward_batch(tokens, 1, tokens.len(), condition)
    }

    /// Mean next-token loss in nats (no dropout).
    pub fn loss(
        &self,
        inputs: &[u32],
        targets: &[u32],
        batch: usize,
        seq: usize,
        condition: &Condition,
    ) -> Result<f64> {
        self.check_tokens(targets, batch, seq)?;
        let logits = self.forward_batch(inputs, batch, seq, condition)?;
        cross_entropy_loss(&logits, targets, self.config.vocab)
    }

    /// Loss and its gradient in flat parameter layout (no dropout).
    pub fn loss_and_grad(
        &self,
        inputs: &[u32],
        targets: &[u32],
        batch: usize,
        seq: usize,
        condition: &Condition,
    ) -> Result<(f64, Vec<f64>)> {
        self.loss_and_grad_with(inputs, targets, batch, seq, condition, None)
    }

    pub(crate) fn loss_and_grad_with(
        &self,
        inputs: &[u32],
        targets: &[u32],
        batch: usize,
        seq: usize,
        condition: &Condition,
        dropout: Option<DropoutKey>,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_tokens(inputs, batch, seq)?;
        self.check_tokens(targets, batch, seq)?;
        let bias = shared_bias(condition, self.config.context)?;
        let acts = network::forward(
            &self.config,
            &self.layout,
            &self.params,
            inputs,
            batch,
            seq,
            bias.as_deref(),
            dropout,
        );
        let (loss, dlogits) = network::loss_and_dlogits(&acts.logits, targets, self.config.vocab);
        let grads = network::backward(&self.layout, &self.params, &acts, &dlogits);
        Ok((loss, grads))
    }

    /// Natural-log probability of each token given its predecessors:
    /// entry `i` is `ln P(tokens[i + 1] | tokens[..=i])`.
    pub fn next_token_logprobs(&self, tokens: &[u32], condition: &Condition) -> Result<Vec<f64>> {
        if tokens.len() < 2 {
            return Ok(Vec::new());
        }
        let context = &tokens[..tokens.len() - 1];
        let logits = self.forward(context, condition)?;
        let v = self.config.vocab;
        let mut row = vec![0.0; v];
        Ok(tokens[1..]
            .iter()
            .enumerate()
            .map(|(i, &next)| {
                row.copy_from_slice(&logits[i * v..(i + 1) * v]);
                kernels::log_softmax_in_place(&mut row);
                row[next as usize]
            })
            .collect())
    }

    /// Autoregressive continuation of `prompt`; returns prompt plus new tokens.
    pub fn generate(
        &self,
        prompt: &[u32],
        max_tokens: usize,
        condition: &Condition,
        sampling: Sampling,
    ) -> Result<Vec<u32>> {
        if prompt.is_empty() {
            return Err(Error::domain("generation needs a non-empty prompt"));
        }
        if prompt.len() > self.config.context {
            return Err(Error::domain(format!(
                "prompt of {} tokens exceeds the context window of {}",
                prompt.len(),
                self.config.context
            )));
        }
        if let Sampling::Temperature { temperature, .. } = sampling {
            if !(temperature.is_finite() && temperature > 0.0) {
                return Err(Error::domain("sampling temperature must be positive"));
            }
        }
        let v = self.config.vocab;
        let mut out = prompt.to_vec();
        for i in 0..max_tokens {
            let start = out.len().saturating_sub(self.config.context);
            let window = &out[start..];
            let logits = self.forward(window, condition)?;
            let last = &logits[(window.len() - 1) * v..window.len() * v];
            let next = match sampling {
                Sampling::Greedy => argmax(last),
                Sampling::Temperature { temperature, seed } => {
                    let mut row: Vec<f64> = last.iter().map(|z| z / temperature).collect();
                    kernels::log_softmax_in_place(&mut row);
                    let u: f64 = stream(seed, Domain::Sampling, i as u64).random();
                    let mut acc = 0.0;
                    let mut pick = v - 1;
                    for (id, lp) in row.iter().enumerate() {
                        acc += lp.exp();
                        if u < acc {
                            pick = id;
                            break;
                        }
                    }
                    pick
                }
            };
            out.push(next as u32);
        }
        Ok(out)
    }
}

/// Index of the largest value; the lowest index wins ties.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &z) in row.iter().enumerate() {
        if z > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            layers: 2,
            heads: 2,
            width: 8,
            vocab: 11,
            context: 6,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn full_size_configuration_parameter_count() {
        assert_eq!(param_count(&ModelConfig::default(), true), 13_693_824);
    }

    #[test]
    fn untied_and_positional_counts_are_additive() {
        let base = ModelConfig::default();
        let tied = param_count(&base, true);
        let untied = ModelConfig {
            tie_embeddings: false,
            ..base
        };
        assert_eq!(param_count(&untied, true), tied + 8000 * 384);
        assert_eq!(param_count(&base, false), tied + 256 * 384);
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig { width: 10, heads: 3, ..tiny() }.validate().is_err());
        assert!(ModelConfig { dropout: 1.0, ..tiny() }.validate().is_err());
        assert!(ModelConfig { layers: 0, ..tiny() }.validate().is_err());
        assert!(tiny().validate().is_ok());
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_model(&tiny(), 5).unwrap();
        let b = init_model(&tiny(), 5).unwrap();
        let c = init_model(&tiny(), 6).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn init_scheme() {
        let cfg = ModelConfig {
            width: 64,
            heads: 4,
            layers: 8,
            ..tiny()
        };
        let s = init_model(&cfg, 1).unwrap();
        assert!(s.tensor("h.0.ln_1.weight").unwrap().iter().all(|&x| x == 1.0));
        let sd = |xs: &[f64]| (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt();
        let qkv = sd(s.tensor("h.0.attn.c_attn.weight").unwrap());
        let proj = sd(s.tensor("h.0.mlp.c_proj.weight").unwrap());
        assert!((qkv - 0.02).abs() < 0.002, "{qkv}");
        assert!((proj - 0.02 / 4.0).abs() < 0.0005, "{proj}");
    }

    #[test]
    fn output_shape_and_range_checks() {
        let s = init_model(&tiny(), 1).unwrap();
        let logits = s.forward(&[1, 2, 3], &Condition::Perfect).unwrap();
        assert_eq!(logits.len(), 3 * 11);
        assert!(s.forward(&[1, 11], &Condition::Perfect).is_err());
        assert!(s.forward(&[1; 7], &Condition::Perfect).is_err());
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let loss = cross_entropy_loss(&vec![0.3; 2 * 8000], &[5, 7999], 8000).unwrap();
        assert!((loss - 8000f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_logits_give_near_zero_loss() {
        let mut logits = vec![0.0; 4];
        logits[2] = 60.0;
        assert!(cross_entropy_loss(&logits, &[2], 4).unwrap() < 1e-20);
        assert!(cross_entropy_loss(&logits, &[4], 4).is_err());
        assert!(cross_entropy_loss(&logits, &[1, 2], 4).is_err());
    }

    #[test]
    fn generation_contracts() {
        let s = init_model(&tiny(), 3).unwrap();
        let fleeting = Condition::Fleeting {
            alpha: 2.0,
            echoic: 2,
        };
        let g1 = s.generate(&[1, 2], 8, &fleeting, Sampling::Greedy).unwrap();
        let g2 = s.generate(&[1, 2], 8, &fleeting, Sampling::Greedy).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(g1.len(), 10);
        assert_eq!(s.generate(&[4], 0, &fleeting, Sampling::Greedy).unwrap(), vec![4]);
        let temp = Sampling::Temperature {
            temperature: 1.5,
            seed: 9,
        };
        assert_eq!(
            s.generate(&[1], 5, &fleeting, temp).unwrap(),
            s.generate(&[1], 5, &fleeting, temp).unwrap()
        );
        assert!(s.generate(&[], 3, &fleeting, Sampling::Greedy).is_err());
        assert!(s.generate(&[1; 7], 3, &fleeting, Sampling::Greedy).is_err());
    }

    fn check_gradients(cfg: ModelConfig, condition: Condition, dropout: Option<DropoutKey>) {
        let mut s = init_model(&cfg, 17).unwrap();
        // Larger weights than the init scale so every path carries signal.
        for (i, p) in s.params_mut().iter_mut().enumerate() {
            *p += 0.3 * ((i as f64) * 0.618).sin();
        }
        let inputs = [1, 4, 2, 9, 3, 0, 7, 7, 5, 10];
        let targets = [4, 2, 9, 3, 0, 8, 7, 5, 10, 1];
        let (_, grads) = s
            .loss_and_grad_with(&inputs, &targets, 2, 5, &condition, dropout)
            .unwrap();
        let loss_at = |s: &ModelState| {
            s.loss_and_grad_with(&inputs, &targets, 2, 5, &condition, dropout)
                .unwrap()
                .0
        };
        let h = 1e-5;
        let n = s.params().len();
        for i in (0..n).step_by(7) {
            let orig = s.params()[i];
            s.params_mut()[i] = orig + h;
            let up = loss_at(&s);
            s.params_mut()[i] = orig - h;
            let down = loss_at(&s);
            s.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = (numeric - grads[i]).abs();
            assert!(
                err <= 1e-6 * numeric.abs().max(grads[i].abs()).max(1e-3),
                "param {i} ({:?}): analytic {} numeric {numeric}",
                s.layout()
                    .tensors()
                    .iter()
                    .find(|t| t.offset <= i && i < t.offset + t.numel())
                    .map(|t| t.name.clone()),
                grads[i]
            );
        }
    }

    #[test]
    fn full_network_gradients_tied() {
        check_gradients(
            tiny(),
            Condition::Fleeting {
                alpha: 1.5,
                echoic: 2,
            },
            None,
        );
    }

    #[test]
    fn full_network_gradients_untied_with_biases() {
        let cfg = ModelConfig {
            use_biases: true,
            tie_embeddings: false,
            ..tiny()
        };
        check_gradients(cfg, Condition::Naive { alpha: 0.8 }, None);
        check_gradients(cfg, Condition::Perfect, None);
    }

    #[test]
    fn full_network_gradients_with_dropout() {
        let cfg = ModelConfig {
            dropout: 0.2,
            ..tiny()
        };
        let key = DropoutKey { seed: 3, step: 11 };
        check_gradients(
            cfg,
            Condition::Fleeting {
                alpha: 1.0,
                echoic: 1,
            },
            Some(key),
        );
    }
}
