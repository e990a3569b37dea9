//! Synthetic reading-time generator with known coefficients.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ReadingTimeRecord;
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub subjects: usize,
    pub words_per_subject: usize,
    pub intercept: f64,
    pub length_coef: f64,
    pub freq_coef: f64,
    pub surprisal_coef: f64,
    pub noise_sd: f64,
    /// Replace the surprisal column with noise unrelated to reading times.
    pub null_surprisal: bool,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            subjects: 5,
            words_per_subject: 400,
            intercept: 300.0,
            length_coef: 4.0,
            freq_coef: -10.0,
            surprisal_coef: 25.0,
            noise_sd: 30.0,
            null_surprisal: false,
        }
    }
}

const TAGS: [&str; 4] = ["DET", "NOUN", "VERB", "ADJ"];

/// Draws one dataset. Surprisal is correlated with frequency, as in real
/// text, but keeps independent variance of its own.
pub fn simulate(spec: &SimulationSpec, seed: u64) -> Vec<ReadingTimeRecord> {
    let mut rng = stream(seed, Domain::Simulation, 0);
    let noise = Normal::new(0.0, spec.noise_sd).expect("finite sd");
    let freq = Normal::new(-8.0, 2.0).expect("finite sd");
    let extra = Normal::new(0.0, 1.5).expect("finite sd");
    let mut out = Vec::with_capacity(spec.subjects * spec.words_per_subject);
    for s in 0..spec.subjects {
        for w in 0..spec.words_per_subject {
            let word_length = rng.random_range(1..=12usize);
            let log_freq: f64 = freq.sample(&mut rng);
            let surprisal = (3.0 - 0.4 * log_freq + extra.sample(&mut rng)).max(0.05);
            let tag = TAGS[rng.random_range(0..TAGS.len())];
            let mut rt = spec.intercept
                + spec.length_coef * word_length as f64
                + spec.freq_coef * log_freq
                + spec.surprisal_coef * surprisal
                + noise.sample(&mut rng);
            if rt <= 1.0 {
                rt = 1.0;
            }
            let reported = if spec.null_surprisal {
                (3.0 - 0.4 * freq.sample(&mut rng) + extra.sample(&mut rng)).max(0.05)
            } else {
                surprisal
            };
            out.push(ReadingTimeRecord {
                item: (w / 20 + 1).to_string(),
                position: w % 20 + 1,
                word: format!("w{w}"),
                subject: format!("s{s}"),
                rt,
                word_length,
                log_freq,
                pos_tag: tag.into(),
                surprisal: Some(reported),
            });
        }
    }
    out
}
