//! Power-law memory retention and the causal bias matrix built from it.
//!
//! A token at distance `d` behind the query keeps weight 1 while it sits in
//! the echoic buffer (`d < E`), after which its weight decays as
//! `1 - ((d - E + 1) / (n - E))^(1 / (e * alpha))` and reaches exactly 0 at
//! the far edge of the context window.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the retention function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetentionConfig {
    /// Echoic buffer length in tokens.
    pub echoic: usize,
    /// Decay strength; larger values forget faster.
    pub alpha: f64,
    /// Context window length in tokens.
    pub context: usize,
}

impl RetentionConfig {
    pub fn new(echoic: usize, alpha: f64, context: usize) -> Result<Self> {
        let cfg = Self {
            echoic,
            alpha,
            context,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::domain(format!(
                "retention alpha must be positive and finite, got {}",
                self.alpha
            )));
        }
        if self.echoic >= self.context {
            return Err(Error::domain(format!(
                "echoic buffer {} must be shorter than the context window {}",
                self.echoic, self.context
            )));
        }
        Ok(())
    }

    fn exponent(&self) -> f64 {
        1.0 / (std::f64::consts::E * self.alpha)
    }
}

/// Retention weight for a key `d` tokens behind the query.
pub fn retention_value(d: usize, cfg: &RetentionConfig) -> Result<f64> {
    cfg.validate()?;
    if d >= cfg.context {
        return Err(Error::domain(format!(
            "distance {d} outside context window of {}",
            cfg.context
        )));
    }
    Ok(retention_unchecked(d, cfg))
}

#[inline]
fn retention_unchecked(d: usize, cfg: &RetentionConfig) -> f64 {
    if d < cfg.echoic {
        return 1.0;
    }
    let span = (cfg.context - cfg.echoic) as f64;
    let ratio = (d - cfg.echoic + 1) as f64 / span;
    1.0 - ratio.powf(cfg.exponent())
}

/// Retention for every distance `0..cfg.context`.
pub fn retention_curve(cfg: &RetentionConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    Ok((0..cfg.context)
        .map(|d| retention_unchecked(d, cfg))
        .collect())
}

/// CSV with columns `d,retention`, one row per distance in the window.
pub fn retention_curve_csv(cfg: &RetentionConfig) -> Result<String> {
    let mut out = String::from("d,retention\n");
    for (d, r) in retention_curve(cfg)?.into_iter().enumerate() {
        out.push_str(&format!("{d},{r}\n"));
    }
    Ok(out)
}

/// The experimental memory conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Condition {
    /// Standard attention, no retention bias.
    Perfect,
    /// Decay starting at the first token into the past.
    Naive { alpha: f64 },
    /// Decay preceded by an echoic buffer of `echoic` tokens.
    Fleeting {
        alpha: f64,
        #[serde(alias = "E")]
        echoic: usize,
    },
}

impl Condition {
    /// `None` means no bias is applied.
    pub fn retention(&self, context: usize) -> Result<Option<RetentionConfig>> {
        match *self {
            Condition::Perfect => Ok(None),
            // The current token always retains itself.
            Condition::Naive { alpha } => RetentionConfig::new(1, alpha, context).map(Some),
            Condition::Fleeting { alpha, echoic } => {
                RetentionConfig::new(echoic, alpha, context).map(Some)
            }
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match *self {
            Condition::Perfect => None,
            Condition::Naive { alpha } | Condition::Fleeting { alpha, .. } => Some(alpha),
        }
    }

    /// Echoic buffer as used by the bias; `None` for perfect memory.
    pub fn echoic(&self) -> Option<usize> {
        match *self {
            Condition::Perfect => None,
            Condition::Naive { .. } => Some(1),
            Condition::Fleeting { echoic, .. } => Some(echoic),
        }
    }

    /// Filesystem-safe label, e.g. `fleeting-a3-e5`.
    pub fn slug(&self) -> String {
        match *self {
            Condition::Perfect => "perfect".into(),
            Condition::Naive { alpha } => format!("naive-a{alpha}"),
            Condition::Fleeting { alpha, echoic } => format!("fleeting-a{alpha}-e{echoic}"),
        }
    }
}

pub fn condition_to_retention(cond: &Condition, context: usize) -> Result<Option<RetentionConfig>> {
    if context == 0 {
        return Err(Error::domain("context window must be positive"));
    }
    cond.retention(context)
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Condition::Perfect => write!(f, "perfect"),
            Condition::Naive { alpha } => write!(f, "naive:{alpha}"),
            Condition::Fleeting { alpha, echoic } => write!(f, "fleeting:{alpha}:{echoic}"),
        }
    }
}

impl FromStr for Condition {
    type Err = Error;

    /// Parses `perfect`, `naive:ALPHA` or `fleeting:ALPHA:E`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let alpha = |x: &str| -> Result<f64> {
            let a: f64 = x
                .parse()
                .map_err(|_| Error::Parse(format!("bad alpha {x:?} in condition {s:?}")))?;
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::Parse(format!("alpha must be positive in {s:?}")));
            }
            Ok(a)
        };
        match parts.as_slice() {
            ["perfect"] => Ok(Condition::Perfect),
            ["naive", a] => Ok(Condition::Naive { alpha: alpha(a)? }),
            ["fleeting", a, e] => Ok(Condition::Fleeting {
                alpha: alpha(a)?,
                echoic: e
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad echoic buffer {e:?} in {s:?}")))?,
            }),
            _ => Err(Error::Parse(format!(
                "unrecognised condition {s:?}; expected perfect | naive:ALPHA | fleeting:ALPHA:E"
            ))),
        }
    }
}

/// Lower-triangular retention bias over a sequence, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasMatrix {
    values: Vec<f64>,
    size: usize,
    config: RetentionConfig,
}

impl BiasMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn config(&self) -> &RetentionConfig {
        &self.config
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.size..(i + 1) * self.size]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Top-left `k × k` block.
    pub fn leading_block(&self, k: usize) -> Result<BiasMatrix> {
        if k > self.size {
            return Err(Error::domain(format!(
                "block of {k} exceeds bias size {}",
                self.size
            )));
        }
        let mut values = Vec::with_capacity(k * k);
        for i in 0..k {
            values.extend_from_slice(&self.row(i)[..k]);
        }
        Ok(BiasMatrix {
            values,
            size: k,
            config: self.config,
        })
    }
}

pub fn build_bias_matrix(cfg: &RetentionConfig, seq_len: usize) -> Result<BiasMatrix> {
    cfg.validate()?;
    if seq_len == 0 || seq_len > cfg.context {
        return Err(Error::domain(format!(
            "sequence length {seq_len} must be in 1..={}",
            cfg.context
        )));
    }
    let curve: Vec<f64> = (0..seq_len).map(|d| retention_unchecked(d, cfg)).collect();
    let mut values = vec![0.0; seq_len * seq_len];
    for i in 0..seq_len {
        let row = &mut values[i * seq_len..(i + 1) * seq_len];
        for (j, slot) in row.iter_mut().enumerate().take(i + 1) {
            *slot = curve[i - j];
        }
    }
    Ok(BiasMatrix {
        values,
        size: seq_len,
        config: *cfg,
    })
}

type CacheKey = (usize, u64, usize, usize);

/// Shared cache of bias matrices keyed by `(config, seq_len)`.
#[derive(Debug, Default)]
pub struct BiasCache {
    entries: Mutex<HashMap<CacheKey, Arc<BiasMatrix>>>,
}

impl BiasCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, cfg: &RetentionConfig, seq_len: usize) -> Result<Arc<BiasMatrix>> {
        let key = (cfg.echoic, cfg.alpha.to_bits(), cfg.context, seq_len);
        let mut entries = self.entries.lock().expect("bias cache poisoned");
        if let Some(m) = entries.get(&key) {
            return Ok(Arc::clone(m));
        }
        let m = Arc::new(build_bias_matrix(cfg, seq_len)?);
        entries.insert(key, Arc::clone(&m));
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("bias cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Context-sized bias for `cond` from the process-wide cache; `None` for
/// perfect memory. Shorter sequences use its leading block.
pub fn shared_bias(cond: &Condition, context: usize) -> Result<Option<Arc<BiasMatrix>>> {
    static CACHE: OnceLock<BiasCache> = OnceLock::new();
    match condition_to_retention(cond, context)? {
        None => Ok(None),
        Some(cfg) => CACHE.get_or_init(BiasCache::new).get(&cfg, context).map(Some),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(e: usize, a: f64, n: usize) -> RetentionConfig {
        RetentionConfig::new(e, a, n).unwrap()
    }

    #[test]
    fn buffer_is_exactly_one() {
        assert_eq!(retention_value(3, &cfg(5, 3.0, 256)).unwrap(), 1.0);
    }

    #[test]
    fn terminal_distance_forgets_completely() {
        assert_eq!(retention_value(255, &cfg(5, 3.0, 256)).unwrap(), 0.0);
    }

    #[test]
    fn first_decayed_distance() {
        // 1 - (1/251)^(1/(3e)), evaluated with mpmath at 50 digits.
        let v = retention_value(5, &cfg(5, 3.0, 256)).unwrap();
        assert!((v - 0.492_148_829_857_577_4).abs() < 1e-12, "{v}");
    }

    #[test]
    fn out_of_window_distance_is_rejected() {
        assert!(retention_value(256, &cfg(5, 3.0, 256)).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(RetentionConfig::new(256, 3.0, 256).is_err());
        assert!(RetentionConfig::new(1, 0.0, 256).is_err());
        assert!(RetentionConfig::new(1, -2.0, 256).is_err());
        assert!(RetentionConfig::new(1, f64::NAN, 256).is_err());
    }

    #[test]
    fn all_buffer_matrix() {
        let m = build_bias_matrix(&cfg(2, 1.0, 3), 2).unwrap();
        assert_eq!(m.as_slice(), &[1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn row_seven_of_fleeting_matrix() {
        let m = build_bias_matrix(&cfg(5, 3.0, 256), 8).unwrap();
        let row = m.row(7);
        for j in 0..=7 {
            assert_eq!(row[j], retention_value(7 - j, m.config()).unwrap());
        }
        assert!(row[3..].iter().all(|&v| v == 1.0));
        // mpmath, 50 digits
        assert!((row[2] - 0.492_148_829_857_577_4).abs() < 1e-12);
        assert!((row[1] - 0.447_094_759_426_448_7).abs() < 1e-12);
        assert!((row[0] - 0.418_908_988_568_205_1).abs() < 1e-12);
    }

    #[test]
    fn seq_len_beyond_window_is_rejected() {
        assert!(build_bias_matrix(&cfg(5, 3.0, 16), 17).is_err());
    }

    #[test]
    fn conditions_map_to_configs() {
        assert_eq!(condition_to_retention(&Condition::Perfect, 256).unwrap(), None);
        assert_eq!(
            condition_to_retention(&Condition::Naive { alpha: 3.0 }, 256).unwrap(),
            Some(cfg(1, 3.0, 256))
        );
        assert_eq!(
            condition_to_retention(&Condition::Fleeting { alpha: 3.0, echoic: 5 }, 256).unwrap(),
            Some(cfg(5, 3.0, 256))
        );
    }

    #[test]
    fn condition_labels_round_trip() {
        for c in [
            Condition::Perfect,
            Condition::Naive { alpha: 2.5 },
            Condition::Fleeting { alpha: 3.0, echoic: 5 },
        ] {
            assert_eq!(c.to_string().parse::<Condition>().unwrap(), c);
        }
        assert!("fleeting:3".parse::<Condition>().is_err());
        assert!("naive:-1".parse::<Condition>().is_err());
    }

    #[test]
    fn cache_reuses_matrices() {
        let cache = BiasCache::new();
        let c = cfg(5, 3.0, 32);
        let a = cache.get(&c, 16).unwrap();
        let b = cache.get(&c, 16).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn csv_export_has_one_row_per_distance() {
        let csv = retention_curve_csv(&cfg(2, 1.0, 4)).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "d,retention");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[4], "3,0");
    }

    fn config_strategy() -> impl Strategy<Value = RetentionConfig> {
        (2usize..300, 0.5f64..20.0)
            .prop_flat_map(|(n, a)| (0..n, Just(a), Just(n)))
            .prop_map(|(e, a, n)| cfg(e, a, n))
    }

    proptest! {
        #[test]
        fn monotone_beyond_buffer(c in config_strategy()) {
            let curve = retention_curve(&c).unwrap();
            for d in c.echoic.max(1)..c.context {
                if d > c.echoic {
                    prop_assert!(curve[d] < curve[d - 1]);
                }
            }
            prop_assert_eq!(curve[c.context - 1], 0.0);
            prop_assert!(curve.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn larger_alpha_forgets_faster(c in config_strategy(), bump in 0.1f64..5.0) {
            let stronger = RetentionConfig { alpha: c.alpha + bump, ..c };
            for d in c.echoic..c.context - 1 {
                prop_assert!(
                    retention_value(d, &stronger).unwrap() < retention_value(d, &c).unwrap()
                );
            }
        }

        #[test]
        fn leading_blocks_agree(c in config_strategy(), frac in 0.0f64..1.0) {
            let s = c.context.min(64);
            let k = 1 + ((s - 1) as f64 * frac) as usize;
            let big = build_bias_matrix(&c, s).unwrap();
            let small = build_bias_matrix(&c, k).unwrap();
            prop_assert_eq!(big.leading_block(k).unwrap(), small);
        }
    }
}
