//! Causal self-attention with a multiplicative post-softmax retention bias.
//!
//! `out = (softmax(QKᵀ/√d_k) ⊙ B) V` with future positions masked to −∞
//! before the softmax. Rows are not renormalised after the product, so a
//! biased row of attention weights sums to at most 1.

use crate::error::{Error, Result};
use crate::retention::BiasMatrix;

/// Row-major view of a `size × size` bias with an arbitrary row stride, so
/// that a context-sized matrix can serve any shorter sequence through its
/// leading block.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BiasView<'a> {
    values: &'a [f64],
    stride: usize,
}

impl<'a> BiasView<'a> {
    pub(crate) fn leading(matrix: &'a BiasMatrix, seq_len: usize) -> Result<Self> {
        if seq_len > matrix.size() {
            return Err(Error::shape(format!(
                "sequence of {seq_len} exceeds bias of size {}",
                matrix.size()
            )));
        }
        Ok(Self {
            values: matrix.as_slice(),
            stride: matrix.size(),
        })
    }

    #[inline]
    fn row(&self, i: usize) -> &'a [f64] {
        &self.values[i * self.stride..i * self.stride + i + 1]
    }
}

/// Per-head buffers saved by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct HeadCache {
    /// Causal softmax probabilities, `t × t`, zero above the diagonal.
    pub probs: Vec<f64>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Forward pass for one head. `q`, `k`, `v`, `out` are `t × hd`; `dropout`
/// is an optional `t × t` multiplicative mask applied before the bias.
#[allow(clippy::too_many_arguments)]
pub(crate) fn head_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    t: usize,
    hd: usize,
    bias: Option<BiasView<'_>>,
    dropout: Option<&[f64]>,
    out: &mut [f64],
) -> HeadCache {
    let scale = 1.0 / (hd as f64).sqrt();
    let mut probs = vec![0.0; t * t];
    out.fill(0.0);
    for i in 0..t {
        let qi = &q[i * hd..(i + 1) * hd];
        let row = &mut probs[i * t..i * t + i + 1];
        let mut max = f64::NEG_INFINITY;
        for (j, p) in row.iter_mut().enumerate() {
            *p = dot(qi, &k[j * hd..(j + 1) * hd]) * scale;
            max = max.max(*p);
        }
        let mut sum = 0.0;
        for p in row.iter_mut() {
            *p = (*p - max).exp();
            sum += *p;
        }
        let inv = 1.0 / sum;
        for p in row.iter_mut() {
            *p *= inv;
        }
        let oi = &mut out[i * hd..(i + 1) * hd];
        let brow = bias.map(|b| b.row(i));
        for (j, &p) in row.iter().enumerate() {
            let mut w = p;
            if let Some(mask) = dropout {
                w *= mask[i * t + j];
            }
            if let Some(b) = brow {
                w *= b[j];
            }
            if w == 0.0 {
                continue;
            }
            for (o, &vv) in oi.iter_mut().zip(&v[j * hd..(j + 1) * hd]) {
                *o += w * vv;
            }
        }
    }
    HeadCache { probs }
}

/// Backward pass for one head; gradients are accumulated into `dq`, `dk`,
/// `dv`. The bias receives no gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn head_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    t: usize,
    hd: usize,
    bias: Option<BiasView<'_>>,
    dropout: Option<&[f64]>,
    cache: &HeadCache,
    dout: &[f64],
    dq: &mut [f64],
    dk: &mut [f64],
    dv: &mut [f64],
) {
    let scale = 1.0 / (hd as f64).sqrt();
    let mut dp = vec![0.0; t];
    for i in 0..t {
        let p = &cache.probs[i * t..i * t + i + 1];
        let doi = &dout[i * hd..(i + 1) * hd];
        let brow = bias.map(|b| b.row(i));
        for j in 0..=i {
            let mut factor = 1.0;
            if let Some(mask) = dropout {
                factor *= mask[i * t + j];
            }
            if let Some(b) = brow {
                factor *= b[j];
            }
            let w = p[j] * factor;
            let vj = &v[j * hd..(j + 1) * hd];
            let dvj = &mut dv[j * hd..(j + 1) * hd];
            for (g, &d) in dvj.iter_mut().zip(doi) {
                *g += w * d;
            }
            dp[j] = dot(doi, vj) * factor;
        }
        let inner: f64 = p.iter().zip(&dp[..=i]).map(|(a, b)| a * b).sum();
        let qi = &q[i * hd..(i + 1) * hd];
        for j in 0..=i {
            let ds = p[j] * (dp[j] - inner) * scale;
            if ds == 0.0 {
                continue;
            }
            let kj = &k[j * hd..(j + 1) * hd];
            let dqi = &mut dq[i * hd..(i + 1) * hd];
            for (g, &x) in dqi.iter_mut().zip(kj) {
                *g += ds * x;
            }
            let dkj = &mut dk[j * hd..(j + 1) * hd];
            for (g, &x) in dkj.iter_mut().zip(qi) {
                *g += ds * x;
            }
        }
    }
}

/// Queries, keys and values laid out as `(heads, seq_len, head_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionInput {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    pub heads: usize,
    pub seq_len: usize,
    pub head_dim: usize,
}

impl AttentionInput {
    pub fn new(
        q: Vec<f64>,
        k: Vec<f64>,
        v: Vec<f64>,
        heads: usize,
        seq_len: usize,
        head_dim: usize,
    ) -> Result<Self> {
        let input = Self {
            q,
            k,
            v,
            heads,
            seq_len,
            head_dim,
        };
        input.validate()?;
        Ok(input)
    }

    pub fn zeros(heads: usize, seq_len: usize, head_dim: usize) -> Self {
        let n = heads * seq_len * head_dim;
        Self {
            q: vec![0.0; n],
            k: vec![0.0; n],
            v: vec![0.0; n],
            heads,
            seq_len,
            head_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.heads * self.seq_len * self.head_dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.seq_len == 0 || self.head_dim == 0 {
            return Err(Error::shape("attention dimensions must be positive"));
        }
        let n = self.len();
        for (name, t) in [("Q", &self.q), ("K", &self.k), ("V", &self.v)] {
            if t.len() != n {
                return Err(Error::shape(format!(
                    "{name} has {} elements, expected {n} = {}×{}×{}",
                    t.len(),
                    self.heads,
                    self.seq_len,
                    self.head_dim
                )));
            }
        }
        Ok(())
    }

    fn head(&self, h: usize) -> (&[f64], &[f64], &[f64]) {
        let span = self.seq_len * self.head_dim;
        let r = h * span..(h + 1) * span;
        (&self.q[r.clone()], &self.k[r.clone()], &self.v[r])
    }
}

/// Gradients of a scalar loss with respect to Q, K and V.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    pub dq: Vec<f64>,
    pub dk: Vec<f64>,
    pub dv: Vec<f64>,
}

fn check_bias(input: &AttentionInput, bias: Option<&BiasMatrix>) -> Result<()> {
    input.validate()?;
    if let Some(b) = bias {
        if b.size() != input.seq_len {
            return Err(Error::shape(format!(
                "bias is {0}×{0} but the sequence has {1} positions",
                b.size(),
                input.seq_len
            )));
        }
    }
    Ok(())
}

/// Biased causal attention; returns `(heads, seq_len, head_dim)`.
pub fn fm_attention(input: &AttentionInput, bias: Option<&BiasMatrix>) -> Result<Vec<f64>> {
    check_bias(input, bias)?;
    let (t, hd) = (input.seq_len, input.head_dim);
    let view = bias.map(|b| BiasView::leading(b, t)).transpose()?;
    let mut out = vec![0.0; input.len()];
    for h in 0..input.heads {
        let (q, k, v) = input.head(h);
        head_forward(q, k, v, t, hd, view, None, &mut out[h * t * hd..(h + 1) * t * hd]);
    }
    Ok(out)
}

/// Backward pass of [`fm_attention`] for the upstream gradient `dout`.
pub fn fm_attention_backward(
    input: &AttentionInput,
    bias: Option<&BiasMatrix>,
    dout: &[f64],
) -> Result<AttentionGrads> {
    check_bias(input, bias)?;
    if dout.len() != input.len() {
        return Err(Error::shape(format!(
            "upstream gradient has {} elements, expected {}",
            dout.len(),
            input.len()
        )));
    }
    let (t, hd) = (input.seq_len, input.head_dim);
    let view = bias.map(|b| BiasView::leading(b, t)).transpose()?;
    let mut grads = AttentionGrads {
        dq: vec![0.0; input.len()],
        dk: vec![0.0; input.len()],
        dv: vec![0.0; input.len()],
    };
    let mut scratch = vec![0.0; t * hd];
    for h in 0..input.heads {
        let (q, k, v) = input.head(h);
        let cache = head_forward(q, k, v, t, hd, view, None, &mut scratch);
        let r = h * t * hd..(h + 1) * t * hd;
        head_backward(
            q,
            k,
            v,
            t,
            hd,
            view,
            None,
            &cache,
            &dout[r.clone()],
            &mut grads.dq[r.clone()],
            &mut grads.dk[r.clone()],
            &mut grads.dv[r],
        );
    }
    Ok(grads)
}

/// Attention weights after the bias, `(heads, seq_len, seq_len)`.
pub fn attention_weights(input: &AttentionInput, bias: Option<&BiasMatrix>) -> Result<Vec<f64>> {
    check_bias(input, bias)?;
    let (t, hd) = (input.seq_len, input.head_dim);
    let view = bias.map(|b| BiasView::leading(b, t)).transpose()?;
    let mut weights = Vec::with_capacity(input.heads * t * t);
    let mut scratch = vec![0.0; t * hd];
    for h in 0..input.heads {
        let (q, k, v) = input.head(h);
        let mut probs = head_forward(q, k, v, t, hd, view, None, &mut scratch).probs;
        if let Some(b) = view {
            for i in 0..t {
                for (p, w) in probs[i * t..i * t + i + 1].iter_mut().zip(b.row(i)) {
                    *p *= w;
                }
            }
        }
        weights.extend(probs);
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retention::{build_bias_matrix, RetentionConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_input(rng: &mut ChaCha8Rng, h: usize, t: usize, d: usize) -> AttentionInput {
        let n = h * t * d;
        let mut g = || (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        AttentionInput::new(g(), g(), g(), h, t, d).unwrap()
    }

    #[test]
    fn single_position_returns_value_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random_input(&mut rng, 2, 1, 3);
        let bias = build_bias_matrix(&RetentionConfig::new(1, 1.0, 4).unwrap(), 1).unwrap();
        let out = fm_attention(&input, Some(&bias)).unwrap();
        assert_eq!(out, input.v);
    }

    #[test]
    fn zero_queries_average_uniformly_then_bias() {
        // Retention row [b, 1] for position 1 with b = B(1).
        let cfg = RetentionConfig::new(1, 1.0, 3).unwrap();
        let bias = build_bias_matrix(&cfg, 2).unwrap();
        let b = bias.get(1, 0);
        let v = vec![2.0, -1.0, 4.0, 3.0];
        let input = AttentionInput::new(vec![0.0; 4], vec![0.7, 0.1, -0.3, 0.9], v, 1, 2, 2).unwrap();
        let out = fm_attention(&input, Some(&bias)).unwrap();
        let expected = [0.5 * b * 2.0 + 0.5 * 4.0, 0.5 * b * -1.0 + 0.5 * 3.0];
        assert!((out[2] - expected[0]).abs() < 1e-15);
        assert!((out[3] - expected[1]).abs() < 1e-15);
    }

    #[test]
    fn zero_inputs_give_zero_gradients() {
        let input = AttentionInput::zeros(2, 3, 2);
        let g = fm_attention_backward(&input, None, &vec![0.0; input.len()]).unwrap();
        assert!(g.dq.iter().chain(&g.dk).chain(&g.dv).all(|&x| x == 0.0));
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        assert!(AttentionInput::new(vec![0.0; 5], vec![0.0; 6], vec![0.0; 6], 1, 3, 2).is_err());
        let input = AttentionInput::zeros(1, 3, 2);
        let bias = build_bias_matrix(&RetentionConfig::new(1, 1.0, 8).unwrap(), 4).unwrap();
        assert!(fm_attention(&input, Some(&bias)).is_err());
        assert!(fm_attention_backward(&input, None, &[0.0; 2]).is_err());
    }

    #[test]
    fn biased_rows_are_substochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let input = random_input(&mut rng, 2, 6, 3);
        let bias = build_bias_matrix(&RetentionConfig::new(2, 1.5, 8).unwrap(), 6).unwrap();
        let w = attention_weights(&input, Some(&bias)).unwrap();
        for h in 0..2 {
            for i in 0..6 {
                let s: f64 = w[h * 36 + i * 6..h * 36 + i * 6 + 6].iter().sum();
                if i < 2 {
                    assert!((s - 1.0).abs() < 1e-12);
                } else {
                    assert!(s < 1.0);
                }
            }
        }
    }

    #[test]
    fn future_tokens_do_not_leak() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = random_input(&mut rng, 2, 5, 3);
        let bias = build_bias_matrix(&RetentionConfig::new(1, 2.0, 5).unwrap(), 5).unwrap();
        let base = fm_attention(&input, Some(&bias)).unwrap();
        let mut perturbed = input.clone();
        for h in 0..2 {
            for d in 0..3 {
                let idx = h * 15 + 3 * 3 + d;
                perturbed.q[idx] += 1.0;
                perturbed.k[idx] -= 2.0;
                perturbed.v[idx] += 5.0;
            }
        }
        let out = fm_attention(&perturbed, Some(&bias)).unwrap();
        for h in 0..2 {
            for pos in 0..3 {
                for d in 0..3 {
                    let idx = h * 15 + pos * 3 + d;
                    assert_eq!(base[idx], out[idx]);
                }
            }
        }
    }

    #[test]
    fn fully_forgotten_tokens_contribute_nothing() {
        // n = seq_len, so the first token is at the terminal distance from
        // the last query and its retention is exactly zero.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let input = random_input(&mut rng, 1, 4, 2);
        let bias = build_bias_matrix(&RetentionConfig::new(1, 1.0, 4).unwrap(), 4).unwrap();
        assert_eq!(bias.get(3, 0), 0.0);
        let w = attention_weights(&input, Some(&bias)).unwrap();
        assert_eq!(w[3 * 4], 0.0);
        let mut changed = input.clone();
        changed.v[0] = 100.0;
        changed.v[1] = -100.0;
        let a = fm_attention(&input, Some(&bias)).unwrap();
        let b = fm_attention(&changed, Some(&bias)).unwrap();
        assert_eq!(a[6..8], b[6..8]);
    }
}
