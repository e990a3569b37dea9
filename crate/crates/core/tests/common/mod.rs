//! Independent reference implementations shared by the integration tests.
//! Everything here is written in the most literal form possible and shares
//! no code with the library kernels.
#![allow(dead_code)]

use fleeting::ModelState;

/// Plain causal softmax attention with no retention path.
pub fn reference_attention(q: &[f64], k: &[f64], v: &[f64], h: usize, t: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * t * d];
    let scale = 1.0 / (d as f64).sqrt();
    for hh in 0..h {
        let base = hh * t * d;
        for i in 0..t {
            let scores: Vec<f64> = (0..=i)
                .map(|j| (0..d).map(|x| q[base + i * d + x] * k[base + j * d + x]).sum::<f64>() * scale)
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
            for (j, s) in scores.iter().enumerate() {
                let p = (s - m).exp() / z;
                for x in 0..d {
                    out[base + i * d + x] += p * v[base + j * d + x];
                }
            }
        }
    }
    out
}

/// Textbook backward pass of [`reference_attention`].
pub fn reference_attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    dout: &[f64],
    h: usize,
    t: usize,
    d: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = h * t * d;
    let (mut dq, mut dk, mut dv) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let scale = 1.0 / (d as f64).sqrt();
    for hh in 0..h {
        let base = hh * t * d;
        for i in 0..t {
            let scores: Vec<f64> = (0..=i)
                .map(|j| (0..d).map(|x| q[base + i * d + x] * k[base + j * d + x]).sum::<f64>() * scale)
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
            let p: Vec<f64> = scores.iter().map(|s| (s - m).exp() / z).collect();
            // dL/dp_j = dout_i . v_j
            let dp: Vec<f64> = (0..=i)
                .map(|j| (0..d).map(|x| dout[base + i * d + x] * v[base + j * d + x]).sum())
                .collect();
            for j in 0..=i {
                for x in 0..d {
                    dv[base + j * d + x] += p[j] * dout[base + i * d + x];
                }
            }
            // Softmax Jacobian: ds_j = sum_l dp_l p_l (delta_lj - p_j)
            for j in 0..=i {
                let mut ds = 0.0;
                for l in 0..=i {
                    let delta = if l == j { 1.0 } else { 0.0 };
                    ds += dp[l] * p[l] * (delta - p[j]);
                }
                ds *= scale;
                for x in 0..d {
                    dq[base + i * d + x] += ds * k[base + j * d + x];
                    dk[base + j * d + x] += ds * q[base + i * d + x];
                }
            }
        }
    }
    (dq, dk, dv)
}

fn layernorm(x: &[f64], w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let c = x.len() as f64;
    let mean = x.iter().sum::<f64>() / c;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c;
    let inv = 1.0 / (var + 1e-5).sqrt();
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mean) * inv * w[i] + b.map_or(0.0, |b| b[i]))
        .collect()
}

fn linear(x: &[f64], w: &[f64], b: Option<&[f64]>, out: usize) -> Vec<f64> {
    (0..out)
        .map(|o| {
            let s: f64 = x.iter().enumerate().map(|(i, xi)| xi * w[i * out + o]).sum();
            s + b.map_or(0.0, |b| b[o])
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// Standard GPT-2 decoder logits read straight from the named tensors.
pub fn reference_decoder(state: &ModelState, tokens: &[u32]) -> Vec<Vec<f64>> {
    let cfg = state.config();
    let (c, nh) = (cfg.width, cfg.heads);
    let hd = c / nh;
    let t = tokens.len();
    let get = |name: &str| state.tensor(name).unwrap_or_else(|| panic!("missing {name}"));
    let opt = |name: &str| state.tensor(name);
    let wte = get("wte");
    let wpe = get("wpe");
    let mut x: Vec<Vec<f64>> = tokens
        .iter()
        .enumerate()
        .map(|(p, &tok)| {
            (0..c)
                .map(|i| wte[tok as usize * c + i] + wpe[p * c + i])
                .collect()
        })
        .collect();
    for l in 0..cfg.layers {
        let n = |s: &str| format!("h.{l}.{s}");
        let h1: Vec<Vec<f64>> = x
            .iter()
            .map(|r| layernorm(r, get(&n("ln_1.weight")), opt(&n("ln_1.bias"))))
            .collect();
        let qkv: Vec<Vec<f64>> = h1
            .iter()
            .map(|r| linear(r, get(&n("attn.c_attn.weight")), opt(&n("attn.c_attn.bias")), 3 * c))
            .collect();
        let mut q = vec![0.0; nh * t * hd];
        let mut k = q.clone();
        let mut v = q.clone();
        for (p, row) in qkv.iter().enumerate() {
            for hh in 0..nh {
                for e in 0..hd {
                    q[hh * t * hd + p * hd + e] = row[hh * hd + e];
                    k[hh * t * hd + p * hd + e] = row[c + hh * hd + e];
                    v[hh * t * hd + p * hd + e] = row[2 * c + hh * hd + e];
                }
            }
        }
        let att = reference_attention(&q, &k, &v, nh, t, hd);
        for p in 0..t {
            let merged: Vec<f64> = (0..c)
                .map(|i| att[(i / hd) * t * hd + p * hd + i % hd])
                .collect();
            let proj = linear(&merged, get(&n("attn.c_proj.weight")), opt(&n("attn.c_proj.bias")), c);
            for i in 0..c {
                x[p][i] += proj[i];
            }
        }
        for row in x.iter_mut() {
            let h2 = layernorm(row, get(&n("ln_2.weight")), opt(&n("ln_2.bias")));
            let fc: Vec<f64> = linear(&h2, get(&n("mlp.c_fc.weight")), opt(&n("mlp.c_fc.bias")), 4 * c)
                .into_iter()
                .map(gelu)
                .collect();
            let out = linear(&fc, get(&n("mlp.c_proj.weight")), opt(&n("mlp.c_proj.bias")), c);
            for i in 0..c {
                row[i] += out[i];
            }
        }
    }
    let head = opt("lm_head.weight").unwrap_or(wte);
    x.iter()
        .map(|r| {
            let f = layernorm(r, get("ln_f.weight"), opt("ln_f.bias"));
            (0..cfg.vocab)
                .map(|vv| (0..c).map(|i| f[i] * head[vv * c + i]).sum())
                .collect()
        })
        .collect()
}

/// Relative error with a small floor so near-zero pairs compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}
