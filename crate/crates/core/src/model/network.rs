//! Batched forward and backward passes of the decoder over a flat
//! parameter vector.

use rand::Rng;

use super::kernels::{
    axpy, dot, gelu_backward, gelu_forward, layernorm_backward, layernorm_forward,
    log_softmax_in_place, matmul_backward, matmul_forward,
};
use super::layout::ParamLayout;
use super::ModelConfig;
use crate::attention::{head_backward, head_forward, BiasView, HeadCache};
use crate::retention::BiasMatrix;
use crate::rng::{stream, Domain};

/// Keys the dropout masks of one optimisation step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct DropoutKey {
    pub seed: u64,
    pub step: u64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Dims {
    pub b: usize,
    pub t: usize,
    pub c: usize,
    pub h: usize,
    pub hd: usize,
    pub v: usize,
}

impl Dims {
    fn n(&self) -> usize {
        self.b * self.t
    }
}

struct BlockActs {
    ln1: Vec<f64>,
    ln1_mean: Vec<f64>,
    ln1_rstd: Vec<f64>,
    qkv: Vec<f64>,
    atty: Vec<f64>,
    heads: Vec<HeadCache>,
    attn_masks: Option<Vec<Vec<f64>>>,
    proj_mask: Option<Vec<f64>>,
    resid2: Vec<f64>,
    ln2: Vec<f64>,
    ln2_mean: Vec<f64>,
    ln2_rstd: Vec<f64>,
    fch: Vec<f64>,
    fch_gelu: Vec<f64>,
    fcproj_mask: Option<Vec<f64>>,
}

pub(crate) struct Activations<'a> {
    pub dims: Dims,
    bias: Option<&'a BiasMatrix>,
    tokens: Vec<u32>,
    emb_mask: Option<Vec<f64>>,
    /// `resid[0]` is the embedding output, `resid[l + 1]` block `l`'s output.
    resid: Vec<Vec<f64>>,
    blocks: Vec<BlockActs>,
    lnf: Vec<f64>,
    lnf_mean: Vec<f64>,
    lnf_rstd: Vec<f64>,
    /// `(b·t) × vocab`
    pub logits: Vec<f64>,
}

struct MaskSource {
    rng: rand_chacha::ChaCha8Rng,
    p: f64,
}

impl MaskSource {
    fn mask(&mut self, len: usize) -> Vec<f64> {
        let keep = 1.0 / (1.0 - self.p);
        (0..len)
            .map(|_| {
                if self.rng.random::<f64>() < self.p {
                    0.0
                } else {
                    keep
                }
            })
            .collect()
    }
}

fn apply_mask(x: &mut [f64], mask: Option<&Vec<f64>>) {
    if let Some(m) = mask {
        for (v, s) in x.iter_mut().zip(m) {
            *v *= s;
        }
    }
}

fn slice(params: &[f64], offset: usize, len: usize) -> &[f64] {
    &params[offset..offset + len]
}

fn opt_slice(params: &[f64], offset: Option<usize>, len: usize) -> Option<&[f64]> {
    offset.map(|o| &params[o..o + len])
}

/// Gathers head `h` of sequence `b` out of the packed `qkv` buffer.
fn gather_head(qkv: &[f64], d: &Dims, b: usize, h: usize) -> [Vec<f64>; 3] {
    let c3 = 3 * d.c;
    let mut out = [
        vec![0.0; d.t * d.hd],
        vec![0.0; d.t * d.hd],
        vec![0.0; d.t * d.hd],
    ];
    for t in 0..d.t {
        let row = &qkv[(b * d.t + t) * c3..(b * d.t + t + 1) * c3];
        for (part, buf) in out.iter_mut().enumerate() {
            let src = &row[part * d.c + h * d.hd..part * d.c + (h + 1) * d.hd];
            buf[t * d.hd..(t + 1) * d.hd].copy_from_slice(src);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn forward<'a>(
    cfg: &ModelConfig,
    layout: &ParamLayout,
    params: &[f64],
    tokens: &[u32],
    batch: usize,
    seq: usize,
    bias: Option<&'a BiasMatrix>,
    dropout: Option<DropoutKey>,
) -> Activations<'a> {
    let d = Dims {
        b: batch,
        t: seq,
        c: cfg.width,
        h: cfg.heads,
        hd: cfg.width / cfg.heads,
        v: cfg.vocab,
    };
    let (n, c) = (d.n(), d.c);
    let view = bias.map(|m| BiasView::leading(m, seq).expect("bias covers the sequence"));
    let mut masks = match dropout {
        Some(key) if cfg.dropout > 0.0 => Some(MaskSource {
            rng: stream(key.seed, Domain::Dropout, key.step),
            p: cfg.dropout,
        }),
        _ => None,
    };

    let mut x = vec![0.0; n * c];
    let wte = slice(params, layout.wte, d.v * c);
    let wpe = slice(params, layout.wpe, cfg.context * c);
    for (i, &tok) in tokens.iter().enumerate() {
        let t = i % seq;
        let row = &mut x[i * c..(i + 1) * c];
        let te = &wte[tok as usize * c..(tok as usize + 1) * c];
        let pe = &wpe[t * c..(t + 1) * c];
        for k in 0..c {
            row[k] = te[k] + pe[k];
        }
    }
    let emb_mask = masks.as_mut().map(|m| m.mask(n * c));
    apply_mask(&mut x, emb_mask.as_ref());

    let mut resid = vec![x];
    let mut blocks = Vec::with_capacity(cfg.layers);
    for off in &layout.blocks {
        let input = resid.last().expect("embedding output");
        let mut ln1 = vec![0.0; n * c];
        let mut ln1_mean = vec![0.0; n];
        let mut ln1_rstd = vec![0.0; n];
        layernorm_forward(
            &mut ln1,
            &mut ln1_mean,
            &mut ln1_rstd,
            input,
            slice(params, off.ln1_w, c),
            opt_slice(params, off.ln1_b, c),
            n,
            c,
        );
        let mut qkv = vec![0.0; n * 3 * c];
        matmul_forward(
            &mut qkv,
            &ln1,
            slice(params, off.qkv_w, c * 3 * c),
            opt_slice(params, off.qkv_b, 3 * c),
            n,
            c,
            3 * c,
        );

        let mut atty = vec![0.0; n * c];
        let mut heads = Vec::with_capacity(d.b * d.h);
        let mut attn_masks = masks.as_ref().map(|_| Vec::with_capacity(d.b * d.h));
        let mut head_out = vec![0.0; d.t * d.hd];
        for b in 0..d.b {
            for h in 0..d.h {
                let [q, k, v] = gather_head(&qkv, &d, b, h);
                let mask = masks.as_mut().map(|m| m.mask(d.t * d.t));
                let cache = head_forward(
                    &q,
                    &k,
                    &v,
                    d.t,
                    d.hd,
                    view,
                    mask.as_deref(),
                    &mut head_out,
                );
                for t in 0..d.t {
                    let dst = (b * d.t + t) * c + h * d.hd;
                    atty[dst..dst + d.hd].copy_from_slice(&head_out[t * d.hd..(t + 1) * d.hd]);
                }
                heads.push(cache);
                if let (Some(list), Some(m)) = (attn_masks.as_mut(), mask) {
                    list.push(m);
                }
            }
        }

        let mut proj = vec![0.0; n * c];
        matmul_forward(
            &mut proj,
            &atty,
            slice(params, off.proj_w, c * c),
            opt_slice(params, off.proj_b, c),
            n,
            c,
            c,
        );
        let proj_mask = masks.as_mut().map(|m| m.mask(n * c));
        let mut resid2 = proj;
        apply_mask(&mut resid2, proj_mask.as_ref());
        for (r, &i) in resid2.iter_mut().zip(input) {
            *r += i;
        }

        let mut ln2 = vec![0.0; n * c];
        let mut ln2_mean = vec![0.0; n];
        let mut ln2_rstd = vec![0.0; n];
        layernorm_forward(
            &mut ln2,
            &mut ln2_mean,
            &mut ln2_rstd,
            &resid2,
            slice(params, off.ln2_w, c),
            opt_slice(params, off.ln2_b, c),
            n,
            c,
        );
        let mut fch = vec![0.0; n * 4 * c];
        matmul_forward(
            &mut fch,
            &ln2,
            slice(params, off.fc_w, c * 4 * c),
            opt_slice(params, off.fc_b, 4 * c),
            n,
            c,
            4 * c,
        );
        let mut fch_gelu = vec![0.0; n * 4 * c];
        gelu_forward(&mut fch_gelu, &fch);
        let mut fcproj = vec![0.0; n * c];
        matmul_forward(
            &mut fcproj,
            &fch_gelu,
            slice(params, off.fcproj_w, 4 * c * c),
            opt_slice(params, off.fcproj_b, c),
            n,
            4 * c,
            c,
        );
        let fcproj_mask = masks.as_mut().map(|m| m.mask(n * c));
        let mut out = fcproj;
        apply_mask(&mut out, fcproj_mask.as_ref());
        for (o, &r) in out.iter_mut().zip(&resid2) {
            *o += r;
        }

        blocks.push(BlockActs {
            ln1,
            ln1_mean,
            ln1_rstd,
            qkv,
            atty,
            heads,
            attn_masks,
            proj_mask,
            resid2,
            ln2,
            ln2_mean,
            ln2_rstd,
            fch,
            fch_gelu,
            fcproj_mask,
        });
        resid.push(out);
    }

    let last = resid.last().expect("at least the embedding");
    let mut lnf = vec![0.0; n * c];
    let mut lnf_mean = vec![0.0; n];
    let mut lnf_rstd = vec![0.0; n];
    layernorm_forward(
        &mut lnf,
        &mut lnf_mean,
        &mut lnf_rstd,
        last,
        slice(params, layout.lnf_w, c),
        opt_slice(params, layout.lnf_b, c),
        n,
        c,
    );
    let head = slice(params, layout.lm_head, d.v * c);
    let mut logits = vec![0.0; n * d.v];
    for i in 0..n {
        let x = &lnf[i * c..(i + 1) * c];
        let row = &mut logits[i * d.v..(i + 1) * d.v];
        for (vv, z) in row.iter_mut().enumerate() {
            *z = dot(x, &head[vv * c..(vv + 1) * c]);
        }
    }

    Activations {
        dims: d,
        bias,
        tokens: tokens.to_vec(),
        emb_mask,
        resid,
        blocks,
        lnf,
        lnf_mean,
        lnf_rstd,
        logits,
    }
}

/// Mean cross-entropy in nats over all positions, and its gradient with
/// respect to the logits.
pub(crate) fn loss_and_dlogits(logits: &[f64], targets: &[u32], vocab: usize) -> (f64, Vec<f64>) {
    let n = targets.len();
    let mut dlogits = logits.to_vec();
    let mut total = 0.0;
    for (i, &tgt) in targets.iter().enumerate() {
        let row = &mut dlogits[i * vocab..(i + 1) * vocab];
        log_softmax_in_place(row);
        total -= row[tgt as usize];
        for z in row.iter_mut() {
            *z = z.exp() / n as f64;
        }
        row[tgt as usize] -= 1.0 / n as f64;
    }
    (total / n as f64, dlogits)
}

/// Backpropagates `dlogits` through the network; returns the gradient in
/// flat parameter layout.
pub(crate) fn backward(
    layout: &ParamLayout,
    params: &[f64],
    acts: &Activations<'_>,
    dlogits: &[f64],
) -> Vec<f64> {
    let d = acts.dims;
    let (n, c) = (d.n(), d.c);
    let mut grads = vec![0.0; layout.total()];
    let bias = acts
        .bias
        .map(|m| BiasView::leading(m, d.t).expect("bias covers the sequence"));

    let head = slice(params, layout.lm_head, d.v * c);
    let mut dlnf = vec![0.0; n * c];
    for i in 0..n {
        let g = &dlogits[i * d.v..(i + 1) * d.v];
        let dx = &mut dlnf[i * c..(i + 1) * c];
        for (vv, &gz) in g.iter().enumerate() {
            if gz != 0.0 {
                axpy(dx, gz, &head[vv * c..(vv + 1) * c]);
            }
        }
    }
    {
        let dhead = &mut grads[layout.lm_head..layout.lm_head + d.v * c];
        for i in 0..n {
            let x = &acts.lnf[i * c..(i + 1) * c];
            let g = &dlogits[i * d.v..(i + 1) * d.v];
            for (vv, &gz) in g.iter().enumerate() {
                axpy(&mut dhead[vv * c..(vv + 1) * c], gz, x);
            }
        }
    }

    let mut dresid = vec![0.0; n * c];
    {
        let (dw, db) = split_weight_bias(&mut grads, layout.lnf_w, c, layout.lnf_b, c);
        layernorm_backward(
            &mut dresid,
            dw,
            db,
            &dlnf,
            acts.resid.last().expect("final residual"),
            slice(params, layout.lnf_w, c),
            &acts.lnf_mean,
            &acts.lnf_rstd,
            n,
            c,
        );
    }

    for (l, off) in layout.blocks.iter().enumerate().rev() {
        let a = &acts.blocks[l];
        let input = &acts.resid[l];

        // MLP branch.
        let mut dfcproj = dresid.clone();
        apply_mask(&mut dfcproj, a.fcproj_mask.as_ref());
        let mut dfch_gelu = vec![0.0; n * 4 * c];
        {
            let (dw, db) = split_weight_bias(&mut grads, off.fcproj_w, 4 * c * c, off.fcproj_b, c);
            matmul_backward(
                &mut dfch_gelu,
                dw,
                db,
                &dfcproj,
                &a.fch_gelu,
                slice(params, off.fcproj_w, 4 * c * c),
                n,
                4 * c,
                c,
            );
        }
        let mut dfch = vec![0.0; n * 4 * c];
        gelu_backward(&mut dfch, &a.fch, &dfch_gelu);
        let mut dln2 = vec![0.0; n * c];
        {
            let (dw, db) = split_weight_bias(&mut grads, off.fc_w, c * 4 * c, off.fc_b, 4 * c);
            matmul_backward(
                &mut dln2,
                dw,
                db,
                &dfch,
                &a.ln2,
                slice(params, off.fc_w, c * 4 * c),
                n,
                c,
                4 * c,
            );
        }
        let mut dresid2 = dresid;
        {
            let (dw, db) = split_weight_bias(&mut grads, off.ln2_w, c, off.ln2_b, c);
            layernorm_backward(
                &mut dresid2,
                dw,
                db,
                &dln2,
                &a.resid2,
                slice(params, off.ln2_w, c),
                &a.ln2_mean,
                &a.ln2_rstd,
                n,
                c,
            );
        }

        // Attention branch.
        let mut dproj = dresid2.clone();
        apply_mask(&mut dproj, a.proj_mask.as_ref());
        let mut datty = vec![0.0; n * c];
        {
            let (dw, db) = split_weight_bias(&mut grads, off.proj_w, c * c, off.proj_b, c);
            matmul_backward(
                &mut datty,
                dw,
                db,
                &dproj,
                &a.atty,
                slice(params, off.proj_w, c * c),
                n,
                c,
                c,
            );
        }
        let mut dqkv = vec![0.0; n * 3 * c];
        for b in 0..d.b {
            for h in 0..d.h {
                let idx = b * d.h + h;
                let [q, k, v] = gather_head(&a.qkv, &d, b, h);
                let mut dout = vec![0.0; d.t * d.hd];
                for t in 0..d.t {
                    let src = (b * d.t + t) * c + h * d.hd;
                    dout[t * d.hd..(t + 1) * d.hd].copy_from_slice(&datty[src..src + d.hd]);
                }
                let mut dq = vec![0.0; d.t * d.hd];
                let mut dk = vec![0.0; d.t * d.hd];
                let mut dv = vec![0.0; d.t * d.hd];
                head_backward(
                    &q,
                    &k,
                    &v,
                    d.t,
                    d.hd,
                    bias,
                    a.attn_masks.as_ref().map(|m| m[idx].as_slice()),
                    &a.heads[idx],
                    &dout,
                    &mut dq,
                    &mut dk,
                    &mut dv,
                );
                for t in 0..d.t {
                    let row = &mut dqkv[(b * d.t + t) * 3 * c..(b * d.t + t + 1) * 3 * c];
                    for (part, src) in [&dq, &dk, &dv].into_iter().enumerate() {
                        let dst = &mut row[part * c + h * d.hd..part * c + (h + 1) * d.hd];
                        dst.copy_from_slice(&src[t * d.hd..(t + 1) * d.hd]);
                    }
                }
            }
        }
        let mut dln1 = vec![0.0; n * c];
        {
            let (dw, db) = split_weight_bias(&mut grads, off.qkv_w, c * 3 * c, off.qkv_b, 3 * c);
            matmul_backward(
                &mut dln1,
                dw,
                db,
                &dqkv,
                &a.ln1,
                slice(params, off.qkv_w, c * 3 * c),
                n,
                c,
                3 * c,
            );
        }
        let mut dinput = dresid2;
        {
            let (dw, db) = split_weight_bias(&mut grads, off.ln1_w, c, off.ln1_b, c);
            layernorm_backward(
                &mut dinput,
                dw,
                db,
                &dln1,
                input,
                slice(params, off.ln1_w, c),
                &a.ln1_mean,
                &a.ln1_rstd,
                n,
                c,
            );
        }
        dresid = dinput;
    }

    apply_mask(&mut dresid, acts.emb_mask.as_ref());
    for (i, &tok) in acts.tokens.iter().enumerate() {
        let t = i % d.t;
        let g = &dresid[i * c..(i + 1) * c];
        let te = layout.wte + tok as usize * c;
        axpy(&mut grads[te..te + c], 1.0, g);
        let pe = layout.wpe + t * c;
        axpy(&mut grads[pe..pe + c], 1.0, g);
    }
    grads
}

fn split_weight_bias(
    grads: &mut [f64],
    w_off: usize,
    w_len: usize,
    b_off: Option<usize>,
    b_len: usize,
) -> (&mut [f64], Option<&mut [f64]>) {
    match b_off {
        Some(b) => {
            debug_assert!(b >= w_off + w_len);
            let (head, tail) = grads.split_at_mut(b);
            (&mut head[w_off..w_off + w_len], Some(&mut tail[..b_len]))
        }
        None => (&mut grads[w_off..w_off + w_len], None),
    }
}
