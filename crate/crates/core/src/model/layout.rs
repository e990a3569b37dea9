//! Named parameter tensors and their offsets in the flat parameter vector.

use super::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    /// Normal with the base standard deviation.
    Normal,
    /// Normal scaled down for projections feeding the residual stream.
    ResidualNormal,
    Ones,
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub(crate) init: Init,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Matrices take weight decay; vectors (norm scales, biases) do not.
    pub fn decays(&self) -> bool {
        self.shape.len() >= 2
    }
}

/// Offsets of one transformer block's tensors.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockOffsets {
    pub ln1_w: usize,
    pub ln1_b: Option<usize>,
    pub qkv_w: usize,
    pub qkv_b: Option<usize>,
    pub proj_w: usize,
    pub proj_b: Option<usize>,
    pub ln2_w: usize,
    pub ln2_b: Option<usize>,
    pub fc_w: usize,
    pub fc_b: Option<usize>,
    pub fcproj_w: usize,
    pub fcproj_b: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ParamLayout {
    tensors: Vec<TensorSpec>,
    total: usize,
    pub(crate) wte: usize,
    pub(crate) wpe: usize,
    pub(crate) blocks: Vec<BlockOffsets>,
    pub(crate) lnf_w: usize,
    pub(crate) lnf_b: Option<usize>,
    /// Offset of the output projection; equals `wte` when tied.
    pub(crate) lm_head: usize,
}

struct Builder {
    tensors: Vec<TensorSpec>,
    total: usize,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        let offset = self.total;
        self.total += shape.iter().product::<usize>();
        self.tensors.push(TensorSpec {
            name,
            shape,
            offset,
            init,
        });
        offset
    }

    fn maybe(&mut self, on: bool, name: String, shape: Vec<usize>) -> Option<usize> {
        on.then(|| self.push(name, shape, Init::Zeros))
    }
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (c, v, b) = (cfg.width, cfg.vocab, cfg.use_biases);
        let mut p = Builder {
            tensors: Vec::new(),
            total: 0,
        };
        let wte = p.push("wte".into(), vec![v, c], Init::Normal);
        let wpe = p.push("wpe".into(), vec![cfg.context, c], Init::Normal);
        let mut blocks = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let n = |s: &str| format!("h.{l}.{s}");
            let ln1_w = p.push(n("ln_1.weight"), vec![c], Init::Ones);
            let ln1_b = p.maybe(b, n("ln_1.bias"), vec![c]);
            let qkv_w = p.push(n("attn.c_attn.weight"), vec![c, 3 * c], Init::Normal);
            let qkv_b = p.maybe(b, n("attn.c_attn.bias"), vec![3 * c]);
            let proj_w = p.push(n("attn.c_proj.weight"), vec![c, c], Init::ResidualNormal);
            let proj_b = p.maybe(b, n("attn.c_proj.bias"), vec![c]);
            let ln2_w = p.push(n("ln_2.weight"), vec![c], Init::Ones);
            let ln2_b = p.maybe(b, n("ln_2.bias"), vec![c]);
            let fc_w = p.push(n("mlp.c_fc.weight"), vec![c, 4 * c], Init::Normal);
            let fc_b = p.maybe(b, n("mlp.c_fc.bias"), vec![4 * c]);
            let fcproj_w = p.push(n("mlp.c_proj.weight"), vec![4 * c, c], Init::ResidualNormal);
            let fcproj_b = p.maybe(b, n("mlp.c_proj.bias"), vec![c]);
            blocks.push(BlockOffsets {
                ln1_w,
                ln1_b,
                qkv_w,
                qkv_b,
                proj_w,
                proj_b,
                ln2_w,
                ln2_b,
                fc_w,
                fc_b,
                fcproj_w,
                fcproj_b,
            });
        }
        let lnf_w = p.push("ln_f.weight".into(), vec![c], Init::Ones);
        let lnf_b = p.maybe(b, "ln_f.bias".into(), vec![c]);
        let lm_head = if cfg.tie_embeddings {
            wte
        } else {
            p.push("lm_head.weight".into(), vec![v, c], Init::Normal)
        };
        Self {
            tensors: p.tensors,
            total: p.total,
            wte,
            wpe,
            blocks,
            lnf_w,
            lnf_b,
            lm_head,
        }
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Per-element weight-decay mask in flat order.
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.total];
        for t in &self.tensors {
            if t.decays() {
                mask[t.offset..t.offset + t.numel()].fill(true);
            }
        }
        mask
    }
}
