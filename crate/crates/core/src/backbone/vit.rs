//! Tiny patch transformer: linear patch embedding, learned positional
//! encodings, a CLS token, pre-norm blocks (layer norm, multi-head
//! self-attention, residual; layer norm, two-layer ReLU MLP, residual),
//! final layer norm, and a linear projection of the CLS row.

use rand::Rng;

use crate::tensor::{uniform_values, xavier_values, ParamSet, Tensor, TensorResult};

#[derive(Debug, Clone, PartialEq)]
pub struct VitConfig {
    pub input_size: usize,
    pub patch: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub out_dim: usize,
}

impl Default for VitConfig {
    fn default() -> Self {
        Self { input_size: 64, patch: 8, embed_dim: 64, layers: 2, heads: 4, mlp_ratio: 2, out_dim: 128 }
    }
}

impl VitConfig {
    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn mlp_dim(&self) -> usize {
        self.embed_dim * self.mlp_ratio
    }
}

pub fn patch_count(cfg: &VitConfig) -> usize {
    (cfg.input_size / cfg.patch) * (cfg.input_size / cfg.patch)
}

pub fn init_vit_params<R: Rng>(params: &mut ParamSet, cfg: &VitConfig, rng: &mut R) {
    assert_eq!(cfg.input_size % cfg.patch, 0, "input size must be divisible by patch size");
    assert_eq!(cfg.embed_dim % cfg.heads, 0, "embed dim must split across heads");
    let d = cfg.embed_dim;
    let patch_dim = cfg.patch * cfg.patch * 3;
    let n_tokens = patch_count(cfg) + 1;

    params.insert("vit.patch.w", &[patch_dim, d], xavier_values(patch_dim * d, patch_dim, d, rng));
    params.insert("vit.patch.b", &[d], vec![0.0; d]);
    params.insert("vit.cls", &[1, d], uniform_values(d, -0.02, 0.02, rng));
    params.insert("vit.pos", &[n_tokens, d], uniform_values(n_tokens * d, -0.02, 0.02, rng));
    for i in 0..cfg.layers {
        let p = |s: &str| format!("vit.block{i}.{s}");
        params.insert(&p("ln1.g"), &[d], vec![1.0; d]);
        params.insert(&p("ln1.b"), &[d], vec![0.0; d]);
        for w in ["wq", "wk", "wv", "wo"] {
            params.insert(&p(w), &[d, d], xavier_values(d * d, d, d, rng));
        }
        for b in ["bq", "bk", "bv", "bo"] {
            params.insert(&p(b), &[d], vec![0.0; d]);
        }
        params.insert(&p("ln2.g"), &[d], vec![1.0; d]);
        params.insert(&p("ln2.b"), &[d], vec![0.0; d]);
        let m = cfg.mlp_dim();
        params.insert(&p("mlp.w1"), &[d, m], xavier_values(d * m, d, m, rng));
        params.insert(&p("mlp.b1"), &[m], vec![0.0; m]);
        params.insert(&p("mlp.w2"), &[m, d], xavier_values(m * d, m, d, rng));
        params.insert(&p("mlp.b2"), &[d], vec![0.0; d]);
    }
    params.insert("vit.ln.g", &[d], vec![1.0; d]);
    params.insert("vit.ln.b", &[d], vec![0.0; d]);
    params.insert("vit.head.w", &[d, cfg.out_dim], xavier_values(d * cfg.out_dim, d, cfg.out_dim, rng));
    params.insert("vit.head.b", &[cfg.out_dim], vec![0.0; cfg.out_dim]);
}

/// `[3, S, S]` pixels -> `[out_dim]` CLS embedding.
pub fn vit_forward(pixels: &Tensor, params: &ParamSet, cfg: &VitConfig) -> TensorResult<Tensor> {
    Ok(vit_forward_with_attention(pixels, params, cfg)?.0)
}

/// Forward pass that also returns each block's per-head attention matrices
/// (softmax rows over tokens), for diagnostics.
pub fn vit_forward_with_attention(
    pixels: &Tensor,
    params: &ParamSet,
    cfg: &VitConfig,
) -> TensorResult<(Tensor, Vec<Tensor>)> {
    let d = cfg.embed_dim;
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f32).sqrt();

    let patches = pixels.patchify(cfg.patch)?;
    let embedded = patches
        .matmul(&params.get("vit.patch.w"))?
        .add_row_bias(&params.get("vit.patch.b"))?;
    let tokens = params.get("vit.cls").concat(&embedded, 0)?;
    let mut x = tokens.add(&params.get("vit.pos"))?;
    let n_tokens = x.shape()[0];

    let mut attentions = Vec::new();
    for i in 0..cfg.layers {
        let p = |s: &str| format!("vit.block{i}.{s}");
        let normed = x.layer_norm(&params.get(&p("ln1.g")), &params.get(&p("ln1.b")))?;
        let q = normed.matmul(&params.get(&p("wq")))?.add_row_bias(&params.get(&p("bq")))?;
        let k = normed.matmul(&params.get(&p("wk")))?.add_row_bias(&params.get(&p("bk")))?;
        let v = normed.matmul(&params.get(&p("wv")))?.add_row_bias(&params.get(&p("bv")))?;
        let mut context: Option<Tensor> = None;
        for h in 0..cfg.heads {
            let qh = q.slice_cols(h * hd, hd)?;
            let kh = k.slice_cols(h * hd, hd)?;
            let vh = v.slice_cols(h * hd, hd)?;
            let attn = qh.matmul(&kh.transpose()?)?.scale(scale).softmax_rows()?;
            attentions.push(attn.clone());
            let ctx = attn.matmul(&vh)?;
            context = Some(match context {
                None => ctx,
                Some(acc) => acc.concat(&ctx, 1)?,
            });
        }
        let context = context
            .expect("at least one head")
            .matmul(&params.get(&p("wo")))?
            .add_row_bias(&params.get(&p("bo")))?;
        x = x.add(&context)?;

        let normed2 = x.layer_norm(&params.get(&p("ln2.g")), &params.get(&p("ln2.b")))?;
        let hidden = normed2
            .matmul(&params.get(&p("mlp.w1")))?
            .add_row_bias(&params.get(&p("mlp.b1")))?
            .relu();
        let mlp_out =
            hidden.matmul(&params.get(&p("mlp.w2")))?.add_row_bias(&params.get(&p("mlp.b2")))?;
        x = x.add(&mlp_out)?;
    }

    let x = x.layer_norm(&params.get("vit.ln.g"), &params.get("vit.ln.b"))?;
    debug_assert_eq!(x.shape(), &[n_tokens, d]);
    let cls = x.gather_rows(&[0])?;
    let z = cls
        .matmul(&params.get("vit.head.w"))?
        .add_row_bias(&params.get("vit.head.b"))?
        .reshape(&[cfg.out_dim])?;
    Ok((z, attentions))
}
