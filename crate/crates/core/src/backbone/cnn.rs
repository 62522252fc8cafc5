//! Three conv blocks (3x3 conv, ReLU, 2x2 average downsample) followed by
//! global average pooling and a linear projection to the embedding width.

use rand::Rng;

use crate::tensor::{xavier_values, ParamSet, Tensor, TensorResult};

#[derive(Debug, Clone, PartialEq)]
pub struct CnnConfig {
    pub input_size: usize,
    pub stage_channels: [usize; 3],
    pub embed_dim: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self { input_size: 64, stage_channels: [32, 64, 128], embed_dim: 128 }
    }
}

pub fn init_cnn_params<R: Rng>(params: &mut ParamSet, cfg: &CnnConfig, rng: &mut R) {
    let mut in_ch = 3usize;
    for (i, &out_ch) in cfg.stage_channels.iter().enumerate() {
        let fan_in = in_ch * 9;
        params.insert(
            &format!("cnn.block{i}.w"),
            &[out_ch, in_ch, 3, 3],
            xavier_values(out_ch * in_ch * 9, fan_in, out_ch * 9, rng),
        );
        params.insert(&format!("cnn.block{i}.b"), &[out_ch], vec![0.0; out_ch]);
        in_ch = out_ch;
    }
    let last = *cfg.stage_channels.last().unwrap();
    params.insert(
        "cnn.head.w",
        &[last, cfg.embed_dim],
        xavier_values(last * cfg.embed_dim, last, cfg.embed_dim, rng),
    );
    params.insert("cnn.head.b", &[cfg.embed_dim], vec![0.0; cfg.embed_dim]);
}

/// `[3, S, S]` pixels -> `[embed_dim]` embedding.
pub fn cnn_forward(pixels: &Tensor, params: &ParamSet, cfg: &CnnConfig) -> TensorResult<Tensor> {
    let mut x = pixels.clone();
    for i in 0..cfg.stage_channels.len() {
        let w = params.get(&format!("cnn.block{i}.w"));
        let b = params.get(&format!("cnn.block{i}.b"));
        x = x.conv2d(&w, 1, 1)?.add_channel_bias(&b)?.relu().avg_pool2d(2)?;
    }
    let shape = x.shape().to_vec();
    let (c, spatial) = (shape[0], shape[1] * shape[2]);
    let pooled = x.reshape(&[c, spatial])?.reduce_mean(1)?;
    let head_w = params.get("cnn.head.w");
    let head_b = params.get("cnn.head.b");
    pooled
        .reshape(&[1, c])?
        .matmul(&head_w)?
        .add_row_bias(&head_b)?
        .reshape(&[cfg.embed_dim])
}
