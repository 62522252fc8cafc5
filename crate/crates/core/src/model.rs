//! Fused classifier: a semantic branch (CNN or patch transformer) and a
//! keypoint-graph branch, concatenated into a 2d vector and classified by a
//! two-layer MLP head. Training, evaluation and the gradient contract used
//! by the attacks live here.
//!
//! Gradient contract: parameter gradients flow through both branches, but
//! pixel gradients flow only through the semantic branch. Keypoint
//! extraction is non-differentiable, so the graph branch consumes pixel
//! *values* (never the pixel tensor) and is recomputed from the current
//! pixels on every call; within one differentiation it acts as a constant.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::backbone::{
    cnn_forward, init_cnn_params, init_vit_params, pixels_tensor, vit_forward, BackboneKind,
    CnnConfig, VitConfig,
};
use crate::data::cache::GraphCache;
use crate::data::checkpoint::HistoryRow;
use crate::data::digest::Fnv1a;
use crate::data::Dataset;
use crate::gat::{encode as gat_encode, init_gat_params, GatConfig};
use crate::graph::{self, GraphError, KeypointGraph, NormalizationStats};
use crate::image::ImageTensor;
use crate::sift::{self, SiftConfig};
use crate::tensor::{xavier_values, NamedTensors, ParamSet, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("dataset split is empty")]
    EmptySplit,
}

/// Everything that determines the model function: branch architecture,
/// head widths, class count and the keypoint pipeline configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedModelConfig {
    pub backbone: BackboneKind,
    /// `false` gives the semantic-only baseline: the graph embedding is
    /// replaced by zeros and the head keeps its 2d input width, so baseline
    /// and fused checkpoints stay head-compatible.
    pub use_graph_branch: bool,
    pub embed_dim: usize,
    pub mlp_hidden: usize,
    pub n_classes: usize,
    pub k: usize,
    pub sift: SiftConfig,
    pub cnn: CnnConfig,
    pub vit: VitConfig,
    pub gat: GatConfig,
}

impl FusedModelConfig {
    pub fn new(backbone: BackboneKind, use_graph_branch: bool, n_classes: usize) -> Self {
        let cfg = Self {
            backbone,
            use_graph_branch,
            embed_dim: 128,
            mlp_hidden: 128,
            n_classes,
            k: graph::DEFAULT_K,
            sift: SiftConfig::default(),
            cnn: CnnConfig::default(),
            vit: VitConfig::default(),
            gat: GatConfig::default(),
        };
        cfg.validate();
        cfg
    }

    pub fn validate(&self) {
        assert!(self.n_classes >= 2);
        assert_eq!(self.embed_dim, self.gat.output_dim, "branch widths must agree");
        assert_eq!(self.embed_dim, self.cnn.embed_dim);
        assert_eq!(self.embed_dim, self.vit.out_dim);
    }

    pub fn variant_name(&self) -> &'static str {
        if self.use_graph_branch {
            "fused"
        } else {
            "baseline"
        }
    }

    pub fn input_size(&self) -> usize {
        match self.backbone {
            BackboneKind::Cnn => self.cnn.input_size,
            BackboneKind::Vit => self.vit.input_size,
        }
    }

    /// Digest over every field that affects checkpoint compatibility.
    pub fn digest(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write_str(self.backbone.as_str());
        h.write_u64(self.use_graph_branch as u64);
        for v in [self.embed_dim, self.mlp_hidden, self.n_classes, self.k] {
            h.write_u64(v as u64);
        }
        h.write_u64(self.sift.digest());
        for v in [self.cnn.input_size, self.cnn.embed_dim] {
            h.write_u64(v as u64);
        }
        for v in self.cnn.stage_channels {
            h.write_u64(v as u64);
        }
        for v in [
            self.vit.input_size,
            self.vit.patch,
            self.vit.embed_dim,
            self.vit.layers,
            self.vit.heads,
            self.vit.mlp_ratio,
            self.vit.out_dim,
        ] {
            h.write_u64(v as u64);
        }
        for v in [
            self.gat.n_layers,
            self.gat.heads,
            self.gat.head_dim,
            self.gat.input_dim,
            self.gat.output_dim,
        ] {
            h.write_u64(v as u64);
        }
        h.write_f32(self.gat.attention_slope);
        h.finish()
    }
}

/// Classifier output: raw logits, argmax class (lowest index wins ties) and
/// softmax probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f32>,
    pub predicted: usize,
    pub probabilities: Vec<f32>,
}

impl Prediction {
    fn from_logits(logits: Vec<f32>) -> Self {
        let predicted = logits
            .iter()
            .enumerate()
            .fold((0usize, f32::NEG_INFINITY), |best, (i, &v)| {
                if v > best.1 {
                    (i, v)
                } else {
                    best
                }
            })
            .0;
        let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f32> = logits.iter().map(|v| (v - max).exp()).collect();
        let total: f32 = exps.iter().sum();
        let probabilities = exps.iter().map(|v| v / total).collect();
        Prediction { logits, predicted, probabilities }
    }
}

/// Fresh parameters for the configured model: head, semantic branch, and
/// (for fused models) the graph encoder.
pub fn init_params(cfg: &FusedModelConfig, seed: u64) -> ParamSet {
    cfg.validate();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let (d, h, c) = (cfg.embed_dim, cfg.mlp_hidden, cfg.n_classes);
    params.insert("head.w1", &[2 * d, h], xavier_values(2 * d * h, 2 * d, h, &mut rng));
    params.insert("head.b1", &[h], vec![0.0; h]);
    params.insert("head.w2", &[h, c], xavier_values(h * c, h, c, &mut rng));
    params.insert("head.b2", &[c], vec![0.0; c]);
    match cfg.backbone {
        BackboneKind::Cnn => init_cnn_params(&mut params, &cfg.cnn, &mut rng),
        BackboneKind::Vit => init_vit_params(&mut params, &cfg.vit, &mut rng),
    }
    if cfg.use_graph_branch {
        init_gat_params(&mut params, &cfg.gat, &mut rng);
    }
    params
}

/// Logits `[1, C]` from a pixel tensor. The graph branch, when enabled,
/// reads `img` (plain values) — pass `graph` to reuse a precomputed graph
/// for the same pixels. This is the single forward path used by training,
/// evaluation and attacks.
pub fn forward_logits(
    img: &ImageTensor,
    pixels: &Tensor,
    params: &ParamSet,
    cfg: &FusedModelConfig,
    stats: &NormalizationStats,
    graph: Option<&KeypointGraph>,
) -> Result<Tensor, ModelError> {
    debug_assert_eq!(pixels.len(), img.data().len(), "pixel tensor must mirror the image");
    let z_sem = match cfg.backbone {
        BackboneKind::Cnn => cnn_forward(pixels, params, &cfg.cnn)?,
        BackboneKind::Vit => vit_forward(pixels, params, &cfg.vit)?,
    };
    let z_graph = if cfg.use_graph_branch {
        match graph {
            Some(g) => gat_encode(g, params, &cfg.gat)?,
            None => {
                let built = graph::build_graph(img, &cfg.sift, stats, cfg.k)?;
                gat_encode(&built, params, &cfg.gat)?
            }
        }
    } else {
        Tensor::zeros(&[cfg.embed_dim])
    };
    let fused = z_sem.concat(&z_graph, 0)?.reshape(&[1, 2 * cfg.embed_dim])?;
    let hidden = fused
        .matmul(&params.get("head.w1"))?
        .add_row_bias(&params.get("head.b1"))?
        .relu();
    let logits = hidden
        .matmul(&params.get("head.w2"))?
        .add_row_bias(&params.get("head.b2"))?;
    Ok(logits)
}

/// Full prediction from an image (pixels enter as constants).
pub fn forward(
    img: &ImageTensor,
    params: &ParamSet,
    cfg: &FusedModelConfig,
    stats: &NormalizationStats,
) -> Result<Prediction, ModelError> {
    let pixels = pixels_tensor(img, false)?;
    let logits = forward_logits(img, &pixels, params, cfg, stats, None)?;
    Ok(Prediction::from_logits(logits.values().to_vec()))
}

/// Mean cross-entropy over a batch; backward populates every parameter
/// gradient. `graphs`, when given, must align with the batch.
pub fn batch_loss(
    batch: &[(ImageTensor, usize)],
    params: &ParamSet,
    cfg: &FusedModelConfig,
    stats: &NormalizationStats,
    graphs: Option<&[Arc<KeypointGraph>]>,
) -> Result<Tensor, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut stacked: Option<Tensor> = None;
    let mut labels = Vec::with_capacity(batch.len());
    for (i, (img, label)) in batch.iter().enumerate() {
        let pixels = pixels_tensor(img, false)?;
        let graph = graphs.map(|g| &*g[i]);
        let logits = forward_logits(img, &pixels, params, cfg, stats, graph)?;
        labels.push(*label);
        stacked = Some(match stacked {
            None => logits,
            Some(acc) => acc.concat(&logits, 0)?,
        });
    }
    Ok(stacked.expect("non-empty batch").softmax_cross_entropy(&labels)?)
}

/// Adam with bias correction; operates on detached named tensors in
/// lexicographic order, so updates are deterministic.
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: u64,
    m: BTreeMap<String, Vec<f32>>,
    v: BTreeMap<String, Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f32, beta1: f32, beta2: f32) -> Self {
        Adam { lr, beta1, beta2, eps: 1e-8, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn step(&mut self, params: &mut NamedTensors, grads: &BTreeMap<String, Vec<f32>>) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, (_, values)) in params.iter_mut() {
            let Some(grad) = grads.get(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; values.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; values.len()]);
            for i in 0..values.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHyper {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub flip_augment: bool,
    /// Stop once validation accuracy reaches this level.
    pub early_stop_val_acc: Option<f32>,
    /// Emit `epoch <n> loss <f> val_acc <f>` lines.
    pub log: bool,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 32,
            epochs: 15,
            seed: 0,
            flip_augment: true,
            early_stop_val_acc: None,
            log: true,
        }
    }
}

pub struct TrainOutcome {
    pub params: ParamSet,
    pub stats: NormalizationStats,
    pub history: Vec<HistoryRow>,
    pub cache: GraphCache,
}

/// Placeholder stats for models that never normalize coordinates.
fn neutral_stats(size: usize) -> NormalizationStats {
    NormalizationStats {
        mu_x: size as f32 / 2.0,
        mu_y: size as f32 / 2.0,
        sigma_x: size as f32 / 4.0,
        sigma_y: size as f32 / 4.0,
        eps: NormalizationStats::DEFAULT_EPS,
    }
}

/// Seeded end-to-end training. Normalization stats come from the training
/// split only; keypoint graphs of clean images are cached (optionally on
/// disk under `cache_root`) after their first extraction. Deterministic for
/// a fixed seed regardless of thread count: parallel work is collected in
/// index order and reduced sequentially.
pub fn train(
    dataset: &Dataset,
    cfg: &FusedModelConfig,
    hyper: &TrainHyper,
    cache_root: Option<&Path>,
) -> Result<TrainOutcome, ModelError> {
    if dataset.train.is_empty() {
        return Err(ModelError::EmptySplit);
    }
    let stats = if cfg.use_graph_branch {
        let keypoint_sets: Vec<_> = dataset
            .train
            .par_iter()
            .map(|(img, _)| sift::extract(img, &cfg.sift))
            .collect::<Result<Vec<_>, _>>()
            .map_err(GraphError::from)?;
        match graph::compute_normalization_stats(keypoint_sets.iter().map(|s| s.as_slice())) {
            Ok(stats) => stats,
            // A corpus of keypoint-free images still trains via fallback nodes.
            Err(GraphError::EmptyCorpus) => neutral_stats(cfg.input_size()),
            Err(e) => return Err(e.into()),
        }
    } else {
        neutral_stats(cfg.input_size())
    };
    let cache = GraphCache::new(cache_root, &cfg.sift, &stats, cfg.k);

    let mut master = init_params(cfg, hyper.seed).snapshot();
    let mut adam = Adam::new(hyper.lr, hyper.beta1, hyper.beta2);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut history = Vec::new();

    let n = dataset.train.len();
    let mut indices: Vec<usize> = (0..n).collect();
    for epoch in 1..=hyper.epochs {
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for chunk in indices.chunks(hyper.batch_size.max(1)) {
            // Assemble the batch sequentially so augmentation draws stay
            // deterministic, then fan the heavy work out.
            let items: Vec<(ImageTensor, usize)> = chunk
                .iter()
                .map(|&i| {
                    let (img, label) = &dataset.train[i];
                    let flip = hyper.flip_augment && rng.gen_bool(0.5);
                    (if flip { img.flip_horizontal() } else { img.clone() }, *label)
                })
                .collect();
            let graphs: Option<Vec<Arc<KeypointGraph>>> = if cfg.use_graph_branch {
                Some(
                    items
                        .par_iter()
                        .map(|(img, _)| cache.get_or_build(img, &cfg.sift, &stats, cfg.k))
                        .collect::<Result<Vec<_>, _>>()?,
                )
            } else {
                None
            };

            let results: Vec<(f32, BTreeMap<String, Vec<f32>>)> = items
                .par_iter()
                .enumerate()
                .map(|(i, item)| -> Result<_, ModelError> {
                    let local = ParamSet::from_snapshot(&master);
                    let sample = std::slice::from_ref(item);
                    let graph_slice = graphs.as_ref().map(|g| &g[i..i + 1]);
                    let loss = batch_loss(sample, &local, cfg, &stats, graph_slice)?;
                    loss.backward()?;
                    Ok((loss.item(), local.grads()))
                })
                .collect::<Result<Vec<_>, _>>()?;

            let scale = 1.0 / results.len() as f32;
            let mut total: BTreeMap<String, Vec<f32>> = BTreeMap::new();
            for (loss, grads) in results {
                loss_sum += loss as f64;
                for (name, g) in grads {
                    match total.get_mut(&name) {
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(&g) {
                                *a += *b;
                            }
                        }
                        None => {
                            total.insert(name, g);
                        }
                    }
                }
            }
            for g in total.values_mut() {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            }
            adam.step(&mut master, &total);
        }

        let train_loss = (loss_sum / n as f64) as f32;
        let val_acc = evaluate_snapshot(&dataset.test, &master, cfg, &stats, Some(&cache))? as f32;
        if hyper.log {
            println!("epoch {epoch} loss {train_loss} val_acc {val_acc}");
        }
        history.push(HistoryRow { epoch: epoch as u32, loss: train_loss, val_acc });
        if hyper.early_stop_val_acc.is_some_and(|t| val_acc >= t) {
            break;
        }
    }

    Ok(TrainOutcome { params: ParamSet::from_snapshot(&master), stats, history, cache })
}

/// Top-1 accuracy over a split; parallel over chunks with read-only
/// parameter snapshots, deterministic by construction.
pub fn evaluate(
    split: &[(ImageTensor, usize)],
    params: &ParamSet,
    cfg: &FusedModelConfig,
    stats: &NormalizationStats,
    cache: Option<&GraphCache>,
) -> Result<f64, ModelError> {
    evaluate_snapshot(split, &params.snapshot(), cfg, stats, cache)
}

fn evaluate_snapshot(
    split: &[(ImageTensor, usize)],
    snapshot: &NamedTensors,
    cfg: &FusedModelConfig,
    stats: &NormalizationStats,
    cache: Option<&GraphCache>,
) -> Result<f64, ModelError> {
    if split.is_empty() {
        return Err(ModelError::EmptySplit);
    }
    let correct: usize = split
        .par_chunks(32)
        .map(|chunk| -> Result<usize, ModelError> {
            let local = ParamSet::from_snapshot(snapshot);
            let mut hits = 0usize;
            for (img, label) in chunk {
                let graph = match (cfg.use_graph_branch, cache) {
                    (true, Some(c)) => Some(c.get_or_build(img, &cfg.sift, stats, cfg.k)?),
                    _ => None,
                };
                let pixels = pixels_tensor(img, false)?;
                let logits =
                    forward_logits(img, &pixels, &local, cfg, stats, graph.as_deref())?;
                let pred = Prediction::from_logits(logits.values().to_vec());
                if pred.predicted == *label {
                    hits += 1;
                }
            }
            Ok(hits)
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .sum();
    Ok(correct as f64 / split.len() as f64)
}
