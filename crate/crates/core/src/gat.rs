//! Multi-head graph attention encoder over keypoint graphs.
//!
//! Five stacked attention layers, each head projecting node features and
//! weighting incoming messages by softmax-normalized attention logits
//! `leaky_relu(a . [W h_dst || W h_src])`. Heads are concatenated, ReLU is
//! applied after concatenation on all but the final layer, and mean pooling
//! over nodes yields the graph embedding. Self-loops are added internally so
//! every neighborhood (including the single fallback node) is non-empty.

use rand::Rng;

use crate::graph::KeypointGraph;
use crate::tensor::{xavier_values, ParamSet, Tensor, TensorResult};

#[derive(Debug, Clone, PartialEq)]
pub struct GatConfig {
    pub n_layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub attention_slope: f32,
}

impl Default for GatConfig {
    fn default() -> Self {
        Self {
            n_layers: 5,
            heads: 4,
            head_dim: 32,
            input_dim: crate::graph::NODE_FEATURE_DIM,
            output_dim: 128,
            attention_slope: 0.2,
        }
    }
}

impl GatConfig {
    pub fn validate(&self) {
        assert_eq!(
            self.heads * self.head_dim,
            self.output_dim,
            "heads x head_dim must equal the layer output width"
        );
        assert!(self.n_layers >= 1);
    }

    fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.output_dim
        }
    }
}

fn weight_name(layer: usize, head: usize) -> String {
    format!("gat.layer{layer}.head{head}.w")
}

fn attn_name(layer: usize, head: usize) -> String {
    format!("gat.layer{layer}.head{head}.a")
}

/// Registers all encoder parameters: per layer and head a projection
/// `[in, head_dim]` and an attention vector `[2, head_dim]`.
pub fn init_gat_params<R: Rng>(params: &mut ParamSet, cfg: &GatConfig, rng: &mut R) {
    cfg.validate();
    for layer in 0..cfg.n_layers {
        let in_dim = cfg.layer_input_dim(layer);
        for head in 0..cfg.heads {
            params.insert(
                &weight_name(layer, head),
                &[in_dim, cfg.head_dim],
                xavier_values(in_dim * cfg.head_dim, in_dim, cfg.head_dim, rng),
            );
            params.insert(
                &attn_name(layer, head),
                &[2, cfg.head_dim],
                xavier_values(2 * cfg.head_dim, 2 * cfg.head_dim, 1, rng),
            );
        }
    }
}

/// Directed message endpoints including one self-loop per node:
/// (sources, destinations).
fn edge_endpoints(edges: &[(u32, u32)], n_nodes: usize) -> (Vec<usize>, Vec<usize>) {
    let mut src: Vec<usize> = edges.iter().map(|&(s, _)| s as usize).collect();
    let mut dst: Vec<usize> = edges.iter().map(|&(_, d)| d as usize).collect();
    src.extend(0..n_nodes);
    dst.extend(0..n_nodes);
    (src, dst)
}

/// One attention layer: per head, project, score incoming edges, normalize
/// per destination, aggregate, then concatenate heads. `activate` applies
/// the post-concatenation ReLU.
pub fn gat_layer_forward(
    h: &Tensor,
    edges: &[(u32, u32)],
    params: &ParamSet,
    cfg: &GatConfig,
    layer: usize,
    activate: bool,
) -> TensorResult<Tensor> {
    let n_nodes = h.shape()[0];
    let (src, dst) = edge_endpoints(edges, n_nodes);
    let mut heads: Option<Tensor> = None;
    for head in 0..cfg.heads {
        let w = params.get(&weight_name(layer, head));
        let a = params.get(&attn_name(layer, head));
        let hw = h.matmul(&w)?;
        // Logit of edge (src -> dst): a[0] . (W h_dst) + a[1] . (W h_src).
        let a_dst = a.gather_rows(&[0])?.transpose()?;
        let a_src = a.gather_rows(&[1])?.transpose()?;
        let s_dst = hw.matmul(&a_dst)?;
        let s_src = hw.matmul(&a_src)?;
        let logits = s_dst
            .gather_rows(&dst)?
            .add(&s_src.gather_rows(&src)?)?
            .reshape(&[src.len()])?
            .leaky_relu(cfg.attention_slope);
        let alpha = logits.segment_softmax(&dst)?;
        let messages = hw.gather_rows(&src)?.scale_rows(&alpha)?;
        let aggregated = messages.segment_sum(&dst, n_nodes)?;
        heads = Some(match heads {
            None => aggregated,
            Some(acc) => acc.concat(&aggregated, 1)?,
        });
    }
    let out = heads.expect("at least one head");
    Ok(if activate { out.relu() } else { out })
}

/// Attention coefficients per head for one layer, with the destination ids
/// (self-loops included). Diagnostic companion to `gat_layer_forward`.
pub fn gat_layer_attention(
    h: &Tensor,
    edges: &[(u32, u32)],
    params: &ParamSet,
    cfg: &GatConfig,
    layer: usize,
) -> TensorResult<(Vec<usize>, Vec<Vec<f32>>)> {
    let n_nodes = h.shape()[0];
    let (src, dst) = edge_endpoints(edges, n_nodes);
    let mut per_head = Vec::with_capacity(cfg.heads);
    for head in 0..cfg.heads {
        let w = params.get(&weight_name(layer, head));
        let a = params.get(&attn_name(layer, head));
        let hw = h.matmul(&w)?;
        let a_dst = a.gather_rows(&[0])?.transpose()?;
        let a_src = a.gather_rows(&[1])?.transpose()?;
        let s_dst = hw.matmul(&a_dst)?;
        let s_src = hw.matmul(&a_src)?;
        let logits = s_dst
            .gather_rows(&dst)?
            .add(&s_src.gather_rows(&src)?)?
            .reshape(&[src.len()])?
            .leaky_relu(cfg.attention_slope);
        per_head.push(logits.segment_softmax(&dst)?.values().to_vec());
    }
    Ok((dst, per_head))
}

/// All layers without pooling: `[N, output_dim]` node embeddings.
pub fn encode_nodes(
    graph: &KeypointGraph,
    params: &ParamSet,
    cfg: &GatConfig,
) -> TensorResult<Tensor> {
    let mut h = Tensor::from_vec(&[graph.n_nodes, cfg.input_dim], graph.features().to_vec())?;
    for layer in 0..cfg.n_layers {
        let last = layer + 1 == cfg.n_layers;
        h = gat_layer_forward(&h, graph.edges(), params, cfg, layer, !last)?;
    }
    Ok(h)
}

/// Graph embedding: stacked attention layers followed by mean pooling over
/// nodes. The final layer omits the ReLU so the embedding is unbounded.
pub fn encode(graph: &KeypointGraph, params: &ParamSet, cfg: &GatConfig) -> TensorResult<Tensor> {
    encode_nodes(graph, params, cfg)?.reduce_mean(0)
}
