//! Keypoint graph construction: 133-d node features (128-d descriptor,
//! standardized coordinates, orientation, response, scale) and a
//! symmetrized k-nearest-neighbor edge set over the normalized positions.

use thiserror::Error;

use crate::data::digest::Fnv1a;
use crate::image::ImageTensor;
use crate::sift::{self, Descriptor, Keypoint, SiftConfig, SiftError, DESCRIPTOR_LEN};

/// Descriptor plus (x_hat, y_hat, theta, r, s).
pub const NODE_FEATURE_DIM: usize = DESCRIPTOR_LEN + 5;

/// Neighbor count used across the pipeline unless overridden.
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("keypoint corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Sift(#[from] SiftError),
    #[error("malformed graph text at line {line}: {reason}")]
    MalformedText { line: usize, reason: String },
}

/// Dataset-wide coordinate statistics used to standardize keypoint
/// positions. `eps` guards the division for degenerate spreads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationStats {
    pub mu_x: f32,
    pub mu_y: f32,
    pub sigma_x: f32,
    pub sigma_y: f32,
    pub eps: f32,
}

impl NormalizationStats {
    pub const DEFAULT_EPS: f32 = 1e-6;

    pub fn normalize(&self, x: f32, y: f32) -> (f32, f32) {
        ((x - self.mu_x) / (self.sigma_x + self.eps), (y - self.mu_y) / (self.sigma_y + self.eps))
    }

    pub fn digest(&self) -> u64 {
        let mut h = Fnv1a::new();
        for v in [self.mu_x, self.mu_y, self.sigma_x, self.sigma_y, self.eps] {
            h.write_f32(v);
        }
        h.finish()
    }
}

/// Node feature matrix plus the symmetric directed edge list (both
/// directions stored, no self-loops, deduplicated, sorted by (src, dst)).
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointGraph {
    pub n_nodes: usize,
    /// Row-major `n_nodes x NODE_FEATURE_DIM`.
    features: Vec<f32>,
    edges: Vec<(u32, u32)>,
    /// Neighbor count the edges were built with.
    pub k: usize,
}

impl KeypointGraph {
    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn feature_row(&self, i: usize) -> &[f32] {
        &self.features[i * NODE_FEATURE_DIM..(i + 1) * NODE_FEATURE_DIM]
    }

    /// Directed edge pairs (src, dst).
    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub(crate) fn from_parts(
        n_nodes: usize,
        features: Vec<f32>,
        edges: Vec<(u32, u32)>,
        k: usize,
    ) -> Self {
        debug_assert_eq!(features.len(), n_nodes * NODE_FEATURE_DIM);
        Self { n_nodes, features, edges, k }
    }

    pub fn digest(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write_u64(self.n_nodes as u64);
        h.write_u64(self.k as u64);
        for v in &self.features {
            h.write_f32(*v);
        }
        for &(a, b) in &self.edges {
            h.write_u32(a);
            h.write_u32(b);
        }
        h.finish()
    }

    /// Text form: header `N |E| k`, N feature rows, |E| edge lines.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.n_nodes, self.edges.len(), self.k);
        for i in 0..self.n_nodes {
            let row = self.feature_row(i);
            let mut line = String::new();
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    line.push(' ');
                }
                line.push_str(&format!("{v}"));
            }
            out.push_str(&line);
            out.push('\n');
        }
        for &(a, b) in &self.edges {
            out.push_str(&format!("{a} {b}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, GraphError> {
        let bad = |line: usize, reason: String| GraphError::MalformedText { line, reason };
        let mut lines = text.lines().enumerate();
        let (_, header) =
            lines.next().ok_or_else(|| bad(1, "missing header".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(bad(1, "header needs `N |E| k`".into()));
        }
        let n: usize = parts[0].parse().map_err(|e| bad(1, format!("{e}")))?;
        let ne: usize = parts[1].parse().map_err(|e| bad(1, format!("{e}")))?;
        let k: usize = parts[2].parse().map_err(|e| bad(1, format!("{e}")))?;
        let mut features = Vec::with_capacity(n * NODE_FEATURE_DIM);
        for _ in 0..n {
            let (idx, line) =
                lines.next().ok_or_else(|| bad(0, "truncated feature section".into()))?;
            let row: Result<Vec<f32>, _> = line.split_whitespace().map(str::parse).collect();
            let row = row.map_err(|e| bad(idx + 1, format!("{e}")))?;
            if row.len() != NODE_FEATURE_DIM {
                return Err(bad(
                    idx + 1,
                    format!("expected {NODE_FEATURE_DIM} features, got {}", row.len()),
                ));
            }
            features.extend(row);
        }
        let mut edges = Vec::with_capacity(ne);
        for _ in 0..ne {
            let (idx, line) =
                lines.next().ok_or_else(|| bad(0, "truncated edge section".into()))?;
            let mut it = line.split_whitespace();
            let a: u32 = it
                .next()
                .ok_or_else(|| bad(idx + 1, "missing src".into()))?
                .parse()
                .map_err(|e| bad(idx + 1, format!("{e}")))?;
            let b: u32 = it
                .next()
                .ok_or_else(|| bad(idx + 1, "missing dst".into()))?
                .parse()
                .map_err(|e| bad(idx + 1, format!("{e}")))?;
            edges.push((a, b));
        }
        Ok(KeypointGraph { n_nodes: n, features, edges, k })
    }
}

/// Population mean and std of keypoint coordinates over a corpus.
pub fn compute_normalization_stats<'a, I>(
    keypoint_sets: I,
) -> Result<NormalizationStats, GraphError>
where
    I: IntoIterator<Item = &'a [(Keypoint, Descriptor)]>,
{
    let mut n = 0u64;
    let mut sum_x = 0.0f64;
    let mut sum_y = 0.0f64;
    let mut sum_x2 = 0.0f64;
    let mut sum_y2 = 0.0f64;
    for set in keypoint_sets {
        for (kp, _) in set {
            n += 1;
            sum_x += kp.x as f64;
            sum_y += kp.y as f64;
            sum_x2 += (kp.x as f64) * (kp.x as f64);
            sum_y2 += (kp.y as f64) * (kp.y as f64);
        }
    }
    if n == 0 {
        return Err(GraphError::EmptyCorpus);
    }
    let mu_x = sum_x / n as f64;
    let mu_y = sum_y / n as f64;
    let var_x = (sum_x2 / n as f64 - mu_x * mu_x).max(0.0);
    let var_y = (sum_y2 / n as f64 - mu_y * mu_y).max(0.0);
    Ok(NormalizationStats {
        mu_x: mu_x as f32,
        mu_y: mu_y as f32,
        sigma_x: var_x.sqrt() as f32,
        sigma_y: var_y.sqrt() as f32,
        eps: NormalizationStats::DEFAULT_EPS,
    })
}

/// Node feature matrix: row i is
/// `[descriptor, x_hat, y_hat, theta, response, scale]`.
pub fn build_node_features(kps: &[(Keypoint, Descriptor)], stats: &NormalizationStats) -> Vec<f32> {
    let mut features = Vec::with_capacity(kps.len() * NODE_FEATURE_DIM);
    for (kp, desc) in kps {
        features.extend_from_slice(desc.values());
        let (xh, yh) = stats.normalize(kp.x, kp.y);
        features.extend_from_slice(&[xh, yh, kp.orientation, kp.response, kp.scale]);
    }
    features
}

/// Symmetrized k-NN edges over 2-D points: each node connects to its
/// min(k, N-1) nearest others (Euclidean, ties to the lower index), both
/// directions are stored, duplicates removed. Brute-force search; node
/// counts are capped upstream, so no spatial index is needed.
pub fn knn_edges(coords: &[(f32, f32)], k: usize) -> Vec<(u32, u32)> {
    let n = coords.len();
    if n <= 1 || k == 0 {
        return Vec::new();
    }
    let mut set = std::collections::BTreeSet::new();
    let mut candidates: Vec<(f32, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        candidates.clear();
        for (j, &(x, y)) in coords.iter().enumerate() {
            if j == i {
                continue;
            }
            let dx = coords[i].0 - x;
            let dy = coords[i].1 - y;
            candidates.push((dx * dx + dy * dy, j));
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in candidates.iter().take(k) {
            set.insert((i as u32, j as u32));
            set.insert((j as u32, i as u32));
        }
    }
    set.into_iter().collect()
}

/// Extraction, feature assembly and edge construction in one call. Images
/// with no detectable keypoints produce a single fallback node (zero
/// descriptor, normalized image-center coordinates, zero attributes) with
/// no edges, so downstream consumers stay total.
pub fn build_graph(
    img: &ImageTensor,
    cfg: &SiftConfig,
    stats: &NormalizationStats,
    k: usize,
) -> Result<KeypointGraph, GraphError> {
    let kps = sift::extract(img, cfg)?;
    let (w, h) =
        ((img.width * cfg.upscale_factor) as f32, (img.height * cfg.upscale_factor) as f32);
    Ok(build_graph_from_keypoints(&kps, stats, k, (w / 2.0, h / 2.0)))
}

/// Graph from an already-extracted keypoint list. `center` feeds the
/// zero-keypoint fallback node.
pub fn build_graph_from_keypoints(
    kps: &[(Keypoint, Descriptor)],
    stats: &NormalizationStats,
    k: usize,
    center: (f32, f32),
) -> KeypointGraph {
    if kps.is_empty() {
        let mut features = vec![0.0f32; NODE_FEATURE_DIM];
        let (xh, yh) = stats.normalize(center.0, center.1);
        features[DESCRIPTOR_LEN] = xh;
        features[DESCRIPTOR_LEN + 1] = yh;
        return KeypointGraph { n_nodes: 1, features, edges: Vec::new(), k };
    }
    let features = build_node_features(kps, stats);
    let coords: Vec<(f32, f32)> = kps.iter().map(|(kp, _)| stats.normalize(kp.x, kp.y)).collect();
    let edges = knn_edges(&coords, k);
    KeypointGraph { n_nodes: kps.len(), features, edges, k }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kp_at(x: f32, y: f32) -> (Keypoint, Descriptor) {
        (
            Keypoint { x, y, scale: 1.0, orientation: 0.5, response: 0.1 },
            Descriptor::new([0.25; DESCRIPTOR_LEN]),
        )
    }

    /// Independently written O(N^2) reference with the same tie-break.
    fn knn_oracle(coords: &[(f32, f32)], k: usize) -> Vec<(u32, u32)> {
        let n = coords.len();
        let mut out = std::collections::BTreeSet::new();
        for i in 0..n {
            let mut all: Vec<(f32, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let dx = coords[i].0 - coords[j].0;
                    let dy = coords[i].1 - coords[j].1;
                    (dx * dx + dy * dy, j)
                })
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for &(_, j) in all.iter().take(k.min(n.saturating_sub(1))) {
                out.insert((i as u32, j as u32));
                out.insert((j as u32, i as u32));
            }
        }
        out.into_iter().collect()
    }

    #[test]
    fn stats_single_keypoint_degenerates_gracefully() {
        let set = vec![kp_at(10.0, 20.0)];
        let stats = compute_normalization_stats([set.as_slice()]).unwrap();
        assert_eq!(stats.mu_x, 10.0);
        assert_eq!(stats.mu_y, 20.0);
        assert_eq!(stats.sigma_x, 0.0);
        assert_eq!(stats.sigma_y, 0.0);
        let (xh, yh) = stats.normalize(10.0, 20.0);
        assert_eq!((xh, yh), (0.0, 0.0));
    }

    #[test]
    fn stats_two_point_population_std() {
        let set = vec![kp_at(0.0, 5.0), kp_at(2.0, 5.0)];
        let stats = compute_normalization_stats([set.as_slice()]).unwrap();
        assert!((stats.mu_x - 1.0).abs() < 1e-6);
        assert!((stats.sigma_x - 1.0).abs() < 1e-6);
        assert_eq!(stats.sigma_y, 0.0);
    }

    #[test]
    fn stats_match_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let corpus: Vec<(Keypoint, Descriptor)> =
            (0..100).map(|_| kp_at(rng.gen_range(0.0..64.0), rng.gen_range(0.0..64.0))).collect();
        let stats = compute_normalization_stats([corpus.as_slice()]).unwrap();
        let xs: Vec<f64> = corpus.iter().map(|(k, _)| k.x as f64).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
        // Stats are stored as f32; one ulp at coordinate scale is ~2e-6.
        assert!((stats.mu_x as f64 - mean).abs() < 1e-5);
        assert!((stats.sigma_x as f64 - var.sqrt()).abs() < 1e-5);
    }

    #[test]
    fn stats_reject_empty_corpus() {
        let empty: Vec<(Keypoint, Descriptor)> = Vec::new();
        assert!(matches!(
            compute_normalization_stats([empty.as_slice()]),
            Err(GraphError::EmptyCorpus)
        ));
    }

    #[test]
    fn node_features_have_width_133() {
        let set = vec![kp_at(3.0, 4.0), kp_at(9.0, 2.0)];
        let stats = compute_normalization_stats([set.as_slice()]).unwrap();
        let features = build_node_features(&set, &stats);
        assert_eq!(NODE_FEATURE_DIM, 133);
        assert_eq!(features.len(), 2 * NODE_FEATURE_DIM);
    }

    #[test]
    fn centered_keypoint_normalizes_to_zero() {
        let set = vec![kp_at(4.0, 6.0), kp_at(8.0, 10.0)];
        let stats = compute_normalization_stats([set.as_slice()]).unwrap();
        let features = build_node_features(&[kp_at(6.0, 8.0)], &stats);
        assert_eq!(features[DESCRIPTOR_LEN], 0.0);
        assert_eq!(features[DESCRIPTOR_LEN + 1], 0.0);
    }

    #[test]
    fn descriptor_slice_is_copied_bit_exactly() {
        let mut values = [0.0f32; DESCRIPTOR_LEN];
        for (i, v) in values.iter_mut().enumerate() {
            *v = (i as f32 * 0.731).fract();
        }
        let kp = (
            Keypoint { x: 1.0, y: 2.0, scale: 3.0, orientation: 0.4, response: 0.05 },
            Descriptor::new(values),
        );
        let stats =
            NormalizationStats { mu_x: 0.0, mu_y: 0.0, sigma_x: 1.0, sigma_y: 1.0, eps: 1e-6 };
        let features = build_node_features(std::slice::from_ref(&kp), &stats);
        assert_eq!(&features[..DESCRIPTOR_LEN], kp.1.values());
        assert_eq!(features[DESCRIPTOR_LEN + 2], 0.4);
        assert_eq!(features[DESCRIPTOR_LEN + 3], 0.05);
        assert_eq!(features[DESCRIPTOR_LEN + 4], 3.0);
    }

    #[test]
    fn default_neighbor_count_is_five() {
        assert_eq!(DEFAULT_K, 5);
    }

    #[test]
    fn knn_single_node_has_no_edges() {
        assert!(knn_edges(&[(0.0, 0.0)], 5).is_empty());
        assert!(knn_edges(&[], 5).is_empty());
    }

    #[test]
    fn knn_collinear_points() {
        let coords = [(0.0, 0.0), (1.0, 0.0), (3.0, 0.0)];
        let edges = knn_edges(&coords, 1);
        assert_eq!(edges, vec![(0, 1), (1, 0), (1, 2), (2, 1)]);
    }

    #[test]
    fn knn_matches_oracle_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let n = rng.gen_range(1..=50);
            let k = rng.gen_range(1..=6);
            let coords: Vec<(f32, f32)> =
                (0..n).map(|_| (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))).collect();
            assert_eq!(knn_edges(&coords, k), knn_oracle(&coords, k));
        }
    }

    #[test]
    fn knn_symmetry_and_degree_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let coords: Vec<(f32, f32)> =
            (0..30).map(|_| (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0))).collect();
        let k = 5;
        let edges = knn_edges(&coords, k);
        let set: std::collections::BTreeSet<(u32, u32)> = edges.iter().copied().collect();
        let mut degree = vec![0usize; coords.len()];
        for &(a, b) in &edges {
            assert_ne!(a, b, "self loop");
            assert!(set.contains(&(b, a)), "missing reverse of ({a},{b})");
            degree[a as usize] += 1;
        }
        for &d in &degree {
            assert!(d >= k.min(coords.len() - 1));
        }
    }

    #[test]
    fn constant_image_builds_fallback_node() {
        let img = ImageTensor::constant(64, 64, 1, 0.5);
        let stats =
            NormalizationStats { mu_x: 32.0, mu_y: 32.0, sigma_x: 10.0, sigma_y: 10.0, eps: 1e-6 };
        let g = build_graph(&img, &SiftConfig::default(), &stats, DEFAULT_K).unwrap();
        assert_eq!(g.n_nodes, 1);
        assert_eq!(g.n_edges(), 0);
        let row = g.feature_row(0);
        assert!(row[..DESCRIPTOR_LEN].iter().all(|&v| v == 0.0));
        assert_eq!(row[DESCRIPTOR_LEN], 0.0);
        assert_eq!(row[DESCRIPTOR_LEN + 1], 0.0);
    }

    #[test]
    fn node_count_tracks_keypoints() {
        let img = synth::checkerboard(64, 7);
        let cfg = SiftConfig::default();
        let kps = sift::extract(&img, &cfg).unwrap();
        let stats = compute_normalization_stats([kps.as_slice()]).unwrap();
        let g = build_graph(&img, &cfg, &stats, DEFAULT_K).unwrap();
        assert_eq!(g.n_nodes, kps.len());
        assert!(g.n_nodes >= 2);
    }

    #[test]
    fn checkerboard_edges_match_oracle() {
        let img = synth::checkerboard(64, 7);
        let cfg = SiftConfig::default();
        let kps = sift::extract(&img, &cfg).unwrap();
        let stats = compute_normalization_stats([kps.as_slice()]).unwrap();
        let g = build_graph(&img, &cfg, &stats, DEFAULT_K).unwrap();
        let coords: Vec<(f32, f32)> =
            kps.iter().map(|(kp, _)| stats.normalize(kp.x, kp.y)).collect();
        assert_eq!(g.edges(), &knn_oracle(&coords, DEFAULT_K)[..]);
    }

    #[test]
    fn normalization_is_standard_over_corpus() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let corpus: Vec<(Keypoint, Descriptor)> =
            (0..500).map(|_| kp_at(rng.gen_range(0.0..64.0), rng.gen_range(10.0..50.0))).collect();
        let stats = compute_normalization_stats([corpus.as_slice()]).unwrap();
        let mut sum = 0.0f64;
        let mut sum2 = 0.0f64;
        for (kp, _) in &corpus {
            let (xh, _) = stats.normalize(kp.x, kp.y);
            sum += xh as f64;
            sum2 += (xh as f64) * (xh as f64);
        }
        let mean = sum / corpus.len() as f64;
        let std = (sum2 / corpus.len() as f64 - mean * mean).sqrt();
        assert!(mean.abs() <= 1e-4, "normalized mean {mean}");
        assert!((std - 1.0).abs() <= 1e-3, "normalized std {std}");
    }

    #[test]
    fn graph_text_round_trips() {
        let img = synth::checkerboard(64, 7);
        let cfg = SiftConfig::default();
        let kps = sift::extract(&img, &cfg).unwrap();
        let stats = compute_normalization_stats([kps.as_slice()]).unwrap();
        let g = build_graph(&img, &cfg, &stats, 3).unwrap();
        let parsed = KeypointGraph::from_text(&g.to_text()).unwrap();
        assert_eq!(parsed, g);
    }
}
