//! Disk-backed memoization of keypoint graphs for clean images.
//!
//! Keys combine the image digest with a namespace digest over the detector
//! configuration, the normalization stats and the neighbor count, so any
//! configuration change invalidates prior entries. Hits are bit-identical
//! to recomputation; corrupt entries are silently recomputed and rewritten.
//! Layout: `<root>/<namespace-digest-hex>/<image-digest-hex>.kg`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use super::digest::Fnv1a;
use super::write_atomic;
use crate::graph::{self, GraphError, KeypointGraph, NormalizationStats, NODE_FEATURE_DIM};
use crate::image::ImageTensor;
use crate::sift::SiftConfig;

const KG_MAGIC: &[u8; 4] = b"SGKG";
const KG_VERSION: u16 = 1;

pub struct GraphCache {
    dir: Option<PathBuf>,
    namespace: u64,
    memory: Mutex<HashMap<u64, Arc<KeypointGraph>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl GraphCache {
    /// In-memory cache, optionally persisted under `root`.
    pub fn new(
        root: Option<&Path>,
        sift_cfg: &SiftConfig,
        stats: &NormalizationStats,
        k: usize,
    ) -> Self {
        let mut h = Fnv1a::new();
        h.write_u64(sift_cfg.digest());
        h.write_u64(stats.digest());
        h.write_u64(k as u64);
        let namespace = h.finish();
        let dir = root.map(|r| r.join(format!("{namespace:016x}")));
        GraphCache {
            dir,
            namespace,
            memory: Mutex::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn namespace(&self) -> u64 {
        self.namespace
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    fn entry_path(&self, image_digest: u64) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{image_digest:016x}.kg")))
    }

    /// Returns the cached graph for the image, computing and storing it on a
    /// miss. Computation runs outside the lock; duplicate concurrent misses
    /// agree because graph construction is deterministic.
    pub fn get_or_build(
        &self,
        img: &ImageTensor,
        sift_cfg: &SiftConfig,
        stats: &NormalizationStats,
        k: usize,
    ) -> Result<Arc<KeypointGraph>, GraphError> {
        let key = img.digest();
        if let Some(found) = self.memory.lock().unwrap().get(&key).cloned() {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(found);
        }
        if let Some(path) = self.entry_path(key) {
            if let Some(graph) = read_entry(&path) {
                self.hits.fetch_add(1, Ordering::Relaxed);
                let arc = Arc::new(graph);
                self.memory.lock().unwrap().insert(key, arc.clone());
                return Ok(arc);
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let graph = Arc::new(graph::build_graph(img, sift_cfg, stats, k)?);
        if let Some(path) = self.entry_path(key) {
            // Persist best-effort; a failed write only costs a future miss.
            let _ = write_atomic(&path, &encode_entry(&graph));
        }
        self.memory.lock().unwrap().insert(key, graph.clone());
        Ok(graph)
    }

    /// Pre-populates the in-memory map (used when graphs were just built as
    /// part of a statistics pass).
    pub fn put(&self, img: &ImageTensor, graph: Arc<KeypointGraph>) {
        let key = img.digest();
        if let Some(path) = self.entry_path(key) {
            let _ = write_atomic(&path, &encode_entry(&graph));
        }
        self.memory.lock().unwrap().insert(key, graph);
    }
}

fn encode_entry(g: &KeypointGraph) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(KG_MAGIC);
    out.extend_from_slice(&KG_VERSION.to_le_bytes());
    out.extend_from_slice(&(g.n_nodes as u32).to_le_bytes());
    out.extend_from_slice(&(g.n_edges() as u32).to_le_bytes());
    out.extend_from_slice(&(g.k as u32).to_le_bytes());
    for v in g.features() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &(a, b) in g.edges() {
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
    }
    let mut h = Fnv1a::new();
    h.write(&out);
    out.extend_from_slice(&h.finish().to_le_bytes());
    out
}

/// None on any structural or integrity problem: the caller recomputes.
fn read_entry(path: &Path) -> Option<KeypointGraph> {
    let bytes = std::fs::read(path).ok()?;
    if bytes.len() < 4 + 2 + 12 + 8 || &bytes[..4] != KG_MAGIC {
        return None;
    }
    let body_len = bytes.len() - 8;
    let stored = u64::from_le_bytes(bytes[body_len..].try_into().ok()?);
    let mut h = Fnv1a::new();
    h.write(&bytes[..body_len]);
    if h.finish() != stored {
        return None;
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().ok()?);
    if version != KG_VERSION {
        return None;
    }
    let n = u32::from_le_bytes(bytes[6..10].try_into().ok()?) as usize;
    let ne = u32::from_le_bytes(bytes[10..14].try_into().ok()?) as usize;
    let k = u32::from_le_bytes(bytes[14..18].try_into().ok()?) as usize;
    let need = 18 + n * NODE_FEATURE_DIM * 4 + ne * 8;
    if body_len != need {
        return None;
    }
    let mut pos = 18;
    let mut features = Vec::with_capacity(n * NODE_FEATURE_DIM);
    for _ in 0..n * NODE_FEATURE_DIM {
        features.push(f32::from_le_bytes(bytes[pos..pos + 4].try_into().ok()?));
        pos += 4;
    }
    let mut edges = Vec::with_capacity(ne);
    for _ in 0..ne {
        let a = u32::from_le_bytes(bytes[pos..pos + 4].try_into().ok()?);
        let b = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().ok()?);
        edges.push((a, b));
        pos += 8;
    }
    Some(KeypointGraph::from_parts(n, features, edges, k))
}
