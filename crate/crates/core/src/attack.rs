//! White-box FGSM and PGD under an L-infinity budget, plus the logarithmic
//! epsilon-sweep protocol producing per-epsilon accuracy reports.
//!
//! Attacks operate in the model's [0, 1] input space — the same pixels the
//! keypoint extractor consumes, so there is no hidden preprocessing gap.
//! Pixel gradients follow the fused model's gradient contract: the graph
//! branch is recomputed from the perturbed pixels at every step but
//! contributes no pixel gradient, so the attacker's gradient sees only the
//! semantic branch while keypoint drift still degrades the graph branch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::backbone::pixels_tensor;
use crate::graph::NormalizationStats;
use crate::image::ImageTensor;
use crate::model::{forward_logits, FusedModelConfig, ModelError};
use crate::tensor::{NamedTensors, ParamSet};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid epsilon grid: min {min}, max {max}, n {n}")]
    BadGrid { min: f64, max: f64, n: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// L-infinity attack parameters. `step_size` defaults to `2.5 * eps / steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub epsilon: f32,
    pub steps: usize,
    pub step_size: Option<f32>,
    pub random_start: bool,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self { epsilon: 0.0, steps: 10, step_size: None, random_start: true, seed: 0 }
    }
}

impl AttackConfig {
    pub fn with_epsilon(&self, epsilon: f32) -> Self {
        Self { epsilon, ..self.clone() }
    }

    pub fn effective_step_size(&self) -> f32 {
        self.step_size.unwrap_or(2.5 * self.epsilon / self.steps.max(1) as f32)
    }

    pub fn validate(&self) {
        assert!(self.epsilon >= 0.0);
        assert!(self.steps >= 1);
        if self.epsilon > 0.0 {
            assert!(self.effective_step_size() > 0.0);
        }
    }
}

/// Anything that exposes a scalar loss and its pixel gradient.
pub trait AttackTarget {
    fn loss_and_pixel_grad(
        &self,
        img: &ImageTensor,
        label: usize,
    ) -> Result<(f32, Vec<f32>), ModelError>;

    fn loss(&self, img: &ImageTensor, label: usize) -> Result<f32, ModelError> {
        Ok(self.loss_and_pixel_grad(img, label)?.0)
    }
}

/// The fused classifier as an attack target: cross-entropy of its logits,
/// graph branch recomputed from the given pixels on every call.
pub struct FusedTarget<'a> {
    pub params: &'a ParamSet,
    pub cfg: &'a FusedModelConfig,
    pub stats: &'a NormalizationStats,
}

impl AttackTarget for FusedTarget<'_> {
    fn loss_and_pixel_grad(
        &self,
        img: &ImageTensor,
        label: usize,
    ) -> Result<(f32, Vec<f32>), ModelError> {
        let pixels = pixels_tensor(img, true)?;
        let logits = forward_logits(img, &pixels, self.params, self.cfg, self.stats, None)?;
        let loss = logits.softmax_cross_entropy(&[label])?;
        loss.backward()?;
        let grad = pixels.grad().unwrap_or_else(|| vec![0.0; pixels.len()]);
        Ok((loss.item(), grad))
    }
}

/// Frozen affine loss `w . x + c`: the analytic oracle for sign-ascent
/// attacks. Its worst-case loss gain inside an L-infinity ball of radius
/// eps (with inactive pixel clamps) is exactly `eps * ||w||_1`.
pub struct LinearProbe {
    pub weights: Vec<f32>,
    pub offset: f32,
}

impl LinearProbe {
    pub fn worst_case_gain(&self, epsilon: f32) -> f32 {
        epsilon * self.weights.iter().map(|w| w.abs()).sum::<f32>()
    }
}

impl AttackTarget for LinearProbe {
    fn loss_and_pixel_grad(
        &self,
        img: &ImageTensor,
        _label: usize,
    ) -> Result<(f32, Vec<f32>), ModelError> {
        assert_eq!(self.weights.len(), img.data().len());
        let loss = self
            .weights
            .iter()
            .zip(img.data())
            .map(|(w, x)| w * x)
            .sum::<f32>()
            + self.offset;
        Ok((loss, self.weights.clone()))
    }
}

fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Single-step sign ascent: `clamp(x + eps * sign(grad))`, which also stays
/// inside the epsilon ball by construction. A zero budget returns the input
/// bit-exactly.
pub fn fgsm<T: AttackTarget + ?Sized>(
    target: &T,
    img: &ImageTensor,
    label: usize,
    atk: &AttackConfig,
) -> Result<ImageTensor, ModelError> {
    atk.validate();
    if atk.epsilon == 0.0 {
        return Ok(img.clone());
    }
    let (_, grad) = target.loss_and_pixel_grad(img, label)?;
    let mut out = img.clone();
    for (v, g) in out.data_mut().iter_mut().zip(&grad) {
        *v = (*v + atk.epsilon * sign(*g)).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Iterated sign ascent with projection onto the intersection of the
/// epsilon ball around the clean input and [0, 1]; optional uniform random
/// start inside the ball.
pub fn pgd<T: AttackTarget + ?Sized>(
    target: &T,
    img: &ImageTensor,
    label: usize,
    atk: &AttackConfig,
) -> Result<ImageTensor, ModelError> {
    atk.validate();
    if atk.epsilon == 0.0 {
        return Ok(img.clone());
    }
    let eps = atk.epsilon;
    let alpha = atk.effective_step_size();
    let clean = img.data();

    let mut current = img.clone();
    if atk.random_start {
        let mut rng = ChaCha8Rng::seed_from_u64(atk.seed);
        for (v, &x0) in current.data_mut().iter_mut().zip(clean) {
            *v = (x0 + rng.gen_range(-eps..=eps)).clamp(0.0, 1.0);
        }
    }
    for _ in 0..atk.steps {
        let (_, grad) = target.loss_and_pixel_grad(&current, label)?;
        for ((v, g), &x0) in current.data_mut().iter_mut().zip(&grad).zip(clean) {
            let stepped = *v + alpha * sign(*g);
            *v = stepped.clamp(x0 - eps, x0 + eps).clamp(0.0, 1.0);
        }
    }
    debug_assert!(current
        .data()
        .iter()
        .zip(clean)
        .all(|(v, x0)| (v - x0).abs() <= eps + 1e-6 && (0.0..=1.0).contains(v)));
    Ok(current)
}

/// Unrounded logarithmic spacing from `min` to `max` inclusive.
pub fn log_spaced(min: f64, max: f64, n: usize) -> Result<Vec<f64>, AttackError> {
    if !(min > 0.0 && min < max && n >= 2) {
        return Err(AttackError::BadGrid { min, max, n });
    }
    let (a, b) = (min.log10(), max.log10());
    Ok((0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect())
}

/// The evaluation grid: log-spaced inclusive and rounded to 4 decimals.
/// Defaults (1e-3, 1e-1, 9) give
/// {0.0010, 0.0018, 0.0032, 0.0056, 0.0100, 0.0178, 0.0316, 0.0562, 0.1000}.
pub fn epsilon_grid(min: f64, max: f64, n: usize) -> Result<Vec<f64>, AttackError> {
    Ok(log_spaced(min, max, n)?
        .into_iter()
        .map(|v| (v * 1e4).round() / 1e4)
        .collect())
}

pub fn default_epsilon_grid() -> Vec<f64> {
    epsilon_grid(1e-3, 1e-1, 9).expect("default grid is valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub epsilon: f64,
    pub variant: String,
    pub accuracy: f64,
}

/// Per-epsilon accuracies for every model variant, plus the provenance
/// needed to reproduce the run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub dataset: String,
    pub backbone: String,
    pub seed: u64,
    pub steps: usize,
    pub random_start: bool,
}

impl EvalReport {
    /// CSV with header `epsilon,variant,accuracy,dataset,backbone,seed`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epsilon,variant,accuracy,dataset,backbone,seed\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{:.4},{},{},{},{},{}\n",
                row.epsilon, row.variant, row.accuracy, self.dataset, self.backbone, self.seed
            ));
        }
        out
    }

    pub fn accuracy_of(&self, variant: &str, epsilon: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && (r.epsilon - epsilon).abs() < 1e-9)
            .map(|r| r.accuracy)
    }
}

/// One model variant entering the sweep.
pub struct VariantSpec<'a> {
    pub name: String,
    pub params: &'a ParamSet,
    pub cfg: &'a FusedModelConfig,
    pub stats: &'a NormalizationStats,
}

fn sample_seed(base: u64, eps_index: usize, sample_index: usize) -> u64 {
    base ^ (eps_index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (sample_index as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// PGD-attacks every sample at every epsilon (including the clean row at
/// epsilon 0) for every variant. Attack seeds depend on the sample and
/// epsilon only, so variants face identical perturbation draws. Rows are
/// sorted by epsilon, variants in input order within each epsilon.
pub fn sweep(
    split: &[(ImageTensor, usize)],
    variants: &[VariantSpec<'_>],
    grid: &[f64],
    atk: &AttackConfig,
    dataset_name: &str,
) -> Result<EvalReport, AttackError> {
    if split.is_empty() {
        return Err(AttackError::Model(ModelError::EmptySplit));
    }
    let mut epsilons: Vec<f64> = Vec::with_capacity(grid.len() + 1);
    epsilons.push(0.0);
    epsilons.extend_from_slice(grid);
    epsilons.sort_by(|a, b| a.total_cmp(b));
    epsilons.dedup();

    // (eps index, variant index) -> accuracy; computed variant-major so each
    // snapshot is taken once.
    let mut acc = vec![vec![0.0f64; variants.len()]; epsilons.len()];
    for (vi, variant) in variants.iter().enumerate() {
        let snapshot = variant.params.snapshot();
        for (ei, &eps) in epsilons.iter().enumerate() {
            acc[ei][vi] = attack_accuracy(split, &snapshot, variant, eps, ei, atk)?;
        }
    }

    let mut rows = Vec::with_capacity(epsilons.len() * variants.len());
    for (ei, &eps) in epsilons.iter().enumerate() {
        for (vi, variant) in variants.iter().enumerate() {
            rows.push(EvalRow { epsilon: eps, variant: variant.name.clone(), accuracy: acc[ei][vi] });
        }
    }
    Ok(EvalReport {
        rows,
        dataset: dataset_name.to_string(),
        backbone: variants.first().map(|v| v.cfg.backbone.as_str()).unwrap_or("none").into(),
        seed: atk.seed,
        steps: atk.steps,
        random_start: atk.random_start,
    })
}

fn attack_accuracy(
    split: &[(ImageTensor, usize)],
    snapshot: &NamedTensors,
    variant: &VariantSpec<'_>,
    eps: f64,
    eps_index: usize,
    atk: &AttackConfig,
) -> Result<f64, AttackError> {
    const CHUNK: usize = 16;
    let correct: usize = split
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(chunk_idx, chunk)| -> Result<usize, AttackError> {
            let local = ParamSet::from_snapshot(snapshot);
            let target = FusedTarget { params: &local, cfg: variant.cfg, stats: variant.stats };
            let mut hits = 0usize;
            for (j, (img, label)) in chunk.iter().enumerate() {
                let adversarial = if eps == 0.0 {
                    img.clone()
                } else {
                    let sample_atk = AttackConfig {
                        epsilon: eps as f32,
                        seed: sample_seed(atk.seed, eps_index, chunk_idx * CHUNK + j),
                        ..atk.clone()
                    };
                    pgd(&target, img, *label, &sample_atk)?
                };
                let pixels = pixels_tensor(&adversarial, false).map_err(ModelError::from)?;
                let logits = forward_logits(
                    &adversarial,
                    &pixels,
                    &local,
                    variant.cfg,
                    variant.stats,
                    None,
                )?;
                let values = logits.values();
                let pred = values
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
                if pred == *label {
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

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn probe_setup(seed: u64) -> (LinearProbe, ImageTensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 3 * 8 * 8;
        let weights: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Interior pixels keep the [0,1] clamp inactive at eps <= 0.1.
        let data: Vec<f32> = (0..n).map(|_| rng.gen_range(0.3..0.7)).collect();
        (LinearProbe { weights, offset: 0.2 }, ImageTensor::new(8, 8, 3, data))
    }

    #[test]
    fn fgsm_zero_budget_is_identity() {
        let (probe, img) = probe_setup(1);
        let atk = AttackConfig { epsilon: 0.0, ..AttackConfig::default() };
        let out = fgsm(&probe, &img, 0, &atk).unwrap();
        assert_eq!(out.data(), img.data());
        let out = pgd(&probe, &img, 0, &atk).unwrap();
        assert_eq!(out.data(), img.data());
    }

    #[test]
    fn fgsm_respects_budget_and_range() {
        let (probe, img) = probe_setup(2);
        let atk = AttackConfig { epsilon: 0.05, ..AttackConfig::default() };
        let out = fgsm(&probe, &img, 0, &atk).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.05 + 1e-6);
            assert!((0.0..=1.0).contains(a));
        }
    }

    #[test]
    fn fgsm_achieves_the_analytic_worst_case_on_a_linear_probe() {
        let (probe, img) = probe_setup(3);
        let atk = AttackConfig { epsilon: 0.06, ..AttackConfig::default() };
        let before = probe.loss(&img, 0).unwrap();
        let adv = fgsm(&probe, &img, 0, &atk).unwrap();
        let after = probe.loss(&adv, 0).unwrap();
        assert!(after > before, "sign ascent must increase a linear loss");
        let gain = after - before;
        let expect = probe.worst_case_gain(0.06);
        assert!(
            (gain - expect).abs() <= 1e-4,
            "worst-case gain {expect}, achieved {gain}"
        );
    }

    #[test]
    fn pgd_dominates_fgsm_on_a_linear_objective() {
        let (probe, img) = probe_setup(4);
        let atk = AttackConfig { epsilon: 0.05, seed: 9, ..AttackConfig::default() };
        let f = probe.loss(&fgsm(&probe, &img, 0, &atk).unwrap(), 0).unwrap();
        let p = probe.loss(&pgd(&probe, &img, 0, &atk).unwrap(), 0).unwrap();
        assert!(p >= f - 1e-6, "pgd {p} vs fgsm {f}");
    }

    #[test]
    fn pgd_projection_holds_even_with_random_start() {
        let (probe, img) = probe_setup(5);
        let atk = AttackConfig { epsilon: 0.08, steps: 7, seed: 5, ..AttackConfig::default() };
        let adv = pgd(&probe, &img, 0, &atk).unwrap();
        for (a, b) in adv.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.08 + 1e-6);
            assert!((0.0..=1.0).contains(a));
        }
    }

    #[test]
    fn pgd_is_deterministic_per_seed() {
        // Same seed, same output. (Different seeds may still converge to the
        // same corner on a linear objective, so only equality is asserted.)
        let (probe, img) = probe_setup(6);
        let atk = AttackConfig { epsilon: 0.03, seed: 77, ..AttackConfig::default() };
        let a = pgd(&probe, &img, 0, &atk).unwrap();
        let b = pgd(&probe, &img, 0, &atk).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn grid_matches_published_table_values() {
        let grid = default_epsilon_grid();
        let expect = [0.0010, 0.0018, 0.0032, 0.0056, 0.0100, 0.0178, 0.0316, 0.0562, 0.1000];
        assert_eq!(grid.len(), expect.len());
        for (a, b) in grid.iter().zip(expect) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn grid_endpoints_for_n2() {
        let grid = epsilon_grid(1e-3, 1e-1, 2).unwrap();
        assert_eq!(grid, vec![0.001, 0.1]);
    }

    #[test]
    fn unrounded_grid_has_constant_ratios() {
        let grid = log_spaced(1e-3, 1e-1, 9).unwrap();
        let first = grid[1] / grid[0];
        for pair in grid.windows(2) {
            let ratio = pair[1] / pair[0];
            assert!((ratio - first).abs() / first <= 1e-3);
        }
    }

    #[test]
    fn grid_rejects_bad_ranges() {
        assert!(matches!(epsilon_grid(0.1, 0.001, 5), Err(AttackError::BadGrid { .. })));
        assert!(matches!(epsilon_grid(1e-3, 1e-1, 1), Err(AttackError::BadGrid { .. })));
        assert!(matches!(epsilon_grid(0.0, 1e-1, 3), Err(AttackError::BadGrid { .. })));
    }
}
