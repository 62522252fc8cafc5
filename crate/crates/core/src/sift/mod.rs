//! SIFT keypoint detector and descriptor extractor.
//!
//! Keypoints come out of a difference-of-Gaussians pyramid with quadratic
//! subpixel refinement, contrast and edge-ratio filtering, dominant-
//! orientation assignment (secondary peaks spawn duplicates) and a 128-d
//! gradient-histogram descriptor per orientation. Small inputs can be
//! bilinearly upscaled before detection; coordinates are then reported in
//! the upscaled space, which is the space the rest of the pipeline consumes.

mod descriptor;
mod detect;
pub mod pyramid;

use std::f32::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::image::ImageTensor;

pub use descriptor::{Descriptor, DESCRIPTOR_LEN};
pub use detect::RawKeypoint;
pub use pyramid::{build_scale_space, to_grayscale, DogPyramid, GrayBuffer, ScaleSpace};

#[derive(Debug, Error)]
pub enum SiftError {
    #[error("image too small for scale space: min side {min_side}, need {required}")]
    ImageTooSmall { min_side: usize, required: usize },
    #[error("malformed keypoint line {line}: {reason}")]
    MalformedKeypointLine { line: usize, reason: String },
}

/// Detector / descriptor parameters. The defaults assume the shared 64x64
/// input space; `for_min_side` picks an upscale factor for smaller inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SiftConfig {
    /// Octave count; `None` derives floor(log2(min side)) - 2, at least 1.
    pub n_octaves: Option<usize>,
    pub scales_per_octave: usize,
    pub base_sigma: f32,
    pub contrast_threshold: f32,
    pub edge_ratio: f32,
    /// Keypoint cap, kept by descending response.
    pub max_keypoints: usize,
    /// Pre-detection bilinear resize multiple; keypoints are reported in the
    /// upscaled coordinate space.
    pub upscale_factor: usize,
}

impl Default for SiftConfig {
    fn default() -> Self {
        Self {
            n_octaves: None,
            scales_per_octave: 3,
            base_sigma: 1.6,
            contrast_threshold: 0.03,
            edge_ratio: 10.0,
            max_keypoints: 256,
            upscale_factor: 1,
        }
    }
}

impl SiftConfig {
    /// Upscale factor making the minimum image side at least 64 px.
    pub fn for_min_side(min_side: usize) -> Self {
        let factor = if min_side == 0 { 1 } else { 64usize.div_ceil(min_side).max(1) };
        Self { upscale_factor: factor, ..Self::default() }
    }

    pub fn digest(&self) -> u64 {
        let mut h = crate::data::digest::Fnv1a::new();
        h.write_u64(self.n_octaves.map(|n| n as u64 + 1).unwrap_or(0));
        h.write_u64(self.scales_per_octave as u64);
        h.write_f32(self.base_sigma);
        h.write_f32(self.contrast_threshold);
        h.write_f32(self.edge_ratio);
        h.write_u64(self.max_keypoints as u64);
        h.write_u64(self.upscale_factor as u64);
        h.finish()
    }
}

/// Detected keypoint in image coordinates (possibly upscaled, see
/// [`SiftConfig::upscale_factor`]): position, blur scale in pixels,
/// orientation in [0, 2pi) and DoG contrast response.
#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub scale: f32,
    pub orientation: f32,
    pub response: f32,
}

/// Per-noise-level keypoint stability diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    /// Gaussian noise std-dev on the [0, 1] intensity scale.
    pub noise_level: f32,
    /// Fraction of clean keypoints re-found within 2 px.
    pub repeatability: f32,
    /// Mean descriptor L2 distance over matched pairs.
    pub mean_descriptor_distance: f32,
    /// Mean L2 pixel distance over the 16x16 patches of matched pairs.
    pub mean_pixel_distance: f32,
}

/// Noise grid used by the stability diagnostics: {2, 4, 8, 16} / 255.
pub fn default_noise_levels() -> Vec<f32> {
    [2.0, 4.0, 8.0, 16.0].iter().map(|v| v / 255.0).collect()
}

/// Full extraction: grayscale, optional upscale, pyramid, detection,
/// orientation, descriptors. Output is ordered by (response desc, y, x)
/// and capped at `max_keypoints`. Constant images yield an empty list.
pub fn extract(
    img: &ImageTensor,
    cfg: &SiftConfig,
) -> Result<Vec<(Keypoint, Descriptor)>, SiftError> {
    let gray = to_grayscale(img);
    let gray = if cfg.upscale_factor > 1 {
        gray.resize_bilinear(gray.height * cfg.upscale_factor, gray.width * cfg.upscale_factor)
    } else {
        gray
    };
    let (w, h) = (gray.width as f32, gray.height as f32);
    let (ss, dog) = build_scale_space(&gray, cfg)?;
    let raw = detect::detect_raw_keypoints(&dog, cfg);

    let mut out: Vec<(Keypoint, Descriptor)> = Vec::new();
    for kp in &raw {
        let octave_scale = 2f32.powi(kp.octave as i32);
        let x = kp.x_oct * octave_scale;
        let y = kp.y_oct * octave_scale;
        if x < 0.0 || x >= w || y < 0.0 || y >= h {
            continue;
        }
        for orientation in detect::assign_orientations(&ss, kp) {
            let desc = descriptor::compute_descriptor(&ss, kp, orientation);
            out.push((
                Keypoint {
                    x,
                    y,
                    scale: kp.sigma_oct * octave_scale,
                    orientation,
                    response: kp.response,
                },
                desc,
            ));
        }
    }
    out.sort_by(|(a, _), (b, _)| {
        b.response
            .total_cmp(&a.response)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
            .then(a.orientation.total_cmp(&b.orientation))
    });
    out.truncate(cfg.max_keypoints);
    Ok(out)
}

/// Greedy nearest matching of clean keypoints to perturbed ones with a 2 px
/// gate, then the stability statistics per noise level. Level 0 compares
/// the image with itself.
pub fn measure_keypoint_stability(
    img: &ImageTensor,
    cfg: &SiftConfig,
    noise_levels: &[f32],
    seed: u64,
) -> Result<Vec<StabilityReport>, SiftError> {
    const GATE: f32 = 2.0;
    let clean = extract(img, cfg)?;
    let gray_clean = to_grayscale(img);

    let mut reports = Vec::with_capacity(noise_levels.len());
    for (i, &level) in noise_levels.iter().enumerate() {
        let perturbed_img = if level > 0.0 {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64));
            img.add_gaussian_noise(level, &mut rng)
        } else {
            img.clone()
        };
        let perturbed = extract(&perturbed_img, cfg)?;
        let gray_pert = to_grayscale(&perturbed_img);

        let mut taken = vec![false; perturbed.len()];
        let mut matches = 0usize;
        let mut desc_dist = 0.0f32;
        let mut pixel_dist = 0.0f32;
        for (kp, desc) in &clean {
            // Nearest spatial match; co-located multi-orientation duplicates
            // tie-break by angular distance.
            let mut best: Option<(usize, f32, f32)> = None;
            for (j, (pkp, _)) in perturbed.iter().enumerate() {
                if taken[j] {
                    continue;
                }
                let d = ((kp.x - pkp.x).powi(2) + (kp.y - pkp.y).powi(2)).sqrt();
                if d > GATE {
                    continue;
                }
                let da = angular_distance(kp.orientation, pkp.orientation);
                if best.is_none_or(|(_, bd, ba)| d < bd || (d == bd && da < ba)) {
                    best = Some((j, d, da));
                }
            }
            if let Some((j, _, _)) = best {
                taken[j] = true;
                matches += 1;
                desc_dist += desc.l2_distance(&perturbed[j].1);
                pixel_dist += patch_distance(&gray_clean, &gray_pert, kp.x, kp.y);
            }
        }
        let repeatability = if clean.is_empty() { 1.0 } else { matches as f32 / clean.len() as f32 };
        let (desc_mean, pixel_mean) = if matches > 0 {
            (desc_dist / matches as f32, pixel_dist / matches as f32)
        } else {
            (0.0, 0.0)
        };
        reports.push(StabilityReport {
            noise_level: level,
            repeatability,
            mean_descriptor_distance: desc_mean,
            mean_pixel_distance: pixel_mean,
        });
    }
    Ok(reports)
}

/// L2 distance between the 16x16 grayscale patches centered on (x, y).
fn patch_distance(a: &ImageTensor, b: &ImageTensor, x: f32, y: f32) -> f32 {
    let cx = x.round() as i64;
    let cy = y.round() as i64;
    let mut acc = 0.0f32;
    for dy in -8i64..8 {
        for dx in -8i64..8 {
            let yy = (cy + dy).clamp(0, a.height as i64 - 1) as usize;
            let xx = (cx + dx).clamp(0, a.width as i64 - 1) as usize;
            let d = a.get(0, yy, xx) - b.get(0, yy, xx);
            acc += d * d;
        }
    }
    acc.sqrt()
}

/// One keypoint per line: `x y scale theta response d0 .. d127`.
pub fn keypoints_to_text(kps: &[(Keypoint, Descriptor)]) -> String {
    let mut out = String::new();
    for (kp, desc) in kps {
        out.push_str(&format!("{} {} {} {} {}", kp.x, kp.y, kp.scale, kp.orientation, kp.response));
        for v in desc.values() {
            out.push(' ');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    out
}

pub fn keypoints_from_text(text: &str) -> Result<Vec<(Keypoint, Descriptor)>, SiftError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 + DESCRIPTOR_LEN {
            return Err(SiftError::MalformedKeypointLine {
                line: i + 1,
                reason: format!("expected {} fields, found {}", 5 + DESCRIPTOR_LEN, fields.len()),
            });
        }
        let parse = |s: &str| -> Result<f32, SiftError> {
            s.parse().map_err(|e| SiftError::MalformedKeypointLine {
                line: i + 1,
                reason: format!("bad float {s:?}: {e}"),
            })
        };
        let kp = Keypoint {
            x: parse(fields[0])?,
            y: parse(fields[1])?,
            scale: parse(fields[2])?,
            orientation: parse(fields[3])?,
            response: parse(fields[4])?,
        };
        let mut values = [0.0f32; DESCRIPTOR_LEN];
        for (v, s) in values.iter_mut().zip(&fields[5..]) {
            *v = parse(s)?;
        }
        out.push((kp, Descriptor::new(values)));
    }
    Ok(out)
}

/// Wraps an angle into [0, 2pi). `rem_euclid` alone can round up to exactly
/// 2pi for tiny negative inputs.
pub fn wrap_angle(a: f32) -> f32 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Shortest angular distance between two angles.
pub fn angular_distance(a: f32, b: f32) -> f32 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}
