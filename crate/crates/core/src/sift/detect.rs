//! DoG extrema detection, subpixel refinement and orientation assignment.

use std::f32::consts::TAU;

use super::pyramid::{DogPyramid, GrayBuffer, ScaleSpace};
use super::SiftConfig;

/// Detected extremum in octave-local coordinates, before orientation.
#[derive(Debug, Clone)]
pub struct RawKeypoint {
    pub octave: usize,
    /// Continuous DoG layer index after refinement.
    pub layer: f32,
    pub x_oct: f32,
    pub y_oct: f32,
    /// Blur level within the octave's coordinate frame.
    pub sigma_oct: f32,
    pub response: f32,
}

const MAX_REFINE_STEPS: usize = 5;
const OFFSET_LIMIT: f32 = 0.5;
/// Pixels skipped at each border of a DoG layer during the scan.
const BORDER: usize = 1;

pub fn detect_raw_keypoints(dog: &DogPyramid, cfg: &SiftConfig) -> Vec<RawKeypoint> {
    let s = cfg.scales_per_octave;
    let prefilter = 0.5 * cfg.contrast_threshold;
    let mut found = Vec::new();
    for (octave, layers) in dog.octaves.iter().enumerate() {
        let (h, w) = (layers[0].height, layers[0].width);
        if h < 2 * BORDER + 3 || w < 2 * BORDER + 3 {
            continue;
        }
        for layer in 1..=s {
            let (prev, curr, next) = (&layers[layer - 1], &layers[layer], &layers[layer + 1]);
            for y in BORDER + 1..h - BORDER - 1 {
                for x in BORDER + 1..w - BORDER - 1 {
                    let v = curr.get(y, x);
                    if v.abs() < prefilter || !is_extremum(prev, curr, next, y, x, v) {
                        continue;
                    }
                    if let Some(kp) = refine(layers, octave, layer, y, x, cfg) {
                        found.push(kp);
                    }
                }
            }
        }
    }
    found.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.y_oct.total_cmp(&b.y_oct))
            .then(a.x_oct.total_cmp(&b.x_oct))
    });
    found.truncate(cfg.max_keypoints);
    found
}

fn is_extremum(prev: &GrayBuffer, curr: &GrayBuffer, next: &GrayBuffer, y: usize, x: usize, v: f32) -> bool {
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for img in [prev, curr, next] {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if std::ptr::eq(img, curr) && dy == 0 && dx == 0 {
                    continue;
                }
                let n = img.get((y as i64 + dy) as usize, (x as i64 + dx) as usize);
                lo = lo.min(n);
                hi = hi.max(n);
            }
        }
    }
    (v > 0.0 && v > hi) || (v < 0.0 && v < lo)
}

/// Quadratic subpixel refinement with up to five re-centering steps; rejects
/// low-contrast and edge-like extrema.
fn refine(
    layers: &[GrayBuffer],
    octave: usize,
    layer0: usize,
    y0: usize,
    x0: usize,
    cfg: &SiftConfig,
) -> Option<RawKeypoint> {
    let s = cfg.scales_per_octave;
    let (h, w) = (layers[0].height, layers[0].width);
    let (mut layer, mut y, mut x) = (layer0, y0, x0);
    for _ in 0..MAX_REFINE_STEPS {
        let (prev, curr, next) = (&layers[layer - 1], &layers[layer], &layers[layer + 1]);
        let g = [
            (next.get(y, x) - prev.get(y, x)) / 2.0,
            (curr.get(y + 1, x) - curr.get(y - 1, x)) / 2.0,
            (curr.get(y, x + 1) - curr.get(y, x - 1)) / 2.0,
        ];
        let v2 = curr.get(y, x) * 2.0;
        let hss = next.get(y, x) + prev.get(y, x) - v2;
        let hyy = curr.get(y + 1, x) + curr.get(y - 1, x) - v2;
        let hxx = curr.get(y, x + 1) + curr.get(y, x - 1) - v2;
        let hsy = (next.get(y + 1, x) - next.get(y - 1, x) - prev.get(y + 1, x)
            + prev.get(y - 1, x))
            / 4.0;
        let hsx = (next.get(y, x + 1) - next.get(y, x - 1) - prev.get(y, x + 1)
            + prev.get(y, x - 1))
            / 4.0;
        let hyx = (curr.get(y + 1, x + 1) - curr.get(y + 1, x - 1) - curr.get(y - 1, x + 1)
            + curr.get(y - 1, x - 1))
            / 4.0;

        let det = hss * (hyy * hxx - hyx * hyx) - hsy * (hsy * hxx - hyx * hsx)
            + hsx * (hsy * hyx - hyy * hsx);
        if det.abs() < 1e-12 {
            return None;
        }
        // Solve H * offset = -g by the adjugate.
        let inv = [
            [
                (hyy * hxx - hyx * hyx) / det,
                (hsx * hyx - hsy * hxx) / det,
                (hsy * hyx - hsx * hyy) / det,
            ],
            [
                (hyx * hsx - hsy * hxx) / det,
                (hss * hxx - hsx * hsx) / det,
                (hsy * hsx - hss * hyx) / det,
            ],
            [
                (hsy * hyx - hyy * hsx) / det,
                (hsy * hsx - hss * hyx) / det,
                (hss * hyy - hsy * hsy) / det,
            ],
        ];
        let ds = -(inv[0][0] * g[0] + inv[0][1] * g[1] + inv[0][2] * g[2]);
        let dy = -(inv[1][0] * g[0] + inv[1][1] * g[1] + inv[1][2] * g[2]);
        let dx = -(inv[2][0] * g[0] + inv[2][1] * g[1] + inv[2][2] * g[2]);

        if ds.abs() <= OFFSET_LIMIT && dy.abs() <= OFFSET_LIMIT && dx.abs() <= OFFSET_LIMIT {
            let refined = curr.get(y, x) + 0.5 * (g[0] * ds + g[1] * dy + g[2] * dx);
            if refined.abs() < cfg.contrast_threshold {
                return None;
            }
            if is_edge_like(curr, y, x, cfg.edge_ratio) {
                return None;
            }
            let layer_f = layer as f32 + ds;
            return Some(RawKeypoint {
                octave,
                layer: layer_f,
                x_oct: x as f32 + dx,
                y_oct: y as f32 + dy,
                sigma_oct: cfg.base_sigma * 2f32.powf(layer_f / s as f32),
                response: refined.abs(),
            });
        }
        // Re-center on the neighboring sample and retry.
        let step = |v: f32| -> i64 { v.round().clamp(-1.0, 1.0) as i64 };
        let nl = layer as i64 + step(ds);
        let ny = y as i64 + step(dy);
        let nx = x as i64 + step(dx);
        if nl < 1
            || nl > s as i64
            || ny < (BORDER + 1) as i64
            || ny >= (h - BORDER - 1) as i64
            || nx < (BORDER + 1) as i64
            || nx >= (w - BORDER - 1) as i64
        {
            return None;
        }
        layer = nl as usize;
        y = ny as usize;
        x = nx as usize;
    }
    None
}

/// Ratio test on the 2x2 spatial Hessian: reject when
/// tr^2 / det > (r + 1)^2 / r, or when det <= 0.
fn is_edge_like(curr: &GrayBuffer, y: usize, x: usize, edge_ratio: f32) -> bool {
    let v2 = curr.get(y, x) * 2.0;
    let dyy = curr.get(y + 1, x) + curr.get(y - 1, x) - v2;
    let dxx = curr.get(y, x + 1) + curr.get(y, x - 1) - v2;
    let dxy = (curr.get(y + 1, x + 1) - curr.get(y + 1, x - 1) - curr.get(y - 1, x + 1)
        + curr.get(y - 1, x - 1))
        / 4.0;
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    if det <= 0.0 {
        return true;
    }
    tr * tr * edge_ratio > (edge_ratio + 1.0) * (edge_ratio + 1.0) * det
}

const ORI_BINS: usize = 36;
/// Window radius in units of the keypoint's in-octave blur.
const ORI_RADIUS_FACTOR: f32 = 4.5;
/// Gaussian weight sigma in units of the keypoint's in-octave blur.
const ORI_SIGMA_FACTOR: f32 = 1.5;
const ORI_PEAK_RATIO: f32 = 0.8;

/// The Gaussian image nearest the keypoint's refined blur level.
pub fn gaussian_image_for<'a>(ss: &'a ScaleSpace, kp: &RawKeypoint) -> &'a GrayBuffer {
    let images = &ss.octaves[kp.octave];
    let idx = (kp.layer.round().max(0.0) as usize).min(images.len() - 1);
    &images[idx]
}

/// Dominant gradient orientations from a 36-bin histogram over a Gaussian-
/// weighted window. Secondary peaks within 80% of the maximum yield extra
/// angles. Empty output means the window held no usable gradient.
pub fn assign_orientations(ss: &ScaleSpace, kp: &RawKeypoint) -> Vec<f32> {
    let img = gaussian_image_for(ss, kp);
    let (h, w) = (img.height as i64, img.width as i64);
    let radius = (ORI_RADIUS_FACTOR * kp.sigma_oct).round().max(1.0) as i64;
    let sigma_w = ORI_SIGMA_FACTOR * kp.sigma_oct;
    let inv2s2 = -1.0 / (2.0 * sigma_w * sigma_w);
    let cx = kp.x_oct.round() as i64;
    let cy = kp.y_oct.round() as i64;

    let mut hist = [0.0f32; ORI_BINS];
    let mut any = false;
    for dy in -radius..=radius {
        let y = cy + dy;
        if y < 1 || y >= h - 1 {
            continue;
        }
        for dx in -radius..=radius {
            let x = cx + dx;
            if x < 1 || x >= w - 1 {
                continue;
            }
            let gx = img.get(y as usize, (x + 1) as usize) - img.get(y as usize, (x - 1) as usize);
            let gy = img.get((y + 1) as usize, x as usize) - img.get((y - 1) as usize, x as usize);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            any = true;
            let weight = ((dy * dy + dx * dx) as f32 * inv2s2).exp();
            let angle = gy.atan2(gx).rem_euclid(TAU);
            // Bin centers sit at k * (TAU / bins).
            let bin = (angle * ORI_BINS as f32 / TAU).round() as usize % ORI_BINS;
            hist[bin] += weight * mag;
        }
    }
    if !any {
        return Vec::new();
    }

    // Two circular box-smoothing passes.
    for _ in 0..2 {
        let snapshot = hist;
        for k in 0..ORI_BINS {
            let l = snapshot[(k + ORI_BINS - 1) % ORI_BINS];
            let r = snapshot[(k + 1) % ORI_BINS];
            hist[k] = (l + snapshot[k] + r) / 3.0;
        }
    }

    let max = hist.iter().copied().fold(0.0f32, f32::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let mut angles = Vec::new();
    for k in 0..ORI_BINS {
        let l = hist[(k + ORI_BINS - 1) % ORI_BINS];
        let r = hist[(k + 1) % ORI_BINS];
        if hist[k] > l && hist[k] > r && hist[k] >= ORI_PEAK_RATIO * max {
            // Parabolic peak interpolation around the bin center.
            let denom = l - 2.0 * hist[k] + r;
            let offset = if denom.abs() < 1e-12 { 0.0 } else { 0.5 * (l - r) / denom };
            let angle = super::wrap_angle((k as f32 + offset) * TAU / ORI_BINS as f32);
            angles.push(angle);
        }
    }
    angles
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth;
    use crate::sift::pyramid::build_scale_space;

    fn test_kp() -> RawKeypoint {
        RawKeypoint { octave: 0, layer: 1.0, x_oct: 32.0, y_oct: 32.0, sigma_oct: 2.0, response: 1.0 }
    }

    #[test]
    fn ramp_orientation_points_along_x() {
        let img = synth::ramp_x(64, 0.1, 0.9);
        let (ss, _) = build_scale_space(&img, &SiftConfig::default()).unwrap();
        let angles = assign_orientations(&ss, &test_kp());
        assert!(!angles.is_empty());
        let bin_width = TAU / ORI_BINS as f32;
        let a = angles[0];
        let wrapped = a.min(TAU - a);
        assert!(wrapped <= bin_width, "expected ~0, got {a}");
    }

    #[test]
    fn rotated_ramp_orientation_points_along_y() {
        let img = synth::ramp_y(64, 0.1, 0.9);
        let (ss, _) = build_scale_space(&img, &SiftConfig::default()).unwrap();
        let angles = assign_orientations(&ss, &test_kp());
        assert!(!angles.is_empty());
        let bin_width = TAU / ORI_BINS as f32;
        assert!(
            (angles[0] - std::f32::consts::FRAC_PI_2).abs() <= bin_width,
            "expected ~pi/2, got {}",
            angles[0]
        );
    }

    #[test]
    fn equal_orthogonal_populations_emit_two_angles() {
        // Left half ramps along x, right half ramps along y with the same
        // slope; the window at the seam sees two equal gradient populations.
        let size = 64usize;
        let mut img = crate::image::ImageTensor::zeros(size, size, 1);
        for y in 0..size {
            for x in 0..size {
                let v = if x < size / 2 {
                    0.1 + 0.01 * x as f32
                } else {
                    0.1 + 0.01 * y as f32
                };
                img.set(0, y, x, v);
            }
        }
        let (ss, _) = build_scale_space(&img, &SiftConfig::default()).unwrap();
        let angles = assign_orientations(&ss, &test_kp());
        assert_eq!(angles.len(), 2, "expected both orthogonal peaks, got {angles:?}");
    }

    #[test]
    fn window_fully_outside_image_drops_keypoint() {
        let img = synth::ramp_x(64, 0.1, 0.9);
        let (ss, _) = build_scale_space(&img, &SiftConfig::default()).unwrap();
        let kp = RawKeypoint { x_oct: 1e5, y_oct: 1e5, ..test_kp() };
        assert!(assign_orientations(&ss, &kp).is_empty());
    }

    #[test]
    fn constant_image_detects_nothing() {
        let img = crate::image::ImageTensor::constant(64, 64, 1, 0.4);
        let cfg = SiftConfig::default();
        let (_, dog) = build_scale_space(&img, &cfg).unwrap();
        assert!(detect_raw_keypoints(&dog, &cfg).is_empty());
    }

    #[test]
    fn blob_detected_near_center() {
        let img = synth::gaussian_blob(64, 32.0, 32.0, 3.0);
        let cfg = SiftConfig::default();
        let (_, dog) = build_scale_space(&img, &cfg).unwrap();
        let kps = detect_raw_keypoints(&dog, &cfg);
        assert!(!kps.is_empty(), "blob should produce at least one keypoint");
        let hit = kps.iter().any(|kp| {
            let scale = 2f32.powi(kp.octave as i32);
            let (x, y) = (kp.x_oct * scale, kp.y_oct * scale);
            ((x - 32.0).powi(2) + (y - 32.0).powi(2)).sqrt() <= 2.0
        });
        assert!(hit, "no keypoint within 2 px of blob center: {kps:?}");
    }

    #[test]
    fn responses_respect_contrast_threshold() {
        let img = synth::checkerboard(64, 7);
        let cfg = SiftConfig::default();
        let (_, dog) = build_scale_space(&img, &cfg).unwrap();
        for kp in detect_raw_keypoints(&dog, &cfg) {
            assert!(kp.response >= cfg.contrast_threshold);
        }
    }
}
