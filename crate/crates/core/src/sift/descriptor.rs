//! 128-dimensional gradient-histogram descriptor: a rotated, scale-normalized
//! 16x16 sample grid binned into 4x4 cells of 8 orientation bins.

use std::f32::consts::TAU;

use super::detect::{gaussian_image_for, RawKeypoint};
use super::pyramid::{GrayBuffer, ScaleSpace};

pub const DESCRIPTOR_LEN: usize = 128;
const GRID: usize = 16;
const CELLS: usize = 4;
const ORI_BINS: usize = 8;
/// Sample spacing in units of the keypoint's in-octave blur; 4 samples per
/// cell at 3 sigma per cell side.
const SPACING_FACTOR: f32 = 0.75;
/// Gaussian weighting sigma: half the window, in grid units.
const WEIGHT_SIGMA: f32 = GRID as f32 / 2.0;
const CLIP: f32 = 0.2;

/// Unit-norm descriptor with nonnegative entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    values: [f32; DESCRIPTOR_LEN],
}

impl Descriptor {
    pub fn new(values: [f32; DESCRIPTOR_LEN]) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f32; DESCRIPTOR_LEN] {
        &self.values
    }

    pub fn l2_distance(&self, other: &Descriptor) -> f32 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f32>()
            .sqrt()
    }
}

fn bilinear(img: &GrayBuffer, x: f32, y: f32) -> f32 {
    let x0 = x.floor();
    let y0 = y.floor();
    let wx = x - x0;
    let wy = y - y0;
    let xi = (x0 as i64).clamp(0, img.width as i64 - 1) as usize;
    let yi = (y0 as i64).clamp(0, img.height as i64 - 1) as usize;
    let x1 = (xi + 1).min(img.width - 1);
    let y1 = (yi + 1).min(img.height - 1);
    let top = img.get(yi, xi) * (1.0 - wx) + img.get(yi, x1) * wx;
    let bot = img.get(y1, xi) * (1.0 - wx) + img.get(y1, x1) * wx;
    top * (1.0 - wy) + bot * wy
}

/// Computes the descriptor for a keypoint with an assigned orientation.
pub fn compute_descriptor(ss: &ScaleSpace, kp: &RawKeypoint, orientation: f32) -> Descriptor {
    let img = gaussian_image_for(ss, kp);
    let spacing = SPACING_FACTOR * kp.sigma_oct;
    let (sin_t, cos_t) = orientation.sin_cos();
    let inv2s2 = -1.0 / (2.0 * WEIGHT_SIGMA * WEIGHT_SIGMA);

    let mut hist = [0.0f32; (CELLS + 2) * (CELLS + 2) * ORI_BINS];
    let cells_f = CELLS as f32;

    for iv in 0..GRID {
        let v = iv as f32 - (GRID as f32 - 1.0) / 2.0;
        for iu in 0..GRID {
            let u = iu as f32 - (GRID as f32 - 1.0) / 2.0;
            // Rotate the grid offset into image coordinates.
            let ox = (u * cos_t - v * sin_t) * spacing;
            let oy = (u * sin_t + v * cos_t) * spacing;
            let px = kp.x_oct + ox;
            let py = kp.y_oct + oy;
            if px < 1.0 || px > img.width as f32 - 2.0 || py < 1.0 || py > img.height as f32 - 2.0
            {
                continue;
            }
            let gx = bilinear(img, px + 1.0, py) - bilinear(img, px - 1.0, py);
            let gy = bilinear(img, px, py + 1.0) - bilinear(img, px, py - 1.0);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let weight = ((u * u + v * v) * inv2s2).exp();
            let phi = (gy.atan2(gx) - orientation).rem_euclid(TAU);

            // Continuous cell coordinates; +1 shifts into the padded grid.
            let rbin = v / 4.0 + (cells_f - 1.0) / 2.0 + 1.0;
            let cbin = u / 4.0 + (cells_f - 1.0) / 2.0 + 1.0;
            let obin = phi * ORI_BINS as f32 / TAU;
            trilinear_vote(&mut hist, rbin, cbin, obin, weight * mag);
        }
    }

    // Drop the padding ring, flatten (row, col, orientation).
    let mut values = [0.0f32; DESCRIPTOR_LEN];
    let stride = (CELLS + 2) * ORI_BINS;
    for r in 0..CELLS {
        for c in 0..CELLS {
            for o in 0..ORI_BINS {
                values[(r * CELLS + c) * ORI_BINS + o] =
                    hist[(r + 1) * stride + (c + 1) * ORI_BINS + o];
            }
        }
    }

    finalize(&mut values);
    Descriptor::new(values)
}

/// L2 normalize, clip every entry at 0.2, renormalize.
pub(crate) fn finalize(values: &mut [f32; DESCRIPTOR_LEN]) {
    normalize(values);
    for v in values.iter_mut() {
        *v = v.min(CLIP);
    }
    normalize(values);
}

fn trilinear_vote(hist: &mut [f32], rbin: f32, cbin: f32, obin: f32, value: f32) {
    let r0 = rbin.floor();
    let c0 = cbin.floor();
    let o0 = obin.floor();
    let dr = rbin - r0;
    let dc = cbin - c0;
    let dob = obin - o0;
    let stride = (CELLS + 2) * ORI_BINS;
    for (ri, rw) in [(r0 as i64, 1.0 - dr), (r0 as i64 + 1, dr)] {
        if ri < 0 || ri >= (CELLS + 2) as i64 {
            continue;
        }
        for (ci, cw) in [(c0 as i64, 1.0 - dc), (c0 as i64 + 1, dc)] {
            if ci < 0 || ci >= (CELLS + 2) as i64 {
                continue;
            }
            for (oi, ow) in [(o0 as i64, 1.0 - dob), (o0 as i64 + 1, dob)] {
                let o = oi.rem_euclid(ORI_BINS as i64) as usize;
                hist[ri as usize * stride + ci as usize * ORI_BINS + o] += value * rw * cw * ow;
            }
        }
    }
}

fn normalize(values: &mut [f32; DESCRIPTOR_LEN]) {
    let norm = values.iter().map(|v| v * v).sum::<f32>().sqrt();
    if norm < 1e-12 {
        // Degenerate flat patch; fall back to the uniform unit vector.
        let u = 1.0 / (DESCRIPTOR_LEN as f32).sqrt();
        values.fill(u);
    } else {
        for v in values.iter_mut() {
            *v /= norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth;
    use crate::sift::pyramid::build_scale_space;
    use crate::sift::SiftConfig;

    fn norm(d: &Descriptor) -> f32 {
        d.values().iter().map(|v| v * v).sum::<f32>().sqrt()
    }

    #[test]
    fn descriptor_has_unit_norm_and_nonnegative_entries() {
        let img = synth::checkerboard(64, 7);
        let (ss, _) = build_scale_space(&img, &SiftConfig::default()).unwrap();
        let kp = RawKeypoint {
            octave: 0,
            layer: 1.0,
            x_oct: 20.0,
            y_oct: 24.0,
            sigma_oct: 2.0,
            response: 1.0,
        };
        let d = compute_descriptor(&ss, &kp, 0.7);
        assert_eq!(d.values().len(), 128);
        assert!((norm(&d) - 1.0).abs() <= 1e-5);
        assert!(d.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn clip_stage_caps_entries_before_renormalization() {
        // Spiky raw histogram: after the first normalization and the clip
        // every entry must sit at or below CLIP; the final renormalization
        // restores unit norm.
        let mut v = [0.01f32; DESCRIPTOR_LEN];
        v[0] = 5.0;
        v[17] = 2.5;
        normalize(&mut v);
        for x in v.iter_mut() {
            *x = x.min(CLIP);
        }
        assert!(v.iter().all(|&x| x <= CLIP + 1e-7));
        normalize(&mut v);
        let n: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((n - 1.0).abs() <= 1e-5);
    }

    #[test]
    fn flat_patch_falls_back_to_uniform() {
        let img = crate::image::ImageTensor::constant(64, 64, 1, 0.5);
        let (ss, _) = build_scale_space(&img, &SiftConfig::default()).unwrap();
        let kp = RawKeypoint {
            octave: 0,
            layer: 1.0,
            x_oct: 32.0,
            y_oct: 32.0,
            sigma_oct: 2.0,
            response: 1.0,
        };
        let d = compute_descriptor(&ss, &kp, 0.0);
        assert!((norm(&d) - 1.0).abs() <= 1e-5);
    }
}
