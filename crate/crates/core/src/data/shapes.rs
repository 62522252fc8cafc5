//! Synthetic shapes corpus: four stroke/fill classes (circle, triangle,
//! square, cross) drawn with random position, scale, rotation and stroke
//! width over gently textured backgrounds. Every image is verified to
//! yield at least [`MIN_KEYPOINTS`] SIFT keypoints under the default
//! detector configuration; violating samples are redrawn deterministically.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::image::ImageTensor;
use crate::sift::{self, SiftConfig};

pub const MIN_KEYPOINTS: usize = 6;
const MAX_REDRAWS: usize = 40;

pub fn class_names(n_classes: usize) -> Vec<String> {
    ["circle", "triangle", "square", "cross"][..n_classes]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Deterministic balanced corpus: class of sample i is `i % n_classes`
/// within each split.
pub fn make_synthetic_shapes(
    n_train: usize,
    n_test: usize,
    size: usize,
    n_classes: usize,
    seed: u64,
) -> Dataset {
    assert!((1..=4).contains(&n_classes), "up to four shape classes");
    assert!(size >= 32, "images below 32 px leave no room for the shapes");
    let sift_cfg = SiftConfig::default();
    let mut master = ChaCha8Rng::seed_from_u64(seed);

    let mut draw_split = |n: usize| -> Vec<(ImageTensor, usize)> {
        (0..n)
            .map(|i| {
                let label = i % n_classes;
                let sub_seed = master.gen::<u64>();
                (generate_image(size, label, sub_seed, &sift_cfg), label)
            })
            .collect()
    };
    let train = draw_split(n_train);
    let test = draw_split(n_test);
    Dataset {
        name: "shapes".into(),
        train,
        test,
        n_classes,
        class_names: class_names(n_classes),
    }
}

/// Draws until the keypoint floor is met; the redraw loop consumes the same
/// per-image stream, so regeneration stays deterministic.
fn generate_image(size: usize, label: usize, sub_seed: u64, sift_cfg: &SiftConfig) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed);
    let mut best: Option<(usize, ImageTensor)> = None;
    for _ in 0..MAX_REDRAWS {
        let img = draw(size, label, &mut rng);
        let kps = sift::extract(&img, sift_cfg).map(|k| k.len()).unwrap_or(0);
        if kps >= MIN_KEYPOINTS {
            return img;
        }
        if best.as_ref().is_none_or(|(n, _)| kps > *n) {
            best = Some((kps, img));
        }
    }
    // Speckles make the floor all but certain; keep the densest draw if a
    // pathological stream exhausts the budget.
    best.expect("at least one draw").1
}

fn draw(size: usize, label: usize, rng: &mut ChaCha8Rng) -> ImageTensor {
    let s = size as f32;
    // Background: base level, a directional gradient, faint per-pixel noise.
    let base = rng.gen_range(0.55..0.75);
    let grad_amp = rng.gen_range(0.05..0.15);
    let grad_dir = rng.gen_range(0.0..std::f32::consts::TAU);
    let (gx, gy) = grad_dir.sin_cos();

    // Speckle dots guarantee detectable structure everywhere.
    let n_speckles = rng.gen_range(5..=8);
    let speckles: Vec<(f32, f32, f32, f32)> = (0..n_speckles)
        .map(|_| {
            let x = rng.gen_range(5.0..s - 5.0);
            let y = rng.gen_range(5.0..s - 5.0);
            let r = rng.gen_range(1.2..2.6);
            let delta = rng.gen_range(0.25..0.40) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            (x, y, r, delta)
        })
        .collect();

    // Shape placement.
    let cx = s / 2.0 + rng.gen_range(-8.0..8.0);
    let cy = s / 2.0 + rng.gen_range(-8.0..8.0);
    let radius = rng.gen_range(0.20 * s..0.34 * s);
    let theta = rng.gen_range(0.0..std::f32::consts::TAU);
    let stroke = rng.gen_range(2.5..4.5);
    let ink = rng.gen_range(0.05..0.28);
    let tint: [f32; 3] = [
        rng.gen_range(-0.03..0.03),
        rng.gen_range(-0.03..0.03),
        rng.gen_range(-0.03..0.03),
    ];

    let mut img = ImageTensor::zeros(size, size, 3);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(rng.gen::<u64>());
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f32, y as f32);
            let mut v = base + grad_amp * ((fx / s - 0.5) * gx + (fy / s - 0.5) * gy);
            for &(sx, sy, sr, delta) in &speckles {
                let d = ((fx - sx).powi(2) + (fy - sy).powi(2)).sqrt() - sr;
                v += delta * coverage(d);
            }
            let sdf = shape_sdf(label, fx - cx, fy - cy, radius, theta, stroke);
            let alpha = coverage(sdf);
            let n = noise_rng.gen_range(-0.015..0.015);
            for c in 0..3 {
                let shade = (ink + tint[c]).clamp(0.0, 1.0);
                let val = (v + n) * (1.0 - alpha) + shade * alpha;
                img.set(c, y, x, val.clamp(0.0, 1.0));
            }
        }
    }
    img
}

/// 1-pixel antialiased coverage from a signed distance.
fn coverage(sdf: f32) -> f32 {
    (0.5 - sdf).clamp(0.0, 1.0)
}

fn shape_sdf(label: usize, x: f32, y: f32, r: f32, theta: f32, stroke: f32) -> f32 {
    let (sin_t, cos_t) = theta.sin_cos();
    let rx = x * cos_t + y * sin_t;
    let ry = -x * sin_t + y * cos_t;
    match label {
        // Stroked ring.
        0 => ((x * x + y * y).sqrt() - r).abs() - stroke / 2.0,
        // Equilateral triangle outline.
        1 => {
            let verts: Vec<(f32, f32)> = (0..3)
                .map(|i| {
                    let a = std::f32::consts::TAU * i as f32 / 3.0 - std::f32::consts::FRAC_PI_2;
                    (r * a.cos(), r * a.sin())
                })
                .collect();
            polyline_distance(rx, ry, &verts) - stroke / 2.0
        }
        // Square outline (Chebyshev ring).
        2 => {
            let half = r * 0.82;
            let d = rx.abs().max(ry.abs()) - half;
            d.abs() - stroke / 2.0
        }
        // Filled plus: union of two bars.
        3 => {
            let arm = r;
            let thick = (stroke * 1.6).max(r * 0.28);
            let bar = |px: f32, py: f32, hw: f32, hh: f32| (px.abs() - hw).max(py.abs() - hh);
            bar(rx, ry, arm, thick / 2.0).min(bar(rx, ry, thick / 2.0, arm))
        }
        _ => unreachable!("label checked by caller"),
    }
}

/// Distance to a closed polyline's boundary.
fn polyline_distance(x: f32, y: f32, verts: &[(f32, f32)]) -> f32 {
    let mut best = f32::INFINITY;
    for i in 0..verts.len() {
        let (ax, ay) = verts[i];
        let (bx, by) = verts[(i + 1) % verts.len()];
        let (ex, ey) = (bx - ax, by - ay);
        let len2 = ex * ex + ey * ey;
        let t = if len2 > 0.0 { (((x - ax) * ex + (y - ay) * ey) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let (px, py) = (ax + t * ex, ay + t * ey);
        best = best.min(((x - px).powi(2) + (y - py).powi(2)).sqrt());
    }
    best
}
