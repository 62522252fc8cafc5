//! Gaussian scale space and difference-of-Gaussians pyramid.

use crate::image::ImageTensor;

use super::{SiftConfig, SiftError};

/// Single-channel float image used throughout the pyramid.
#[derive(Debug, Clone)]
pub struct GrayBuffer {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl GrayBuffer {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self { height, width, data }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    fn subsample_half(&self) -> GrayBuffer {
        let h = (self.height / 2).max(1);
        let w = (self.width / 2).max(1);
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(self.get((y * 2).min(self.height - 1), (x * 2).min(self.width - 1)));
            }
        }
        GrayBuffer::new(h, w, data)
    }
}

/// Gaussian pyramid: per octave, `scales_per_octave + 3` images with
/// in-octave blur `base_sigma * 2^(j / scales_per_octave)`.
pub struct ScaleSpace {
    pub octaves: Vec<Vec<GrayBuffer>>,
    pub scales_per_octave: usize,
    pub base_sigma: f32,
}

/// Adjacent differences of the Gaussian pyramid: `scales_per_octave + 2`
/// layers per octave.
pub struct DogPyramid {
    pub octaves: Vec<Vec<GrayBuffer>>,
}

impl ScaleSpace {
    /// Blur of the input image assumed when lifting it to `base_sigma`.
    pub const ASSUMED_INPUT_BLUR: f32 = 0.5;

    pub fn n_octaves(&self) -> usize {
        self.octaves.len()
    }
}

/// Luma conversion with weights 0.299 / 0.587 / 0.114; grayscale images pass
/// through unchanged.
pub fn to_grayscale(img: &ImageTensor) -> ImageTensor {
    if img.channels == 1 {
        return img.clone();
    }
    let n = img.height * img.width;
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        data.push(0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]);
    }
    ImageTensor::new(img.height, img.width, 1, data)
}

/// Octave count heuristic: floor(log2(min side)) - 2, at least 1.
pub fn auto_octaves(height: usize, width: usize) -> usize {
    let min_side = height.min(width) as f32;
    ((min_side.log2().floor() as i64) - 2).max(1) as usize
}

/// Builds the Gaussian scale space and its DoG pyramid from a grayscale
/// image. The minimum side must be at least 8 pixels.
pub fn build_scale_space(
    gray: &ImageTensor,
    cfg: &SiftConfig,
) -> Result<(ScaleSpace, DogPyramid), SiftError> {
    assert_eq!(gray.channels, 1, "build_scale_space expects a grayscale image");
    let min_side = gray.height.min(gray.width);
    if min_side < 8 {
        return Err(SiftError::ImageTooSmall { min_side, required: 8 });
    }
    let s = cfg.scales_per_octave;
    let n_octaves = cfg.n_octaves.unwrap_or_else(|| auto_octaves(gray.height, gray.width));

    // In-octave blur targets sigma_j = base * 2^(j/s); each image is an
    // incremental blur of the previous one.
    let sigmas: Vec<f32> =
        (0..s + 3).map(|j| cfg.base_sigma * 2f32.powf(j as f32 / s as f32)).collect();

    let base = GrayBuffer::new(gray.height, gray.width, gray.plane(0).to_vec());
    let lift = (cfg.base_sigma.powi(2) - ScaleSpace::ASSUMED_INPUT_BLUR.powi(2)).max(0.0).sqrt();
    let mut seed = gaussian_blur(&base, lift);

    let mut octaves = Vec::with_capacity(n_octaves);
    for _ in 0..n_octaves {
        let mut images = Vec::with_capacity(s + 3);
        images.push(seed);
        for j in 1..s + 3 {
            let delta = (sigmas[j].powi(2) - sigmas[j - 1].powi(2)).sqrt();
            images.push(gaussian_blur(&images[j - 1], delta));
        }
        // Image at index s carries blur 2*base: halving it restores base.
        seed = images[s].subsample_half();
        octaves.push(images);
    }

    let dog_octaves = octaves
        .iter()
        .map(|images| {
            (0..s + 2)
                .map(|j| {
                    let a = &images[j];
                    let b = &images[j + 1];
                    let data = b.data.iter().zip(&a.data).map(|(x, y)| x - y).collect();
                    GrayBuffer::new(a.height, a.width, data)
                })
                .collect()
        })
        .collect();

    Ok((
        ScaleSpace { octaves, scales_per_octave: s, base_sigma: cfg.base_sigma },
        DogPyramid { octaves: dog_octaves },
    ))
}

/// Separable Gaussian blur, kernel truncated at 4 sigma, symmetric-reflect
/// padding. A sigma of 0 is the identity.
pub fn gaussian_blur(img: &GrayBuffer, sigma: f32) -> GrayBuffer {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (4.0 * sigma).ceil() as usize;
    let mut kernel = Vec::with_capacity(2 * radius + 1);
    let inv = -1.0 / (2.0 * sigma * sigma);
    for i in -(radius as i64)..=(radius as i64) {
        kernel.push(((i * i) as f32 * inv).exp());
    }
    let total: f32 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= total;
    }

    let (h, w) = (img.height, img.width);
    // Horizontal pass.
    let mut tmp = vec![0.0f32; h * w];
    for y in 0..h {
        let row = &img.data[y * w..(y + 1) * w];
        let out = &mut tmp[y * w..(y + 1) * w];
        convolve_reflect(row, &kernel, radius, out);
    }
    // Vertical pass on transposed columns.
    let mut col_in = vec![0.0f32; h];
    let mut col_out = vec![0.0f32; h];
    let mut data = vec![0.0f32; h * w];
    for x in 0..w {
        for y in 0..h {
            col_in[y] = tmp[y * w + x];
        }
        convolve_reflect(&col_in, &kernel, radius, &mut col_out);
        for y in 0..h {
            data[y * w + x] = col_out[y];
        }
    }
    GrayBuffer::new(h, w, data)
}

fn convolve_reflect(src: &[f32], kernel: &[f32], radius: usize, out: &mut [f32]) {
    let n = src.len() as i64;
    let reflect = |mut i: i64| -> usize {
        // Symmetric reflection (edge pixel included), applied repeatedly for
        // kernels wider than the signal.
        loop {
            if i < 0 {
                i = -i - 1;
            } else if i >= n {
                i = 2 * n - 1 - i;
            } else {
                return i as usize;
            }
        }
    };
    let r = radius as i64;
    for (i, o) in out.iter_mut().enumerate() {
        let i = i as i64;
        let mut acc = 0.0f32;
        if i - r >= 0 && i + r < n {
            let base = (i - r) as usize;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * src[base + k];
            }
        } else {
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * src[reflect(i - r + k as i64)];
            }
        }
        *o = acc;
    }
}
