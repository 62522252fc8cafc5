//! Dense image container shared by the SIFT extractor, the backbones and the
//! attack loop. One image, one value range: f32 intensities in [0, 1],
//! stored as channel planes (all of channel 0, then channel 1, ...).

/// H x W x C image with intensities in [0, 1], channel-planar layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        assert_eq!(data.len(), height * width * channels, "pixel count mismatch");
        Self { height, width, channels, data }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::new(height, width, channels, vec![0.0; height * width * channels])
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// One channel plane as a contiguous row-major slice.
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(c, y, x, self.get(c, y, self.width - 1 - x));
                }
            }
        }
        out
    }

    /// Bilinear resize with half-pixel centers. Resizing to the current size
    /// returns a bit-exact copy. Output values are clamped to [0, 1].
    pub fn resize_bilinear(&self, new_height: usize, new_width: usize) -> Self {
        assert!(new_height > 0 && new_width > 0);
        if new_height == self.height && new_width == self.width {
            return self.clone();
        }
        let sy = self.height as f32 / new_height as f32;
        let sx = self.width as f32 / new_width as f32;
        let mut out = ImageTensor::zeros(new_height, new_width, self.channels);
        for c in 0..self.channels {
            for oy in 0..new_height {
                let fy = ((oy as f32 + 0.5) * sy - 0.5).max(0.0);
                let y0 = (fy as usize).min(self.height - 1);
                let y1 = (y0 + 1).min(self.height - 1);
                let wy = fy - y0 as f32;
                for ox in 0..new_width {
                    let fx = ((ox as f32 + 0.5) * sx - 0.5).max(0.0);
                    let x0 = (fx as usize).min(self.width - 1);
                    let x1 = (x0 + 1).min(self.width - 1);
                    let wx = fx - x0 as f32;
                    let top = self.get(c, y0, x0) * (1.0 - wx) + self.get(c, y0, x1) * wx;
                    let bot = self.get(c, y1, x0) * (1.0 - wx) + self.get(c, y1, x1) * wx;
                    out.set(c, oy, ox, (top * (1.0 - wy) + bot * wy).clamp(0.0, 1.0));
                }
            }
        }
        out
    }

    /// Adds zero-mean Gaussian noise of the given std-dev (Box-Muller) and
    /// clamps back into [0, 1].
    pub fn add_gaussian_noise<R: rand::Rng>(&self, std: f32, rng: &mut R) -> Self {
        let mut out = self.clone();
        for v in out.data_mut() {
            *v = (*v + std * standard_normal(rng)).clamp(0.0, 1.0);
        }
        out
    }

    /// FNV-1a over the raw pixel bits; used as a cache key.
    pub fn digest(&self) -> u64 {
        let mut h = crate::data::digest::Fnv1a::new();
        h.write_u64(self.height as u64);
        h.write_u64(self.width as u64);
        h.write_u64(self.channels as u64);
        for v in &self.data {
            h.write_u32(v.to_bits());
        }
        h.finish()
    }
}

/// Standard normal sample via Box-Muller.
pub fn standard_normal<R: rand::Rng>(rng: &mut R) -> f32 {
    let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
    let u2: f32 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f32::consts::TAU * u2).cos()
}
