//! Small deterministic test images: checkerboards, Gaussian blobs, ramps.
//! Used by diagnostics and tests; the trainable corpus lives in `shapes`.

use crate::image::ImageTensor;

/// Checkerboard with `cell`-pixel squares, grayscale, values {0.1, 0.9}.
pub fn checkerboard(size: usize, cell: usize) -> ImageTensor {
    let mut img = ImageTensor::zeros(size, size, 1);
    for y in 0..size {
        for x in 0..size {
            let v = if ((x / cell) + (y / cell)).is_multiple_of(2) { 0.9 } else { 0.1 };
            img.set(0, y, x, v);
        }
    }
    img
}

/// Single bright Gaussian blob of the given std-dev centered at (cx, cy)
/// over a dark background.
pub fn gaussian_blob(size: usize, cx: f32, cy: f32, sigma: f32) -> ImageTensor {
    let mut img = ImageTensor::zeros(size, size, 1);
    for y in 0..size {
        for x in 0..size {
            let dx = x as f32 - cx;
            let dy = y as f32 - cy;
            let v = 0.1 + 0.8 * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            img.set(0, y, x, v);
        }
    }
    img
}

/// Linear ramp rising along +x: I(x, y) = x / (w - 1), scaled into [lo, hi].
pub fn ramp_x(size: usize, lo: f32, hi: f32) -> ImageTensor {
    let mut img = ImageTensor::zeros(size, size, 1);
    for y in 0..size {
        for x in 0..size {
            img.set(0, y, x, lo + (hi - lo) * x as f32 / (size - 1) as f32);
        }
    }
    img
}

/// Linear ramp rising along +y.
pub fn ramp_y(size: usize, lo: f32, hi: f32) -> ImageTensor {
    let mut img = ImageTensor::zeros(size, size, 1);
    for y in 0..size {
        for x in 0..size {
            img.set(0, y, x, lo + (hi - lo) * y as f32 / (size - 1) as f32);
        }
    }
    img
}

/// Translate image content by integer (dx, dy), filling vacated pixels with
/// the image's corner value. Content near borders is expected to be clear.
pub fn shift_image(img: &ImageTensor, dx: i64, dy: i64) -> ImageTensor {
    let fill = img.get(0, 0, 0);
    let mut out = ImageTensor::constant(img.height, img.width, img.channels, fill);
    for c in 0..img.channels {
        for y in 0..img.height {
            let sy = y as i64 - dy;
            if sy < 0 || sy >= img.height as i64 {
                continue;
            }
            for x in 0..img.width {
                let sx = x as i64 - dx;
                if sx < 0 || sx >= img.width as i64 {
                    continue;
                }
                out.set(c, y, x, img.get(c, sy as usize, sx as usize));
            }
        }
    }
    out
}
