//! Uncompressed PPM/PGM reading and P6 writing; the CLI's image
//! interchange format. 8-bit maxval only.

use std::path::Path;

use super::{io_err, write_atomic, DataError};
use crate::image::ImageTensor;

/// Reads a binary PPM (P6) or PGM (P5) file with maxval 255.
pub fn read_ppm(path: &Path) -> Result<ImageTensor, DataError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let bad = |reason: &str| DataError::BadPpm { path: path.to_path_buf(), reason: reason.into() };

    let mut pos = 0usize;
    let mut fields: Vec<String> = Vec::new();
    while fields.len() < 4 {
        if pos >= bytes.len() {
            return Err(bad("truncated header"));
        }
        match bytes[pos] {
            b'#' => {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            }
            c if c.is_ascii_whitespace() => pos += 1,
            _ => {
                let start = pos;
                while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
                    pos += 1;
                }
                fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
            }
        }
    }
    // Exactly one whitespace byte separates the header from the pixel data.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("missing header terminator"));
    }
    pos += 1;

    let channels = match fields[0].as_str() {
        "P6" => 3usize,
        "P5" => 1usize,
        other => return Err(bad(&format!("unsupported format {other:?}"))),
    };
    let width: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let maxval: usize = fields[3].parse().map_err(|_| bad("bad maxval"))?;
    if maxval != 255 {
        return Err(bad(&format!("unsupported maxval {maxval}")));
    }
    let need = width * height * channels;
    let pixels = &bytes[pos..];
    if pixels.len() < need {
        return Err(bad(&format!("expected {need} pixel bytes, found {}", pixels.len())));
    }

    let mut img = ImageTensor::zeros(height, width, channels);
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                let v = pixels[(y * width + x) * channels + c] as f32 / 255.0;
                img.set(c, y, x, v);
            }
        }
    }
    Ok(img)
}

/// Writes a binary P6 PPM (grayscale images are replicated across RGB).
/// The write is atomic.
pub fn write_ppm(path: &Path, img: &ImageTensor) -> Result<(), DataError> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..3 {
                let ch = if img.channels == 1 { 0 } else { c };
                out.push((img.get(ch, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    write_atomic(path, &out)
}
