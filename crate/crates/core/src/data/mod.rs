//! Dataset ingestion, preprocessing into the shared model input space, and
//! persistence: checkpoints, normalization stats and the keypoint-graph
//! cache. One input space feeds everything downstream: images are resized
//! once (default 64x64, values in [0, 1]) and the same pixels reach the
//! SIFT extractor, the backbones and the attack loop.

pub mod cache;
pub mod checkpoint;
pub mod cifar;
pub mod digest;
pub mod ppm;
pub mod shapes;
pub mod synth;

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::image::ImageTensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: not a CIFAR-10 batch (size {len} is not a multiple of 3073)")]
    MalformedCifar { path: PathBuf, len: u64 },
    #[error("{path}: bad checkpoint magic")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { path: PathBuf, found: u16, expected: u16 },
    #[error("{path}: integrity digest mismatch (stored {stored:#018x}, computed {computed:#018x})")]
    DigestMismatch { path: PathBuf, stored: u64, computed: u64 },
    #[error("{path}: truncated file")]
    Truncated { path: PathBuf },
    #[error("checkpoint config digest {found:#018x} does not match expected {expected:#018x}")]
    ConfigDigestMismatch { expected: u64, found: u64 },
    #[error("{path}: malformed PPM: {reason}")]
    BadPpm { path: PathBuf, reason: String },
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

/// Labeled image splits. Loading is order-deterministic; any shuffling
/// happens later in the training loop under its own seed.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub train: Vec<(ImageTensor, usize)>,
    pub test: Vec<(ImageTensor, usize)>,
    pub n_classes: usize,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn validate(&self) {
        for (img, label) in self.train.iter().chain(&self.test) {
            assert!(*label < self.n_classes, "label out of range");
            debug_assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    /// Resizes every image to `size` x `size` in place.
    pub fn preprocess_to(&mut self, size: usize) {
        for (img, _) in self.train.iter_mut().chain(self.test.iter_mut()) {
            *img = preprocess(img, size);
        }
    }

    /// Truncates both splits; used by the CLI `limit` knob.
    pub fn limit(&mut self, n_train: usize, n_test: usize) {
        self.train.truncate(n_train);
        self.test.truncate(n_test);
    }
}

/// Bilinear resize into the shared square input space, clamped to [0, 1].
/// Resizing to the current size is a bit-exact pass-through.
pub fn preprocess(img: &ImageTensor, target: usize) -> ImageTensor {
    img.resize_bilinear(target, target)
}

/// Writes via a temp file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preprocess_identity_and_range() {
        let img = ImageTensor::constant(64, 64, 3, 0.5);
        assert_eq!(preprocess(&img, 64), img);
        let small = preprocess(&img, 32);
        assert_eq!(small.height, 32);
        assert!(small.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn atomic_write_creates_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out/some.txt");
        write_atomic(&path, b"payload").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"payload");
    }
}
