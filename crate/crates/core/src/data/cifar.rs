//! CIFAR-10 binary batch loader. Each record is one label byte followed by
//! 3072 pixel bytes: the full red plane, then green, then blue, each 32x32
//! row-major.

use std::path::Path;

use super::{io_err, DataError, Dataset};
use crate::image::ImageTensor;

pub const RECORD_BYTES: usize = 1 + 3 * 32 * 32;

const TRAIN_FILES: [&str; 5] =
    ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"];
const TEST_FILE: &str = "test_batch.bin";

pub fn class_names() -> Vec<String> {
    ["airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn read_batch(path: &Path) -> Result<Vec<(ImageTensor, usize)>, DataError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    if bytes.is_empty() || bytes.len() % RECORD_BYTES != 0 {
        return Err(DataError::MalformedCifar {
            path: path.to_path_buf(),
            len: bytes.len() as u64,
        });
    }
    let mut out = Vec::with_capacity(bytes.len() / RECORD_BYTES);
    for record in bytes.chunks_exact(RECORD_BYTES) {
        let label = record[0] as usize;
        // The on-disk plane order matches the in-memory channel-planar
        // layout, so this is a straight scale into [0, 1].
        let data: Vec<f32> = record[1..].iter().map(|&b| b as f32 / 255.0).collect();
        out.push((ImageTensor::new(32, 32, 3, data), label));
    }
    Ok(out)
}

/// Loads the standard five training batches plus the test batch from `dir`.
pub fn load_cifar10(dir: &Path) -> Result<Dataset, DataError> {
    let mut train = Vec::new();
    for name in TRAIN_FILES {
        train.extend(read_batch(&dir.join(name))?);
    }
    let test = read_batch(&dir.join(TEST_FILE))?;
    Ok(Dataset { name: "cifar10".into(), train, test, n_classes: 10, class_names: class_names() })
}

/// Writes records in the batch format; the loader's inverse, used by tests
/// and fixtures.
pub fn write_cifar10_batch(
    path: &Path,
    records: &[(ImageTensor, usize)],
) -> Result<(), DataError> {
    let mut bytes = Vec::with_capacity(records.len() * RECORD_BYTES);
    for (img, label) in records {
        assert_eq!((img.height, img.width, img.channels), (32, 32, 3), "CIFAR records are 32x32x3");
        bytes.push(*label as u8);
        for v in img.data() {
            bytes.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    super::write_atomic(path, &bytes)
}
