use std::fs;
use std::path::Path;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};

pub const CIFAR_RECORDS: usize = 10_000;
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;
pub const CIFAR_CLASSES: usize = 10;

/// Reads one CIFAR-10 binary batch: 10,000 records of a label byte followed
/// by the red, green and blue 32x32 planes.
pub fn load_cifar10_batch(path: &Path, split: Split) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    if bytes.len() != CIFAR_RECORDS * CIFAR_RECORD_BYTES {
        return Err(Error::Dataset(format!(
            "{}: {} bytes, expected {} ({} records of {})",
            path.display(),
            bytes.len(),
            CIFAR_RECORDS * CIFAR_RECORD_BYTES,
            CIFAR_RECORDS,
            CIFAR_RECORD_BYTES
        )));
    }
    let mut images = Vec::with_capacity(CIFAR_RECORDS * (CIFAR_RECORD_BYTES - 1));
    let mut labels = Vec::with_capacity(CIFAR_RECORDS);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        if rec[0] as usize >= CIFAR_CLASSES {
            return Err(Error::Dataset(format!(
                "{}: record {i} has label byte {}",
                path.display(),
                rec[0]
            )));
        }
        labels.push(rec[0] as usize);
        images.extend_from_slice(&rec[1..]);
    }
    Dataset::new(images, labels, [3, 32, 32], CIFAR_CLASSES, split)
}

/// Loads `data_batch_1.bin`..`data_batch_5.bin` and `test_batch.bin` from the
/// extracted binary distribution directory.
pub fn load_cifar10_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = (1..=5)
        .map(|i| load_cifar10_batch(&dir.join(format!("data_batch_{i}.bin")), Split::Train))
        .collect::<Result<Vec<_>>>()?;
    let test = load_cifar10_batch(&dir.join("test_batch.bin"), Split::Test)?;
    Ok((Dataset::concat(train)?, test))
}
