//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! 1024 red, 1024 green, and 1024 blue bytes of a 32x32 image.

use std::path::{Path, PathBuf};

use super::Dataset;
use crate::error::{Error, Result};
use crate::net::InputShape;

const SIDE: usize = 32;
const RECORD: usize = 1 + 3 * SIDE * SIDE;

/// Concatenates the given batch files. Pixels are scaled to `[0, 1]`.
pub fn load_cifar(paths: &[PathBuf], classes: usize) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        read_batch(path, classes, &mut pixels, &mut labels)?;
    }
    let shape = InputShape {
        channels: 3,
        height: SIDE,
        width: SIDE,
    };
    Dataset::new(shape, classes, pixels, labels)
}

fn read_batch(
    path: &Path,
    classes: usize,
    pixels: &mut Vec<f64>,
    labels: &mut Vec<usize>,
) -> Result<()> {
    let fail = |reason: String| Error::Dataset {
        path: path.to_path_buf(),
        reason,
    };
    let bytes = std::fs::read(path).map_err(|e| fail(e.to_string()))?;
    if bytes.is_empty() || bytes.len() % RECORD != 0 {
        return Err(fail(format!(
            "length {} is not a multiple of {RECORD}",
            bytes.len()
        )));
    }
    for rec in bytes.chunks_exact(RECORD) {
        let label = rec[0] as usize;
        if label >= classes {
            return Err(fail(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        labels.push(label);
        pixels.extend(rec[1..].iter().map(|&p| p as f64 / 255.0));
    }
    Ok(())
}
