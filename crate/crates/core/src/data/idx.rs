//! IDX files: big-endian magic `0x00 0x00 <type> <ndim>`, one u32 size per
//! dimension, then the raw values. Only unsigned-byte payloads are read.

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::net::InputShape;

/// Dimensions and payload of an unsigned-byte IDX file.
pub fn read_idx(path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    let fail = |reason: String| Error::Dataset {
        path: path.to_path_buf(),
        reason,
    };
    let bytes = std::fs::read(path).map_err(|e| fail(e.to_string()))?;
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(fail("missing IDX magic number".into()));
    }
    if bytes[2] != 0x08 {
        return Err(fail(format!("unsupported element type 0x{:02x}", bytes[2])));
    }
    let ndim = bytes[3] as usize;
    let header = 4 + 4 * ndim;
    if ndim == 0 || bytes.len() < header {
        return Err(fail("truncated header".into()));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize)
        .collect();
    let n: usize = dims.iter().product();
    if bytes.len() - header != n {
        return Err(fail(format!(
            "expected {n} values, found {}",
            bytes.len() - header
        )));
    }
    Ok((dims, bytes[header..].to_vec()))
}

/// Image file of shape `[n, rows, cols]` plus label file of shape `[n]`.
/// Pixels are scaled to `[0, 1]`.
pub fn load_idx(images: &Path, labels: &Path, classes: Option<usize>) -> Result<Dataset> {
    let (dims, pixels) = read_idx(images)?;
    let (ldims, raw_labels) = read_idx(labels)?;
    if dims.len() != 3 {
        return Err(Error::Dataset {
            path: images.to_path_buf(),
            reason: format!("expected 3 dimensions, found {}", dims.len()),
        });
    }
    if ldims != [dims[0]] {
        return Err(Error::Dataset {
            path: labels.to_path_buf(),
            reason: format!(
                "{} labels for {} images",
                ldims.iter().product::<usize>(),
                dims[0]
            ),
        });
    }
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let shape = InputShape {
        channels: 1,
        height: dims[1],
        width: dims[2],
    };
    Dataset::new(
        shape,
        classes,
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        labels,
    )
    .map_err(|e| Error::Dataset {
        path: images.to_path_buf(),
        reason: e.to_string(),
    })
}
