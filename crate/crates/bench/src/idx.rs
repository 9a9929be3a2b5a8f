//! IDX `ubyte` files: big-endian magic, dimension sizes, raw bytes.

use std::fs;
use std::path::Path;

use gr_core::{Dataset, Tensor};

use crate::error::{BenchError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| BenchError::Truncated {
            path: path.to_path_buf(),
            expected: at + 4,
            found: bytes.len(),
        })
}

/// Header dimensions and payload of one IDX file.
fn read_idx(path: &Path, magic: u32) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = fs::read(path)?;
    let found = be_u32(&bytes, 0, path)?;
    if found != magic {
        return Err(BenchError::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    let ndims = (magic & 0xff) as usize;
    let dims = (0..ndims)
        .map(|i| be_u32(&bytes, 4 + 4 * i, path).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * ndims;
    let expected = header + dims.iter().product::<usize>();
    if bytes.len() < expected {
        return Err(BenchError::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    Ok((dims, bytes[header..expected].to_vec()))
}

/// Loads an image/label pair, scaling pixels by 1/255. Three-dimensional
/// image files get one channel. The class count is the largest label plus
/// one, or `classes` when given.
pub fn load_idx_dataset(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    classes: Option<usize>,
) -> Result<Dataset<f32>> {
    let (dims, pixels) = read_idx(images.as_ref(), IMAGES_MAGIC)?;
    let (ldims, raw_labels) = read_idx(labels.as_ref(), LABELS_MAGIC)?;
    if dims[0] != ldims[0] {
        return Err(BenchError::CountMismatch {
            images: dims[0],
            labels: ldims[0],
        });
    }
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1).max(2));
    let shape = vec![dims[0], dims[1], dims[2], 1];
    let values = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    Ok(Dataset::new(Tensor::new(shape, values)?, labels, classes)?)
}

/// Writes a single-channel dataset as IDX files, pixels rounded to bytes.
pub fn write_idx_dataset(data: &Dataset<f32>, images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
    let shape = data.image_shape();
    if shape[2] != 1 {
        return Err(BenchError::InvalidConfig("IDX output supports one channel".into()));
    }
    let mut out = IMAGES_MAGIC.to_be_bytes().to_vec();
    for d in [data.len(), shape[0], shape[1]] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend(data.images().data().iter().map(|&v| (v * 255.0).round() as u8));
    fs::write(images, out)?;

    let mut out = LABELS_MAGIC.to_be_bytes().to_vec();
    out.extend_from_slice(&(data.len() as u32).to_be_bytes());
    out.extend(data.labels().iter().map(|&l| l as u8));
    fs::write(labels, out)?;
    Ok(())
}
