//! Binary model files.
//!
//! Layout: the 7 magic bytes `GRCNN1\0`, a one-byte format version (1), an
//! 8-byte little-endian length `L`, `L` bytes of UTF-8 JSON descriptor, then
//! every parameter tensor in descriptor order as little-endian `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArchitectureDescriptor, EpochLoss, ModelState};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

pub const MAGIC: &[u8; 7] = b"GRCNN1\0";
pub const FORMAT_VERSION: u8 = 1;
/// Magic, version byte and descriptor length.
pub const HEADER_LEN: usize = 7 + 1 + 8;

/// JSON descriptor: the architecture plus seed lineage and history.
#[derive(Debug, Serialize, Deserialize)]
struct Descriptor {
    #[serde(flatten)]
    architecture: ArchitectureDescriptor,
    init_seed: u64,
    #[serde(default)]
    history: Vec<EpochLoss>,
}

pub fn to_bytes<T: Scalar>(model: &ModelState<T>) -> Result<Vec<u8>> {
    let descriptor = serde_json::to_vec(&Descriptor {
        architecture: model.architecture().clone(),
        init_seed: model.init_seed(),
        history: model.history().to_vec(),
    })?;
    let mut out = Vec::with_capacity(HEADER_LEN + descriptor.len() + 4 * model.param_count());
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(descriptor.len() as u64).to_le_bytes());
    out.extend_from_slice(&descriptor);
    for t in model.params() {
        for &v in t.data() {
            out.extend_from_slice(&v.to_f32_le());
        }
    }
    Ok(out)
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<ModelState<T>> {
    if bytes.len() < MAGIC.len() {
        return Err(Error::Truncated(format!("{} bytes, no magic", bytes.len())));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated("header".into()));
    }
    let version = bytes[7];
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch(version));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let body = &bytes[HEADER_LEN..];
    let len = usize::try_from(len)
        .ok()
        .filter(|&l| l <= body.len())
        .ok_or_else(|| Error::Truncated(format!("descriptor of {len} bytes")))?;
    let descriptor: Descriptor = serde_json::from_slice(&body[..len])?;
    let shapes = descriptor.architecture.param_shapes()?;
    let mut cursor = &body[len..];
    let mut params = Vec::with_capacity(shapes.len());
    for (name, shape) in shapes {
        let n = numel(&shape);
        if cursor.len() < 4 * n {
            return Err(Error::Truncated(format!("parameter `{name}`")));
        }
        let (raw, rest) = cursor.split_at(4 * n);
        let values = raw
            .chunks_exact(4)
            .map(|c| T::from_f32_le(c.try_into().expect("4 bytes")))
            .collect();
        params.push(Tensor::new(shape, values)?);
        cursor = rest;
    }
    if !cursor.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} trailing bytes after the last parameter",
            cursor.len()
        )));
    }
    ModelState::from_parts(
        descriptor.architecture,
        params,
        descriptor.init_seed,
        descriptor.history,
    )
}

pub fn save_model<T: Scalar>(model: &ModelState<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelState<T>> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::model::TrainParams;

    fn trained() -> ModelState<f32> {
        let arch = ArchitectureDescriptor::desk([8, 8, 1], 2);
        let m = ModelState::build(&arch, 11).unwrap();
        let images = Tensor::from_fn(vec![4, 8, 8, 1], |i| ((i * 7) % 11) as f32 / 10.0);
        let data = Dataset::new(images, vec![0, 1, 0, 1], 2).unwrap();
        let hp = TrainParams {
            epochs: 2,
            batch_size: 2,
            ..TrainParams::default()
        };
        m.train(&data, &hp).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = trained();
        let back: ModelState<f32> = from_bytes(&to_bytes(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(back.same_weights(&m));
        assert_eq!(back.history(), m.history());
    }

    #[test]
    fn file_size_follows_format() {
        let m = trained();
        let bytes = to_bytes(&m).unwrap();
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), HEADER_LEN + len + 4 * m.param_count());
        // 8×8×1 desk net: 80 + 1168 + (2·2·16)·32+32 + 32·2+2
        assert_eq!(m.param_count(), 80 + 1168 + 2080 + 66);
    }

    #[test]
    fn distinct_errors() {
        let bytes = to_bytes(&trained()).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes::<f32>(&bad), Err(Error::BadMagic)));

        let mut bad = bytes.clone();
        bad[7] = 2;
        assert!(matches!(from_bytes::<f32>(&bad), Err(Error::VersionMismatch(2))));

        let short = &bytes[..bytes.len() - 3];
        assert!(matches!(from_bytes::<f32>(short), Err(Error::Truncated(_))));
        assert!(matches!(from_bytes::<f32>(&bytes[..10]), Err(Error::Truncated(_))));

        let mut bad = bytes.clone();
        bad[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(from_bytes::<f32>(&bad), Err(Error::Truncated(_))));
    }

    #[test]
    fn descriptor_is_plain_json() {
        let bytes = to_bytes(&trained()).unwrap();
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let v: serde_json::Value = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
        assert_eq!(v["input"], serde_json::json!([8, 8, 1]));
        assert_eq!(v["layers"][0]["kind"], "conv");
        assert_eq!(v["layers"][0]["padding"], "same");
        assert_eq!(v["init_seed"], 11);
    }
}
