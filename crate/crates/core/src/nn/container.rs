//! Binary model container: `MPAR1`, a length-prefixed JSON manifest, then
//! every parameter tensor as little-endian `f32` in spec order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::Layer;
use super::model::{build_model, Model, PipelineManifest};
use super::spec::ModelSpec;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::preprocess::PreprocessConfig;
use crate::skeleton::NUM_CLASSES;

pub const MAGIC: &[u8; 5] = b"MPAR1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContainerManifest {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub preprocess: PreprocessConfig,
    pub fps: u32,
    pub window_len: usize,
    pub classes: usize,
    pub param_count: usize,
    /// Hex SHA-256 of the weight section.
    pub checksum: String,
    pub blob_shapes: Vec<Vec<usize>>,
}

fn weight_bytes(model: &Model<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(model.param_count() * 4);
    for v in model.params_flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn to_bytes(model: &Model<f32>) -> Result<Vec<u8>> {
    let weights = weight_bytes(model);
    let manifest = ContainerManifest {
        format_version: FORMAT_VERSION,
        spec: model.spec.clone(),
        preprocess: model.manifest.preprocess,
        fps: model.manifest.fps,
        window_len: model.manifest.window_len,
        classes: NUM_CLASSES,
        param_count: model.param_count(),
        checksum: hex::encode(Sha256::digest(&weights)),
        blob_shapes: model.layers.iter().flat_map(|l| l.params.iter().map(|p| p.shape().to_vec())).collect(),
    };
    let text = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + text.len() + weights.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(&weights);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model<f32>> {
    let corrupt = |m: &str| Error::CorruptContainer(m.to_string());
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(corrupt("bad magic bytes"));
    }
    let len_at = MAGIC.len();
    let text_len = u32::from_le_bytes(bytes[len_at..len_at + 4].try_into().unwrap()) as usize;
    let text_end = len_at + 4 + text_len;
    if bytes.len() < text_end {
        return Err(corrupt("truncated manifest"));
    }
    let value: serde_json::Value =
        serde_json::from_slice(&bytes[len_at + 4..text_end]).map_err(|e| corrupt(&format!("manifest: {e}")))?;
    let version = value.get("format_version").and_then(|v| v.as_u64()).ok_or_else(|| corrupt("missing format_version"))?;
    if version != FORMAT_VERSION as u64 {
        return Err(Error::VersionMismatch { found: version as u32, supported: FORMAT_VERSION });
    }
    let manifest: ContainerManifest = serde_json::from_value(value).map_err(|e| corrupt(&format!("manifest: {e}")))?;
    let weights = &bytes[text_end..];
    if hex::encode(Sha256::digest(weights)) != manifest.checksum {
        return Err(corrupt("weight checksum mismatch"));
    }
    if manifest.classes != NUM_CLASSES {
        return Err(corrupt("unsupported class count"));
    }
    manifest.spec.validate().map_err(|e| corrupt(&e.to_string()))?;
    let mut model = build_model::<f32>(&manifest.spec, 0).map_err(|e| corrupt(&e.to_string()))?;
    let shapes: Vec<Vec<usize>> = model.layers.iter().flat_map(|l| l.params.iter().map(|p| p.shape().to_vec())).collect();
    if shapes != manifest.blob_shapes || weights.len() != model.param_count() * 4 || manifest.param_count != model.param_count() {
        return Err(corrupt("weight section does not match the spec"));
    }
    let mut chunks = weights.chunks_exact(4);
    for layer in model.layers.iter_mut() {
        let Layer { params, .. } = layer;
        for p in params.iter_mut() {
            let shape = p.shape().to_vec();
            let data = chunks.by_ref().take(p.len()).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            *p = Tensor::from_vec(&shape, data)?;
        }
    }
    model.manifest = PipelineManifest { preprocess: manifest.preprocess, fps: manifest.fps, window_len: manifest.window_len };
    Ok(model)
}

pub fn save_model(model: &Model<f32>, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model<f32>> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{ConvStack, Padding};

    fn specs() -> Vec<ModelSpec> {
        vec![
            ModelSpec::td_dense((6, 4), &[5, 3], &[7]),
            ModelSpec::lstm((6, 4), &[3, 2]),
            ModelSpec::conv1d(
                (6, 4),
                &ConvStack { layers: 2, filters: 3, kernel_size: 3, stride: 2, padding: Padding::Causal, double_filters: true, pool_sections: Some(2) },
            ),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let input: Vec<f32> = (0..24).map(|i| (i as f32 * 0.37).sin()).collect();
        for spec in specs() {
            let mut model = build_model::<f32>(&spec, 11).unwrap();
            model.manifest.fps = 15;
            let bytes = to_bytes(&model).unwrap();
            let back = from_bytes(&bytes).unwrap();
            assert_eq!(back, model);
            let (a, b) = (model.predict(&input).unwrap(), back.predict(&input).unwrap());
            assert_eq!(a.0, b.0);
            assert!(a.1.iter().zip(&b.1).all(|(x, y)| x.to_bits() == y.to_bits()));
            assert_eq!(to_bytes(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn wrong_magic_is_corrupt() {
        let mut bytes = to_bytes(&build_model::<f32>(&specs()[0], 0).unwrap()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes), Err(Error::CorruptContainer(_))));
        assert!(matches!(from_bytes(b"MP"), Err(Error::CorruptContainer(_))));
    }

    #[test]
    fn flipped_weight_fails_checksum() {
        let mut bytes = to_bytes(&build_model::<f32>(&specs()[1], 0).unwrap()).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        assert!(matches!(from_bytes(&bytes), Err(Error::CorruptContainer(_))));
    }

    #[test]
    fn future_version_is_rejected() {
        let bytes = to_bytes(&build_model::<f32>(&specs()[0], 0).unwrap()).unwrap();
        let len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let text = std::str::from_utf8(&bytes[9..9 + len]).unwrap().replace("\"format_version\":1", "\"format_version\":2");
        let mut forged = Vec::new();
        forged.extend_from_slice(MAGIC);
        forged.extend_from_slice(&(text.len() as u32).to_le_bytes());
        forged.extend_from_slice(text.as_bytes());
        forged.extend_from_slice(&bytes[9 + len..]);
        assert!(matches!(from_bytes(&forged), Err(Error::VersionMismatch { found: 2, supported: 1 })));
    }

    #[test]
    fn save_and_load_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let model = build_model::<f32>(&specs()[2], 4).unwrap();
        save_model(&model, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), model);
    }
}
