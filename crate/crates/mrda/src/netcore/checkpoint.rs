//! Checkpoint container: JSON manifest + raw little-endian arrays.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensure_arg;
use crate::error::{MrdaError, Result};

use super::params::ParamSet;
use super::scalar::Scalar;

const MAGIC: &[u8; 8] = b"MRDACKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct CheckpointMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    /// Sha256 of the upstream checkpoint this one was trained from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_hash: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EntryHeader {
    name: String,
    shape: Vec<usize>,
    meta_mask: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: String,
    #[serde(flatten)]
    meta: CheckpointMeta,
    entries: Vec<EntryHeader>,
}

/// Serializes the parameter set; returns the sha256 hex of the file bytes.
pub fn save<T: Scalar>(params: &ParamSet<T>, meta: &CheckpointMeta, path: &Path) -> Result<String> {
    let header = Header {
        version: VERSION,
        dtype: T::DTYPE.to_string(),
        meta: meta.clone(),
        entries: params
            .iter()
            .map(|(name, e)| EntryHeader {
                name: name.clone(),
                shape: e.value.shape().to_vec(),
                meta_mask: e.meta,
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(
        MAGIC.len() + 4 + header_json.len() + params.num_scalars() * T::BYTES,
    );
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for (_, entry) in params.iter() {
        for v in entry.value.iter() {
            v.write_le(&mut bytes);
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(hex_sha256(&bytes))
}

pub fn load<T: Scalar>(path: &Path) -> Result<(ParamSet<T>, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| {
        MrdaError::MissingArtifact(format!("checkpoint {}: {e}", path.display()))
    })?;
    ensure_arg!(
        bytes.len() >= MAGIC.len() + 4 && &bytes[..8] == MAGIC,
        "{} is not a checkpoint file",
        path.display()
    );
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let header_end = 12 + header_len;
    ensure_arg!(bytes.len() >= header_end, "truncated checkpoint header");
    let header: Header = serde_json::from_slice(&bytes[12..header_end])?;
    ensure_arg!(
        header.version == VERSION,
        "unsupported checkpoint version {}",
        header.version
    );
    if header.dtype != T::DTYPE {
        return Err(MrdaError::Structural(format!(
            "checkpoint dtype {} does not match runtime dtype {}",
            header.dtype,
            T::DTYPE
        )));
    }
    let mut params = ParamSet::new();
    let mut offset = header_end;
    for entry in &header.entries {
        let n: usize = entry.shape.iter().product();
        let end = offset + n * T::BYTES;
        if end > bytes.len() {
            return Err(MrdaError::Structural(format!(
                "checkpoint truncated in entry '{}'",
                entry.name
            )));
        }
        let data: Vec<T> = bytes[offset..end]
            .chunks_exact(T::BYTES)
            .map(T::read_le)
            .collect();
        offset = end;
        let arr = ArrayD::from_shape_vec(IxDyn(&entry.shape), data)
            .map_err(|e| MrdaError::Structural(format!("entry '{}': {e}", entry.name)))?;
        params.insert(&entry.name, arr, entry.meta_mask)?;
    }
    ensure_arg!(offset == bytes.len(), "trailing bytes in checkpoint");
    Ok((params, header.meta))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex_sha256(&bytes))
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn roundtrip_preserves_values_mask_and_order() {
        let mut p = ParamSet::<f32>::new();
        p.insert("a.weight", arr1(&[1.0f32, -2.5, 3.25]).into_dyn(), true)
            .unwrap();
        p.insert("up.weight", arr1(&[0.5f32]).into_dyn(), false)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let meta = CheckpointMeta {
            stage: Some("stage1".into()),
            config_hash: Some("abc".into()),
            parent_hash: None,
        };
        let hash = save(&p, &meta, &path).unwrap();
        assert_eq!(hash, file_sha256(&path).unwrap());
        let (q, m) = load::<f32>(&path).unwrap();
        assert!(p.bitwise_eq(&q));
        assert_eq!(m.stage.as_deref(), Some("stage1"));
        let names: Vec<&String> = q.names().collect();
        assert_eq!(names, ["a.weight", "up.weight"]);
    }

    #[test]
    fn dtype_mismatch_is_structural_error() {
        let mut p = ParamSet::<f32>::new();
        p.insert("w", arr1(&[1.0f32]).into_dyn(), true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        save(&p, &CheckpointMeta::default(), &path).unwrap();
        let err = load::<f64>(&path).unwrap_err();
        assert!(matches!(err, MrdaError::Structural(_)));
    }

    #[test]
    fn missing_file_names_path() {
        let err = load::<f32>(Path::new("/nonexistent/ckpt.bin")).unwrap_err();
        assert!(matches!(err, MrdaError::MissingArtifact(_)));
    }
}
