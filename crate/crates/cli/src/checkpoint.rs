//! Binary checkpoints.
//!
//! Layout: `MPPDECKP`, u32 version, u64 header length, JSON header, then every
//! tensor's values as little-endian f64 in header order.

use std::fs;
use std::path::Path;

use mppde_core::model::{ModelConfig, MpPdeModel};
use mppde_core::tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::dataset::{decode_f64, encode_f64};
use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"MPPDECKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_sha256: String,
    pub seed: u64,
    pub epochs: usize,
    /// Effective configuration of the training run.
    pub config: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub model: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    pub provenance: Provenance,
}

pub fn to_bytes(model: &MpPdeModel, provenance: Provenance) -> Vec<u8> {
    let header = Header {
        model: model.config().clone(),
        tensors: model.named_params().map(|(n, t)| TensorEntry { name: n.to_string(), shape: t.shape().to_vec() }).collect(),
        provenance,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in model.named_params() {
        out.extend_from_slice(&encode_f64(t.data()));
    }
    out
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<(MpPdeModel, Header)> {
    let bad = |msg: String| CliError::format(path, msg);
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}, expected {VERSION}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..).filter(|b| b.len() >= len).ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&body[..len]).map_err(|e| bad(e.to_string()))?;
    let values = &body[len..];
    let total: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if values.len() != 8 * total {
        return Err(bad(format!("payload has {} bytes, header describes {}", values.len(), 8 * total)));
    }
    let values = decode_f64(values);
    let mut offset = 0;
    let mut named = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let n: usize = t.shape.iter().product();
        named.push((t.name.clone(), Tensor::new(t.shape.clone(), values[offset..offset + n].to_vec())?));
        offset += n;
    }
    let model = MpPdeModel::from_named(header.model.clone(), named)?;
    Ok((model, header))
}

pub fn save(model: &MpPdeModel, provenance: Provenance, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, to_bytes(model, provenance)).map_err(|e| CliError::io(path, e))
}

/// `Ok(None)` when nothing exists at `path`.
pub fn load(path: &Path) -> Result<Option<(MpPdeModel, Header)>> {
    match fs::read(path) {
        Ok(bytes) => from_bytes(&bytes, path).map(Some),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(CliError::io(path, e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> MpPdeModel {
        let cfg = ModelConfig { num_layers: 1, hidden_dim: 4, bundle_size: 2, ..ModelConfig::default() };
        MpPdeModel::new(cfg, 3).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = small();
        let bytes = to_bytes(&m, Provenance::default());
        let (back, header) = from_bytes(&bytes, Path::new("x")).unwrap();
        assert_eq!(header.model, *m.config());
        for ((na, a), (nb, b)) in m.named_params().zip(back.named_params()) {
            assert_eq!(na, nb);
            assert_eq!(a.shape(), b.shape());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(to_bytes(&back, Provenance::default()), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = to_bytes(&small(), Provenance::default());
        let p = Path::new("x");
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(from_bytes(&wrong_magic, p).is_err());
        let mut wrong_version = bytes.clone();
        wrong_version[8] = 9;
        assert!(from_bytes(&wrong_version, p).is_err());
        assert!(from_bytes(&bytes[..bytes.len() - 8], p).is_err());
    }
}
