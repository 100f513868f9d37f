//! Datasets on disk: `<stem>.json` metadata next to a `<stem>.bin` payload of
//! little-endian f64 in `[n_traj][n_t][n_x]` order.

use std::fs;
use std::path::{Path, PathBuf};

use mppde_core::classical::{SolveConfig, TrajectorySet};
use mppde_core::pde::{ForcingTerm, Grid, PdeParams, Preset, PresetConfig, Trajectory};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub params: PdeParams,
    pub forcing: ForcingTerm,
    pub initial: ForcingTerm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayloadMeta {
    pub file: String,
    pub dtype: String,
    pub shape: [usize; 3],
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub label: String,
    pub preset: Option<Preset>,
    pub preset_config: Option<PresetConfig>,
    pub seed: u64,
    pub grid: Grid,
    pub solve_config: SolveConfig,
    pub trajectories: Vec<TrajectoryMeta>,
    pub payload: PayloadMeta,
    /// Effective configuration of the command that wrote the file.
    pub config: serde_json::Value,
}

/// `data/e1`, `data/e1.json` and `data/e1.bin` all name the same dataset.
pub fn paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json" | "bin") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".json"), with(".bin"))
}

pub fn encode_f64(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_f64(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes both files and returns the metadata.
pub fn save(set: &TrajectorySet, path: &Path, config: serde_json::Value) -> Result<DatasetMeta> {
    let (meta_path, bin_path) = paths(path);
    let values: Vec<f64> = set.trajectories.iter().flat_map(|t| t.u.iter().copied()).collect();
    let payload = encode_f64(&values);
    let meta = DatasetMeta {
        format_version: FORMAT_VERSION,
        label: set.label.clone(),
        preset: set.preset,
        preset_config: set.preset_config.clone(),
        seed: set.seed,
        grid: set.grid.clone(),
        solve_config: set.solve_config.clone(),
        trajectories: set
            .trajectories
            .iter()
            .map(|t| TrajectoryMeta { params: t.params, forcing: t.forcing.clone(), initial: t.initial.clone() })
            .collect(),
        payload: PayloadMeta {
            file: bin_path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            dtype: "f64-le".into(),
            shape: [set.trajectories.len(), set.grid.n_t, set.grid.n_x],
            bytes: payload.len(),
            sha256: sha256_hex(&payload),
        },
        config,
    };
    if let Some(dir) = meta_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    text.push('\n');
    fs::write(&meta_path, text).map_err(|e| CliError::io(&meta_path, e))?;
    fs::write(&bin_path, &payload).map_err(|e| CliError::io(&bin_path, e))?;
    Ok(meta)
}

pub fn load_meta(path: &Path) -> Result<DatasetMeta> {
    let (meta_path, _) = paths(path);
    let text = fs::read_to_string(&meta_path).map_err(|e| CliError::io(&meta_path, e))?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::format(&meta_path, e.to_string()))?;
    let version = raw.get("format_version").and_then(|v| v.as_u64());
    if version != Some(u64::from(FORMAT_VERSION)) {
        return Err(CliError::format(
            &meta_path,
            format!("unsupported dataset format version {version:?}, expected {FORMAT_VERSION}"),
        ));
    }
    serde_json::from_value(raw).map_err(|e| CliError::format(&meta_path, e.to_string()))
}

pub fn load(path: &Path) -> Result<(TrajectorySet, DatasetMeta)> {
    let meta = load_meta(path)?;
    let (meta_path, bin_path) = paths(path);
    let bytes = fs::read(&bin_path).map_err(|e| CliError::io(&bin_path, e))?;
    let [n_traj, n_t, n_x] = meta.payload.shape;
    let expected = 8 * n_traj * n_t * n_x;
    if bytes.len() != expected || meta.payload.bytes != expected {
        return Err(CliError::format(&bin_path, format!("payload has {} bytes, expected {expected}", bytes.len())));
    }
    if sha256_hex(&bytes) != meta.payload.sha256 {
        return Err(CliError::format(&bin_path, "payload checksum does not match the metadata"));
    }
    if meta.trajectories.len() != n_traj || meta.grid.n_t != n_t || meta.grid.n_x != n_x {
        return Err(CliError::format(&meta_path, "payload shape disagrees with grid or trajectory list"));
    }
    let values = decode_f64(&bytes);
    let trajectories = meta
        .trajectories
        .iter()
        .zip(values.chunks_exact(n_t * n_x))
        .map(|(m, u)| Trajectory::new(meta.grid.clone(), m.params, m.forcing.clone(), m.initial.clone(), u.to_vec()))
        .collect::<mppde_core::Result<Vec<_>>>()?;
    let set = TrajectorySet {
        label: meta.label.clone(),
        preset: meta.preset,
        preset_config: meta.preset_config.clone(),
        seed: meta.seed,
        grid: meta.grid.clone(),
        solve_config: meta.solve_config.clone(),
        trajectories,
    };
    Ok((set, meta))
}
