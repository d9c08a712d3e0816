//! Checkpoint directory: `manifest.json` plus `params.bin`, the parameter
//! tensors as little-endian f64 in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochRecord, Metrics, TcnConfig, TcnError, TcnParameters};
use crate::tensorize::{ClassMode, NormParams};

const FORMAT: &str = "lobwatch-tcn";
const VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const PARAMS: &str = "params.bin";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: TcnParameters,
    pub norm: NormParams,
    pub class_mode: ClassMode,
    /// Frames per window the model was trained on.
    pub window: usize,
    pub class_weights: Vec<f64>,
    pub metrics: Option<Metrics>,
    pub history: Vec<EpochRecord>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    dtype: String,
    config: TcnConfig,
    norm: NormParams,
    class_mode: ClassMode,
    window: usize,
    class_weights: Vec<f64>,
    metrics: Option<Metrics>,
    history: Vec<EpochRecord>,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(dir: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<(), TcnError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        dtype: "f64le".into(),
        config: ckpt.params.config.clone(),
        norm: ckpt.norm,
        class_mode: ckpt.class_mode,
        window: ckpt.window,
        class_weights: ckpt.class_weights.clone(),
        metrics: ckpt.metrics.clone(),
        history: ckpt.history.clone(),
        tensors: ckpt.params.layout().into_iter().map(|(name, shape)| TensorEntry { name, shape }).collect(),
    };
    let mut bytes = Vec::with_capacity(ckpt.params.parameter_count() * 8);
    for t in ckpt.params.tensors() {
        for v in t {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join(PARAMS), bytes)?;
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| TcnError::Checkpoint(e.to_string()))?;
    fs::write(dir.join(MANIFEST), json)?;
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint, TcnError> {
    let dir = dir.as_ref();
    let manifest: Manifest =
        serde_json::from_slice(&fs::read(dir.join(MANIFEST))?).map_err(|e| TcnError::Checkpoint(e.to_string()))?;
    if manifest.format != FORMAT || manifest.version != VERSION || manifest.dtype != "f64le" {
        return Err(TcnError::Checkpoint(format!(
            "unsupported format {} v{} ({})",
            manifest.format, manifest.version, manifest.dtype
        )));
    }
    if manifest.class_mode.classes() != manifest.config.classes {
        return Err(TcnError::Checkpoint("class mode disagrees with config".into()));
    }
    let bytes = fs::read(dir.join(PARAMS))?;
    if bytes.len() % 8 != 0 {
        return Err(TcnError::Checkpoint("parameter file is not a whole number of f64 values".into()));
    }
    let data: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let params = TcnParameters::from_tensors(&manifest.config, &data)?;
    let expected = params.layout();
    let declared: Vec<(String, Vec<usize>)> = manifest.tensors.into_iter().map(|t| (t.name, t.shape)).collect();
    if declared != expected {
        return Err(TcnError::Checkpoint("tensor list does not match config".into()));
    }
    if !params.is_finite() {
        return Err(TcnError::Checkpoint("non-finite parameters".into()));
    }
    Ok(Checkpoint {
        params,
        norm: manifest.norm,
        class_mode: manifest.class_mode,
        window: manifest.window,
        class_weights: manifest.class_weights,
        metrics: manifest.metrics,
        history: manifest.history,
    })
}
