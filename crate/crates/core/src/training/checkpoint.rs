//! Weight archives: safetensors files holding every parameter as `F32` plus
//! the architecture fingerprint and config in the header metadata.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, StereoModel};
use crate::tensor::{Real, Tensor};

pub const LATEST_FILE: &str = "latest";
const KEY_FINGERPRINT: &str = "fingerprint";
const KEY_CONFIG: &str = "model_config";
const KEY_STEP: &str = "step";

pub fn checkpoint_name(step: usize) -> String {
    format!("ckpt_{step}.bin")
}

fn ckpt_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn encode_checkpoint<T: Real>(model: &StereoModel<T>, step: usize) -> Result<Vec<u8>> {
    let store = &model.params;
    let raw: Vec<(String, Vec<usize>, Vec<u8>)> = store
        .names()
        .iter()
        .zip(store.values())
        .map(|(name, t)| {
            let bytes = t
                .data()
                .iter()
                .flat_map(|v| v.to_f32().unwrap_or(f32::NAN).to_le_bytes())
                .collect();
            (name.clone(), t.shape().to_vec(), bytes)
        })
        .collect();
    let views = raw
        .iter()
        .map(|(n, s, b)| TensorView::new(Dtype::F32, s.clone(), b).map(|v| (n.clone(), v)))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| ckpt_err(Path::new("<memory>"), e.to_string()))?;
    let meta = HashMap::from([
        (KEY_FINGERPRINT.to_string(), model.config().fingerprint()),
        (KEY_CONFIG.to_string(), serde_json::to_string(model.config())?),
        (KEY_STEP.to_string(), step.to_string()),
    ]);
    let bytes =
        safetensors::tensor::serialize(views, &Some(meta)).map_err(|e| ckpt_err(Path::new("<memory>"), e.to_string()))?;
    canonical_header(bytes)
}

/// Re-emits the JSON header with sorted keys. The library writes metadata
/// from a `HashMap`, so identical weights would otherwise differ byte-wise.
fn canonical_header(bytes: Vec<u8>) -> Result<Vec<u8>> {
    let err = |r: &str| ckpt_err(Path::new("<memory>"), r);
    let n = u64::from_le_bytes(bytes[..8].try_into().map_err(|_| err("short header"))?) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + n])?;
    let mut json = serde_json::to_vec(&header)?;
    json.resize(json.len().div_ceil(8) * 8, b' ');
    let mut out = Vec::with_capacity(8 + json.len() + bytes.len() - 8 - n);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&bytes[8 + n..]);
    Ok(out)
}

/// Saves `ckpt_<step>.bin` under `dir` and points `latest` at it.
pub fn save_checkpoint<T: Real>(dir: impl AsRef<Path>, model: &StereoModel<T>, step: usize) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(checkpoint_name(step));
    write_atomic(&path, &encode_checkpoint(model, step)?)?;
    write_atomic(&dir.join(LATEST_FILE), checkpoint_name(step).as_bytes())?;
    Ok(path)
}

/// A directory resolves through its `latest` pointer; a file is used as is.
pub fn resolve_checkpoint(path: impl AsRef<Path>) -> Result<PathBuf> {
    let path = path.as_ref();
    if !path.is_dir() {
        return Ok(path.to_path_buf());
    }
    let pointer = path.join(LATEST_FILE);
    let name = std::fs::read_to_string(&pointer).map_err(|e| Error::io(&pointer, e))?;
    Ok(path.join(name.trim()))
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub fingerprint: String,
    pub step: usize,
    pub tensors: HashMap<String, (Vec<usize>, Vec<f32>)>,
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = resolve_checkpoint(path)?;
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let err = |r: String| ckpt_err(&path, r);
    let (_, meta) = SafeTensors::read_metadata(&bytes).map_err(|e| err(e.to_string()))?;
    let meta = meta.metadata().clone().unwrap_or_default();
    let get = |k: &str| meta.get(k).cloned().ok_or_else(|| err(format!("metadata key {k:?} missing")));
    let config: ModelConfig = serde_json::from_str(&get(KEY_CONFIG)?).map_err(|e| err(e.to_string()))?;
    let fingerprint = get(KEY_FINGERPRINT)?;
    if config.fingerprint() != fingerprint {
        return Err(err("stored config does not match its fingerprint".into()));
    }
    let step = get(KEY_STEP)?.parse().map_err(|_| err("step is not an integer".into()))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| err(e.to_string()))?;
    let mut tensors = HashMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F32 {
            return Err(err(format!("{name}: expected F32, found {:?}", view.dtype())));
        }
        let data = view
            .data()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.insert(name, (view.shape().to_vec(), data));
    }
    Ok(Checkpoint {
        config,
        fingerprint,
        step,
        tensors,
    })
}

impl Checkpoint {
    /// Copies the stored weights into `model`, which must share the fingerprint.
    pub fn apply<T: Real>(&self, model: &mut StereoModel<T>, path: &Path) -> Result<()> {
        let expected = model.config().fingerprint();
        if expected != self.fingerprint {
            return Err(ckpt_err(
                path,
                format!(
                    "fingerprint {} does not match the requested model ({expected}); variant {} vs {}",
                    self.fingerprint,
                    self.config.backbone.variant,
                    model.config().backbone.variant
                ),
            ));
        }
        let names = model.params.names().to_vec();
        if names.len() != self.tensors.len() {
            return Err(ckpt_err(
                path,
                format!("{} tensors stored, model has {}", self.tensors.len(), names.len()),
            ));
        }
        for (name, value) in names.iter().zip(model.params.values_mut()) {
            let (shape, data) = self
                .tensors
                .get(name)
                .ok_or_else(|| ckpt_err(path, format!("tensor {name} missing")))?;
            if shape.as_slice() != value.shape() {
                return Err(ckpt_err(path, format!("{name}: stored {shape:?}, model {:?}", value.shape())));
            }
            *value = Tensor::from_vec(shape, data.iter().map(|&v| T::lit(v as f64)).collect())?;
        }
        Ok(())
    }
}

/// Rebuilds the model stored at `path`, optionally checking it against `expected`.
pub fn load_model<T: Real>(path: impl AsRef<Path>, expected: Option<&ModelConfig>) -> Result<(StereoModel<T>, usize)> {
    let path = resolve_checkpoint(path)?;
    let ckpt = read_checkpoint(&path)?;
    let cfg = expected.unwrap_or(&ckpt.config);
    let mut model = StereoModel::new(cfg, 0)?;
    ckpt.apply(&mut model, &path)?;
    Ok((model, ckpt.step))
}
