//! Parameter checkpoints and 8-bit map export.
//!
//! A checkpoint file is an 8-byte magic, a little-endian `u64` header length,
//! a JSON header naming the network config and the stored vectors, then the
//! vectors as little-endian `f32`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pace::{PaceConfig, PaceGenerator};
use crate::predictor::{Predictor, PredictorConfig};
use crate::trainer::{ParamSets, TrainConfig};

const MAGIC: &[u8; 8] = b"APLSEG01";
pub const PREDICTOR_FILE: &str = "predictor.ckpt";
pub const PACE_FILE: &str = "pace.ckpt";
pub const CONFIG_FILE: &str = "train_config.json";

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    config: serde_json::Value,
    tensors: Vec<(String, usize)>,
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint { path: path.to_path_buf(), reason: reason.into() }
}

fn write_file(path: &Path, kind: &str, config: &impl Serialize, tensors: &[(&str, &[f32])]) -> Result<()> {
    let header = Header {
        kind: kind.to_owned(),
        config: serde_json::to_value(config)?,
        tensors: tensors.iter().map(|(n, v)| ((*n).to_owned(), v.len())).collect(),
    };
    let head = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + head.len() + tensors.iter().map(|t| 4 * t.1.len()).sum::<usize>());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(head.len() as u64).to_le_bytes());
    buf.extend_from_slice(&head);
    for (_, v) in tensors {
        for x in v.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn read_file<C: DeserializeOwned>(path: &Path, kind: &str) -> Result<(C, Vec<Vec<f32>>)> {
    let mut bytes = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad(path, "not a checkpoint file"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let head = bytes.get(16..16 + len).ok_or_else(|| bad(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(head).map_err(|e| bad(path, format!("bad header: {e}")))?;
    if header.kind != kind {
        return Err(bad(path, format!("expected a {kind} checkpoint, found {}", header.kind)));
    }
    let config: C = serde_json::from_value(header.config).map_err(|e| bad(path, format!("bad config: {e}")))?;
    let mut pos = 16 + len;
    let mut out = Vec::new();
    for (name, n) in &header.tensors {
        let raw = bytes.get(pos..pos + 4 * n).ok_or_else(|| bad(path, format!("truncated tensor {name}")))?;
        out.push(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect());
        pos += 4 * n;
    }
    if pos != bytes.len() {
        return Err(bad(path, "trailing bytes"));
    }
    Ok((config, out))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorCheckpoint {
    pub config: PredictorConfig,
    pub psi: Vec<f32>,
}

impl PredictorCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, "predictor", &self.config, &[("psi", &self.psi)])
    }

    /// Loads and checks the parameter count against the stored config.
    pub fn load(path: &Path) -> Result<Self> {
        let (config, mut t): (PredictorConfig, _) = read_file(path, "predictor")?;
        if t.len() != 1 {
            return Err(bad(path, "expected one parameter vector"));
        }
        let psi = t.remove(0);
        let expected = Predictor::new(config.clone())?.num_params();
        if psi.len() != expected {
            return Err(bad(path, format!("{} parameters stored, network needs {expected}", psi.len())));
        }
        Ok(Self { config, psi })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PaceCheckpoint {
    pub config: PaceConfig,
    pub phi_g: Vec<f32>,
    pub phi_v: Vec<f32>,
}

impl PaceCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, "pace", &self.config, &[("phi_g", &self.phi_g), ("phi_v", &self.phi_v)])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (config, t): (PaceConfig, _) = read_file(path, "pace")?;
        let [phi_g, phi_v]: [Vec<f32>; 2] = t.try_into().map_err(|_| bad(path, "expected two parameter vectors"))?;
        let pace = PaceGenerator::new(config.clone())?;
        if phi_g.len() != pace.gsm.num_params() || phi_v.len() != pace.pw.num_params() {
            return Err(bad(path, "parameter counts do not match the stored config"));
        }
        Ok(Self { config, phi_g, phi_v })
    }
}

/// Writes `dir/ckpt_<iteration>/` with both checkpoints and the config.
pub fn save_run_checkpoint(dir: &Path, iteration: usize, cfg: &TrainConfig, params: &ParamSets<f32>) -> Result<PathBuf> {
    let ckpt = dir.join(format!("ckpt_{iteration}"));
    fs::create_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
    PredictorCheckpoint { config: cfg.predictor.clone(), psi: params.psi.clone() }.save(&ckpt.join(PREDICTOR_FILE))?;
    PaceCheckpoint { config: cfg.pace.clone(), phi_g: params.phi_g.clone(), phi_v: params.phi_v.clone() }.save(&ckpt.join(PACE_FILE))?;
    let cfg_path = ckpt.join(CONFIG_FILE);
    fs::write(&cfg_path, serde_json::to_vec_pretty(cfg)?).map_err(|e| Error::io(&cfg_path, e))?;
    Ok(ckpt)
}

/// Accepts either a checkpoint directory or a predictor file.
pub fn load_predictor(path: &Path) -> Result<PredictorCheckpoint> {
    if path.is_dir() {
        PredictorCheckpoint::load(&path.join(PREDICTOR_FILE))
    } else {
        PredictorCheckpoint::load(path)
    }
}

/// Pace checkpoint stored next to a predictor checkpoint, if any.
pub fn load_pace_beside(path: &Path) -> Result<PaceCheckpoint> {
    let dir = if path.is_dir() { path } else { path.parent().unwrap_or(Path::new(".")) };
    PaceCheckpoint::load(&dir.join(PACE_FILE))
}

/// Quantises a `[0, 1]` map to 8 bits by rounding.
pub fn quantize(map: &[f64]) -> Vec<u8> {
    map.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

pub fn save_gray_png(path: &Path, map: &[f64], height: usize, width: usize) -> Result<()> {
    if map.len() != height * width {
        return Err(Error::Shape(format!("map has {} values for a {height}x{width} image", map.len())));
    }
    let img = image::GrayImage::from_raw(width as u32, height as u32, quantize(map)).expect("size checked above");
    img.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), source: e })
}
