//! Checkpoint file: length-prefixed JSON header (config hash, step, seed,
//! format version, parameter manifest) followed by raw little-endian f32
//! parameter data, then optimizer moments when present.

use super::{ModelConfig, ModelState, Param};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    dims: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model_config: ModelConfig,
    config_hash: String,
    run_config_hash: String,
    step: u64,
    seed: u64,
    params: Vec<ParamMeta>,
    has_optimizer: bool,
    optimizer_t: u64,
}

/// Optimizer moments stored alongside the parameters, aligned by order.
#[derive(Debug, Clone, Default)]
pub struct OptimMoments {
    pub t: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

/// Training bookkeeping stored with a checkpoint.
#[derive(Debug, Clone)]
pub struct CheckpointExtra {
    pub run_config_hash: String,
    pub seed: u64,
    pub optimizer: Option<OptimMoments>,
}

fn push_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn take_f32s(bytes: &[u8], at: &mut usize, n: usize) -> Result<Vec<f32>> {
    let end = *at + 4 * n;
    let slice = bytes
        .get(*at..end)
        .ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
    *at = end;
    Ok(slice
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn save_checkpoint(path: &Path, state: &ModelState, extra: &CheckpointExtra) -> Result<()> {
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        model_config: state.config.clone(),
        config_hash: state.config.hash(),
        run_config_hash: extra.run_config_hash.clone(),
        step: state.step,
        seed: extra.seed,
        params: state
            .params()
            .iter()
            .map(|p| ParamMeta { name: p.name.clone(), dims: p.tensor.dims().to_vec() })
            .collect(),
        has_optimizer: extra.optimizer.is_some(),
        optimizer_t: extra.optimizer.as_ref().map(|o| o.t).unwrap_or(0),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for p in state.params() {
        push_f32s(&mut out, p.tensor.data());
    }
    if let Some(opt) = &extra.optimizer {
        for t in opt.m.iter().chain(opt.v.iter()) {
            push_f32s(&mut out, t.data());
        }
    }
    // Write-then-rename so a crash never leaves a half-written checkpoint.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, out)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelState, CheckpointExtra)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 4 {
        return Err(Error::Format("checkpoint too short".into()));
    }
    let header_len = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    let header: Header = serde_json::from_slice(
        bytes
            .get(4..4 + header_len)
            .ok_or_else(|| Error::Format("checkpoint header truncated".into()))?,
    )?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint format version {}",
            header.format_version
        )));
    }
    if header.config_hash != header.model_config.hash() {
        return Err(Error::ConfigMismatch("stored config hash disagrees".into()));
    }
    let mut state = ModelState::init(&header.model_config)?;
    let expected: BTreeMap<&str, Vec<usize>> = state
        .params()
        .iter()
        .map(|p| (p.name.as_str(), p.tensor.dims().to_vec()))
        .collect();
    if header.params.len() != expected.len() {
        return Err(Error::Format("parameter manifest size mismatch".into()));
    }
    let mut at = 4 + header_len;
    let mut loaded: Vec<Param> = Vec::with_capacity(header.params.len());
    for meta in &header.params {
        match expected.get(meta.name.as_str()) {
            Some(dims) if *dims == meta.dims => {}
            _ => {
                return Err(Error::Format(format!(
                    "unexpected parameter {} {:?}",
                    meta.name, meta.dims
                )))
            }
        }
        let n: usize = meta.dims.iter().product();
        loaded.push(Param {
            name: meta.name.clone(),
            tensor: Tensor::new(&meta.dims, take_f32s(&bytes, &mut at, n)?)?,
        });
    }
    for p in loaded {
        state.set_param(&p.name.clone(), p.tensor);
    }
    state.step = header.step;
    let optimizer = if header.has_optimizer {
        let mut m = Vec::with_capacity(header.params.len());
        let mut v = Vec::with_capacity(header.params.len());
        for meta in &header.params {
            let n: usize = meta.dims.iter().product();
            m.push(Tensor::new(&meta.dims, take_f32s(&bytes, &mut at, n)?)?);
        }
        for meta in &header.params {
            let n: usize = meta.dims.iter().product();
            v.push(Tensor::new(&meta.dims, take_f32s(&bytes, &mut at, n)?)?);
        }
        Some(OptimMoments { t: header.optimizer_t, m, v })
    } else {
        None
    };
    if at != bytes.len() {
        return Err(Error::Format("checkpoint has trailing bytes".into()));
    }
    Ok((
        state,
        CheckpointExtra { run_config_hash: header.run_config_hash, seed: header.seed, optimizer },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trips_exactly() {
        let cfg = ModelConfig {
            latent_channels: 8,
            stem_channels: 4,
            head_embed: 8,
            head_hidden: 8,
            ..Default::default()
        };
        let mut state = ModelState::init(&cfg).unwrap();
        state.step = 17;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let extra = CheckpointExtra {
            run_config_hash: "abc123".into(),
            seed: 9,
            optimizer: Some(OptimMoments {
                t: 17,
                m: state.params().iter().map(|p| Tensor::full(p.tensor.dims(), 0.25)).collect(),
                v: state.params().iter().map(|p| Tensor::full(p.tensor.dims(), 0.5)).collect(),
            }),
        };
        save_checkpoint(&path, &state, &extra).unwrap();
        let (loaded, extra2) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.step, 17);
        assert_eq!(extra2.run_config_hash, "abc123");
        assert_eq!(extra2.seed, 9);
        for (a, b) in state.params().iter().zip(loaded.params()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor.data(), b.tensor.data());
        }
        let opt = extra2.optimizer.unwrap();
        assert_eq!(opt.t, 17);
        assert!(opt.m.iter().all(|t| t.data().iter().all(|&v| v == 0.25)));
        // Loaded state reproduces identical forward outputs.
        let x = crate::frame::Frame::zeros();
        let a = super::super::encode_object(&state, &x);
        let b = super::super::encode_object(&loaded, &x);
        assert_eq!(a.0.data(), b.0.data());
    }

    #[test]
    fn corrupted_checkpoint_is_rejected() {
        let cfg = ModelConfig {
            latent_channels: 8,
            stem_channels: 4,
            head_embed: 8,
            head_hidden: 8,
            ..Default::default()
        };
        let state = ModelState::init(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        save_checkpoint(
            &path,
            &state,
            &CheckpointExtra { run_config_hash: String::new(), seed: 0, optimizer: None },
        )
        .unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
