//! Binary checkpoints: magic, JSON header, little-endian f32 parameters.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vimpute_core::model::{ModelConfig, Network};
use vimpute_core::preprocess::PreprocessConfig;

use crate::error::{Error, IoContext, Result};

const MAGIC: &[u8; 8] = b"VIMPCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub model: ModelConfig,
    /// Preprocessing the network was trained with.
    pub preprocess: PreprocessConfig,
    /// Optimizer updates applied before this snapshot.
    pub step: u64,
    pub epoch: usize,
    pub val_loss: f64,
    pub n_params: usize,
    /// FNV-1a of the parameter bytes.
    pub checksum: u64,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: Header,
    pub network: Network<f32>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn save(path: &Path, net: &Network<f32>, preprocess: &PreprocessConfig, step: u64, epoch: usize, val_loss: f64) -> Result<()> {
    let params: Vec<u8> = net.params().iter().flat_map(|v| v.to_le_bytes()).collect();
    let header = Header {
        model: net.config().clone(),
        preprocess: preprocess.clone(),
        step,
        epoch,
        val_loss,
        n_params: net.n_params(),
        checksum: fnv1a(&params),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + json.len() + params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&params);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).at(dir)?;
    }
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, &out).at(&tmp)?;
    fs::rename(&tmp, path).at(path)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).at(path)?;
    let corrupt = |reason: &str| Error::Checkpoint { path: path.to_path_buf(), reason: reason.into() };
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(corrupt(&format!("unsupported format version {version}")));
    }
    let json_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if json_len > body.len() {
        return Err(corrupt("truncated header"));
    }
    let header: Header =
        serde_json::from_slice(&body[..json_len]).map_err(|e| corrupt(&format!("bad header: {e}")))?;
    let raw = &body[json_len..];
    if raw.len() != header.n_params * 4 {
        return Err(corrupt("parameter block has the wrong length"));
    }
    if fnv1a(raw) != header.checksum {
        return Err(corrupt("checksum mismatch"));
    }
    let params = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let network = Network::from_params(&header.model, params)?;
    Ok(Checkpoint { header, network })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig { base_features: 2, down_factors: vec![2, 2], n_resolutions: 2, latent_dim: 2, ..ModelConfig::proposed() }
    }

    #[test]
    fn round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        let net = Network::<f32>::build(&tiny(), 3).unwrap();
        save(&p, &net, &PreprocessConfig::default(), 7, 2, 0.5).unwrap();
        let ck = load(&p).unwrap();
        assert_eq!(ck.network.params(), net.params());
        assert_eq!((ck.header.step, ck.header.epoch), (7, 2));

        let mut bytes = fs::read(&p).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xFF;
        fs::write(&p, &bytes).unwrap();
        assert!(load(&p).unwrap_err().to_string().contains("checksum"));
        fs::write(&p, b"garbage").unwrap();
        assert!(load(&p).is_err());
    }
}
