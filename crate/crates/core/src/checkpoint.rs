//! "EGAC v1" checkpoints: `EGAC`, a little-endian `u32` manifest length, a
//! JSON manifest (config, parameter names, shapes, trainable flags, RNG
//! state), then each parameter's values as little-endian `f64` in manifest
//! order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::params::ModelBundle;

pub const MAGIC: &[u8; 4] = b"EGAC";
pub const VERSION: u32 = 1;

/// Seed and position of the ChaCha stream that produced the checkpoint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// Word position, stored as a decimal string because it is 128-bit.
    #[serde(with = "u128_string")]
    pub word_pos: u128,
}

mod u128_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    config: serde_json::Value,
    params: Vec<ParamEntry>,
    rng_state: RngState,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub params: ModelBundle,
    pub rng_state: RngState,
}

impl Checkpoint {
    pub fn new<C: Serialize>(config: &C, params: ModelBundle, rng_state: RngState) -> Result<Self> {
        Ok(Checkpoint {
            config: serde_json::to_value(config)?,
            params,
            rng_state,
        })
    }

    pub fn config_as<C: for<'de> Deserialize<'de>>(&self) -> Result<C> {
        Ok(serde_json::from_value(self.config.clone())?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = Manifest {
            version: VERSION,
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| ParamEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    trainable: p.trainable,
                })
                .collect(),
            rng_state: self.rng_state,
        };
        let json = serde_json::to_vec(&manifest)?;
        let len = u32::try_from(json.len()).map_err(|_| Error::format("EGAC", "manifest exceeds 4 GiB"))?;
        let payload: usize = self.params.iter().map(|p| p.value.numel() * 8).sum();
        let mut out = Vec::with_capacity(8 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.params.iter() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::format("EGAC", "bad magic"));
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let json = bytes
            .get(8..8 + len)
            .ok_or_else(|| Error::format("EGAC", "truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(json)?;
        if manifest.version != VERSION {
            return Err(Error::format("EGAC", format!("unsupported version {}", manifest.version)));
        }
        let mut cursor = 8 + len;
        let mut params = ModelBundle::new();
        for entry in manifest.params {
            let n: usize = entry.shape.iter().product();
            let raw = bytes
                .get(cursor..cursor + 8 * n)
                .ok_or_else(|| Error::format("EGAC", format!("truncated buffer for `{}`", entry.name)))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.insert(entry.name, Tensor::new(entry.shape, data)?, entry.trainable);
            cursor += 8 * n;
        }
        if cursor != bytes.len() {
            return Err(Error::format("EGAC", "trailing bytes after parameter buffers"));
        }
        Ok(Checkpoint {
            config: manifest.config,
            params,
            rng_state: manifest.rng_state,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip() {
        let mut p = ModelBundle::new();
        p.insert("backbone.a", Tensor::from_fn([2, 3], |i| (i as f64).sin() * 1e-300), false);
        p.insert("head.w", Tensor::new([2], vec![f64::MIN_POSITIVE, -0.0]).unwrap(), true);
        let ck = Checkpoint::new(
            &serde_json::json!({"d_enc": 4, "lr": 1e-5}),
            p,
            RngState {
                seed: 7,
                word_pos: u128::MAX,
            },
        )
        .unwrap();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.rng_state.word_pos, u128::MAX);
        assert!(!back.params.get("backbone.a").unwrap().trainable);
    }

    #[test]
    fn rejects_corruption() {
        assert!(Checkpoint::from_bytes(b"NOPE\0\0\0\0").is_err());
        let ck = Checkpoint::new(&serde_json::json!({}), ModelBundle::new(), RngState::default()).unwrap();
        let mut bytes = ck.to_bytes().unwrap();
        bytes.push(0);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
