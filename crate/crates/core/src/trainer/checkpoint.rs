//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "ZOACCKPT"
//! header     u32 length + UTF-8 JSON (CheckpointHeader)
//! arrays     u32 count, then per array: u64 length + length x f64
//!            order: theta, actor m, actor v, critic params, critic m,
//!            critic v, normalizer mean, normalizer m2, then for every
//!            worker its pending observation and its environment state
//! checksum   32 bytes, SHA-256 of everything above
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numkit::{AdamState, RngStream};
use crate::policies::{PolicyKind, PolicySpec};

use super::config::TrainerConfig;

pub const MAGIC: &[u8; 8] = b"ZOACCKPT";
pub const SCHEMA_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;
const FIXED_ARRAYS: usize = 8;

/// Adam scalars; the moment vectors travel as arrays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamMeta {
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamMeta {
    pub fn of(state: &AdamState) -> Self {
        Self {
            t: state.t,
            lr: state.lr,
            beta1: state.beta1,
            beta2: state.beta2,
            eps: state.eps,
        }
    }

    pub fn with_moments(&self, m: Vec<f64>, v: Vec<f64>) -> AdamState {
        AdamState {
            m,
            v,
            t: self.t,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub theta: usize,
    pub critic: usize,
    pub obs: usize,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngCounters {
    pub critic_shuffle: RngStream,
    pub worker_resets: Vec<u64>,
    pub worker_has_current: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableMeta {
    pub seed: u64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub schema_version: u32,
    pub policy: PolicySpec,
    pub dims: Dims,
    pub iteration: u64,
    pub env_steps: u64,
    pub phi: f64,
    pub sigma: f64,
    pub actor_adam: AdamMeta,
    pub critic_adam: Option<AdamMeta>,
    pub normalizer_count: u64,
    pub rng: RngCounters,
    pub noise_table: TableMeta,
    pub config: TrainerConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub theta: Vec<f64>,
    pub actor_m: Vec<f64>,
    pub actor_v: Vec<f64>,
    pub critic: Vec<f64>,
    pub critic_m: Vec<f64>,
    pub critic_v: Vec<f64>,
    pub normalizer_mean: Vec<f64>,
    pub normalizer_m2: Vec<f64>,
    pub worker_current: Vec<Vec<f64>>,
    pub worker_env: Vec<Vec<f64>>,
}

impl Checkpoint {
    fn arrays(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            &self.theta,
            &self.actor_m,
            &self.actor_v,
            &self.critic,
            &self.critic_m,
            &self.critic_v,
            &self.normalizer_mean,
            &self.normalizer_m2,
        ];
        for (cur, env) in self.worker_current.iter().zip(&self.worker_env) {
            out.push(cur);
            out.push(env);
        }
        out
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        Ok(encode_raw(&header, &self.arrays()))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptPayload(m.to_string());
        if bytes.len() < MAGIC.len() + 4 + CHECKSUM_LEN || &bytes[..MAGIC.len()] != MAGIC {
            return Err(corrupt("missing checkpoint magic"));
        }
        let (body, sum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != sum {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader {
            buf: body,
            pos: MAGIC.len(),
        };
        let header_len = r.u32()? as usize;
        let header_bytes = r.take(header_len)?;
        let header = parse_header(header_bytes)?;
        let count = r.u32()? as usize;
        let workers = header.dims.workers;
        if count != FIXED_ARRAYS + 2 * workers {
            return Err(corrupt("array count does not match the worker count"));
        }
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u64()? as usize;
            let raw = r.take(len.checked_mul(8).ok_or_else(|| corrupt("array length overflow"))?)?;
            arrays.push(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect::<Vec<f64>>(),
            );
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes after the arrays"));
        }
        let mut it = arrays.into_iter();
        let mut next = || it.next().unwrap();
        let mut ckpt = Checkpoint {
            theta: next(),
            actor_m: next(),
            actor_v: next(),
            critic: next(),
            critic_m: next(),
            critic_v: next(),
            normalizer_mean: next(),
            normalizer_m2: next(),
            worker_current: Vec::with_capacity(workers),
            worker_env: Vec::with_capacity(workers),
            header,
        };
        for _ in 0..workers {
            ckpt.worker_current.push(next());
            ckpt.worker_env.push(next());
        }
        ckpt.check_dims()?;
        Ok(ckpt)
    }

    fn check_dims(&self) -> Result<()> {
        let d = self.header.dims;
        let bad = |what: &str| Err(Error::CorruptPayload(format!("{what} has the wrong length")));
        if [&self.theta, &self.actor_m, &self.actor_v].iter().any(|a| a.len() != d.theta) {
            return bad("actor state");
        }
        if [&self.critic, &self.critic_m, &self.critic_v].iter().any(|a| a.len() != d.critic) {
            return bad("critic state");
        }
        if self.normalizer_mean.len() != d.obs || self.normalizer_m2.len() != d.obs {
            return bad("normalizer");
        }
        if self.header.rng.worker_resets.len() != d.workers || self.header.rng.worker_has_current.len() != d.workers {
            return bad("worker counters");
        }
        if self.header.policy.param_count() != d.theta {
            return bad("policy parameter vector");
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

fn encode_raw(header: &[u8], arrays: &[&[f64]]) -> Vec<u8> {
    let payload: usize = arrays.iter().map(|a| 8 + 8 * a.len()).sum();
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + header.len() + payload + CHECKSUM_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for a in arrays {
        out.extend_from_slice(&(a.len() as u64).to_le_bytes());
        for x in *a {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let sum = Sha256::digest(&out);
    out.extend_from_slice(&sum);
    out
}

fn parse_header(bytes: &[u8]) -> Result<CheckpointHeader> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| Error::CorruptPayload(format!("header: {e}")))?;
    let version = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::CorruptPayload("header lacks a schema version".into()))?;
    if version != u64::from(SCHEMA_VERSION) {
        return Err(Error::VersionMismatch {
            found: version as u32,
            expected: SCHEMA_VERSION,
        });
    }
    for kind in [&value["policy"]["kind"], &value["config"]["policy"]["kind"]] {
        if let Some(name) = kind.as_str() {
            if !PolicyKind::NAMES.contains(&name) {
                return Err(Error::UnknownPolicyKind(name.to_string()));
            }
        }
    }
    serde_json::from_value(value).map_err(|e| Error::CorruptPayload(format!("header: {e}")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptPayload("length field runs past the end of the file".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
