//! Binary checkpoints of a trained score network and its schedule.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 8     | magic `CDPCKPT\0`                         |
//! | 4     | header length `h` (u32)                   |
//! | h     | UTF-8 JSON header                         |
//! | 8     | parameter count `p` (u64)                 |
//! | 8 p   | parameters as f64, in header layout order |
//!
//! The header records the schema version, architecture, schedule, the
//! ordered parameter layout and optional training metadata.

use std::path::Path;

use cdp_core::diffusion::{build_schedule, NetArch, NoiseSchedule, ParamBlock, ScheduleSpec, ScoreNet, TrainOpts};
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{RunError, RunResult};

pub const MAGIC: &[u8; 8] = b"CDPCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("truncated: need {need} bytes, file has {have}")]
    Truncated { need: usize, have: usize },
    #[error("unsupported checkpoint version {found}, expected {CHECKPOINT_VERSION}")]
    Version { found: u64 },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("layout mismatch: {0}")]
    Layout(String),
    #[error("{0} trailing bytes after the parameters")]
    Trailing(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMeta {
    pub opts: TrainOpts,
    pub initial_loss: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    arch: NetArch,
    schedule: ScheduleSpec,
    layout: Vec<ParamBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    training: Option<TrainingMeta>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: ScoreNet,
    pub schedule: NoiseSchedule,
    pub training: Option<TrainingMeta>,
}

pub fn encode(net: &ScoreNet, sched: &NoiseSchedule, training: Option<&TrainingMeta>) -> Vec<u8> {
    let header = Header {
        version: CHECKPOINT_VERSION,
        arch: net.arch().clone(),
        schedule: *sched.spec(),
        layout: net.arch().layout(),
        training: training.cloned(),
    };
    let json = serde_json::to_vec(&header).expect("headers serialize");
    let params = net.params();
    let mut out = Vec::with_capacity(8 + 4 + json.len() + 8 + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let need = self.pos.checked_add(n).ok_or(CheckpointError::Truncated {
            need: usize::MAX,
            have: self.bytes.len(),
        })?;
        if need > self.bytes.len() {
            return Err(CheckpointError::Truncated { need, have: self.bytes.len() });
        }
        let out = &self.bytes[self.pos..need];
        self.pos = need;
        Ok(out)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let len = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
    let raw = r.take(len)?;
    let value: serde_json::Value =
        serde_json::from_slice(raw).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let found = value
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| CheckpointError::Header("missing version".into()))?;
    if found != CHECKPOINT_VERSION as u64 {
        return Err(CheckpointError::Version { found });
    }
    let header: Header =
        serde_json::from_value(value).map_err(|e| CheckpointError::Header(e.to_string()))?;
    header.arch.validate().map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.layout != header.arch.layout() {
        return Err(CheckpointError::Layout("recorded layout differs from the architecture".into()));
    }
    if header.arch.horizon != header.schedule.steps() {
        return Err(CheckpointError::Layout(format!(
            "net horizon {} but schedule has {} steps",
            header.arch.horizon,
            header.schedule.steps()
        )));
    }
    let count = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let expected = header.arch.param_count() as u64;
    if count != expected {
        return Err(CheckpointError::Layout(format!("{count} parameters stored, layout needs {expected}")));
    }
    let data = r.take(8 * count as usize)?;
    let params: Array1<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if r.pos != bytes.len() {
        return Err(CheckpointError::Trailing(bytes.len() - r.pos));
    }
    let net = ScoreNet::from_params(header.arch, params).map_err(|e| CheckpointError::Layout(e.to_string()))?;
    let schedule = build_schedule(header.schedule).map_err(|e| CheckpointError::Header(e.to_string()))?;
    Ok(Checkpoint { net, schedule, training: header.training })
}

pub fn save_checkpoint(
    net: &ScoreNet,
    sched: &NoiseSchedule,
    training: Option<&TrainingMeta>,
    path: &Path,
) -> RunResult<()> {
    std::fs::write(path, encode(net, sched, training)).map_err(|e| RunError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> RunResult<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| RunError::io(path, e))?;
    decode(&bytes).map_err(|source| RunError::Checkpoint { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (ScoreNet, NoiseSchedule) {
        let arch = NetArch { dim: 2, hidden: vec![5, 3], time_features: 2, classes: 2, horizon: 20 };
        let net = ScoreNet::new(arch, 3).unwrap();
        let sched = build_schedule(ScheduleSpec::scaled_linear(20)).unwrap();
        (net, sched)
    }

    #[test]
    fn encode_decode_encode_is_stable() {
        let (net, sched) = sample();
        let meta = TrainingMeta { opts: TrainOpts::default(), initial_loss: 2.25, final_loss: 0.1 + 0.2 };
        let bytes = encode(&net, &sched, Some(&meta));
        let back = decode(&bytes).unwrap();
        assert_eq!(back.net, net);
        assert_eq!(back.schedule, sched);
        assert_eq!(back.training.as_ref(), Some(&meta));
        assert_eq!(encode(&back.net, &back.schedule, back.training.as_ref()), bytes);
    }

    #[test]
    fn damaged_files_are_rejected() {
        let (net, sched) = sample();
        let bytes = encode(&net, &sched, None);
        assert!(matches!(decode(&bytes[..5]), Err(CheckpointError::BadMagic)));
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(CheckpointError::Truncated { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode(&extra), Err(CheckpointError::Trailing(1))));

        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(matches!(decode(&wrong_magic), Err(CheckpointError::BadMagic)));

        let text = String::from_utf8_lossy(&bytes[12..]).to_string();
        let at = text.find("\"version\":1").unwrap() + 12 + "\"version\":".len();
        let mut bumped = bytes.clone();
        bumped[at] = b'9';
        assert!(matches!(decode(&bumped), Err(CheckpointError::Version { found: 9 })));

        let mut garbled = bytes.clone();
        garbled[13] = b'#';
        assert!(matches!(decode(&garbled), Err(CheckpointError::Header(_))));

        let mut huge = bytes;
        huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode(&huge), Err(CheckpointError::Truncated { .. })));
    }
}
