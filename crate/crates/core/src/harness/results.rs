//! Result files. CSV bodies are deterministic given the inputs; the wall-clock
//! timestamp only ever appears in the JSON summary.
//!
//! Schemas:
//! - trials: `seed,decoder,disruption,intensity,phase,trial,success,steps,time_s`
//! - curve: `seed,epoch,samples,train_loss,val_r_x,val_r_y`
//! - ablation: `variant,seed,r_x,r_y`
//! - memory: `arch,timesteps,param_count,online_bytes,bptt_static_bytes,bptt_dynamic_bytes`

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::memory::MemoryReport;
use super::offline::AblationRow;
use crate::baselines::CurvePoint;
use crate::error::Result;
use crate::sim::ProtocolRun;
use crate::snn::Architecture;

pub const TRIALS_HEADER: &str =
    "seed,decoder,disruption,intensity,phase,trial,success,steps,time_s";
pub const CURVE_HEADER: &str = "seed,epoch,samples,train_loss,val_r_x,val_r_y";
pub const ABLATION_HEADER: &str = "variant,seed,r_x,r_y";
pub const MEMORY_HEADER: &str =
    "arch,timesteps,param_count,online_bytes,bptt_static_bytes,bptt_dynamic_bytes";

pub fn trials_csv(runs: &[ProtocolRun]) -> String {
    let mut out = String::from(TRIALS_HEADER);
    out.push('\n');
    for run in runs {
        let (kind, intensity) = match &run.disruption {
            Some(d) => (d.kind.to_string(), d.intensity.to_string()),
            None => ("none".to_string(), "0".to_string()),
        };
        for r in &run.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.seed,
                r.decoder.as_str(),
                kind,
                intensity,
                r.phase,
                r.trial,
                u8::from(r.success),
                r.steps,
                r.time_s
            );
        }
    }
    out
}

pub fn curve_csv(curves: &[(u64, Vec<CurvePoint>)]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for (seed, curve) in curves {
        for c in curve {
            let _ = writeln!(
                out,
                "{seed},{},{},{},{},{}",
                c.epoch, c.samples, c.train_loss, c.val_r_x, c.val_r_y
            );
        }
    }
    out
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.variant, r.seed, r.r_x, r.r_y);
    }
    out
}

pub fn memory_csv(rows: &[(Architecture, MemoryReport)]) -> String {
    let mut out = String::from(MEMORY_HEADER);
    out.push('\n');
    for (a, m) in rows {
        let _ = writeln!(
            out,
            "{}-{}-{}-{},{},{},{},{},{}",
            a.n_in,
            a.n_h1,
            a.n_h2,
            a.n_out,
            m.timesteps,
            m.param_count,
            m.static_bytes_online,
            m.static_bytes_bptt,
            m.dynamic_bytes_bptt
        );
    }
    out
}

/// Hex SHA-256 of the value's JSON encoding.
pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub command: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub created_unix_s: u64,
    pub outputs: Vec<String>,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub metrics: serde_json::Value,
}

impl RunSummary {
    pub fn new<T: Serialize>(command: &str, cfg: &T, seeds: &[u64]) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            config_hash: config_hash(cfg)?,
            seeds: seeds.to_vec(),
            created_unix_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            outputs: Vec::new(),
            config: serde_json::to_value(cfg)?,
            metrics: serde_json::Value::Null,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
