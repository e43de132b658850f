use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use neurodecode::harness::{OfflineConfig, OfflineMode, SyntheticConfig};
use neurodecode::plasticity::PlasticityConfig;
use neurodecode::sim::ClosedLoopConfig;
use neurodecode::snn::{Architecture, LifParams};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfflineSection {
    pub arch: Architecture,
    pub lif: LifParams,
    pub plasticity_batched: PlasticityConfig,
    pub plasticity_timestepwise: PlasticityConfig,
    pub training: OfflineConfig,
    pub synthetic: SyntheticConfig,
    /// Seed of the generated dataset; network seeds come from `--seeds`.
    pub data_seed: u64,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for OfflineSection {
    fn default() -> Self {
        Self {
            arch: Architecture::new(96, 256, 128, 2).expect("valid"),
            lif: LifParams::default(),
            plasticity_batched: PlasticityConfig::default(),
            plasticity_timestepwise: PlasticityConfig::offline_timestepwise(),
            training: OfflineConfig::default(),
            synthetic: SyntheticConfig::default(),
            data_seed: 0,
            train_fraction: 0.7,
            val_fraction: 0.15,
        }
    }
}

impl OfflineSection {
    pub fn plasticity(&self, mode: OfflineMode) -> PlasticityConfig {
        match mode {
            OfflineMode::Batched => self.plasticity_batched.clone(),
            OfflineMode::Timestepwise => self.plasticity_timestepwise.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.lif.validate()?;
        self.plasticity_batched.validate()?;
        self.plasticity_timestepwise.validate()?;
        self.training.validate()?;
        let (t, v) = (self.train_fraction, self.val_fraction);
        if !(t > 0.0 && v > 0.0 && t + v <= 1.0) {
            bail!("train_fraction and val_fraction must be positive with sum <= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub offline: OfflineSection,
    pub closed_loop: ClosedLoopConfig,
}

impl ExperimentConfig {
    /// Defaults, then the optional config file, then `key.path=value` overrides.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(Self::default())?;
        if let Some(path) = file {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let patch: Value = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            merge(&mut value, patch, "")?;
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Self = serde_json::from_value(value)?;
        cfg.offline.validate()?;
        cfg.closed_loop.validate()?;
        Ok(cfg)
    }
}

fn merge(base: &mut Value, patch: Value, path: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let here = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                let slot = b
                    .get_mut(&k)
                    .ok_or_else(|| anyhow!("unknown config key '{here}'"))?;
                merge(slot, v, &here)?;
            }
            Ok(())
        }
        (b, p) => {
            *b = p;
            Ok(())
        }
    }
}

/// Applies `a.b.c=value`. The value is read as JSON when it parses, else as a string.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override '{spec}' is not of the form key=value"))?;
    let mut slot = &mut *root;
    for part in key.split('.') {
        slot = slot
            .get_mut(part)
            .ok_or_else(|| anyhow!("unknown config key '{key}'"))?;
    }
    *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

/// Parses `1,2,3`, `1..10` (inclusive) or mixtures such as `1..3,7`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
            if a > b {
                bail!("empty seed range '{part}'");
            }
            seeds.extend(a..=b);
        } else {
            seeds.push(part.parse().with_context(|| format!("bad seed '{part}'"))?);
        }
    }
    if seeds.is_empty() {
        bail!("seed list is empty");
    }
    Ok(seeds)
}
