use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::population::SyntheticPopulation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisruptionKind {
    Remap,
    Drift,
    Dropout,
}

impl DisruptionKind {
    pub const ALL: [DisruptionKind; 3] = [
        DisruptionKind::Remap,
        DisruptionKind::Drift,
        DisruptionKind::Dropout,
    ];
}

impl fmt::Display for DisruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DisruptionKind::Remap => "remap",
            DisruptionKind::Drift => "drift",
            DisruptionKind::Dropout => "dropout",
        })
    }
}

impl FromStr for DisruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "remap" => Ok(Self::Remap),
            "drift" => Ok(Self::Drift),
            "dropout" => Ok(Self::Dropout),
            _ => Err(Error::InvalidConfig(format!(
                "unknown disruption '{s}' (expected remap, drift or dropout)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisruptionSpec {
    pub kind: DisruptionKind,
    pub intensity: f64,
}

impl DisruptionSpec {
    pub fn new(kind: DisruptionKind, intensity: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&intensity) {
            return Err(Error::InvalidConfig(format!(
                "intensity {intensity} outside [0, 1]"
            )));
        }
        Ok(Self { kind, intensity })
    }
}

/// `k` distinct indices from `0..n` (Floyd's algorithm), returned sorted.
pub fn floyd_sample(n: usize, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let k = k.min(n);
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    for j in n - k..n {
        let t = rng.gen_range(0..=j);
        if chosen.contains(&t) {
            chosen.push(j);
        } else {
            chosen.push(t);
        }
    }
    chosen.sort_unstable();
    chosen
}

fn count(fraction: f64, n: usize) -> usize {
    // the tiny bias keeps products like 0.95·96 from flooring a hair low
    ((fraction * n as f64) + 1e-9).floor() as usize
}

/// Reassigns the preferred direction of `min(0.95, 1.9λ)` of the units to a
/// random angle plus a coin-flip half turn.
pub fn apply_remap(pop: &mut SyntheticPopulation, lambda: f64, rng: &mut impl Rng) -> Vec<usize> {
    let n = count((1.9 * lambda).min(0.95), pop.len());
    let idx = floyd_sample(pop.len(), n, rng);
    for &i in &idx {
        let flip = if rng.gen_bool(0.5) { PI } else { 0.0 };
        let theta = rng.gen_range(0.0..TAU) + flip;
        pop.directions[i] = [theta.cos(), theta.sin()];
    }
    idx
}

/// Degrades rate parameters and raises noise; `r_max` is floored at 0.
pub fn apply_drift(pop: &mut SyntheticPopulation, lambda: f64) {
    pop.r_max = (pop.r_max * (1.0 - 1.6 * lambda)).max(0.0);
    pop.r_min *= 1.0 + 6.0 * lambda;
    pop.sigma = (pop.sigma * (1.0 + 4.0 * lambda)).min(0.4);
}

/// Silences `min(0.9, 1.8λ)` of the units.
pub fn apply_dropout(pop: &mut SyntheticPopulation, lambda: f64, rng: &mut impl Rng) -> Vec<usize> {
    let n = count((1.8 * lambda).min(0.9), pop.len());
    let idx = floyd_sample(pop.len(), n, rng);
    for &i in &idx {
        pop.mask[i] = false;
    }
    idx
}

pub fn apply_disruption(pop: &mut SyntheticPopulation, spec: &DisruptionSpec, rng: &mut impl Rng) {
    match spec.kind {
        DisruptionKind::Remap => {
            apply_remap(pop, spec.intensity, rng);
        }
        DisruptionKind::Drift => apply_drift(pop, spec.intensity),
        DisruptionKind::Dropout => {
            apply_dropout(pop, spec.intensity, rng);
        }
    }
}
