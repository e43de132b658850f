use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homeostasis::{LutLookup, NormalizeMode, ProjectionMode, DEFAULT_LAMBDA_RMS};

/// How the window's smoothed evidence is folded into the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsolidationMode {
    /// `W ← (1−α)·W + α·R(Ḡ)`
    #[default]
    Blend,
    /// `W ← W + α·R(Ḡ)`
    Additive,
}

/// Source of `Ḡ_K` at a window boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowAverage {
    /// Boundary value of the momentum EMA.
    #[default]
    Ema,
    /// Arithmetic mean of `G` over the window (one extra buffer per matrix).
    ArithmeticMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningRule {
    /// Error × surrogate sensitivity × presynaptic activity.
    #[default]
    ThreeFactor,
    /// Sensitivity gate removed (`d ≡ 1`).
    Delta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmsScope {
    /// Output error, propagated errors and presynaptic activity.
    #[default]
    Full,
    /// Output error only.
    Partial,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    #[default]
    Dual,
    FastOnly,
    SlowOnly,
    /// Both traces share one intermediate time constant `√(τ_fast·τ_slow)`.
    Medium,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    #[default]
    Dual,
    FastOnly,
    SlowOnly,
    Frozen,
}

impl UpdateMode {
    pub fn fast(self) -> bool {
        matches!(self, UpdateMode::Dual | UpdateMode::FastOnly)
    }

    pub fn slow(self) -> bool {
        matches!(self, UpdateMode::Dual | UpdateMode::SlowOnly)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlasticityConfig {
    pub eta_fast0: f64,
    /// Consolidation rate (α).
    pub eta_slow0: f64,
    pub eta_meta: f64,
    /// Consolidation window in timesteps.
    pub window: usize,
    pub momentum: f64,
    pub alpha_mix: f64,
    pub tau_fast_ms: f64,
    pub tau_slow_ms: f64,
    pub dt_ms: f64,
    /// Halves τ_fast and scales τ_slow by 0.8.
    pub online_mode: bool,
    pub weight_decay: f64,
    pub p_bounds: (f64, f64),
    pub s_bounds: (f64, f64),
    pub c_clip: f64,
    pub lambda_rms: f64,
    pub consolidation: ConsolidationMode,
    pub window_average: WindowAverage,
    pub projection: ProjectionMode,
    pub normalize: NormalizeMode,
    pub lut_lookup: LutLookup,
    pub rule: LearningRule,
    pub rms: RmsScope,
    pub traces: TraceMode,
    pub updates: UpdateMode,
    pub meta: bool,
    pub reward_lut: bool,
}

impl Default for PlasticityConfig {
    /// Batched offline preset (96-channel, 50 ms bins).
    fn default() -> Self {
        Self {
            eta_fast0: 1e-3,
            eta_slow0: 3e-4,
            eta_meta: 0.01,
            window: 50,
            momentum: 0.9,
            alpha_mix: 0.5,
            tau_fast_ms: 120.0,
            tau_slow_ms: 700.0,
            dt_ms: 50.0,
            online_mode: false,
            weight_decay: 1e-5,
            p_bounds: (0.1, 10.0),
            s_bounds: (0.1, 10.0),
            c_clip: 6.0,
            lambda_rms: DEFAULT_LAMBDA_RMS,
            consolidation: ConsolidationMode::Blend,
            window_average: WindowAverage::Ema,
            projection: ProjectionMode::Pow2,
            normalize: NormalizeMode::Lut,
            lut_lookup: LutLookup::Linear,
            rule: LearningRule::ThreeFactor,
            rms: RmsScope::Full,
            traces: TraceMode::Dual,
            updates: UpdateMode::Dual,
            meta: true,
            reward_lut: true,
        }
    }
}

impl PlasticityConfig {
    /// Chronological single-step stream (96-channel, 50 ms bins).
    pub fn offline_timestepwise() -> Self {
        Self {
            eta_fast0: 2e-3,
            eta_slow0: 2e-4,
            alpha_mix: 0.8,
            online_mode: true,
            ..Self::default()
        }
    }

    /// Closed-loop cursor control at 10 ms steps.
    pub fn closed_loop() -> Self {
        Self {
            eta_fast0: 1e-4,
            eta_slow0: 1e-3,
            eta_meta: 0.1,
            window: 10,
            alpha_mix: 0.5,
            dt_ms: 10.0,
            online_mode: true,
            reward_lut: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.eta_fast0 < 0.0 || self.eta_slow0 < 0.0 || self.eta_meta < 0.0 {
            return bad("learning rates must be >= 0");
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return bad("momentum must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.alpha_mix) {
            return bad("alpha_mix must lie in [0, 1]");
        }
        if self.window == 0 {
            return bad("window must be >= 1");
        }
        if self.p_bounds.0 >= self.p_bounds.1 || self.s_bounds.0 >= self.s_bounds.1 {
            return bad("multiplier bounds must satisfy min < max");
        }
        if self.p_bounds.0 < 0.0 || self.s_bounds.0 < 0.0 {
            return bad("multiplier bounds must be nonnegative");
        }
        if !(self.dt_ms > 0.0 && self.tau_fast_ms > 0.0 && self.tau_slow_ms > 0.0) {
            return bad("dt and time constants must be > 0");
        }
        if !(self.c_clip > 0.0) {
            return bad("c_clip must be > 0");
        }
        if !(0.0..1.0).contains(&self.lambda_rms) {
            return bad("lambda_rms must lie in [0, 1)");
        }
        Ok(())
    }

    /// Trace mixing weight after applying the trace mode.
    pub fn effective_mix(&self) -> f64 {
        match self.traces {
            TraceMode::FastOnly => 1.0,
            TraceMode::SlowOnly => 0.0,
            TraceMode::Dual | TraceMode::Medium => self.alpha_mix,
        }
    }

    /// Effective (τ_fast, τ_slow) after online-mode scaling.
    pub fn effective_taus(&self) -> (f64, f64) {
        if self.online_mode {
            (self.tau_fast_ms * 0.5, self.tau_slow_ms * 0.8)
        } else {
            (self.tau_fast_ms, self.tau_slow_ms)
        }
    }
}
