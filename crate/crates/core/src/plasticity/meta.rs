use serde::{Deserialize, Serialize};

use super::config::PlasticityConfig;

/// Learning-rate multipliers driven by the sign of window-to-window loss change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaState {
    /// Fast-rate multiplier.
    pub p: f64,
    /// Slow-rate multiplier.
    pub s: f64,
    pub window_loss_acc: f64,
    pub window_steps: usize,
    pub prev_window_loss: Option<f64>,
}

impl MetaState {
    pub fn new(cfg: &PlasticityConfig) -> Self {
        Self {
            p: 1.0f64.clamp(cfg.p_bounds.0, cfg.p_bounds.1),
            s: 1.0f64.clamp(cfg.s_bounds.0, cfg.s_bounds.1),
            window_loss_acc: 0.0,
            window_steps: 0,
            prev_window_loss: None,
        }
    }

    pub fn record_loss(&mut self, loss: f64) {
        self.window_loss_acc += loss;
        self.window_steps += 1;
    }

    /// Mean loss of the current window; resets the accumulator.
    pub fn take_window_mean(&mut self) -> f64 {
        let mean = if self.window_steps == 0 {
            0.0
        } else {
            self.window_loss_acc / self.window_steps as f64
        };
        self.window_loss_acc = 0.0;
        self.window_steps = 0;
        mean
    }
}

/// One controller update at a window boundary; returns the new `(p, s)`.
pub fn meta_step(
    meta: &mut MetaState,
    window_mean_loss: f64,
    cfg: &PlasticityConfig,
) -> (f64, f64) {
    let z = match meta.prev_window_loss {
        Some(prev) if prev > window_mean_loss => 1.0,
        Some(prev) if prev < window_mean_loss => -1.0,
        _ => 0.0,
    };
    let factor = 1.0 + cfg.eta_meta * z;
    meta.p = (meta.p * factor).clamp(cfg.p_bounds.0, cfg.p_bounds.1);
    meta.s = (meta.s * factor).clamp(cfg.s_bounds.0, cfg.s_bounds.1);
    meta.prev_window_loss = Some(window_mean_loss);
    (meta.p, meta.s)
}
