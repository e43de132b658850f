use serde::{Deserialize, Serialize};

use crate::baselines::{bptt_train, BpttConfig};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::plasticity::{online_update_step, OnlineLearner, PlasticityConfig};
use crate::snn::{Architecture, LifParams, Network};

/// Bytes per stored value in the analytic model (32-bit floats).
pub const MODEL_BYTES_PER_VALUE: usize = 4;
pub const BYTES_PER_MB: f64 = 1024.0 * 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub param_count: usize,
    pub timesteps: usize,
    /// Weights plus two eligibility traces.
    pub static_bytes_online: usize,
    /// Weights, gradients and two Adam moments.
    pub static_bytes_bptt: usize,
    /// Stored activations across an unrolled sequence.
    pub dynamic_bytes_bptt: usize,
}

impl MemoryReport {
    pub fn online_total(&self) -> usize {
        self.static_bytes_online
    }

    pub fn bptt_total(&self) -> usize {
        self.static_bytes_bptt + self.dynamic_bytes_bptt
    }
}

pub fn to_mb(bytes: usize) -> f64 {
    bytes as f64 / BYTES_PER_MB
}

/// Bias-free parameter count including the recurrent matrix.
pub fn param_count(arch: &Architecture) -> usize {
    arch.weight_count()
}

/// Values stored per unrolled step: membrane, spikes and sensitivities of
/// both hidden layers, the output membrane and a copy of the input.
pub fn activations_per_step(arch: &Architecture) -> usize {
    3 * (arch.n_h1 + arch.n_h2) + arch.n_out + arch.n_in
}

pub fn memory_model(arch: &Architecture, timesteps: usize) -> Result<MemoryReport> {
    arch.validate()?;
    if timesteps == 0 {
        return Err(Error::InvalidConfig("timesteps must be >= 1".into()));
    }
    let p = param_count(arch);
    Ok(MemoryReport {
        param_count: p,
        timesteps,
        static_bytes_online: 3 * p * MODEL_BYTES_PER_VALUE,
        static_bytes_bptt: 4 * p * MODEL_BYTES_PER_VALUE,
        dynamic_bytes_bptt: timesteps * activations_per_step(arch) * MODEL_BYTES_PER_VALUE,
    })
}

/// Instrumented peaks (64-bit floats) for one training pass over `timesteps` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredMemory {
    pub timesteps: usize,
    /// Largest learner auxiliary footprint seen at any step.
    pub online_peak_aux_bytes: usize,
    /// Gradient buffers, optimizer moments and the largest live tape.
    pub bptt_peak_aux_bytes: usize,
}

/// Runs the online learner for `timesteps` steps and one BPTT update over a
/// `timesteps`-long sequence on the same random data.
pub fn measure_training_memory(
    arch: Architecture,
    timesteps: usize,
    seed: u64,
) -> Result<MeasuredMemory> {
    if timesteps == 0 {
        return Err(Error::InvalidConfig("timesteps must be >= 1".into()));
    }
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::from_vec(
        timesteps,
        arch.n_in,
        (0..timesteps * arch.n_in)
            .map(|_| f64::from(rng.gen_range(0u8..3)))
            .collect(),
    );
    let y = Matrix::from_vec(
        timesteps,
        arch.n_out,
        (0..timesteps * arch.n_out)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
    );

    let mut net = Network::new(arch, LifParams::default(), seed);
    let mut learner = OnlineLearner::new(&net, PlasticityConfig::default())?;
    let mut online_peak = learner.aux_bytes();
    for t in 0..timesteps {
        online_update_step(&mut net, &mut learner, x.row(t), y.row(t))?;
        online_peak = online_peak.max(learner.aux_bytes());
    }

    let mut net = Network::new(arch, LifParams::default(), seed);
    let cfg = BpttConfig {
        seq_len: timesteps,
        stride: timesteps,
        batch_size: 1,
        epochs: 1,
        max_batches: Some(1),
        ..BpttConfig::default()
    };
    let report = bptt_train(&mut net, &x, &y, None, &cfg, seed)?;
    Ok(MeasuredMemory {
        timesteps,
        online_peak_aux_bytes: online_peak,
        bptt_peak_aux_bytes: report.peak_aux_bytes(),
    })
}

/// Least-squares line `y = a·x + b` and its R².
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let a = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let b = my - a * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - a * x - b).powi(2))
        .sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    (a, b, r2)
}
