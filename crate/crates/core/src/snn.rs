//! Leaky integrate-and-fire neurons and the three-layer recurrent decoder network.
//!
//! Layout: input counts feed `w_in` (plus `w_rec` applied to the previous step's
//! hidden-1 spikes) into hidden layer 1, `w_h` maps hidden-1 spikes to hidden
//! layer 2, and `w_out` maps hidden-2 spikes onto a non-spiking output layer
//! whose membrane potentials are the decoded velocity. Every matrix is stored
//! row = postsynaptic neuron.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub n_in: usize,
    pub n_h1: usize,
    pub n_h2: usize,
    pub n_out: usize,
    /// Feedback from hidden-1 spikes of the previous step.
    pub recurrent: bool,
    /// Per-layer biases. Off by default; the online learner keeps them fixed.
    #[serde(default)]
    pub bias: bool,
}

impl Architecture {
    pub fn new(n_in: usize, n_h1: usize, n_h2: usize, n_out: usize) -> Result<Self> {
        let arch = Self {
            n_in,
            n_h1,
            n_h2,
            n_out,
            recurrent: true,
            bias: false,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn feedforward(mut self) -> Self {
        self.recurrent = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if [self.n_in, self.n_h1, self.n_h2, self.n_out].contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "layer sizes must be >= 1, got {self}"
            )));
        }
        Ok(())
    }

    /// Number of synaptic weights (biases excluded), recurrent matrix included when present.
    pub fn weight_count(&self) -> usize {
        let rec = if self.recurrent {
            self.n_h1 * self.n_h1
        } else {
            0
        };
        self.n_in * self.n_h1 + rec + self.n_h1 * self.n_h2 + self.n_h2 * self.n_out
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}-{}-{}-{}",
            self.n_in, self.n_h1, self.n_h2, self.n_out
        )
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    /// Parses `in-h1-h2-out`, e.g. `96-256-128-2`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split('-')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidConfig(format!("malformed architecture '{s}'")))?;
        match parts.as_slice() {
            &[a, b, c, d] => Architecture::new(a, b, c, d),
            _ => Err(Error::InvalidConfig(format!(
                "architecture '{s}' must have four layer sizes"
            ))),
        }
    }
}

/// Identifies one trainable weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layer {
    Input,
    Recurrent,
    Hidden,
    Output,
}

impl Layer {
    pub const ALL: [Layer; 4] = [Layer::Input, Layer::Recurrent, Layer::Hidden, Layer::Output];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Biases {
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
    pub b_out: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w_in: Matrix,
    pub w_rec: Option<Matrix>,
    pub w_h: Matrix,
    pub w_out: Matrix,
    pub biases: Option<Biases>,
}

impl Weights {
    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            w_in: Matrix::zeros(arch.n_h1, arch.n_in),
            w_rec: arch.recurrent.then(|| Matrix::zeros(arch.n_h1, arch.n_h1)),
            w_h: Matrix::zeros(arch.n_h2, arch.n_h1),
            w_out: Matrix::zeros(arch.n_out, arch.n_h2),
            biases: arch.bias.then(|| Biases {
                b1: vec![0.0; arch.n_h1],
                b2: vec![0.0; arch.n_h2],
                b_out: vec![0.0; arch.n_out],
            }),
        }
    }

    pub fn get(&self, layer: Layer) -> Option<&Matrix> {
        match layer {
            Layer::Input => Some(&self.w_in),
            Layer::Recurrent => self.w_rec.as_ref(),
            Layer::Hidden => Some(&self.w_h),
            Layer::Output => Some(&self.w_out),
        }
    }

    pub fn get_mut(&mut self, layer: Layer) -> Option<&mut Matrix> {
        match layer {
            Layer::Input => Some(&mut self.w_in),
            Layer::Recurrent => self.w_rec.as_mut(),
            Layer::Hidden => Some(&mut self.w_h),
            Layer::Output => Some(&mut self.w_out),
        }
    }

    /// Present matrices in canonical order.
    pub fn matrices(&self) -> impl Iterator<Item = (Layer, &Matrix)> {
        Layer::ALL
            .into_iter()
            .filter_map(move |l| self.get(l).map(|m| (l, m)))
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(Layer, &mut Matrix)) {
        f(Layer::Input, &mut self.w_in);
        if let Some(w) = self.w_rec.as_mut() {
            f(Layer::Recurrent, w);
        }
        f(Layer::Hidden, &mut self.w_h);
        f(Layer::Output, &mut self.w_out);
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().all(|(_, m)| m.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Weights) -> f64 {
        self.matrices()
            .zip(other.matrices())
            .map(|((_, a), (_, b))| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }

    pub fn byte_size(&self) -> usize {
        self.matrices().map(|(_, m)| m.byte_size()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    pub beta_h: f64,
    pub beta_out: f64,
    pub threshold: f64,
    pub surrogate_slope: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            beta_h: 0.7,
            beta_out: 0.5,
            threshold: 1.0,
            surrogate_slope: 25.0,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.beta_h > 0.0
            && self.beta_h < 1.0
            && self.beta_out > 0.0
            && self.beta_out < 1.0
            && self.threshold > 0.0
            && self.surrogate_slope > 0.0;
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "invalid LIF parameters {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronState {
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub u_out: Vec<f64>,
    pub s1_prev: Vec<f64>,
}

impl NeuronState {
    pub fn byte_size(&self) -> usize {
        8 * (self.u1.len() + self.u2.len() + self.u_out.len() + self.s1_prev.len())
    }
}

/// Zeroed potentials and recurrent spikes, used at trial or sequence boundaries.
pub fn reset_state(arch: &Architecture) -> NeuronState {
    NeuronState {
        u1: vec![0.0; arch.n_h1],
        u2: vec![0.0; arch.n_h2],
        u_out: vec![0.0; arch.n_out],
        s1_prev: vec![0.0; arch.n_h1],
    }
}

/// Intermediates of a single forward step. Only the latest step is ever kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub x: Vec<f64>,
    /// Hidden-1 spikes that fed the recurrent path on this step.
    pub s1_prev: Vec<f64>,
    /// Pre-reset membrane potentials.
    pub v1: Vec<f64>,
    pub s1: Vec<f64>,
    pub d1: Vec<f64>,
    pub v2: Vec<f64>,
    pub s2: Vec<f64>,
    pub d2: Vec<f64>,
    pub y_hat: Vec<f64>,
}

impl StepRecord {
    pub fn new(arch: &Architecture) -> Self {
        Self {
            x: vec![0.0; arch.n_in],
            s1_prev: vec![0.0; arch.n_h1],
            v1: vec![0.0; arch.n_h1],
            s1: vec![0.0; arch.n_h1],
            d1: vec![0.0; arch.n_h1],
            v2: vec![0.0; arch.n_h2],
            s2: vec![0.0; arch.n_h2],
            d2: vec![0.0; arch.n_h2],
            y_hat: vec![0.0; arch.n_out],
        }
    }

    pub fn byte_size(&self) -> usize {
        8 * (self.x.len()
            + self.s1_prev.len()
            + self.v1.len()
            + self.s1.len()
            + self.d1.len()
            + self.v2.len()
            + self.s2.len()
            + self.d2.len()
            + self.y_hat.len())
    }
}

/// Xavier-Glorot uniform initialization, deterministic in `seed`.
pub fn init_network(arch: &Architecture, seed: u64) -> Weights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Weights::zeros(arch);
    w.for_each_mut(|_, m| xavier_fill(m, &mut rng));
    w
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn xavier_fill(m: &mut Matrix, rng: &mut impl Rng) {
    let bound = xavier_bound(m.cols(), m.rows());
    for v in m.as_mut_slice() {
        *v = rng.gen_range(-bound..=bound);
    }
}

/// Fast-sigmoid derivative `1 / (1 + k|u - θ|)²`.
#[inline]
pub fn surrogate_grad(u: f64, params: &LifParams) -> f64 {
    let a = 1.0 + params.surrogate_slope * (u - params.threshold).abs();
    1.0 / (a * a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifOutput {
    pub u_next: Vec<f64>,
    pub spikes: Vec<f64>,
    pub sensitivities: Vec<f64>,
}

/// One LIF update for a whole layer. Spiking layers threshold with `>=` and
/// reset by subtraction; non-spiking layers integrate only and report unit
/// sensitivity.
pub fn lif_step(
    u: &[f64],
    current: &[f64],
    beta: f64,
    params: &LifParams,
    spiking: bool,
) -> Result<LifOutput> {
    check_len("lif_step current", u.len(), current.len())?;
    let mut u_next = u.to_vec();
    let mut spikes = vec![0.0; u.len()];
    let mut sensitivities = vec![1.0; u.len()];
    let mut pre = vec![0.0; u.len()];
    lif_step_in_place(
        &mut u_next,
        current,
        beta,
        params,
        spiking,
        &mut pre,
        &mut spikes,
        &mut sensitivities,
    );
    Ok(LifOutput {
        u_next,
        spikes,
        sensitivities,
    })
}

#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn lif_step_in_place(
    u: &mut [f64],
    current: &[f64],
    beta: f64,
    params: &LifParams,
    spiking: bool,
    pre_reset: &mut [f64],
    spikes: &mut [f64],
    sens: &mut [f64],
) {
    for i in 0..u.len() {
        let v = beta * u[i] + current[i];
        pre_reset[i] = v;
        if spiking {
            let s = if v >= params.threshold { 1.0 } else { 0.0 };
            spikes[i] = s;
            sens[i] = surrogate_grad(v, params);
            u[i] = v - s;
        } else {
            spikes[i] = 0.0;
            sens[i] = 1.0;
            u[i] = v;
        }
    }
}

/// Scratch buffers for the layer currents so the per-step path does not allocate.
#[derive(Debug, Clone)]
pub(crate) struct Currents {
    i1: Vec<f64>,
    i2: Vec<f64>,
    i3: Vec<f64>,
}

impl Currents {
    pub(crate) fn new(arch: &Architecture) -> Self {
        Self {
            i1: vec![0.0; arch.n_h1],
            i2: vec![0.0; arch.n_h2],
            i3: vec![0.0; arch.n_out],
        }
    }
}

/// Advances the network one step on raw input counts `x`, overwriting `record`.
pub fn forward(
    weights: &Weights,
    state: &mut NeuronState,
    x: &[f64],
    params: &LifParams,
    record: &mut StepRecord,
) -> Result<()> {
    let arch_in = weights.w_in.cols();
    check_len("forward input", arch_in, x.len())?;
    check_len("forward state", weights.w_in.rows(), state.u1.len())?;
    check_len("forward record", x.len(), record.x.len())?;
    let mut cur = Currents {
        i1: vec![0.0; state.u1.len()],
        i2: vec![0.0; state.u2.len()],
        i3: vec![0.0; state.u_out.len()],
    };
    forward_with(weights, state, x, params, record, &mut cur);
    Ok(())
}

pub(crate) fn forward_with(
    weights: &Weights,
    state: &mut NeuronState,
    x: &[f64],
    params: &LifParams,
    record: &mut StepRecord,
    cur: &mut Currents,
) {
    record.x.copy_from_slice(x);
    record.s1_prev.copy_from_slice(&state.s1_prev);

    weights.w_in.matvec_into(x, &mut cur.i1);
    if let Some(w_rec) = &weights.w_rec {
        w_rec.matvec_add_into(&state.s1_prev, &mut cur.i1);
    }
    if let Some(b) = &weights.biases {
        add_assign(&mut cur.i1, &b.b1);
    }
    lif_step_in_place(
        &mut state.u1,
        &cur.i1,
        params.beta_h,
        params,
        true,
        &mut record.v1,
        &mut record.s1,
        &mut record.d1,
    );

    weights.w_h.matvec_into(&record.s1, &mut cur.i2);
    if let Some(b) = &weights.biases {
        add_assign(&mut cur.i2, &b.b2);
    }
    lif_step_in_place(
        &mut state.u2,
        &cur.i2,
        params.beta_h,
        params,
        true,
        &mut record.v2,
        &mut record.s2,
        &mut record.d2,
    );

    weights.w_out.matvec_into(&record.s2, &mut cur.i3);
    if let Some(b) = &weights.biases {
        add_assign(&mut cur.i3, &b.b_out);
    }
    for (u, &i) in state.u_out.iter_mut().zip(&cur.i3) {
        *u = params.beta_out * *u + i;
    }
    record.y_hat.copy_from_slice(&state.u_out);
    state.s1_prev.copy_from_slice(&record.s1);
}

fn add_assign(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// A network instance: architecture, weights, membrane state and the latest step record.
#[derive(Debug, Clone)]
pub struct Network {
    pub arch: Architecture,
    pub params: LifParams,
    pub weights: Weights,
    pub state: NeuronState,
    pub record: StepRecord,
    cur: Currents,
}

impl Network {
    pub fn new(arch: Architecture, params: LifParams, seed: u64) -> Self {
        let weights = init_network(&arch, seed);
        Self::with_weights(arch, params, weights)
    }

    pub fn with_weights(arch: Architecture, params: LifParams, weights: Weights) -> Self {
        Self {
            state: reset_state(&arch),
            record: StepRecord::new(&arch),
            cur: Currents::new(&arch),
            arch,
            params,
            weights,
        }
    }

    pub fn reset_state(&mut self) {
        self.state = reset_state(&self.arch);
    }

    pub fn forward(&mut self, x: &[f64]) -> Result<&[f64]> {
        check_len("forward input", self.arch.n_in, x.len())?;
        forward_with(
            &self.weights,
            &mut self.state,
            x,
            &self.params,
            &mut self.record,
            &mut self.cur,
        );
        Ok(&self.record.y_hat)
    }

    /// Bytes of per-instance auxiliary state (membranes, last record, scratch).
    pub fn aux_bytes(&self) -> usize {
        self.state.byte_size()
            + self.record.byte_size()
            + 8 * (self.cur.i1.len() + self.cur.i2.len() + self.cur.i3.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Architecture {
        Architecture::new(2, 2, 2, 2).unwrap()
    }

    #[test]
    fn xavier_bounds_hold() {
        let w = init_network(&tiny(), 7);
        let b = 1.5f64.sqrt();
        assert!(w
            .matrices()
            .all(|(_, m)| m.as_slice().iter().all(|v| v.abs() <= b)));
        let big = Architecture::new(96, 256, 128, 2).unwrap();
        assert!((xavier_bound(96, 256) - (6.0f64 / 352.0).sqrt()).abs() < 1e-15);
        let w = init_network(&big, 1);
        assert!(w.w_in.as_slice().iter().all(|v| v.abs() <= 0.13057));
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(init_network(&tiny(), 3), init_network(&tiny(), 3));
        assert_ne!(init_network(&tiny(), 3), init_network(&tiny(), 4));
    }

    #[test]
    fn surrogate_values() {
        let p = LifParams::default();
        assert_eq!(surrogate_grad(1.0, &p), 1.0);
        assert_eq!(surrogate_grad(1.3, &p), surrogate_grad(0.7, &p));
        assert!((surrogate_grad(1.04, &p) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn lif_step_examples() {
        let p = LifParams::default();
        let out = lif_step(&[0.0], &[0.0], 0.7, &p, true).unwrap();
        assert_eq!(out.u_next, vec![0.0]);
        assert_eq!(out.spikes, vec![0.0]);

        let out = lif_step(&[1.0], &[0.5], 0.7, &p, true).unwrap();
        assert_eq!(out.spikes, vec![1.0]);
        assert!((out.u_next[0] - 0.2).abs() < 1e-12);

        let out = lif_step(&[0.4], &[0.1], 0.5, &p, false).unwrap();
        assert!((out.u_next[0] - 0.3).abs() < 1e-12);
        assert_eq!(out.spikes, vec![0.0]);

        assert!(lif_step(&[0.0, 1.0], &[0.0], 0.7, &p, true).is_err());
    }

    #[test]
    fn threshold_tie_spikes() {
        let p = LifParams::default();
        let out = lif_step(&[0.0], &[1.0], 0.7, &p, true).unwrap();
        assert_eq!(out.spikes, vec![1.0]);
        assert_eq!(out.u_next, vec![0.0]);
    }

    #[test]
    fn zero_weights_output_decays() {
        let arch = tiny();
        let mut net = Network::with_weights(arch, LifParams::default(), Weights::zeros(&arch));
        net.state.u_out = vec![1.0, -2.0];
        let y = net.forward(&[5.0, 3.0]).unwrap().to_vec();
        assert_eq!(y, vec![0.5, -1.0]);
        let y = net.forward(&[0.0, 9.0]).unwrap().to_vec();
        assert_eq!(y, vec![0.25, -0.5]);
    }

    #[test]
    fn one_hot_hidden_spike() {
        let arch = tiny();
        let mut w = Weights::zeros(&arch);
        w.w_in = Matrix::from_rows(&[&[1.5, 0.0], &[0.2, 0.0]]);
        let mut net = Network::with_weights(arch, LifParams::default(), w);
        net.forward(&[1.0, 1.0]).unwrap();
        assert_eq!(net.record.s1, vec![1.0, 0.0]);
        assert_eq!(net.state.s1_prev, vec![1.0, 0.0]);
    }

    #[test]
    fn reset_then_zero_input_is_silent() {
        let arch = tiny();
        let mut net = Network::new(arch, LifParams::default(), 5);
        for _ in 0..5 {
            net.forward(&[3.0, 1.0]).unwrap();
        }
        net.reset_state();
        assert_eq!(net.state, reset_state(&arch));
        net.reset_state();
        assert_eq!(net.state, reset_state(&arch));
        let y = net.forward(&[0.0, 0.0]).unwrap();
        assert_eq!(y, &[0.0, 0.0]);
    }

    #[test]
    fn forward_deterministic_and_footprint_constant() {
        let arch = Architecture::new(4, 6, 5, 2).unwrap();
        let mut a = Network::new(arch, LifParams::default(), 2);
        let mut b = a.clone();
        let bytes0 = a.aux_bytes();
        for t in 0..10_000 {
            let x = [(t % 3) as f64, 1.0, 0.0, 2.0];
            let ya = a.forward(&x).unwrap().to_vec();
            let yb = b.forward(&x).unwrap().to_vec();
            assert_eq!(ya, yb);
            if t == 9 {
                assert_eq!(a.aux_bytes(), bytes0);
            }
        }
        assert_eq!(a.aux_bytes(), bytes0);
        assert!(a.record.s1.iter().all(|&s| s == 0.0 || s == 1.0));
    }

    #[test]
    fn geometric_decay_without_input() {
        let p = LifParams::default();
        let mut u = vec![0.9];
        for t in 1..20 {
            let out = lif_step(&u, &[0.0], p.beta_h, &p, true).unwrap();
            u = out.u_next;
            assert!((u[0] - 0.9 * p.beta_h.powi(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn parses_architecture() {
        let a: Architecture = "96-256-128-2".parse().unwrap();
        assert_eq!(a.weight_count(), 123_136);
        assert!("96-256-2".parse::<Architecture>().is_err());
        assert!("a-b-c-d".parse::<Architecture>().is_err());
        assert!("0-1-1-2".parse::<Architecture>().is_err());
    }
}
