use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use crate::error::{check_len, Error, Result};
use crate::harness::metrics::evaluate_stream;
use crate::linalg::Matrix;
use crate::snn::{surrogate_grad, Layer, LifParams, Network, Weights};

/// How the reverse pass treats the subtraction reset `u ← v − s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetGradient {
    /// The reset is a constant with respect to the membrane potential.
    #[default]
    Detached,
    /// Differentiate through the reset as well.
    Full,
}

/// Hidden-layer nonlinearity used by the unrolled forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    /// Binary threshold spikes; the backward pass substitutes the surrogate.
    #[default]
    Spike,
    /// `(v−θ)/(1+k|v−θ|)`, whose exact derivative is the surrogate. Used to
    /// check the reverse pass against finite differences.
    Smooth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BpttConfig {
    pub seq_len: usize,
    /// Offset between consecutive training sequences.
    pub stride: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub reset_gradient: ResetGradient,
    /// Also record validation R every this many batches.
    pub eval_every_batches: Option<usize>,
    /// Stop after this many batches in total.
    pub max_batches: Option<usize>,
}

impl Default for BpttConfig {
    /// Closed-loop preset.
    fn default() -> Self {
        Self {
            seq_len: 50,
            stride: 50,
            batch_size: 64,
            epochs: 30,
            lr: 1e-3,
            weight_decay: 1e-5,
            patience: 10,
            reset_gradient: ResetGradient::Detached,
            eval_every_batches: None,
            max_batches: None,
        }
    }
}

impl BpttConfig {
    /// Overlapping 10-step sequences with 50% overlap.
    pub fn offline() -> Self {
        Self {
            seq_len: 10,
            stride: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 || self.stride == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "seq_len, stride and batch_size must be >= 1".into(),
            ));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(
                "lr and weight_decay must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Byte counter for buffers the trainer allocates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryMeter {
    pub live: usize,
    pub peak: usize,
}

impl MemoryMeter {
    pub fn alloc(&mut self, bytes: usize) {
        self.live += bytes;
        self.peak = self.peak.max(self.live);
    }

    pub fn free(&mut self, bytes: usize) {
        self.live = self.live.saturating_sub(bytes);
    }
}

/// Everything the reverse pass needs from one forward step.
#[derive(Debug, Clone)]
struct Tape {
    x: Vec<f64>,
    s1: Vec<f64>,
    d1: Vec<f64>,
    v1: Vec<f64>,
    s2: Vec<f64>,
    d2: Vec<f64>,
    v2: Vec<f64>,
    y_hat: Vec<f64>,
}

impl Tape {
    fn byte_size(&self) -> usize {
        8 * (self.x.len()
            + self.s1.len()
            + self.d1.len()
            + self.v1.len()
            + self.s2.len()
            + self.d2.len()
            + self.v2.len()
            + self.y_hat.len())
    }
}

#[inline]
fn activate(v: f64, params: &LifParams, act: Activation) -> f64 {
    match act {
        Activation::Spike => {
            if v >= params.threshold {
                1.0
            } else {
                0.0
            }
        }
        Activation::Smooth => {
            let z = v - params.threshold;
            z / (1.0 + params.surrogate_slope * z.abs())
        }
    }
}

fn bias(w: &Weights, layer: usize) -> Option<&[f64]> {
    w.biases.as_ref().map(|b| match layer {
        1 => b.b1.as_slice(),
        2 => b.b2.as_slice(),
        _ => b.b_out.as_slice(),
    })
}

/// Unrolls the network from a zero state over the rows of `xs`.
fn unroll(w: &Weights, params: &LifParams, xs: &[&[f64]], act: Activation) -> Vec<Tape> {
    let (h1, h2, no) = (w.w_in.rows(), w.w_h.rows(), w.w_out.rows());
    let mut u1 = vec![0.0; h1];
    let mut u2 = vec![0.0; h2];
    let mut uo = vec![0.0; no];
    let mut s1_prev = vec![0.0; h1];
    let mut tapes = Vec::with_capacity(xs.len());
    for &x in xs {
        let mut i1 = w.w_in.matvec(x);
        if let Some(r) = &w.w_rec {
            r.matvec_add_into(&s1_prev, &mut i1);
        }
        if let Some(b) = bias(w, 1) {
            i1.iter_mut().zip(b).for_each(|(a, b)| *a += b);
        }
        let mut v1 = vec![0.0; h1];
        let mut s1 = vec![0.0; h1];
        let mut d1 = vec![0.0; h1];
        for j in 0..h1 {
            v1[j] = params.beta_h * u1[j] + i1[j];
            s1[j] = activate(v1[j], params, act);
            d1[j] = surrogate_grad(v1[j], params);
            u1[j] = v1[j] - s1[j];
        }
        let mut i2 = w.w_h.matvec(&s1);
        if let Some(b) = bias(w, 2) {
            i2.iter_mut().zip(b).for_each(|(a, b)| *a += b);
        }
        let mut v2 = vec![0.0; h2];
        let mut s2 = vec![0.0; h2];
        let mut d2 = vec![0.0; h2];
        for j in 0..h2 {
            v2[j] = params.beta_h * u2[j] + i2[j];
            s2[j] = activate(v2[j], params, act);
            d2[j] = surrogate_grad(v2[j], params);
            u2[j] = v2[j] - s2[j];
        }
        let mut i3 = w.w_out.matvec(&s2);
        if let Some(b) = bias(w, 3) {
            i3.iter_mut().zip(b).for_each(|(a, b)| *a += b);
        }
        for (u, i) in uo.iter_mut().zip(&i3) {
            *u = params.beta_out * *u + i;
        }
        s1_prev.copy_from_slice(&s1);
        tapes.push(Tape {
            x: x.to_vec(),
            s1,
            d1,
            v1,
            s2,
            d2,
            v2,
            y_hat: uo.clone(),
        });
    }
    tapes
}

/// Sum over steps of `‖y − ŷ‖²`, scaled by `scale`, and its gradient
/// accumulated into `grads`.
fn backward(
    w: &Weights,
    params: &LifParams,
    tapes: &[Tape],
    ys: &[&[f64]],
    scale: f64,
    reset: ResetGradient,
    grads: &mut Weights,
) -> f64 {
    let (h1, h2, no) = (w.w_in.rows(), w.w_h.rows(), w.w_out.rows());
    let full = reset == ResetGradient::Full;
    let mut gv1_next = vec![0.0; h1];
    let mut gv2_next = vec![0.0; h2];
    let mut guo_next = vec![0.0; no];
    let mut gs1 = vec![0.0; h1];
    let mut gs2 = vec![0.0; h2];
    let mut loss = 0.0;
    for t in (0..tapes.len()).rev() {
        let tp = &tapes[t];
        let mut guo = vec![0.0; no];
        for k in 0..no {
            let e = ys[t][k] - tp.y_hat[k];
            loss += e * e;
            guo[k] = -2.0 * e * scale + params.beta_out * guo_next[k];
        }
        grads.w_out.add_outer(&guo, &tp.s2);

        w.w_out.matvec_t_into(&guo, &mut gs2);
        let mut gv2 = vec![0.0; h2];
        for j in 0..h2 {
            let gu = params.beta_h * gv2_next[j];
            let gs = if full { gs2[j] - gu } else { gs2[j] };
            gv2[j] = gu + gs * tp.d2[j];
        }
        grads.w_h.add_outer(&gv2, &tp.s1);

        w.w_h.matvec_t_into(&gv2, &mut gs1);
        if let Some(r) = &w.w_rec {
            r.matvec_t_add_into(&gv1_next, &mut gs1);
        }
        let mut gv1 = vec![0.0; h1];
        for j in 0..h1 {
            let gu = params.beta_h * gv1_next[j];
            let gs = if full { gs1[j] - gu } else { gs1[j] };
            gv1[j] = gu + gs * tp.d1[j];
        }
        grads.w_in.add_outer(&gv1, &tp.x);
        if t > 0 {
            if let Some(r) = grads.w_rec.as_mut() {
                r.add_outer(&gv1, &tapes[t - 1].s1);
            }
        }
        if let Some(b) = grads.biases.as_mut() {
            b.b1.iter_mut().zip(&gv1).for_each(|(a, g)| *a += g);
            b.b2.iter_mut().zip(&gv2).for_each(|(a, g)| *a += g);
            b.b_out.iter_mut().zip(&guo).for_each(|(a, g)| *a += g);
        }
        gv1_next = gv1;
        gv2_next = gv2;
        guo_next = guo;
    }
    loss * scale
}

/// Mean per-step squared error of one sequence (from a zero state) and its
/// gradient with respect to every weight.
pub fn sequence_loss_and_grad(
    w: &Weights,
    params: &LifParams,
    xs: &[&[f64]],
    ys: &[&[f64]],
    act: Activation,
    reset: ResetGradient,
) -> Result<(f64, Weights)> {
    check_len("sequence targets", xs.len(), ys.len())?;
    if xs.is_empty() {
        return Err(Error::InvalidConfig("empty sequence".into()));
    }
    let tapes = unroll(w, params, xs, act);
    let mut grads = zeros_like(w);
    let loss = backward(
        w,
        params,
        &tapes,
        ys,
        1.0 / xs.len() as f64,
        reset,
        &mut grads,
    );
    Ok((loss, grads))
}

/// Loss only, for finite-difference checks.
pub fn sequence_loss(
    w: &Weights,
    params: &LifParams,
    xs: &[&[f64]],
    ys: &[&[f64]],
    act: Activation,
) -> f64 {
    let tapes = unroll(w, params, xs, act);
    let mut loss = 0.0;
    for (tp, y) in tapes.iter().zip(ys) {
        for (a, b) in tp.y_hat.iter().zip(y.iter()) {
            loss += (b - a) * (b - a);
        }
    }
    loss / xs.len() as f64
}

fn zeros_like(w: &Weights) -> Weights {
    let mut g = w.clone();
    g.for_each_mut(|_, m| m.fill(0.0));
    if let Some(b) = g.biases.as_mut() {
        b.b1.fill(0.0);
        b.b2.fill(0.0);
        b.b_out.fill(0.0);
    }
    g
}

/// Start indices of length-`seq_len` windows at `stride`, plus a final
/// window flush with the end so every index is covered.
pub fn sequence_starts(len: usize, seq_len: usize, stride: usize) -> Vec<usize> {
    if len < seq_len || seq_len == 0 || stride == 0 {
        return Vec::new();
    }
    let mut starts: Vec<usize> = (0..=len - seq_len).step_by(stride).collect();
    if *starts.last().unwrap() + seq_len < len {
        starts.push(len - seq_len);
    }
    starts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub batches: usize,
    /// Timesteps consumed so far (overlapping windows count every step).
    pub samples: usize,
    pub train_loss: f64,
    pub val_r_x: f64,
    pub val_r_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpttReport {
    pub curve: Vec<CurvePoint>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    /// Gradient and optimizer buffers.
    pub static_bytes: usize,
    /// Peak bytes of unrolled activations held for the reverse pass.
    pub peak_dynamic_bytes: usize,
}

impl BpttReport {
    pub fn peak_aux_bytes(&self) -> usize {
        self.static_bytes + self.peak_dynamic_bytes
    }
}

/// Trains `net` by truncated BPTT with Adam on the rows of `x`/`y`
/// (T×N and T×n_out). With validation data, the best-scoring weights by mean
/// Pearson R are restored at the end.
pub fn bptt_train(
    net: &mut Network,
    x: &Matrix,
    y: &Matrix,
    val: Option<(&Matrix, &Matrix)>,
    cfg: &BpttConfig,
    seed: u64,
) -> Result<BpttReport> {
    cfg.validate()?;
    check_len("bptt input width", net.arch.n_in, x.cols())?;
    check_len("bptt target width", net.arch.n_out, y.cols())?;
    check_len("bptt rows", x.rows(), y.rows())?;
    let starts = sequence_starts(x.rows(), cfg.seq_len, cfg.stride);
    if starts.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "dataset of {} rows is shorter than seq_len {}",
            x.rows(),
            cfg.seq_len
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut meter = MemoryMeter::default();
    let mut grads = zeros_like(&net.weights);
    let mut adam: Vec<(Layer, AdamState)> = net
        .weights
        .matrices()
        .map(|(l, m)| (l, AdamState::new(m.len(), cfg.lr)))
        .collect();
    let mut bias_adam = net.weights.biases.as_ref().map(|b| {
        [
            AdamState::new(b.b1.len(), cfg.lr),
            AdamState::new(b.b2.len(), cfg.lr),
            AdamState::new(b.b_out.len(), cfg.lr),
        ]
    });
    let static_bytes = grads.byte_size()
        + adam.iter().map(|(_, a)| a.byte_size()).sum::<usize>()
        + bias_adam_bytes(&bias_adam);
    meter.alloc(static_bytes);

    let mut report = BpttReport {
        curve: Vec::new(),
        best_epoch: None,
        stopped_early: false,
        static_bytes,
        peak_dynamic_bytes: 0,
    };
    let mut best: Option<(f64, Weights)> = None;
    let mut since_best = 0;
    let mut batches = 0usize;
    let mut samples = 0usize;
    let mut order = starts.clone();

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_seqs = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_batches.is_some_and(|m| batches >= m) {
                break 'epochs;
            }
            let scale = 1.0 / (chunk.len() * cfg.seq_len) as f64;
            let mut batch_loss = 0.0;
            for &s in chunk {
                let xs: Vec<&[f64]> = (s..s + cfg.seq_len).map(|r| x.row(r)).collect();
                let ys: Vec<&[f64]> = (s..s + cfg.seq_len).map(|r| y.row(r)).collect();
                let tapes = unroll(&net.weights, &net.params, &xs, Activation::Spike);
                let tape_bytes: usize = tapes.iter().map(Tape::byte_size).sum();
                meter.alloc(tape_bytes);
                batch_loss += backward(
                    &net.weights,
                    &net.params,
                    &tapes,
                    &ys,
                    scale,
                    cfg.reset_gradient,
                    &mut grads,
                );
                drop(tapes);
                meter.free(tape_bytes);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batches,
                });
            }
            apply_adam(
                &mut net.weights,
                &mut grads,
                &mut adam,
                &mut bias_adam,
                cfg.weight_decay,
            );
            batches += 1;
            samples += chunk.len() * cfg.seq_len;
            epoch_loss += batch_loss * chunk.len() as f64;
            epoch_seqs += chunk.len();
            if let (Some(every), Some((vx, vy))) = (cfg.eval_every_batches, val) {
                if batches % every == 0 {
                    let (rx, ry) = evaluate_stream(net, vx, vy)?;
                    report.curve.push(CurvePoint {
                        epoch,
                        batches,
                        samples,
                        train_loss: batch_loss,
                        val_r_x: rx,
                        val_r_y: ry,
                    });
                }
            }
        }
        let train_loss = epoch_loss / epoch_seqs.max(1) as f64;
        let (rx, ry) = match val {
            Some((vx, vy)) => evaluate_stream(net, vx, vy)?,
            None => (f64::NAN, f64::NAN),
        };
        report.curve.push(CurvePoint {
            epoch,
            batches,
            samples,
            train_loss,
            val_r_x: rx,
            val_r_y: ry,
        });
        if val.is_some() {
            let score = 0.5 * (rx + ry);
            if best.as_ref().map_or(true, |(b, _)| score > *b) {
                best = Some((score, net.weights.clone()));
                report.best_epoch = Some(epoch);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    report.stopped_early = true;
                    break;
                }
            }
        }
    }
    if let Some((_, w)) = best {
        net.weights = w;
    }
    report.peak_dynamic_bytes = meter.peak - static_bytes;
    Ok(report)
}

fn bias_adam_bytes(b: &Option<[AdamState; 3]>) -> usize {
    b.as_ref()
        .map_or(0, |a| a.iter().map(AdamState::byte_size).sum())
}

fn apply_adam(
    w: &mut Weights,
    grads: &mut Weights,
    adam: &mut [(Layer, AdamState)],
    bias_adam: &mut Option<[AdamState; 3]>,
    weight_decay: f64,
) {
    for (layer, state) in adam.iter_mut() {
        let (Some(p), Some(g)) = (w.get_mut(*layer), grads.get_mut(*layer)) else {
            continue;
        };
        if weight_decay != 0.0 {
            g.axpy(weight_decay, p);
        }
        adam_step(p.as_mut_slice(), g.as_slice(), state);
        g.fill(0.0);
    }
    if let (Some(b), Some(gb), Some(states)) =
        (w.biases.as_mut(), grads.biases.as_mut(), bias_adam.as_mut())
    {
        for ((p, g), st) in [&mut b.b1, &mut b.b2, &mut b.b_out]
            .into_iter()
            .zip([&mut gb.b1, &mut gb.b2, &mut gb.b_out])
            .zip(states.iter_mut())
        {
            adam_step(p, g, st);
            g.fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snn::Architecture;
    use rand::Rng;

    fn random_seq(n_in: usize, t: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = (0..t)
            .map(|_| (0..n_in).map(|_| rng.gen_range(0.0..3.0)).collect())
            .collect();
        let ys = (0..t)
            .map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        (xs, ys)
    }

    #[test]
    fn unroll_matches_network_forward() {
        let arch = Architecture::new(5, 7, 6, 2).unwrap();
        let mut net = Network::new(arch, LifParams::default(), 2);
        net.weights.for_each_mut(|_, m| m.scale(4.0));
        let (xs, _) = random_seq(5, 30, 1);
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let tapes = unroll(&net.weights, &net.params, &refs, Activation::Spike);
        let mut spikes = 0.0;
        for (x, tp) in xs.iter().zip(&tapes) {
            let y = net.forward(x).unwrap().to_vec();
            assert_eq!(y, tp.y_hat);
            assert_eq!(net.record.s1, tp.s1);
            spikes += tp.s1.iter().sum::<f64>();
        }
        assert!(spikes > 0.0);
    }

    #[test]
    fn smooth_twin_gradient_matches_finite_differences() {
        let arch = Architecture::new(3, 4, 3, 2).unwrap();
        let mut w = crate::snn::init_network(&arch, 7);
        w.for_each_mut(|_, m| m.scale(3.0));
        let params = LifParams::default();
        let (xs, mut ys) = random_seq(3, 5, 3);
        // targets on the scale of the smooth outputs keep the loss, and thus
        // its round-off, small relative to the gradients
        ys.iter_mut().flatten().for_each(|v| *v *= 0.02);
        let xr: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let yr: Vec<&[f64]> = ys.iter().map(Vec::as_slice).collect();
        let (_, g) = sequence_loss_and_grad(
            &w,
            &params,
            &xr,
            &yr,
            Activation::Smooth,
            ResetGradient::Full,
        )
        .unwrap();
        let h = 1e-4;
        for layer in Layer::ALL {
            let n = w.get(layer).unwrap().len();
            for i in 0..n {
                let f = |d: f64| {
                    let mut wp = w.clone();
                    wp.get_mut(layer).unwrap().as_mut_slice()[i] += d;
                    sequence_loss(&wp, &params, &xr, &yr, Activation::Smooth)
                };
                // fourth-order central stencil
                let fd = (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h);
                let an = g.get(layer).unwrap().as_slice()[i];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
                assert!(rel <= 1e-4, "{layer:?}[{i}] analytic {an} fd {fd}");
            }
        }
    }

    #[test]
    fn zero_lr_leaves_weights() {
        let arch = Architecture::new(4, 6, 5, 2).unwrap();
        let mut net = Network::new(arch, LifParams::default(), 1);
        let before = net.weights.clone();
        let x = Matrix::from_vec(40, 4, (0..160).map(|i| (i % 3) as f64).collect());
        let y = Matrix::from_vec(40, 2, (0..80).map(|i| ((i as f64) * 0.1).sin()).collect());
        let cfg = BpttConfig {
            seq_len: 10,
            stride: 5,
            batch_size: 4,
            epochs: 1,
            lr: 0.0,
            ..BpttConfig::default()
        };
        bptt_train(&mut net, &x, &y, None, &cfg, 3).unwrap();
        assert_eq!(net.weights, before);
    }

    #[test]
    fn non_finite_loss_aborts() {
        let arch = Architecture::new(2, 3, 3, 2).unwrap();
        let mut net = Network::new(arch, LifParams::default(), 1);
        let x = Matrix::from_vec(10, 2, vec![1.0; 20]);
        let mut y = Matrix::zeros(10, 2);
        y[(3, 1)] = f64::NAN;
        let cfg = BpttConfig {
            seq_len: 5,
            stride: 5,
            epochs: 1,
            ..BpttConfig::default()
        };
        assert!(matches!(
            bptt_train(&mut net, &x, &y, None, &cfg, 0),
            Err(Error::NonFiniteLoss { epoch: 1, .. })
        ));
    }

    #[test]
    fn dynamic_memory_grows_with_sequence_length() {
        let arch = Architecture::new(4, 8, 6, 2).unwrap();
        let x = Matrix::from_vec(200, 4, vec![1.0; 800]);
        let y = Matrix::zeros(200, 2);
        let mut peaks = Vec::new();
        for t in [10, 50, 100] {
            let mut net = Network::new(arch, LifParams::default(), 1);
            let cfg = BpttConfig {
                seq_len: t,
                stride: t,
                epochs: 1,
                max_batches: Some(1),
                ..BpttConfig::default()
            };
            let r = bptt_train(&mut net, &x, &y, None, &cfg, 0).unwrap();
            peaks.push(r.peak_dynamic_bytes);
        }
        let per_step = 8 * (4 + 3 * 8 + 3 * 6 + 2);
        assert_eq!(peaks, vec![10 * per_step, 50 * per_step, 100 * per_step]);
    }

    #[test]
    fn window_tiling_covers_every_index() {
        for len in 10..60 {
            let starts = sequence_starts(len, 10, 5);
            let mut seen = vec![false; len];
            for s in starts {
                seen[s..s + 10].iter_mut().for_each(|v| *v = true);
            }
            assert!(seen.iter().all(|&v| v));
        }
        assert!(sequence_starts(5, 10, 5).is_empty());
    }
}
