use serde::{Deserialize, Serialize};

use super::config::{LearningRule, PlasticityConfig, RmsScope};
use super::meta::{meta_step, MetaState};
use super::reward::RewardLut;
use super::rule::{consolidate, decay_coefficients, LayerTraces, TraceSet};
use crate::error::{check_len, Result};
use crate::homeostasis::{inverse_rms, project_rows, InvSqrtLut, RmsEma};
use crate::linalg::{mean_square, Matrix};
use crate::snn::{Layer, Network};

/// One moving mean-square estimate per normalized signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsStates {
    pub x: RmsEma,
    pub s1_prev: RmsEma,
    pub s1: RmsEma,
    pub s2: RmsEma,
    pub e_out: RmsEma,
    pub e2: RmsEma,
    pub e1: RmsEma,
}

impl RmsStates {
    pub fn new(lambda: f64) -> Self {
        let r = RmsEma::new(lambda);
        Self {
            x: r,
            s1_prev: r,
            s1: r,
            s2: r,
            e_out: r,
            e2: r,
            e1: r,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Scratch {
    pre_x: Vec<f64>,
    pre_rec: Vec<f64>,
    pre_s1: Vec<f64>,
    pre_s2: Vec<f64>,
    post_out: Vec<f64>,
    post2: Vec<f64>,
    post1: Vec<f64>,
    e2: Vec<f64>,
    e1: Vec<f64>,
}

impl Scratch {
    fn new(net: &Network) -> Self {
        let a = &net.arch;
        Self {
            pre_x: vec![0.0; a.n_in],
            pre_rec: vec![0.0; a.n_h1],
            pre_s1: vec![0.0; a.n_h1],
            pre_s2: vec![0.0; a.n_h2],
            post_out: vec![0.0; a.n_out],
            post2: vec![0.0; a.n_h2],
            post1: vec![0.0; a.n_h1],
            e2: vec![0.0; a.n_h2],
            e1: vec![0.0; a.n_h1],
        }
    }

    fn byte_size(&self) -> usize {
        8 * [
            &self.pre_x,
            &self.pre_rec,
            &self.pre_s1,
            &self.pre_s2,
            &self.post_out,
            &self.post2,
            &self.post1,
            &self.e2,
            &self.e1,
        ]
        .iter()
        .map(|v| v.len())
        .sum::<usize>()
    }
}

/// Complete learning state bound to one network instance.
#[derive(Debug, Clone)]
pub struct OnlineLearner {
    pub cfg: PlasticityConfig,
    pub traces: TraceSet,
    pub meta: MetaState,
    pub rms: RmsStates,
    pub reward: RewardLut,
    lut: InvSqrtLut,
    lambdas: (f64, f64),
    scratch: Scratch,
    steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub y_hat: Vec<f64>,
    /// Squared L2 prediction error of this step.
    pub loss: f64,
    /// Whether this step closed a consolidation window.
    pub boundary: bool,
}

impl OnlineLearner {
    pub fn new(net: &Network, cfg: PlasticityConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            traces: TraceSet::for_weights(&net.weights, cfg.window_average),
            meta: MetaState::new(&cfg),
            rms: RmsStates::new(cfg.lambda_rms),
            reward: RewardLut::default(),
            lut: InvSqrtLut::new(cfg.lut_lookup),
            lambdas: decay_coefficients(&cfg),
            scratch: Scratch::new(net),
            steps: 0,
            cfg,
        })
    }

    pub fn lambdas(&self) -> (f64, f64) {
        self.lambdas
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub(crate) fn restore_steps(&mut self, steps: u64) {
        self.steps = steps;
    }

    /// Bytes of learning state: traces, momentum, normalizer statistics,
    /// multipliers and per-step scratch vectors.
    pub fn aux_bytes(&self) -> usize {
        self.traces.byte_size()
            + self.scratch.byte_size()
            + std::mem::size_of::<RmsStates>()
            + std::mem::size_of::<MetaState>()
    }

    /// Current fast learning rate before any per-step gain.
    pub fn eta_fast(&self) -> f64 {
        self.meta.p * self.cfg.eta_fast0
    }

    fn normalize_into(&self, rms: &RmsEma, src: &[f64], dst: &mut [f64], enabled: bool) {
        let g = if enabled {
            inverse_rms(rms, &self.lut, self.cfg.normalize)
        } else {
            1.0
        };
        for (d, s) in dst.iter_mut().zip(src) {
            *d = s * g;
        }
    }
}

/// Forward pass plus one full learning update on `(x, y)`.
pub fn online_update_step(
    net: &mut Network,
    learner: &mut OnlineLearner,
    x: &[f64],
    y: &[f64],
) -> Result<StepOutcome> {
    check_len("online step target", net.arch.n_out, y.len())?;
    net.forward(x)?;
    let y_hat = net.record.y_hat.clone();
    let err: Vec<f64> = y.iter().zip(&y_hat).map(|(t, p)| t - p).collect();
    let loss = err.iter().map(|e| e * e).sum::<f64>();
    learner.steps += 1;

    let cfg = learner.cfg.clone();
    if !matches!(cfg.updates, super::config::UpdateMode::Frozen) {
        learn_from_record(net, learner, &err)?;
    }

    learner.meta.record_loss(loss);
    learner.traces.window_step += 1;
    let boundary = learner.traces.window_step == cfg.window;
    if boundary {
        if cfg.updates.slow() {
            consolidate(&mut net.weights, &mut learner.traces, &cfg, &learner.meta)?;
            net.weights.for_each_mut(|_, w| {
                project_rows(w, cfg.c_clip, cfg.projection);
            });
        } else {
            learner.traces.window_step = 0;
            for l in Layer::ALL {
                if let Some(sum) = learner.traces.get_mut(l).and_then(|t| t.g_sum.as_mut()) {
                    sum.fill(0.0);
                }
            }
        }
        let mean = learner.meta.take_window_mean();
        if cfg.meta {
            meta_step(&mut learner.meta, mean, &cfg);
        }
    }
    Ok(StepOutcome {
        y_hat,
        loss,
        boundary,
    })
}

fn learn_from_record(net: &mut Network, learner: &mut OnlineLearner, err: &[f64]) -> Result<()> {
    let cfg = &learner.cfg;
    let rec = &net.record;
    let full = cfg.rms == RmsScope::Full;
    let out_norm = cfg.rms != RmsScope::None;

    // Normalizer statistics see this step's signals before they are used.
    if out_norm {
        learner.rms.e_out.update(err);
    }
    let mut sc = std::mem::take(&mut learner.scratch);
    learner.normalize_into(&learner.rms.e_out, err, &mut sc.post_out, out_norm);

    // Spatial-only error propagation through the current weights.
    net.weights.w_out.matvec_t_into(&sc.post_out, &mut sc.e2);
    net.weights.w_h.matvec_t_into(&sc.e2, &mut sc.e1);

    if full {
        let r = &mut learner.rms;
        r.e2.update(&sc.e2);
        r.e1.update(&sc.e1);
        r.x.update(&rec.x);
        r.s1_prev.update(&rec.s1_prev);
        r.s1.update(&rec.s1);
        r.s2.update(&rec.s2);
    }
    learner.normalize_into(&learner.rms.e2, &sc.e2, &mut sc.post2, full);
    learner.normalize_into(&learner.rms.e1, &sc.e1, &mut sc.post1, full);
    learner.normalize_into(&learner.rms.x, &rec.x, &mut sc.pre_x, full);
    learner.normalize_into(&learner.rms.s1_prev, &rec.s1_prev, &mut sc.pre_rec, full);
    learner.normalize_into(&learner.rms.s1, &rec.s1, &mut sc.pre_s1, full);
    learner.normalize_into(&learner.rms.s2, &rec.s2, &mut sc.pre_s2, full);

    if cfg.rule == LearningRule::ThreeFactor {
        for (e, d) in sc.post2.iter_mut().zip(&rec.d2) {
            *e *= d;
        }
        for (e, d) in sc.post1.iter_mut().zip(&rec.d1) {
            *e *= d;
        }
    }

    let gain = if cfg.reward_lut {
        learner.reward.gain(mean_square(&sc.post_out).sqrt())
    } else {
        1.0
    };
    let eta = if cfg.updates.fast() {
        learner.meta.p * cfg.eta_fast0 * gain
    } else {
        0.0
    };
    let coeffs = FusedCoeffs {
        lambda_fast: learner.lambdas.0,
        lambda_slow: learner.lambdas.1,
        mix: cfg.effective_mix(),
        eta,
        mu: cfg.momentum,
    };

    let w = &mut net.weights;
    let tr = &mut learner.traces;
    fused_update(
        &mut w.w_out,
        &mut tr.w_out,
        &sc.post_out,
        &sc.pre_s2,
        &coeffs,
    );
    fused_update(&mut w.w_h, &mut tr.w_h, &sc.post2, &sc.pre_s1, &coeffs);
    fused_update(&mut w.w_in, &mut tr.w_in, &sc.post1, &sc.pre_x, &coeffs);
    if let (Some(wr), Some(trr)) = (w.w_rec.as_mut(), tr.w_rec.as_mut()) {
        fused_update(wr, trr, &sc.post1, &sc.pre_rec, &coeffs);
    }
    if eta != 0.0 {
        w.for_each_mut(|_, m| {
            project_rows(m, cfg.c_clip, cfg.projection);
        });
    }
    learner.scratch = sc;
    Ok(())
}

struct FusedCoeffs {
    lambda_fast: f64,
    lambda_slow: f64,
    mix: f64,
    eta: f64,
    mu: f64,
}

/// Decaying traces otherwise drift into subnormal range, which is an order of
/// magnitude slower on most CPUs.
#[inline(always)]
fn flush(v: f64) -> f64 {
    if v.abs() < 1e-200 {
        0.0
    } else {
        v
    }
}

/// Hebbian increment, both trace decays, mixing, fast update and momentum in
/// a single sweep over the matrix.
fn fused_update(w: &mut Matrix, tr: &mut LayerTraces, post: &[f64], pre: &[f64], k: &FusedCoeffs) {
    let cols = w.cols();
    let (lf, ls, mix, eta, mu) = (k.lambda_fast, k.lambda_slow, k.mix, k.eta, k.mu);
    let pre = &pre[..cols];
    let w = w.as_mut_slice();
    let ef = tr.e_fast.as_mut_slice();
    let es = tr.e_slow.as_mut_slice();
    let g = tr.g.as_mut_slice();
    for (j, &a) in post.iter().enumerate() {
        let r = j * cols..(j + 1) * cols;
        let (wr, fr, sr, gr) = (
            &mut w[r.clone()],
            &mut ef[r.clone()],
            &mut es[r.clone()],
            &mut g[r],
        );
        for i in 0..cols {
            let d = a * pre[i];
            let f = flush(lf * fr[i] + d);
            let s = flush(ls * sr[i] + d);
            fr[i] = f;
            sr[i] = s;
            let c = mix * f + (1.0 - mix) * s;
            wr[i] += eta * c;
            gr[i] = flush(mu * gr[i] + (1.0 - mu) * c);
        }
    }
    if let Some(sum) = tr.g_sum.as_mut() {
        sum.axpy(1.0, &tr.g);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plasticity::config::UpdateMode;
    use crate::plasticity::rule::{accumulate_momentum, hebbian_increment, update_traces};
    use crate::snn::{Architecture, LifParams, Weights};

    fn hand_net() -> Network {
        let arch = Architecture::new(2, 2, 2, 2).unwrap();
        let mut w = Weights::zeros(&arch);
        w.w_in = Matrix::from_rows(&[&[1.5, 0.0], &[0.2, 0.0]]);
        w.w_h = Matrix::from_rows(&[&[1.2, 0.0], &[0.5, 0.5]]);
        w.w_out = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 2.0]]);
        Network::with_weights(arch, LifParams::default(), w)
    }

    fn raw_cfg() -> PlasticityConfig {
        PlasticityConfig {
            eta_fast0: 0.5,
            window: 100,
            rms: RmsScope::None,
            meta: false,
            reward_lut: false,
            ..PlasticityConfig::default()
        }
    }

    #[test]
    fn single_step_matches_hand_computation() {
        let mut net = hand_net();
        let mut learner = OnlineLearner::new(&net, raw_cfg()).unwrap();
        let out = online_update_step(&mut net, &mut learner, &[1.0, 1.0], &[2.0, 1.0]).unwrap();
        assert_eq!(out.y_hat, vec![1.0, 0.0]);
        assert_eq!(out.loss, 2.0);

        let w = &net.weights;
        assert_eq!(w.w_out.as_slice(), &[1.5, 0.0, 0.5, 2.0]);
        let d1 = [1.0 / 182.25, 1.0 / 441.0];
        let d2 = [1.0 / 36.0, 1.0 / 182.25];
        let exp_h = [1.2 + 0.5 * d2[0], 0.0, 0.5 + 0.5 * 2.0 * d2[1], 0.5];
        let exp_in = [
            1.5 + 0.5 * 2.2 * d1[0],
            0.5 * 2.2 * d1[0],
            0.2 + 0.5 * d1[1],
            0.5 * d1[1],
        ];
        for (a, b) in w.w_h.as_slice().iter().zip(exp_h) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
        for (a, b) in w.w_in.as_slice().iter().zip(exp_in) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
        assert!(w
            .w_rec
            .as_ref()
            .unwrap()
            .as_slice()
            .iter()
            .all(|&v| v == 0.0));
        assert_eq!(
            learner.traces.w_out.e_fast.as_slice(),
            &[1.0, 0.0, 1.0, 0.0]
        );
        assert_eq!(learner.traces.w_out.e_slow, learner.traces.w_out.e_fast);
        let g = learner.traces.w_out.g.as_slice();
        assert!((g[0] - 0.1).abs() < 1e-15 && (g[2] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn fused_path_matches_composed_operations() {
        let arch = Architecture::new(3, 5, 4, 2).unwrap();
        let mut net = Network::new(arch, LifParams::default(), 11);
        let cfg = PlasticityConfig {
            rms: RmsScope::None,
            meta: false,
            reward_lut: false,
            window: 1000,
            c_clip: 1e9,
            ..PlasticityConfig::default()
        };
        let mut learner = OnlineLearner::new(&net, cfg.clone()).unwrap();
        let mut reference = net.clone();
        let mut ref_traces = learner.traces.clone();
        let lambdas = learner.lambdas();
        for t in 0..40 {
            let x = [(t % 4) as f64, 2.0, ((t * 7) % 3) as f64];
            let y = [((t as f64) * 0.3).sin(), 0.5];

            reference.forward(&x).unwrap();
            let rec = reference.record.clone();
            let e: Vec<f64> = y.iter().zip(&rec.y_hat).map(|(a, b)| a - b).collect();
            let e2 = reference.weights.w_out.matvec_t(&e);
            let e1 = reference.weights.w_h.matvec_t(&e2);
            let deltas = [
                (Layer::Output, hebbian_increment(&e, None, &rec.s2).unwrap()),
                (
                    Layer::Hidden,
                    hebbian_increment(&e2, Some(&rec.d2), &rec.s1).unwrap(),
                ),
                (
                    Layer::Input,
                    hebbian_increment(&e1, Some(&rec.d1), &rec.x).unwrap(),
                ),
                (
                    Layer::Recurrent,
                    hebbian_increment(&e1, Some(&rec.d1), &rec.s1_prev).unwrap(),
                ),
            ];
            for (layer, delta) in deltas {
                let tr = ref_traces.get_mut(layer).unwrap();
                let comb = update_traces(tr, &delta, lambdas, cfg.alpha_mix);
                crate::plasticity::apply_fast_update(
                    reference.weights.get_mut(layer).unwrap(),
                    &comb,
                    cfg.eta_fast0,
                );
                accumulate_momentum(tr, &comb, cfg.momentum);
            }

            online_update_step(&mut net, &mut learner, &x, &y).unwrap();
            assert!(
                net.weights.max_abs_diff(&reference.weights) < 1e-12,
                "step {t}"
            );
        }
        assert!(learner.traces.w_h.g.max_abs_diff(&ref_traces.w_h.g) < 1e-12);
    }

    #[test]
    fn zero_error_stream_leaves_traces_empty() {
        let arch = Architecture::new(4, 6, 5, 2).unwrap();
        let mut net = Network::new(arch, LifParams::default(), 3);
        let cfg = PlasticityConfig {
            window: 7,
            ..PlasticityConfig::default()
        };
        let mut learner = OnlineLearner::new(&net, cfg.clone()).unwrap();
        for t in 0..50 {
            let x = [1.0, (t % 3) as f64, 0.0, 2.0];
            let mut probe = net.clone();
            let y = probe.forward(&x).unwrap().to_vec();
            let before = net.weights.clone();
            let out = online_update_step(&mut net, &mut learner, &x, &y).unwrap();
            assert_eq!(out.loss, 0.0);
            for l in Layer::ALL {
                let tr = learner.traces.get(l).unwrap();
                assert!(tr.e_fast.as_slice().iter().all(|&v| v == 0.0));
                assert!(tr.g.as_slice().iter().all(|&v| v == 0.0));
            }
            if out.boundary {
                let k = (1.0 - learner.meta.s * cfg.eta_slow0) * (1.0 - cfg.weight_decay);
                let a = net.weights.w_in[(0, 0)];
                assert!((a - before.w_in[(0, 0)] * k).abs() < 1e-15);
            } else {
                assert_eq!(net.weights, before);
            }
        }
    }

    #[test]
    fn learner_memory_is_step_independent() {
        let arch = Architecture::new(8, 16, 12, 2).unwrap();
        let mut net = Network::new(arch, LifParams::default(), 9);
        let mut learner = OnlineLearner::new(&net, PlasticityConfig::default()).unwrap();
        let weight_bytes = net.weights.byte_size();
        assert_eq!(learner.traces.byte_size(), 3 * weight_bytes);
        let mut at_100 = 0;
        for t in 0..10_000 {
            let x: Vec<f64> = (0..8).map(|i| ((t + i) % 3) as f64).collect();
            online_update_step(&mut net, &mut learner, &x, &[0.3, -0.1]).unwrap();
            if t == 99 {
                at_100 = learner.aux_bytes() + net.aux_bytes();
            }
        }
        assert_eq!(learner.aux_bytes() + net.aux_bytes(), at_100);
        assert!(net.weights.is_finite());
        for (_, m) in net.weights.matrices() {
            for r in 0..m.rows() {
                assert!(m.row_norm(r) <= 6.0);
            }
        }
    }

    #[test]
    fn frozen_learner_changes_nothing() {
        let arch = Architecture::new(4, 6, 5, 2).unwrap();
        let mut net = Network::new(arch, LifParams::default(), 4);
        let cfg = PlasticityConfig {
            updates: UpdateMode::Frozen,
            window: 3,
            ..PlasticityConfig::default()
        };
        let mut learner = OnlineLearner::new(&net, cfg).unwrap();
        let before = net.weights.clone();
        for _ in 0..20 {
            online_update_step(&mut net, &mut learner, &[1.0, 2.0, 0.0, 1.0], &[1.0, -1.0])
                .unwrap();
        }
        assert_eq!(net.weights, before);
    }

    #[test]
    fn rejects_bad_target_length() {
        let mut net = hand_net();
        let mut learner = OnlineLearner::new(&net, raw_cfg()).unwrap();
        assert!(online_update_step(&mut net, &mut learner, &[1.0, 1.0], &[1.0]).is_err());
    }
}
