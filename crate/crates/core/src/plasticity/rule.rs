use serde::{Deserialize, Serialize};

use super::config::{ConsolidationMode, PlasticityConfig, TraceMode, WindowAverage};
use super::meta::MetaState;
use crate::error::{check_len, Error, Result};
use crate::homeostasis::{normalize_in_place, InvSqrtLut, NormalizeMode, RmsEma};
use crate::linalg::Matrix;
use crate::snn::{Layer, Weights};

/// Per-matrix learning state: fast and slow eligibility plus the momentum accumulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTraces {
    pub e_fast: Matrix,
    pub e_slow: Matrix,
    pub g: Matrix,
    /// Running sum of `G` over the window; only allocated in arithmetic-mean mode.
    pub g_sum: Option<Matrix>,
}

impl LayerTraces {
    pub fn zeros(rows: usize, cols: usize, arithmetic_window: bool) -> Self {
        Self {
            e_fast: Matrix::zeros(rows, cols),
            e_slow: Matrix::zeros(rows, cols),
            g: Matrix::zeros(rows, cols),
            g_sum: arithmetic_window.then(|| Matrix::zeros(rows, cols)),
        }
    }

    pub fn byte_size(&self) -> usize {
        self.e_fast.byte_size()
            + self.e_slow.byte_size()
            + self.g.byte_size()
            + self.g_sum.as_ref().map_or(0, Matrix::byte_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSet {
    pub w_in: LayerTraces,
    pub w_rec: Option<LayerTraces>,
    pub w_h: LayerTraces,
    pub w_out: LayerTraces,
    /// Steps taken in the current consolidation window.
    pub window_step: usize,
}

impl TraceSet {
    pub fn for_weights(w: &Weights, window_average: WindowAverage) -> Self {
        let arith = window_average == WindowAverage::ArithmeticMean;
        let z = |m: &Matrix| LayerTraces::zeros(m.rows(), m.cols(), arith);
        Self {
            w_in: z(&w.w_in),
            w_rec: w.w_rec.as_ref().map(z),
            w_h: z(&w.w_h),
            w_out: z(&w.w_out),
            window_step: 0,
        }
    }

    pub fn get(&self, layer: Layer) -> Option<&LayerTraces> {
        match layer {
            Layer::Input => Some(&self.w_in),
            Layer::Recurrent => self.w_rec.as_ref(),
            Layer::Hidden => Some(&self.w_h),
            Layer::Output => Some(&self.w_out),
        }
    }

    pub fn get_mut(&mut self, layer: Layer) -> Option<&mut LayerTraces> {
        match layer {
            Layer::Input => Some(&mut self.w_in),
            Layer::Recurrent => self.w_rec.as_mut(),
            Layer::Hidden => Some(&mut self.w_h),
            Layer::Output => Some(&mut self.w_out),
        }
    }

    pub fn byte_size(&self) -> usize {
        Layer::ALL
            .iter()
            .filter_map(|&l| self.get(l))
            .map(LayerTraces::byte_size)
            .sum()
    }
}

/// Error signals for one step: normalized output error and the spatially
/// propagated hidden-layer drives.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDrives {
    pub raw: Vec<f64>,
    pub e_out: Vec<f64>,
    pub e2: Vec<f64>,
    pub e1: Vec<f64>,
}

/// Computes `ẽ_out = R(y − ŷ)`, `e2 = W_outᵀ·ẽ_out`, `e1 = W_hᵀ·e2` from the
/// current weights only. `out_rms` is updated with this step's raw error; pass
/// `None` to skip output-error normalization.
pub fn compute_error_drives(
    weights: &Weights,
    y_true: &[f64],
    y_hat: &[f64],
    out_rms: Option<&mut RmsEma>,
    lut: &InvSqrtLut,
    mode: NormalizeMode,
) -> Result<ErrorDrives> {
    let n_out = weights.w_out.rows();
    check_len("error drives y_true", n_out, y_true.len())?;
    check_len("error drives y_hat", n_out, y_hat.len())?;
    let raw: Vec<f64> = y_true.iter().zip(y_hat).map(|(t, p)| t - p).collect();
    let mut e_out = raw.clone();
    if let Some(rms) = out_rms {
        rms.update(&raw);
        normalize_in_place(&mut e_out, rms, lut, mode);
    }
    let e2 = weights.w_out.matvec_t(&e_out);
    let e1 = weights.w_h.matvec_t(&e2);
    Ok(ErrorDrives { raw, e_out, e2, e1 })
}

/// `ΔW[j][i] = (e_j · d_j) · pre_i`; `d = None` means unit sensitivity.
pub fn hebbian_increment(e: &[f64], d: Option<&[f64]>, pre: &[f64]) -> Result<Matrix> {
    if let Some(d) = d {
        check_len("hebbian sensitivity", e.len(), d.len())?;
    }
    let post: Vec<f64> = match d {
        Some(d) => e.iter().zip(d).map(|(a, b)| a * b).collect(),
        None => e.to_vec(),
    };
    let mut delta = Matrix::zeros(e.len(), pre.len());
    delta.add_outer(&post, pre);
    Ok(delta)
}

/// `λ = exp(−dt/τ_eff)` for the fast and slow traces.
pub fn decay_coefficients(cfg: &PlasticityConfig) -> (f64, f64) {
    let (tf, ts) = cfg.effective_taus();
    let lf = (-cfg.dt_ms / tf).exp();
    let ls = (-cfg.dt_ms / ts).exp();
    match cfg.traces {
        TraceMode::Medium => {
            let lm = (-cfg.dt_ms / (tf * ts).sqrt()).exp();
            (lm, lm)
        }
        _ => (lf, ls),
    }
}

/// Decays both traces, adds `delta`, and returns the mixed trace.
pub fn update_traces(
    traces: &mut LayerTraces,
    delta: &Matrix,
    lambdas: (f64, f64),
    alpha_mix: f64,
) -> Matrix {
    let (lf, ls) = lambdas;
    let mut comb = Matrix::zeros(delta.rows(), delta.cols());
    let ef = traces.e_fast.as_mut_slice();
    let es = traces.e_slow.as_mut_slice();
    for (((f, s), &d), c) in ef
        .iter_mut()
        .zip(es.iter_mut())
        .zip(delta.as_slice())
        .zip(comb.as_mut_slice())
    {
        *f = lf * *f + d;
        *s = ls * *s + d;
        *c = alpha_mix * *f + (1.0 - alpha_mix) * *s;
    }
    comb
}

pub fn apply_fast_update(w: &mut Matrix, e_comb: &Matrix, eta: f64) {
    w.axpy(eta, e_comb);
}

pub fn accumulate_momentum(traces: &mut LayerTraces, e_comb: &Matrix, mu: f64) {
    for (g, &c) in traces.g.as_mut_slice().iter_mut().zip(e_comb.as_slice()) {
        *g = mu * *g + (1.0 - mu) * c;
    }
    if let Some(sum) = traces.g_sum.as_mut() {
        sum.axpy(1.0, &traces.g);
    }
}

/// `R(X) = X / (√mean(X²) + ε)`
pub fn rms_normalize(x: &Matrix, epsilon: f64) -> Matrix {
    let denom = x.mean_square().sqrt() + epsilon;
    let mut out = x.clone();
    out.scale(1.0 / denom);
    out
}

/// Folds the window's smoothed evidence into the weights and applies weight
/// decay. Must be called exactly when the window is full.
pub fn consolidate(
    weights: &mut Weights,
    traces: &mut TraceSet,
    cfg: &PlasticityConfig,
    meta: &MetaState,
) -> Result<()> {
    if traces.window_step != cfg.window {
        return Err(Error::ContractViolation(format!(
            "consolidate called at window step {} (window is {})",
            traces.window_step, cfg.window
        )));
    }
    let alpha = meta.s * cfg.eta_slow0;
    let decay = 1.0 - cfg.weight_decay;
    let k = cfg.window as f64;
    for layer in Layer::ALL {
        let (Some(w), Some(tr)) = (weights.get_mut(layer), traces.get_mut(layer)) else {
            continue;
        };
        let g_bar = match tr.g_sum.as_mut() {
            Some(sum) => {
                let mut mean = sum.clone();
                mean.scale(1.0 / k);
                sum.fill(0.0);
                mean
            }
            None => tr.g.clone(),
        };
        let r = rms_normalize(&g_bar, crate::homeostasis::DEFAULT_EPSILON);
        if matches!(cfg.consolidation, ConsolidationMode::Blend) {
            w.scale(1.0 - alpha);
        }
        w.axpy(alpha, &r);
        w.scale(decay);
    }
    traces.window_step = 0;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snn::Architecture;

    #[test]
    fn hebbian_examples() {
        let d = hebbian_increment(&[1.0, -1.0], Some(&[0.5, 0.5]), &[2.0]).unwrap();
        assert_eq!(d.as_slice(), &[1.0, -1.0]);
        let d = hebbian_increment(&[1.0, 2.0], Some(&[0.3, 0.1]), &[0.0, 0.0]).unwrap();
        assert!(d.as_slice().iter().all(|&v| v == 0.0));
        let d = hebbian_increment(&[1.0, 2.0], Some(&[0.0, 0.1]), &[1.0, 3.0]).unwrap();
        assert_eq!(d.row(0), &[0.0, 0.0]);
        assert!(hebbian_increment(&[1.0], Some(&[1.0, 1.0]), &[1.0]).is_err());
    }

    #[test]
    fn decay_examples() {
        let mut cfg = PlasticityConfig {
            dt_ms: 10.0,
            ..PlasticityConfig::default()
        };
        let (lf, _) = decay_coefficients(&cfg);
        assert!((lf - (-1.0f64 / 12.0).exp()).abs() < 1e-15);
        assert!((lf - 0.9200).abs() < 1e-4);
        cfg.online_mode = true;
        let (lf, ls) = decay_coefficients(&cfg);
        assert!((lf - 0.8465).abs() < 1e-4);
        assert!((ls - (-10.0f64 / 560.0).exp()).abs() < 1e-15);
        cfg.dt_ms = 1e-9;
        let (lf, ls) = decay_coefficients(&cfg);
        assert!(1.0 - lf < 1e-9 && 1.0 - ls < 1e-9);
    }

    #[test]
    fn mixing_identity_and_zero_stream() {
        let mut tr = LayerTraces::zeros(2, 2, false);
        let delta = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let comb = update_traces(&mut tr, &delta, (0.9, 0.99), 1.0);
        assert_eq!(comb, tr.e_fast);
        let mut tr = LayerTraces::zeros(2, 2, false);
        let zero = Matrix::zeros(2, 2);
        for _ in 0..100 {
            let c = update_traces(&mut tr, &zero, (0.9, 0.99), 0.5);
            assert!(c.as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn momentum_examples() {
        let c = Matrix::from_rows(&[&[2.0, -1.0]]);
        let mut tr = LayerTraces::zeros(1, 2, false);
        for _ in 0..500 {
            accumulate_momentum(&mut tr, &c, 0.9);
        }
        assert!(tr.g.max_abs_diff(&c) < 1e-12);

        let mut tr = LayerTraces::zeros(1, 2, false);
        accumulate_momentum(&mut tr, &c, 0.0);
        assert_eq!(tr.g, c);

        let mut tr = LayerTraces::zeros(1, 2, false);
        tr.g.fill(0.3);
        accumulate_momentum(&mut tr, &c, 1.0);
        assert_eq!(tr.g.as_slice(), &[0.3, 0.3]);
    }

    #[test]
    fn fast_update_examples() {
        let mut w = Matrix::from_rows(&[&[1.0, -2.0]]);
        let orig = w.clone();
        let e = Matrix::from_rows(&[&[0.5, 0.25]]);
        apply_fast_update(&mut w, &e, 0.0);
        assert_eq!(w, orig);
        let mut neg = orig.clone();
        neg.scale(-1.0);
        apply_fast_update(&mut w, &neg, 1.0);
        assert!(w.as_slice().iter().all(|&v| v == 0.0));

        let mut a = orig.clone();
        apply_fast_update(&mut a, &e, 0.1);
        apply_fast_update(&mut a, &e, 0.1);
        let mut b = orig.clone();
        apply_fast_update(&mut b, &e, 0.2);
        assert!(a.max_abs_diff(&b) < 1e-15);
    }

    #[test]
    fn rms_normalize_example() {
        let x = Matrix::from_rows(&[&[2.0, -2.0], &[2.0, 2.0]]);
        let r = rms_normalize(&x, 1e-8);
        assert!((r[(0, 0)] - 2.0 / (2.0 + 1e-8)).abs() < 1e-15);
        let z = rms_normalize(&Matrix::zeros(2, 2), 1e-8);
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
    }

    fn small_weights() -> (Weights, TraceSet) {
        let arch = Architecture::new(2, 2, 2, 2).unwrap();
        let w = crate::snn::init_network(&arch, 1);
        let tr = TraceSet::for_weights(&w, WindowAverage::Ema);
        (w, tr)
    }

    #[test]
    fn consolidate_zero_evidence_and_zero_rate() {
        let cfg = PlasticityConfig {
            window: 3,
            eta_slow0: 0.1,
            ..PlasticityConfig::default()
        };
        let meta = MetaState::new(&cfg);
        let (mut w, mut tr) = small_weights();
        let orig = w.clone();
        tr.window_step = 3;
        consolidate(&mut w, &mut tr, &cfg, &meta).unwrap();
        let k = (1.0 - 0.1) * (1.0 - 1e-5);
        for ((_, a), (_, b)) in w.matrices().zip(orig.matrices()) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y * k).abs() < 1e-15);
            }
        }
        assert_eq!(tr.window_step, 0);

        let cfg0 = PlasticityConfig {
            window: 3,
            eta_slow0: 0.0,
            ..cfg
        };
        let (mut w, mut tr) = small_weights();
        tr.w_in.g.fill(5.0);
        tr.window_step = 3;
        consolidate(&mut w, &mut tr, &cfg0, &meta).unwrap();
        assert!((w.w_in[(0, 0)] - orig.w_in[(0, 0)] * (1.0 - 1e-5)).abs() < 1e-15);
    }

    #[test]
    fn consolidate_off_boundary_is_error() {
        let cfg = PlasticityConfig {
            window: 5,
            ..PlasticityConfig::default()
        };
        let meta = MetaState::new(&cfg);
        let (mut w, mut tr) = small_weights();
        tr.window_step = 2;
        assert!(matches!(
            consolidate(&mut w, &mut tr, &cfg, &meta),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn drives_vanish_without_error_and_scale_linearly() {
        let (w, _) = small_weights();
        let lut = InvSqrtLut::default();
        let d = compute_error_drives(
            &w,
            &[0.3, -0.2],
            &[0.3, -0.2],
            None,
            &lut,
            NormalizeMode::Lut,
        )
        .unwrap();
        assert!(d.e2.iter().chain(&d.e1).all(|&v| v == 0.0));

        let d1 = compute_error_drives(&w, &[1.0, 0.5], &[0.0, 0.0], None, &lut, NormalizeMode::Lut)
            .unwrap();
        let d2 = compute_error_drives(&w, &[2.0, 1.0], &[0.0, 0.0], None, &lut, NormalizeMode::Lut)
            .unwrap();
        for (a, b) in d1.e2.iter().zip(&d2.e2).chain(d1.e1.iter().zip(&d2.e1)) {
            assert!((2.0 * a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn drives_follow_transposed_weights() {
        let arch = Architecture::new(2, 2, 2, 2).unwrap();
        let mut w = Weights::zeros(&arch);
        w.w_out = Matrix::from_rows(&[&[1.0, 0.5], &[0.0, 1.0]]);
        w.w_h = Matrix::from_rows(&[&[2.0, 0.0], &[1.0, 1.0]]);
        let lut = InvSqrtLut::default();
        let d = compute_error_drives(&w, &[1.0, 0.0], &[0.0, 0.0], None, &lut, NormalizeMode::Lut)
            .unwrap();
        assert_eq!(d.e2, vec![1.0, 0.5]);
        assert_eq!(d.e1, vec![2.5, 0.5]);
    }
}
