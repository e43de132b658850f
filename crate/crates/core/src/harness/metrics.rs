use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::Matrix;
use crate::snn::Network;

/// Pearson correlation between two equal-length series.
pub fn pearson_r(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            context: "pearson_r",
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    if pred.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two samples"));
    }
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&p, &t) in pred.iter().zip(truth) {
        let (dp, dt) = (p - mp, t - mt);
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    if sxx == 0.0 || syy == 0.0 || !(sxx.is_finite() && syy.is_finite()) {
        return Err(Error::UndefinedCorrelation("zero or non-finite variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson R that maps an undefined correlation (e.g. a constant prediction) to 0.
pub fn pearson_r_or_zero(pred: &[f64], truth: &[f64]) -> f64 {
    pearson_r(pred, truth).unwrap_or(0.0)
}

/// Runs a copy of `net` from a reset state over the rows of `x`, resetting
/// every `reset_every` steps when given. Returns the predictions (T×n_out).
pub fn predict_stream(net: &Network, x: &Matrix, reset_every: Option<usize>) -> Result<Matrix> {
    check_len("stream input width", net.arch.n_in, x.cols())?;
    let mut n = net.clone();
    n.reset_state();
    let mut out = Matrix::zeros(x.rows(), net.arch.n_out);
    for t in 0..x.rows() {
        if t > 0 && reset_every.is_some_and(|k| k > 0 && t % k == 0) {
            n.reset_state();
        }
        let y = n.forward(x.row(t))?;
        out.row_mut(t).copy_from_slice(y);
    }
    Ok(out)
}

/// Per-axis Pearson R of two T×2 matrices; undefined correlations count as 0.
pub fn axis_r(pred: &Matrix, truth: &Matrix) -> Result<(f64, f64)> {
    check_len("axis_r rows", truth.rows(), pred.rows())?;
    check_len("axis_r cols", 2, pred.cols())?;
    let col = |m: &Matrix, c: usize| (0..m.rows()).map(|r| m[(r, c)]).collect::<Vec<f64>>();
    Ok((
        pearson_r_or_zero(&col(pred, 0), &col(truth, 0)),
        pearson_r_or_zero(&col(pred, 1), &col(truth, 1)),
    ))
}

/// Validation R of a frozen network streamed over `x` from a reset state.
pub fn evaluate_stream(net: &Network, x: &Matrix, y: &Matrix) -> Result<(f64, f64)> {
    let pred = predict_stream(net, x, None)?;
    axis_r(&pred, y)
}

/// Trailing mean over up to `window` values; the window shrinks at the head.
pub fn rolling_mean(times: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(times.len());
    let mut sum = 0.0;
    for i in 0..times.len() {
        sum += times[i];
        if i >= window {
            sum -= times[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

pub const DEFAULT_ROLLING_WINDOW: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeStats {
    /// Rolling mean per run.
    pub rolling: Vec<Vec<f64>>,
    /// Across-run mean of the rolling curves, per trial index.
    pub mean: Vec<f64>,
    /// Standard error of `mean`; zero when only one run is present.
    pub sem: Vec<f64>,
    pub n_runs: usize,
    pub single_run: bool,
}

/// Rolling means per run plus their across-run mean and SEM. Runs are
/// truncated to the shortest one.
pub fn time_to_target_stats(runs: &[Vec<f64>], window: usize) -> TimeStats {
    let rolling: Vec<Vec<f64>> = runs.iter().map(|r| rolling_mean(r, window)).collect();
    let len = rolling.iter().map(Vec::len).min().unwrap_or(0);
    let n = rolling.len();
    let mut mean = vec![0.0; len];
    let mut sem = vec![0.0; len];
    for i in 0..len {
        let vals: Vec<f64> = rolling.iter().map(|r| r[i]).collect();
        let (m, s) = mean_sem(&vals);
        mean[i] = m;
        sem[i] = s;
    }
    TimeStats {
        rolling,
        mean,
        sem,
        n_runs: n,
        single_run: n == 1,
    }
}

/// Sample mean and standard error (`sd / √n`, `n − 1` denominator).
pub fn mean_sem(vals: &[f64]) -> (f64, f64) {
    if vals.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = vals.len() as f64;
    let m = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (m, 0.0);
    }
    let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

pub fn median(vals: &[f64]) -> f64 {
    if vals.is_empty() {
        return f64::NAN;
    }
    let mut v = vals.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}
