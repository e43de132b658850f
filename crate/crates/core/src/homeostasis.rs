//! Hardware-style stabilizers: RMS moving-average normalization through an
//! inverse-square-root lookup table, and per-neuron row-norm projection.

use serde::{Deserialize, Serialize};

use crate::linalg::{mean_square, norm, Matrix};

pub const DEFAULT_LAMBDA_RMS: f64 = 0.99;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Exponential moving average of a signal's mean square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsEma {
    pub mean_square: f64,
    pub lambda: f64,
    pub epsilon: f64,
}

impl Default for RmsEma {
    fn default() -> Self {
        Self::new(DEFAULT_LAMBDA_RMS)
    }
}

impl RmsEma {
    /// Starts at unit mean square so early steps are neither amplified nor muted.
    pub fn new(lambda: f64) -> Self {
        Self {
            mean_square: 1.0,
            lambda,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn with_initial(mut self, mean_square: f64) -> Self {
        self.mean_square = mean_square;
        self
    }

    pub fn update(&mut self, signal: &[f64]) {
        self.mean_square =
            self.lambda * self.mean_square + (1.0 - self.lambda) * mean_square(signal);
    }
}

pub const LUT_SIZE: usize = 256;
pub const LUT_MIN: f64 = 0.25;
pub const LUT_MAX: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LutLookup {
    Nearest,
    /// Linear interpolation between the two neighbouring entries.
    #[default]
    Linear,
}

/// 256 samples of `1/√x` on a linear grid over `[0.25, 8.0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InvSqrtLut {
    table: [f64; LUT_SIZE],
    lookup: LutLookup,
}

impl Default for InvSqrtLut {
    fn default() -> Self {
        Self::new(LutLookup::default())
    }
}

impl InvSqrtLut {
    pub fn new(lookup: LutLookup) -> Self {
        let mut table = [0.0; LUT_SIZE];
        for (k, v) in table.iter_mut().enumerate() {
            *v = 1.0 / Self::grid(k).sqrt();
        }
        Self { table, lookup }
    }

    #[inline]
    fn step() -> f64 {
        (LUT_MAX - LUT_MIN) / (LUT_SIZE - 1) as f64
    }

    #[inline]
    pub fn grid(k: usize) -> f64 {
        LUT_MIN + k as f64 * Self::step()
    }

    pub fn entries(&self) -> &[f64; LUT_SIZE] {
        &self.table
    }

    /// Approximate `1/√x`; `x` is clamped to the table domain first.
    pub fn inv_sqrt(&self, x: f64) -> f64 {
        let x = if x.is_nan() {
            LUT_MIN
        } else {
            x.clamp(LUT_MIN, LUT_MAX)
        };
        let pos = (x - LUT_MIN) / Self::step();
        match self.lookup {
            LutLookup::Nearest => self.table[(pos.round() as usize).min(LUT_SIZE - 1)],
            LutLookup::Linear => {
                let lo = (pos.floor() as usize).min(LUT_SIZE - 2);
                let frac = pos - lo as f64;
                self.table[lo] + frac * (self.table[lo + 1] - self.table[lo])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NormalizeMode {
    #[default]
    Lut,
    /// Float-exact `1/√(ms + ε)`.
    Exact,
}

/// Scales `signal` by the inverse RMS held in `state`. Call after
/// [`RmsEma::update`] for the current step.
pub fn normalize(
    signal: &[f64],
    state: &RmsEma,
    lut: &InvSqrtLut,
    mode: NormalizeMode,
) -> Vec<f64> {
    let mut out = signal.to_vec();
    normalize_in_place(&mut out, state, lut, mode);
    out
}

pub fn normalize_in_place(
    signal: &mut [f64],
    state: &RmsEma,
    lut: &InvSqrtLut,
    mode: NormalizeMode,
) {
    let g = inverse_rms(state, lut, mode);
    signal.iter_mut().for_each(|v| *v *= g);
}

#[inline]
pub fn inverse_rms(state: &RmsEma, lut: &InvSqrtLut, mode: NormalizeMode) -> f64 {
    let ms = state.mean_square + state.epsilon;
    match mode {
        NormalizeMode::Lut => lut.inv_sqrt(ms),
        NormalizeMode::Exact => 1.0 / ms.sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ProjectionMode {
    Exact,
    /// Divide by the smallest power of two that brings the row under the cap.
    #[default]
    Pow2,
}

/// Caps every row's L2 norm at `c`. Returns the number of rows rescaled.
pub fn project_rows(m: &mut Matrix, c: f64, mode: ProjectionMode) -> usize {
    debug_assert!(c > 0.0);
    let mut touched = 0;
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let n = norm(row);
        if n <= c {
            continue;
        }
        touched += 1;
        match mode {
            ProjectionMode::Exact => {
                let scale = c / n;
                row.iter_mut().for_each(|v| *v *= scale);
                // rounding in the elementwise products can still leave the norm a hair above c
                while norm(row) > c {
                    row.iter_mut().for_each(|v| *v *= 1.0 - f64::EPSILON);
                }
            }
            ProjectionMode::Pow2 => {
                let mut k = 1;
                while n / 2f64.powi(k) > c {
                    k += 1;
                }
                let scale = 2f64.powi(-k);
                row.iter_mut().for_each(|v| *v *= scale);
                while norm(row) > c {
                    row.iter_mut().for_each(|v| *v *= 0.5);
                }
            }
        }
    }
    touched
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ema_fixed_points() {
        let mut s = RmsEma::new(0.9);
        for _ in 0..2000 {
            s.update(&[2.0, -2.0]);
        }
        assert!((s.mean_square - 4.0).abs() < 1e-9);
        for _ in 0..2000 {
            s.update(&[0.0, 0.0]);
        }
        assert!(s.mean_square < 1e-9);

        let mut s = RmsEma::new(0.0);
        s.update(&[3.0, 4.0]);
        assert_eq!(s.mean_square, 12.5);
    }

    #[test]
    fn lut_endpoints() {
        let lut = InvSqrtLut::default();
        assert_eq!(lut.entries()[0], 2.0);
        assert!((lut.entries()[255] - 1.0 / 8f64.sqrt()).abs() < 1e-15);
        assert!(lut.entries().windows(2).all(|w| w[1] < w[0]));
        assert_eq!(lut.inv_sqrt(0.25), 2.0);
        assert!((lut.inv_sqrt(1.0) - 1.0).abs() < 0.01);
        assert!((lut.inv_sqrt(100.0) - 0.35355).abs() < 1e-4);
        assert_eq!(lut.inv_sqrt(0.0), 2.0);
    }

    #[test]
    fn nearest_lookup_is_monotone() {
        let lut = InvSqrtLut::new(LutLookup::Nearest);
        let mut prev = f64::INFINITY;
        for i in 0..5000 {
            let v = lut.inv_sqrt(0.2 + i as f64 * 0.002);
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn normalize_examples() {
        let lut = InvSqrtLut::default();
        let mut s = RmsEma::new(0.0);
        s.update(&[3.0, 4.0]);
        let out = normalize(&[3.0, 4.0], &s, &lut, NormalizeMode::Exact);
        assert!((out[0] - 0.848528).abs() < 1e-6);
        assert!((out[1] - 1.131371).abs() < 1e-6);
        assert_eq!(
            normalize(&[0.0, 0.0], &s, &lut, NormalizeMode::Lut),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn projection_examples() {
        let mut m = Matrix::from_rows(&[&[3.0, 4.0]]);
        assert_eq!(project_rows(&mut m, 6.0, ProjectionMode::Exact), 0);
        assert_eq!(m.as_slice(), &[3.0, 4.0]);

        let mut m = Matrix::from_rows(&[&[6.0, 8.0]]);
        project_rows(&mut m, 6.0, ProjectionMode::Exact);
        assert!((m[(0, 0)] - 3.6).abs() < 1e-12 && (m[(0, 1)] - 4.8).abs() < 1e-12);

        let mut m = Matrix::from_rows(&[&[6.0, 8.0]]);
        project_rows(&mut m, 6.0, ProjectionMode::Pow2);
        assert_eq!(m.as_slice(), &[3.0, 4.0]);

        let mut m = Matrix::from_rows(&[&[60.0, 80.0]]);
        project_rows(&mut m, 6.0, ProjectionMode::Pow2);
        assert_eq!(m.as_slice(), &[1.875, 2.5]);
    }
}
