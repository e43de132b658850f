use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanConfig {
    pub process_noise: f64,
    pub observation_noise: f64,
    pub initial_covariance: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            process_noise: 0.1,
            observation_noise: 1.0,
            initial_covariance: 100.0,
        }
    }
}

/// Velocity-state Kalman filter: `x_{t+1} = A x_t + w`, `z_t = H x_t + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanModel {
    pub a: Matrix2<f64>,
    /// N×2 observation matrix.
    pub h: DMatrix<f64>,
    pub q: Matrix2<f64>,
    /// Isotropic observation noise variance.
    pub r: f64,
    pub p: Matrix2<f64>,
    pub x: Vector2<f64>,
    p0: Matrix2<f64>,
}

/// Relative floor under which a 2×2 Gram matrix is treated as singular.
const SINGULAR_RCOND: f64 = 1e-12;

fn to_dmatrix(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// Solves `min ‖B − Z·C‖` for the 2-column regressor `Z` via normal equations.
fn lstsq_2col(z: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let gram = z.transpose() * z;
    let g = Matrix2::new(gram[(0, 0)], gram[(0, 1)], gram[(1, 0)], gram[(1, 1)]);
    let scale = g.trace().abs();
    let det = g.determinant();
    if !(scale > 0.0) || !det.is_finite() || det.abs() <= SINGULAR_RCOND * scale * scale {
        return Err(Error::SingularFit(format!(
            "{what}: regressor Gram matrix is singular"
        )));
    }
    let inv = g
        .try_inverse()
        .ok_or_else(|| Error::SingularFit(what.to_string()))?;
    let inv = DMatrix::from_column_slice(2, 2, inv.as_slice());
    Ok(inv * (z.transpose() * b))
}

/// Least-squares fit of `A` (from consecutive velocities) and `H` (from
/// observations against velocities). `x` is T×N, `y` is T×2.
pub fn kf_fit(x: &Matrix, y: &Matrix, cfg: &KalmanConfig) -> Result<KalmanModel> {
    kf_fit_segments(x, y, &[], cfg)
}

/// As [`kf_fit`], but rows listed in `breaks` start a new segment, so the
/// pair (row−1, row) is excluded from the transition fit.
pub fn kf_fit_segments(
    x: &Matrix,
    y: &Matrix,
    breaks: &[usize],
    cfg: &KalmanConfig,
) -> Result<KalmanModel> {
    if y.cols() != 2 {
        return Err(Error::DimensionMismatch {
            context: "kf_fit velocity columns",
            expected: 2,
            actual: y.cols(),
        });
    }
    if x.rows() != y.rows() {
        return Err(Error::DimensionMismatch {
            context: "kf_fit rows",
            expected: y.rows(),
            actual: x.rows(),
        });
    }
    if y.rows() < 3 {
        return Err(Error::SingularFit(format!(
            "need at least 3 samples, got {}",
            y.rows()
        )));
    }
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::SingularFit("non-finite training data".into()));
    }
    let yd = to_dmatrix(y);
    let xd = to_dmatrix(x);
    let t = y.rows();
    let pairs: Vec<usize> = (1..t).filter(|r| !breaks.contains(r)).collect();
    let prev = yd.select_rows(pairs.iter().map(|r| r - 1).collect::<Vec<_>>().iter());
    let next = yd.select_rows(pairs.iter());
    // row-vector form next ≈ prev·A_ls, so the column-vector transition is A_lsᵀ
    let a_ls = lstsq_2col(&prev, &next, "transition")?;
    let h_t = lstsq_2col(&yd, &xd, "observation")?;
    let a = Matrix2::new(a_ls[(0, 0)], a_ls[(1, 0)], a_ls[(0, 1)], a_ls[(1, 1)]);
    let p0 = Matrix2::identity() * cfg.initial_covariance;
    Ok(KalmanModel {
        a,
        h: h_t.transpose(),
        q: Matrix2::identity() * cfg.process_noise,
        r: cfg.observation_noise,
        p: p0,
        x: Vector2::zeros(),
        p0,
    })
}

impl KalmanModel {
    pub fn from_parts(
        a: Matrix2<f64>,
        h: DMatrix<f64>,
        q: Matrix2<f64>,
        r: f64,
        p0: Matrix2<f64>,
        x: Vector2<f64>,
    ) -> Self {
        Self {
            a,
            h,
            q,
            r,
            p: p0,
            x,
            p0,
        }
    }

    pub fn n_obs(&self) -> usize {
        self.h.nrows()
    }

    pub fn reset(&mut self) {
        self.x = Vector2::zeros();
        self.p = self.p0;
    }

    /// `‖P − Pᵀ‖∞`
    pub fn asymmetry(&self) -> f64 {
        (self.p[(0, 1)] - self.p[(1, 0)]).abs()
    }
}

/// One predict/update cycle; returns the velocity estimate.
///
/// With isotropic observation noise the gain `PHᵀ(HPHᵀ + rI)⁻¹` equals
/// `(P⁻¹ + HᵀH/r)⁻¹Hᵀ/r`, so only 2×2 systems are solved.
pub fn kf_step(model: &mut KalmanModel, obs: &[f64]) -> Result<[f64; 2]> {
    let n = model.n_obs();
    if obs.len() != n {
        return Err(Error::DimensionMismatch {
            context: "kf_step observation",
            expected: n,
            actual: obs.len(),
        });
    }
    if !(model.r > 0.0) {
        return Err(Error::SingularInnovation);
    }
    let x_pred = model.a * model.x;
    let p_pred = model.a * model.p * model.a.transpose() + model.q;

    let h = &model.h;
    let hth = h.transpose() * h;
    let hth = Matrix2::new(hth[(0, 0)], hth[(0, 1)], hth[(1, 0)], hth[(1, 1)]) / model.r;
    let p_inv = p_pred.try_inverse().ok_or(Error::SingularInnovation)?;
    let mut p_new = (p_inv + hth)
        .try_inverse()
        .ok_or(Error::SingularInnovation)?;
    let off = 0.5 * (p_new[(0, 1)] + p_new[(1, 0)]);
    p_new[(0, 1)] = off;
    p_new[(1, 0)] = off;

    let mut innov = DVector::from_column_slice(obs);
    innov -= h * DVector::from_column_slice(x_pred.as_slice());
    let ht_innov = h.transpose() * innov;
    let x_new = x_pred + p_new * Vector2::new(ht_innov[0], ht_innov[1]) / model.r;
    if !p_new.iter().all(|v| v.is_finite()) || !x_new.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularInnovation);
    }
    model.x = x_new;
    model.p = p_new;
    Ok([x_new[0], x_new[1]])
}
