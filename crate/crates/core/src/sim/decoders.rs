use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::baselines::{kf_fit_segments, kf_step, KalmanConfig, KalmanModel};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::plasticity::{online_update_step, OnlineLearner, PlasticityConfig};
use crate::snn::Network;

/// A closed-loop velocity decoder. `ideal` is the controller's velocity for
/// this step; only adaptive decoders look at it.
pub trait Decoder {
    fn name(&self) -> &str;

    /// Called before the first step of every reach.
    fn begin_trial(&mut self) {}

    fn step(&mut self, spikes: &[f64], ideal: [f64; 2]) -> Result<[f64; 2]>;
}

fn pair(y: &[f64]) -> [f64; 2] {
    [y[0], y[1]]
}

/// Spiking decoder trained online by the local three-factor rule.
#[derive(Debug, Clone)]
pub struct OnlineSnnDecoder {
    pub net: Network,
    pub learner: OnlineLearner,
    pub learning: bool,
}

impl OnlineSnnDecoder {
    pub fn new(net: Network, cfg: PlasticityConfig) -> Result<Self> {
        let learner = OnlineLearner::new(&net, cfg)?;
        Ok(Self {
            net,
            learner,
            learning: true,
        })
    }
}

impl Decoder for OnlineSnnDecoder {
    fn name(&self) -> &str {
        "online_snn"
    }

    fn begin_trial(&mut self) {
        self.net.reset_state();
    }

    fn step(&mut self, spikes: &[f64], ideal: [f64; 2]) -> Result<[f64; 2]> {
        if self.learning {
            let out = online_update_step(&mut self.net, &mut self.learner, spikes, &ideal)?;
            Ok(pair(&out.y_hat))
        } else {
            Ok(pair(self.net.forward(spikes)?))
        }
    }
}

/// Spiking decoder with fixed (BPTT-trained or random) weights.
#[derive(Debug, Clone)]
pub struct FrozenSnnDecoder {
    pub net: Network,
}

impl Decoder for FrozenSnnDecoder {
    fn name(&self) -> &str {
        "bptt_snn"
    }

    fn begin_trial(&mut self) {
        self.net.reset_state();
    }

    fn step(&mut self, spikes: &[f64], _ideal: [f64; 2]) -> Result<[f64; 2]> {
        Ok(pair(self.net.forward(spikes)?))
    }
}

/// Kalman filter on mean-centred spike observations.
#[derive(Debug, Clone)]
pub struct KalmanDecoder {
    pub model: KalmanModel,
    pub obs_mean: Vec<f64>,
    buf: Vec<f64>,
}

impl KalmanDecoder {
    /// Fits on logged spikes (T×N) and ideal velocities (T×2); `breaks`
    /// are the rows where a new reach starts.
    pub fn fit(
        spikes: &Matrix,
        velocities: &Matrix,
        breaks: &[usize],
        cfg: &KalmanConfig,
    ) -> Result<Self> {
        let (t, n) = spikes.shape();
        if t == 0 {
            return Err(Error::SingularFit("no calibration data".into()));
        }
        let mut mean = vec![0.0; n];
        for r in 0..t {
            mean.iter_mut()
                .zip(spikes.row(r))
                .for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= t as f64);
        let mut centred = spikes.clone();
        for r in 0..t {
            centred
                .row_mut(r)
                .iter_mut()
                .zip(&mean)
                .for_each(|(v, m)| *v -= m);
        }
        let model = kf_fit_segments(&centred, velocities, breaks, cfg)?;
        Ok(Self {
            model,
            buf: vec![0.0; n],
            obs_mean: mean,
        })
    }

    /// Uncalibrated filter: identity-scaled transition and a random
    /// observation matrix.
    pub fn untrained(n_obs: usize, cfg: &KalmanConfig, rng: &mut impl Rng) -> Self {
        use nalgebra::{DMatrix, Matrix2, Vector2};
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let h = DMatrix::from_fn(n_obs, 2, |_, _| normal.sample(rng));
        let p0 = Matrix2::identity() * cfg.initial_covariance;
        let model = KalmanModel::from_parts(
            Matrix2::identity() * 0.95,
            h,
            Matrix2::identity() * cfg.process_noise,
            cfg.observation_noise,
            p0,
            Vector2::zeros(),
        );
        Self {
            model,
            obs_mean: vec![0.0; n_obs],
            buf: vec![0.0; n_obs],
        }
    }
}

impl Decoder for KalmanDecoder {
    fn name(&self) -> &str {
        "kalman"
    }

    fn begin_trial(&mut self) {
        self.model.reset();
    }

    fn step(&mut self, spikes: &[f64], _ideal: [f64; 2]) -> Result<[f64; 2]> {
        for ((b, s), m) in self.buf.iter_mut().zip(spikes).zip(&self.obs_mean) {
            *b = s - m;
        }
        kf_step(&mut self.model, &self.buf)
    }
}

/// Returns the ideal velocity exactly.
#[derive(Debug, Clone, Default)]
pub struct OracleDecoder;

impl Decoder for OracleDecoder {
    fn name(&self) -> &str {
        "oracle"
    }

    fn step(&mut self, _spikes: &[f64], ideal: [f64; 2]) -> Result<[f64; 2]> {
        Ok(ideal)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ZeroDecoder;

impl Decoder for ZeroDecoder {
    fn name(&self) -> &str {
        "zero"
    }

    fn step(&mut self, _spikes: &[f64], _ideal: [f64; 2]) -> Result<[f64; 2]> {
        Ok([0.0, 0.0])
    }
}

/// Fixed random recurrent policy `h ← tanh(W_x s + W_h h)`, `v = W_o h`,
/// standing in for an untrained network driving the cursor.
#[derive(Debug, Clone)]
pub struct RandomDriver {
    w_x: Matrix,
    w_h: Matrix,
    w_o: Matrix,
    h: Vec<f64>,
    pre: Vec<f64>,
}

impl RandomDriver {
    pub fn new(n_in: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut fill = |rows: usize, cols: usize, gain: f64| {
            let normal = Normal::new(0.0, gain / (cols as f64).sqrt()).expect("finite gain");
            Matrix::from_vec(
                rows,
                cols,
                (0..rows * cols).map(|_| normal.sample(rng)).collect(),
            )
        };
        Self {
            w_x: fill(hidden, n_in, 1.0),
            w_h: fill(hidden, hidden, 0.9),
            w_o: fill(2, hidden, 1.0),
            h: vec![0.0; hidden],
            pre: vec![0.0; hidden],
        }
    }
}

impl Decoder for RandomDriver {
    fn name(&self) -> &str {
        "random_driver"
    }

    fn begin_trial(&mut self) {
        self.h.fill(0.0);
    }

    fn step(&mut self, spikes: &[f64], _ideal: [f64; 2]) -> Result<[f64; 2]> {
        self.w_x.matvec_into(spikes, &mut self.pre);
        self.w_h.matvec_add_into(&self.h, &mut self.pre);
        for (h, p) in self.h.iter_mut().zip(&self.pre) {
            *h = p.tanh();
        }
        Ok(pair(&self.w_o.matvec(&self.h)))
    }
}
