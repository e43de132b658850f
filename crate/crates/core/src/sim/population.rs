use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    /// Must be a multiple of 4 (equal share per quadrant).
    pub n_neurons: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub sigma: f64,
    /// Seconds per step.
    pub dt: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            n_neurons: 96,
            r_min: 5.0,
            r_max: 100.0,
            sigma: 0.02,
            dt: 0.01,
        }
    }
}

/// Cosine-tuned units encoding a 2-D velocity direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPopulation {
    pub directions: Vec<[f64; 2]>,
    pub r_min: f64,
    pub r_max: f64,
    pub sigma: f64,
    pub dt: f64,
    /// `false` silences the unit.
    pub mask: Vec<bool>,
}

impl SyntheticPopulation {
    /// Equal numbers of preferred directions per quadrant, uniform within each.
    pub fn new(cfg: &PopulationConfig, rng: &mut impl Rng) -> Self {
        let per = cfg.n_neurons / 4;
        let mut directions = Vec::with_capacity(cfg.n_neurons);
        for q in 0..4 {
            let count = if q == 3 { cfg.n_neurons - 3 * per } else { per };
            for _ in 0..count {
                let theta = q as f64 * FRAC_PI_2 + rng.gen_range(0.0..FRAC_PI_2);
                directions.push([theta.cos(), theta.sin()]);
            }
        }
        Self {
            directions,
            r_min: cfg.r_min,
            r_max: cfg.r_max,
            sigma: cfg.sigma,
            dt: cfg.dt,
            mask: vec![true; cfg.n_neurons],
        }
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    /// Cosine tuning on the half-length direction `v/(2‖v‖)`; speed is not encoded.
    pub fn firing_rates(&self, v: [f64; 2]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.firing_rates_into(v, &mut out);
        out
    }

    pub fn firing_rates_into(&self, v: [f64; 2], out: &mut [f64]) {
        let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
        let vh = if n > 0.0 {
            [v[0] / (2.0 * n), v[1] / (2.0 * n)]
        } else {
            [0.0, 0.0]
        };
        for (r, d) in out.iter_mut().zip(&self.directions) {
            let c = ((d[0] * vh[0] + d[1] * vh[1] + 0.5) / 1.5).max(0.0);
            *r = self.r_min + (self.r_max - self.r_min) * c;
        }
    }

    /// Per-unit spike probability `clamp(r·dt + N(0, σ²), 0, 1)` then a
    /// Bernoulli draw. Every unit consumes the same draws whether masked or
    /// not, so the mask is a pure post-filter.
    pub fn sample_spikes(&self, rates: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.sample_spikes_into(rates, rng, &mut out);
        out
    }

    pub fn sample_spikes_into(&self, rates: &[f64], rng: &mut impl Rng, out: &mut [f64]) {
        let noise = Normal::new(0.0, self.sigma.max(0.0)).expect("finite sigma");
        for i in 0..self.len() {
            let p = (rates[i] * self.dt + noise.sample(rng)).clamp(0.0, 1.0);
            let u: f64 = rng.gen();
            out[i] = if u < p && self.mask[i] { 1.0 } else { 0.0 };
        }
    }

    /// Spike counts over `substeps` consecutive draws at the same rates.
    pub fn sample_counts(&self, rates: &[f64], substeps: usize, rng: &mut impl Rng) -> Vec<f64> {
        let mut counts = vec![0.0; self.len()];
        let mut s = vec![0.0; self.len()];
        for _ in 0..substeps {
            self.sample_spikes_into(rates, rng, &mut s);
            counts.iter_mut().zip(&s).for_each(|(c, v)| *c += v);
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pop() -> SyntheticPopulation {
        SyntheticPopulation::new(
            &PopulationConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
    }

    #[test]
    fn quadrant_balance_and_unit_norm() {
        let p = pop();
        let mut counts = [0; 4];
        for d in &p.directions {
            assert!(((d[0] * d[0] + d[1] * d[1]).sqrt() - 1.0).abs() < 1e-12);
            let q = (d[1].atan2(d[0]).rem_euclid(std::f64::consts::TAU) / FRAC_PI_2) as usize;
            counts[q.min(3)] += 1;
        }
        assert_eq!(counts, [24; 4]);
    }

    #[test]
    fn rate_examples() {
        let mut p = pop();
        for r in p.firing_rates([0.0, 0.0]) {
            assert!((r - (5.0 + 95.0 / 3.0)).abs() < 1e-12);
        }
        p.directions[0] = [1.0, 0.0];
        assert!((p.firing_rates([2.0, 0.0])[0] - (5.0 + 95.0 / 1.5)).abs() < 1e-12);
        // d·v̂ = −0.5 clamps to r_min
        assert!((p.firing_rates([-7.0, 0.0])[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn saturated_rate_always_spikes() {
        let mut p = pop();
        p.sigma = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = p.sample_spikes(&vec![100.0; 96], &mut rng);
        assert!(s.iter().all(|&v| v == 1.0));
        p.mask[5] = false;
        let s = p.sample_spikes(&vec![100.0; 96], &mut rng);
        assert_eq!(s[5], 0.0);
    }

    #[test]
    fn empirical_rate_matches_probability() {
        let mut p = pop();
        p.sigma = 0.0;
        let rates = p.firing_rates([0.3, -0.8]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let mut sums = vec![0.0; 96];
        for _ in 0..n {
            let s = p.sample_spikes(&rates, &mut rng);
            sums.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
        }
        for (sum, r) in sums.iter().zip(&rates) {
            let prob = r * p.dt;
            let sd = (prob * (1.0 - prob) / n as f64).sqrt();
            assert!((sum / n as f64 - prob).abs() <= 3.0 * sd + 1e-12);
        }
    }

    #[test]
    fn masking_is_a_post_filter() {
        let p = pop();
        let mut masked = p.clone();
        for i in (0..96).step_by(3) {
            masked.mask[i] = false;
        }
        let rates = p.firing_rates([1.0, 1.0]);
        let mut r1 = ChaCha8Rng::seed_from_u64(8);
        let mut r2 = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let a = p.sample_spikes(&rates, &mut r1);
            let b = masked.sample_spikes(&rates, &mut r2);
            for i in 0..96 {
                if masked.mask[i] {
                    assert_eq!(a[i], b[i]);
                } else {
                    assert_eq!(b[i], 0.0);
                }
            }
        }
    }
}
