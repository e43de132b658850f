use serde::{Deserialize, Serialize};

pub const BUCKETS: usize = 16;

/// Maps the magnitude of the normalized output error onto one of 16 buckets,
/// each with a fixed multiplicative gain on the fast learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardLut {
    /// Bucket gains in sixteenths, non-decreasing.
    pub gains_q4: [u32; BUCKETS],
    /// Upper edges of the first 15 buckets, strictly increasing.
    pub edges: [f64; BUCKETS - 1],
}

impl Default for RewardLut {
    /// Equal-width buckets over `[0, 2]`, gains spaced from 0.5 to 2.0 and
    /// rounded to the nearest sixteenth.
    fn default() -> Self {
        let mut gains_q4 = [0u32; BUCKETS];
        for (k, g) in gains_q4.iter_mut().enumerate() {
            *g = (8.0 + 24.0 * k as f64 / 15.0).round() as u32;
        }
        let mut edges = [0.0; BUCKETS - 1];
        for (k, e) in edges.iter_mut().enumerate() {
            *e = 2.0 * (k + 1) as f64 / BUCKETS as f64;
        }
        Self { gains_q4, edges }
    }
}

impl RewardLut {
    pub fn bucket(&self, error_magnitude: f64) -> usize {
        self.edges
            .iter()
            .take_while(|&&e| error_magnitude >= e)
            .count()
    }

    pub fn gain(&self, error_magnitude: f64) -> f64 {
        f64::from(self.gains_q4[self.bucket(error_magnitude)]) / 16.0
    }

    pub fn is_valid(&self) -> bool {
        self.gains_q4.iter().all(|&g| g > 0)
            && self.gains_q4.windows(2).all(|w| w[0] <= w[1])
            && self.edges.windows(2).all(|w| w[0] < w[1])
    }
}

pub fn reward_lut_gain(lut: &RewardLut, error_magnitude: f64) -> f64 {
    lut.gain(error_magnitude)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table_shape() {
        let lut = RewardLut::default();
        assert!(lut.is_valid());
        assert_eq!(lut.gains_q4[0], 8);
        assert_eq!(lut.gains_q4[15], 32);
        assert_eq!(reward_lut_gain(&lut, 0.0), 0.5);
        assert_eq!(reward_lut_gain(&lut, 50.0), 2.0);
        assert_eq!(lut.bucket(0.124), 0);
        assert_eq!(lut.bucket(0.125), 1);
    }

    #[test]
    fn gain_is_monotone_in_error() {
        let lut = RewardLut::default();
        let mut prev = 0.0;
        for i in 0..3000 {
            let g = lut.gain(i as f64 * 0.001);
            assert!(g >= prev);
            prev = g;
        }
    }
}
