use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::sim::{PopulationConfig, SyntheticPopulation};

/// Binned spike counts with aligned 2-D velocity targets.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedDataset {
    /// T×N spike counts.
    pub x: Matrix,
    /// T×2 velocities.
    pub y: Matrix,
    pub bin_ms: f64,
    /// Rows where a new trial starts (excluding row 0).
    pub trial_boundaries: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub n_channels: usize,
    pub bin_ms: f64,
    pub n_bins: usize,
    #[serde(default)]
    pub trial_boundaries: Vec<usize>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

impl BinnedDataset {
    pub fn new(x: Matrix, y: Matrix, bin_ms: f64, trial_boundaries: Vec<usize>) -> Result<Self> {
        let ds = Self {
            x,
            y,
            bin_ms,
            trial_boundaries,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn n_channels(&self) -> usize {
        self.x.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.y.rows() != self.x.rows() || self.y.cols() != 2 {
            return Err(Error::InvalidConfig(format!(
                "targets are {}x{}, expected {}x2",
                self.y.rows(),
                self.y.cols(),
                self.x.rows()
            )));
        }
        if !(self.bin_ms > 0.0) {
            return Err(Error::InvalidConfig("bin_ms must be > 0".into()));
        }
        if let Some(v) = self
            .x
            .as_slice()
            .iter()
            .find(|v| !(v.is_finite() && **v >= 0.0 && v.fract() == 0.0))
        {
            return Err(Error::InvalidConfig(format!(
                "spike count {v} is not a nonnegative integer"
            )));
        }
        if !self.y.is_finite() {
            return Err(Error::InvalidConfig(
                "targets contain NaN or infinity".into(),
            ));
        }
        let b = &self.trial_boundaries;
        if b.windows(2).any(|w| w[0] >= w[1])
            || b.first() == Some(&0)
            || b.last().is_some_and(|&l| l >= self.len())
        {
            return Err(Error::InvalidConfig(
                "trial boundaries must be strictly increasing and inside (0, T)".into(),
            ));
        }
        Ok(())
    }

    /// Rows `[from, to)` with boundaries rebased.
    pub fn slice(&self, from: usize, to: usize) -> BinnedDataset {
        let n = self.n_channels();
        BinnedDataset {
            x: Matrix::from_vec(to - from, n, self.x.as_slice()[from * n..to * n].to_vec()),
            y: Matrix::from_vec(to - from, 2, self.y.as_slice()[from * 2..to * 2].to_vec()),
            bin_ms: self.bin_ms,
            trial_boundaries: self
                .trial_boundaries
                .iter()
                .filter(|&&b| b > from && b < to)
                .map(|b| b - from)
                .collect(),
        }
    }

    /// Chronological train/validation/test split.
    pub fn split(&self, train: f64, val: f64) -> (BinnedDataset, BinnedDataset, BinnedDataset) {
        let t = self.len();
        let a = ((t as f64) * train).round() as usize;
        let b = (((t as f64) * (train + val)).round() as usize).clamp(a, t);
        (self.slice(0, a), self.slice(a, b), self.slice(b, t))
    }

    /// Sidecar path holding the JSON header for a CSV body at `csv`.
    pub fn header_path(csv: &Path) -> PathBuf {
        csv.with_extension("json")
    }

    /// Writes the CSV body to `csv` and the header next to it.
    pub fn save(&self, csv: &Path) -> Result<()> {
        self.validate()?;
        let header = DatasetHeader {
            n_channels: self.n_channels(),
            bin_ms: self.bin_ms,
            n_bins: self.len(),
            trial_boundaries: self.trial_boundaries.clone(),
        };
        fs::write(
            Self::header_path(csv),
            serde_json::to_string_pretty(&header)? + "\n",
        )?;
        let mut body = String::from("t");
        for c in 0..self.n_channels() {
            write!(body, ",c{c}").expect("write to string");
        }
        body.push_str(",vx,vy\n");
        for t in 0..self.len() {
            write!(body, "{t}").expect("write to string");
            for v in self.x.row(t) {
                write!(body, ",{}", *v as u64).expect("write to string");
            }
            let y = self.y.row(t);
            writeln!(body, ",{},{}", y[0], y[1]).expect("write to string");
        }
        fs::write(csv, body)?;
        Ok(())
    }

    pub fn load(csv: &Path) -> Result<Self> {
        let header: DatasetHeader =
            serde_json::from_str(&fs::read_to_string(Self::header_path(csv))?)
                .map_err(|e| parse_err(0, format!("header: {e}")))?;
        let text = fs::read_to_string(csv)?;
        let mut lines = text.lines();
        let n = header.n_channels;
        let expected_cols = n + 3;
        let head = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
        let names: Vec<&str> = head.split(',').collect();
        if names.len() != expected_cols {
            return Err(parse_err(
                1,
                format!(
                    "header has {} columns, expected {expected_cols} for {n} channels",
                    names.len()
                ),
            ));
        }
        if names[0] != "t" || names[n + 1] != "vx" || names[n + 2] != "vy" {
            return Err(parse_err(1, "header must be t,c0..,vx,vy"));
        }
        let mut x = Vec::with_capacity(header.n_bins * n);
        let mut y = Vec::with_capacity(header.n_bins * 2);
        let mut rows = 0;
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != expected_cols {
                return Err(parse_err(
                    lineno,
                    format!("{} fields, expected {expected_cols}", fields.len()),
                ));
            }
            for f in &fields[1..=n] {
                let c: i64 = f.trim().parse().map_err(|_| {
                    parse_err(lineno, format!("spike count {f:?} is not an integer"))
                })?;
                if c < 0 {
                    return Err(parse_err(lineno, format!("negative spike count {c}")));
                }
                x.push(c as f64);
            }
            for f in &fields[n + 1..] {
                let v: f64 = f
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("velocity {f:?} is not a number")))?;
                if !v.is_finite() {
                    return Err(parse_err(lineno, "NaN or infinite velocity"));
                }
                y.push(v);
            }
            rows += 1;
        }
        if rows != header.n_bins {
            return Err(parse_err(
                0,
                format!("header says {} bins, body has {rows}", header.n_bins),
            ));
        }
        Self::new(
            Matrix::from_vec(rows, n, x),
            Matrix::from_vec(rows, 2, y),
            header.bin_ms,
            header.trial_boundaries,
        )
        .map_err(|e| parse_err(0, e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub bin_ms: f64,
    /// AR(1) coefficient of the velocity walk per bin.
    pub smoothing: f64,
    pub population: PopulationConfig,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            bin_ms: 50.0,
            smoothing: 0.9,
            population: PopulationConfig::default(),
        }
    }
}

/// Cosine-population spike counts driven by a smoothed 2-D random walk of
/// velocity. Targets are z-scored per axis. Counts sum `bin_ms / dt` binary
/// draws at the bin's rates.
pub fn make_synthetic_offline_dataset(
    n_bins: usize,
    cfg: &SyntheticConfig,
    seed: u64,
) -> Result<BinnedDataset> {
    if n_bins == 0 {
        return Err(Error::InvalidConfig("n_bins must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&cfg.smoothing) {
        return Err(Error::InvalidConfig("smoothing must lie in [0, 1)".into()));
    }
    let substeps = (cfg.bin_ms / (cfg.population.dt * 1000.0)).round().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pop = SyntheticPopulation::new(&cfg.population, &mut rng);
    let n = pop.len();
    let a = cfg.smoothing;
    let b = (1.0 - a * a).sqrt();
    let mut v = [0.0f64; 2];
    let mut x = Vec::with_capacity(n_bins * n);
    let mut y = Vec::with_capacity(n_bins * 2);
    for _ in 0..n_bins {
        for c in v.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *c = a * *c + b * e;
        }
        let rates = pop.firing_rates(v);
        x.extend(pop.sample_counts(&rates, substeps, &mut rng));
        y.extend_from_slice(&v);
    }
    let mut y = Matrix::from_vec(n_bins, 2, y);
    zscore_columns(&mut y);
    BinnedDataset::new(Matrix::from_vec(n_bins, n, x), y, cfg.bin_ms, Vec::new())
}

fn zscore_columns(m: &mut Matrix) {
    let t = m.rows() as f64;
    for c in 0..m.cols() {
        let mean = (0..m.rows()).map(|r| m[(r, c)]).sum::<f64>() / t;
        let var = (0..m.rows())
            .map(|r| (m[(r, c)] - mean).powi(2))
            .sum::<f64>()
            / t;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for r in 0..m.rows() {
            m[(r, c)] = (m[(r, c)] - mean) / sd;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zscored_targets() {
        let ds = make_synthetic_offline_dataset(2000, &SyntheticConfig::default(), 3).unwrap();
        for c in 0..2 {
            let col: Vec<f64> = (0..ds.len()).map(|r| ds.y[(r, c)]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let sd =
                (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
            assert!(mean.abs() < 1e-9);
            assert!((sd - 1.0).abs() < 1e-9);
        }
        assert!(ds
            .x
            .as_slice()
            .iter()
            .all(|&v| v >= 0.0 && v.fract() == 0.0 && v <= 5.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SyntheticConfig::default();
        let a = make_synthetic_offline_dataset(300, &cfg, 9).unwrap();
        assert_eq!(a, make_synthetic_offline_dataset(300, &cfg, 9).unwrap());
        assert_ne!(a, make_synthetic_offline_dataset(300, &cfg, 10).unwrap());
    }

    #[test]
    fn split_is_chronological() {
        let ds = make_synthetic_offline_dataset(100, &SyntheticConfig::default(), 1).unwrap();
        let (tr, va, te) = ds.split(0.7, 0.15);
        assert_eq!((tr.len(), va.len(), te.len()), (70, 15, 15));
        assert_eq!(va.x.row(0), ds.x.row(70));
        assert_eq!(te.y.row(14), ds.y.row(99));
    }

    #[test]
    fn rejects_bad_boundaries() {
        let x = Matrix::zeros(4, 1);
        let y = Matrix::zeros(4, 2);
        assert!(BinnedDataset::new(x.clone(), y.clone(), 50.0, vec![2, 2]).is_err());
        assert!(BinnedDataset::new(x.clone(), y.clone(), 50.0, vec![4]).is_err());
        assert!(BinnedDataset::new(x, y, 50.0, vec![1, 3]).is_ok());
    }

    #[test]
    fn linear_readout_decodes_velocity() {
        use crate::harness::metrics::pearson_r;
        use nalgebra::DMatrix;
        let ds = make_synthetic_offline_dataset(6000, &SyntheticConfig::default(), 5).unwrap();
        let (tr, va, _) = ds.split(0.7, 0.15);
        let design = |d: &BinnedDataset| {
            DMatrix::from_fn(d.len(), d.n_channels() + 1, |r, c| {
                if c == 0 {
                    1.0
                } else {
                    d.x[(r, c - 1)]
                }
            })
        };
        let (a, b) = (design(&tr), design(&va));
        let y = DMatrix::from_fn(tr.len(), 2, |r, c| tr.y[(r, c)]);
        let w = (a.transpose() * &a)
            .lu()
            .solve(&(a.transpose() * y))
            .unwrap();
        let pred = b * w;
        for c in 0..2 {
            let p: Vec<f64> = pred.column(c).iter().copied().collect();
            let t: Vec<f64> = (0..va.len()).map(|r| va.y[(r, c)]).collect();
            assert!(pearson_r(&p, &t).unwrap() > 0.5);
        }
    }
}
