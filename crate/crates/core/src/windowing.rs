//! Sliding-window restructuring of interference traces into
//! (window, label) instances with contiguous train/calibration/test blocks.
//!
//! Series are per-SA vectors in dB. Inputs are stored row-major as
//! `[instance][lag][sa]`, labels as `[instance][sa]`.

use serde::{Deserialize, Serialize};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scenario::InterferenceTrace;

pub const DEFAULT_PHI_C: f64 = 0.5;
pub const DEFAULT_MAX_LAG: usize = 64;

/// Pearson correlation between `series[t]` and `series[t + lag]`.
pub fn lag_correlation(series: &[f64], lag: usize) -> Result<f64> {
    if series.len() <= lag {
        return Err(Error::TraceTooShort {
            len: series.len(),
            needed: lag + 1,
        });
    }
    let n = series.len() - lag;
    let a = &series[..n];
    let b = &series[lag..];
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(Error::DegenerateSeries);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub phi_c: f64,
    pub max_lag: usize,
    /// `correlations[sa][lag - 1]`.
    pub correlations: Vec<Vec<f64>>,
    pub per_sa_window: Vec<usize>,
    pub window: usize,
}

fn window_from_correlations(corr: &[f64], phi_c: f64) -> usize {
    corr.iter()
        .enumerate()
        .filter(|(_, &c)| c >= phi_c)
        .map(|(i, _)| i + 1)
        .max()
        .unwrap_or(1)
}

/// Largest lag whose correlation is at or above `phi_c`, per SA pair,
/// aggregated by the median. Degenerate lags count as fully correlated.
pub fn stationary_interval(
    series: &[Vec<f64>],
    phi_c: f64,
    max_lag: usize,
) -> Result<StationarityReport> {
    if max_lag == 0 {
        return Err(Error::Config("max_lag must be at least 1".into()));
    }
    if series.is_empty() {
        return Err(Error::Config("no series given".into()));
    }
    let mut correlations = Vec::with_capacity(series.len());
    for s in series {
        let mut row = Vec::with_capacity(max_lag);
        for lag in 1..=max_lag {
            let c = match lag_correlation(s, lag) {
                Ok(c) => c,
                Err(Error::DegenerateSeries) => 1.0,
                Err(e) => return Err(e),
            };
            row.push(c);
        }
        correlations.push(row);
    }
    let per_sa_window: Vec<usize> = correlations
        .iter()
        .map(|c| window_from_correlations(c, phi_c))
        .collect();
    let window = median_usize(&per_sa_window);
    Ok(StationarityReport {
        phi_c,
        max_lag,
        correlations,
        per_sa_window,
        window,
    })
}

fn median_usize(v: &[usize]) -> usize {
    let mut s = v.to_vec();
    s.sort_unstable();
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]).div_ceil(2)
    }
}

/// Sizes of the contiguous train, calibration and test blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub cal: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.cal + self.test
    }
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            train: 7000,
            cal: 1000,
            test: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Cal,
    Test,
}

/// Per-SA min-max map from dB to [0, 1] on the training block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn forward(&self, sa: usize, x: f64) -> f64 {
        (x - self.min[sa]) / self.scale[sa]
    }

    pub fn inverse(&self, sa: usize, y: f64) -> f64 {
        y * self.scale[sa] + self.min[sa]
    }

    /// Converts a normalized difference back to dB.
    pub fn inverse_delta(&self, sa: usize, d: f64) -> f64 {
        d * self.scale[sa]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub window: usize,
    pub n_sa: usize,
    /// `[instance][lag][sa]`.
    pub inputs: Vec<f64>,
    /// `[instance][sa]`.
    pub labels: Vec<f64>,
    pub split: SplitSizes,
    pub normalizer: Option<Normalizer>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.labels.len() / self.n_sa.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn range(&self, part: Part) -> std::ops::Range<usize> {
        let s = &self.split;
        match part {
            Part::Train => 0..s.train,
            Part::Cal => s.train..s.train + s.cal,
            Part::Test => s.train + s.cal..s.total(),
        }
    }

    pub fn input(&self, j: usize) -> &[f64] {
        let w = self.window * self.n_sa;
        &self.inputs[j * w..(j + 1) * w]
    }

    pub fn label(&self, j: usize) -> &[f64] {
        &self.labels[j * self.n_sa..(j + 1) * self.n_sa]
    }

    /// Inputs and labels of a contiguous block.
    pub fn block(&self, part: Part) -> (&[f64], &[f64]) {
        let r = self.range(part);
        let w = self.window * self.n_sa;
        (
            &self.inputs[r.start * w..r.end * w],
            &self.labels[r.start * self.n_sa..r.end * self.n_sa],
        )
    }

    /// Assigns contiguous blocks; instances past the test block are unused.
    pub fn set_split(&mut self, split: SplitSizes) -> Result<()> {
        if split.total() > self.len() {
            return Err(Error::TraceTooShort {
                len: self.len() + self.window,
                needed: split.total() + self.window,
            });
        }
        if split.train == 0 {
            return Err(Error::Config("training block must be non-empty".into()));
        }
        self.split = split;
        Ok(())
    }

    /// Fits the per-SA min-max map on the training block and applies it to
    /// every instance.
    pub fn normalize(&mut self) -> Result<Normalizer> {
        if self.normalizer.is_some() {
            return Err(Error::Config("dataset already normalized".into()));
        }
        let m = self.n_sa;
        let (xin, yin) = self.block(Part::Train);
        if yin.is_empty() {
            return Err(Error::EmptyCalibration);
        }
        let mut lo = vec![f64::INFINITY; m];
        let mut hi = vec![f64::NEG_INFINITY; m];
        for (i, &v) in xin.iter().chain(yin).enumerate() {
            let sa = i % m;
            lo[sa] = lo[sa].min(v);
            hi[sa] = hi[sa].max(v);
        }
        let scale = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| if h > l { h - l } else { 1.0 })
            .collect();
        let norm = Normalizer { min: lo, scale };
        for (i, v) in self.inputs.iter_mut().enumerate() {
            *v = norm.forward(i % m, *v);
        }
        for (i, v) in self.labels.iter_mut().enumerate() {
            *v = norm.forward(i % m, *v);
        }
        self.normalizer = Some(norm.clone());
        Ok(norm)
    }

    /// Restores dB units in place.
    pub fn denormalize(&mut self) {
        if let Some(norm) = self.normalizer.take() {
            let m = self.n_sa;
            for (i, v) in self.inputs.iter_mut().enumerate() {
                *v = norm.inverse(i % m, *v);
            }
            for (i, v) in self.labels.iter_mut().enumerate() {
                *v = norm.inverse(i % m, *v);
            }
        }
    }

    pub fn save(&self, dir: &Path, stationarity: Option<&StationarityReport>) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(std::fs::File::create(dir.join(DATA_FILE))?);
        for v in self.inputs.iter().chain(&self.labels) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        let manifest = DatasetManifest {
            n_instances: self.len(),
            window: self.window,
            n_sa: self.n_sa,
            split: self.split,
            normalizer: self.normalizer.clone(),
            stationarity: stationarity.cloned(),
        };
        std::fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(Self, DatasetManifest)> {
        let manifest: DatasetManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        let n_in = manifest.n_instances * manifest.window * manifest.n_sa;
        let n_lab = manifest.n_instances * manifest.n_sa;
        let mut bytes = Vec::new();
        std::fs::File::open(dir.join(DATA_FILE))?.read_to_end(&mut bytes)?;
        if bytes.len() != 8 * (n_in + n_lab) {
            return Err(Error::Shape {
                expected: format!("{} bytes", 8 * (n_in + n_lab)),
                got: format!("{} bytes", bytes.len()),
            });
        }
        let vals: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let ds = WindowedDataset {
            window: manifest.window,
            n_sa: manifest.n_sa,
            inputs: vals[..n_in].to_vec(),
            labels: vals[n_in..].to_vec(),
            split: manifest.split,
            normalizer: manifest.normalizer.clone(),
        };
        Ok((ds, manifest))
    }
}

pub const DATA_FILE: &str = "dataset.bin";
pub const MANIFEST_FILE: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_instances: usize,
    pub window: usize,
    pub n_sa: usize,
    pub split: SplitSizes,
    pub normalizer: Option<Normalizer>,
    pub stationarity: Option<StationarityReport>,
}

impl DatasetManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Instance `j` holds cycles `j..j+window` as input and cycle `j+window`
/// as label. All instances start in the training block until a split is set.
pub fn restructure(series: &[Vec<f64>], window: usize) -> Result<WindowedDataset> {
    let m = series.len();
    if m == 0 || window == 0 {
        return Err(Error::Config(
            "need at least one series and window >= 1".into(),
        ));
    }
    let t = series[0].len();
    if series.iter().any(|s| s.len() != t) {
        return Err(Error::Shape {
            expected: format!("{m} series of length {t}"),
            got: format!("{:?}", series.iter().map(|s| s.len()).collect::<Vec<_>>()),
        });
    }
    if t < window + 1 {
        return Err(Error::TraceTooShort {
            len: t,
            needed: window + 1,
        });
    }
    let l = t - window;
    let mut inputs = Vec::with_capacity(l * window * m);
    let mut labels = Vec::with_capacity(l * m);
    for j in 0..l {
        for lag in 0..window {
            for s in series {
                inputs.push(s[j + lag]);
            }
        }
        for s in series {
            labels.push(s[j + window]);
        }
    }
    Ok(WindowedDataset {
        window,
        n_sa: m,
        inputs,
        labels,
        split: SplitSizes {
            train: l,
            cal: 0,
            test: 0,
        },
        normalizer: None,
    })
}

/// Per-SA estimated interference in dBm.
pub fn estimated_series_db(trace: &InterferenceTrace) -> Vec<Vec<f64>> {
    (0..trace.n_sa).map(|sa| trace.estimated_dbm(sa)).collect()
}

/// Cycle index of the label of instance `j`.
pub fn label_cycle(window: usize, j: usize) -> usize {
    j + window
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn ar1(rho: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = 0.0;
        let s = (1.0 - rho * rho).sqrt();
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                x = rho * x + s * z;
                x
            })
            .collect()
    }

    #[test]
    fn lag_zero_is_one() {
        let s = ar1(0.5, 100, 1);
        assert!((lag_correlation(&s, 0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alternating_series_is_anticorrelated() {
        let s: Vec<f64> = (0..100)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        assert!((lag_correlation(&s, 1).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ar1_lag_two() {
        let s = ar1(0.9, 100_000, 2);
        let c = lag_correlation(&s, 2).unwrap();
        assert!((c - 0.81).abs() < 0.02, "{c}");
    }

    #[test]
    fn constant_series_is_degenerate() {
        assert!(matches!(
            lag_correlation(&[3.0; 10], 1),
            Err(Error::DegenerateSeries)
        ));
    }

    #[test]
    fn white_noise_window_is_one() {
        let s = ar1(0.0, 20_000, 3);
        let r = stationary_interval(&[s], 0.9, 16).unwrap();
        assert_eq!(r.window, 1);
    }

    #[test]
    fn ar1_window_matches_analytic() {
        let expected = (0.8f64.ln() / 0.95f64.ln()).floor() as usize;
        assert_eq!(expected, 4);
        let s = ar1(0.95, 200_000, 4);
        let r = stationary_interval(&[s], 0.8, 16).unwrap();
        assert_eq!(r.window, expected);
    }

    #[test]
    fn constant_period_gives_max_lag() {
        let r = stationary_interval(&[vec![1.0; 50]], 0.9, 8).unwrap();
        assert_eq!(r.window, 8);
    }

    #[test]
    fn median_aggregation() {
        assert_eq!(median_usize(&[1, 9, 4]), 4);
        assert_eq!(median_usize(&[2, 5]), 4);
    }

    #[test]
    fn boundary_single_instance() {
        let ds = restructure(&[vec![1.0, 2.0, 3.0]], 2).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.input(0), &[1.0, 2.0]);
        assert_eq!(ds.label(0), &[3.0]);
        assert!(restructure(&[vec![1.0, 2.0]], 2).is_err());
    }

    #[test]
    fn split_sizes() {
        let w = 5;
        let s: Vec<f64> = (0..10_000 + w).map(|i| i as f64).collect();
        let mut ds = restructure(&[s], w).unwrap();
        ds.set_split(SplitSizes::default()).unwrap();
        assert_eq!(ds.range(Part::Train).len(), 7000);
        assert_eq!(ds.range(Part::Cal).len(), 1000);
        assert_eq!(ds.range(Part::Test).len(), 2000);
        assert!(ds
            .set_split(SplitSizes {
                train: 7000,
                cal: 1000,
                test: 2001
            })
            .is_err());
    }

    #[test]
    fn midpoint_normalization() {
        let mut ds = restructure(&[vec![-100.0, -60.0, -80.0]], 1).unwrap();
        ds.set_split(SplitSizes {
            train: 1,
            cal: 0,
            test: 1,
        })
        .unwrap();
        let n = ds.normalize().unwrap();
        assert!((n.forward(0, -80.0) - 0.5).abs() < 1e-15);
        assert!((ds.label(1)[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_series_normalizes_to_zero() {
        let mut ds = restructure(&[vec![-70.0; 10]], 3).unwrap();
        ds.normalize().unwrap();
        assert!(ds.inputs.iter().chain(&ds.labels).all(|&v| v == 0.0));
    }

    #[test]
    fn save_load_round_trip() {
        let s = ar1(0.7, 300, 5);
        let mut ds = restructure(&[s.clone(), s.iter().map(|v| v * 2.0).collect()], 4).unwrap();
        ds.set_split(SplitSizes {
            train: 200,
            cal: 50,
            test: 40,
        })
        .unwrap();
        ds.normalize().unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path(), None).unwrap();
        let (back, manifest) = WindowedDataset::load(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(manifest.window, 4);
    }
}
