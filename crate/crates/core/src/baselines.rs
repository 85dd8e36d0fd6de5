//! Point-prediction baselines on dB series: a weighted moving average and a
//! one-step Wiener (Yule-Walker) predictor over a sliding history.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ridge added to the zero-lag autocorrelation before solving.
pub const WIENER_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovingAverage {
    /// `weights[i]` multiplies the sample `i + 1` cycles back.
    pub weights: Vec<f64>,
}

impl Default for MovingAverage {
    fn default() -> Self {
        MovingAverage {
            weights: vec![0.5, 0.5],
        }
    }
}

impl MovingAverage {
    pub fn validate(&self) -> Result<()> {
        let s: f64 = self.weights.iter().sum();
        if self.weights.is_empty() || (s - 1.0).abs() > 1e-9 {
            return Err(Error::Config("moving-average weights must sum to 1".into()));
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.weights.len()
    }

    /// Prediction of `series[k]` from the samples before it.
    pub fn predict_at(&self, series: &[f64], k: usize) -> Result<f64> {
        let p = self.order();
        if k < p || k > series.len() {
            return Err(Error::TraceTooShort { len: k, needed: p });
        }
        Ok(self
            .weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * series[k - 1 - i])
            .sum())
    }
}

/// `out[i]` predicts `series[order + i]`.
pub fn moving_average_predict(series: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    let ma = MovingAverage {
        weights: weights.to_vec(),
    };
    ma.validate()?;
    (ma.order()..series.len())
        .map(|k| ma.predict_at(series, k))
        .collect()
}

/// Sample mean and one-step linear prediction coefficients of the given
/// order; `coeffs[i]` multiplies the deviation `i + 1` steps back.
pub fn yule_walker(samples: &[f64], order: usize) -> Result<(f64, Vec<f64>)> {
    let n = samples.len();
    if order == 0 || n < order + 1 {
        return Err(Error::TraceTooShort {
            len: n,
            needed: order + 1,
        });
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let r: Vec<f64> = (0..=order)
        .map(|lag| {
            samples[..n - lag]
                .iter()
                .zip(&samples[lag..])
                .map(|(a, b)| (a - mean) * (b - mean))
                .sum::<f64>()
                / n as f64
        })
        .collect();
    Ok((mean, levinson_durbin(&r, WIENER_RIDGE)))
}

/// Solves the Toeplitz normal equations `R a = r[1..]`.
pub fn levinson_durbin(r: &[f64], ridge: f64) -> Vec<f64> {
    let p = r.len() - 1;
    let mut a = vec![0.0; p];
    let mut err = r[0] + ridge;
    for k in 0..p {
        let mut acc = r[k + 1];
        for j in 0..k {
            acc -= a[j] * r[k - j];
        }
        let refl = if err > 0.0 { acc / err } else { 0.0 };
        let prev = a.clone();
        a[k] = refl;
        for j in 0..k {
            a[j] = prev[j] - refl * prev[k - 1 - j];
        }
        err *= 1.0 - refl * refl;
        if err <= 0.0 {
            break;
        }
    }
    a
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wiener {
    pub order: usize,
    /// Number of past samples used to estimate the autocorrelation.
    pub history: usize,
}

impl Wiener {
    pub fn new(order: usize, history: usize) -> Result<Self> {
        if order == 0 || history < order + 1 {
            return Err(Error::Config(format!(
                "wiener history {history} must exceed order {order}"
            )));
        }
        Ok(Wiener { order, history })
    }

    /// Prediction of `series[k]` from the `history` samples before it (or
    /// all earlier samples when fewer are available).
    pub fn predict_at(&self, series: &[f64], k: usize) -> Result<f64> {
        if k > series.len() {
            return Err(Error::TraceTooShort {
                len: series.len(),
                needed: k,
            });
        }
        let start = k.saturating_sub(self.history);
        let hist = &series[start..k];
        let (mean, a) = yule_walker(hist, self.order)?;
        Ok(mean
            + a.iter()
                .enumerate()
                .map(|(i, c)| c * (series[k - 1 - i] - mean))
                .sum::<f64>())
    }
}

/// `out[i]` predicts `series[order + 1 + i]`.
pub fn wiener_predict(series: &[f64], order: usize, history: usize) -> Result<Vec<f64>> {
    let w = Wiener::new(order, history)?;
    (order + 1..series.len())
        .map(|k| w.predict_at(series, k))
        .collect()
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
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                x = rho * x + z;
                x
            })
            .collect()
    }

    #[test]
    fn moving_average_examples() {
        assert_eq!(
            moving_average_predict(&[5.0; 4], &[0.5, 0.5]).unwrap(),
            vec![5.0; 2]
        );
        let ma = MovingAverage::default();
        assert_eq!(ma.predict_at(&[2.0, 4.0], 2).unwrap(), 3.0);
        let hold = MovingAverage {
            weights: vec![1.0, 0.0],
        };
        assert_eq!(hold.predict_at(&[2.0, 4.0, 9.0], 2).unwrap(), 4.0);
        assert!(moving_average_predict(&[1.0; 3], &[0.7, 0.7]).is_err());
    }

    #[test]
    fn ar1_coefficients() {
        let s = ar1(0.9, 50_000, 1);
        let (_, a) = yule_walker(&s, 3).unwrap();
        assert!((a[0] - 0.9).abs() < 0.05, "{a:?}");
        assert!(a[1].abs() < 0.05 && a[2].abs() < 0.05, "{a:?}");
    }

    #[test]
    fn white_noise_predicts_mean() {
        let s: Vec<f64> = ar1(0.0, 50_000, 2).iter().map(|v| v + 3.0).collect();
        let (mean, a) = yule_walker(&s, 4).unwrap();
        assert!(a.iter().all(|c| c.abs() < 0.03), "{a:?}");
        let w = Wiener::new(4, 50_000).unwrap();
        let p = w.predict_at(&s, s.len()).unwrap();
        assert!((p - mean).abs() < 0.2);
    }

    #[test]
    fn constant_series_returns_constant() {
        let s = vec![-42.0; 30];
        let p = wiener_predict(&s, 3, 10).unwrap();
        assert!(p.iter().all(|&v| (v + 42.0).abs() < 1e-12));
    }

    #[test]
    fn levinson_matches_direct_solve() {
        let r = [2.0, 1.2, 0.5];
        let a = levinson_durbin(&r, 0.0);
        // [[2, 1.2], [1.2, 2]] a = [1.2, 0.5]
        let det = 4.0 - 1.44;
        let a0 = (1.2 * 2.0 - 1.2 * 0.5) / det;
        let a1 = (2.0 * 0.5 - 1.2 * 1.2) / det;
        assert!((a[0] - a0).abs() < 1e-12 && (a[1] - a1).abs() < 1e-12);
    }

    #[test]
    fn wiener_needs_history() {
        assert!(Wiener::new(4, 4).is_err());
        let w = Wiener::new(2, 10).unwrap();
        assert!(w.predict_at(&[1.0, 2.0], 2).is_err());
    }
}
