//! Peaks-over-threshold tail modelling with a generalized Pareto law and
//! split-conformal margins on top of the quantile predictor.

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_EXCEEDANCES: usize = 30;
pub const SHAPE_LIMIT: f64 = 0.9;
const XI_EPS: f64 = 1e-9;

/// Positive parts of `label - threshold`, per SA pair.
pub fn collect_exceedances(
    labels: &[f64],
    thresholds: &[f64],
    n_sa: usize,
    n_min: usize,
) -> Result<Vec<Vec<f64>>> {
    if labels.len() != thresholds.len() || n_sa == 0 {
        return Err(Error::Shape {
            expected: format!("{} thresholds", labels.len()),
            got: format!("{}", thresholds.len()),
        });
    }
    let mut out = vec![Vec::new(); n_sa];
    for (i, (y, u)) in labels.iter().zip(thresholds).enumerate() {
        if y > u {
            out[i % n_sa].push(y - u);
        }
    }
    for (sa, e) in out.iter().enumerate() {
        if e.len() < n_min {
            return Err(Error::InsufficientExceedances {
                sa,
                found: e.len(),
                required: n_min,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdTail {
    pub shape: f64,
    pub scale: f64,
    pub n_exceedances: usize,
    pub log_likelihood: f64,
    /// Set when the likelihood fit failed and moments were used instead.
    pub fallback: bool,
}

pub fn gpd_log_likelihood(shape: f64, scale: f64, data: &[f64]) -> f64 {
    if !(scale > 0.0) {
        return f64::NEG_INFINITY;
    }
    let n = data.len() as f64;
    if shape.abs() < XI_EPS {
        return -n * scale.ln() - data.iter().sum::<f64>() / scale;
    }
    let mut s = 0.0;
    for &y in data {
        let z = 1.0 + shape * y / scale;
        if z <= 0.0 {
            return f64::NEG_INFINITY;
        }
        s += z.ln();
    }
    -n * scale.ln() - (1.0 + 1.0 / shape) * s
}

/// Method-of-moments estimate, clamped to the admissible shape range.
pub fn gpd_moments(data: &[f64]) -> (f64, f64) {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    if !(var > 0.0) {
        return (0.0, mean.max(f64::MIN_POSITIVE));
    }
    let r = mean * mean / var;
    let shape = (0.5 * (1.0 - r)).clamp(-SHAPE_LIMIT, SHAPE_LIMIT);
    let mut scale = 0.5 * mean * (r + 1.0);
    // Keep every sample inside the support for negative shapes.
    let ymax = data.iter().cloned().fold(0.0, f64::max);
    if shape < 0.0 && scale <= -shape * ymax {
        scale = -shape * ymax * 1.01;
    }
    (shape, scale)
}

struct NegLogLik<'a> {
    data: &'a [f64],
}

impl CostFunction for NegLogLik<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        if p[0].abs() > SHAPE_LIMIT {
            return Ok(1e300);
        }
        let ll = gpd_log_likelihood(p[0], p[1].exp(), self.data);
        Ok(if ll.is_finite() { -ll } else { 1e300 })
    }
}

/// Maximum-likelihood fit over `(shape, ln scale)` started from moments.
pub fn gpd_fit(data: &[f64]) -> Result<GpdTail> {
    if data.len() < 2 {
        return Err(Error::InsufficientExceedances {
            sa: 0,
            found: data.len(),
            required: 2,
        });
    }
    if data.iter().any(|&y| !(y > 0.0) || !y.is_finite()) {
        return Err(Error::Config(
            "exceedances must be positive and finite".into(),
        ));
    }
    let (s0, c0) = gpd_moments(data);
    let ll0 = gpd_log_likelihood(s0, c0, data);
    let fallback = |ll: f64| GpdTail {
        shape: s0,
        scale: c0,
        n_exceedances: data.len(),
        log_likelihood: ll,
        fallback: true,
    };
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    if data.iter().all(|&y| (y - mean).abs() <= 1e-12 * mean) {
        log::warn!("degenerate exceedances, using moments estimate");
        return Ok(fallback(ll0));
    }
    let start = vec![s0.clamp(-0.85, 0.85), c0.ln()];
    let simplex = vec![
        start.clone(),
        vec![start[0] + 0.05, start[1]],
        vec![start[0], start[1] + 0.1],
    ];
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-12)
        .map_err(|e| Error::Config(e.to_string()))?;
    let run = Executor::new(NegLogLik { data }, solver)
        .configure(|s| s.max_iters(5000))
        .run();
    let best = match run {
        Ok(r) => r.state.best_param.clone(),
        Err(e) => {
            log::warn!("gpd optimizer failed: {e}");
            None
        }
    };
    match best {
        Some(p) => {
            let (shape, scale) = (p[0], p[1].exp());
            let ll = gpd_log_likelihood(shape, scale, data);
            if ll.is_finite() && (ll >= ll0 || !ll0.is_finite()) {
                Ok(GpdTail {
                    shape,
                    scale,
                    n_exceedances: data.len(),
                    log_likelihood: ll,
                    fallback: false,
                })
            } else {
                log::warn!("gpd optimizer did not improve on moments");
                Ok(fallback(ll0))
            }
        }
        None => Ok(fallback(ll0)),
    }
}

/// Exceedance level with tail probability `1 - p`.
pub fn gpd_quantile(tail: &GpdTail, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!(
            "tail probability {p} outside [0, 1]"
        )));
    }
    if p >= 1.0 {
        if tail.shape >= 0.0 {
            return Err(Error::UnboundedQuantile {
                p,
                shape: tail.shape,
            });
        }
        return Ok(tail.scale / -tail.shape);
    }
    if tail.shape.abs() < XI_EPS {
        return Ok(-tail.scale * (1.0 - p).ln());
    }
    Ok(tail.scale / tail.shape * ((1.0 - p).powf(-tail.shape) - 1.0))
}

/// Scale for a higher threshold, `σ + ξ (u* - u)`.
pub fn rescale_threshold(tail: &GpdTail, u: f64, u_new: f64) -> Result<GpdTail> {
    if u_new < u {
        return Err(Error::Config("new threshold must not be lower".into()));
    }
    let scale = tail.scale + tail.shape * (u_new - u);
    if !(scale > 0.0) {
        return Err(Error::InvalidRescale { scale });
    }
    Ok(GpdTail { scale, ..*tail })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalRecord {
    pub beta: f64,
    pub n_cal: usize,
    /// Per-SA conformity score.
    pub scores: Vec<f64>,
}

/// The `⌈(n+1)(1-β)⌉`-th smallest value, saturating at the maximum.
pub fn conformal_quantile(residuals: &[f64], beta: f64) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let mut r = residuals.to_vec();
    r.sort_by(|a, b| a.total_cmp(b));
    let n = r.len();
    let k = ((n as f64 + 1.0) * (1.0 - beta)).ceil() as usize;
    Ok(r[k.clamp(1, n) - 1])
}

/// Per-SA scores from absolute calibration residuals `|y - ŷ|`.
pub fn conformity_scores(
    predictions: &[f64],
    labels: &[f64],
    n_sa: usize,
    beta: f64,
) -> Result<ConformalRecord> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape {
            expected: format!("{} predictions", labels.len()),
            got: format!("{}", predictions.len()),
        });
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Config("beta must be in (0, 1)".into()));
    }
    let n_cal = labels.len() / n_sa.max(1);
    if n_cal == 0 {
        return Err(Error::EmptyCalibration);
    }
    let scores = (0..n_sa)
        .map(|sa| {
            let res: Vec<f64> = (0..n_cal)
                .map(|i| (labels[i * n_sa + sa] - predictions[i * n_sa + sa]).abs())
                .collect();
            conformal_quantile(&res, beta)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConformalRecord {
        beta,
        n_cal,
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedTail {
    pub tails: Vec<GpdTail>,
    pub conformal: ConformalRecord,
    /// Tail quantile level `1 - ς` read from the GPD.
    pub tail_quantile: f64,
}

impl CalibratedTail {
    /// Offset added to the threshold of SA pair `sa`.
    pub fn margin(&self, sa: usize) -> Result<f64> {
        let q = if self.tail_quantile <= 0.0 {
            0.0
        } else {
            gpd_quantile(&self.tails[sa], self.tail_quantile)?
        };
        Ok(q + self.conformal.scores[sa])
    }

    /// `Î = Ĭ + Q_GPD(1 - ς) + CS` for a `[n × M]` threshold matrix.
    pub fn apply(&self, thresholds: &[f64]) -> Result<Vec<f64>> {
        let m = self.tails.len();
        let margins = (0..m)
            .map(|sa| self.margin(sa))
            .collect::<Result<Vec<_>>>()?;
        Ok(thresholds
            .iter()
            .enumerate()
            .map(|(i, u)| u + margins[i % m])
            .collect())
    }

    /// The same read-out without the conformal margin.
    pub fn apply_uncalibrated(&self, thresholds: &[f64]) -> Result<Vec<f64>> {
        let m = self.tails.len();
        let q = (0..m)
            .map(|sa| {
                if self.tail_quantile <= 0.0 {
                    Ok(0.0)
                } else {
                    gpd_quantile(&self.tails[sa], self.tail_quantile)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(thresholds
            .iter()
            .enumerate()
            .map(|(i, u)| u + q[i % m])
            .collect())
    }
}

pub fn calibrated_quantile(
    threshold: f64,
    tail: &GpdTail,
    tail_quantile: f64,
    cs: f64,
) -> Result<f64> {
    let q = if tail_quantile <= 0.0 {
        0.0
    } else {
        gpd_quantile(tail, tail_quantile)?
    };
    Ok(threshold + q + cs)
}

/// Per-SA entries of the calibration report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEntry {
    pub sa: usize,
    pub shape: f64,
    pub scale: f64,
    pub n_exceedances: usize,
    pub exceedance_fraction: f64,
    pub log_likelihood: f64,
    pub fallback: bool,
    pub conformity_score: f64,
    /// Margin in normalized units and in dB.
    pub margin: f64,
    pub margin_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub alpha: f64,
    pub beta: f64,
    pub varsigma: f64,
    pub entries: Vec<CalibrationEntry>,
}
