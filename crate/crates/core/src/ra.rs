//! Finite-blocklength resource allocation and prediction quality metrics.

use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::special::{q_function, q_inverse};

pub const DEFAULT_PAYLOAD_BITS: f64 = 200.0;
pub const DEFAULT_EPS_TARGETS: [f64; 3] = [1e-5, 1e-6, 1e-7];
/// Relative slack when comparing an achieved BLER to its target.
pub const BLER_SLACK: f64 = 1e-9;

pub fn capacity(gamma: f64) -> f64 {
    (1.0 + gamma).log2()
}

/// AWGN channel dispersion in bits².
pub fn dispersion(gamma: f64) -> f64 {
    let l = std::f64::consts::LOG2_E;
    (1.0 - (1.0 + gamma).powi(-2)) * l * l
}

/// Real-valued blocklength solving `D = R C - sqrt(R V) Q⁻¹(ε)`.
pub fn channel_usage_real(gamma: f64, payload_bits: f64, eps: f64) -> Result<f64> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::NonPositiveSinr(gamma));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Config(format!("target BLER {eps} outside (0, 1)")));
    }
    let c = capacity(gamma);
    let q = q_inverse(eps);
    if q == 0.0 {
        return Ok(payload_bits / c);
    }
    let a = q * dispersion(gamma).sqrt();
    let root = a + (a * a + 4.0 * c * payload_bits).sqrt();
    Ok(root * root / (4.0 * c * c))
}

/// Integer channel uses, rounded up.
pub fn channel_usage(gamma: f64, payload_bits: f64, eps: f64) -> Result<u64> {
    Ok(channel_usage_real(gamma, payload_bits, eps)?.ceil() as u64)
}

/// Normal-approximation block error probability of `r` channel uses.
pub fn achieved_bler(r: f64, gamma: f64, payload_bits: f64) -> f64 {
    if !(gamma > 0.0) || r <= 0.0 {
        return 1.0;
    }
    let v = dispersion(gamma);
    q_function((r * capacity(gamma) - payload_bits) / (r * v).sqrt())
}

/// Fraction of labels not above the prediction.
pub fn coverage_probability(pred: &[f64], labels: &[f64]) -> f64 {
    let hit = pred.iter().zip(labels).filter(|(p, y)| y <= p).count();
    hit as f64 / labels.len().max(1) as f64
}

/// Mean absolute gap between prediction and label.
pub fn coverage_width(pred: &[f64], labels: &[f64]) -> f64 {
    let s: f64 = pred.iter().zip(labels).map(|(p, y)| (p - y).abs()).sum();
    s / labels.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub per_sa_prob: Vec<f64>,
    pub per_sa_width_db: Vec<f64>,
    pub per_sa_width_norm: Vec<f64>,
    pub avg_prob: f64,
    pub worst_prob: f64,
    pub avg_width_db: f64,
    pub avg_width_norm: f64,
}

/// Per-SA coverage of `[n × M]` dB predictions; `scales[sa]` converts a dB
/// gap to normalized units.
pub fn coverage_stats(pred_db: &[f64], labels_db: &[f64], scales: &[f64]) -> CoverageStats {
    let m = scales.len();
    let n = labels_db.len() / m;
    let col = |v: &[f64], sa: usize| (0..n).map(|i| v[i * m + sa]).collect::<Vec<_>>();
    let mut s = CoverageStats {
        per_sa_prob: Vec::with_capacity(m),
        per_sa_width_db: Vec::with_capacity(m),
        per_sa_width_norm: Vec::with_capacity(m),
        avg_prob: 0.0,
        worst_prob: 1.0,
        avg_width_db: 0.0,
        avg_width_norm: 0.0,
    };
    for (sa, &scale) in scales.iter().enumerate() {
        let (p, y) = (col(pred_db, sa), col(labels_db, sa));
        let prob = coverage_probability(&p, &y);
        let w = coverage_width(&p, &y);
        s.per_sa_prob.push(prob);
        s.per_sa_width_db.push(w);
        s.per_sa_width_norm.push(w / scale);
    }
    let mf = m as f64;
    s.avg_prob = s.per_sa_prob.iter().sum::<f64>() / mf;
    s.worst_prob = s.per_sa_prob.iter().cloned().fold(1.0, f64::min);
    s.avg_width_db = s.per_sa_width_db.iter().sum::<f64>() / mf;
    s.avg_width_norm = s.per_sa_width_norm.iter().sum::<f64>() / mf;
    s
}

/// One allocation decision: powers in watts for the label cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RaInstance {
    pub signal_w: f64,
    pub noise_w: f64,
    pub true_interference_w: f64,
}

impl RaInstance {
    pub fn sinr(&self, interference_w: f64) -> f64 {
        self.signal_w / (interference_w.max(0.0) + self.noise_w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaConfig {
    pub payload_bits: f64,
    pub eps_targets: Vec<f64>,
}

impl Default for RaConfig {
    fn default() -> Self {
        RaConfig {
            payload_bits: DEFAULT_PAYLOAD_BITS,
            eps_targets: DEFAULT_EPS_TARGETS.to_vec(),
        }
    }
}

impl RaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.payload_bits >= 1.0) {
            return Err(Error::Config("payload must be at least one bit".into()));
        }
        if self.eps_targets.iter().any(|&e| !(e > 0.0 && e < 0.5)) {
            return Err(Error::Config("BLER targets must be in (0, 0.5)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaOutcome {
    pub eps_target: f64,
    /// Fraction of decisions whose achieved BLER meets the target.
    pub percentile_met: f64,
    /// Mean ratio of real-valued channel uses to the genie allocation.
    pub mean_overhead: f64,
    pub mean_channel_uses: f64,
    pub mean_genie_channel_uses: f64,
    /// Achieved BLER per decision.
    pub achieved: Vec<f64>,
}

/// Allocates from predicted interference (watts) and scores each decision
/// against the true SINR.
pub fn evaluate_ra(
    predicted_w: &[f64],
    instances: &[RaInstance],
    cfg: &RaConfig,
) -> Result<Vec<RaOutcome>> {
    cfg.validate()?;
    if predicted_w.len() != instances.len() || instances.is_empty() {
        return Err(Error::Shape {
            expected: format!("{} predictions", instances.len()),
            got: format!("{}", predicted_w.len()),
        });
    }
    let n = instances.len() as f64;
    cfg.eps_targets
        .iter()
        .map(|&eps| {
            let mut met = 0usize;
            let (mut ovh, mut uses, mut genie_uses) = (0.0, 0.0, 0.0);
            let mut achieved = Vec::with_capacity(instances.len());
            for (inst, &iw) in instances.iter().zip(predicted_w) {
                let r = channel_usage_real(inst.sinr(iw), cfg.payload_bits, eps)?;
                let g =
                    channel_usage_real(inst.sinr(inst.true_interference_w), cfg.payload_bits, eps)?;
                let e = achieved_bler(
                    r.ceil(),
                    inst.sinr(inst.true_interference_w),
                    cfg.payload_bits,
                );
                if e <= eps * (1.0 + BLER_SLACK) {
                    met += 1;
                }
                achieved.push(e);
                ovh += r / g;
                uses += r.ceil();
                genie_uses += g.ceil();
            }
            Ok(RaOutcome {
                eps_target: eps,
                percentile_met: met as f64 / n,
                mean_overhead: ovh / n,
                mean_channel_uses: uses / n,
                mean_genie_channel_uses: genie_uses / n,
                achieved,
            })
        })
        .collect()
}

pub const RESULTS_HEADER: &str =
    "predictor,eps_target,percentile_met,mean_overhead,cov_prob,cov_width";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub predictor: String,
    pub eps_target: f64,
    pub percentile_met: f64,
    pub mean_overhead: f64,
    pub cov_prob: f64,
    pub cov_width: f64,
}

pub fn write_results_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{RESULTS_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{:e},{},{},{},{}",
            r.predictor, r.eps_target, r.percentile_met, r.mean_overhead, r.cov_prob, r.cov_width
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if headers != RESULTS_HEADER {
        return Err(Error::IncompleteRun(format!(
            "unexpected header in {}",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}
