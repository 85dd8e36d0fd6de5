//! Mini-batch training with pinball loss and Adam.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use super::model::{DropoutCtx, QptModel};
use super::param::{Adam, AdamConfig, Parameters};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 128,
            lr: 1e-3,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("batch_size and lr must be positive".into()));
        }
        Ok(())
    }
}

/// Shuffled instance order of one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Copies the selected instances into contiguous batch buffers.
pub fn gather_batch(
    inputs: &[f64],
    labels: &[f64],
    idx: &[usize],
    per_input: usize,
    m: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::with_capacity(idx.len() * per_input);
    let mut y = Vec::with_capacity(idx.len() * m);
    for &j in idx {
        x.extend_from_slice(&inputs[j * per_input..(j + 1) * per_input]);
        y.extend_from_slice(&labels[j * m..(j + 1) * m]);
    }
    (x, y)
}

/// Mean training loss per epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub losses: Vec<f64>,
}

impl LossCurve {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "epoch,loss")?;
        for (e, l) in self.losses.iter().enumerate() {
            writeln!(w, "{},{}", e + 1, l)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trains on `n` instances (`inputs[n × window × M]`, `labels[n × M]`).
pub fn train(
    model: &mut QptModel,
    inputs: &[f64],
    labels: &[f64],
    cfg: &TrainConfig,
) -> Result<LossCurve> {
    cfg.validate()?;
    let m = model.cfg.n_sa;
    let per = model.cfg.window * m;
    let n = labels.len() / m;
    if n == 0 || inputs.len() != n * per {
        return Err(Error::Shape {
            expected: format!("{n} instances of {per} inputs"),
            got: format!("{} inputs", inputs.len()),
        });
    }
    let mut opt = Adam::new(cfg.adam());
    let mut curve = LossCurve::default();
    for epoch in 0..cfg.epochs {
        let order = epoch_order(n, cfg.seed, epoch);
        let mut total = 0.0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = gather_batch(inputs, labels, idx, per, m);
            let ctx = DropoutCtx {
                rate: model.cfg.dropout,
                seed: cfg.seed,
                epoch,
                batch: bi,
            };
            model.zero_grad();
            let loss = model.train_step(&x, &y, idx.len(), Some(&ctx))?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    loss,
                });
            }
            opt.step(model.params_mut());
            total += loss * idx.len() as f64;
        }
        let mean = total / n as f64;
        log::debug!("epoch {} loss {:.6}", epoch + 1, mean);
        curve.losses.push(mean);
    }
    Ok(curve)
}
