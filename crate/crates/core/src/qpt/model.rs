//! Model assembly: per-SA embedding heads, shared encoder and LSTM body,
//! per-SA quantile tails.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use super::layers::{Embedding, EncoderCache, EncoderLayer, Lstm, LstmCache, QuantileHead};
use super::param::{Param, ParamShape, Parameters};
use crate::error::{Error, Result};
use crate::windowing::Normalizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QptConfig {
    pub n_sa: usize,
    pub window: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub hidden: usize,
    pub dropout: f64,
    /// Miscoverage level; the model predicts the `1 - alpha` quantile.
    pub alpha: f64,
}

impl Default for QptConfig {
    fn default() -> Self {
        QptConfig {
            n_sa: 4,
            window: 8,
            d_model: 64,
            n_heads: 8,
            n_layers: 2,
            hidden: 64,
            dropout: 0.1,
            alpha: 0.05,
        }
    }
}

impl QptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sa == 0 || self.window == 0 || self.d_model < 2 || self.hidden == 0 {
            return Err(Error::Config(
                "n_sa, window, hidden must be positive and d_model at least 2".into(),
            ));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("alpha must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Identifies the batch a dropout mask belongs to, so every execution mode
/// draws identical masks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutCtx {
    pub rate: f64,
    pub seed: u64,
    pub epoch: usize,
    pub batch: usize,
}

impl DropoutCtx {
    pub fn mask(&self, layer: usize, len: usize) -> Vec<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_d12e_0000_0000);
        rng.set_stream(((self.epoch as u64) << 40) | ((self.batch as u64) << 8) | layer as u64);
        let keep = 1.0 / (1.0 - self.rate);
        (0..len)
            .map(|_| {
                if rng.random::<f64>() < self.rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect()
    }
}

/// Encoder layers followed by the LSTM; runs on the controller in split mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub layers: Vec<EncoderLayer>,
    pub lstm: Lstm,
    pub n_sa: usize,
}

#[derive(Debug, Clone)]
pub struct BodyCache {
    enc: Vec<EncoderCache>,
    lstm: LstmCache,
}

impl Body {
    pub fn d(&self) -> usize {
        self.lstm.wx.rows
    }

    pub fn hidden(&self) -> usize {
        self.lstm.hidden()
    }

    /// Tokens `[b·M × d]` to hidden states `[b·M × H]`.
    pub fn forward(
        &self,
        tokens: &[f64],
        b: usize,
        dropout: Option<&DropoutCtx>,
    ) -> (Vec<f64>, BodyCache) {
        let m = self.n_sa;
        let mut x = tokens.to_vec();
        let mut enc = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let mask = dropout.filter(|c| c.rate > 0.0).map(|c| c.mask(l, x.len()));
            let (y, c) = layer.forward(&x, b, m, mask);
            enc.push(c);
            x = y;
        }
        let (h, lstm) = self.lstm.forward(&x, b, m);
        (h, BodyCache { enc, lstm })
    }

    pub fn backward(&mut self, cache: &BodyCache, dh: &[f64], b: usize) -> Vec<f64> {
        let m = self.n_sa;
        let mut dx = self.lstm.backward(&cache.lstm, dh, b, m);
        for (layer, c) in self.layers.iter_mut().zip(&cache.enc).rev() {
            dx = layer.backward(c, &dx, b, m);
        }
        dx
    }

    /// Attention maps `[instance][head][M][M]` of every layer.
    pub fn attention_maps(&self, tokens: &[f64], b: usize) -> Vec<Vec<f64>> {
        let (_, cache) = self.forward(tokens, b, None);
        cache.enc.into_iter().map(|c| c.scores).collect()
    }
}

impl Parameters for Body {
    fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.layers.iter().flat_map(|l| l.params()).collect();
        v.extend(self.lstm.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self
            .layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect();
        v.extend(self.lstm.params_mut());
        v
    }
}

/// Column `sa` of a `[b × window × M]` batch as `[b × window]`.
pub fn gather_sa(x: &[f64], b: usize, window: usize, m: usize, sa: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(b * window);
    for i in 0..b {
        for t in 0..window {
            out.push(x[(i * window + t) * m + sa]);
        }
    }
    out
}

/// Rows `i·M + sa` of a `[b·M × n]` matrix.
pub fn gather_rows(x: &[f64], b: usize, m: usize, n: usize, sa: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(b * n);
    for i in 0..b {
        out.extend_from_slice(&x[(i * m + sa) * n..(i * m + sa + 1) * n]);
    }
    out
}

/// Inverse of [`gather_rows`] over all SA pairs.
pub fn scatter_rows(parts: &[Vec<f64>], b: usize, n: usize) -> Vec<f64> {
    let m = parts.len();
    let mut out = vec![0.0; b * m * n];
    for (sa, p) in parts.iter().enumerate() {
        for i in 0..b {
            out[(i * m + sa) * n..(i * m + sa + 1) * n].copy_from_slice(&p[i * n..(i + 1) * n]);
        }
    }
    out
}

/// Mean pinball loss over all entries.
pub fn pinball_loss(f: &[f64], y: &[f64], alpha: f64) -> f64 {
    let s: f64 = f.iter().zip(y).map(|(&f, &y)| pinball(f, y, alpha)).sum();
    s / f.len().max(1) as f64
}

pub fn pinball(f: f64, y: f64, alpha: f64) -> f64 {
    if f >= y {
        alpha * (f - y)
    } else {
        (1.0 - alpha) * (y - f)
    }
}

/// Summed loss and per-entry gradient, both multiplied by `scale`.
pub fn pinball_grad(f: &[f64], y: &[f64], alpha: f64, scale: f64) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let g = f
        .iter()
        .zip(y)
        .map(|(&f, &y)| {
            loss += pinball(f, y, alpha);
            if f >= y {
                alpha * scale
            } else {
                -(1.0 - alpha) * scale
            }
        })
        .collect();
    (loss * scale, g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QptModel {
    pub cfg: QptConfig,
    pub seed: u64,
    pub heads: Vec<Embedding>,
    pub body: Body,
    pub tails: Vec<QuantileHead>,
}

/// Thresholds `[batch × M]` in normalized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBatch {
    pub thresholds: Vec<f64>,
    pub batch: usize,
    pub n_sa: usize,
    pub quantile: f64,
    pub model_id: String,
}

impl QptModel {
    pub fn new(cfg: QptConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let heads = (0..cfg.n_sa)
            .map(|sa| Embedding::new(sa, cfg.window, cfg.d_model, &mut rng))
            .collect();
        let layers = (0..cfg.n_layers)
            .map(|l| EncoderLayer::new(l, cfg.d_model, cfg.n_heads, &mut rng))
            .collect();
        let lstm = Lstm::new(cfg.d_model, cfg.hidden, &mut rng);
        let tails = (0..cfg.n_sa)
            .map(|sa| QuantileHead::new(sa, cfg.hidden, &mut rng))
            .collect();
        Ok(QptModel {
            body: Body {
                layers,
                lstm,
                n_sa: cfg.n_sa,
            },
            cfg,
            seed,
            heads,
            tails,
        })
    }

    fn check_batch(&self, x: &[f64], b: usize) -> Result<()> {
        let want = b * self.cfg.window * self.cfg.n_sa;
        if x.len() != want {
            return Err(Error::Shape {
                expected: format!("{b} x {} x {}", self.cfg.window, self.cfg.n_sa),
                got: format!("{} values", x.len()),
            });
        }
        Ok(())
    }

    /// Token matrix `[b·M × d]` from a `[b × window × M]` batch.
    pub fn embed(&self, x: &[f64], b: usize) -> Result<Vec<f64>> {
        self.check_batch(x, b)?;
        let (w, m) = (self.cfg.window, self.cfg.n_sa);
        let parts: Vec<Vec<f64>> = self
            .heads
            .iter()
            .enumerate()
            .map(|(sa, h)| h.forward(&gather_sa(x, b, w, m, sa), b))
            .collect();
        Ok(scatter_rows(&parts, b, self.cfg.d_model))
    }

    /// Inference forward pass, `[b × window × M]` to `[b × M]`.
    pub fn forward(&self, x: &[f64], b: usize) -> Result<Vec<f64>> {
        let tokens = self.embed(x, b)?;
        let (h, _) = self.body.forward(&tokens, b, None);
        Ok(self.read_out(&h, b))
    }

    fn read_out(&self, h: &[f64], b: usize) -> Vec<f64> {
        let m = self.cfg.n_sa;
        let hn = self.cfg.hidden;
        let mut out = vec![0.0; b * m];
        for (sa, tail) in self.tails.iter().enumerate() {
            let f = tail.forward(&gather_rows(h, b, m, hn, sa), b);
            for i in 0..b {
                out[i * m + sa] = f[i];
            }
        }
        out
    }

    pub fn predict(&self, x: &[f64], b: usize) -> Result<PredictionBatch> {
        Ok(PredictionBatch {
            thresholds: self.forward(x, b)?,
            batch: b,
            n_sa: self.cfg.n_sa,
            quantile: 1.0 - self.cfg.alpha,
            model_id: self.id(),
        })
    }

    /// Forward over `n` instances in chunks.
    pub fn predict_all(&self, x: &[f64], n: usize) -> Result<Vec<f64>> {
        const CHUNK: usize = 256;
        let per = self.cfg.window * self.cfg.n_sa;
        let mut out = Vec::with_capacity(n * self.cfg.n_sa);
        let mut i = 0;
        while i < n {
            let b = CHUNK.min(n - i);
            out.extend(self.forward(&x[i * per..(i + b) * per], b)?);
            i += b;
        }
        Ok(out)
    }

    /// Forward and backward for one batch; gradients are accumulated into
    /// the parameters and the mean pinball loss is returned.
    pub fn train_step(
        &mut self,
        x: &[f64],
        y: &[f64],
        b: usize,
        dropout: Option<&DropoutCtx>,
    ) -> Result<f64> {
        self.check_batch(x, b)?;
        let (w, m, hn) = (self.cfg.window, self.cfg.n_sa, self.cfg.hidden);
        let xs: Vec<Vec<f64>> = (0..m).map(|sa| gather_sa(x, b, w, m, sa)).collect();
        let outs: Vec<Vec<f64>> = self
            .heads
            .iter()
            .zip(&xs)
            .map(|(h, xm)| h.forward(xm, b))
            .collect();
        let tokens = scatter_rows(&outs, b, self.cfg.d_model);
        let (hid, cache) = self.body.forward(&tokens, b, dropout);
        let scale = 1.0 / (b * m) as f64;
        let mut loss = 0.0;
        let mut dh_parts = Vec::with_capacity(m);
        for (sa, tail) in self.tails.iter_mut().enumerate() {
            let hm = gather_rows(&hid, b, m, hn, sa);
            let f = tail.forward(&hm, b);
            let ym: Vec<f64> = (0..b).map(|i| y[i * m + sa]).collect();
            let (l, df) = pinball_grad(&f, &ym, self.cfg.alpha, scale);
            loss += l;
            dh_parts.push(tail.backward(&hm, &df, b));
        }
        let dh = scatter_rows(&dh_parts, b, hn);
        let dtok = self.body.backward(&cache, &dh, b);
        for (sa, head) in self.heads.iter_mut().enumerate() {
            let g = gather_rows(&dtok, b, m, self.cfg.d_model, sa);
            head.backward(&xs[sa], &outs[sa], &g, b);
        }
        Ok(loss)
    }

    /// Short content hash of configuration and parameters.
    pub fn id(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.cfg).unwrap_or_default());
        for v in self.flat_values() {
            h.update(v.to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    pub fn save(&self, dir: &Path, extra: CheckpointExtra) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join(WEIGHTS_FILE))?);
        for v in self.flat_values() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        let manifest = CheckpointManifest {
            config: self.cfg.clone(),
            seed: self.seed,
            quantile: 1.0 - self.cfg.alpha,
            model_id: self.id(),
            params: self.params().iter().map(|p| p.shape()).collect(),
            normalizer: extra.normalizer,
            epochs: extra.epochs,
        };
        std::fs::write(
            dir.join(CHECKPOINT_FILE),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(Self, CheckpointManifest)> {
        let manifest: CheckpointManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join(CHECKPOINT_FILE))?)?;
        let mut model = QptModel::new(manifest.config.clone(), manifest.seed)?;
        let shapes: Vec<ParamShape> = model.params().iter().map(|p| p.shape()).collect();
        if shapes != manifest.params {
            return Err(Error::Shape {
                expected: format!("{} parameter tensors", shapes.len()),
                got: format!("{} in manifest", manifest.params.len()),
            });
        }
        let bytes = std::fs::read(dir.join(WEIGHTS_FILE))?;
        let n = model.param_count();
        if bytes.len() != 8 * n {
            return Err(Error::Shape {
                expected: format!("{} bytes", 8 * n),
                got: format!("{} bytes", bytes.len()),
            });
        }
        let mut vals = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
        for p in model.params_mut() {
            for v in &mut p.value {
                *v = vals.next().expect("length checked");
            }
        }
        Ok((model, manifest))
    }
}

impl Parameters for QptModel {
    fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.heads.iter().flat_map(|h| h.params()).collect();
        v.extend(self.body.params());
        v.extend(self.tails.iter().flat_map(|t| t.params()));
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self.heads.iter_mut().flat_map(|h| h.params_mut()).collect();
        v.extend(self.body.params_mut());
        v.extend(self.tails.iter_mut().flat_map(|t| t.params_mut()));
        v
    }
}

pub const WEIGHTS_FILE: &str = "model.bin";
pub const CHECKPOINT_FILE: &str = "model.json";

#[derive(Debug, Clone, Default)]
pub struct CheckpointExtra {
    pub normalizer: Option<Normalizer>,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: QptConfig,
    pub seed: u64,
    pub quantile: f64,
    pub model_id: String,
    pub params: Vec<ParamShape>,
    pub normalizer: Option<Normalizer>,
    pub epochs: usize,
}
