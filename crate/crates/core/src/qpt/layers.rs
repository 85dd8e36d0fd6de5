//! Layers with hand-written backward passes.
//!
//! Token matrices are row-major `[instance · n_sa + sa][feature]`.

use rand::Rng;

use super::param::{Param, Parameters};
use crate::linalg::{
    add_row_bias, col_sum_acc, count_flops, matmul, matmul_a_bt_acc, matmul_acc, matmul_at_b_acc,
};

pub const LN_EPS: f64 = 1e-5;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-SA embedding `tanh(x W + b)` mapping a window to one token.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub w: Param,
    pub b: Param,
}

impl Embedding {
    pub fn new<R: Rng + ?Sized>(sa: usize, window: usize, d: usize, rng: &mut R) -> Self {
        Embedding {
            w: Param::xavier(format!("embed.{sa}.w"), window, d, rng),
            b: Param::zeros(format!("embed.{sa}.b"), 1, d),
        }
    }

    pub fn d(&self) -> usize {
        self.w.cols
    }

    /// `x[rows × window]` to tokens `[rows × d]`.
    pub fn forward(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let mut out = matmul(x, &self.w.value, rows, self.w.rows, self.w.cols);
        add_row_bias(&mut out, &self.b.value);
        for v in &mut out {
            *v = v.tanh();
        }
        out
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &[f64], out: &[f64], dout: &[f64], rows: usize) -> Vec<f64> {
        let (k, n) = (self.w.rows, self.w.cols);
        let dz: Vec<f64> = out
            .iter()
            .zip(dout)
            .map(|(y, g)| g * (1.0 - y * y))
            .collect();
        matmul_at_b_acc(x, &dz, &mut self.w.grad, rows, k, n);
        col_sum_acc(&dz, &mut self.b.grad);
        let mut dx = vec![0.0; rows * k];
        matmul_a_bt_acc(&dz, &self.w.value, &mut dx, rows, n, k);
        dx
    }
}

impl Parameters for Embedding {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Scaled dot-product attention over the `m` tokens of each instance, one
/// block of `d / heads` columns per head. Returns the concatenated head
/// outputs and the score maps `[instance][head][m][m]`.
pub fn attention(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    b: usize,
    m: usize,
    d: usize,
    heads: usize,
) -> (Vec<f64>, Vec<f64>) {
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut out = vec![0.0; b * m * d];
    let mut scores = vec![0.0; b * heads * m * m];
    for i in 0..b {
        for h in 0..heads {
            let a = &mut scores[(i * heads + h) * m * m..(i * heads + h + 1) * m * m];
            for r in 0..m {
                let qr = &q[(i * m + r) * d + h * dk..(i * m + r) * d + (h + 1) * dk];
                let row = &mut a[r * m..(r + 1) * m];
                let mut mx = f64::NEG_INFINITY;
                for (c, s) in row.iter_mut().enumerate() {
                    let kc = &k[(i * m + c) * d + h * dk..(i * m + c) * d + (h + 1) * dk];
                    *s = qr.iter().zip(kc).map(|(x, y)| x * y).sum::<f64>() * scale;
                    mx = mx.max(*s);
                }
                let mut z = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - mx).exp();
                    z += *s;
                }
                for s in row.iter_mut() {
                    *s /= z;
                }
                let o = &mut out[(i * m + r) * d + h * dk..(i * m + r) * d + (h + 1) * dk];
                for (c, &w) in row.iter().enumerate() {
                    let vc = &v[(i * m + c) * d + h * dk..(i * m + c) * d + (h + 1) * dk];
                    for (ov, vv) in o.iter_mut().zip(vc) {
                        *ov += w * vv;
                    }
                }
            }
        }
    }
    count_flops(4 * (b * heads * m * m * dk) as u64);
    (out, scores)
}

/// Gradients of [`attention`] with respect to `q`, `k` and `v`.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    scores: &[f64],
    dout: &[f64],
    b: usize,
    m: usize,
    d: usize,
    heads: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut dq = vec![0.0; b * m * d];
    let mut dkm = vec![0.0; b * m * d];
    let mut dv = vec![0.0; b * m * d];
    let mut da = vec![0.0; m];
    for i in 0..b {
        for h in 0..heads {
            let a = &scores[(i * heads + h) * m * m..(i * heads + h + 1) * m * m];
            let col = |t: usize| (i * m + t) * d + h * dk..(i * m + t) * d + (h + 1) * dk;
            for r in 0..m {
                let arow = &a[r * m..(r + 1) * m];
                let dor = &dout[col(r)];
                for c in 0..m {
                    let vc = &v[col(c)];
                    da[c] = dor.iter().zip(vc).map(|(x, y)| x * y).sum();
                    let w = arow[c];
                    for (g, o) in dv[col(c)].iter_mut().zip(dor) {
                        *g += w * o;
                    }
                }
                let dot: f64 = arow.iter().zip(&da).map(|(x, y)| x * y).sum();
                for c in 0..m {
                    let ds = arow[c] * (da[c] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kc = col(c);
                    let qr = col(r);
                    for t in 0..dk {
                        dq[qr.start + t] += ds * k[kc.start + t];
                        dkm[kc.start + t] += ds * q[qr.start + t];
                    }
                }
            }
        }
    }
    count_flops(8 * (b * heads * m * m * dk) as u64);
    (dq, dkm, dv)
}

/// Per-row normalization to zero mean and unit variance, then `γ x̂ + β`.
/// Returns the output, `x̂` and the per-row inverse standard deviation.
pub fn layer_norm(
    x: &[f64],
    d: usize,
    gamma: &[f64],
    beta: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mu = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv[r] = is;
        for c in 0..d {
            let h = (xr[c] - mu) * is;
            xhat[r * d + c] = h;
            y[r * d + c] = gamma[c] * h + beta[c];
        }
    }
    (y, xhat, inv)
}

/// Input gradient of [`layer_norm`]; accumulates `dγ` and `dβ`.
pub fn layer_norm_backward(
    dy: &[f64],
    xhat: &[f64],
    inv: &[f64],
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let d = gamma.len();
    let mut dx = vec![0.0; dy.len()];
    let mut dxh = vec![0.0; d];
    for r in 0..inv.len() {
        let (mut s1, mut s2) = (0.0, 0.0);
        for c in 0..d {
            let g = dy[r * d + c];
            let h = xhat[r * d + c];
            dgamma[c] += g * h;
            dbeta[c] += g;
            dxh[c] = g * gamma[c];
            s1 += dxh[c];
            s2 += dxh[c] * h;
        }
        let k = inv[r] / d as f64;
        for c in 0..d {
            dx[r * d + c] = k * (d as f64 * dxh[c] - s1 - xhat[r * d + c] * s2);
        }
    }
    dx
}

/// Multi-head self-attention with output projection, residual connection
/// and layer normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub heads: usize,
    pub wq: Param,
    pub wk: Param,
    pub wv: Param,
    pub wo: Param,
    pub bo: Param,
    pub gamma: Param,
    pub beta: Param,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    pub x: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    pub scores: Vec<f64>,
    pub o: Vec<f64>,
    pub mask: Option<Vec<f64>>,
    pub xhat: Vec<f64>,
    pub inv: Vec<f64>,
}

impl EncoderLayer {
    pub fn new<R: Rng + ?Sized>(layer: usize, d: usize, heads: usize, rng: &mut R) -> Self {
        let n = |s: &str| format!("enc.{layer}.{s}");
        EncoderLayer {
            heads,
            wq: Param::xavier(n("wq"), d, d, rng),
            wk: Param::xavier(n("wk"), d, d, rng),
            wv: Param::xavier(n("wv"), d, d, rng),
            wo: Param::xavier(n("wo"), d, d, rng),
            bo: Param::zeros(n("bo"), 1, d),
            gamma: Param::filled(n("ln.gamma"), 1, d, 1.0),
            beta: Param::zeros(n("ln.beta"), 1, d),
        }
    }

    pub fn d(&self) -> usize {
        self.wq.rows
    }

    /// `mask` holds inverted-dropout multipliers for the attention output.
    pub fn forward(
        &self,
        x: &[f64],
        b: usize,
        m: usize,
        mask: Option<Vec<f64>>,
    ) -> (Vec<f64>, EncoderCache) {
        let d = self.d();
        let rows = b * m;
        let q = matmul(x, &self.wq.value, rows, d, d);
        let k = matmul(x, &self.wk.value, rows, d, d);
        let v = matmul(x, &self.wv.value, rows, d, d);
        let (o, scores) = attention(&q, &k, &v, b, m, d, self.heads);
        let mut z = matmul(&o, &self.wo.value, rows, d, d);
        add_row_bias(&mut z, &self.bo.value);
        if let Some(mk) = &mask {
            for (zv, mv) in z.iter_mut().zip(mk) {
                *zv *= mv;
            }
        }
        for (zv, xv) in z.iter_mut().zip(x) {
            *zv += xv;
        }
        let (y, xhat, inv) = layer_norm(&z, d, &self.gamma.value, &self.beta.value);
        let cache = EncoderCache {
            x: x.to_vec(),
            q,
            k,
            v,
            scores,
            o,
            mask,
            xhat,
            inv,
        };
        (y, cache)
    }

    pub fn backward(&mut self, c: &EncoderCache, dy: &[f64], b: usize, m: usize) -> Vec<f64> {
        let d = self.d();
        let rows = b * m;
        let dr = layer_norm_backward(
            dy,
            &c.xhat,
            &c.inv,
            &self.gamma.value,
            &mut self.gamma.grad,
            &mut self.beta.grad,
        );
        let mut dx = dr.clone();
        let mut dz = dr;
        if let Some(mk) = &c.mask {
            for (g, mv) in dz.iter_mut().zip(mk) {
                *g *= mv;
            }
        }
        matmul_at_b_acc(&c.o, &dz, &mut self.wo.grad, rows, d, d);
        col_sum_acc(&dz, &mut self.bo.grad);
        let mut dout = vec![0.0; rows * d];
        matmul_a_bt_acc(&dz, &self.wo.value, &mut dout, rows, d, d);
        let (dq, dk, dv) =
            attention_backward(&c.q, &c.k, &c.v, &c.scores, &dout, b, m, d, self.heads);
        matmul_at_b_acc(&c.x, &dq, &mut self.wq.grad, rows, d, d);
        matmul_at_b_acc(&c.x, &dk, &mut self.wk.grad, rows, d, d);
        matmul_at_b_acc(&c.x, &dv, &mut self.wv.grad, rows, d, d);
        matmul_a_bt_acc(&dq, &self.wq.value, &mut dx, rows, d, d);
        matmul_a_bt_acc(&dk, &self.wk.value, &mut dx, rows, d, d);
        matmul_a_bt_acc(&dv, &self.wv.value, &mut dx, rows, d, d);
        dx
    }
}

impl Parameters for EncoderLayer {
    fn params(&self) -> Vec<&Param> {
        vec![
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.bo,
            &self.gamma,
            &self.beta,
        ]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.bo,
            &mut self.gamma,
            &mut self.beta,
        ]
    }
}

/// Single-layer LSTM run over the SA tokens of each instance. Gate blocks
/// are ordered input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub wx: Param,
    pub wh: Param,
    pub b: Param,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    /// Per step `[b × d]`.
    xs: Vec<Vec<f64>>,
    /// Per step, hidden and cell state entering the step, `[b × H]`.
    h_prev: Vec<Vec<f64>>,
    c_prev: Vec<Vec<f64>>,
    /// Per step activated gates `[b × 4H]`.
    gates: Vec<Vec<f64>>,
    tanh_c: Vec<Vec<f64>>,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(d: usize, hidden: usize, rng: &mut R) -> Self {
        let mut b = Param::zeros("lstm.b", 1, 4 * hidden);
        b.value[hidden..2 * hidden].fill(1.0);
        Lstm {
            wx: Param::xavier("lstm.wx", d, 4 * hidden, rng),
            wh: Param::xavier("lstm.wh", hidden, 4 * hidden, rng),
            b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.wh.rows
    }

    /// `x[b·m × d]` to hidden states `[b·m × H]`, starting from zero state.
    pub fn forward(&self, x: &[f64], b: usize, m: usize) -> (Vec<f64>, LstmCache) {
        let d = self.wx.rows;
        let hn = self.hidden();
        let mut out = vec![0.0; b * m * hn];
        let mut h = vec![0.0; b * hn];
        let mut c = vec![0.0; b * hn];
        let mut cache = LstmCache {
            xs: Vec::with_capacity(m),
            h_prev: Vec::with_capacity(m),
            c_prev: Vec::with_capacity(m),
            gates: Vec::with_capacity(m),
            tanh_c: Vec::with_capacity(m),
        };
        for t in 0..m {
            let mut xt = vec![0.0; b * d];
            for i in 0..b {
                xt[i * d..(i + 1) * d].copy_from_slice(&x[(i * m + t) * d..(i * m + t + 1) * d]);
            }
            let mut g = matmul(&xt, &self.wx.value, b, d, 4 * hn);
            matmul_acc(&h, &self.wh.value, &mut g, b, hn, 4 * hn);
            add_row_bias(&mut g, &self.b.value);
            let mut cn = vec![0.0; b * hn];
            let mut tc = vec![0.0; b * hn];
            let mut hnew = vec![0.0; b * hn];
            for i in 0..b {
                let gr = &mut g[i * 4 * hn..(i + 1) * 4 * hn];
                for j in 0..hn {
                    let ig = sigmoid(gr[j]);
                    let fg = sigmoid(gr[hn + j]);
                    let cg = gr[2 * hn + j].tanh();
                    let og = sigmoid(gr[3 * hn + j]);
                    gr[j] = ig;
                    gr[hn + j] = fg;
                    gr[2 * hn + j] = cg;
                    gr[3 * hn + j] = og;
                    let cv = fg * c[i * hn + j] + ig * cg;
                    cn[i * hn + j] = cv;
                    let t = cv.tanh();
                    tc[i * hn + j] = t;
                    hnew[i * hn + j] = og * t;
                }
                out[(i * m + t) * hn..(i * m + t + 1) * hn]
                    .copy_from_slice(&hnew[i * hn..(i + 1) * hn]);
            }
            cache.xs.push(xt);
            cache.h_prev.push(std::mem::replace(&mut h, hnew));
            cache.c_prev.push(std::mem::replace(&mut c, cn));
            cache.gates.push(g);
            cache.tanh_c.push(tc);
        }
        (out, cache)
    }

    /// Backpropagation through the SA sequence; returns `dx[b·m × d]`.
    pub fn backward(&mut self, cache: &LstmCache, dout: &[f64], b: usize, m: usize) -> Vec<f64> {
        let d = self.wx.rows;
        let hn = self.hidden();
        let mut dx = vec![0.0; b * m * d];
        let mut dh_next = vec![0.0; b * hn];
        let mut dc_next = vec![0.0; b * hn];
        for t in (0..m).rev() {
            let g = &cache.gates[t];
            let tc = &cache.tanh_c[t];
            let cp = &cache.c_prev[t];
            let mut dg = vec![0.0; b * 4 * hn];
            for i in 0..b {
                for j in 0..hn {
                    let k = i * hn + j;
                    let dh = dout[(i * m + t) * hn + j] + dh_next[k];
                    let gr = &g[i * 4 * hn..(i + 1) * 4 * hn];
                    let (ig, fg, cg, og) = (gr[j], gr[hn + j], gr[2 * hn + j], gr[3 * hn + j]);
                    let dc = dh * og * (1.0 - tc[k] * tc[k]) + dc_next[k];
                    let dgr = &mut dg[i * 4 * hn..(i + 1) * 4 * hn];
                    dgr[j] = dc * cg * ig * (1.0 - ig);
                    dgr[hn + j] = dc * cp[k] * fg * (1.0 - fg);
                    dgr[2 * hn + j] = dc * ig * (1.0 - cg * cg);
                    dgr[3 * hn + j] = dh * tc[k] * og * (1.0 - og);
                    dc_next[k] = dc * fg;
                }
            }
            matmul_at_b_acc(&cache.xs[t], &dg, &mut self.wx.grad, b, d, 4 * hn);
            matmul_at_b_acc(&cache.h_prev[t], &dg, &mut self.wh.grad, b, hn, 4 * hn);
            col_sum_acc(&dg, &mut self.b.grad);
            let mut dxt = vec![0.0; b * d];
            matmul_a_bt_acc(&dg, &self.wx.value, &mut dxt, b, 4 * hn, d);
            for i in 0..b {
                dx[(i * m + t) * d..(i * m + t + 1) * d].copy_from_slice(&dxt[i * d..(i + 1) * d]);
            }
            dh_next.fill(0.0);
            matmul_a_bt_acc(&dg, &self.wh.value, &mut dh_next, b, 4 * hn, hn);
        }
        dx
    }
}

impl Parameters for Lstm {
    fn params(&self) -> Vec<&Param> {
        vec![&self.wx, &self.wh, &self.b]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.wx, &mut self.wh, &mut self.b]
    }
}

/// Per-SA linear read-out of one quantile from an LSTM hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileHead {
    pub w: Param,
    pub b: Param,
}

impl QuantileHead {
    pub fn new<R: Rng + ?Sized>(sa: usize, hidden: usize, rng: &mut R) -> Self {
        QuantileHead {
            w: Param::xavier(format!("quantile.{sa}.w"), hidden, 1, rng),
            b: Param::zeros(format!("quantile.{sa}.b"), 1, 1),
        }
    }

    /// `h[rows × H]` to one value per row.
    pub fn forward(&self, h: &[f64], rows: usize) -> Vec<f64> {
        let mut out = matmul(h, &self.w.value, rows, self.w.rows, 1);
        for v in &mut out {
            *v += self.b.value[0];
        }
        out
    }

    pub fn backward(&mut self, h: &[f64], dy: &[f64], rows: usize) -> Vec<f64> {
        let hn = self.w.rows;
        matmul_at_b_acc(h, dy, &mut self.w.grad, rows, hn, 1);
        self.b.grad[0] += dy.iter().sum::<f64>();
        let mut dh = vec![0.0; rows * hn];
        matmul_a_bt_acc(dy, &self.w.value, &mut dh, rows, 1, hn);
        dh
    }
}

impl Parameters for QuantileHead {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }
}
