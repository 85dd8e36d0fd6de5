//! U-shaped split execution of the quantile transformer.
//!
//! Each SA pair is a client owning its embedding (head) and quantile
//! read-out (tail); the controller is the server owning the encoder and
//! LSTM (body). Clients and server exchange activations and gradients as
//! framed messages over a transport; labels never leave the clients.
//!
//! Wire format of a message, all integers little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 1 | kind (0 activation, 1 gradient) |
//! | 1 + 4 | source (0 client, 1 server) and client id |
//! | 1 + 4 | destination |
//! | 8 | per-link sequence number |
//! | 4 | epoch |
//! | 4 | batch |
//! | 4 + 4 | payload rows and columns |
//! | 8·rows·cols | payload, f64 |

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};
use crate::linalg::take_flops;
use crate::qpt::layers::{Embedding, QuantileHead};
use crate::qpt::model::{gather_sa, pinball_grad, scatter_rows, Body, DropoutCtx};
use crate::qpt::param::{Adam, AdamConfig, Param, Parameters};
use crate::qpt::train::{epoch_order, gather_batch, TrainConfig};
use crate::qpt::{LossCurve, QptConfig, QptModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Participant {
    Client(usize),
    Server,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessageKind {
    Activation,
    Gradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitMessage {
    pub kind: MessageKind,
    pub source: Participant,
    pub dest: Participant,
    pub seq: u64,
    pub epoch: usize,
    pub batch: usize,
    pub rows: usize,
    pub cols: usize,
    pub payload: Vec<f64>,
}

const HEADER_BYTES: usize = 1 + 5 + 5 + 8 + 4 + 4 + 4 + 4;

fn put_participant(out: &mut Vec<u8>, p: Participant) {
    match p {
        Participant::Client(id) => {
            out.push(0);
            out.extend_from_slice(&(id as u32).to_le_bytes());
        }
        Participant::Server => {
            out.push(1);
            out.extend_from_slice(&0u32.to_le_bytes());
        }
    }
}

fn get_u32(b: &[u8], at: usize) -> usize {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes")) as usize
}

fn get_participant(b: &[u8], at: usize) -> Result<Participant> {
    match b[at] {
        0 => Ok(Participant::Client(get_u32(b, at + 1))),
        1 => Ok(Participant::Server),
        t => Err(Error::Protocol(format!("unknown participant tag {t}"))),
    }
}

impl SplitMessage {
    /// Payload size in bytes.
    pub fn byte_size(&self) -> usize {
        self.payload.len() * std::mem::size_of::<f64>()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_BYTES + self.byte_size());
        out.push(match self.kind {
            MessageKind::Activation => 0,
            MessageKind::Gradient => 1,
        });
        put_participant(&mut out, self.source);
        put_participant(&mut out, self.dest);
        out.extend_from_slice(&self.seq.to_le_bytes());
        for v in [self.epoch, self.batch, self.rows, self.cols] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_BYTES {
            return Err(Error::Protocol("truncated header".into()));
        }
        let kind = match b[0] {
            0 => MessageKind::Activation,
            1 => MessageKind::Gradient,
            k => return Err(Error::Protocol(format!("unknown message kind {k}"))),
        };
        let source = get_participant(b, 1)?;
        let dest = get_participant(b, 6)?;
        let seq = u64::from_le_bytes(b[11..19].try_into().expect("8 bytes"));
        let (epoch, batch, rows, cols) = (
            get_u32(b, 19),
            get_u32(b, 23),
            get_u32(b, 27),
            get_u32(b, 31),
        );
        let body = &b[HEADER_BYTES..];
        if body.len() != 8 * rows * cols {
            return Err(Error::Protocol(format!(
                "payload of {} bytes for shape {rows}x{cols}",
                body.len()
            )));
        }
        let payload = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(SplitMessage {
            kind,
            source,
            dest,
            seq,
            epoch,
            batch,
            rows,
            cols,
            payload,
        })
    }
}

/// Injected transport faults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FaultModel {
    /// Probability that a message is silently dropped.
    pub loss_prob: f64,
    /// Probability that a message is held back behind the next one on the
    /// same link.
    pub delay_prob: f64,
    /// Shuffle the order in which the server's inbound messages are queued.
    pub shuffle_server_inbox: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MessageStats {
    pub activations_up: usize,
    pub activations_down: usize,
    pub gradients_up: usize,
    pub gradients_down: usize,
    pub bytes: usize,
}

/// In-process message channel with per-link sequence checking.
#[derive(Debug)]
pub struct Transport {
    inbox: HashMap<Participant, VecDeque<Vec<u8>>>,
    held: HashMap<(Participant, Participant), Vec<u8>>,
    next_seq: HashMap<(Participant, Participant), u64>,
    expect_seq: HashMap<(Participant, Participant), u64>,
    faults: FaultModel,
    rng: ChaCha8Rng,
    pub stats: MessageStats,
    /// Every delivered message, for inspection.
    pub record: Option<Vec<SplitMessage>>,
}

impl Transport {
    pub fn new(faults: FaultModel) -> Self {
        Transport {
            inbox: HashMap::new(),
            held: HashMap::new(),
            next_seq: HashMap::new(),
            expect_seq: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(faults.seed),
            faults,
            stats: MessageStats::default(),
            record: None,
        }
    }

    pub fn send(&mut self, mut msg: SplitMessage) {
        let link = (msg.source, msg.dest);
        let seq = self.next_seq.entry(link).or_insert(0);
        msg.seq = *seq;
        *seq += 1;
        let up = msg.dest == Participant::Server;
        match (msg.kind, up) {
            (MessageKind::Activation, true) => self.stats.activations_up += 1,
            (MessageKind::Activation, false) => self.stats.activations_down += 1,
            (MessageKind::Gradient, true) => self.stats.gradients_up += 1,
            (MessageKind::Gradient, false) => self.stats.gradients_down += 1,
        }
        self.stats.bytes += HEADER_BYTES + msg.byte_size();
        if let Some(r) = &mut self.record {
            r.push(msg.clone());
        }
        let bytes = msg.encode();
        if self.faults.loss_prob > 0.0 && self.rng.random::<f64>() < self.faults.loss_prob {
            return;
        }
        let q = self.inbox.entry(msg.dest).or_default();
        if let Some(prev) = self.held.remove(&link) {
            q.push_back(bytes);
            q.push_back(prev);
            return;
        }
        if self.faults.delay_prob > 0.0 && self.rng.random::<f64>() < self.faults.delay_prob {
            self.held.insert(link, bytes);
            return;
        }
        q.push_back(bytes);
    }

    /// Releases messages held back at the end of a phase.
    pub fn flush(&mut self) {
        let held: Vec<_> = self.held.drain().collect();
        for ((_, dest), bytes) in held {
            self.inbox.entry(dest).or_default().push_back(bytes);
        }
    }

    /// Reorders the pending inbound queue of the server.
    fn maybe_shuffle(&mut self, who: Participant) {
        if who == Participant::Server && self.faults.shuffle_server_inbox {
            if let Some(q) = self.inbox.get_mut(&who) {
                let v = q.make_contiguous();
                v.shuffle(&mut self.rng);
            }
        }
    }

    /// Next message for `who`; checks exactly-once, in-order delivery per link
    /// and the expected kind, epoch and batch.
    pub fn recv(
        &mut self,
        who: Participant,
        kind: MessageKind,
        epoch: usize,
        batch: usize,
    ) -> Result<SplitMessage> {
        let bytes = self
            .inbox
            .get_mut(&who)
            .and_then(|q| q.pop_front())
            .ok_or_else(|| Error::Protocol(format!("no message pending for {who:?}")))?;
        let msg = SplitMessage::decode(&bytes)?;
        let link = (msg.source, msg.dest);
        let want = self.expect_seq.entry(link).or_insert(0);
        if msg.seq != *want {
            return Err(Error::Protocol(format!(
                "{:?} -> {:?}: sequence {} but expected {}",
                msg.source, msg.dest, msg.seq, want
            )));
        }
        *want += 1;
        if msg.kind != kind || msg.epoch != epoch || msg.batch != batch {
            return Err(Error::Protocol(format!(
                "unexpected {:?} for epoch {} batch {} (wanted {kind:?} {epoch}/{batch})",
                msg.kind, msg.epoch, msg.batch
            )));
        }
        Ok(msg)
    }

    fn collect_from_clients(
        &mut self,
        m: usize,
        kind: MessageKind,
        epoch: usize,
        batch: usize,
    ) -> Result<Vec<SplitMessage>> {
        self.flush();
        self.maybe_shuffle(Participant::Server);
        let mut slots: Vec<Option<SplitMessage>> = vec![None; m];
        for _ in 0..m {
            let msg = self.recv(Participant::Server, kind, epoch, batch)?;
            match msg.source {
                Participant::Client(id) if id < m && slots[id].is_none() => slots[id] = Some(msg),
                s => return Err(Error::Protocol(format!("unexpected sender {s:?}"))),
            }
        }
        Ok(slots
            .into_iter()
            .map(|s| s.expect("all slots filled"))
            .collect())
    }
}

/// One SA pair: embedding head, quantile tail and a local optimizer.
#[derive(Debug, Clone)]
pub struct Client {
    pub id: usize,
    pub head: Embedding,
    pub tail: QuantileHead,
    opt: Adam,
}

impl Parameters for Client {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.head.params();
        v.extend(self.tail.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.head.params_mut();
        v.extend(self.tail.params_mut());
        v
    }
}

#[derive(Debug, Clone)]
pub struct Server {
    pub body: Body,
    opt: Adam,
}

/// Partitioned model plus transport.
#[derive(Debug)]
pub struct SplitSystem {
    pub cfg: QptConfig,
    pub seed: u64,
    pub clients: Vec<Client>,
    pub server: Server,
    pub transport: Transport,
}

/// Splits a model into per-SA clients and a server body.
pub fn partition(model: &QptModel, adam: AdamConfig, faults: FaultModel) -> SplitSystem {
    let clients = model
        .heads
        .iter()
        .zip(&model.tails)
        .enumerate()
        .map(|(id, (h, t))| Client {
            id,
            head: h.clone(),
            tail: t.clone(),
            opt: Adam::new(adam),
        })
        .collect();
    SplitSystem {
        cfg: model.cfg.clone(),
        seed: model.seed,
        clients,
        server: Server {
            body: model.body.clone(),
            opt: Adam::new(adam),
        },
        transport: Transport::new(faults),
    }
}

impl SplitSystem {
    /// Reassembles the centralized model.
    pub fn merge(&self) -> QptModel {
        QptModel {
            cfg: self.cfg.clone(),
            seed: self.seed,
            heads: self.clients.iter().map(|c| c.head.clone()).collect(),
            body: self.server.body.clone(),
            tails: self.clients.iter().map(|c| c.tail.clone()).collect(),
        }
    }

    fn msg(
        kind: MessageKind,
        source: Participant,
        dest: Participant,
        epoch: usize,
        batch: usize,
        rows: usize,
        payload: Vec<f64>,
    ) -> SplitMessage {
        let cols = payload.len() / rows.max(1);
        SplitMessage {
            kind,
            source,
            dest,
            seq: 0,
            epoch,
            batch,
            rows,
            cols,
            payload,
        }
    }

    /// Head forward on every client; returns the local inputs and tokens.
    fn heads_forward(
        &mut self,
        x: &[f64],
        b: usize,
        epoch: usize,
        batch: usize,
    ) -> Vec<(Vec<f64>, Vec<f64>)> {
        let (w, m) = (self.cfg.window, self.cfg.n_sa);
        let mut local = Vec::with_capacity(m);
        for c in &self.clients {
            let xm = gather_sa(x, b, w, m, c.id);
            let tok = c.head.forward(&xm, b);
            self.transport.send(Self::msg(
                MessageKind::Activation,
                Participant::Client(c.id),
                Participant::Server,
                epoch,
                batch,
                b,
                tok.clone(),
            ));
            local.push((xm, tok));
        }
        local
    }

    /// Server side of the forward pass; sends each client its hidden rows.
    fn body_forward(
        &mut self,
        b: usize,
        epoch: usize,
        batch: usize,
        dropout: Option<&DropoutCtx>,
    ) -> Result<crate::qpt::model::BodyCache> {
        let m = self.cfg.n_sa;
        let msgs = self
            .transport
            .collect_from_clients(m, MessageKind::Activation, epoch, batch)?;
        let parts: Vec<Vec<f64>> = msgs.into_iter().map(|s| s.payload).collect();
        let tokens = scatter_rows(&parts, b, self.cfg.d_model);
        let (hid, cache) = self.server.body.forward(&tokens, b, dropout);
        let hn = self.cfg.hidden;
        for id in 0..m {
            let rows = crate::qpt::model::gather_rows(&hid, b, m, hn, id);
            self.transport.send(Self::msg(
                MessageKind::Activation,
                Participant::Server,
                Participant::Client(id),
                epoch,
                batch,
                b,
                rows,
            ));
        }
        self.transport.flush();
        Ok(cache)
    }

    /// Forward over a `[b × window × M]` batch without training.
    pub fn predict(&mut self, x: &[f64], b: usize) -> Result<Vec<f64>> {
        let m = self.cfg.n_sa;
        if x.len() != b * self.cfg.window * m {
            return Err(Error::Shape {
                expected: format!("{b} x {} x {m}", self.cfg.window),
                got: format!("{} values", x.len()),
            });
        }
        self.heads_forward(x, b, 0, 0);
        self.body_forward(b, 0, 0, None)?;
        let mut out = vec![0.0; b * m];
        for c in &self.clients {
            let msg =
                self.transport
                    .recv(Participant::Client(c.id), MessageKind::Activation, 0, 0)?;
            let f = c.tail.forward(&msg.payload, b);
            for i in 0..b {
                out[i * m + c.id] = f[i];
            }
        }
        Ok(out)
    }

    pub fn predict_all(&mut self, x: &[f64], n: usize) -> Result<Vec<f64>> {
        const CHUNK: usize = 256;
        let per = self.cfg.window * self.cfg.n_sa;
        let mut out = Vec::with_capacity(n * self.cfg.n_sa);
        let mut i = 0;
        while i < n {
            let b = CHUNK.min(n - i);
            out.extend(self.predict(&x[i * per..(i + b) * per], b)?);
            i += b;
        }
        Ok(out)
    }

    /// One training batch through the full protocol. Returns the summed
    /// client losses.
    pub fn train_batch(
        &mut self,
        x: &[f64],
        y: &[f64],
        b: usize,
        epoch: usize,
        batch: usize,
        dropout: Option<&DropoutCtx>,
    ) -> Result<f64> {
        let m = self.cfg.n_sa;
        for c in &mut self.clients {
            c.zero_grad();
        }
        self.server.body.zero_grad();
        let local = self.heads_forward(x, b, epoch, batch);
        let cache = self.body_forward(b, epoch, batch, dropout)?;

        let scale = 1.0 / (b * m) as f64;
        let mut loss = 0.0;
        let mut hidden = Vec::with_capacity(m);
        for c in &mut self.clients {
            let msg = self.transport.recv(
                Participant::Client(c.id),
                MessageKind::Activation,
                epoch,
                batch,
            )?;
            let f = c.tail.forward(&msg.payload, b);
            let ym: Vec<f64> = (0..b).map(|i| y[i * m + c.id]).collect();
            let (l, df) = pinball_grad(&f, &ym, self.cfg.alpha, scale);
            loss += l;
            let dh = c.tail.backward(&msg.payload, &df, b);
            self.transport.send(Self::msg(
                MessageKind::Gradient,
                Participant::Client(c.id),
                Participant::Server,
                epoch,
                batch,
                b,
                dh,
            ));
            hidden.push(msg.payload);
        }

        let grads = self
            .transport
            .collect_from_clients(m, MessageKind::Gradient, epoch, batch)?;
        let parts: Vec<Vec<f64>> = grads.into_iter().map(|s| s.payload).collect();
        let dh = scatter_rows(&parts, b, self.cfg.hidden);
        let dtok = self.server.body.backward(&cache, &dh, b);
        let d = self.cfg.d_model;
        for id in 0..m {
            let rows = crate::qpt::model::gather_rows(&dtok, b, m, d, id);
            self.transport.send(Self::msg(
                MessageKind::Gradient,
                Participant::Server,
                Participant::Client(id),
                epoch,
                batch,
                b,
                rows,
            ));
        }
        self.transport.flush();
        let Server { body, opt } = &mut self.server;
        opt.step(body.params_mut());

        for (c, (xm, tok)) in self.clients.iter_mut().zip(&local) {
            let msg = self.transport.recv(
                Participant::Client(c.id),
                MessageKind::Gradient,
                epoch,
                batch,
            )?;
            c.head.backward(xm, tok, &msg.payload, b);
            let Client {
                head, tail, opt, ..
            } = c;
            let mut ps = head.params_mut();
            ps.extend(tail.params_mut());
            opt.step(ps);
        }
        Ok(loss)
    }

    /// One epoch over `n` training instances in the shuffled order shared
    /// with centralized training.
    pub fn train_epoch(
        &mut self,
        inputs: &[f64],
        labels: &[f64],
        cfg: &TrainConfig,
        epoch: usize,
    ) -> Result<f64> {
        let m = self.cfg.n_sa;
        let per = self.cfg.window * m;
        let n = labels.len() / m;
        let order = epoch_order(n, cfg.seed, epoch);
        let mut total = 0.0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = gather_batch(inputs, labels, idx, per, m);
            let ctx = DropoutCtx {
                rate: self.cfg.dropout,
                seed: cfg.seed,
                epoch,
                batch: bi,
            };
            let loss = self.train_batch(&x, &y, idx.len(), epoch, bi, Some(&ctx))?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    loss,
                });
            }
            total += loss * idx.len() as f64;
        }
        Ok(total / n as f64)
    }

    pub fn train(
        &mut self,
        inputs: &[f64],
        labels: &[f64],
        cfg: &TrainConfig,
    ) -> Result<LossCurve> {
        cfg.validate()?;
        let m = self.cfg.n_sa;
        let per = self.cfg.window * m;
        let n = labels.len() / m;
        if n == 0 || inputs.len() != n * per {
            return Err(Error::Shape {
                expected: format!("{n} instances of {per} inputs"),
                got: format!("{} inputs", inputs.len()),
            });
        }
        let mut curve = LossCurve::default();
        for epoch in 0..cfg.epochs {
            let l = self.train_epoch(inputs, labels, cfg, epoch)?;
            log::debug!("split epoch {} loss {:.6}", epoch + 1, l);
            curve.losses.push(l);
        }
        Ok(curve)
    }
}

/// Compute and link parameters of the split latency estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyModel {
    /// Client and server compute capability in FLOP/s.
    pub client_flops: f64,
    pub server_flops: f64,
    /// Computing intensity multiplier.
    pub intensity: f64,
    /// Uplink rate in bit/s.
    pub uplink_bps: f64,
    pub n_clients: usize,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            client_flops: 1e9,
            server_flops: 1e10,
            intensity: 1.0,
            uplink_bps: 1e8,
            n_clients: 4,
        }
    }
}

impl LatencyModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.client_flops > 0.0
            && self.server_flops > 0.0
            && self.intensity > 0.0
            && self.uplink_bps > 0.0
            && self.n_clients > 0;
        if !ok {
            return Err(Error::Config(
                "latency model values must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-sample forward workloads in FLOPs and cut-layer sizes in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workloads {
    pub head_flops: f64,
    pub body_flops: f64,
    pub tail_flops: f64,
    /// Smashed data per sample and client, head to body.
    pub up_bits: f64,
    /// Smashed data per sample and client, body to tail.
    pub down_bits: f64,
}

impl Workloads {
    /// Measures forward FLOPs per sample with the kernel counter. The body
    /// figure is per client share, i.e. total body cost divided by M.
    pub fn measure(model: &QptModel) -> Self {
        let cfg = &model.cfg;
        let x = vec![0.5; cfg.window * cfg.n_sa];
        take_flops();
        let tokens = model.embed(&x, 1).expect("shape from config");
        let head = take_flops() as f64 / cfg.n_sa as f64;
        let (hid, _) = model.body.forward(&tokens, 1, None);
        let body = take_flops() as f64 / cfg.n_sa as f64;
        let _ = model.tails[0].forward(&hid[..cfg.hidden], 1);
        let tail = take_flops() as f64;
        Workloads {
            head_flops: head,
            body_flops: body,
            tail_flops: tail,
            up_bits: 64.0 * cfg.d_model as f64,
            down_bits: 64.0 * cfg.hidden as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub model: LatencyModel,
    pub workloads: Workloads,
    pub window: usize,
    pub head_fp_s: f64,
    pub server_compute_s: f64,
    pub tail_fp_s: f64,
    pub uplink_s: f64,
    pub downlink_s: f64,
    pub total_s: f64,
}

/// Analytic split latency: client compute, server compute over all
/// clients, and the two cut-layer transfers.
pub fn estimate_latency(lm: &LatencyModel, wl: &Workloads, window: usize) -> Result<LatencyReport> {
    lm.validate()?;
    let s = window as f64;
    let k = lm.n_clients as f64;
    let head = s * lm.intensity * wl.head_flops / lm.client_flops;
    let server = k * s * lm.intensity * wl.body_flops / lm.server_flops;
    let tail = s * lm.intensity * wl.tail_flops / lm.client_flops;
    let up = k * s * wl.up_bits / lm.uplink_bps;
    let down = s * wl.down_bits / lm.uplink_bps;
    Ok(LatencyReport {
        model: lm.clone(),
        workloads: *wl,
        window,
        head_fp_s: head,
        server_compute_s: server,
        tail_fp_s: tail,
        uplink_s: up,
        downlink_s: down,
        total_s: head + server + tail + up + down,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SplitMessage {
        SplitMessage {
            kind: MessageKind::Gradient,
            source: Participant::Client(3),
            dest: Participant::Server,
            seq: 9,
            epoch: 2,
            batch: 5,
            rows: 2,
            cols: 3,
            payload: vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE, 0.0, 1e300],
        }
    }

    #[test]
    fn codec_round_trip() {
        let m = sample();
        let bytes = m.encode();
        assert_eq!(bytes.len(), HEADER_BYTES + m.byte_size());
        assert_eq!(m.byte_size(), 48);
        assert_eq!(SplitMessage::decode(&bytes).unwrap(), m);
    }

    #[test]
    fn codec_rejects_bad_frames() {
        let bytes = sample().encode();
        assert!(SplitMessage::decode(&bytes[..10]).is_err());
        assert!(SplitMessage::decode(&bytes[..bytes.len() - 8]).is_err());
        let mut bad = bytes.clone();
        bad[0] = 7;
        assert!(SplitMessage::decode(&bad).is_err());
    }

    fn up(id: usize, batch: usize) -> SplitMessage {
        SplitMessage {
            kind: MessageKind::Activation,
            source: Participant::Client(id),
            dest: Participant::Server,
            seq: 0,
            epoch: 0,
            batch,
            rows: 1,
            cols: 1,
            payload: vec![id as f64],
        }
    }

    #[test]
    fn lost_message_is_a_protocol_error() {
        let mut t = Transport::new(FaultModel {
            loss_prob: 1.0,
            ..Default::default()
        });
        t.send(up(0, 0));
        let e = t.recv(Participant::Server, MessageKind::Activation, 0, 0);
        assert!(matches!(e, Err(Error::Protocol(_))));
    }

    #[test]
    fn reordered_link_is_a_protocol_error() {
        let mut t = Transport::new(FaultModel {
            delay_prob: 1.0,
            ..Default::default()
        });
        t.send(up(0, 0));
        t.send(up(0, 1));
        let e = t.recv(Participant::Server, MessageKind::Activation, 0, 0);
        assert!(matches!(e, Err(Error::Protocol(_))), "{e:?}");
    }

    #[test]
    fn gap_after_loss_is_detected() {
        let mut t = Transport::new(FaultModel::default());
        t.send(up(0, 0));
        t.inbox.get_mut(&Participant::Server).unwrap().clear();
        t.send(up(0, 1));
        assert!(t
            .recv(Participant::Server, MessageKind::Activation, 0, 1)
            .is_err());
    }

    #[test]
    fn wrong_batch_is_rejected() {
        let mut t = Transport::new(FaultModel::default());
        t.send(up(1, 4));
        assert!(t
            .recv(Participant::Server, MessageKind::Activation, 0, 3)
            .is_err());
    }

    #[test]
    fn shuffled_inbox_is_reassembled_by_client_id() {
        let mut t = Transport::new(FaultModel {
            shuffle_server_inbox: true,
            seed: 11,
            ..Default::default()
        });
        for id in 0..6 {
            t.send(up(id, 0));
        }
        let got = t
            .collect_from_clients(6, MessageKind::Activation, 0, 0)
            .unwrap();
        let ids: Vec<f64> = got.iter().map(|m| m.payload[0]).collect();
        assert_eq!(ids, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn latency_example() {
        let lm = LatencyModel {
            client_flops: 1e9,
            server_flops: 1e9,
            intensity: 1.0,
            uplink_bps: 1e6,
            n_clients: 1,
        };
        let wl = Workloads {
            head_flops: 0.0,
            body_flops: 1e6,
            tail_flops: 0.0,
            up_bits: 0.0,
            down_bits: 0.0,
        };
        let r = estimate_latency(&lm, &wl, 16).unwrap();
        assert!((r.server_compute_s - 1.6e-2).abs() < 1e-15);
        assert!((r.total_s - 1.6e-2).abs() < 1e-15);
    }

    #[test]
    fn latency_scaling_in_clients() {
        let wl = Workloads {
            head_flops: 3e5,
            body_flops: 2e6,
            tail_flops: 1e4,
            up_bits: 4096.0,
            down_bits: 4096.0,
        };
        let a = estimate_latency(&LatencyModel::default(), &wl, 8).unwrap();
        let lm2 = LatencyModel {
            n_clients: 8,
            ..Default::default()
        };
        let b = estimate_latency(&lm2, &wl, 8).unwrap();
        assert!((b.server_compute_s - 2.0 * a.server_compute_s).abs() < 1e-15);
        assert!((b.uplink_s - 2.0 * a.uplink_s).abs() < 1e-15);
        assert_eq!(a.head_fp_s, b.head_fp_s);
        assert_eq!(a.tail_fp_s, b.tail_fp_s);
        assert_eq!(a.downlink_s, b.downlink_s);
        let zero = Workloads {
            head_flops: 0.0,
            body_flops: 0.0,
            tail_flops: 0.0,
            ..wl
        };
        let c = estimate_latency(&lm2, &zero, 8).unwrap();
        assert!((c.total_s - c.uplink_s - c.downlink_s).abs() < 1e-18);
    }
}
