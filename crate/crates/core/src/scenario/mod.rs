//! Interference trace generation for a victim sub-network surrounded by
//! mobile co-channel sub-networks.
//!
//! Sub-network 0 is the victim. Its controller receives uplink traffic
//! from its own SA pairs; every slot it also receives interference from
//! the SA pairs that the co-channel sub-networks schedule in that slot.

pub mod channel;
pub mod config;
pub mod io;
pub mod mobility;
pub mod traffic;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use channel::{ChannelState, CorrelatedField, LargeScale, LinkFading};
pub use config::{
    ChannelConfig, DeploymentConfig, EstimationNoise, MobilityModel, ScenarioConfig, TrafficModel,
};
pub use mobility::{deploy, deploy_on_alleys, MobilityState};
pub use traffic::{sample_cycle, sample_traffic, CycleSchedule};

use crate::error::Result;

/// Floor applied to estimated powers so that dB conversion is total.
pub const POWER_FLOOR_W: f64 = 1e-20;

/// Independent random streams of one scenario run.
#[derive(Clone, Copy)]
enum Stream {
    Geometry = 1,
    Fields = 2,
    Fading = 3,
    Traffic = 4,
    Mobility = 5,
    Noise = 6,
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn rng_for(seed: u64, s: Stream) -> ChaCha8Rng {
    stream_rng(seed, s as u64)
}

/// Per-SA-pair interference of the victim sub-network, row-major `[M × T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferenceTrace {
    pub n_sa: usize,
    pub n_cycles: usize,
    pub true_power_w: Vec<f64>,
    pub estimated_power_w: Vec<f64>,
    /// Slot in which each SA pair measured, `[M × T]`.
    pub slot: Vec<usize>,
    pub signal_power_w: Vec<f64>,
    pub noise_power_w: f64,
    pub estimation_noise_std_w: f64,
}

impl InterferenceTrace {
    pub fn true_power(&self, sa: usize, t: usize) -> f64 {
        self.true_power_w[sa * self.n_cycles + t]
    }

    pub fn estimated_power(&self, sa: usize, t: usize) -> f64 {
        self.estimated_power_w[sa * self.n_cycles + t]
    }

    /// Estimated interference series of one SA pair in dBm.
    pub fn estimated_dbm(&self, sa: usize) -> Vec<f64> {
        self.estimated_power_w[sa * self.n_cycles..(sa + 1) * self.n_cycles]
            .iter()
            .map(|&w| watts_to_dbm(w))
            .collect()
    }

    pub fn true_dbm(&self, sa: usize) -> Vec<f64> {
        self.true_power_w[sa * self.n_cycles..(sa + 1) * self.n_cycles]
            .iter()
            .map(|&w| watts_to_dbm(w.max(POWER_FLOOR_W)))
            .collect()
    }

    /// Genie SINR `S / (I + N)` of SA pair `sa` at cycle `t`.
    pub fn sinr(&self, sa: usize, t: usize) -> f64 {
        compute_sinr(
            self.signal_power_w[sa],
            self.true_power(sa, t),
            self.noise_power_w,
        )
    }

    /// SINR obtained when the interference is replaced by a prediction.
    pub fn predicted_sinr(&self, sa: usize, predicted_interference_w: f64) -> f64 {
        compute_sinr(
            self.signal_power_w[sa],
            predicted_interference_w,
            self.noise_power_w,
        )
    }
}

pub fn compute_sinr(signal_w: f64, interference_w: f64, noise_w: f64) -> f64 {
    signal_w / (interference_w + noise_w)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Simulate `config.cycles` TX cycles.
pub fn simulate_trace(config: &ScenarioConfig) -> Result<InterferenceTrace> {
    config.validate()?;
    let dep = &config.deployment;
    let ch = &config.channel;
    let seed = dep.rng_seed;
    let n_sa = dep.sa_pairs_per_sn;
    let n_slots = dep.slots();
    let n_cycles = config.cycles;

    let mut geo = rng_for(seed, Stream::Geometry);
    let mut mobility = match config.mobility {
        MobilityModel::Rdmm => deploy(dep, &mut geo)?,
        MobilityModel::Alley => deploy_on_alleys(dep, &mut geo)?,
    };
    let interferers: Vec<usize> = {
        let mut idx: Vec<usize> = sample(&mut geo, dep.n_subnetworks - 1, dep.interferer_set_size)
            .into_iter()
            .map(|i| i + 1)
            .collect();
        idx.sort_unstable();
        idx
    };
    let offsets: Vec<usize> = interferers
        .iter()
        .map(|_| geo.random_range(0..n_sa))
        .collect();

    let fields = LargeScale::new(&mut rng_for(seed, Stream::Fields), ch);
    let mut fading_rng = rng_for(seed, Stream::Fading);
    let mut links: Vec<LinkFading> = (0..interferers.len() * n_sa)
        .map(|_| LinkFading::new(&mut fading_rng))
        .collect();
    let rho = channel::fading_correlation(ch.doppler_hz, dep.cycle_duration_s);
    let mut traffic_rng = rng_for(seed, Stream::Traffic);
    let mut mobility_rng = rng_for(seed, Stream::Mobility);

    let signal_power_w: Vec<f64> = mobility.sa_offsets[0]
        .iter()
        .map(|o| {
            let d = (o[0] * o[0] + o[1] * o[1]).sqrt();
            dep.tx_power_w
                * channel::db_to_linear(-channel::path_loss_los_db(d, dep.carrier_freq_hz))
        })
        .collect();
    let noise_power_w = channel::noise_power_w(ch.bandwidth_hz, dep.n_subbands, ch.noise_figure_db);

    let mut true_power_w = vec![0.0; n_sa * n_cycles];
    let mut slot = vec![0usize; n_sa * n_cycles];
    for t in 0..n_cycles {
        let victim = sample_cycle(&config.traffic, n_sa, n_slots, 0, &mut traffic_rng);
        let schedules: Vec<CycleSchedule> = offsets
            .iter()
            .map(|&off| sample_cycle(&config.traffic, n_sa, n_slots, off, &mut traffic_rng))
            .collect();
        let rx = mobility.positions[0];
        for sa in 0..n_sa {
            let s = traffic::measurement_slot(&config.traffic, &victim, sa, n_slots);
            slot[sa * n_cycles + t] = s;
            let mut acc = 0.0;
            for (k, (&sn, sched)) in interferers.iter().zip(&schedules).enumerate() {
                if let Some(a) = sched.transmitter(s) {
                    let tx = mobility.sa_position(sn, a);
                    let st = channel::link_state(
                        ch,
                        &fields,
                        &links[k * n_sa + a],
                        tx,
                        rx,
                        dep.carrier_freq_hz,
                    );
                    acc += dep.tx_power_w * st.gain();
                }
            }
            true_power_w[sa * n_cycles + t] = acc;
        }
        for l in links.iter_mut() {
            l.advance(rho, &mut fading_rng);
        }
        mobility.step(config.mobility, dep.cycle_duration_s, &mut mobility_rng);
    }

    let estimation_noise_std_w = match ch.estimation_noise {
        EstimationNoise::Absolute { std_w } => std_w,
        EstimationNoise::Relative { .. } => 0.0,
        EstimationNoise::FractionOfMean {
            fraction,
            reference_cycles,
        } => {
            let span = reference_cycles.clamp(1, n_cycles);
            let mut sum = 0.0;
            for sa in 0..n_sa {
                sum += true_power_w[sa * n_cycles..sa * n_cycles + span]
                    .iter()
                    .sum::<f64>();
            }
            fraction * sum / (span * n_sa) as f64
        }
    };
    let mut noise_rng = rng_for(seed, Stream::Noise);
    let estimated_power_w = true_power_w
        .iter()
        .map(|&p| {
            let z: f64 = StandardNormal.sample(&mut noise_rng);
            let std = match ch.estimation_noise {
                EstimationNoise::Relative { fraction } => fraction * p,
                _ => estimation_noise_std_w,
            };
            (p + std * z).max(noise_power_w)
        })
        .collect();

    Ok(InterferenceTrace {
        n_sa,
        n_cycles,
        true_power_w,
        estimated_power_w,
        slot,
        signal_power_w,
        noise_power_w,
        estimation_noise_std_w,
    })
}
