use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry, radio and run-length parameters of a deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeploymentConfig {
    pub n_subnetworks: usize,
    /// SA pairs per sub-network (M).
    pub sa_pairs_per_sn: usize,
    /// Factory area width and height in meters.
    pub area: [f64; 2],
    pub sn_radius: f64,
    pub speed: f64,
    pub min_distance: f64,
    pub n_subbands: usize,
    /// Number of co-channel sub-networks interfering with the victim.
    pub interferer_set_size: usize,
    pub carrier_freq_hz: f64,
    pub tx_power_w: f64,
    pub cycle_duration_s: f64,
    /// Uplink slots per TX cycle. Zero means one slot per SA pair.
    pub n_slots: usize,
    pub rng_seed: u64,
}

impl Default for DeploymentConfig {
    fn default() -> Self {
        Self {
            n_subnetworks: 16,
            sa_pairs_per_sn: 4,
            area: [25.0, 25.0],
            sn_radius: 2.0,
            speed: 2.0,
            min_distance: 3.0,
            n_subbands: 4,
            interferer_set_size: 4,
            carrier_freq_hz: 6e9,
            tx_power_w: 1.0,
            cycle_duration_s: 1e-3,
            n_slots: 0,
            rng_seed: 1,
        }
    }
}

impl DeploymentConfig {
    pub fn slots(&self) -> usize {
        if self.n_slots == 0 {
            self.sa_pairs_per_sn
        } else {
            self.n_slots
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_subnetworks == 0 {
            return bad("n_subnetworks must be at least 1");
        }
        if self.sa_pairs_per_sn == 0 {
            return bad("sa_pairs_per_sn must be at least 1");
        }
        if self.n_subbands == 0 {
            return bad("n_subbands must be at least 1");
        }
        if self.interferer_set_size + 1 > self.n_subnetworks {
            return bad("interferer_set_size must not exceed n_subnetworks - 1");
        }
        if !(self.sn_radius > 0.0) {
            return bad("sn_radius must be positive");
        }
        if !(self.area[0] > 0.0 && self.area[1] > 0.0) {
            return bad("area sides must be positive");
        }
        if self.speed < 0.0 || self.min_distance < 0.0 {
            return bad("speed and min_distance must be non-negative");
        }
        if !(self.carrier_freq_hz > 0.0 && self.tx_power_w > 0.0 && self.cycle_duration_s > 0.0) {
            return bad("carrier frequency, transmit power and cycle duration must be positive");
        }
        Ok(())
    }
}

/// Large- and small-scale channel parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub doppler_hz: f64,
    pub rician_k_db: f64,
    pub shadow_std_los_db: f64,
    pub shadow_std_nlos_db: f64,
    pub decorrelation_distance_m: f64,
    /// Clutter density and size of the InF-DL LOS probability model.
    pub clutter_density: f64,
    pub clutter_size_m: f64,
    /// Logistic slope mapping the LOS field to the soft LOS weight.
    pub los_sharpness: f64,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    pub fading: bool,
    pub shadowing: bool,
    /// Estimation noise model applied to the true interference.
    pub estimation_noise: EstimationNoise,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            doppler_hz: 80.0,
            rician_k_db: 10.0,
            shadow_std_los_db: 4.0,
            shadow_std_nlos_db: 7.2,
            decorrelation_distance_m: 10.0,
            clutter_density: 0.4,
            clutter_size_m: 2.0,
            los_sharpness: 4.0,
            bandwidth_hz: 100e6,
            noise_figure_db: 5.0,
            fading: true,
            shadowing: true,
            estimation_noise: EstimationNoise::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EstimationNoise {
    /// Standard deviation as a fraction of the mean true interference over
    /// the first `reference_cycles` cycles (the training span).
    FractionOfMean {
        fraction: f64,
        reference_cycles: usize,
    },
    /// Fixed standard deviation in watts.
    Absolute { std_w: f64 },
    /// Standard deviation proportional to the instantaneous true power.
    Relative { fraction: f64 },
}

impl Default for EstimationNoise {
    fn default() -> Self {
        EstimationNoise::Relative { fraction: 0.1 }
    }
}

/// Slot-level activity model of the interfering SA pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrafficModel {
    /// Round-robin schedule, each scheduled SA transmits with probability `eta`.
    BernoulliIsochronous { eta: f64 },
    /// The first `reserved_slots` slots carry deterministic pull traffic of
    /// SA pairs `0..reserved_slots`; the remaining slots are contended by the
    /// other SA pairs with Poisson(`lambda`) arrivals per cycle.
    PushPull {
        eta: f64,
        lambda: f64,
        reserved_slots: usize,
    },
}

impl Default for TrafficModel {
    fn default() -> Self {
        TrafficModel::BernoulliIsochronous { eta: 0.9 }
    }
}

impl TrafficModel {
    pub fn eta(&self) -> f64 {
        match *self {
            TrafficModel::BernoulliIsochronous { eta } => eta,
            TrafficModel::PushPull { eta, .. } => eta,
        }
    }

    pub fn validate(&self, n_slots: usize, n_sa: usize) -> Result<()> {
        let eta = self.eta();
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::Config(format!("eta must lie in (0, 1], got {eta}")));
        }
        match *self {
            TrafficModel::BernoulliIsochronous { .. } => {
                if n_slots != n_sa {
                    return Err(Error::Config(
                        "isochronous traffic needs one slot per SA pair".into(),
                    ));
                }
            }
            TrafficModel::PushPull {
                lambda,
                reserved_slots,
                ..
            } => {
                if lambda < 0.0 {
                    return Err(Error::Config("lambda must be non-negative".into()));
                }
                if reserved_slots > n_slots || reserved_slots > n_sa {
                    return Err(Error::Config(
                        "reserved slots exceed the slot count or SA pairs".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MobilityModel {
    /// Random direction with boundary reflection and collision avoidance.
    #[default]
    Rdmm,
    /// Movement along a grid of factory alleys.
    Alley,
}

/// Everything needed to reproduce one simulated trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub deployment: DeploymentConfig,
    pub channel: ChannelConfig,
    pub traffic: TrafficModel,
    pub mobility: MobilityModel,
    /// Number of TX cycles to simulate.
    pub cycles: usize,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.deployment.validate()?;
        self.traffic
            .validate(self.deployment.slots(), self.deployment.sa_pairs_per_sn)?;
        if self.cycles == 0 {
            return Err(Error::Config("cycles must be at least 1".into()));
        }
        let ch = &self.channel;
        if !(ch.bandwidth_hz > 0.0)
            || !(ch.doppler_hz >= 0.0)
            || !(ch.decorrelation_distance_m > 0.0)
        {
            return Err(Error::Config(
                "bandwidth and decorrelation distance must be positive, doppler non-negative"
                    .into(),
            ));
        }
        let noise_ok = match ch.estimation_noise {
            EstimationNoise::FractionOfMean { fraction, .. } => fraction >= 0.0,
            EstimationNoise::Relative { fraction } => fraction >= 0.0,
            EstimationNoise::Absolute { std_w } => std_w >= 0.0,
        };
        if !noise_ok {
            return Err(Error::Config(
                "estimation noise must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        Ok(cfg)
    }
}
