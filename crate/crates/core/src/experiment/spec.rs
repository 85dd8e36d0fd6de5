use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::str::FromStr;

use crate::baselines::MovingAverage;
use crate::error::{Error, Result};
use crate::qpt::{QptConfig, TrainConfig};
use crate::ra::RaConfig;
use crate::scenario::{ScenarioConfig, TrafficModel};
use crate::split::LatencyModel;
use crate::windowing::{SplitSizes, DEFAULT_MAX_LAG, DEFAULT_PHI_C};

/// Compared predictors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Genie,
    MovingAverage,
    Wiener,
    Iqpt,
    IqptSplit,
    EvtIqpt,
    CevtIqpt,
    CevtIqptSplit,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Genie,
        Variant::MovingAverage,
        Variant::Wiener,
        Variant::Iqpt,
        Variant::IqptSplit,
        Variant::EvtIqpt,
        Variant::CevtIqpt,
        Variant::CevtIqptSplit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Genie => "genie",
            Variant::MovingAverage => "moving-average",
            Variant::Wiener => "wiener",
            Variant::Iqpt => "iqpt",
            Variant::IqptSplit => "iqpt-split",
            Variant::EvtIqpt => "evt-iqpt",
            Variant::CevtIqpt => "cevt-iqpt",
            Variant::CevtIqptSplit => "cevt-iqpt-split",
        }
    }

    /// Needs a trained quantile model.
    pub fn needs_model(self) -> bool {
        !matches!(
            self,
            Variant::Genie | Variant::MovingAverage | Variant::Wiener
        )
    }

    pub fn is_split(self) -> bool {
        matches!(self, Variant::IqptSplit | Variant::CevtIqptSplit)
    }

    /// Needs the fitted tail (and conformal record).
    pub fn needs_calibration(self) -> bool {
        matches!(
            self,
            Variant::EvtIqpt | Variant::CevtIqpt | Variant::CevtIqptSplit
        )
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown predictor variant {s:?}")))
    }
}

/// Quantile levels: model miscoverage α, conformal miscoverage β and the
/// tail level ς (the GPD is read at `1 - ς`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantileLevels {
    pub alpha: f64,
    pub beta: f64,
    pub varsigma: f64,
}

impl Default for QuantileLevels {
    fn default() -> Self {
        QuantileLevels {
            alpha: 0.05,
            beta: 0.05,
            varsigma: 0.5,
        }
    }
}

impl QuantileLevels {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x > 0.0 && x <= 1.0;
        if !(ok(self.alpha) && ok(self.beta) && ok(self.varsigma)) {
            return Err(Error::Config(
                "alpha, beta and varsigma must lie in (0, 1]".into(),
            ));
        }
        if self.alpha >= 1.0 || self.beta >= 1.0 {
            return Err(Error::Config("alpha and beta must be below 1".into()));
        }
        Ok(())
    }
}

/// Architecture of the quantile transformer; SA count and window follow
/// from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        let c = QptConfig::default();
        ModelSpec {
            d_model: c.d_model,
            n_heads: c.n_heads,
            n_layers: c.n_layers,
            hidden: c.hidden,
            dropout: c.dropout,
        }
    }
}

impl ModelSpec {
    pub fn config(&self, n_sa: usize, window: usize, alpha: f64) -> QptConfig {
        QptConfig {
            n_sa,
            window,
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            hidden: self.hidden,
            dropout: self.dropout,
            alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSpec {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
        }
    }
}

impl TrainSpec {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSpec {
    /// Correlation threshold of the stationary interval.
    pub phi_c: f64,
    pub max_lag: usize,
    /// Fixed window instead of the estimated stationary interval.
    pub window: Option<usize>,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            phi_c: DEFAULT_PHI_C,
            max_lag: DEFAULT_MAX_LAG,
            window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSpec {
    pub ma_weights: Vec<f64>,
    /// Sliding history of the Wiener autocorrelation estimate, in cycles.
    pub wiener_history: usize,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        BaselineSpec {
            ma_weights: MovingAverage::default().weights,
            wiener_history: 200,
        }
    }
}

/// Everything that determines a run, apart from the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub levels: QuantileLevels,
    pub scenario: ScenarioConfig,
    pub split: SplitSizes,
    pub windowing: WindowSpec,
    pub model: ModelSpec,
    pub train: TrainSpec,
    pub baselines: BaselineSpec,
    pub ra: RaConfig,
    pub latency: LatencyModel,
    /// Minimum exceedances per SA pair for a tail fit.
    pub min_exceedances: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Preset::Desk.spec()
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::Config("no predictor variants selected".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds given".into()));
        }
        self.levels.validate()?;
        let mut scen = self.scenario.clone();
        if scen.cycles == 0 {
            scen.cycles = 1;
        }
        scen.validate()?;
        if self.split.train == 0 || self.split.cal == 0 || self.split.test == 0 {
            return Err(Error::Config(
                "train, cal and test blocks must be non-empty".into(),
            ));
        }
        if !(self.windowing.phi_c > -1.0 && self.windowing.phi_c <= 1.0)
            || self.windowing.max_lag == 0
        {
            return Err(Error::Config(
                "phi_c must lie in (-1, 1] and max_lag be positive".into(),
            ));
        }
        if self.windowing.window == Some(0) {
            return Err(Error::Config("window must be at least 1".into()));
        }
        let n_sa = self.scenario.deployment.sa_pairs_per_sn;
        self.model.config(n_sa, 1, self.levels.alpha).validate()?;
        self.train.config(0).validate()?;
        MovingAverage {
            weights: self.baselines.ma_weights.clone(),
        }
        .validate()?;
        if self.baselines.wiener_history < 2 {
            return Err(Error::Config("wiener_history must be at least 2".into()));
        }
        self.ra.validate()?;
        self.latency.validate()?;
        Ok(())
    }

    /// Number of cycles to simulate: every block plus room for the longest
    /// admissible window.
    pub fn cycles(&self) -> usize {
        let extra = self.windowing.window.unwrap_or(self.windowing.max_lag);
        self.split.total() + extra
    }

    /// Same spec with the push-pull traffic preset (six SA pairs sharing
    /// four slots, two of them reserved for pull traffic).
    pub fn with_push_pull(mut self) -> Self {
        self.scenario.deployment.sa_pairs_per_sn = 6;
        self.scenario.deployment.n_slots = 4;
        self.scenario.traffic = TrafficModel::PushPull {
            eta: 0.9,
            lambda: 5.0,
            reserved_slots: 2,
        };
        self
    }

    pub fn with_sa_pairs(mut self, m: usize) -> Self {
        self.scenario.deployment.sa_pairs_per_sn = m;
        if matches!(
            self.scenario.traffic,
            TrafficModel::BernoulliIsochronous { .. }
        ) {
            self.scenario.deployment.n_slots = 0;
        }
        self
    }
}

/// Short content hash of the resolved specification.
pub fn config_hash(spec: &ExperimentSpec) -> Result<String> {
    let json = serde_json::to_vec(spec)?;
    Ok(hex::encode(&Sha256::digest(&json)[..8]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Seconds-scale smoke configuration.
    Tiny,
    /// 16 sub-networks, M = 4, 10 000 instances, d = H = 64, 60 epochs.
    Desk,
    /// Full-size model and 300 epochs.
    Paper,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Preset::Tiny),
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::Config(format!("unknown preset {s:?}"))),
        }
    }
}

impl Preset {
    pub fn spec(self) -> ExperimentSpec {
        let mut s = ExperimentSpec {
            name: "desk".into(),
            variants: Variant::ALL.to_vec(),
            seeds: vec![1],
            levels: QuantileLevels::default(),
            scenario: ScenarioConfig::default(),
            split: SplitSizes::default(),
            windowing: WindowSpec::default(),
            model: ModelSpec::default(),
            train: TrainSpec::default(),
            baselines: BaselineSpec::default(),
            ra: RaConfig::default(),
            latency: LatencyModel::default(),
            min_exceedances: crate::calibration::MIN_EXCEEDANCES,
        };
        match self {
            Preset::Desk => {}
            Preset::Paper => {
                s.name = "paper".into();
                s.model = ModelSpec {
                    d_model: 256,
                    n_heads: 8,
                    n_layers: 2,
                    hidden: 256,
                    dropout: 0.1,
                };
                s.train.epochs = 300;
            }
            Preset::Tiny => {
                s.name = "tiny".into();
                s.scenario.deployment.n_subnetworks = 6;
                s.scenario.deployment.sa_pairs_per_sn = 3;
                s.split = SplitSizes {
                    train: 1200,
                    cal: 400,
                    test: 400,
                };
                s.windowing.max_lag = 16;
                s.model = ModelSpec {
                    d_model: 8,
                    n_heads: 2,
                    n_layers: 1,
                    hidden: 8,
                    dropout: 0.1,
                };
                s.train.epochs = 30;
                s.train.lr = 3e-3;
                s.train.batch_size = 64;
                s.min_exceedances = 10;
            }
        }
        s
    }
}
