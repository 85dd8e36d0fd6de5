//! Composite LOS/NLOS interference channel: InF-DL path loss, spatially
//! consistent shadowing and soft LOS state, and temporally correlated
//! Rician/Rayleigh fading.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use super::config::ChannelConfig;
use super::mobility::Point;
use crate::special::{bessel_j0, normal_quantile};

/// Distances are clamped to the validity floor of the path-loss formulas.
pub const MIN_DISTANCE_M: f64 = 1.0;

/// InF-DL LOS path loss in dB.
pub fn path_loss_los_db(d3d: f64, freq_hz: f64) -> f64 {
    let d = d3d.max(MIN_DISTANCE_M);
    31.84 + 21.5 * d.log10() + 19.0 * (freq_hz / 1e9).log10()
}

/// InF-DL NLOS path loss in dB (never below the LOS value).
pub fn path_loss_nlos_db(d3d: f64, freq_hz: f64) -> f64 {
    let d = d3d.max(MIN_DISTANCE_M);
    let nlos = 18.6 + 35.7 * d.log10() + 20.0 * (freq_hz / 1e9).log10();
    nlos.max(path_loss_los_db(d, freq_hz))
}

/// InF LOS probability `exp(-d / k)` with `k = -d_clutter / ln(1 - r)`.
pub fn los_probability(d2d: f64, clutter_density: f64, clutter_size_m: f64) -> f64 {
    if clutter_density <= 0.0 {
        return 1.0;
    }
    let k = -clutter_size_m / (1.0 - clutter_density).ln();
    (-d2d / k).exp()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Thermal noise power in watts for one sub-band.
pub fn noise_power_w(bandwidth_hz: f64, n_subbands: usize, noise_figure_db: f64) -> f64 {
    let dbm = -174.0 + linear_to_db(bandwidth_hz / n_subbands as f64) + noise_figure_db;
    db_to_linear(dbm - 30.0)
}

/// Radial wavenumber cutoff (times decorrelation distance) of the field
/// spectrum. Band-limiting keeps realizations smooth at sub-meter scale.
const FIELD_CUTOFF: f64 = 3.0;
const FIELD_WAVES: usize = 64;

/// Zero-mean, unit-variance Gaussian random field on the plane, realized
/// as a sum of sinusoids whose wave vectors follow the spectrum of the
/// exponential (Gudmundson) correlation `exp(-r / d_corr)`, band-limited
/// at `FIELD_CUTOFF / d_corr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedField {
    waves: Vec<[f64; 3]>,
}

impl CorrelatedField {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, decorrelation_m: f64) -> Self {
        // Radial CDF of the 2D exponential-correlation spectrum:
        // F(k) = 1 - 1/sqrt(1 + (k d)^2).
        let f_max = 1.0 - 1.0 / (1.0 + FIELD_CUTOFF * FIELD_CUTOFF).sqrt();
        let waves = (0..FIELD_WAVES)
            .map(|_| {
                let u = rng.random::<f64>() * f_max;
                let kd = ((1.0 / (1.0 - u)).powi(2) - 1.0).sqrt();
                let k = kd / decorrelation_m;
                let dir = rng.random::<f64>() * TAU;
                let phase = rng.random::<f64>() * TAU;
                [k * dir.cos(), k * dir.sin(), phase]
            })
            .collect();
        Self { waves }
    }

    pub fn value(&self, p: Point) -> f64 {
        let s: f64 = self
            .waves
            .iter()
            .map(|w| (w[0] * p[0] + w[1] * p[1] + w[2]).cos())
            .sum();
        s * (2.0 / self.waves.len() as f64).sqrt()
    }
}

/// Large-scale fields shared by every link of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LargeScale {
    pub shadow_los: CorrelatedField,
    pub shadow_nlos: CorrelatedField,
    pub los_state: CorrelatedField,
}

impl LargeScale {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, cfg: &ChannelConfig) -> Self {
        let d = cfg.decorrelation_distance_m;
        Self {
            shadow_los: CorrelatedField::new(rng, d),
            shadow_nlos: CorrelatedField::new(rng, d),
            los_state: CorrelatedField::new(rng, d),
        }
    }
}

/// Complex Gaussian AR(1) process with `CN(0, 1)` marginals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ar1Fading {
    pub re: f64,
    pub im: f64,
}

impl Ar1Fading {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Self {
            re: re * s,
            im: im * s,
        }
    }

    pub fn advance<R: Rng + ?Sized>(&mut self, rho: f64, rng: &mut R) {
        let innov = (0.5 * (1.0 - rho * rho)).sqrt();
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        self.re = rho * self.re + innov * a;
        self.im = rho * self.im + innov * b;
    }

    pub fn power(&self) -> f64 {
        self.re * self.re + self.im * self.im
    }
}

/// Per-link small-scale fading state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkFading {
    pub los_scatter: Ar1Fading,
    pub nlos: Ar1Fading,
    pub los_phase: f64,
}

impl LinkFading {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            los_scatter: Ar1Fading::new(rng),
            nlos: Ar1Fading::new(rng),
            los_phase: rng.random::<f64>() * TAU,
        }
    }

    pub fn advance<R: Rng + ?Sized>(&mut self, rho: f64, rng: &mut R) {
        self.los_scatter.advance(rho, rng);
        self.nlos.advance(rho, rng);
    }

    /// `|h_LOS|²` for Rician factor `k` (linear).
    pub fn los_power(&self, k: f64) -> f64 {
        let spec = (k / (k + 1.0)).sqrt();
        let diff = (1.0 / (k + 1.0)).sqrt();
        let re = spec * self.los_phase.cos() + diff * self.los_scatter.re;
        let im = spec * self.los_phase.sin() + diff * self.los_scatter.im;
        re * re + im * im
    }

    pub fn nlos_power(&self) -> f64 {
        self.nlos.power()
    }
}

/// Clarke temporal correlation `J0(2π f_d T)` of the complex fading.
pub fn fading_correlation(doppler_hz: f64, cycle_s: f64) -> f64 {
    bessel_j0(TAU * doppler_hz * cycle_s)
}

/// Realized components of one link at one cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelState {
    /// Soft LOS weight ψ ∈ [0, 1].
    pub psi: f64,
    /// Linear path gains (inverse path loss).
    pub l_los: f64,
    pub l_nlos: f64,
    /// Linear shadowing factors.
    pub zeta_los: f64,
    pub zeta_nlos: f64,
    pub h_los_power: f64,
    pub h_nlos_power: f64,
}

impl ChannelState {
    /// `ψ|H_LOS|² + sqrt(1 - ψ²)|H_NLOS|²` with power-domain
    /// `|H_X|² = |h_X|²·l_X·ζ_X`.
    pub fn gain(&self) -> f64 {
        let los = self.h_los_power * self.l_los * self.zeta_los;
        let nlos = self.h_nlos_power * self.l_nlos * self.zeta_nlos;
        self.psi * los + (1.0 - self.psi * self.psi).max(0.0).sqrt() * nlos
    }
}

/// Evaluate the large-scale state of a link between `tx` and `rx`.
pub fn link_state(
    cfg: &ChannelConfig,
    fields: &LargeScale,
    fading: &LinkFading,
    tx: Point,
    rx: Point,
    freq_hz: f64,
) -> ChannelState {
    let d = super::mobility::distance(tx, rx);
    let mid = [0.5 * (tx[0] + rx[0]), 0.5 * (tx[1] + rx[1])];
    let (zeta_los, zeta_nlos) = if cfg.shadowing {
        (
            db_to_linear(cfg.shadow_std_los_db * fields.shadow_los.value(mid)),
            db_to_linear(cfg.shadow_std_nlos_db * fields.shadow_nlos.value(mid)),
        )
    } else {
        (1.0, 1.0)
    };
    let p_los = los_probability(d, cfg.clutter_density, cfg.clutter_size_m).clamp(1e-9, 1.0 - 1e-9);
    // ψ > 1/2 exactly where the field exceeds its (1 - P_LOS) quantile.
    let threshold = normal_quantile(1.0 - p_los);
    let psi = 1.0 / (1.0 + (-cfg.los_sharpness * (fields.los_state.value(mid) - threshold)).exp());
    let (h_los_power, h_nlos_power) = if cfg.fading {
        (
            fading.los_power(db_to_linear(cfg.rician_k_db)),
            fading.nlos_power(),
        )
    } else {
        (1.0, 1.0)
    };
    ChannelState {
        psi,
        l_los: db_to_linear(-path_loss_los_db(d, freq_hz)),
        l_nlos: db_to_linear(-path_loss_nlos_db(d, freq_hz)),
        zeta_los,
        zeta_nlos,
        h_los_power,
        h_nlos_power,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(psi: f64) -> ChannelState {
        ChannelState {
            psi,
            l_los: 1e-6,
            l_nlos: 1e-8,
            zeta_los: 1.3,
            zeta_nlos: 0.7,
            h_los_power: 1.1,
            h_nlos_power: 0.4,
        }
    }

    #[test]
    fn pure_los_and_nlos_limits() {
        let s = state(1.0);
        assert!((s.gain() - 1.1 * 1e-6 * 1.3).abs() < 1e-18);
        let s = state(0.0);
        assert!((s.gain() - 0.4 * 1e-8 * 0.7).abs() < 1e-20);
    }

    #[test]
    fn deterministic_gain_matches_path_loss_at_ten_meters() {
        // 31.84 + 21.5·1 + 19·log10(6) = 68.1249 dB
        let want_db = 31.84 + 21.5 + 19.0 * 6f64.log10();
        assert!((path_loss_los_db(10.0, 6e9) - want_db).abs() < 1e-12);
        let cfg = ChannelConfig {
            fading: false,
            shadowing: false,
            clutter_density: 0.0,
            los_sharpness: 1e6,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fields = LargeScale::new(&mut rng, &cfg);
        let fading = LinkFading::new(&mut rng);
        let st = link_state(&cfg, &fields, &fading, [0.0, 0.0], [10.0, 0.0], 6e9);
        assert!((st.psi - 1.0).abs() < 1e-12);
        assert!((linear_to_db(st.gain()) + want_db).abs() < 1e-9);
    }

    #[test]
    fn nlos_never_below_los() {
        for d in [0.5, 1.0, 2.0, 5.0, 50.0] {
            assert!(path_loss_nlos_db(d, 6e9) >= path_loss_los_db(d, 6e9));
        }
    }

    #[test]
    fn field_is_unit_variance_and_smooth() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut sq = 0.0;
        let mut diff_sq = 0.0;
        let trials = 400;
        let n = 200;
        for _ in 0..trials {
            let f = CorrelatedField::new(&mut rng, 10.0);
            for _ in 0..n {
                let p = [rng.random::<f64>() * 100.0, rng.random::<f64>() * 100.0];
                let dir = rng.random::<f64>() * TAU;
                // Separation of 1% of the decorrelation distance.
                let q = [p[0] + 0.1 * dir.cos(), p[1] + 0.1 * dir.sin()];
                let a = f.value(p);
                sq += a * a;
                diff_sq += (a - f.value(q)).powi(2);
            }
        }
        let var = sq / (trials * n) as f64;
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
        // Worst case is the 7.2 dB NLOS field.
        let rms_db = 7.2 * (diff_sq / (trials * n) as f64).sqrt();
        assert!(rms_db < 0.1, "rms shadowing difference {rms_db} dB");
    }

    #[test]
    fn field_correlation_decays_with_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let corr_at = |r: f64, rng: &mut ChaCha8Rng| {
            let mut acc = 0.0;
            let n = 20_000;
            for _ in 0..n {
                let f = CorrelatedField::new(rng, 10.0);
                let p = [rng.random::<f64>() * 50.0, rng.random::<f64>() * 50.0];
                acc += f.value(p) * f.value([p[0] + r, p[1]]);
            }
            acc / n as f64
        };
        let c1 = corr_at(1.0, &mut rng);
        let c10 = corr_at(10.0, &mut rng);
        let c40 = corr_at(40.0, &mut rng);
        assert!(c1 > 0.85 && c1 < 1.05, "{c1}");
        assert!(c10 > 0.2 && c10 < 0.6, "{c10}");
        assert!(c40.abs() < 0.15, "{c40}");
    }

    #[test]
    fn rayleigh_power_has_unit_mean_and_configured_correlation() {
        let rho = fading_correlation(80.0, 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut h = Ar1Fading::new(&mut rng);
        let n = 100_000;
        let mut re = Vec::with_capacity(n);
        let mut pw = Vec::with_capacity(n);
        for _ in 0..n {
            h.advance(rho, &mut rng);
            re.push(h.re);
            pw.push(h.power());
        }
        let lag1 = |x: &[f64]| {
            let m = x.iter().sum::<f64>() / x.len() as f64;
            let v: f64 = x.iter().map(|a| (a - m).powi(2)).sum();
            let c: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
            c / v
        };
        let mean = pw.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.05);
        // Complex amplitude follows J0; the power process follows J0².
        assert!((lag1(&re) - rho).abs() < 0.05);
        assert!((lag1(&pw) - rho * rho).abs() < 0.05);
    }
}
