//! Shared fixtures for the benchmarks.

use intail_core::qpt::QptConfig;

/// Desk-sized model configuration for `m` SA pairs.
pub fn desk_config(m: usize, window: usize) -> QptConfig {
    QptConfig {
        n_sa: m,
        window,
        d_model: 64,
        n_heads: 8,
        n_layers: 2,
        hidden: 64,
        dropout: 0.1,
        alpha: 0.05,
    }
}

/// Deterministic pseudo-random values in [0, 1).
pub fn signal(n: usize, salt: u64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let x = (i as u64 ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15)) as f64;
            (x.sin() * 43_758.545_3).fract().abs()
        })
        .collect()
}

/// Draws from GPD(`shape`, `scale`) by inversion of [`signal`].
pub fn gpd_samples(n: usize, shape: f64, scale: f64) -> Vec<f64> {
    signal(n, 7)
        .into_iter()
        .map(|u| scale / shape * ((1.0 - u).powf(-shape) - 1.0))
        .collect()
}
