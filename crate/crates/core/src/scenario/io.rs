//! Trace CSV and JSON sidecar.

use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{dbm_to_watts, watts_to_dbm, InterferenceTrace, ScenarioConfig, POWER_FLOOR_W};
use crate::error::{Error, Result};

pub const TRACE_HEADER: &str = "cycle,slot,sa_index,true_dBm,est_dBm,signal_dBm";

/// Resolved configuration written next to a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSidecar {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub n_sa: usize,
    pub n_cycles: usize,
    pub noise_power_w: f64,
    pub estimation_noise_std_w: f64,
}

pub fn write_trace_csv(trace: &InterferenceTrace, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{TRACE_HEADER}")?;
    for t in 0..trace.n_cycles {
        for sa in 0..trace.n_sa {
            let i = sa * trace.n_cycles + t;
            writeln!(
                w,
                "{},{},{},{},{},{}",
                t,
                trace.slot[i],
                sa,
                watts_to_dbm(trace.true_power_w[i].max(POWER_FLOOR_W)),
                watts_to_dbm(trace.estimated_power_w[i]),
                watts_to_dbm(trace.signal_power_w[sa]),
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_sidecar(
    trace: &InterferenceTrace,
    config: &ScenarioConfig,
    path: &Path,
) -> Result<()> {
    let side = TraceSidecar {
        config: config.clone(),
        seed: config.deployment.rng_seed,
        n_sa: trace.n_sa,
        n_cycles: trace.n_cycles,
        noise_power_w: trace.noise_power_w,
        estimation_noise_std_w: trace.estimation_noise_std_w,
    };
    std::fs::write(path, serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<TraceSidecar> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Load a trace written by [`write_trace_csv`]. Powers are restored from
/// their dBm values; true powers at the floor read back as the floor.
pub fn read_trace_csv(path: &Path, sidecar: &TraceSidecar) -> Result<InterferenceTrace> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if headers != TRACE_HEADER {
        return Err(Error::Shape {
            expected: TRACE_HEADER.into(),
            got: headers,
        });
    }
    let (m, t_len) = (sidecar.n_sa, sidecar.n_cycles);
    let mut trace = InterferenceTrace {
        n_sa: m,
        n_cycles: t_len,
        true_power_w: vec![0.0; m * t_len],
        estimated_power_w: vec![0.0; m * t_len],
        slot: vec![0; m * t_len],
        signal_power_w: vec![0.0; m],
        noise_power_w: sidecar.noise_power_w,
        estimation_noise_std_w: sidecar.estimation_noise_std_w,
    };
    let mut seen = 0usize;
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Shape {
                    expected: "numeric trace field".into(),
                    got: format!("{:?}", rec.get(i)),
                })
        };
        let t = field(0)? as usize;
        let sa = field(2)? as usize;
        if t >= t_len || sa >= m {
            return Err(Error::Shape {
                expected: format!("cycle < {t_len}, sa < {m}"),
                got: format!("cycle {t}, sa {sa}"),
            });
        }
        let i = sa * t_len + t;
        trace.slot[i] = field(1)? as usize;
        trace.true_power_w[i] = dbm_to_watts(field(3)?);
        trace.estimated_power_w[i] = dbm_to_watts(field(4)?);
        trace.signal_power_w[sa] = dbm_to_watts(field(5)?);
        seen += 1;
    }
    if seen != m * t_len {
        return Err(Error::Shape {
            expected: format!("{} rows", m * t_len),
            got: format!("{seen} rows"),
        });
    }
    Ok(trace)
}
