use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use super::spec::{config_hash, ExperimentSpec, Variant};
use crate::baselines::{MovingAverage, Wiener};
use crate::calibration::{
    collect_exceedances, conformity_scores, gpd_fit, CalibratedTail, CalibrationEntry,
    CalibrationReport,
};
use crate::error::{Error, Result};
use crate::qpt::{self, CheckpointExtra, LossCurve, QptModel};
use crate::ra::{
    coverage_stats, evaluate_ra, write_results_csv, CoverageStats, RaInstance, ResultRow,
};
use crate::scenario::io::{read_sidecar, read_trace_csv, write_sidecar, write_trace_csv};
use crate::scenario::{dbm_to_watts, simulate_trace, InterferenceTrace};
use crate::split::{estimate_latency, partition, FaultModel, Workloads};
use crate::windowing::{
    estimated_series_db, label_cycle, restructure, stationary_interval, Part, WindowedDataset,
};

pub const SPEC_FILE: &str = "spec.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const TRACE_SIDECAR: &str = "trace.json";
pub const DATASET_DIR: &str = "dataset";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const CHECKPOINT_SPLIT_DIR: &str = "checkpoint-split";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const CALIBRATION_SPLIT_FILE: &str = "calibration-split.json";
pub const LATENCY_FILE: &str = "latency.json";
pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::IncompleteRun(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn load_trace(dir: &Path) -> Result<InterferenceTrace> {
    let side = read_sidecar(&dir.join(TRACE_SIDECAR))?;
    read_trace_csv(&dir.join(TRACE_FILE), &side)
}

/// Simulates the scenario with the run seed and writes the trace.
pub fn simulate_stage(spec: &ExperimentSpec, seed: u64, dir: &Path) -> Result<InterferenceTrace> {
    spec.validate()?;
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join(SPEC_FILE), spec)?;
    let mut scen = spec.scenario.clone();
    scen.deployment.rng_seed = seed;
    scen.cycles = spec.cycles();
    let trace = simulate_trace(&scen)?;
    write_trace_csv(&trace, &dir.join(TRACE_FILE))?;
    write_sidecar(&trace, &scen, &dir.join(TRACE_SIDECAR))?;
    Ok(trace)
}

/// Estimates the stationary interval, windows the trace into
/// train/cal/test blocks and normalizes with training statistics.
pub fn prepare_stage(spec: &ExperimentSpec, dir: &Path) -> Result<WindowedDataset> {
    let trace = load_trace(dir)?;
    let mut series = estimated_series_db(&trace);
    let train_len = spec.split.train.min(trace.n_cycles);
    let head: Vec<Vec<f64>> = series.iter().map(|s| s[..train_len].to_vec()).collect();
    let report = stationary_interval(&head, spec.windowing.phi_c, spec.windowing.max_lag)?;
    let window = spec.windowing.window.unwrap_or(report.window);
    let needed = spec.split.total() + window;
    if trace.n_cycles < needed {
        return Err(Error::TraceTooShort {
            len: trace.n_cycles,
            needed,
        });
    }
    for s in &mut series {
        s.truncate(needed);
    }
    log::info!(
        "stationary interval {} (per SA {:?}), window {}",
        report.window,
        report.per_sa_window,
        window
    );
    let mut ds = restructure(&series, window)?;
    ds.set_split(spec.split)?;
    ds.normalize()?;
    ds.save(&dir.join(DATASET_DIR), Some(&report))?;
    Ok(ds)
}

fn load_dataset(dir: &Path) -> Result<WindowedDataset> {
    let (ds, _) = WindowedDataset::load(&dir.join(DATASET_DIR))?;
    if ds.normalizer.is_none() {
        return Err(Error::IncompleteRun("dataset is not normalized".into()));
    }
    Ok(ds)
}

/// Trains the quantile model, centrally or through the split protocol.
pub fn train_stage(spec: &ExperimentSpec, seed: u64, dir: &Path, split: bool) -> Result<LossCurve> {
    let ds = load_dataset(dir)?;
    let cfg = spec.model.config(ds.n_sa, ds.window, spec.levels.alpha);
    let tc = spec.train.config(seed);
    let mut model = QptModel::new(cfg, seed)?;
    let (x, y) = ds.block(Part::Train);
    let (curve, ckpt, loss_file) = if split {
        let mut sys = partition(&model, tc.adam(), FaultModel::default());
        let curve = sys.train(x, y, &tc)?;
        model = sys.merge();
        let wl = Workloads::measure(&model);
        let mut lm = spec.latency.clone();
        lm.n_clients = ds.n_sa;
        write_json(
            &dir.join(LATENCY_FILE),
            &estimate_latency(&lm, &wl, ds.window)?,
        )?;
        log::info!("split traffic: {:?}", sys.transport.stats);
        (curve, CHECKPOINT_SPLIT_DIR, "loss-split.csv")
    } else {
        (
            qpt::train(&mut model, x, y, &tc)?,
            CHECKPOINT_DIR,
            "loss.csv",
        )
    };
    model.save(
        &dir.join(ckpt),
        CheckpointExtra {
            normalizer: ds.normalizer.clone(),
            epochs: tc.epochs,
        },
    )?;
    curve.write_csv(&dir.join(loss_file))?;
    Ok(curve)
}

/// Fitted tail, conformal record and the per-SA report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationArtifact {
    pub model_id: String,
    pub report: CalibrationReport,
    pub tail: CalibratedTail,
}

fn load_model(dir: &Path, split: bool) -> Result<QptModel> {
    let sub = if split {
        CHECKPOINT_SPLIT_DIR
    } else {
        CHECKPOINT_DIR
    };
    let path = dir.join(sub);
    if !path.exists() {
        return Err(Error::IncompleteRun(format!(
            "missing checkpoint {}",
            path.display()
        )));
    }
    Ok(QptModel::load(&path)?.0)
}

/// Model thresholds of one block, normalized units. Split checkpoints are
/// evaluated through the split protocol.
fn thresholds(model: &QptModel, ds: &WindowedDataset, part: Part, split: bool) -> Result<Vec<f64>> {
    let (x, y) = ds.block(part);
    let n = y.len() / ds.n_sa;
    if split {
        let mut sys = partition(model, Default::default(), FaultModel::default());
        sys.predict_all(x, n)
    } else {
        model.predict_all(x, n)
    }
}

/// Fits per-SA GPD tails to training exceedances and conformity scores on
/// the calibration block.
pub fn calibrate_stage(
    spec: &ExperimentSpec,
    dir: &Path,
    split: bool,
) -> Result<CalibrationArtifact> {
    let ds = load_dataset(dir)?;
    let model = load_model(dir, split)?;
    let m = ds.n_sa;
    let norm = ds.normalizer.clone().expect("checked on load");
    let (_, y_train) = ds.block(Part::Train);
    let u_train = thresholds(&model, &ds, Part::Train, split)?;
    let exc = collect_exceedances(y_train, &u_train, m, spec.min_exceedances)?;
    let tails = exc.iter().map(|e| gpd_fit(e)).collect::<Result<Vec<_>>>()?;
    let (_, y_cal) = ds.block(Part::Cal);
    let u_cal = thresholds(&model, &ds, Part::Cal, split)?;
    let conformal = conformity_scores(&u_cal, y_cal, m, spec.levels.beta)?;
    let tail = CalibratedTail {
        tails,
        conformal,
        tail_quantile: 1.0 - spec.levels.varsigma,
    };
    let n_train = (y_train.len() / m) as f64;
    let entries = (0..m)
        .map(|sa| {
            let t = &tail.tails[sa];
            let margin = tail.margin(sa)?;
            Ok(CalibrationEntry {
                sa,
                shape: t.shape,
                scale: t.scale,
                n_exceedances: t.n_exceedances,
                exceedance_fraction: t.n_exceedances as f64 / n_train,
                log_likelihood: t.log_likelihood,
                fallback: t.fallback,
                conformity_score: tail.conformal.scores[sa],
                margin,
                margin_db: norm.inverse_delta(sa, margin),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let art = CalibrationArtifact {
        model_id: model.id(),
        report: CalibrationReport {
            alpha: spec.levels.alpha,
            beta: spec.levels.beta,
            varsigma: spec.levels.varsigma,
            entries,
        },
        tail,
    };
    let file = if split {
        CALIBRATION_SPLIT_FILE
    } else {
        CALIBRATION_FILE
    };
    write_json(&dir.join(file), &art)?;
    Ok(art)
}

/// RA outcome without per-decision vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaSummary {
    pub eps_target: f64,
    pub percentile_met: f64,
    pub mean_overhead: f64,
    pub mean_channel_uses: f64,
    pub mean_genie_channel_uses: f64,
    pub achieved_bler_median: f64,
    pub achieved_bler_p95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub coverage: CoverageStats,
    pub ra: Vec<RaSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub scenario_id: String,
    pub seed: u64,
    pub n_sa: usize,
    pub window: usize,
    pub n_test: usize,
    pub variants: Vec<VariantSummary>,
}

impl RunSummary {
    pub fn variant(&self, v: Variant) -> Option<&VariantSummary> {
        self.variants.iter().find(|s| s.variant == v)
    }
}

/// Ties every emitted number to its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    /// Content hash of the simulated trace.
    pub input_hash: String,
    /// Content hashes of the produced artifacts.
    pub files: BTreeMap<String, String>,
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn percentile(v: &[f64], p: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let k = ((s.len() as f64 - 1.0) * p).round() as usize;
    s[k]
}

/// Predictions of one variant for the test block, `[n × M]` in dBm.
fn variant_predictions(
    v: Variant,
    spec: &ExperimentSpec,
    dir: &Path,
    ds: &WindowedDataset,
    trace: &InterferenceTrace,
) -> Result<Vec<f64>> {
    let m = ds.n_sa;
    let r = ds.range(Part::Test);
    let norm = ds.normalizer.as_ref().expect("checked on load");
    let mut out = Vec::with_capacity(r.len() * m);
    match v {
        Variant::Genie => {
            let series: Vec<Vec<f64>> = (0..m).map(|sa| trace.true_dbm(sa)).collect();
            for j in r {
                for s in &series {
                    out.push(s[label_cycle(ds.window, j)]);
                }
            }
        }
        Variant::MovingAverage | Variant::Wiener => {
            let series = estimated_series_db(trace);
            let ma = MovingAverage {
                weights: spec.baselines.ma_weights.clone(),
            };
            let wiener = Wiener::new(ds.window, spec.baselines.wiener_history.max(ds.window + 1))?;
            for j in r {
                let k = label_cycle(ds.window, j);
                for s in &series {
                    out.push(if v == Variant::Wiener {
                        wiener.predict_at(s, k)?
                    } else {
                        ma.predict_at(s, k)?
                    });
                }
            }
        }
        _ => {
            let split = v.is_split();
            let model = load_model(dir, split)?;
            let u = thresholds(&model, ds, Part::Test, split)?;
            let adjusted = if v.needs_calibration() {
                let file = if split {
                    CALIBRATION_SPLIT_FILE
                } else {
                    CALIBRATION_FILE
                };
                let art: CalibrationArtifact = read_json(&dir.join(file))?;
                if art.model_id != model.id() {
                    return Err(Error::IncompleteRun(format!(
                        "{file} was fitted for model {} but the checkpoint is {}",
                        art.model_id,
                        model.id()
                    )));
                }
                if v == Variant::EvtIqpt {
                    art.tail.apply_uncalibrated(&u)?
                } else {
                    art.tail.apply(&u)?
                }
            } else {
                u
            };
            out.extend(
                adjusted
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| norm.inverse(i % m, x)),
            );
        }
    }
    Ok(out)
}

/// Scores every variant on the test block and writes the results table,
/// the summary and the run manifest.
pub fn evaluate_stage(spec: &ExperimentSpec, seed: u64, dir: &Path) -> Result<RunSummary> {
    let trace = load_trace(dir)?;
    let ds = load_dataset(dir)?;
    let m = ds.n_sa;
    let norm = ds.normalizer.clone().expect("checked on load");
    let est = estimated_series_db(&trace);
    let r = ds.range(Part::Test);
    let mut labels = Vec::with_capacity(r.len() * m);
    let mut instances = Vec::with_capacity(r.len() * m);
    for j in r.clone() {
        let k = label_cycle(ds.window, j);
        for (sa, series) in est.iter().enumerate() {
            labels.push(series[k]);
            instances.push(RaInstance {
                signal_w: trace.signal_power_w[sa],
                noise_w: trace.noise_power_w,
                true_interference_w: trace.true_power(sa, k),
            });
        }
    }
    let mut rows = Vec::new();
    let mut variants = Vec::new();
    for &v in &spec.variants {
        let pred = variant_predictions(v, spec, dir, &ds, &trace).inspect_err(|e| {
            log::error!("predictor {v} failed: {e}");
        })?;
        let cov = coverage_stats(&pred, &labels, &norm.scale);
        let pred_w: Vec<f64> = pred.iter().map(|&d| dbm_to_watts(d)).collect();
        let outcomes = evaluate_ra(&pred_w, &instances, &spec.ra)?;
        let ra: Vec<RaSummary> = outcomes
            .iter()
            .map(|o| RaSummary {
                eps_target: o.eps_target,
                percentile_met: o.percentile_met,
                mean_overhead: o.mean_overhead,
                mean_channel_uses: o.mean_channel_uses,
                mean_genie_channel_uses: o.mean_genie_channel_uses,
                achieved_bler_median: percentile(&o.achieved, 0.5),
                achieved_bler_p95: percentile(&o.achieved, 0.95),
            })
            .collect();
        for o in &ra {
            rows.push(ResultRow {
                predictor: v.name().into(),
                eps_target: o.eps_target,
                percentile_met: o.percentile_met,
                mean_overhead: o.mean_overhead,
                cov_prob: cov.avg_prob,
                cov_width: cov.avg_width_norm,
            });
        }
        variants.push(VariantSummary {
            variant: v,
            coverage: cov,
            ra,
        });
    }
    let summary = RunSummary {
        name: spec.name.clone(),
        scenario_id: config_hash(spec)?,
        seed,
        n_sa: m,
        window: ds.window,
        n_test: r.len(),
        variants,
    };
    write_results_csv(&rows, &dir.join(RESULTS_FILE))?;
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    let mut files = BTreeMap::new();
    for f in [
        SPEC_FILE,
        RESULTS_FILE,
        SUMMARY_FILE,
        CALIBRATION_FILE,
        CALIBRATION_SPLIT_FILE,
        LATENCY_FILE,
    ] {
        let p = dir.join(f);
        if p.exists() {
            files.insert(f.to_string(), file_hash(&p)?);
        }
    }
    for sub in [CHECKPOINT_DIR, CHECKPOINT_SPLIT_DIR] {
        let p = dir.join(sub).join(crate::qpt::model::WEIGHTS_FILE);
        if p.exists() {
            files.insert(
                format!("{sub}/{}", crate::qpt::model::WEIGHTS_FILE),
                file_hash(&p)?,
            );
        }
    }
    let manifest = RunManifest {
        config_hash: summary.scenario_id.clone(),
        seed,
        input_hash: file_hash(&dir.join(TRACE_FILE))?,
        files,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(summary)
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub simulate: f64,
    pub prepare: f64,
    pub train: f64,
    pub train_split: f64,
    pub calibrate: f64,
    pub evaluate: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.simulate
            + self.prepare
            + self.train
            + self.train_split
            + self.calibrate
            + self.evaluate
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub timings: StageTimings,
}

fn timed<T>(slot: &mut f64, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t0 = Instant::now();
    let r = f();
    *slot += t0.elapsed().as_secs_f64();
    r
}

/// Runs every stage needed by the selected variants for one seed. Only the
/// stages the variants require are executed.
pub fn run_pipeline(spec: &ExperimentSpec, seed: u64, dir: &Path) -> Result<RunOutcome> {
    spec.validate()?;
    let mut tm = StageTimings::default();
    let vs = &spec.variants;
    let central = vs.iter().any(|v| v.needs_model() && !v.is_split());
    let split = vs.iter().any(|v| v.is_split());
    let cal_central = vs.iter().any(|v| v.needs_calibration() && !v.is_split());
    let cal_split = vs.iter().any(|v| v.needs_calibration() && v.is_split());

    timed(&mut tm.simulate, || simulate_stage(spec, seed, dir))
        .map_err(|e| e.in_stage("simulate"))?;
    timed(&mut tm.prepare, || prepare_stage(spec, dir)).map_err(|e| e.in_stage("prepare"))?;
    if central {
        timed(&mut tm.train, || train_stage(spec, seed, dir, false))
            .map_err(|e| e.in_stage("train"))?;
    }
    if split {
        timed(&mut tm.train_split, || train_stage(spec, seed, dir, true))
            .map_err(|e| e.in_stage("train"))?;
    }
    if cal_central {
        timed(&mut tm.calibrate, || calibrate_stage(spec, dir, false))
            .map_err(|e| e.in_stage("calibrate"))?;
    }
    if cal_split {
        timed(&mut tm.calibrate, || calibrate_stage(spec, dir, true))
            .map_err(|e| e.in_stage("calibrate"))?;
    }
    let summary = timed(&mut tm.evaluate, || evaluate_stage(spec, seed, dir))
        .map_err(|e| e.in_stage("evaluate"))?;
    log::info!(
        "run {} seed {seed} finished in {:.1} s",
        spec.name,
        tm.total()
    );
    Ok(RunOutcome {
        summary,
        timings: tm,
    })
}
