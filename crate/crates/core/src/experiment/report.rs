use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::pipeline::{run_pipeline, RunManifest, RunSummary, MANIFEST_FILE, SUMMARY_FILE};
use super::spec::{ExperimentSpec, Variant};
use crate::error::{Error, Result};
use crate::scenario::{MobilityModel, TrafficModel};

/// Axis of a parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SweepAxis {
    SaPairs(Vec<usize>),
    EpsTarget(Vec<f64>),
    /// `iso` or `push-pull`.
    Traffic(Vec<String>),
    Mobility(Vec<MobilityModel>),
}

impl FromStr for SweepAxis {
    type Err = Error;

    /// `m=4,8`, `eps=1e-5,1e-6`, `traffic=iso,push-pull` or
    /// `mobility=rdmm,alley`.
    fn from_str(s: &str) -> Result<Self> {
        let (k, v) = s.split_once('=').ok_or_else(|| {
            Error::Config(format!("sweep axis {s:?} is not of the form name=values"))
        })?;
        let items: Vec<&str> = v
            .split(',')
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .collect();
        if items.is_empty() {
            return Err(Error::Config("sweep axis has no values".into()));
        }
        let bad = |x: &str| Error::Config(format!("invalid sweep value {x:?}"));
        match k.trim() {
            "m" | "M" => items
                .iter()
                .map(|x| x.parse::<usize>().map_err(|_| bad(x)))
                .collect::<Result<_>>()
                .map(SweepAxis::SaPairs),
            "eps" => items
                .iter()
                .map(|x| x.parse::<f64>().map_err(|_| bad(x)))
                .collect::<Result<_>>()
                .map(SweepAxis::EpsTarget),
            "traffic" => {
                for x in &items {
                    if *x != "iso" && *x != "push-pull" {
                        return Err(bad(x));
                    }
                }
                Ok(SweepAxis::Traffic(
                    items.iter().map(|x| x.to_string()).collect(),
                ))
            }
            "mobility" => items
                .iter()
                .map(|x| match *x {
                    "rdmm" => Ok(MobilityModel::Rdmm),
                    "alley" => Ok(MobilityModel::Alley),
                    _ => Err(bad(x)),
                })
                .collect::<Result<_>>()
                .map(SweepAxis::Mobility),
            other => Err(Error::Config(format!("unknown sweep axis {other:?}"))),
        }
    }
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::SaPairs(_) => "m",
            SweepAxis::EpsTarget(_) => "eps",
            SweepAxis::Traffic(_) => "traffic",
            SweepAxis::Mobility(_) => "mobility",
        }
    }

    /// Labels and specs of every point on the axis.
    pub fn points(&self, base: &ExperimentSpec) -> Vec<(String, ExperimentSpec)> {
        match self {
            SweepAxis::SaPairs(ms) => ms
                .iter()
                .map(|&m| (m.to_string(), base.clone().with_sa_pairs(m)))
                .collect(),
            SweepAxis::EpsTarget(es) => es
                .iter()
                .map(|&e| {
                    let mut s = base.clone();
                    s.ra.eps_targets = vec![e];
                    (format!("{e:e}"), s)
                })
                .collect(),
            SweepAxis::Traffic(ts) => ts
                .iter()
                .map(|t| {
                    let s = if t == "push-pull" {
                        base.clone().with_push_pull()
                    } else {
                        let mut s = base.clone();
                        s.scenario.traffic = TrafficModel::BernoulliIsochronous {
                            eta: s.scenario.traffic.eta(),
                        };
                        s.scenario.deployment.n_slots = 0;
                        s
                    };
                    (t.clone(), s)
                })
                .collect(),
            SweepAxis::Mobility(ms) => ms
                .iter()
                .map(|&m| {
                    let mut s = base.clone();
                    s.scenario.mobility = m;
                    let label = serde_json::to_value(m)
                        .ok()
                        .and_then(|v| v.as_str().map(String::from))
                        .unwrap_or_default();
                    (label, s)
                })
                .collect(),
        }
    }
}

/// One (axis value, seed) run of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: String,
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    /// Summary of `variant` at an axis value (first seed).
    pub fn get(&self, value: &str, variant: Variant) -> Option<&super::pipeline::VariantSummary> {
        self.points
            .iter()
            .find(|p| p.value == value)
            .and_then(|p| p.summary.variant(variant))
    }
}

/// Runs the pipeline at every axis value and seed, under
/// `out/<axis>-<value>/seed-<seed>`, and writes `sweep.csv` and `sweep.md`.
pub fn sweep(base: &ExperimentSpec, axis: &SweepAxis, out: &Path) -> Result<SweepReport> {
    base.validate()?;
    let mut points = Vec::new();
    for (value, spec) in axis.points(base) {
        spec.validate()?;
        for &seed in &spec.seeds {
            let dir = out
                .join(format!("{}-{}", axis.name(), value))
                .join(format!("seed-{seed}"));
            let run = run_pipeline(&spec, seed, &dir)?;
            points.push(SweepPoint {
                value: value.clone(),
                seed,
                dir,
                summary: run.summary,
                seconds: run.timings.total(),
            });
        }
    }
    let rep = SweepReport {
        axis: axis.name().into(),
        points,
    };
    write_sweep_tables(&rep, out)?;
    Ok(rep)
}

/// Worst probability, average probability, average normalized width.
type CoverageCell = (f64, f64, f64);

fn write_sweep_tables(rep: &SweepReport, out: &Path) -> Result<()> {
    let mut csv =
        String::from("axis,value,seed,predictor,worst_cov_prob,avg_cov_prob,avg_cov_width\n");
    let mut values: Vec<&str> = Vec::new();
    let mut table: BTreeMap<Variant, BTreeMap<String, Vec<CoverageCell>>> = BTreeMap::new();
    for p in &rep.points {
        if !values.contains(&p.value.as_str()) {
            values.push(&p.value);
        }
        for v in &p.summary.variants {
            let c = &v.coverage;
            writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                rep.axis, p.value, p.seed, v.variant, c.worst_prob, c.avg_prob, c.avg_width_norm
            )
            .expect("write to string");
            table
                .entry(v.variant)
                .or_default()
                .entry(p.value.clone())
                .or_default()
                .push((c.worst_prob, c.avg_prob, c.avg_width_norm));
        }
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("sweep.csv"), csv)?;

    let mut md = String::new();
    let header = |md: &mut String, title: &str| {
        writeln!(md, "\n### {title}\n").expect("write to string");
        let cols: Vec<String> = values.iter().map(|v| format!("{}={v}", rep.axis)).collect();
        writeln!(md, "| predictor | {} |", cols.join(" | ")).expect("write to string");
        writeln!(md, "|---|{}", "---|".repeat(values.len())).expect("write to string");
    };
    let mean = |xs: &[(f64, f64, f64)], f: fn(&(f64, f64, f64)) -> f64| {
        xs.iter().map(f).sum::<f64>() / xs.len() as f64
    };
    writeln!(md, "# Sweep over {}", rep.axis).expect("write to string");
    for (title, f) in [
        (
            "Normalized coverage width",
            (|t: &(f64, f64, f64)| t.2) as fn(&(f64, f64, f64)) -> f64,
        ),
        ("Average coverage probability", |t| t.1),
        ("Worst-SA coverage probability", |t| t.0),
    ] {
        header(&mut md, title);
        for (variant, by_value) in &table {
            let cells: Vec<String> = values
                .iter()
                .map(|v| {
                    by_value
                        .get(*v)
                        .map(|xs| format!("{:.3}", mean(xs, f)))
                        .unwrap_or_else(|| "-".into())
                })
                .collect();
            writeln!(md, "| {variant} | {} |", cells.join(" | ")).expect("write to string");
        }
    }
    std::fs::write(out.join("sweep.md"), md)?;
    Ok(())
}

/// Paths written by [`report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutput {
    pub runs: usize,
    pub long_csv: PathBuf,
    pub summary_csv: PathBuf,
    pub markdown: PathBuf,
}

fn find_runs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    let has_summary = dir.join(SUMMARY_FILE).is_file();
    let has_manifest = dir.join(MANIFEST_FILE).is_file();
    match (has_summary, has_manifest) {
        (true, true) => out.push(dir.to_path_buf()),
        (false, false) => {}
        _ => {
            return Err(Error::IncompleteRun(format!(
                "{} has a summary or manifest but not both",
                dir.display()
            )))
        }
    }
    for e in entries {
        if e.is_dir() {
            find_runs(&e, out)?;
        }
    }
    Ok(())
}

/// Mean and half-width of the two-sided 95% Student-t interval.
pub(crate) fn mean_ci(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map(|d| d.inverse_cdf(0.975))
        .unwrap_or(f64::NAN);
    (mean, t * (var / n as f64).sqrt())
}

type Key = (String, String, String, String);

/// Merges every completed run under `dir` into `report_long.csv` (one value
/// per group, predictor, target, metric and seed), `report_summary.csv`
/// (per-seed columns plus mean and 95% interval) and `report.md`.
pub fn report(dir: &Path) -> Result<ReportOutput> {
    if !dir.is_dir() {
        return Err(Error::IncompleteRun(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let mut runs = Vec::new();
    find_runs(dir, &mut runs)?;
    if runs.is_empty() {
        return Err(Error::IncompleteRun(format!(
            "no completed runs under {}",
            dir.display()
        )));
    }
    let mut long = String::from("group,predictor,eps_target,metric,seed,config_hash,value\n");
    let mut groups: BTreeMap<Key, BTreeMap<u64, f64>> = BTreeMap::new();
    let mut seeds_all: Vec<u64> = Vec::new();
    for run in &runs {
        let summary: RunSummary =
            serde_json::from_str(&std::fs::read_to_string(run.join(SUMMARY_FILE))?)?;
        let manifest: RunManifest =
            serde_json::from_str(&std::fs::read_to_string(run.join(MANIFEST_FILE))?)?;
        if manifest.seed != summary.seed || manifest.config_hash != summary.scenario_id {
            return Err(Error::IncompleteRun(format!(
                "manifest of {} does not match its summary",
                run.display()
            )));
        }
        let rel = run.strip_prefix(dir).unwrap_or(run);
        let group = rel
            .parent()
            .map(|p| p.to_string_lossy().replace('\\', "/"))
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| ".".into());
        if !seeds_all.contains(&summary.seed) {
            seeds_all.push(summary.seed);
        }
        for v in &summary.variants {
            let mut push = |eps: String, metric: &str, value: f64| {
                writeln!(
                    long,
                    "{group},{},{eps},{metric},{},{},{value}",
                    v.variant, summary.seed, manifest.config_hash
                )
                .expect("write to string");
                let slot = groups
                    .entry((
                        group.clone(),
                        v.variant.to_string(),
                        eps,
                        metric.to_string(),
                    ))
                    .or_default();
                if slot.insert(summary.seed, value).is_some() {
                    log::warn!("duplicate seed {} in group {group}", summary.seed);
                }
            };
            push("-".into(), "cov_prob", v.coverage.avg_prob);
            push("-".into(), "cov_prob_worst", v.coverage.worst_prob);
            push("-".into(), "cov_width", v.coverage.avg_width_norm);
            push("-".into(), "cov_width_db", v.coverage.avg_width_db);
            for r in &v.ra {
                let e = format!("{:e}", r.eps_target);
                push(e.clone(), "percentile_met", r.percentile_met);
                push(e.clone(), "mean_overhead", r.mean_overhead);
                push(e.clone(), "achieved_bler_median", r.achieved_bler_median);
                push(e, "achieved_bler_p95", r.achieved_bler_p95);
            }
        }
    }
    seeds_all.sort_unstable();
    let seed_cols: Vec<String> = seeds_all.iter().map(|s| format!("seed_{s}")).collect();
    let mut summary = format!(
        "group,predictor,eps_target,metric,{}{}n,mean,ci95\n",
        seed_cols.join(","),
        if seed_cols.is_empty() { "" } else { "," }
    );
    let mut md = String::from("# Results\n\n| group | predictor | eps_target | metric | n | mean | ci95 |\n|---|---|---|---|---|---|---|\n");
    for ((g, p, e, m), by_seed) in &groups {
        let vals: Vec<f64> = by_seed.values().copied().collect();
        let (mean, ci) = mean_ci(&vals);
        let cells: Vec<String> = seeds_all
            .iter()
            .map(|s| by_seed.get(s).map(|v| v.to_string()).unwrap_or_default())
            .collect();
        writeln!(
            summary,
            "{g},{p},{e},{m},{},{},{mean},{ci}",
            cells.join(","),
            vals.len()
        )
        .expect("write to string");
        writeln!(
            md,
            "| {g} | {p} | {e} | {m} | {} | {mean:.4} | {ci:.4} |",
            vals.len()
        )
        .expect("write to string");
    }
    let out = ReportOutput {
        runs: runs.len(),
        long_csv: dir.join("report_long.csv"),
        summary_csv: dir.join("report_summary.csv"),
        markdown: dir.join("report.md"),
    };
    std::fs::write(&out.long_csv, long)?;
    std::fs::write(&out.summary_csv, summary)?;
    std::fs::write(&out.markdown, md)?;
    Ok(out)
}
