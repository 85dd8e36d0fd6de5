//! Acceptance suite. Every criterion prints one PASS/FAIL line; the process
//! exits non-zero when any criterion fails.
//!
//! Desk-scale runs are written under `$ACCEPTANCE_OUT` (default: cargo's
//! per-target temporary directory) so they can be inspected afterwards.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use intail_core::calibration::{conformal_quantile, gpd_fit};
use intail_core::experiment::{
    prepare_stage, run_pipeline, simulate_stage, ExperimentSpec, Preset, RunSummary, Variant,
};
use intail_core::qpt::{self, DropoutCtx, Parameters, QptModel};
use intail_core::ra::{achieved_bler, capacity, channel_usage, channel_usage_real, BLER_SLACK};
use intail_core::split::{partition, FaultModel};
use intail_core::windowing::Part;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn out_root() -> PathBuf {
    std::env::var_os("ACCEPTANCE_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance"))
}

fn fresh(dir: &Path) -> PathBuf {
    let _ = std::fs::remove_dir_all(dir);
    dir.to_path_buf()
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

struct DeskRun {
    summary: RunSummary,
    elapsed: Duration,
}

fn desk_run(spec: &ExperimentSpec, tag: &str) -> Result<DeskRun, String> {
    let dir = fresh(&out_root().join(tag));
    let t = Instant::now();
    let out = run_pipeline(spec, spec.seeds[0], &dir).map_err(|e| format!("{tag}: {e}"))?;
    Ok(DeskRun {
        summary: out.summary,
        elapsed: t.elapsed(),
    })
}

fn cov(s: &RunSummary, v: Variant) -> &intail_core::ra::CoverageStats {
    &s.variant(v).expect("variant evaluated").coverage
}

fn iso_variants() -> Vec<Variant> {
    vec![
        Variant::Genie,
        Variant::MovingAverage,
        Variant::Wiener,
        Variant::Iqpt,
        Variant::CevtIqpt,
    ]
}

// 1
fn calibrated_coverage(run: &DeskRun) -> Outcome {
    let c = cov(&run.summary, Variant::CevtIqpt);
    let mins = run.elapsed.as_secs_f64() / 60.0;
    let pass =
        run.summary.n_test >= 2000 && c.worst_prob >= 0.95 && c.avg_prob >= 0.97 && mins <= 30.0;
    outcome(
        pass,
        format!(
            "cevt-iqpt per-SA {} avg {:.4} (n_test {}, {mins:.1} min)",
            fmt(&c.per_sa_prob),
            c.avg_prob,
            run.summary.n_test
        ),
    )
}

fn width_ordering(s: &RunSummary, chain: &[Variant]) -> (bool, String) {
    let w: Vec<f64> = chain.iter().map(|&v| cov(s, v).avg_width_norm).collect();
    let ok = w.windows(2).all(|p| p[0] < p[1]);
    let names: Vec<String> = chain
        .iter()
        .zip(&w)
        .map(|(v, x)| format!("{}={x:.4}", v.name()))
        .collect();
    (ok, names.join(" < "))
}

// 2
fn baseline_ordering(run: &DeskRun) -> Outcome {
    let s = &run.summary;
    let ma = cov(s, Variant::MovingAverage).avg_prob;
    let wi = cov(s, Variant::Wiener).avg_prob;
    let iq = cov(s, Variant::Iqpt).avg_prob;
    let (wok, wdesc) = width_ordering(s, &[Variant::Iqpt, Variant::MovingAverage, Variant::Wiener]);
    let pass = ma < 0.70 && wi < 0.70 && iq >= 0.90 && wok;
    outcome(
        pass,
        format!("coverage ma {ma:.3} wiener {wi:.3} iqpt {iq:.3}; width {wdesc}"),
    )
}

// 3
fn split_equivalence() -> Outcome {
    let t = Instant::now();
    let spec = Preset::Tiny.spec();
    let dir = fresh(&out_root().join("split-equivalence"));
    let ds = match simulate_stage(&spec, 1, &dir).and_then(|_| prepare_stage(&spec, &dir)) {
        Ok(ds) => ds,
        Err(e) => return outcome(false, e.to_string()),
    };
    let cfg = spec.model.config(ds.n_sa, ds.window, spec.levels.alpha);
    let mut tc = spec.train.config(1);
    tc.epochs = 1;
    let (x, y) = ds.block(Part::Train);
    let n = ds.split.train;
    let mut central = QptModel::new(cfg, 7).unwrap();
    let mut sys = partition(&central, tc.adam(), FaultModel::default());

    let a = central.predict_all(x, n).unwrap();
    let b = sys.predict_all(x, n).unwrap();
    let scale = a
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let fwd = a
        .iter()
        .zip(&b)
        .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()))
        / scale;

    qpt::train(&mut central, x, y, &tc).unwrap();
    sys.train(x, y, &tc).unwrap();
    let pa = central.flat_values();
    let pb = sys.merge().flat_values();
    let pscale = pa.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let par = pa
        .iter()
        .zip(&pb)
        .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()))
        / pscale;
    let secs = t.elapsed().as_secs_f64();
    outcome(
        fwd <= 1e-6 && par <= 1e-10 && secs <= 120.0,
        format!("forward rel {fwd:.2e}, params after one epoch rel {par:.2e} ({secs:.1} s)"),
    )
}

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(n)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na + nn == 0.0 {
        0.0
    } else {
        diff / (na + nn)
    }
}

// 4
fn gradient_check() -> Outcome {
    const H: f64 = 1e-6;
    let cfg = qpt::QptConfig {
        n_sa: 3,
        window: 4,
        d_model: 8,
        n_heads: 2,
        n_layers: 2,
        hidden: 6,
        dropout: 0.2,
        alpha: 0.05,
    };
    let mut model = QptModel::new(cfg.clone(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = 3;
    let x: Vec<f64> = (0..b * cfg.window * cfg.n_sa)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let y: Vec<f64> = (0..b * cfg.n_sa)
        .map(|_| rng.random_range(-3.0..3.0))
        .collect();
    let ctx = DropoutCtx {
        rate: cfg.dropout,
        seed: 2,
        epoch: 1,
        batch: 0,
    };
    model.zero_grad();
    model.train_step(&x, &y, b, Some(&ctx)).unwrap();
    let loss = |m: &QptModel| m.clone().train_step(&x, &y, b, Some(&ctx)).unwrap();
    let n_params = model.params().len();
    let mut worst = (0.0f64, String::new());
    for pi in 0..n_params {
        let analytic = model.params()[pi].grad.clone();
        let numeric: Vec<f64> = (0..analytic.len())
            .map(|i| {
                let mut p = model.clone();
                p.params_mut()[pi].value[i] += H;
                let mut m = model.clone();
                m.params_mut()[pi].value[i] -= H;
                (loss(&p) - loss(&m)) / (2.0 * H)
            })
            .collect();
        let e = rel_err(&analytic, &numeric);
        if e >= worst.0 {
            worst = (e, model.params()[pi].name.clone());
        }
    }
    outcome(
        worst.0 < 1e-4,
        format!(
            "{n_params} tensors, worst rel err {:.2e} ({})",
            worst.0, worst.1
        ),
    )
}

// 5
fn gpd_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (xi, sigma) = (0.2, 1.0);
    let gpd: Vec<f64> = (0..5000)
        .map(|_| {
            let u: f64 = rng.random();
            sigma / xi * ((1.0 - u).powf(-xi) - 1.0)
        })
        .collect();
    let expo: Vec<f64> = (0..5000)
        .map(|_| -(1.0 - rng.random::<f64>()).ln())
        .collect();
    match (gpd_fit(&gpd), gpd_fit(&expo)) {
        (Ok(a), Ok(b)) => outcome(
            (0.15..=0.25).contains(&a.shape)
                && (0.95..=1.05).contains(&a.scale)
                && b.shape.abs() < 0.05,
            format!(
                "GPD fit xi {:.4} sigma {:.4}; exponential fit xi {:.4}",
                a.shape, a.scale, b.shape
            ),
        ),
        (a, b) => outcome(false, format!("fit failed: {:?} / {:?}", a.err(), b.err())),
    }
}

// 6
fn conformal_guarantee() -> Outcome {
    let (trials, n_cal, n_test, beta) = (200, 1000, 1000, 0.1);
    let floor = 0.9 - 1.96 * (0.9 * 0.1 / n_test as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    // A deliberately imperfect point predictor on heteroscedastic data.
    let draw = |rng: &mut ChaCha8Rng| {
        let x: f64 = rng.random_range(-2.0..2.0);
        let z: f64 = StandardNormal.sample(rng);
        let y = x.sin() + (0.2 + 0.3 * x.abs()) * z;
        let pred = 0.8 * x;
        (y - pred).abs()
    };
    let mut covs = Vec::with_capacity(trials);
    for _ in 0..trials {
        let cal: Vec<f64> = (0..n_cal).map(|_| draw(&mut rng)).collect();
        let cs = conformal_quantile(&cal, beta).unwrap();
        let hit = (0..n_test).filter(|_| draw(&mut rng) <= cs).count();
        covs.push(hit as f64 / n_test as f64);
    }
    let mean = covs.iter().sum::<f64>() / trials as f64;
    let above = covs.iter().filter(|&&c| c >= floor).count() as f64 / trials as f64;
    outcome(
        (0.89..=0.92).contains(&mean) && above >= 0.90,
        format!(
            "mean coverage {mean:.4}, {:.1}% of trials >= {floor:.4}",
            100.0 * above
        ),
    )
}

// 7
fn bler_attainment(run: &DeskRun) -> Outcome {
    let s = &run.summary;
    let mut pass = true;
    let mut parts = Vec::new();
    for eps in [1e-5, 1e-6] {
        let met = |v: Variant| {
            s.variant(v)
                .and_then(|vs| vs.ra.iter().find(|r| r.eps_target == eps))
                .map(|r| r.percentile_met)
        };
        match (met(Variant::CevtIqpt), met(Variant::MovingAverage)) {
            (Some(c), Some(m)) => {
                pass &= c >= 0.95 && m < 0.50;
                parts.push(format!("eps {eps:.0e}: cevt {c:.3} ma {m:.3}"));
            }
            _ => {
                pass = false;
                parts.push(format!("eps {eps:.0e}: not evaluated"));
            }
        }
    }
    outcome(pass, parts.join("; "))
}

fn overheads(s: &RunSummary) -> Vec<(f64, f64)> {
    s.variant(Variant::CevtIqpt)
        .map(|v| {
            v.ra.iter()
                .map(|r| (r.eps_target, r.mean_overhead))
                .collect()
        })
        .unwrap_or_default()
}

// 8
fn overhead_sanity(iso: &DeskRun, pp: &Result<DeskRun, String>) -> Outcome {
    let pp = match pp {
        Ok(r) => r,
        Err(e) => return outcome(false, e.clone()),
    };
    let a = overheads(&iso.summary);
    let b = overheads(&pp.summary);
    let pass = !a.is_empty()
        && !b.is_empty()
        && a.iter().all(|&(_, o)| (1.05..=1.6).contains(&o))
        && b.iter().all(|&(_, o)| (1.1..=2.5).contains(&o));
    let show = |v: &[(f64, f64)]| {
        v.iter()
            .map(|(e, o)| format!("{e:.0e}:{o:.3}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    outcome(
        pass,
        format!("isochronous [{}], push-pull [{}]", show(&a), show(&b)),
    )
}

// 9
fn finite_blocklength() -> Outcome {
    let mut exact_err = 0.0f64;
    let mut worst_consistency = 0.0f64;
    let mut failures = 0;
    let mut points = 0;
    for gamma_db in [-5.0, 0.0, 7.5, 15.0, 30.0] {
        let g = 10f64.powf(gamma_db / 10.0);
        for d in [32.0, 200.0, 1024.0, 8000.0] {
            let r0 = channel_usage_real(g, d, 0.5).unwrap();
            exact_err = exact_err.max((r0 - d / capacity(g)).abs() / r0);
            for eps in [1e-2, 1e-4, 1e-5, 1e-6, 1e-7] {
                points += 1;
                let r = channel_usage_real(g, d, eps).unwrap();
                let n = channel_usage(g, d, eps).unwrap() as f64;
                let at_real = achieved_bler(r, g, d);
                worst_consistency = worst_consistency.max((at_real - eps).abs() / eps);
                let ok_ceil = achieved_bler(n, g, d) <= eps * (1.0 + BLER_SLACK);
                let ok_tight = n - 1.0 < r && achieved_bler(n - 1.0, g, d) > eps;
                if !(ok_ceil && ok_tight) {
                    failures += 1;
                }
            }
        }
    }
    outcome(
        points == 100 && exact_err == 0.0 && worst_consistency < 1e-6 && failures == 0,
        format!(
            "{points} points: median-target rel err {exact_err:.1e}, round-trip rel err {worst_consistency:.1e}, {failures} rounding violations"
        ),
    )
}

// 10
fn scaling(m4: &DeskRun, m8: &Result<DeskRun, String>) -> Outcome {
    let m8 = match m8 {
        Ok(r) => r,
        Err(e) => return outcome(false, e.clone()),
    };
    let chain = [
        Variant::Iqpt,
        Variant::CevtIqpt,
        Variant::MovingAverage,
        Variant::Wiener,
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (m, run) in [(4, m4), (8, m8)] {
        let c = cov(&run.summary, Variant::CevtIqpt).avg_prob;
        let (ok, desc) = width_ordering(&run.summary, &chain);
        pass &= c >= 0.95 && ok;
        parts.push(format!(
            "M={m}: cevt avg {c:.3}, width {desc} ({:.1} min)",
            run.elapsed.as_secs_f64() / 60.0
        ));
    }
    outcome(pass, parts.join("; "))
}

fn main() {
    // `cargo test -- <filter>` style arguments are accepted and ignored.
    let started = Instant::now();
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    let mut record = |id: u8, name: &'static str, o: Outcome| {
        println!(
            "criterion {id:>2} {} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((id, name, o));
    };

    record(3, "split equivalence", split_equivalence());
    record(4, "gradient correctness", gradient_check());
    record(5, "GPD recovery", gpd_recovery());
    record(6, "conformal guarantee", conformal_guarantee());
    record(9, "finite-blocklength closed forms", finite_blocklength());

    let mut base = Preset::Desk.spec();
    base.variants = iso_variants();
    let iso = desk_run(&base, "desk-m4");
    let pp = {
        let mut s = Preset::Desk.spec().with_push_pull();
        s.variants = vec![Variant::Genie, Variant::CevtIqpt];
        desk_run(&s, "desk-push-pull")
    };
    let m8 = desk_run(&base.clone().with_sa_pairs(8), "desk-m8");
    match &iso {
        Ok(run) => {
            record(1, "calibrated coverage", calibrated_coverage(run));
            record(2, "baseline ordering", baseline_ordering(run));
            record(7, "BLER attainment", bler_attainment(run));
            record(8, "overhead sanity", overhead_sanity(run, &pp));
            record(10, "scaling", scaling(run, &m8));
        }
        Err(e) => {
            for (id, name) in [
                (1, "calibrated coverage"),
                (2, "baseline ordering"),
                (7, "BLER attainment"),
                (8, "overhead sanity"),
                (10, "scaling"),
            ] {
                record(id, name, outcome(false, e.clone()));
            }
        }
    }

    results.sort_by_key(|r| r.0);
    let failed: Vec<u8> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed in {:.1} min (runs under {})",
        results.len() - failed.len(),
        results.len(),
        started.elapsed().as_secs_f64() / 60.0,
        out_root().display()
    );
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
