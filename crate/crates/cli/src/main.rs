//! Command-line driver for the interference tail prediction pipeline.

use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use intail_core::experiment::{
    calibrate_stage, evaluate_stage, prepare_stage, report, run_pipeline, simulate_stage, sweep,
    train_stage, ExperimentSpec, Preset, SweepAxis, Variant,
};
use intail_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "intail",
    version,
    about = "Calibrated interference tail prediction for industrial sub-networks"
)]
struct Cli {
    /// Experiment specification in TOML; missing fields take the desk defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; replaces the seed list of the specification.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Built-in configuration used when no --config is given.
    #[arg(long, global = true, value_parser = ["tiny", "desk", "paper"], default_value = "desk")]
    preset: String,
    /// Predictor variants to evaluate, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    variants: Option<Vec<String>>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the interference trace.
    Simulate,
    /// Estimate the stationary interval and build the windowed dataset.
    Prepare,
    /// Train the quantile model.
    Train {
        /// Train through the split client/server protocol.
        #[arg(long)]
        split: bool,
    },
    /// Fit GPD tails and conformity scores.
    Calibrate {
        /// Calibrate the split-trained checkpoint.
        #[arg(long)]
        split: bool,
    },
    /// Score every selected predictor on the test block.
    Evaluate,
    /// Run all stages the selected variants need.
    Run,
    /// Run the pipeline along one axis, e.g. m=4,8,12,16 or eps=1e-5,1e-6.
    Sweep {
        #[arg(long)]
        axis: String,
    },
    /// Merge completed runs under a directory (defaults to --out).
    Report { dir: Option<PathBuf> },
    /// Print the resolved specification as TOML.
    ShowConfig,
}

fn load_spec(cli: &Cli) -> Result<ExperimentSpec, Error> {
    let mut spec = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            ExperimentSpec::from_toml(&text)?
        }
        None => cli.preset.parse::<Preset>()?.spec(),
    };
    if let Some(seed) = cli.seed {
        spec.seeds = vec![seed];
    }
    if let Some(vs) = &cli.variants {
        spec.variants = vs
            .iter()
            .map(|v| v.parse::<Variant>())
            .collect::<Result<_, _>>()?;
    }
    spec.validate()?;
    Ok(spec)
}

fn run_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), Error> {
    let spec = load_spec(cli)?;
    let seed = spec.seeds[0];
    let dir = run_dir(&cli.out, seed);
    match &cli.command {
        Command::Simulate => {
            let t = simulate_stage(&spec, seed, &dir).map_err(|e| e.in_stage("simulate"))?;
            println!(
                "simulated {} cycles x {} SA pairs into {}",
                t.n_cycles,
                t.n_sa,
                dir.display()
            );
        }
        Command::Prepare => {
            let ds = prepare_stage(&spec, &dir).map_err(|e| e.in_stage("prepare"))?;
            println!(
                "window {} with {} instances (train {}, cal {}, test {})",
                ds.window,
                ds.len(),
                ds.split.train,
                ds.split.cal,
                ds.split.test
            );
        }
        Command::Train { split } => {
            let curve = train_stage(&spec, seed, &dir, *split).map_err(|e| e.in_stage("train"))?;
            if let Some(l) = curve.losses.last() {
                println!("trained {} epochs, final loss {l:.6}", curve.losses.len());
            }
        }
        Command::Calibrate { split } => {
            let art = calibrate_stage(&spec, &dir, *split).map_err(|e| e.in_stage("calibrate"))?;
            print_json(&art.report)?;
        }
        Command::Evaluate => {
            let s = evaluate_stage(&spec, seed, &dir).map_err(|e| e.in_stage("evaluate"))?;
            print_json(&s)?;
        }
        Command::Run => {
            for &s in &spec.seeds {
                let out = run_pipeline(&spec, s, &run_dir(&cli.out, s))?;
                print_json(&out.summary)?;
                log::info!("timings: {:?}", out.timings);
            }
        }
        Command::Sweep { axis } => {
            let axis: SweepAxis = axis.parse()?;
            let rep = sweep(&spec, &axis, &cli.out)?;
            println!(
                "{} runs written to {}",
                rep.points.len(),
                cli.out.join("sweep.md").display()
            );
        }
        Command::Report { dir } => {
            let d = dir.as_deref().unwrap_or(&cli.out);
            let out = report(d).map_err(|e| e.in_stage("report"))?;
            println!(
                "merged {} runs into {}",
                out.runs,
                out.summary_csv.display()
            );
        }
        Command::ShowConfig => {
            print!("{}", spec.to_toml()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_STAGE
            })
        }
    }
}
