//! Batch experiment CLI. Exit codes: 0 success, 1 config error, 2 when every
//! trial in a run failed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use halfspace::distributions::{
    admissibility_check, AdmissibilityTrialConfig, DistKind, Distribution,
};
use halfspace::learner::calibrate_uniform;
use halfspace_harness::experiment::{compare_baselines, emit_plot_data, run_experiment};
use halfspace_harness::{ConfigError, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(
    name = "halfspace",
    about = "Noise-tolerant halfspace learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; every trial seed derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for records and summaries.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Repeatable section.key=value config patch.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured sweep and persist per-trial records.
    Run(RunArgs),
    /// Head-to-head: localized learner vs averaging vs plain hinge.
    Compare(RunArgs),
    /// Emit delimited plot data from a results directory.
    PlotData {
        /// Directory containing records.jsonl.
        #[arg(long)]
        results: PathBuf,
        /// Output directory (defaults to the results directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the uniform-case calibration constants for a dimension.
    Calibrate {
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 200_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Monte-Carlo check of one (or all) admissibility conditions.
    CheckAdmissible {
        /// uniform-sphere or isotropic-gaussian.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        dim: usize,
        /// Condition 1..=5; omit to run all five.
        #[arg(long)]
        part: Option<u8>,
        #[arg(long, default_value_t = 40_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, ConfigError> {
    let mut overrides = args.overrides.clone();
    if let Some(t) = args.trials {
        overrides.push(format!("learning.trials={t}"));
    }
    ExperimentConfig::load(args.config.to_str().unwrap_or_default(), &overrides)
}

fn out_dir(args: &RunArgs, cfg: &ExperimentConfig) -> PathBuf {
    args.out
        .clone()
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => {
            let cfg = match load_config(&args) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(1);
                }
            };
            let dir = out_dir(&args, &cfg);
            match run_experiment(&cfg, args.seed, &dir) {
                Ok(summary) => {
                    for s in &summary.sweeps {
                        println!(
                            "sweep {}: eps {:.5} eta {:.5} success {:.0}% mean_error {} labels {:.0}",
                            s.sweep_index,
                            s.epsilon,
                            s.eta,
                            100.0 * s.success_rate,
                            s.mean_final_error
                                .map(|e| format!("{e:.5}"))
                                .unwrap_or_else(|| "n/a".into()),
                            s.mean_labels
                        );
                    }
                    println!("records: {}", dir.join("records.jsonl").display());
                    ExitCode::SUCCESS
                }
                Err(HarnessError::AllTrialsFailed(n)) => {
                    eprintln!("all {n} trials failed");
                    ExitCode::from(2)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Compare(args) => {
            let cfg = match load_config(&args) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(1);
                }
            };
            let dir = out_dir(&args, &cfg);
            match compare_baselines(&cfg, args.seed, &dir) {
                Ok(s) => {
                    println!(
                        "localized {}/{} | averaging {}/{} | plain hinge {}/{}",
                        s.localized_successes,
                        s.trials,
                        s.averaging_successes,
                        s.trials,
                        s.plain_hinge_successes,
                        s.trials
                    );
                    println!("rows: {}", dir.join("comparisons.jsonl").display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::PlotData { results, out } => {
            let out = out.unwrap_or_else(|| results.clone());
            match emit_plot_data(&results, &out) {
                Ok(files) => {
                    for f in files {
                        println!("wrote {}", f.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Calibrate { dim, samples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            match calibrate_uniform(dim, samples, &mut rng) {
                Ok(c) => {
                    println!(
                        "dim {dim}: c2_tilde {:.4} c4_tilde {:.2} ({} samples per probe)",
                        c.c2_tilde, c.c4_tilde, c.samples_per_probe
                    );
                    println!(
                        "suggested overrides: schedule.c2_tilde={:.4} schedule.c4_tilde={:.2}",
                        c.c2_tilde, c.c4_tilde
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::CheckAdmissible {
            kind,
            dim,
            part,
            samples,
            seed,
        } => {
            let kind = match kind.as_str() {
                "uniform-sphere" => DistKind::UniformSphere,
                "isotropic-gaussian" => DistKind::IsotropicGaussian,
                other => {
                    eprintln!("unknown kind `{other}`; use uniform-sphere or isotropic-gaussian");
                    return ExitCode::from(1);
                }
            };
            let dist = match Distribution::new(kind, dim) {
                Ok(d) => d,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            let mut cfg = AdmissibilityTrialConfig::new(kind);
            cfg.n_samples = samples;
            let parts: Vec<u8> = match part {
                Some(p) => vec![p],
                None => (1..=5).collect(),
            };
            let mut all_ok = true;
            for p in parts {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (p as u64) << 8);
                match admissibility_check(&dist, p, &cfg, &mut rng) {
                    Ok(report) => {
                        let status = if report.passed { "PASS" } else { "FAIL" };
                        all_ok &= report.passed;
                        println!(
                            "part {p}: {status} (estimated constant {})",
                            report
                                .estimated_constant
                                .map(|c| format!("{c:.4}"))
                                .unwrap_or_else(|| "n/a".into())
                        );
                        for t in &report.trials {
                            println!(
                                "  {} estimate {:.6} +- {:.6} bounds [{}, {}] {}",
                                t.label,
                                t.estimate,
                                t.std_err,
                                t.lower_bound
                                    .map(|b| format!("{b:.6}"))
                                    .unwrap_or_else(|| "-".into()),
                                t.upper_bound
                                    .map(|b| format!("{b:.6}"))
                                    .unwrap_or_else(|| "-".into()),
                                if t.pass { "ok" } else { "VIOLATED" }
                            );
                        }
                    }
                    Err(e) => {
                        eprintln!("part {p}: error: {e}");
                        return ExitCode::from(1);
                    }
                }
            }
            if all_ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
    }
}
