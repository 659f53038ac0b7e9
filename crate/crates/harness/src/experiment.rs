//! Experiment execution: seeded trials over noise/accuracy sweeps, baseline
//! comparisons, and plot-data emission.
//!
//! Determinism contract: a (config, master seed) pair fully determines every
//! record byte. Trials run in a worker pool with per-trial derived seeds and
//! the writer serializes them in a fixed order. Wall-clock timings are
//! inherently non-reproducible, so they go to a sidecar file instead of the
//! record stream.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use halfspace::distributions::{
    exact_error_uniform, random_unit, random_unit_orthogonal, DistKind, Distribution,
};
use halfspace::learner::{
    averaging_baseline, default_schedule, init_w0, plain_hinge_baseline, run_label_noise,
    run_malicious, CalibrationConstants, LearnerOptions, RunOutcome, Schedule, W0Mode,
};
use halfspace::oracles::{ExampleOracle, NoiseModel, NoiseOracleConfig};

use crate::config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("record serialization failed: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("no results found in {0}")]
    MissingResults(String),
    #[error("all {0} trials failed")]
    AllTrialsFailed(usize),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// SplitMix64 step, used to derive independent per-trial seeds.
fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn trial_seed(master: u64, sweep: usize, trial: usize, stream: u64) -> u64 {
    let mut s = master
        ^ (sweep as u64).wrapping_mul(0xA24B_AED4_963E_E407)
        ^ (trial as u64).wrapping_mul(0x9FB2_1C65_1E98_DF25)
        ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    splitmix(&mut s)
}

/// Per-round slice of a trial record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub error: f64,
    pub retained_mass: f64,
    pub certified_variance: f64,
    pub variance_cap: f64,
    pub in_band_dirty_frac: f64,
    pub hinge_value: f64,
    pub hinge_certified: bool,
    pub labels_new: u64,
}

/// Monte-Carlo error estimate attached to isotropic log-concave trials.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McError {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

/// One (sweep point, seed) outcome. Append-only, one JSON object per line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub sweep_index: usize,
    pub trial: usize,
    pub seed: u64,
    pub eta: f64,
    pub epsilon: f64,
    pub rounds_planned: usize,
    pub final_error: Option<f64>,
    /// 1e5-sample Monte-Carlo disagreement for the Gaussian case.
    pub final_error_mc: Option<McError>,
    pub success: bool,
    pub failed_round: Option<usize>,
    pub failure: Option<String>,
    pub labels_used: u64,
    pub unlabeled_used: u64,
    pub rounds: Vec<RoundRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub sweep_index: usize,
    pub eta: f64,
    pub epsilon: f64,
    pub trials: usize,
    pub failures: usize,
    pub success_rate: f64,
    pub mean_final_error: Option<f64>,
    pub std_final_error: Option<f64>,
    pub mean_labels: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub master_seed: u64,
    pub sweeps: Vec<SweepSummary>,
}

struct TrialPlan {
    sweep_index: usize,
    trial: usize,
    eta: f64,
    epsilon: f64,
}

struct TrialContext<'a> {
    cfg: &'a ExperimentConfig,
    constants: CalibrationConstants,
    kind: DistKind,
    dim: usize,
    opts: LearnerOptions,
}

fn build_schedule(ctx: &TrialContext, epsilon: f64) -> Result<Schedule, halfspace::Error> {
    let mut schedule = default_schedule(
        ctx.kind,
        epsilon,
        ctx.cfg.learning.delta,
        ctx.dim,
        &ctx.constants,
    )?;
    if let (Some(n), m) = (ctx.cfg.schedule.n_per_round, ctx.cfg.schedule.m_per_round) {
        schedule = schedule.with_sizes(n, m.unwrap_or(n / 10));
    } else if let Some(m) = ctx.cfg.schedule.m_per_round {
        let n = schedule.rounds[0].n;
        schedule = schedule.with_sizes(n, m);
    }
    Ok(schedule)
}

fn make_oracle(ctx: &TrialContext, eta: f64, seed: u64) -> Result<ExampleOracle, halfspace::Error> {
    let mut target_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7A26_E7A5_5CBA_11D7);
    let target = random_unit(ctx.dim, &mut target_rng);
    ExampleOracle::new(NoiseOracleConfig {
        model: ctx.cfg.noise.model.into(),
        eta,
        strategy: ctx.cfg.noise.strategy.into(),
        target,
        dist: Distribution::new(ctx.kind, ctx.dim)?,
        seed,
    })
}

fn mc_error(
    dist: &Distribution,
    w: &DVector<f64>,
    target: &DVector<f64>,
    samples: usize,
    seed: u64,
) -> McError {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4D43_4552);
    let mut wrong = 0usize;
    for _ in 0..samples {
        let x = dist.sample(&mut rng);
        if (w.dot(&x) >= 0.0) != (target.dot(&x) >= 0.0) {
            wrong += 1;
        }
    }
    let p = wrong as f64 / samples as f64;
    McError {
        mean: p,
        std_err: (p * (1.0 - p) / samples as f64).sqrt(),
        samples,
    }
}

fn run_one_trial(ctx: &TrialContext, plan: &TrialPlan, master_seed: u64) -> TrialRecord {
    let seed = trial_seed(master_seed, plan.sweep_index, plan.trial, 1);
    let mut record = TrialRecord {
        sweep_index: plan.sweep_index,
        trial: plan.trial,
        seed,
        eta: plan.eta,
        epsilon: plan.epsilon,
        rounds_planned: 0,
        final_error: None,
        final_error_mc: None,
        success: false,
        failed_round: None,
        failure: None,
        labels_used: 0,
        unlabeled_used: 0,
        rounds: Vec::new(),
    };
    let schedule = match build_schedule(ctx, plan.epsilon) {
        Ok(s) => s,
        Err(e) => {
            record.failure = Some(e.to_string());
            return record;
        }
    };
    record.rounds_planned = schedule.s();
    let mut oracle = match make_oracle(ctx, plan.eta, seed) {
        Ok(o) => o,
        Err(e) => {
            record.failure = Some(e.to_string());
            return record;
        }
    };
    let mut rng =
        ChaCha8Rng::seed_from_u64(trial_seed(master_seed, plan.sweep_index, plan.trial, 2));
    let w0 = match ctx.cfg.learning.cheat_w0_angle {
        Some(angle) => init_w0(
            &mut oracle,
            &schedule,
            W0Mode::Cheat { angle },
            &ctx.opts,
            &mut rng,
        ),
        None => init_w0(&mut oracle, &schedule, W0Mode::Honest, &ctx.opts, &mut rng),
    };
    let w0 = match w0 {
        Ok(w) => w,
        Err(e) => {
            record.failure = Some(e.to_string());
            return record;
        }
    };
    let run: Result<RunOutcome, halfspace::learner::RunFailure> = match oracle.model() {
        NoiseModel::Malicious => run_malicious(&mut oracle, &schedule, &w0, &ctx.opts, &mut rng),
        NoiseModel::AdversarialLabel => {
            run_label_noise(&mut oracle, &schedule, &w0, &ctx.opts, &mut rng)
        }
    };
    let (rounds, outcome) = match run {
        Ok(out) => {
            record.labels_used = out.labels_total;
            record.unlabeled_used = out.unlabeled_total;
            (out.rounds.clone(), Some(out))
        }
        Err(fail) => {
            record.failed_round = Some(fail.round);
            record.failure = Some(fail.source.to_string());
            (fail.partial, None)
        }
    };
    record.rounds = rounds
        .iter()
        .map(|r| RoundRecord {
            round: r.round,
            error: r.error_exact,
            retained_mass: r.retained_mass_frac,
            certified_variance: r.certified_variance,
            variance_cap: r.variance_cap,
            in_band_dirty_frac: r.in_band_dirty_frac,
            hinge_value: r.hinge_value,
            hinge_certified: r.hinge_certified,
            labels_new: r.labels_revealed_new,
        })
        .collect();
    if let Some(out) = outcome {
        let exact = exact_error_uniform(&out.w, oracle.target());
        record.final_error = Some(exact);
        match ctx.kind {
            DistKind::UniformSphere => {
                record.success = exact <= plan.epsilon;
            }
            DistKind::IsotropicGaussian => {
                let mc = mc_error(oracle.dist(), &out.w, oracle.target(), 100_000, seed);
                record.success = mc.mean <= plan.epsilon + 3.0 * mc.std_err;
                record.final_error_mc = Some(mc);
            }
        }
    }
    record
}

/// Runs trials x sweep points, writes `records.jsonl`, `summary.json`, and a
/// non-deterministic `timings.txt` sidecar into `out_dir`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    master_seed: u64,
    out_dir: &Path,
) -> Result<ExperimentSummary, HarnessError> {
    let kind: DistKind = cfg.distribution.kind.into();
    let ctx = TrialContext {
        cfg,
        constants: cfg.constants(),
        kind,
        dim: cfg.distribution.dim,
        opts: LearnerOptions {
            hinge_max_iters: cfg.schedule.hinge_max_iters.unwrap_or(20_000),
            ..LearnerOptions::default()
        },
    };
    let mut plans = Vec::new();
    let mut sweep_index = 0usize;
    for &epsilon in &cfg.epsilon_points() {
        for &eta in &cfg.eta_points() {
            for trial in 0..cfg.learning.trials {
                plans.push(TrialPlan {
                    sweep_index,
                    trial,
                    eta,
                    epsilon,
                });
            }
            sweep_index += 1;
        }
    }

    let started = std::time::Instant::now();
    let mut timed: Vec<(TrialRecord, f64)> = plans
        .par_iter()
        .map(|plan| {
            let t0 = std::time::Instant::now();
            let rec = run_one_trial(&ctx, plan, master_seed);
            (rec, t0.elapsed().as_secs_f64())
        })
        .collect();
    timed.sort_by_key(|(r, _)| (r.sweep_index, r.trial));

    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let records_path = out_dir.join("records.jsonl");
    {
        let mut f = std::fs::File::create(&records_path).map_err(io_err(&records_path))?;
        for (rec, _) in &timed {
            serde_json::to_writer(&mut f, rec)?;
            f.write_all(b"\n").map_err(io_err(&records_path))?;
        }
    }
    let timings_path = out_dir.join("timings.txt");
    {
        let mut f = std::fs::File::create(&timings_path).map_err(io_err(&timings_path))?;
        writeln!(
            f,
            "# wall-clock seconds per trial (not covered by the determinism contract)"
        )
        .map_err(io_err(&timings_path))?;
        for (rec, secs) in &timed {
            writeln!(
                f,
                "sweep {} trial {} {:.3}",
                rec.sweep_index, rec.trial, secs
            )
            .map_err(io_err(&timings_path))?;
        }
        writeln!(f, "total {:.3}", started.elapsed().as_secs_f64())
            .map_err(io_err(&timings_path))?;
    }

    let records: Vec<TrialRecord> = timed.into_iter().map(|(r, _)| r).collect();
    let summary = summarize(master_seed, &records);
    let summary_path = out_dir.join("summary.json");
    std::fs::write(
        &summary_path,
        serde_json::to_string_pretty(&summary).map_err(HarnessError::Serde)?,
    )
    .map_err(io_err(&summary_path))?;

    if records.iter().all(|r| r.failure.is_some()) {
        return Err(HarnessError::AllTrialsFailed(records.len()));
    }
    Ok(summary)
}

/// Aggregates per-trial records; recomputable from `records.jsonl` alone.
pub fn summarize(master_seed: u64, records: &[TrialRecord]) -> ExperimentSummary {
    let mut sweeps: Vec<SweepSummary> = Vec::new();
    let max_sweep = records.iter().map(|r| r.sweep_index).max().unwrap_or(0);
    for s in 0..=max_sweep {
        let rows: Vec<&TrialRecord> = records.iter().filter(|r| r.sweep_index == s).collect();
        if rows.is_empty() {
            continue;
        }
        let completed: Vec<f64> = rows.iter().filter_map(|r| r.final_error).collect();
        let successes = rows.iter().filter(|r| r.success).count();
        let failures = rows.iter().filter(|r| r.failure.is_some()).count();
        let mean = if completed.is_empty() {
            None
        } else {
            Some(completed.iter().sum::<f64>() / completed.len() as f64)
        };
        let std = mean.map(|m| {
            (completed.iter().map(|e| (e - m) * (e - m)).sum::<f64>()
                / completed.len().max(1) as f64)
                .sqrt()
        });
        sweeps.push(SweepSummary {
            sweep_index: s,
            eta: rows[0].eta,
            epsilon: rows[0].epsilon,
            trials: rows.len(),
            failures,
            success_rate: successes as f64 / rows.len() as f64,
            mean_final_error: mean,
            std_final_error: std,
            mean_labels: rows.iter().map(|r| r.labels_used as f64).sum::<f64>() / rows.len() as f64,
        });
    }
    ExperimentSummary {
        master_seed,
        sweeps,
    }
}

/// One head-to-head row: the same oracle seed drives all three learners.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareRecord {
    pub trial: usize,
    pub seed: u64,
    pub eta: f64,
    pub epsilon: f64,
    pub localized_error: Option<f64>,
    pub localized_labels: u64,
    pub averaging_error: Option<f64>,
    pub plain_hinge_error: Option<f64>,
    pub baseline_labels: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareSummary {
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub localized_successes: usize,
    pub averaging_successes: usize,
    pub plain_hinge_successes: usize,
    pub trials: usize,
}

/// Feeds identical oracle seeds to the localized learner, the averaging
/// baseline, and plain hinge minimization without localization; baselines get
/// the same number of labels the localized learner spends.
pub fn compare_baselines(
    cfg: &ExperimentConfig,
    master_seed: u64,
    out_dir: &Path,
) -> Result<CompareSummary, HarnessError> {
    let kind: DistKind = cfg.distribution.kind.into();
    let ctx = TrialContext {
        cfg,
        constants: cfg.constants(),
        kind,
        dim: cfg.distribution.dim,
        opts: LearnerOptions {
            hinge_max_iters: cfg.schedule.hinge_max_iters.unwrap_or(20_000),
            ..LearnerOptions::default()
        },
    };
    let epsilon = cfg.epsilon_points()[0];
    let eta = cfg.eta_points()[0];
    let trials = cfg.learning.trials;

    let records: Vec<CompareRecord> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let plan = TrialPlan {
                sweep_index: 0,
                trial,
                eta,
                epsilon,
            };
            let localized = run_one_trial(&ctx, &plan, master_seed);
            let seed = localized.seed;
            let budget = cfg
                .schedule
                .baseline_labels
                .unwrap_or(localized.labels_used.max(100) as usize);
            // Baselines: fresh oracle with the identical seed, passive sample.
            let mut bo = make_oracle(&ctx, eta, seed).expect("oracle config validated");
            let mut sample = Vec::with_capacity(budget);
            for _ in 0..budget {
                let (id, x) = bo.draw_unlabeled();
                let y = bo.reveal_label(id).expect("fresh id") as f64;
                sample.push((x, y));
            }
            let averaging_error = averaging_baseline(&sample)
                .ok()
                .map(|w| exact_error_uniform(&w, bo.target()));
            let plain_hinge_error = plain_hinge_baseline(sample, 1.0, ctx.opts.hinge_max_iters)
                .ok()
                .map(|w| exact_error_uniform(&w, bo.target()));
            CompareRecord {
                trial,
                seed,
                eta,
                epsilon,
                localized_error: localized
                    .final_error
                    .filter(|_| localized.failure.is_none()),
                localized_labels: localized.labels_used,
                averaging_error,
                plain_hinge_error,
                baseline_labels: budget,
            }
        })
        .collect();
    let mut records = records;
    records.sort_by_key(|r| r.trial);

    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let path = out_dir.join("comparisons.jsonl");
    {
        let mut f = std::fs::File::create(&path).map_err(io_err(&path))?;
        for rec in &records {
            serde_json::to_writer(&mut f, rec)?;
            f.write_all(b"\n").map_err(io_err(&path))?;
        }
    }
    let summary = CompareSummary {
        master_seed,
        seeds: records.iter().map(|r| r.seed).collect(),
        localized_successes: records
            .iter()
            .filter(|r| r.localized_error.map(|e| e <= epsilon).unwrap_or(false))
            .count(),
        averaging_successes: records
            .iter()
            .filter(|r| r.averaging_error.map(|e| e <= epsilon).unwrap_or(false))
            .count(),
        plain_hinge_successes: records
            .iter()
            .filter(|r| r.plain_hinge_error.map(|e| e <= epsilon).unwrap_or(false))
            .count(),
        trials,
    };
    let spath = out_dir.join("compare_summary.json");
    std::fs::write(&spath, serde_json::to_string_pretty(&summary)?).map_err(io_err(&spath))?;
    Ok(summary)
}

/// Reads `records.jsonl` back from a results directory.
pub fn load_records(dir: &Path) -> Result<Vec<TrialRecord>, HarnessError> {
    let path = dir.join("records.jsonl");
    let text = std::fs::read_to_string(&path)
        .map_err(|_| HarnessError::MissingResults(path.display().to_string()))?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line)?);
    }
    if out.is_empty() {
        return Err(HarnessError::MissingResults(path.display().to_string()));
    }
    Ok(out)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Emits plain-text plot data: error-vs-eta and labels-vs-log2(1/epsilon)
/// curves with mean and standard-deviation columns.
pub fn emit_plot_data(results_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let records = load_records(results_dir)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();

    // error vs eta, one row per (epsilon, eta) aggregate.
    let mut keys: Vec<(u64, u64)> = records
        .iter()
        .map(|r| (r.epsilon.to_bits(), r.eta.to_bits()))
        .collect();
    keys.sort();
    keys.dedup();
    let path = out_dir.join("error_vs_eta.tsv");
    {
        let mut f = std::fs::File::create(&path).map_err(io_err(&path))?;
        writeln!(
            f,
            "epsilon\teta\tmean_error\tstd_error\tsuccess_rate\ttrials"
        )
        .map_err(io_err(&path))?;
        for (eb, nb) in &keys {
            let rows: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| r.epsilon.to_bits() == *eb && r.eta.to_bits() == *nb)
                .collect();
            let errors: Vec<f64> = rows.iter().filter_map(|r| r.final_error).collect();
            let (mean, std) = mean_std(&errors);
            let success = rows.iter().filter(|r| r.success).count() as f64 / rows.len() as f64;
            writeln!(
                f,
                "{}\t{}\t{:.6}\t{:.6}\t{:.3}\t{}",
                f64::from_bits(*eb),
                f64::from_bits(*nb),
                mean,
                std,
                success,
                rows.len()
            )
            .map_err(io_err(&path))?;
        }
    }
    written.push(path);

    // labels vs log2(1/epsilon).
    let mut eps_keys: Vec<u64> = records.iter().map(|r| r.epsilon.to_bits()).collect();
    eps_keys.sort();
    eps_keys.dedup();
    let path = out_dir.join("labels_vs_log2eps.tsv");
    {
        let mut f = std::fs::File::create(&path).map_err(io_err(&path))?;
        writeln!(
            f,
            "epsilon\tlog2_inv_eps\trounds\tmean_labels\tstd_labels\ttrials"
        )
        .map_err(io_err(&path))?;
        for eb in &eps_keys {
            let rows: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| r.epsilon.to_bits() == *eb)
                .collect();
            let labels: Vec<f64> = rows.iter().map(|r| r.labels_used as f64).collect();
            let (mean, std) = mean_std(&labels);
            let eps = f64::from_bits(*eb);
            writeln!(
                f,
                "{}\t{:.4}\t{}\t{:.2}\t{:.2}\t{}",
                eps,
                (1.0 / eps).log2(),
                rows[0].rounds_planned,
                mean,
                std,
                rows.len()
            )
            .map_err(io_err(&path))?;
        }
    }
    written.push(path);
    Ok(written)
}

/// Convenience used by tests and the CLI: the starting-vector mode equivalent
/// to the config's `cheat_w0_angle` resolution, exposed so baselines and
/// hand-rolled probes stay consistent with `run_experiment`.
pub fn cheat_w0(target: &DVector<f64>, angle: f64, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x57A2_7AC3);
    let e = random_unit_orthogonal(target, &mut rng);
    target * angle.cos() + &e * angle.sin()
}
