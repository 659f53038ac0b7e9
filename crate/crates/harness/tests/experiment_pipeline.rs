//! Harness pipeline checks: record counts, summary recomputability, paired
//! baseline seeds, the epsilon-sweep plot file, and the monotone noise trend.

use halfspace_harness::experiment::{
    compare_baselines, emit_plot_data, load_records, run_experiment, summarize,
};
use halfspace_harness::ExperimentConfig;

fn small_config(extra: &str) -> ExperimentConfig {
    let text = format!(
        r#"
[distribution]
kind = "uniform-sphere"
dim = 8

[noise]
model = "malicious"
strategy = "band-attack"
{extra}

[learning]
epsilon = 0.125
trials = 5
cheat_w0_angle = 0.7853981633974483

[schedule]
n_per_round = 1000
m_per_round = 150
"#
    );
    ExperimentConfig::from_str_with_overrides(&text, &[]).unwrap()
}

#[test]
fn eta_sweep_produces_trials_times_points_records() {
    let cfg = small_config("eta_sweep = [0.0, 0.0078125, 0.015625, 0.03125]");
    let dir = tempfile::tempdir().unwrap();
    let summary = run_experiment(&cfg, 21, dir.path()).unwrap();
    let records = load_records(dir.path()).unwrap();
    assert_eq!(records.len(), 20, "4 sweep points x 5 trials");
    assert_eq!(summary.sweeps.len(), 4);
    for s in &summary.sweeps {
        assert_eq!(s.trials, 5);
    }
}

#[test]
fn summary_is_recomputable_from_records() {
    let cfg = small_config("eta_sweep = [0.0, 0.015625]");
    let dir = tempfile::tempdir().unwrap();
    let written = run_experiment(&cfg, 22, dir.path()).unwrap();
    let records = load_records(dir.path()).unwrap();
    let recomputed = summarize(22, &records);
    let a = serde_json::to_string(&written).unwrap();
    let b = serde_json::to_string(&recomputed).unwrap();
    assert_eq!(a, b, "summary must be a pure function of the records");
}

#[test]
fn monotone_noise_sensitivity_trend() {
    // Final error is nondecreasing in eta for most paired seeds across
    // eta in {0, eps/16, eps/8, eps/4}.
    let eps = 0.125;
    let cfg = small_config(&format!(
        "eta_sweep = [0.0, {}, {}, {}]",
        eps / 16.0,
        eps / 8.0,
        eps / 4.0
    ));
    let mut cfg = cfg;
    cfg.learning.trials = 10;
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&cfg, 23, dir.path()).unwrap();
    let records = load_records(dir.path()).unwrap();
    for pair in 0..3usize {
        let mut nondecreasing = 0;
        for trial in 0..10usize {
            let lo = records
                .iter()
                .find(|r| r.sweep_index == pair && r.trial == trial)
                .and_then(|r| r.final_error);
            let hi = records
                .iter()
                .find(|r| r.sweep_index == pair + 1 && r.trial == trial)
                .and_then(|r| r.final_error);
            if let (Some(lo), Some(hi)) = (lo, hi) {
                if hi >= lo - 1e-3 {
                    nondecreasing += 1;
                }
            }
        }
        assert!(
            nondecreasing >= 7,
            "eta step {pair}: only {nondecreasing}/10 paired seeds nondecreasing"
        );
    }
}

#[test]
fn epsilon_sweep_emits_monotone_label_rows() {
    let text = r#"
[distribution]
kind = "uniform-sphere"
dim = 8

[noise]
model = "malicious"
strategy = "random-flip"
eta = 0.0

[learning]
epsilon_sweep = [0.125, 0.0625, 0.03125]
trials = 3
cheat_w0_angle = 0.7853981633974483

[schedule]
n_per_round = 1000
m_per_round = 150
"#;
    let cfg = ExperimentConfig::from_str_with_overrides(text, &[]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&cfg, 24, dir.path()).unwrap();
    let files = emit_plot_data(dir.path(), dir.path()).unwrap();
    assert!(files.iter().any(|f| f.ends_with("labels_vs_log2eps.tsv")));
    let table = std::fs::read_to_string(dir.path().join("labels_vs_log2eps.tsv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    // Rows sort ascending in epsilon, so label counts must grow as epsilon
    // shrinks: pair each row's log2(1/eps) with its mean labels.
    let mut pairs: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| {
            let cols: Vec<&str> = r.split('\t').collect();
            (cols[1].parse().unwrap(), cols[3].parse().unwrap())
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    assert!(
        pairs.windows(2).all(|w| w[1].1 > w[0].1),
        "label counts must grow with s: {pairs:?}"
    );
}

#[test]
fn failed_trials_do_not_corrupt_other_records() {
    // One sweep point violates the oracle's eta precondition and fails every
    // trial; the other sweep point succeeds. All records are present and the
    // run as a whole is not an error.
    let cfg = small_config("eta_sweep = [0.01, 0.3]");
    let dir = tempfile::tempdir().unwrap();
    let summary = run_experiment(&cfg, 27, dir.path()).unwrap();
    let records = load_records(dir.path()).unwrap();
    assert_eq!(records.len(), 10);
    let failed: Vec<_> = records.iter().filter(|r| r.failure.is_some()).collect();
    assert_eq!(failed.len(), 5, "exactly the eta = 0.3 sweep failed");
    assert!(failed.iter().all(|r| (r.eta - 0.3).abs() < 1e-12));
    let ok_sweep = summary.sweeps.iter().find(|s| s.eta == 0.01).unwrap();
    assert_eq!(ok_sweep.failures, 0);
    assert!(ok_sweep.success_rate > 0.0);
}

#[test]
fn compare_reports_identical_seed_list_for_all_learners() {
    let cfg = small_config("eta = 0.00390625");
    let dir = tempfile::tempdir().unwrap();
    let summary = compare_baselines(&cfg, 25, dir.path()).unwrap();
    assert_eq!(summary.seeds.len(), 5);
    // Every comparison row carries the shared seed, and the jsonl has one
    // row per trial with all three learners evaluated.
    let text = std::fs::read_to_string(dir.path().join("comparisons.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 5);
    for (row, seed) in rows.iter().zip(&summary.seeds) {
        assert_eq!(row["seed"].as_u64().unwrap(), *seed);
        assert!(row["averaging_error"].is_number());
        assert!(row["plain_hinge_error"].is_number());
    }
}

#[test]
fn compare_sanity_all_learners_pass_without_noise() {
    // At a generous accuracy target and zero noise, all three learners reach
    // epsilon when the baselines get the paired label budget.
    let text = r#"
[distribution]
kind = "uniform-sphere"
dim = 8

[noise]
model = "malicious"
strategy = "random-flip"
eta = 0.0

[learning]
epsilon = 0.125
trials = 5
cheat_w0_angle = 0.7853981633974483

[schedule]
n_per_round = 1000
m_per_round = 200
"#;
    let cfg = ExperimentConfig::from_str_with_overrides(text, &[]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let summary = compare_baselines(&cfg, 26, dir.path()).unwrap();
    assert_eq!(summary.localized_successes, 5, "localized");
    assert_eq!(summary.averaging_successes, 5, "averaging");
    assert_eq!(summary.plain_hinge_successes, 5, "plain hinge");
}
