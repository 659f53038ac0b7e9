//! The iterative localization learners and their parameter schedules.
//!
//! Each round conditions the working set on a band around the current
//! hypothesis, optionally reweights it with soft outlier removal (malicious
//! model), samples a labeled set, and minimizes the rescaled hinge loss over
//! a shrinking ball. The schedules implement the error-halving parameter
//! relations for the uniform-sphere case and the geometric-shrink relations
//! for the isotropic log-concave case; the absolute constants are
//! configurable because the analysis behind them never pins them
//! numerically, and the working-set and label-budget sizes default to
//! empirical values.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error as ThisError;

use crate::distributions::{
    exact_error_uniform, random_unit, random_unit_orthogonal, DistKind, Estimate,
};
use crate::error::Error;
use crate::hinge::{normalize, HingeProblem};
use crate::oracles::{ExampleOracle, NoiseModel, Provenance};
use crate::outlier::{normalize_weights, soft_outlier_removal, weighted_sample, OutlierProblem};
use crate::Result;

/// Calibration constants for the parameter schedules. The unit defaults
/// take every otherwise-unspecified absolute constant to be 1 (with the
/// precision parameter derived from them); [`CalibrationConstants::desk_scale`]
/// is the preset tuned for the experiment harness.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationConstants {
    /// Band-probability lower constant (uniform case, enters tau).
    pub c2_tilde: f64,
    /// Margin constant (uniform case, sets the band-width coefficient and
    /// the precision kappa = 1/(8 c4_tilde) unless overridden).
    pub c4_tilde: f64,
    /// Explicit precision override; derived from the other constants if None.
    pub kappa: Option<f64>,
    /// Band-width coefficient for the admissible case: b_k = c1' M^{-k}.
    pub c1_prime: f64,
    /// Part-1 lower density constant for the admissible case (enters tau).
    pub c2_prime: f64,
    /// Part-1 upper density constant for the admissible case (enters kappa
    /// and tau).
    pub c3_prime: f64,
    /// Optional alternate tau coefficient for the label-noise path; when
    /// set, tau_k = c4_prime * M^{-k} (admissible) or
    /// c4_prime * 2^{-k} / sqrt(d) (uniform) replaces the derived formula.
    pub c4_prime: Option<f64>,
    /// Error-to-angle constant (part 3); 1/pi is exact for both implemented
    /// distributions.
    pub c6: f64,
    /// Round shrink factor M > 1 for the admissible case.
    pub growth_m: f64,
    /// Log exponent in the admissible variance bound (0 uniform, 2 ILC).
    pub lambda: f64,
    /// Constant c in the admissible variance cap sigma^2_k.
    pub c_admissible: f64,
    /// Desk-scale floor on the removal budget xi_k. The strict xi relation
    /// backs a worst-case analysis and evaluates to ~1e-11, which would
    /// forbid removing any mass at the noise rates the experiments run;
    /// the floor keeps the removal precondition (dirty fraction <= xi/2)
    /// satisfiable. Zero keeps the strict relation.
    pub xi_floor: f64,
}

impl CalibrationConstants {
    /// Every unspecified absolute constant set to 1 (kappa derived), the
    /// admissible part-1 density constants at their Gaussian estimates.
    pub fn unit_defaults(kind: DistKind) -> Self {
        CalibrationConstants {
            c2_tilde: 1.0,
            c4_tilde: 1.0,
            kappa: None,
            c1_prime: 1.0,
            c2_prime: 0.24,
            c3_prime: 0.4,
            c4_prime: None,
            c6: 1.0 / std::f64::consts::PI,
            growth_m: 2.0,
            lambda: match kind {
                DistKind::UniformSphere => 0.0,
                DistKind::IsotropicGaussian => 2.0,
            },
            c_admissible: 2.0,
            xi_floor: 0.0,
        }
    }

    /// Preset tuned for desk-scale experiments: wider bands for the uniform
    /// case (the calibrated margin constant is near 3) and a removal-budget
    /// floor compatible with the simulated noise rates.
    pub fn desk_scale(kind: DistKind) -> Self {
        let mut c = Self::unit_defaults(kind);
        if kind == DistKind::UniformSphere {
            c.c4_tilde = 3.0;
        }
        c.xi_floor = 0.25;
        c
    }

    fn kappa_uniform(&self) -> f64 {
        self.kappa.unwrap_or(1.0 / (8.0 * self.c4_tilde))
    }

    fn kappa_admissible(&self) -> f64 {
        self.kappa
            .unwrap_or(1.0 / (4.0 * self.c1_prime * self.c3_prime * self.growth_m))
    }
}

/// Per-round parameters.
#[derive(Debug, Clone, Copy)]
pub struct Round {
    /// 1-based round index.
    pub index: usize,
    /// Band cut-off installed after this round (b_k).
    pub b: f64,
    /// Band cut-off the round's working set was conditioned on (b_{k-1}).
    pub b_prev: f64,
    /// Hypothesis-ball radius r_k.
    pub r: f64,
    /// Hinge rescaling tau_k.
    pub tau: f64,
    /// Removal-rate bound xi_k.
    pub xi: f64,
    /// Directional variance cap sigma^2_k.
    pub sigma2: f64,
    /// z_k^2 as used by the xi relation.
    pub z2: f64,
    /// Working-set size n_k.
    pub n: usize,
    /// Label budget m_k.
    pub m: usize,
}

/// Full parameter schedule for one run.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub kind: DistKind,
    pub dim: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub kappa: f64,
    pub rounds: Vec<Round>,
    pub constants: CalibrationConstants,
}

impl Schedule {
    pub fn s(&self) -> usize {
        self.rounds.len()
    }

    /// Overrides every round's working-set and label-budget sizes.
    pub fn with_sizes(mut self, n: usize, m: usize) -> Self {
        for rd in &mut self.rounds {
            rd.n = n.max(1);
            rd.m = m.max(1);
        }
        self
    }

    /// Hinge tolerance used by every round (kappa / 8).
    pub fn hinge_tolerance(&self) -> f64 {
        self.kappa / 8.0
    }
}

/// Builds the fully populated schedule for the given distribution kind.
pub fn default_schedule(
    kind: DistKind,
    epsilon: f64,
    delta: f64,
    dim: usize,
    constants: &CalibrationConstants,
) -> Result<Schedule> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::InvalidEpsilon {
            reason: format!("epsilon {epsilon} not in (0, 1/2)"),
        });
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidEpsilon {
            reason: format!("delta {delta} not in (0, 1)"),
        });
    }
    if dim < 2 {
        return Err(Error::invalid("dim", format!("{dim} < 2")));
    }
    let d = dim as f64;
    let n_default = 2000.max(50 * dim);
    let m_default = 200.max(10 * dim);
    let rounds = match kind {
        DistKind::UniformSphere => {
            let s = (1.0 / epsilon).log2().ceil() as usize;
            let kappa = constants.kappa_uniform();
            let b = |j: usize| constants.c4_tilde * 0.5f64.powi(j as i32) / d.sqrt();
            (1..=s.max(1))
                .map(|k| {
                    let r = std::f64::consts::PI * 0.5f64.powi(k as i32);
                    let b_prev = b(k - 1);
                    let tau = match constants.c4_prime {
                        Some(c4p) => c4p * 0.5f64.powi(k as i32) / d.sqrt(),
                        None => kappa * constants.c2_tilde * b_prev / 12.0,
                    };
                    let z2 = r * r / (d - 1.0) + b_prev * b_prev;
                    let xi_formula =
                        (kappa / 128.0).min(kappa * kappa * tau * tau / (16384.0 * z2));
                    Round {
                        index: k,
                        b: b(k),
                        b_prev,
                        r,
                        tau,
                        xi: xi_formula.max(constants.xi_floor).min(1.0),
                        sigma2: 2.0 * z2,
                        z2,
                        n: n_default,
                        m: m_default,
                    }
                })
                .collect()
        }
        DistKind::IsotropicGaussian => {
            let m_growth = constants.growth_m;
            if m_growth.partial_cmp(&1.0) != Some(std::cmp::Ordering::Greater) {
                return Err(Error::invalid("growth_m", format!("{m_growth} <= 1")));
            }
            let s = ((1.0 / epsilon).ln() / m_growth.ln()).ceil() as usize;
            let kappa = constants.kappa_admissible();
            let b = |j: usize| constants.c1_prime * m_growth.powi(-(j as i32));
            (1..=s.max(1))
                .map(|k| {
                    let r = (m_growth.powi(-(k as i32 - 1)) / constants.c6)
                        .min(std::f64::consts::FRAC_PI_2);
                    let b_prev = b(k - 1);
                    let tau = match constants.c4_prime {
                        Some(c4p) => c4p * m_growth.powi(-(k as i32)),
                        None => {
                            constants.c2_prime * b_prev.min(1.0) * kappa
                                / (6.0 * constants.c3_prime)
                        }
                    };
                    let z2 = r * r + b_prev * b_prev;
                    let log_factor = (1.0 + 1.0 / b_prev).ln().powf(constants.lambda);
                    let xi_formula = (kappa / 128.0)
                        .min(kappa * kappa * tau * tau / (1024.0 * z2 * log_factor.max(1e-300)));
                    Round {
                        index: k,
                        b: b(k),
                        b_prev,
                        r,
                        tau,
                        xi: xi_formula.max(constants.xi_floor).min(1.0),
                        sigma2: constants.c_admissible * log_factor * z2,
                        z2,
                        n: n_default,
                        m: m_default,
                    }
                })
                .collect()
        }
    };
    Ok(Schedule {
        kind,
        dim,
        epsilon,
        delta,
        kappa: match kind {
            DistKind::UniformSphere => constants.kappa_uniform(),
            DistKind::IsotropicGaussian => constants.kappa_admissible(),
        },
        rounds,
        constants: *constants,
    })
}

/// Knobs the harness can turn without touching the schedule.
#[derive(Debug, Clone, Copy)]
pub struct LearnerOptions {
    /// Iteration cap for each hinge minimization.
    pub hinge_max_iters: usize,
    /// Total oracle draws allowed per working-set refill.
    pub fill_attempt_budget: u64,
}

impl Default for LearnerOptions {
    fn default() -> Self {
        LearnerOptions {
            hinge_max_iters: 20_000,
            fill_attempt_budget: 10_000_000,
        }
    }
}

/// Per-round diagnostics. Error and provenance figures are computed against
/// harness-visible ground truth; the learner's decisions never depend on them.
#[derive(Debug, Clone)]
pub struct RoundStats {
    pub round: usize,
    pub error_exact: f64,
    pub retained_mass_frac: f64,
    pub certified_variance: f64,
    pub variance_cap: f64,
    pub in_band_dirty_frac: f64,
    pub hinge_value: f64,
    pub hinge_certified: bool,
    pub labels_requested: usize,
    pub labels_revealed_new: u64,
    pub unlabeled_drawn: u64,
    pub step_norm: f64,
}

/// A completed run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub w: DVector<f64>,
    pub rounds: Vec<RoundStats>,
    pub labels_total: u64,
    pub unlabeled_total: u64,
}

/// A failed run: the failing round, the wrapped error, and the statistics of
/// the rounds that did complete.
#[derive(Debug, Clone, ThisError)]
#[error("run failed at round {round}: {source}")]
pub struct RunFailure {
    pub round: usize,
    #[source]
    pub source: Error,
    pub partial: Vec<RoundStats>,
}

fn fail(round: usize, err: Error, partial: &[RoundStats]) -> RunFailure {
    RunFailure {
        round,
        source: Error::RoundFailed {
            round,
            source: Box::new(err),
        },
        partial: partial.to_vec(),
    }
}

/// Draws until `count` accepted points are collected; `halfwidth = None`
/// accepts everything (round-1 fill).
fn fill_working_set(
    oracle: &mut ExampleOracle,
    w: &DVector<f64>,
    halfwidth: Option<f64>,
    count: usize,
    budget: u64,
) -> Result<Vec<(usize, DVector<f64>)>> {
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0u64;
    while out.len() < count {
        if attempts >= budget {
            return Err(Error::RejectionBudgetExceeded { attempts });
        }
        attempts += 1;
        let (id, x) = oracle.draw_unlabeled();
        match halfwidth {
            Some(b) if w.dot(&x).abs() >= b => {}
            _ => out.push((id, x)),
        }
    }
    Ok(out)
}

fn dirty_fraction(oracle: &ExampleOracle, set: &[(usize, DVector<f64>)]) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    let dirty = set
        .iter()
        .filter(|(id, _)| matches!(oracle.provenance(*id), Ok(Provenance::Dirty)))
        .count();
    dirty as f64 / set.len() as f64
}

/// Runs the malicious-noise algorithm: soft outlier removal, weighted label
/// sampling, and constrained hinge minimization, round by round.
pub fn run_malicious(
    oracle: &mut ExampleOracle,
    schedule: &Schedule,
    w0: &DVector<f64>,
    opts: &LearnerOptions,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<RunOutcome, RunFailure> {
    run_rounds(oracle, schedule, w0, opts, rng, NoiseModel::Malicious)
}

/// Runs the adversarial-label-noise algorithm: no outlier removal, every
/// working-set label revealed, hinge minimized directly.
pub fn run_label_noise(
    oracle: &mut ExampleOracle,
    schedule: &Schedule,
    w0: &DVector<f64>,
    opts: &LearnerOptions,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<RunOutcome, RunFailure> {
    run_rounds(
        oracle,
        schedule,
        w0,
        opts,
        rng,
        NoiseModel::AdversarialLabel,
    )
}

fn run_rounds(
    oracle: &mut ExampleOracle,
    schedule: &Schedule,
    w0: &DVector<f64>,
    opts: &LearnerOptions,
    rng: &mut ChaCha8Rng,
    expect_model: NoiseModel,
) -> std::result::Result<RunOutcome, RunFailure> {
    let mut stats: Vec<RoundStats> = Vec::new();
    if oracle.model() != expect_model {
        return Err(fail(
            0,
            Error::ModelMismatch {
                expected: expect_model.name(),
                actual: oracle.model().name(),
            },
            &stats,
        ));
    }
    let malicious = expect_model == NoiseModel::Malicious;
    let mut w = match normalize(w0) {
        Ok(w) => w,
        Err(e) => return Err(fail(0, e, &stats)),
    };
    let ledger0 = oracle.ledger();
    let first = &schedule.rounds[0];
    oracle.publish_state(&w, first.b_prev);

    // Step 1: the initial working set is unconditioned draws.
    let first_count = if malicious { first.n } else { first.m };
    let mut working =
        match fill_working_set(oracle, &w, None, first_count, opts.fill_attempt_budget) {
            Ok(ws) => ws,
            Err(e) => return Err(fail(1, e, &stats)),
        };

    for rd in &schedule.rounds {
        let k = rd.index;
        let labels_before = oracle.ledger().label_queries;
        let draws_before = oracle.ledger().unlabeled_draws;
        let in_band_dirty = dirty_fraction(oracle, &working);

        let (examples, weights_stats) = if malicious {
            // Soft outlier removal on the working set, then labels for a
            // weighted sample of size m_k.
            let points: Vec<DVector<f64>> = working.iter().map(|(_, x)| x.clone()).collect();
            let problem = match OutlierProblem::new(points, w.clone(), rd.r, rd.xi, rd.sigma2) {
                Ok(p) => p,
                Err(e) => return Err(fail(k, e, &stats)),
            };
            let soft = match soft_outlier_removal(&problem) {
                Ok(s) => s,
                Err(e) => return Err(fail(k, e, &stats)),
            };
            let normalized = match normalize_weights(&soft.q) {
                Ok(nw) => nw,
                Err(e) => return Err(fail(k, e, &stats)),
            };
            let picks = weighted_sample(&normalized.p, rd.m, rng);
            let mut examples = Vec::with_capacity(picks.len());
            for idx in picks {
                let (id, x) = &working[idx];
                let y = match oracle.reveal_label(*id) {
                    Ok(y) => y,
                    Err(e) => return Err(fail(k, e, &stats)),
                };
                examples.push((x.clone(), y as f64));
            }
            let mass_frac = soft.retained_mass / working.len() as f64;
            (examples, (mass_frac, soft.worst_value))
        } else {
            // Label-noise path: reveal every label in the working set.
            let mut examples = Vec::with_capacity(working.len());
            for (id, x) in &working {
                let y = match oracle.reveal_label(*id) {
                    Ok(y) => y,
                    Err(e) => return Err(fail(k, e, &stats)),
                };
                examples.push((x.clone(), y as f64));
            }
            (examples, (1.0, 0.0))
        };

        let problem = match HingeProblem::new(
            examples,
            rd.tau,
            w.clone(),
            rd.r,
            schedule.hinge_tolerance(),
        ) {
            Ok(p) => p.with_max_iters(opts.hinge_max_iters),
            Err(e) => return Err(fail(k, e, &stats)),
        };
        let outcome = problem.minimize();
        let w_next = match normalize(&outcome.v) {
            Ok(w) => w,
            Err(e) => return Err(fail(k, e, &stats)),
        };
        let step_norm = (&w_next - &w).norm();
        w = w_next;
        oracle.publish_state(&w, rd.b);

        // Refill under the new band for the next round.
        let mut unlabeled_this_round = oracle.ledger().unlabeled_draws - draws_before;
        if k < schedule.s() {
            let next = &schedule.rounds[k];
            let count = if malicious { next.n } else { next.m };
            working =
                match fill_working_set(oracle, &w, Some(rd.b), count, opts.fill_attempt_budget) {
                    Ok(ws) => ws,
                    Err(e) => return Err(fail(k, e, &stats)),
                };
            unlabeled_this_round = oracle.ledger().unlabeled_draws - draws_before;
        } else {
            working.clear();
        }

        stats.push(RoundStats {
            round: k,
            error_exact: exact_error_uniform(&w, oracle.target()),
            retained_mass_frac: weights_stats.0,
            certified_variance: weights_stats.1,
            variance_cap: rd.sigma2 * 1.05,
            in_band_dirty_frac: in_band_dirty,
            hinge_value: outcome.objective,
            hinge_certified: outcome.certified,
            labels_requested: rd.m,
            labels_revealed_new: oracle.ledger().label_queries - labels_before,
            unlabeled_drawn: unlabeled_this_round,
            step_norm,
        });
    }

    let ledger = oracle.ledger();
    Ok(RunOutcome {
        w,
        rounds: stats,
        labels_total: ledger.label_queries - ledger0.label_queries,
        unlabeled_total: ledger.unlabeled_draws - ledger0.unlabeled_draws,
    })
}

/// How the starting vector is produced.
#[derive(Debug, Clone, Copy)]
pub enum W0Mode {
    /// Simulation-only shortcut: a vector at the given angle from the target.
    Cheat { angle: f64 },
    /// Run the learner from a random u and from -u at a coarse target error,
    /// then keep the candidate that wins a labeled hypothesis test.
    Honest,
}

/// Produces a starting vector whose angle with the target is acute (with
/// high probability in honest mode; by construction in cheat mode).
pub fn init_w0(
    oracle: &mut ExampleOracle,
    schedule: &Schedule,
    mode: W0Mode,
    opts: &LearnerOptions,
    rng: &mut ChaCha8Rng,
) -> Result<DVector<f64>> {
    match mode {
        W0Mode::Cheat { angle } => {
            let target = oracle.target().clone();
            let e = random_unit_orthogonal(&target, rng);
            Ok(&target * angle.cos() + &e * angle.sin())
        }
        W0Mode::Honest => {
            // Coarse accuracy pi*c6/4 expressed as an error target; with the
            // exact c6 = 1/pi of both implemented distributions this is 1/4.
            let coarse_eps = (std::f64::consts::PI * schedule.constants.c6 / 4.0).clamp(0.05, 0.45);
            let coarse = default_schedule(
                schedule.kind,
                coarse_eps,
                schedule.delta,
                schedule.dim,
                &schedule.constants,
            )?;
            let u = random_unit(schedule.dim, rng);
            let mut candidates = Vec::with_capacity(2);
            for start in [u.clone(), -u] {
                let run = match oracle.model() {
                    NoiseModel::Malicious => run_malicious(oracle, &coarse, &start, opts, rng),
                    NoiseModel::AdversarialLabel => {
                        run_label_noise(oracle, &coarse, &start, opts, rng)
                    }
                };
                match run {
                    Ok(out) => candidates.push(out.w),
                    Err(f) => return Err(f.source),
                }
            }
            // Hypothesis test on O(log(1/delta)) labeled draws.
            let m_test = 64.max((48.0 * (1.0 / schedule.delta).ln()).ceil() as usize);
            let mut disagreements = vec![0usize; candidates.len()];
            for _ in 0..m_test {
                let (id, x) = oracle.draw_unlabeled();
                let y = oracle.reveal_label(id)?;
                for (c, cand) in candidates.iter().enumerate() {
                    let pred = if cand.dot(&x) >= 0.0 { 1 } else { -1 };
                    if pred != y {
                        disagreements[c] += 1;
                    }
                }
            }
            let best = disagreements
                .iter()
                .enumerate()
                .min_by_key(|(_, d)| **d)
                .map(|(i, _)| i)
                .unwrap_or(0);
            Ok(candidates.swap_remove(best))
        }
    }
}

/// Outcome of the agnostic reduction.
#[derive(Debug, Clone)]
pub struct AgnosticOutcome {
    pub w: DVector<f64>,
    pub eps_prime: f64,
    /// Monte-Carlo estimate of the label error of the returned hypothesis.
    pub measured_label_error: Estimate,
    /// The triangle-inequality certificate target opt_bound + eps_prime.
    pub bound: f64,
    pub within_bound: bool,
    pub run: RunOutcome,
}

/// Agnostic wrapper: runs the label-noise learner at the inflated accuracy
/// eps' = c (OPT + eps) and records the triangle-inequality certificate.
#[allow(clippy::too_many_arguments)]
pub fn agnostic_wrap(
    oracle: &mut ExampleOracle,
    opt_bound: f64,
    epsilon: f64,
    approx_c: f64,
    constants: &CalibrationConstants,
    delta: f64,
    w0: &DVector<f64>,
    opts: &LearnerOptions,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<AgnosticOutcome, RunFailure> {
    let eps_prime = (approx_c * (opt_bound + epsilon)).clamp(1e-4, 0.49);
    let schedule = match default_schedule(
        oracle.dist().kind(),
        eps_prime,
        delta,
        oracle.dist().dim(),
        constants,
    ) {
        Ok(s) => s,
        Err(e) => {
            return Err(RunFailure {
                round: 0,
                source: e,
                partial: Vec::new(),
            })
        }
    };
    let run = run_label_noise(oracle, &schedule, w0, opts, rng)?;
    // Measure err(h) against the noisy labels on fresh draws.
    let n_mc = 20_000usize;
    let mut wrong = 0usize;
    for _ in 0..n_mc {
        let (id, x) = oracle.draw_unlabeled();
        let y = oracle.reveal_label(id).map_err(|e| RunFailure {
            round: schedule.s(),
            source: e,
            partial: run.rounds.clone(),
        })?;
        let pred = if run.w.dot(&x) >= 0.0 { 1 } else { -1 };
        if pred != y {
            wrong += 1;
        }
    }
    let p = wrong as f64 / n_mc as f64;
    let se = (p * (1.0 - p) / n_mc as f64).sqrt();
    let bound = opt_bound + eps_prime;
    Ok(AgnosticOutcome {
        w: run.w.clone(),
        eps_prime,
        measured_label_error: Estimate {
            mean: p,
            std_err: se,
        },
        bound,
        within_bound: p <= bound + 3.0 * se,
        run,
    })
}

/// The averaging baseline: normalize(sum y x).
pub fn averaging_baseline(examples: &[(DVector<f64>, f64)]) -> Result<DVector<f64>> {
    if examples.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut sum = DVector::zeros(examples[0].0.len());
    for (x, y) in examples {
        sum.axpy(*y, x, 1.0);
    }
    normalize(&sum)
}

/// Plain hinge minimization over the unit ball, no localization.
pub fn plain_hinge_baseline(
    examples: Vec<(DVector<f64>, f64)>,
    tau: f64,
    max_iters: usize,
) -> Result<DVector<f64>> {
    if examples.is_empty() {
        return Err(Error::EmptySet);
    }
    let dim = examples[0].0.len();
    let problem =
        HingeProblem::new(examples, tau, DVector::zeros(dim), 1.0, 1e-3)?.with_max_iters(max_iters);
    let out = problem.minimize();
    normalize(&out.v)
}

/// Monte-Carlo estimates of the uniform-case calibration constants for a
/// given dimension, fit against the band-probability and margin
/// inequalities the schedule relies on.
#[derive(Debug, Clone, Copy)]
pub struct UniformCalibration {
    pub c2_tilde: f64,
    pub c4_tilde: f64,
    pub samples_per_probe: usize,
}

/// Estimates c4_tilde (the smallest margin coefficient for which the
/// disagreement-outside-margin probability stays below alpha/(8 pi)) and
/// c2_tilde (the implied band-probability lower constant on the matching
/// interval range).
pub fn calibrate_uniform<R: Rng + ?Sized>(
    dim: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<UniformCalibration> {
    let dist = crate::distributions::Distribution::uniform_sphere(dim)?;
    let d = dim as f64;
    let c3_target = 1.0 / (8.0 * std::f64::consts::PI);
    let alphas = [
        std::f64::consts::PI / 8.0,
        std::f64::consts::PI / 16.0,
        std::f64::consts::PI / 32.0,
    ];
    let grid: Vec<f64> = (1..=32).map(|i| i as f64 * 0.25).collect();
    let mut c4 = 0.25f64;
    for &alpha in &alphas {
        let u = random_unit(dim, rng);
        let e = random_unit_orthogonal(&u, rng);
        let v = &u * alpha.cos() + &e * alpha.sin();
        // Normalized margins of disagreeing samples.
        let mut margins = Vec::new();
        for _ in 0..n_samples {
            let x = dist.sample(rng);
            if (u.dot(&x) >= 0.0) != (v.dot(&x) >= 0.0) {
                margins.push(v.dot(&x).abs() * d.sqrt() / alpha);
            }
        }
        let n = n_samples as f64;
        let needed = grid.iter().copied().find(|&c| {
            let p = margins.iter().filter(|&&m| m >= c).count() as f64 / n;
            let se = (p * (1.0 - p) / n).sqrt();
            p + 2.0 * se <= c3_target * alpha
        });
        match needed {
            Some(c) => c4 = c4.max(c),
            None => c4 = c4.max(*grid.last().unwrap()),
        }
    }
    // Lower density constant over intervals inside [-c4/sqrt(d), c4/sqrt(d)].
    let scale = c4 / d.sqrt();
    let mut c2 = f64::INFINITY;
    for _ in 0..12 {
        let u = random_unit(dim, rng);
        let mut a = rng.random_range(-scale..scale);
        let mut b = rng.random_range(-scale..scale);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        if b - a < 0.25 * scale {
            continue;
        }
        let mut hits = 0usize;
        for _ in 0..n_samples {
            let t = u.dot(&dist.sample(rng));
            if t >= a && t <= b {
                hits += 1;
            }
        }
        let p = hits as f64 / n_samples as f64;
        let se = (p * (1.0 - p) / n_samples as f64).sqrt();
        c2 = c2.min(((p - 2.0 * se) / ((b - a) * d.sqrt())).max(0.01));
    }
    if !c2.is_finite() {
        c2 = 0.01;
    }
    Ok(UniformCalibration {
        c2_tilde: c2,
        c4_tilde: c4,
        samples_per_probe: n_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{angle, Distribution};
    use crate::oracles::{AdversaryStrategy, NoiseOracleConfig};
    use rand::SeedableRng;

    fn oracle(
        kind: DistKind,
        dim: usize,
        model: NoiseModel,
        strategy: AdversaryStrategy,
        eta: f64,
        seed: u64,
    ) -> ExampleOracle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        let target = random_unit(dim, &mut rng);
        ExampleOracle::new(NoiseOracleConfig {
            model,
            eta,
            strategy,
            target,
            dist: Distribution::new(kind, dim).unwrap(),
            seed,
        })
        .unwrap()
    }

    #[test]
    fn uniform_schedule_round_count() {
        let c = CalibrationConstants::unit_defaults(DistKind::UniformSphere);
        let s = default_schedule(DistKind::UniformSphere, 1.0 / 32.0, 0.1, 5, &c).unwrap();
        assert_eq!(s.s(), 5);
    }

    #[test]
    fn uniform_schedule_sigma2_example() {
        // d = 11, k = 2, defaults c1 = c2_tilde = 1, kappa = 1/8:
        // sigma^2_2 = 2((pi/4)^2/10 + (1/2/sqrt(11))^2) ~ 0.1688.
        let c = CalibrationConstants::unit_defaults(DistKind::UniformSphere);
        assert!((c.kappa_uniform() - 0.125).abs() < 1e-15);
        let s = default_schedule(DistKind::UniformSphere, 0.2, 0.1, 11, &c).unwrap();
        let r2 = &s.rounds[1];
        let d = 11.0f64;
        let expect =
            2.0 * ((std::f64::consts::PI / 4.0).powi(2) / (d - 1.0) + (0.5 / d.sqrt()).powi(2));
        assert!((r2.sigma2 - expect).abs() < 1e-12);
        assert!((expect - 0.1688).abs() < 1e-4, "{expect}");
    }

    #[test]
    fn uniform_schedule_relations_hold_exactly() {
        let mut c = CalibrationConstants::unit_defaults(DistKind::UniformSphere);
        c.c4_tilde = 3.0;
        c.c2_tilde = 0.7;
        c.xi_floor = 0.2;
        let d = 20usize;
        let s = default_schedule(DistKind::UniformSphere, 1.0 / 32.0, 0.1, d, &c).unwrap();
        let kappa = 1.0 / (8.0 * c.c4_tilde);
        let df = d as f64;
        for (i, rd) in s.rounds.iter().enumerate() {
            let k = i + 1;
            let b_prev = c.c4_tilde * 0.5f64.powi(k as i32 - 1) / df.sqrt();
            let r = std::f64::consts::PI * 0.5f64.powi(k as i32);
            assert!((rd.b_prev - b_prev).abs() < 1e-15);
            assert!((rd.r - r).abs() < 1e-15);
            assert!((rd.tau - kappa * c.c2_tilde * b_prev / 12.0).abs() < 1e-15);
            let z2 = r * r / (df - 1.0) + b_prev * b_prev;
            assert!((rd.z2 - z2).abs() < 1e-15);
            assert!((rd.sigma2 - 2.0 * z2).abs() < 1e-15);
            let xi = (kappa / 128.0)
                .min(kappa * kappa * rd.tau * rd.tau / (16384.0 * z2))
                .max(c.xi_floor);
            assert!((rd.xi - xi).abs() < 1e-15);
        }
    }

    #[test]
    fn admissible_schedule_b3_example() {
        let c = CalibrationConstants::unit_defaults(DistKind::IsotropicGaussian);
        let s = default_schedule(DistKind::IsotropicGaussian, 0.05, 0.1, 6, &c).unwrap();
        // b_k = c1' M^{-k} with c1' = 1, M = 2: b_3 = 1/8 (round 4's b_prev).
        assert!((s.rounds[2].b - 0.125).abs() < 1e-15);
        assert!((s.rounds[3].b_prev - 0.125).abs() < 1e-15);
        // sigma^2 carries the ln^2 factor.
        let rd = &s.rounds[1];
        let lf = (1.0 + 1.0 / rd.b_prev).ln().powi(2);
        assert!((rd.sigma2 - 2.0 * lf * (rd.r * rd.r + rd.b_prev * rd.b_prev)).abs() < 1e-12);
    }

    #[test]
    fn c4_prime_overrides_the_tau_formula() {
        let mut c = CalibrationConstants::unit_defaults(DistKind::UniformSphere);
        c.c4_prime = Some(0.75);
        let d = 9usize;
        let s = default_schedule(DistKind::UniformSphere, 0.1, 0.1, d, &c).unwrap();
        for rd in &s.rounds {
            let want = 0.75 * 0.5f64.powi(rd.index as i32) / (d as f64).sqrt();
            assert!((rd.tau - want).abs() < 1e-15);
        }
        let mut c = CalibrationConstants::unit_defaults(DistKind::IsotropicGaussian);
        c.c4_prime = Some(0.3);
        let s = default_schedule(DistKind::IsotropicGaussian, 0.1, 0.1, d, &c).unwrap();
        for rd in &s.rounds {
            let want = 0.3 * 2.0f64.powi(-(rd.index as i32));
            assert!((rd.tau - want).abs() < 1e-15);
        }
    }

    #[test]
    fn schedule_rejects_bad_epsilon() {
        let c = CalibrationConstants::unit_defaults(DistKind::UniformSphere);
        assert!(matches!(
            default_schedule(DistKind::UniformSphere, 0.7, 0.1, 5, &c),
            Err(Error::InvalidEpsilon { .. })
        ));
        assert!(matches!(
            default_schedule(DistKind::UniformSphere, 0.1, 1.5, 5, &c),
            Err(Error::InvalidEpsilon { .. })
        ));
    }

    #[test]
    fn cheat_mode_w0_has_requested_angle() {
        let mut o = oracle(
            DistKind::UniformSphere,
            8,
            NoiseModel::Malicious,
            AdversaryStrategy::RandomFlip,
            0.0,
            5,
        );
        let c = CalibrationConstants::desk_scale(DistKind::UniformSphere);
        let s = default_schedule(DistKind::UniformSphere, 0.25, 0.1, 8, &c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w0 = init_w0(
            &mut o,
            &s,
            W0Mode::Cheat {
                angle: std::f64::consts::FRAC_PI_4,
            },
            &LearnerOptions::default(),
            &mut rng,
        )
        .unwrap();
        let theta = angle(&w0, o.target()).unwrap();
        assert!((theta - std::f64::consts::FRAC_PI_4).abs() < 1e-9);
    }

    #[test]
    fn model_mismatch_is_detected() {
        let mut o = oracle(
            DistKind::UniformSphere,
            6,
            NoiseModel::AdversarialLabel,
            AdversaryStrategy::RandomFlip,
            0.0,
            7,
        );
        let c = CalibrationConstants::desk_scale(DistKind::UniformSphere);
        let s = default_schedule(DistKind::UniformSphere, 0.25, 0.1, 6, &c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w0 = random_unit(6, &mut rng);
        let err = run_malicious(&mut o, &s, &w0, &LearnerOptions::default(), &mut rng).unwrap_err();
        assert_eq!(err.round, 0);
        match err.source {
            Error::RoundFailed { source, .. } => {
                assert!(matches!(*source, Error::ModelMismatch { .. }))
            }
            other => panic!("expected RoundFailed, got {other}"),
        }
    }

    #[test]
    fn averaging_baseline_basics() {
        let x = DVector::from_vec(vec![3.0, 4.0]);
        let w = averaging_baseline(&[(x.clone(), 1.0)]).unwrap();
        assert!((w - DVector::from_vec(vec![0.6, 0.8])).norm() < 1e-12);
        let err = averaging_baseline(&[(x.clone(), 1.0), (x, -1.0)]).unwrap_err();
        assert!(matches!(err, Error::ZeroVector));
    }

    #[test]
    fn averaging_baseline_learns_noise_free() {
        let mut o = oracle(
            DistKind::UniformSphere,
            10,
            NoiseModel::Malicious,
            AdversaryStrategy::RandomFlip,
            0.0,
            9,
        );
        let mut sample = Vec::new();
        for _ in 0..10_000 {
            let (id, x) = o.draw_unlabeled();
            let y = o.reveal_label(id).unwrap() as f64;
            sample.push((x, y));
        }
        let w = averaging_baseline(&sample).unwrap();
        let err = exact_error_uniform(&w, o.target());
        assert!(err <= 0.05, "averaging error {err}");
    }

    #[test]
    fn label_noise_run_counts_labels_exactly() {
        let mut o = oracle(
            DistKind::UniformSphere,
            6,
            NoiseModel::AdversarialLabel,
            AdversaryStrategy::InBandLabelFlip,
            0.01,
            10,
        );
        let c = CalibrationConstants::desk_scale(DistKind::UniformSphere);
        let s = default_schedule(DistKind::UniformSphere, 0.125, 0.1, 6, &c)
            .unwrap()
            .with_sizes(400, 120);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w0 = init_w0(
            &mut o,
            &s,
            W0Mode::Cheat { angle: 0.6 },
            &LearnerOptions::default(),
            &mut rng,
        )
        .unwrap();
        let out = run_label_noise(&mut o, &s, &w0, &LearnerOptions::default(), &mut rng).unwrap();
        let expected: u64 = s.rounds.iter().map(|r| r.m as u64).sum();
        assert_eq!(out.labels_total, expected);
    }

    #[test]
    fn malicious_run_noise_free_reaches_target() {
        let dim = 12;
        let mut o = oracle(
            DistKind::UniformSphere,
            dim,
            NoiseModel::Malicious,
            AdversaryStrategy::RandomFlip,
            0.0,
            12,
        );
        let c = CalibrationConstants::desk_scale(DistKind::UniformSphere);
        let eps = 1.0 / 8.0;
        let s = default_schedule(DistKind::UniformSphere, eps, 0.1, dim, &c)
            .unwrap()
            .with_sizes(1200, 160);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let w0 = init_w0(
            &mut o,
            &s,
            W0Mode::Cheat {
                angle: std::f64::consts::FRAC_PI_4,
            },
            &LearnerOptions::default(),
            &mut rng,
        )
        .unwrap();
        let out = run_malicious(&mut o, &s, &w0, &LearnerOptions::default(), &mut rng).unwrap();
        let err = exact_error_uniform(&out.w, o.target());
        assert!(err <= eps, "final error {err} > {eps}");
        // Hypothesis stays unit and moves by at most the round radius chord.
        for (i, rd) in out.rounds.iter().enumerate() {
            let r_k = s.rounds[i].r.min(std::f64::consts::PI);
            assert!(rd.step_norm <= 2.0 * (r_k / 2.0).sin() + 1e-6);
        }
    }

    #[test]
    fn honest_bootstrap_gets_acute_start() {
        let dim = 5;
        let c = CalibrationConstants::desk_scale(DistKind::UniformSphere);
        let s = default_schedule(DistKind::UniformSphere, 0.2, 0.2, dim, &c)
            .unwrap()
            .with_sizes(600, 100);
        let mut ok = 0;
        let trials = 6;
        for seed in 0..trials {
            let mut o = oracle(
                DistKind::UniformSphere,
                dim,
                NoiseModel::Malicious,
                AdversaryStrategy::RandomFlip,
                0.0,
                100 + seed,
            );
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let w0 = init_w0(
                &mut o,
                &s,
                W0Mode::Honest,
                &LearnerOptions::default(),
                &mut rng,
            )
            .unwrap();
            if exact_error_uniform(&w0, o.target()) < 0.5 {
                ok += 1;
            }
        }
        assert_eq!(ok, trials, "honest w0 failed in {} trials", trials - ok);
    }

    #[test]
    fn averaging_degrades_under_anti_target_noise() {
        // At eta = 0.2 the anti-target mass overwhelms the mean direction
        // entirely; the noise-free average stays accurate on the same budget.
        let dim = 10;
        let n = 5000;
        let mut errors = Vec::new();
        for eta in [0.0, 0.2] {
            let mut o = oracle(
                DistKind::UniformSphere,
                dim,
                NoiseModel::Malicious,
                AdversaryStrategy::AntiTarget,
                eta,
                31,
            );
            let mut sample = Vec::with_capacity(n);
            for _ in 0..n {
                let (id, x) = o.draw_unlabeled();
                let y = o.reveal_label(id).unwrap() as f64;
                sample.push((x, y));
            }
            let w = averaging_baseline(&sample).unwrap();
            errors.push(exact_error_uniform(&w, o.target()));
        }
        assert!(errors[0] < 0.05, "clean averaging error {}", errors[0]);
        assert!(
            errors[1] > 4.0 * errors[0].max(0.01),
            "anti-target barely degraded averaging: {errors:?}"
        );
    }

    #[test]
    fn agnostic_epsilon_inflation_is_monotone() {
        // Larger OPT bounds never decrease eps'.
        let c = 2.0f64;
        let eps = 0.02f64;
        let e1 = (c * (0.01 + eps)).clamp(1e-4, 0.49);
        let e2 = (c * (0.05 + eps)).clamp(1e-4, 0.49);
        assert!((e1 - 0.06).abs() < 1e-12);
        assert!(e2 >= e1);
    }
}
