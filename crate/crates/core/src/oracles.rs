//! Simulated example-generation and label-revealing oracles.
//!
//! The example oracle commits a label for every draw at draw time (even
//! before the label is revealed), tracks clean/dirty provenance for test
//! assertions, and counts unlabeled draws and label reveals in a ledger.
//! The adversary sees the learner's published state (current hypothesis and
//! band width) and the full history to date, but not future randomness.
//!
//! Provenance and the target vector are exposed for the benefit of the
//! experiment harness only; the learning algorithms never consult them.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::distributions::{random_unit_orthogonal, Distribution};
use crate::error::Error;
use crate::Result;

/// Draw index assigned by the oracle.
pub type ExampleId = usize;

/// Which noise model the oracle simulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseModel {
    /// With probability eta the adversary replaces the whole pair (x, y).
    Malicious,
    /// The instance marginal is unchanged; labels may disagree with the
    /// target with probability at most eta.
    AdversarialLabel,
}

impl NoiseModel {
    pub fn name(self) -> &'static str {
        match self {
            NoiseModel::Malicious => "malicious",
            NoiseModel::AdversarialLabel => "adversarial-label",
        }
    }
}

/// Adversary behavior for dirty draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdversaryStrategy {
    /// Dirty example is a clean draw with negated label. Valid in both models.
    RandomFlip,
    /// Malicious only: x = -target with label +1, the classic hinge attack.
    AntiTarget,
    /// Malicious only: a coordinated point placed inside the learner's
    /// current band along the component of the target orthogonal to the
    /// current hypothesis, labeled against the target.
    BandAttack,
    /// Label model only: flips labels only inside the learner's current
    /// band, concentrating the noise budget where it matters.
    InBandLabelFlip,
}

impl AdversaryStrategy {
    pub fn name(self) -> &'static str {
        match self {
            AdversaryStrategy::RandomFlip => "random-flip",
            AdversaryStrategy::AntiTarget => "anti-target",
            AdversaryStrategy::BandAttack => "band-attack",
            AdversaryStrategy::InBandLabelFlip => "in-band-label-flip",
        }
    }

    fn valid_for(self, model: NoiseModel) -> bool {
        match self {
            AdversaryStrategy::RandomFlip => true,
            AdversaryStrategy::AntiTarget | AdversaryStrategy::BandAttack => {
                model == NoiseModel::Malicious
            }
            AdversaryStrategy::InBandLabelFlip => model == NoiseModel::AdversarialLabel,
        }
    }
}

/// Whether an example came from the clean distribution or the adversary.
/// Visible to the harness only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Clean,
    Dirty,
}

/// Monotone counters for unlabeled draws and label reveals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueryLedger {
    pub unlabeled_draws: u64,
    pub label_queries: u64,
}

/// Oracle configuration.
#[derive(Debug, Clone)]
pub struct NoiseOracleConfig {
    pub model: NoiseModel,
    pub eta: f64,
    pub strategy: AdversaryStrategy,
    pub target: DVector<f64>,
    pub dist: Distribution,
    pub seed: u64,
}

#[derive(Debug)]
struct Committed {
    x: DVector<f64>,
    y: i8,
    provenance: Provenance,
    revealed: bool,
}

/// Example-generation plus label-revealing oracle with provenance tracking.
#[derive(Debug)]
pub struct ExampleOracle {
    model: NoiseModel,
    eta: f64,
    strategy: AdversaryStrategy,
    target: DVector<f64>,
    dist: Distribution,
    rng: ChaCha8Rng,
    committed: Vec<Committed>,
    ledger: QueryLedger,
    published_w: DVector<f64>,
    published_b: f64,
    /// Norm cap for coordinated malicious instances when the distribution is
    /// unbounded; points beyond ~3 sqrt(d) are trivially removable anyway.
    dirty_norm_cap: f64,
}

fn sign_label(t: f64) -> i8 {
    if t >= 0.0 {
        1
    } else {
        -1
    }
}

impl ExampleOracle {
    pub fn new(config: NoiseOracleConfig) -> Result<Self> {
        if !(0.0..0.25).contains(&config.eta) {
            return Err(Error::invalid(
                "eta",
                format!("{} not in [0, 1/4)", config.eta),
            ));
        }
        if !config.strategy.valid_for(config.model) {
            return Err(Error::StrategyModelMismatch {
                strategy: config.strategy.name(),
                model: config.model.name(),
            });
        }
        let norm = config.target.norm();
        if norm < 1e-300 {
            return Err(Error::ZeroVector);
        }
        if config.target.len() != config.dist.dim() {
            return Err(Error::invalid(
                "target",
                format!(
                    "dimension {} does not match distribution dimension {}",
                    config.target.len(),
                    config.dist.dim()
                ),
            ));
        }
        let target = &config.target / norm;
        let d = config.dist.dim() as f64;
        Ok(ExampleOracle {
            model: config.model,
            eta: config.eta,
            strategy: config.strategy,
            target: target.clone(),
            dist: config.dist,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            committed: Vec::new(),
            ledger: QueryLedger::default(),
            published_w: target,
            published_b: 1.0,
            dirty_norm_cap: 3.0 * d.sqrt(),
        })
    }

    pub fn model(&self) -> NoiseModel {
        self.model
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn dist(&self) -> &Distribution {
        &self.dist
    }

    pub fn ledger(&self) -> QueryLedger {
        self.ledger
    }

    /// Ground-truth separator. Harness-visible only; learners must not use it.
    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }

    /// The learner announces its current hypothesis and band cut-off. The
    /// adversary may react to it from the next draw on.
    pub fn publish_state(&mut self, w: &DVector<f64>, b: f64) {
        let norm = w.norm();
        if norm > 1e-300 {
            self.published_w = w / norm;
        }
        self.published_b = b.max(0.0);
    }

    /// Draws the instance part of the next example; the label is committed
    /// internally and can be obtained via [`reveal_label`](Self::reveal_label).
    pub fn draw_unlabeled(&mut self) -> (ExampleId, DVector<f64>) {
        let committed = match self.model {
            NoiseModel::Malicious => {
                if self.eta > 0.0 && self.rng.random::<f64>() < self.eta {
                    self.adversary_malicious()
                } else {
                    self.clean_draw()
                }
            }
            NoiseModel::AdversarialLabel => self.label_noise_draw(),
        };
        let id = self.committed.len();
        let x = committed.x.clone();
        self.committed.push(committed);
        self.ledger.unlabeled_draws += 1;
        (id, x)
    }

    /// Returns the committed label; idempotent, the first call per id
    /// increments the label-query counter.
    pub fn reveal_label(&mut self, id: ExampleId) -> Result<i8> {
        let entry = self.committed.get_mut(id).ok_or(Error::UnknownId { id })?;
        if !entry.revealed {
            entry.revealed = true;
            self.ledger.label_queries += 1;
        }
        Ok(entry.y)
    }

    /// Clean/dirty tag of a drawn example. Harness-visible only.
    pub fn provenance(&self, id: ExampleId) -> Result<Provenance> {
        self.committed
            .get(id)
            .map(|e| e.provenance)
            .ok_or(Error::UnknownId { id })
    }

    fn clean_draw(&mut self) -> Committed {
        let x = self.dist.sample(&mut self.rng);
        let y = sign_label(self.target.dot(&x));
        Committed {
            x,
            y,
            provenance: Provenance::Clean,
            revealed: false,
        }
    }

    fn adversary_malicious(&mut self) -> Committed {
        match self.strategy {
            AdversaryStrategy::RandomFlip => {
                let x = self.dist.sample(&mut self.rng);
                let y = -sign_label(self.target.dot(&x));
                Committed {
                    x,
                    y,
                    provenance: Provenance::Dirty,
                    revealed: false,
                }
            }
            AdversaryStrategy::AntiTarget => Committed {
                x: -self.target.clone(),
                y: 1,
                provenance: Provenance::Dirty,
                revealed: false,
            },
            AdversaryStrategy::BandAttack => {
                let x = self.band_attack_instance();
                let y = -sign_label(self.target.dot(&x));
                Committed {
                    x,
                    y,
                    provenance: Provenance::Dirty,
                    revealed: false,
                }
            }
            AdversaryStrategy::InBandLabelFlip => unreachable!("rejected at construction"),
        }
    }

    /// A point inside the published band with the largest component along
    /// the target's projection orthogonal to the published hypothesis.
    fn band_attack_instance(&mut self) -> DVector<f64> {
        let u = self.published_w.clone();
        let along = self.target.dot(&u);
        let perp = &self.target - &u * along;
        let e = if perp.norm() > 1e-9 {
            perp.normalize()
        } else {
            // Hypothesis is (anti)parallel to the target: any orthogonal
            // direction coordinates the attack equally well.
            random_unit_orthogonal(&u, &mut self.rng)
        };
        let beta = 0.999 * self.published_b.min(0.9);
        match self.dist.kind() {
            crate::distributions::DistKind::UniformSphere => {
                &u * beta + &e * (1.0 - beta * beta).sqrt()
            }
            crate::distributions::DistKind::IsotropicGaussian => {
                &u * beta + &e * self.dirty_norm_cap
            }
        }
    }

    fn label_noise_draw(&mut self) -> Committed {
        let x = self.dist.sample(&mut self.rng);
        let clean_y = sign_label(self.target.dot(&x));
        let flip = match self.strategy {
            AdversaryStrategy::RandomFlip => self.eta > 0.0 && self.rng.random::<f64>() < self.eta,
            AdversaryStrategy::InBandLabelFlip => {
                let in_band = self.published_w.dot(&x).abs() <= self.published_b;
                if in_band && self.eta > 0.0 {
                    let mass = self.dist.band_mass_exact(self.published_b).max(1e-12);
                    self.rng.random::<f64>() < (self.eta / mass).min(1.0)
                } else {
                    false
                }
            }
            _ => unreachable!("rejected at construction"),
        };
        Committed {
            x,
            y: if flip { -clean_y } else { clean_y },
            provenance: if flip {
                Provenance::Dirty
            } else {
                Provenance::Clean
            },
            revealed: false,
        }
    }
}
