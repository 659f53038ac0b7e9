//! Sampling and geometry for the two instance distributions.
//!
//! The canonical isotropic log-concave instance is the standard isotropic
//! Gaussian: it is exactly isotropic and log-concave, sampling is cheap, and
//! its admissibility constants are easy to estimate. Band-conditioned
//! sampling uses plain rejection with an attempt budget so degenerate bands
//! fail loudly instead of hanging.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{Beta, ContinuousCDF, Normal};

use crate::error::Error;
use crate::Result;

/// Consecutive rejections tolerated by [`Distribution::sample_band`].
pub const REJECTION_BUDGET: u64 = 1_000_000;

/// Which instance distribution backs an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistKind {
    /// Uniform on the unit sphere S_{d-1}.
    UniformSphere,
    /// Standard isotropic Gaussian on R^d.
    IsotropicGaussian,
}

impl DistKind {
    pub fn name(self) -> &'static str {
        match self {
            DistKind::UniformSphere => "uniform-sphere",
            DistKind::IsotropicGaussian => "isotropic-gaussian",
        }
    }
}

/// An instance distribution over R^d.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Distribution {
    kind: DistKind,
    dim: usize,
}

/// The slab {x : |w.x| <= halfwidth} around a decision boundary.
#[derive(Debug, Clone)]
pub struct Band {
    normal: DVector<f64>,
    halfwidth: f64,
}

impl Band {
    /// `normal` must be unit length within 1e-12 and `halfwidth` positive.
    pub fn new(normal: DVector<f64>, halfwidth: f64) -> Result<Self> {
        let norm = normal.norm();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::NotUnit { norm });
        }
        if halfwidth.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::invalid("halfwidth", format!("{halfwidth} <= 0")));
        }
        Ok(Band { normal, halfwidth })
    }

    pub fn normal(&self) -> &DVector<f64> {
        &self.normal
    }

    pub fn halfwidth(&self) -> f64 {
        self.halfwidth
    }

    /// Membership test, exact on the sample values.
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.normal.dot(x).abs() <= self.halfwidth
    }
}

/// A Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

impl Distribution {
    /// `dim >= 2`; admissibility statements assume `dim >= 4` and the checks
    /// reject smaller dimensions, but sampling and geometry permit d >= 2 for
    /// brute-force tests.
    pub fn new(kind: DistKind, dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid("dim", format!("{dim} < 2")));
        }
        Ok(Distribution { kind, dim })
    }

    pub fn uniform_sphere(dim: usize) -> Result<Self> {
        Self::new(DistKind::UniformSphere, dim)
    }

    pub fn isotropic_gaussian(dim: usize) -> Result<Self> {
        Self::new(DistKind::IsotropicGaussian, dim)
    }

    pub fn kind(&self) -> DistKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Draws one instance vector.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let mut x = gaussian_vector(self.dim, rng);
        if self.kind == DistKind::UniformSphere {
            let mut norm = x.norm();
            while norm < 1e-300 {
                x = gaussian_vector(self.dim, rng);
                norm = x.norm();
            }
            x /= norm;
        }
        x
    }

    /// Draws an instance conditioned on membership in `band`, by rejection.
    pub fn sample_band<R: Rng + ?Sized>(&self, band: &Band, rng: &mut R) -> Result<DVector<f64>> {
        let mut rejected = 0u64;
        loop {
            let x = self.sample(rng);
            if band.contains(&x) {
                return Ok(x);
            }
            rejected += 1;
            if rejected >= REJECTION_BUDGET {
                return Err(Error::RejectionBudgetExceeded { attempts: rejected });
            }
        }
    }

    /// Monte-Carlo estimate of Pr(|w.x| <= halfwidth) with standard error.
    pub fn band_probability<R: Rng + ?Sized>(
        &self,
        band: &Band,
        n_mc: usize,
        rng: &mut R,
    ) -> Result<Estimate> {
        if n_mc < 1_000 {
            return Err(Error::invalid("n_mc", format!("{n_mc} < 1000")));
        }
        let mut hits = 0usize;
        for _ in 0..n_mc {
            if band.contains(&self.sample(rng)) {
                hits += 1;
            }
        }
        let p = hits as f64 / n_mc as f64;
        Ok(Estimate {
            mean: p,
            std_err: (p * (1.0 - p) / n_mc as f64).sqrt(),
        })
    }

    /// Exact band mass Pr(|w.x| <= halfwidth) from the marginal CDF of w.x.
    ///
    /// For the unit sphere, (w.x)^2 is Beta(1/2, (d-1)/2); for the Gaussian,
    /// w.x is standard normal.
    pub fn band_mass_exact(&self, halfwidth: f64) -> f64 {
        if halfwidth <= 0.0 {
            return 0.0;
        }
        match self.kind {
            DistKind::UniformSphere => {
                if halfwidth >= 1.0 {
                    return 1.0;
                }
                let beta = Beta::new(0.5, (self.dim as f64 - 1.0) / 2.0)
                    .expect("valid Beta parameters for d >= 2");
                beta.cdf(halfwidth * halfwidth)
            }
            DistKind::IsotropicGaussian => {
                let normal = Normal::new(0.0, 1.0).expect("standard normal");
                2.0 * normal.cdf(halfwidth) - 1.0
            }
        }
    }
}

fn gaussian_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Uniform random unit vector.
pub fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    let mut v = gaussian_vector(dim, rng);
    let mut n = v.norm();
    while n < 1e-300 {
        v = gaussian_vector(dim, rng);
        n = v.norm();
    }
    v / n
}

/// A unit vector orthogonal to `u`, deterministic given `rng`.
pub fn random_unit_orthogonal<R: Rng + ?Sized>(u: &DVector<f64>, rng: &mut R) -> DVector<f64> {
    loop {
        let v = random_unit(u.len(), rng);
        let w = &v - u * u.dot(&v);
        let n = w.norm();
        if n > 1e-8 {
            return w / n;
        }
    }
}

/// Angle between two nonzero vectors, in [0, pi].
///
/// The normalized inner product is clamped to [-1, 1] before arccos.
pub fn angle(u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    let (nu, nv) = (u.norm(), v.norm());
    if nu < 1e-300 || nv < 1e-300 {
        return Err(Error::ZeroVector);
    }
    let c = (u.dot(v) / (nu * nv)).clamp(-1.0, 1.0);
    Ok(c.acos())
}

/// Exact disagreement probability of two homogeneous halfspaces.
///
/// Equals theta(w, w_star)/pi under any rotationally invariant distribution,
/// so it is exact for both implemented kinds.
pub fn exact_error_uniform(w: &DVector<f64>, w_star: &DVector<f64>) -> f64 {
    angle(w, w_star).expect("nonzero vectors") / std::f64::consts::PI
}

// ---------------------------------------------------------------------------
// Admissibility property checks
// ---------------------------------------------------------------------------

/// Constants plugged into the five admissibility conditions.
///
/// The uniform-sphere checks use the unit-radius parameterization (the band
/// condition carries sqrt(d) factors and part-2 margins scale as alpha/sqrt(d));
/// the Gaussian checks use the isotropic form verbatim. Values are probed, not
/// asserted a priori; the report carries the estimated constants.
#[derive(Debug, Clone, Copy)]
pub struct AdmissibilityConstants {
    /// Interval range for the band sandwich (part 1).
    pub range_c1: f64,
    /// Lower band-probability coefficient (part 1).
    pub lower_c2: f64,
    /// Upper band-probability coefficient (part 1; the uniform form uses 1).
    pub upper_c3: f64,
    /// Bound coefficient for disagreement outside the margin (part 2).
    pub bound_c4: f64,
    /// Margin coefficient for part 2.
    pub margin_c5: f64,
    /// Error lower-bound coefficient (part 3).
    pub angle_c6: f64,
    /// Band second-moment coefficient (part 4; the uniform form uses 1).
    pub var_c8: f64,
    /// Norm tail coefficient (part 5).
    pub tail_c9: f64,
    /// Log exponent in part 4: 0 for the uniform sphere, 2 for the Gaussian.
    pub lambda: f64,
}

impl AdmissibilityConstants {
    pub fn defaults_for(kind: DistKind) -> Self {
        match kind {
            DistKind::UniformSphere => AdmissibilityConstants {
                range_c1: 1.0,
                lower_c2: 0.2,
                upper_c3: 1.0,
                bound_c4: 1.0 / (8.0 * std::f64::consts::PI),
                margin_c5: 3.0,
                angle_c6: 0.9 / std::f64::consts::PI,
                var_c8: 1.0,
                tail_c9: 1.0,
                lambda: 0.0,
            },
            DistKind::IsotropicGaussian => AdmissibilityConstants {
                range_c1: 1.0,
                lower_c2: 0.2,
                upper_c3: 0.4,
                bound_c4: 1.0 / (8.0 * std::f64::consts::PI),
                margin_c5: 3.0,
                angle_c6: 0.9 / std::f64::consts::PI,
                var_c8: 1.0,
                tail_c9: std::f64::consts::E,
                lambda: 2.0,
            },
        }
    }
}

/// Monte-Carlo budget and confidence for one admissibility check.
#[derive(Debug, Clone, Copy)]
pub struct AdmissibilityTrialConfig {
    pub n_samples: usize,
    pub trials: usize,
    pub se_multiplier: f64,
    pub constants: AdmissibilityConstants,
    pub seed_salt: u64,
}

impl AdmissibilityTrialConfig {
    pub fn new(kind: DistKind) -> Self {
        AdmissibilityTrialConfig {
            n_samples: 40_000,
            trials: 8,
            se_multiplier: 3.0,
            constants: AdmissibilityConstants::defaults_for(kind),
            seed_salt: 0,
        }
    }
}

/// One probed configuration inside a report.
#[derive(Debug, Clone)]
pub struct AdmissibilityTrial {
    pub label: String,
    pub estimate: f64,
    pub std_err: f64,
    /// Bound the estimate must stay below (after SE slack), when applicable.
    pub upper_bound: Option<f64>,
    /// Bound the estimate must stay above (after SE slack), when applicable.
    pub lower_bound: Option<f64>,
    pub pass: bool,
}

/// Outcome of checking one admissibility condition.
#[derive(Debug, Clone)]
pub struct AdmissibilityReport {
    pub part: u8,
    pub kind: DistKind,
    pub dim: usize,
    pub trials: Vec<AdmissibilityTrial>,
    /// The constant implied by the estimates (meaning depends on the part).
    pub estimated_constant: Option<f64>,
    pub passed: bool,
}

/// Monte-Carlo verification of one of the five admissibility conditions.
///
/// Part numbers: (1) band-probability sandwich, (2) disagreement outside the
/// margin, (3) error lower bound, (4) band-conditioned second moment,
/// (5) norm tail bound.
pub fn admissibility_check<R: Rng + ?Sized>(
    dist: &Distribution,
    part: u8,
    config: &AdmissibilityTrialConfig,
    rng: &mut R,
) -> Result<AdmissibilityReport> {
    if dist.dim() < 4 {
        return Err(Error::UnsupportedDimension { dim: dist.dim() });
    }
    if !(1..=5).contains(&part) {
        return Err(Error::invalid("part", format!("{part} not in 1..=5")));
    }
    let trials = match part {
        1 => check_band_sandwich(dist, config, rng),
        2 => check_disagreement_margin(dist, config, rng),
        3 => check_error_lower_bound(dist, config, rng),
        4 => check_band_second_moment(dist, config, rng)?,
        _ => check_norm_tail(dist, config, rng),
    };
    let passed = trials.iter().all(|t| t.pass);
    let estimated_constant = estimated_constant(part, &trials);
    Ok(AdmissibilityReport {
        part,
        kind: dist.kind(),
        dim: dist.dim(),
        trials,
        estimated_constant,
        passed,
    })
}

fn estimated_constant(part: u8, trials: &[AdmissibilityTrial]) -> Option<f64> {
    // For sandwich-style parts report the tightest implied lower coefficient;
    // for bound-style parts the largest implied ratio to the bound.
    let ratios: Vec<f64> = trials
        .iter()
        .filter_map(|t| match part {
            1 | 3 => t.lower_bound.map(|b| {
                if b > 0.0 {
                    t.estimate / b
                } else {
                    f64::INFINITY
                }
            }),
            _ => t.upper_bound.map(|b| {
                if b > 0.0 {
                    t.estimate / b
                } else if t.estimate == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }),
        })
        .collect();
    if ratios.is_empty() {
        None
    } else if part == 1 || part == 3 {
        ratios.iter().cloned().fold(f64::INFINITY, f64::min).into()
    } else {
        ratios.iter().cloned().fold(0.0f64, f64::max).into()
    }
}

fn check_band_sandwich<R: Rng + ?Sized>(
    dist: &Distribution,
    cfg: &AdmissibilityTrialConfig,
    rng: &mut R,
) -> Vec<AdmissibilityTrial> {
    let d = dist.dim() as f64;
    let k = cfg.constants;
    let scale = match dist.kind() {
        DistKind::UniformSphere => k.range_c1 / d.sqrt(),
        DistKind::IsotropicGaussian => k.range_c1,
    };
    let mut out = Vec::new();
    for t in 0..cfg.trials {
        let u = random_unit(dist.dim(), rng);
        // Random subinterval of [-scale, scale], not too short.
        let mut a = rng.random_range(-scale..scale);
        let mut b = rng.random_range(-scale..scale);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        if b - a < 0.2 * scale {
            b = (a + 0.2 * scale).min(scale);
        }
        let mut hits = 0usize;
        for _ in 0..cfg.n_samples {
            let proj = u.dot(&dist.sample(rng));
            if proj >= a && proj <= b {
                hits += 1;
            }
        }
        let p = hits as f64 / cfg.n_samples as f64;
        let se = (p * (1.0 - p) / cfg.n_samples as f64).sqrt();
        let (lo, hi) = match dist.kind() {
            DistKind::UniformSphere => (k.lower_c2 * (b - a) * d.sqrt(), (b - a) * d.sqrt()),
            DistKind::IsotropicGaussian => (k.lower_c2 * (b - a), k.upper_c3 * (b - a)),
        };
        let pass = p + cfg.se_multiplier * se >= lo && p - cfg.se_multiplier * se <= hi;
        out.push(AdmissibilityTrial {
            label: format!("trial {t}: interval [{a:.4}, {b:.4}]"),
            estimate: p,
            std_err: se,
            upper_bound: Some(hi),
            lower_bound: Some(lo),
            pass,
        });
    }
    out
}

fn check_disagreement_margin<R: Rng + ?Sized>(
    dist: &Distribution,
    cfg: &AdmissibilityTrialConfig,
    rng: &mut R,
) -> Vec<AdmissibilityTrial> {
    let d = dist.dim() as f64;
    let k = cfg.constants;
    let mut out = Vec::new();
    for t in 0..cfg.trials {
        let alpha = rng.random_range(0.02..std::f64::consts::FRAC_PI_2 * 0.6);
        let u = random_unit(dist.dim(), rng);
        let e = random_unit_orthogonal(&u, rng);
        let v = &u * alpha.cos() + &e * alpha.sin();
        let margin = match dist.kind() {
            DistKind::UniformSphere => k.margin_c5 * alpha / d.sqrt(),
            DistKind::IsotropicGaussian => k.margin_c5 * alpha,
        };
        let mut hits = 0usize;
        for _ in 0..cfg.n_samples {
            let x = dist.sample(rng);
            let pu = u.dot(&x);
            let pv = v.dot(&x);
            if (pu >= 0.0) != (pv >= 0.0) && pv.abs() >= margin {
                hits += 1;
            }
        }
        let p = hits as f64 / cfg.n_samples as f64;
        let se = (p * (1.0 - p) / cfg.n_samples as f64).sqrt();
        let bound = k.bound_c4 * alpha;
        let pass = p - cfg.se_multiplier * se <= bound;
        out.push(AdmissibilityTrial {
            label: format!("trial {t}: alpha {alpha:.4}"),
            estimate: p,
            std_err: se,
            upper_bound: Some(bound),
            lower_bound: None,
            pass,
        });
    }
    out
}

fn check_error_lower_bound<R: Rng + ?Sized>(
    dist: &Distribution,
    cfg: &AdmissibilityTrialConfig,
    rng: &mut R,
) -> Vec<AdmissibilityTrial> {
    let k = cfg.constants;
    let mut out = Vec::new();
    for t in 0..cfg.trials {
        let theta = rng.random_range(0.05..std::f64::consts::PI * 0.9);
        let u = random_unit(dist.dim(), rng);
        let e = random_unit_orthogonal(&u, rng);
        let v = &u * theta.cos() + &e * theta.sin();
        let mut hits = 0usize;
        for _ in 0..cfg.n_samples {
            let x = dist.sample(rng);
            if (u.dot(&x) >= 0.0) != (v.dot(&x) >= 0.0) {
                hits += 1;
            }
        }
        let p = hits as f64 / cfg.n_samples as f64;
        let se = (p * (1.0 - p) / cfg.n_samples as f64).sqrt();
        let bound = k.angle_c6 * theta;
        let pass = p + cfg.se_multiplier * se >= bound;
        out.push(AdmissibilityTrial {
            label: format!("trial {t}: theta {theta:.4}"),
            estimate: p,
            std_err: se,
            upper_bound: None,
            lower_bound: Some(bound),
            pass,
        });
    }
    out
}

fn check_band_second_moment<R: Rng + ?Sized>(
    dist: &Distribution,
    cfg: &AdmissibilityTrialConfig,
    rng: &mut R,
) -> Result<Vec<AdmissibilityTrial>> {
    let d = dist.dim() as f64;
    let k = cfg.constants;
    let mut out = Vec::new();
    for t in 0..cfg.trials {
        let u = random_unit(dist.dim(), rng);
        let gamma = match dist.kind() {
            DistKind::UniformSphere => rng.random_range(0.5..2.0) / d.sqrt(),
            DistKind::IsotropicGaussian => rng.random_range(0.05..0.5),
        };
        let r = rng.random_range(0.05..0.6);
        let a = sample_nearby_in_ball(&u, r, rng);
        let band = Band::new(u.clone(), gamma)?;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..cfg.n_samples {
            let x = dist.sample_band(&band, rng)?;
            let s = a.dot(&x).powi(2);
            sum += s;
            sum_sq += s * s;
        }
        let n = cfg.n_samples as f64;
        let mean = sum / n;
        let var = (sum_sq / n - mean * mean).max(0.0);
        let se = (var / n).sqrt();
        let bound = match dist.kind() {
            DistKind::UniformSphere => r * r / (d - 1.0) + gamma * gamma,
            DistKind::IsotropicGaussian => {
                k.var_c8 * (1.0 + 1.0 / gamma).ln().powf(k.lambda) * (r * r + gamma * gamma)
            }
        };
        let pass = mean - cfg.se_multiplier * se <= bound;
        out.push(AdmissibilityTrial {
            label: format!("trial {t}: r {r:.3} gamma {gamma:.4}"),
            estimate: mean,
            std_err: se,
            upper_bound: Some(bound),
            lower_bound: None,
            pass,
        });
    }
    Ok(out)
}

fn check_norm_tail<R: Rng + ?Sized>(
    dist: &Distribution,
    cfg: &AdmissibilityTrialConfig,
    rng: &mut R,
) -> Vec<AdmissibilityTrial> {
    let d = dist.dim() as f64;
    let k = cfg.constants;
    let mut out = Vec::new();
    let alphas = [1.5, 2.0, 3.0];
    for (t, &alpha) in alphas.iter().enumerate() {
        let threshold = alpha * d.sqrt();
        let (mut hits, n) = (0usize, cfg.n_samples);
        for _ in 0..n {
            if dist.sample(rng).norm() >= threshold {
                hits += 1;
            }
        }
        let p = hits as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt().max(1.0 / n as f64);
        let bound = match dist.kind() {
            // Support is the unit sphere: the tail beyond sqrt(d) is empty.
            DistKind::UniformSphere => 0.0,
            DistKind::IsotropicGaussian => k.tail_c9 * (-alpha).exp(),
        };
        let pass = p - cfg.se_multiplier * se <= bound;
        out.push(AdmissibilityTrial {
            label: format!("trial {t}: alpha {alpha}"),
            estimate: p,
            std_err: se,
            upper_bound: Some(bound),
            lower_bound: None,
            pass,
        });
    }
    out
}

/// Random `a` with ||a - u|| <= r and ||a|| <= 1.
fn sample_nearby_in_ball<R: Rng + ?Sized>(u: &DVector<f64>, r: f64, rng: &mut R) -> DVector<f64> {
    loop {
        let dir = random_unit(u.len(), rng);
        let t: f64 = rng.random_range(0.0..1.0);
        let a = u + dir * (t * r);
        let a = if a.norm() > 1.0 { a.normalize() } else { a };
        if (&a - u).norm() <= r {
            return a;
        }
    }
}
