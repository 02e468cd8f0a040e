//! Simulation designs and the Monte Carlo size/power harness.
//!
//! Every subject carries two standard-normal-type scores multiplying two
//! fixed shapes. X always uses `(-cos 2 pi t, sin 2 pi t)` with Gaussian
//! scores; Y differs by family:
//!
//! - `example1`: the same law as X (null hypothesis).
//! - `example2`: shapes `(t^2, sqrt(1 - t^4))` with symmetric two-component
//!   Gaussian-mixture scores, matching X in mean and variance only.
//! - `gaussian_scale`: X's shapes with scores multiplied by `scale`.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::data::{ObservationPoint, SubjectRecord, TwoSampleDataset};
use crate::error::{MedError, Result};
use crate::noise::{med_test_with_noise, NoiseMode};
use crate::permutation::{med_permutation_test, TestConfig};
use crate::rng::stream_rng;
use crate::smoother::uniform_grid;

pub const DEFAULT_DENSE_GRID: usize = 51;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Example1,
    Example2,
    GaussianScale,
}

impl Family {
    pub fn label(self) -> &'static str {
        match self {
            Family::Example1 => "example1",
            Family::Example2 => "example2",
            Family::GaussianScale => "gaussian_scale",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = MedError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "example1" | "1" => Ok(Family::Example1),
            "example2" | "2" => Ok(Family::Example2),
            "gaussian_scale" => Ok(Family::GaussianScale),
            other => Err(MedError::InvalidConfig(format!(
                "unknown design `{other}` (expected example1, example2 or gaussian_scale)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub family: Family,
    pub n: usize,
    pub m: usize,
    /// Sparse observation counts are uniform on `n_low..=n_high`.
    pub n_low: usize,
    pub n_high: usize,
    /// Noise standard deviation of the X group.
    pub sigma1: f64,
    /// Noise standard deviation of the Y group.
    pub sigma2: f64,
    pub mu_s: f64,
    pub sigma_s: f64,
    /// Require `mu_s^2 + sigma_s^2 = 1` (within 1e-4) for `example2`.
    pub equal_variance: bool,
    /// Observe every subject on this many equally spaced points instead.
    pub dense_grid: Option<usize>,
    /// Y-score multiplier for `gaussian_scale`.
    pub scale: f64,
}

impl SimDesign {
    pub fn new(family: Family, n: usize, m: usize) -> Self {
        Self {
            family,
            n,
            m,
            n_low: 2,
            n_high: 10,
            sigma1: 0.0,
            sigma2: 0.0,
            mu_s: 0.98,
            sigma_s: 0.199,
            equal_variance: true,
            dense_grid: None,
            scale: 2.0,
        }
    }

    pub fn with_noise(self, sigma1: f64, sigma2: f64) -> Self {
        Self {
            sigma1,
            sigma2,
            ..self
        }
    }

    pub fn dense(self, points: usize) -> Self {
        Self {
            dense_grid: Some(points),
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MedError::InvalidConfig(msg));
        if self.n < 2 || self.m < 2 {
            return bad(format!("n, m >= 2 required, got ({}, {})", self.n, self.m));
        }
        if self.n_low < 1 || self.n_low > self.n_high {
            return bad(format!(
                "need 1 <= n_low <= n_high, got ({}, {})",
                self.n_low, self.n_high
            ));
        }
        for (name, v) in [
            ("sigma1", self.sigma1),
            ("sigma2", self.sigma2),
            ("sigma_s", self.sigma_s),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if !self.mu_s.is_finite() || !self.scale.is_finite() {
            return bad("mu_s and scale must be finite".into());
        }
        if self.family == Family::Example2 && self.equal_variance {
            let total = self.mu_s * self.mu_s + self.sigma_s * self.sigma_s;
            if (total - 1.0).abs() > 1e-4 {
                return bad(format!(
                    "mu_s^2 + sigma_s^2 = {total}, expected 1 for equal marginal variances"
                ));
            }
        }
        if let Some(points) = self.dense_grid {
            if points < 2 {
                return bad(format!("dense grid needs >= 2 points, got {points}"));
            }
        }
        Ok(())
    }

    /// The noise handling a study of this design would use.
    pub fn default_noise_mode(&self) -> NoiseMode {
        if self.sigma1 == self.sigma2 {
            NoiseMode::EqualErrors
        } else {
            NoiseMode::Augment
        }
    }
}

/// Score law of one group.
#[derive(Debug, Clone, Copy)]
enum Scores {
    Gaussian(f64),
    Mixture { mu: f64, sigma: f64 },
}

impl Scores {
    fn draw<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            Scores::Gaussian(scale) => scale * rng.sample::<f64, _>(StandardNormal),
            Scores::Mixture { mu, sigma } => {
                let centre = if rng.random::<bool>() { mu } else { -mu };
                centre + sigma * rng.sample::<f64, _>(StandardNormal)
            }
        }
    }
}

type Shapes = fn(f64) -> (f64, f64);

fn trig_shapes(t: f64) -> (f64, f64) {
    let a = 2.0 * std::f64::consts::PI * t;
    (-a.cos(), a.sin())
}

fn polynomial_shapes(t: f64) -> (f64, f64) {
    let t2 = t * t;
    (t2, (1.0 - t2 * t2).max(0.0).sqrt())
}

fn group<R: Rng>(
    design: &SimDesign,
    prefix: &str,
    count: usize,
    shapes: Shapes,
    scores: Scores,
    sigma: f64,
    rng: &mut R,
) -> Vec<SubjectRecord> {
    let dense = design.dense_grid.map(uniform_grid);
    let noise = Normal::new(0.0, sigma).expect("validated noise level");
    (0..count)
        .map(|i| {
            let times: Vec<f64> = match &dense {
                Some(grid) => grid.clone(),
                None => {
                    let k = rng.random_range(design.n_low..=design.n_high);
                    (0..k).map(|_| rng.random::<f64>()).collect()
                }
            };
            let (s1, s2) = (scores.draw(rng), scores.draw(rng));
            let points = times
                .into_iter()
                .map(|t| {
                    let (f1, f2) = shapes(t);
                    let mut value = s1 * f1 + s2 * f2;
                    if sigma > 0.0 {
                        value += noise.sample(rng);
                    }
                    ObservationPoint::new(t, value)
                })
                .collect();
            SubjectRecord::new(format!("{prefix}{}", i + 1), points)
        })
        .collect()
}

/// Draws one dataset of `design` from `rng`.
pub fn generate_with<R: Rng>(design: &SimDesign, rng: &mut R) -> Result<TwoSampleDataset> {
    design.validate()?;
    let (y_shapes, y_scores): (Shapes, Scores) = match design.family {
        Family::Example1 => (trig_shapes, Scores::Gaussian(1.0)),
        Family::Example2 => (
            polynomial_shapes,
            Scores::Mixture {
                mu: design.mu_s,
                sigma: design.sigma_s,
            },
        ),
        Family::GaussianScale => (trig_shapes, Scores::Gaussian(design.scale)),
    };
    let x = group(design, "x", design.n, trig_shapes, Scores::Gaussian(1.0), design.sigma1, rng);
    let y = group(design, "y", design.m, y_shapes, y_scores, design.sigma2, rng);
    Ok(TwoSampleDataset::new(x, y))
}

pub fn generate(design: &SimDesign, seed: u64) -> Result<TwoSampleDataset> {
    generate_with(design, &mut stream_rng(seed, 0))
}

fn require_family(design: &SimDesign, family: Family) -> Result<()> {
    if design.family == family {
        Ok(())
    } else {
        Err(MedError::InvalidConfig(format!(
            "design family is {}, expected {}",
            design.family.label(),
            family.label()
        )))
    }
}

pub fn gen_example1(design: &SimDesign, seed: u64) -> Result<TwoSampleDataset> {
    require_family(design, Family::Example1)?;
    generate(design, seed)
}

pub fn gen_example2(design: &SimDesign, seed: u64) -> Result<TwoSampleDataset> {
    require_family(design, Family::Example2)?;
    generate(design, seed)
}

pub fn gen_gaussian_scale(design: &SimDesign, seed: u64) -> Result<TwoSampleDataset> {
    require_family(design, Family::GaussianScale)?;
    generate(design, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    /// Seed handed to the permutation test (and augmentation) of this replication.
    pub test_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub design: SimDesign,
    pub noise_mode: NoiseMode,
    pub reps: usize,
    pub rejections: usize,
    pub rate: f64,
    /// Exact (Clopper–Pearson) 95% interval for the rejection probability.
    pub ci: (f64, f64),
    pub seed: u64,
    pub per_rep: Vec<RepOutcome>,
}

/// Exact two-sided binomial interval at level `1 - alpha`.
pub fn clopper_pearson(successes: usize, trials: usize, alpha: f64) -> (f64, f64) {
    assert!(trials > 0 && successes <= trials);
    let (k, n) = (successes as f64, trials as f64);
    let lo = if successes == 0 {
        0.0
    } else {
        Beta::new(k, n - k + 1.0)
            .expect("positive shape parameters")
            .inverse_cdf(alpha / 2.0)
    };
    let hi = if successes == trials {
        1.0
    } else {
        Beta::new(k + 1.0, n - k)
            .expect("positive shape parameters")
            .inverse_cdf(1.0 - alpha / 2.0)
    };
    (lo, hi)
}

/// Runs `reps` independent replications of `design`.
///
/// Replication `r` draws its dataset from stream `r` of `seed`, then a test
/// seed from the same stream, so every replication (including its
/// augmentation noise) is fresh and reproducible on its own.
pub fn monte_carlo_rejection_rate(
    design: &SimDesign,
    test: &TestConfig,
    mode: NoiseMode,
    reps: usize,
    seed: u64,
) -> Result<MonteCarloSummary> {
    if reps == 0 {
        return Err(MedError::InvalidConfig("reps must be >= 1".into()));
    }
    design.validate()?;
    test.validate()?;
    let outcomes: Vec<Result<RepOutcome>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let dataset = generate_with(design, &mut rng)?;
            let config = TestConfig {
                seed: rng.random(),
                ..*test
            };
            let result = match mode {
                NoiseMode::Augment => med_test_with_noise(&dataset, &config, false)?,
                NoiseMode::None | NoiseMode::EqualErrors => {
                    med_permutation_test(&dataset, &config)?
                }
            };
            Ok(RepOutcome {
                statistic: result.statistic,
                p_value: result.p_value,
                reject: result.reject,
                test_seed: config.seed,
            })
        })
        .collect();
    let mut per_rep = Vec::with_capacity(reps);
    for (index, outcome) in outcomes.into_iter().enumerate() {
        per_rep.push(outcome.map_err(|e| MedError::Replication {
            index,
            source: Box::new(e),
        })?);
    }
    let rejections = per_rep.iter().filter(|o| o.reject).count();
    Ok(MonteCarloSummary {
        design: *design,
        noise_mode: mode,
        reps,
        rejections,
        rate: rejections as f64 / reps as f64,
        ci: clopper_pearson(rejections, reps, 0.05),
        seed,
        per_rep,
    })
}

impl MonteCarloSummary {
    pub const CSV_HEADER: &'static str = "n_m,sigma1,sigma2,design,rate,ci_lo,ci_hi,reps";

    /// One row under [`Self::CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        let d = &self.design;
        let design = match d.dense_grid {
            Some(points) => format!("{}-dense{points}", d.family.label()),
            None => d.family.label().to_string(),
        };
        format!(
            "\"({},{})\",{},{},{},{},{},{},{}",
            d.n, d.m, d.sigma1, d.sigma2, design, self.rate, self.ci.0, self.ci.1, self.reps
        )
    }
}
