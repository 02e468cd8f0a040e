//! Subject-level permutation inference.
//!
//! Replicate `l = 1..S-1` shuffles the pooled subject indices with
//! Fisher–Yates driven by ChaCha stream `l` of the test seed; the first `n`
//! shuffled subjects become the X group. A subject's schedule always travels
//! with its values. The p-value is `(1 + #{l : T_l >= T_obs}) / S`.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::med_for_labelings;
use crate::data::{SubjectRecord, TwoSampleDataset};
use crate::error::{MedError, Result};
use crate::noise::NoiseConfig;
use crate::rng::stream_rng;
use crate::smoother::SmootherConfig;

pub const DEFAULT_PERMUTATIONS: usize = 200;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub smoother: SmootherConfig,
    /// Total budget `S`, counting the observed statistic.
    pub permutations: usize,
    pub alpha: f64,
    pub seed: u64,
    pub noise: NoiseConfig,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            smoother: SmootherConfig::default(),
            permutations: DEFAULT_PERMUTATIONS,
            alpha: DEFAULT_ALPHA,
            seed: 0,
            noise: NoiseConfig::default(),
        }
    }
}

impl TestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.permutations < 2 {
            return Err(MedError::InvalidConfig(format!(
                "permutation budget S must be >= 2, got {}",
                self.permutations
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(MedError::InvalidConfig(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        self.smoother.validate()?;
        self.noise.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    /// The `S - 1` replicate statistics, in replicate order.
    pub permuted_statistics: Vec<f64>,
    pub permutations: usize,
    pub alpha: f64,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
}

impl TestResult {
    pub fn from_statistics(
        observed: f64,
        permuted: Vec<f64>,
        alpha: f64,
        seed: u64,
        (n, m): (usize, usize),
    ) -> Self {
        let p_value = permutation_p_value(observed, &permuted);
        Self {
            statistic: observed,
            p_value,
            reject: p_value <= alpha,
            permutations: permuted.len() + 1,
            permuted_statistics: permuted,
            alpha,
            seed,
            n,
            m,
        }
    }

    pub fn summary(&self) -> String {
        format!(
            "MED = {:.6}, p = {:.4} (S = {}), {} H0 at alpha = {}",
            self.statistic,
            self.p_value,
            self.permutations,
            if self.reject { "reject" } else { "retain" },
            self.alpha
        )
    }
}

/// `(1 + #{permuted >= observed}) / (1 + permuted.len())`.
pub fn permutation_p_value(observed: f64, permuted: &[f64]) -> f64 {
    let exceed = permuted.iter().filter(|&&v| v >= observed).count();
    (1 + exceed) as f64 / (1 + permuted.len()) as f64
}

/// Reorders subjects so that position `l` holds pooled subject `perm[l]`.
///
/// Pooled indices run over X first, then Y (0-based). The first `n` subjects
/// of the result form the X group.
pub fn apply_permutation(dataset: &TwoSampleDataset, perm: &[usize]) -> Result<TwoSampleDataset> {
    let total = dataset.n() + dataset.m();
    check_permutation(perm, total)?;
    let pooled: Vec<&SubjectRecord> = dataset.pooled().collect();
    let mut reordered = perm.iter().map(|&i| pooled[i].clone());
    let x = reordered.by_ref().take(dataset.n()).collect();
    let y = reordered.collect();
    Ok(TwoSampleDataset::new(x, y))
}

fn check_permutation(perm: &[usize], total: usize) -> Result<()> {
    if perm.len() != total {
        return Err(MedError::InvalidPermutation(format!(
            "expected {total} entries, got {}",
            perm.len()
        )));
    }
    let mut seen = vec![false; total];
    for &i in perm {
        if i >= total || std::mem::replace(&mut seen[i], true) {
            return Err(MedError::InvalidPermutation(format!(
                "entry {i} repeated or out of range"
            )));
        }
    }
    Ok(())
}

/// The `count` random permutations of `0..total` used by replicates `1..=count`.
pub fn draw_permutations(total: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    (1..=count as u64)
        .map(|stream| {
            let mut rng = stream_rng(seed, stream);
            let mut order: Vec<usize> = (0..total).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect()
}

/// Permutation test for an arbitrary statistic of the relabeled sample.
///
/// `statistic` receives a pooled ordering (X first); the identity ordering
/// yields the observed value.
pub fn permutation_test_indexed<F>(
    (n, m): (usize, usize),
    permutations: usize,
    alpha: f64,
    seed: u64,
    statistic: F,
) -> Result<TestResult>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    if permutations < 2 {
        return Err(MedError::InvalidConfig(format!(
            "permutation budget S must be >= 2, got {permutations}"
        )));
    }
    let total = n + m;
    let identity: Vec<usize> = (0..total).collect();
    let observed = statistic(&identity)?;
    let orders = draw_permutations(total, permutations - 1, seed);
    let results: Vec<Result<f64>> = orders.par_iter().map(|o| statistic(o)).collect();
    let mut permuted = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        permuted.push(r.map_err(|e| MedError::Replicate {
            index: i + 1,
            source: Box::new(e),
        })?);
    }
    Ok(TestResult::from_statistics(observed, permuted, alpha, seed, (n, m)))
}

/// Permutation test for any deterministic statistic of a [`TwoSampleDataset`].
pub fn permutation_test<F>(
    dataset: &TwoSampleDataset,
    config: &TestConfig,
    statistic: F,
) -> Result<TestResult>
where
    F: Fn(&TwoSampleDataset) -> Result<f64> + Sync,
{
    config.validate()?;
    permutation_test_indexed(
        (dataset.n(), dataset.m()),
        config.permutations,
        config.alpha,
        config.seed,
        |order| statistic(&apply_permutation(dataset, order)?),
    )
}

/// Permutation test of the MED statistic.
///
/// Observed and permuted statistics all come from [`med_for_labelings`], so a
/// replicate that reproduces the observed X set reproduces the observed value
/// bit for bit.
pub fn med_permutation_test(dataset: &TwoSampleDataset, config: &TestConfig) -> Result<TestResult> {
    config.validate()?;
    dataset.ensure_valid()?;
    let total = dataset.n() + dataset.m();
    let mut orders = Vec::with_capacity(config.permutations);
    orders.push((0..total).collect::<Vec<_>>());
    orders.extend(draw_permutations(total, config.permutations - 1, config.seed));
    let mut values = med_for_labelings(dataset, &config.smoother, &orders)?;
    let permuted = values.split_off(1);
    Ok(TestResult::from_statistics(
        values[0],
        permuted,
        config.alpha,
        config.seed,
        (dataset.n(), dataset.m()),
    ))
}

/// Permutation test of the dense-design energy distance.
pub fn dense_permutation_test(
    sample: &crate::data::DenseSample,
    permutations: usize,
    alpha: f64,
    seed: u64,
) -> Result<TestResult> {
    let (n, m) = (sample.x_curves.len(), sample.y_curves.len());
    let pooled: Vec<&Vec<f64>> = sample.x_curves.iter().chain(&sample.y_curves).collect();
    permutation_test_indexed((n, m), permutations, alpha, seed, |order| {
        let x: Vec<Vec<f64>> = order[..n].iter().map(|&i| pooled[i].clone()).collect();
        let y: Vec<Vec<f64>> = order[n..].iter().map(|&i| pooled[i].clone()).collect();
        crate::statistic::dense_energy_distance(&sample.grid, &x, &y)
    })
}
