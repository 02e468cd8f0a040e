//! End-to-end test runs with enough provenance to replay them.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::TwoSampleDataset;
use crate::error::{MedError, Result};
use crate::noise::{augment_with_estimate, NoiseEstimate, NoiseMode};
use crate::permutation::{med_permutation_test, TestConfig, TestResult};
use crate::rng::AUGMENT_STREAM;
use crate::smoother::Surface;
use crate::statistic::{med_statistic, MedBreakdown};

/// Wall-clock seconds spent per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub validate: f64,
    pub noise: f64,
    pub test: f64,
    pub curves: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// SHA-256 of the dataset in canonical long CSV form.
    pub input_digest: String,
    pub config: TestConfig,
    pub noise_mode: NoiseMode,
    /// ChaCha stream of `config.seed` used for augmentation draws.
    pub augment_stream: Option<u64>,
    pub noise: Option<NoiseEstimate>,
    pub result: TestResult,
    pub curves: Option<MedBreakdown>,
    pub timings: Timings,
}

impl RunReport {
    /// The report with timings zeroed; identical inputs give identical values.
    pub fn without_timings(&self) -> Self {
        Self {
            timings: Timings::default(),
            ..self.clone()
        }
    }
}

pub fn dataset_digest(dataset: &TwoSampleDataset) -> String {
    hex::encode(Sha256::digest(dataset.to_long_csv().as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Validate,
    Noise,
    Test,
    Curves,
}

/// A failed run: the stage that failed and what had completed before it.
#[derive(Debug, thiserror::Error)]
#[error("{stage:?} stage failed: {error}")]
pub struct RunFailure {
    pub stage: Stage,
    pub timings: Timings,
    pub noise: Option<NoiseEstimate>,
    #[source]
    pub error: MedError,
}

/// Runs the test under `noise_mode`, keeping the smoothed curves.
pub fn run_med_test(
    dataset: &TwoSampleDataset,
    config: &TestConfig,
    noise_mode: NoiseMode,
) -> std::result::Result<RunReport, RunFailure> {
    run_med_test_with(dataset, config, noise_mode, true)
}

pub fn run_med_test_with(
    dataset: &TwoSampleDataset,
    config: &TestConfig,
    noise_mode: NoiseMode,
    retain_curves: bool,
) -> std::result::Result<RunReport, RunFailure> {
    let start = Instant::now();
    let mut timings = Timings::default();
    let mut noise = None;
    macro_rules! stage {
        ($stage:expr, $slot:ident, $body:expr) => {{
            let t0 = Instant::now();
            let out = $body;
            timings.$slot = t0.elapsed().as_secs_f64();
            match out {
                Ok(v) => v,
                Err(error) => {
                    timings.total = start.elapsed().as_secs_f64();
                    return Err(RunFailure {
                        stage: $stage,
                        timings,
                        noise,
                        error,
                    });
                }
            }
        }};
    }

    stage!(Stage::Validate, validate, {
        dataset.ensure_valid().and_then(|_| config.validate())
    });
    let digest = dataset_digest(dataset);

    let augmented = match noise_mode {
        NoiseMode::Augment => {
            let (augmented, estimate) =
                stage!(Stage::Noise, noise, augment_with_estimate(dataset, config));
            noise = Some(estimate);
            Some(augmented)
        }
        NoiseMode::None | NoiseMode::EqualErrors => None,
    };
    let tested = augmented.as_ref().unwrap_or(dataset);

    let result = stage!(Stage::Test, test, med_permutation_test(tested, config));
    let curves = if retain_curves {
        Some(stage!(
            Stage::Curves,
            curves,
            med_statistic(tested, &config.smoother)
        ))
    } else {
        None
    };
    timings.total = start.elapsed().as_secs_f64();

    Ok(RunReport {
        input_digest: digest,
        config: *config,
        noise_mode,
        augment_stream: (noise_mode == NoiseMode::Augment).then_some(AUGMENT_STREAM),
        noise,
        result,
        curves,
        timings,
    })
}

/// Writes `g1.csv`, `g2.csv`, `g3.csv` and `integrand.csv` into `dir`.
pub fn export_curves(report: &RunReport, dir: &Path) -> Result<()> {
    let curves = report.curves.as_ref().ok_or(MedError::NoCurves)?;
    std::fs::create_dir_all(dir)?;
    for (name, surface) in [("g1", Surface::G1), ("g2", Surface::G2), ("g3", Surface::G3)] {
        std::fs::write(dir.join(format!("{name}.csv")), curves.curve(surface).to_csv())?;
    }
    std::fs::write(dir.join("integrand.csv"), curves.integrand().to_csv())?;
    Ok(())
}
