//! Two-sample tests of marginal homogeneity for sparsely observed functional data.
//!
//! The test statistic is the marginal energy distance
//! `MED = ∫ 2 E|X(t) - Y(t)| - E|X(t) - X'(t)| - E|Y(t) - Y'(t)| dt`.
//! Each expectation is a diagonal of a smooth surface estimated by a
//! local-linear smoother over pairs of observations, so no individual curve
//! is ever reconstructed. Inference is by subject-level permutation.
//!
//! ```no_run
//! use medtest::{parse_long_csv, med_permutation_test, TestConfig};
//!
//! let text = std::fs::read_to_string("data.csv")?;
//! let dataset = parse_long_csv(&text)?;
//! let result = med_permutation_test(&dataset, &TestConfig::default())?;
//! println!("{}", result.summary());
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod batch;
pub mod data;
pub mod error;
pub mod kernel;
pub mod noise;
pub mod permutation;
pub mod pipeline;
pub mod rng;
pub mod sim;
pub mod smoother;
pub mod statistic;

pub use batch::med_for_labelings;
pub use data::{
    parse_long_csv, parse_long_csv_raw, parse_long_csv_with_range, parse_wide_csv, rescale_time,
    validate_dataset, DenseSample, Group, ObservationPoint, SubjectRecord, TwoSampleDataset,
    Violation,
};
pub use error::{ErrorClass, MedError, Result};
pub use kernel::Kernel;
pub use noise::{
    augment_errors, estimate_mean_function, estimate_noise, estimate_noise_variance,
    med_test_with_noise, NoiseConfig, NoiseEstimate, NoiseMode,
};
pub use permutation::{
    apply_permutation, dense_permutation_test, med_permutation_test, permutation_p_value,
    permutation_test, TestConfig, TestResult,
};
pub use pipeline::{export_curves, run_med_test, RunFailure, RunReport};
pub use sim::{monte_carlo_rejection_rate, Family, MonteCarloSummary, SimDesign};
pub use smoother::{diagonal_curve, DiagonalCurve, SmootherConfig, Surface};
pub use statistic::{dense_energy_distance, gaussian_population_med, med_statistic, MedBreakdown};
