//! Measurement-error variance estimation and error augmentation.
//!
//! The variance of a group is estimated from within-subject pairs. With
//! `r = z - mu(T)` the centred observations, the half squared difference
//! `(r_j - r_k)^2 / 2` of two observations of one subject has expectation
//! `(V(s) + V(t)) / 2 - C(s, t)`, which tends to the error variance as
//! `s -> t`. A local-quadratic fit in the rotated coordinates
//! `(d1 + d2, (d1 - d2)^2)` reads that limit off as its intercept at `(t, t)`.
//! The estimate is the mean of this gap over the grid points inside a
//! central band, clamped at zero.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Group, SubjectRecord, TwoSampleDataset};
use crate::error::{MedError, Result};
use crate::kernel::Kernel;
use crate::permutation::{med_permutation_test, TestConfig, TestResult};
use crate::rng::{stream_rng, AUGMENT_STREAM};
use crate::smoother::{uniform_grid, DiagonalCurve, SmootherConfig};

pub const DEFAULT_NOISE_BANDWIDTH: f64 = 0.1;
pub const DEFAULT_NOISE_BAND: (f64, f64) = (0.25, 0.75);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub kernel: Kernel,
    /// Shared by the mean, raw-variance and gap smoothers.
    pub bandwidth: f64,
    pub grid_size: usize,
    /// Grid points with `band.0 <= t <= band.1` enter the variance average.
    pub band: (f64, f64),
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kernel: Kernel::Epanechnikov,
            bandwidth: DEFAULT_NOISE_BANDWIDTH,
            grid_size: crate::smoother::DEFAULT_GRID_SIZE,
            band: DEFAULT_NOISE_BAND,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        self.smoother().validate()?;
        let (lo, hi) = self.band;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(MedError::InvalidConfig(format!(
                "noise band must satisfy 0 <= lo <= hi <= 1, got ({lo}, {hi})"
            )));
        }
        if !self.grid().iter().any(|t| self.in_band(*t)) {
            return Err(MedError::InvalidConfig(format!(
                "no grid point falls inside the noise band ({lo}, {hi})"
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        uniform_grid(self.grid_size)
    }

    fn in_band(&self, t: f64) -> bool {
        self.band.0 <= t && t <= self.band.1
    }

    /// Expansion and conditioning policy, borrowed from the surface smoother.
    fn smoother(&self) -> SmootherConfig {
        SmootherConfig {
            kernel: self.kernel,
            grid_size: self.grid_size,
            ..SmootherConfig::with_bandwidth(self.bandwidth)
        }
    }
}

/// Per-group diagnostics behind one variance estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupNoise {
    pub sigma2: f64,
    pub mean_curve: DiagonalCurve,
    /// Smoothed squared residuals: signal plus noise variance.
    pub raw_diag: DiagonalCurve,
    /// Smoothed gap surface on the diagonal (the noise variance), on the
    /// grid points inside the band.
    pub gap_diag: DiagonalCurve,
    /// `raw_diag - gap_diag`: the signal variance, inside the band.
    pub cov_diag: DiagonalCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimate {
    pub sigma2_x: f64,
    pub sigma2_y: f64,
    pub x: GroupNoise,
    pub y: GroupNoise,
}

/// A single observation with its subject weight `1 / N_i`.
#[derive(Debug, Clone, Copy)]
struct Weighted {
    time: f64,
    value: f64,
    weight: f64,
}

fn weighted_points(sample: &[SubjectRecord], values: Option<&[Vec<f64>]>) -> Vec<Weighted> {
    let mut out = Vec::new();
    for (i, s) in sample.iter().enumerate() {
        let weight = 1.0 / s.len() as f64;
        for (j, p) in s.points.iter().enumerate() {
            out.push(Weighted {
                time: p.time,
                value: values.map_or(p.value, |v| v[i][j]),
                weight,
            });
        }
    }
    out
}

/// Weighted local-linear regression of value on time at `t`.
fn local_linear_1d(points: &[Weighted], config: &SmootherConfig, t: f64) -> Result<f64> {
    let mut h = config.h_x;
    for _ in 0..=config.max_expansions {
        let (mut s0, mut s1, mut s2, mut r0, mut r1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut count = 0usize;
        for p in points {
            let d = p.time - t;
            if d <= -h || d >= h {
                continue;
            }
            let u = d / h;
            let k = p.weight * config.kernel.eval(u) / h;
            count += 1;
            s0 += k;
            s1 += k * u;
            s2 += k * u * u;
            r0 += k * p.value;
            r1 += k * u * p.value;
        }
        if count > 0 && s0 > 0.0 {
            let det = s0 * s2 - s1 * s1;
            return Ok(if det > config.cond_tol * s0 * s2 {
                (s2 * r0 - s1 * r1) / det
            } else {
                r0 / s0
            });
        }
        h *= config.expand_factor;
    }
    Err(MedError::DegenerateWindow { t1: t, t2: t })
}

fn smooth_on_grid(points: &[Weighted], config: &SmootherConfig) -> Result<DiagonalCurve> {
    let grid = config.grid();
    let values: Vec<Result<f64>> = grid
        .par_iter()
        .map(|&t| local_linear_1d(points, config, t))
        .collect();
    let values = values
        .into_iter()
        .enumerate()
        .map(|(i, v)| v.map_err(|e| e.at_grid_point(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DiagonalCurve::new(grid, values))
}

/// Pooled local-linear mean curve, each observation weighted by `1 / N_i`.
pub fn estimate_mean_function(
    sample: &[SubjectRecord],
    kernel: Kernel,
    h: f64,
    grid_size: usize,
) -> Result<DiagonalCurve> {
    let config = SmootherConfig {
        kernel,
        grid_size,
        ..SmootherConfig::with_bandwidth(h)
    };
    config.validate()?;
    let points = weighted_points(sample, None);
    if points.len() < 2 {
        return Err(MedError::InvalidConfig(format!(
            "mean estimation needs at least two observations, got {}",
            points.len()
        )));
    }
    smooth_on_grid(&points, &config)
}

/// A within-subject pair with its half squared residual difference.
#[derive(Debug, Clone, Copy)]
struct Pair {
    t1: f64,
    t2: f64,
    half_sq: f64,
}

/// Intercept of the rotated local-quadratic fit
/// `b0 + b1 (d1 + d2) + b2 (d1 - d2)^2` at `(t, t)`, pairs weighted equally.
fn gap_at(pairs: &[Pair], config: &SmootherConfig, t: f64) -> Result<f64> {
    let mut h = config.h_x;
    for _ in 0..=config.max_expansions {
        let mut a = [[0.0f64; 3]; 3];
        let mut b = [0.0f64; 3];
        let mut count = 0usize;
        for p in pairs {
            let (d1, d2) = (p.t1 - t, p.t2 - t);
            if d1 <= -h || d1 >= h || d2 <= -h || d2 >= h {
                continue;
            }
            let (u1, u2) = (d1 / h, d2 / h);
            let w = config.kernel.eval(u1) * config.kernel.eval(u2);
            let x = [1.0, u1 + u2, (u1 - u2) * (u1 - u2)];
            for r in 0..3 {
                for c in r..3 {
                    a[r][c] += w * x[r] * x[c];
                }
                b[r] += w * x[r] * p.half_sq;
            }
            count += 1;
        }
        if count > 0 && a[0][0] > 0.0 {
            a[1][0] = a[0][1];
            a[2][0] = a[0][2];
            a[2][1] = a[1][2];
            let det = det3(&a);
            let scale = a[0][0] * a[1][1] * a[2][2];
            return Ok(if scale > 0.0 && det > config.cond_tol * scale {
                let mut a0 = a;
                for r in 0..3 {
                    a0[r][0] = b[r];
                }
                det3(&a0) / det
            } else {
                b[0] / a[0][0]
            });
        }
        h *= config.expand_factor;
    }
    Err(MedError::DegenerateWindow { t1: t, t2: t })
}

fn det3(a: &[[f64; 3]; 3]) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Variance estimate for one group with all diagnostic curves.
pub fn estimate_group_noise(sample: &[SubjectRecord], config: &NoiseConfig) -> Result<GroupNoise> {
    config.validate()?;
    if sample.iter().filter(|s| s.len() >= 2).count() < 2 {
        return Err(MedError::InsufficientPairs);
    }
    let smoother = config.smoother();
    let points = weighted_points(sample, None);

    let fitted: Vec<Result<f64>> = points
        .par_iter()
        .map(|p| local_linear_1d(&points, &smoother, p.time))
        .collect();
    let mut residuals: Vec<Vec<f64>> = Vec::with_capacity(sample.len());
    let mut fitted = fitted.into_iter();
    for s in sample {
        let mut r = Vec::with_capacity(s.len());
        for p in &s.points {
            let mu = fitted.next().expect("one fit per observation")?;
            r.push(p.value - mu);
        }
        residuals.push(r);
    }

    let mut pairs = Vec::new();
    for (s, r) in sample.iter().zip(&residuals) {
        for j in 0..s.len() {
            for k in j + 1..s.len() {
                let diff = r[j] - r[k];
                pairs.push(Pair {
                    t1: s.points[j].time,
                    t2: s.points[k].time,
                    half_sq: 0.5 * diff * diff,
                });
            }
        }
    }

    let squared: Vec<Vec<f64>> = residuals
        .iter()
        .map(|r| r.iter().map(|v| v * v).collect())
        .collect();
    let mean_curve = smooth_on_grid(&points, &smoother)?;
    let raw_diag = smooth_on_grid(&weighted_points(sample, Some(&squared)), &smoother)?;

    let full_grid = config.grid();
    let band: Vec<usize> = (0..full_grid.len())
        .filter(|&i| config.in_band(full_grid[i]))
        .collect();
    let gaps: Vec<Result<f64>> = band
        .par_iter()
        .map(|&i| gap_at(&pairs, &smoother, full_grid[i]))
        .collect();
    let gaps = gaps
        .into_iter()
        .zip(&band)
        .map(|(v, &i)| v.map_err(|e| e.at_grid_point(i)))
        .collect::<Result<Vec<_>>>()?;
    let sigma2 = (gaps.iter().sum::<f64>() / gaps.len() as f64).max(0.0);

    let grid: Vec<f64> = band.iter().map(|&i| full_grid[i]).collect();
    let cov: Vec<f64> = band
        .iter()
        .zip(&gaps)
        .map(|(&i, g)| raw_diag.values[i] - g)
        .collect();
    Ok(GroupNoise {
        sigma2,
        mean_curve,
        raw_diag,
        gap_diag: DiagonalCurve::new(grid.clone(), gaps),
        cov_diag: DiagonalCurve::new(grid, cov),
    })
}

pub fn estimate_noise_variance(sample: &[SubjectRecord], config: &NoiseConfig) -> Result<f64> {
    Ok(estimate_group_noise(sample, config)?.sigma2)
}

pub fn estimate_noise(dataset: &TwoSampleDataset, config: &NoiseConfig) -> Result<NoiseEstimate> {
    let (x, y) = rayon::join(
        || estimate_group_noise(&dataset.x_subjects, config),
        || estimate_group_noise(&dataset.y_subjects, config),
    );
    let (x, y) = (x?, y?);
    Ok(NoiseEstimate {
        sigma2_x: x.sigma2,
        sigma2_y: y.sigma2,
        x,
        y,
    })
}

/// Adds `N(0, |sigma2_y - sigma2_x|)` noise to every observation of the
/// lower-variance group; the other group is returned untouched.
///
/// Draws come from the augmentation stream of `seed`, in subject then point order.
pub fn augment_errors(
    dataset: &TwoSampleDataset,
    sigma2_x: f64,
    sigma2_y: f64,
    seed: u64,
) -> Result<TwoSampleDataset> {
    for (name, v) in [("sigma2_x", sigma2_x), ("sigma2_y", sigma2_y)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(MedError::InvalidConfig(format!(
                "{name} must be finite and nonnegative, got {v}"
            )));
        }
    }
    let mut out = dataset.clone();
    let target = match sigma2_x.partial_cmp(&sigma2_y) {
        Some(std::cmp::Ordering::Less) => &mut out.x_subjects,
        Some(std::cmp::Ordering::Greater) => &mut out.y_subjects,
        _ => return Ok(out),
    };
    let normal = Normal::new(0.0, (sigma2_y - sigma2_x).abs().sqrt())
        .expect("finite nonnegative standard deviation");
    let mut rng = stream_rng(seed, AUGMENT_STREAM);
    for s in target.iter_mut() {
        for p in &mut s.points {
            p.value += normal.sample(&mut rng);
        }
    }
    Ok(out)
}

/// Group whose observations [`augment_errors`] perturbs, if any.
pub fn augmented_group(sigma2_x: f64, sigma2_y: f64) -> Option<Group> {
    match sigma2_x.partial_cmp(&sigma2_y)? {
        std::cmp::Ordering::Less => Some(Group::X),
        std::cmp::Ordering::Greater => Some(Group::Y),
        std::cmp::Ordering::Equal => None,
    }
}

/// How measurement error is handled before testing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Test the observed values as they are.
    None,
    /// Both groups are assumed to share one error law; test the observed values.
    #[default]
    EqualErrors,
    /// Estimate both variances and equalise them by augmentation before testing.
    Augment,
}

impl NoiseMode {
    pub fn label(self) -> &'static str {
        match self {
            NoiseMode::None => "none",
            NoiseMode::EqualErrors => "equal_errors",
            NoiseMode::Augment => "augment",
        }
    }
}

impl std::str::FromStr for NoiseMode {
    type Err = MedError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "none" => Ok(NoiseMode::None),
            "equal_errors" | "equal" => Ok(NoiseMode::EqualErrors),
            "augment" => Ok(NoiseMode::Augment),
            other => Err(MedError::InvalidConfig(format!(
                "unknown noise mode `{other}` (expected none, equal_errors or augment)"
            ))),
        }
    }
}

/// Estimates both variances and augments once with the test seed.
pub fn augment_with_estimate(
    dataset: &TwoSampleDataset,
    config: &TestConfig,
) -> Result<(TwoSampleDataset, NoiseEstimate)> {
    let estimate = estimate_noise(dataset, &config.noise)?;
    let augmented = augment_errors(dataset, estimate.sigma2_x, estimate.sigma2_y, config.seed)?;
    Ok((augmented, estimate))
}

/// With `equal_error_assumed` this is the plain test; otherwise the
/// permutations shuffle subjects of one fixed augmented dataset.
pub fn med_test_with_noise(
    dataset: &TwoSampleDataset,
    config: &TestConfig,
    equal_error_assumed: bool,
) -> Result<TestResult> {
    if equal_error_assumed {
        med_permutation_test(dataset, config)
    } else {
        dataset.ensure_valid()?;
        config.validate()?;
        let (augmented, _) = augment_with_estimate(dataset, config)?;
        med_permutation_test(&augmented, config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ObservationPoint;
    use rand::Rng;

    fn smooth_sample(n: usize, sigma: f64, seed: u64) -> Vec<SubjectRecord> {
        let mut rng = stream_rng(seed, 0);
        let noise = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|i| {
                let count = rng.random_range(2..=10);
                let (a, b): (f64, f64) = (noise.sample(&mut rng), noise.sample(&mut rng));
                let points = (0..count)
                    .map(|_| {
                        let t: f64 = rng.random();
                        let x = -a * (2.0 * std::f64::consts::PI * t).cos()
                            + b * (2.0 * std::f64::consts::PI * t).sin();
                        ObservationPoint::new(t, x + sigma * noise.sample(&mut rng))
                    })
                    .collect();
                SubjectRecord::new(format!("s{i}"), points)
            })
            .collect()
    }

    #[test]
    fn mean_of_constant_and_affine_data() {
        let sample: Vec<SubjectRecord> = (0..6)
            .map(|i| {
                let times: Vec<f64> = (0..4).map(|j| (i * 4 + j) as f64 / 23.0).collect();
                let values: Vec<f64> = times.iter().map(|t| 2.0 + 3.0 * t).collect();
                SubjectRecord::from_pairs(format!("{i}"), &times, &values)
            })
            .collect();
        let curve = estimate_mean_function(&sample, Kernel::Epanechnikov, 0.2, 21).unwrap();
        for (t, v) in curve.grid.iter().zip(&curve.values) {
            assert!((v - (2.0 + 3.0 * t)).abs() < 1e-12, "{t} {v}");
        }
        let flat: Vec<SubjectRecord> = sample
            .iter()
            .map(|s| SubjectRecord::from_pairs(&s.id, &s.points.iter().map(|p| p.time).collect::<Vec<_>>(), &[1.5; 4]))
            .collect();
        let curve = estimate_mean_function(&flat, Kernel::Epanechnikov, 0.2, 21).unwrap();
        assert!(curve.values.iter().all(|v| (v - 1.5).abs() < 1e-14));
    }

    #[test]
    fn sparse_mean_is_near_zero() {
        let sample = smooth_sample(300, 0.0, 3);
        let curve = estimate_mean_function(&sample, Kernel::Epanechnikov, 0.2, 101).unwrap();
        for (t, v) in curve.grid.iter().zip(&curve.values) {
            if (0.1..=0.9).contains(t) {
                assert!(v.abs() <= 0.15, "mean {v} at {t}");
            }
        }
    }

    #[test]
    fn recovers_noise_level() {
        let config = NoiseConfig::default();
        let noisy = estimate_group_noise(&smooth_sample(300, 0.2, 5), &config).unwrap();
        assert!((0.13..=0.27).contains(&noisy.sigma2.sqrt()), "{}", noisy.sigma2);
        // signal variance of the sine/cosine process is 1 everywhere
        let mid = noisy.cov_diag.values[25];
        assert!((mid - 1.0).abs() < 0.35, "{mid}");
        let clean = estimate_noise_variance(&smooth_sample(300, 0.0, 5), &config).unwrap();
        assert!((0.0..=0.02).contains(&clean), "{clean}");
    }

    #[test]
    fn shift_invariance_on_dyadic_data() {
        let sample = smooth_sample(60, 0.1, 8);
        let shifted: Vec<SubjectRecord> = sample
            .iter()
            .map(|s| SubjectRecord::new(&s.id, s.points.iter().map(|p| ObservationPoint::new(p.time, p.value + 4.0)).collect()))
            .collect();
        let config = NoiseConfig::default();
        let a = estimate_noise_variance(&sample, &config).unwrap();
        let b = estimate_noise_variance(&shifted, &config).unwrap();
        assert!((a - b).abs() <= 1e-9 * a.max(1e-3), "{a} {b}");
    }

    #[test]
    fn needs_two_subjects_with_pairs() {
        let sample = vec![
            SubjectRecord::from_pairs("a", &[0.1, 0.5], &[1.0, 2.0]),
            SubjectRecord::from_pairs("b", &[0.3], &[1.0]),
            SubjectRecord::from_pairs("c", &[0.7], &[0.0]),
        ];
        assert!(matches!(
            estimate_noise_variance(&sample, &NoiseConfig::default()),
            Err(MedError::InsufficientPairs)
        ));
    }

    fn grid_dataset(n: usize) -> TwoSampleDataset {
        let make = |prefix: &str, offset: f64| -> Vec<SubjectRecord> {
            (0..n)
                .map(|i| {
                    let times: Vec<f64> = (0..5).map(|j| (j as f64 + 0.5) / 5.0).collect();
                    let values: Vec<f64> = times.iter().map(|t| offset + t + i as f64).collect();
                    SubjectRecord::from_pairs(format!("{prefix}{i}"), &times, &values)
                })
                .collect()
        };
        TwoSampleDataset::new(make("x", 0.0), make("y", 1.0))
    }

    #[test]
    fn augmentation_touches_only_the_quieter_group() {
        let ds = grid_dataset(4);
        assert_eq!(augment_errors(&ds, 0.3, 0.3, 1).unwrap(), ds);
        let aug = augment_errors(&ds, 0.0025, 0.0625, 1).unwrap();
        assert_eq!(aug.y_subjects, ds.y_subjects);
        assert_eq!(augmented_group(0.0025, 0.0625), Some(Group::X));
        for (a, b) in aug.x_subjects.iter().zip(&ds.x_subjects) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.len(), b.len());
            for (p, q) in a.points.iter().zip(&b.points) {
                assert_eq!(p.time, q.time);
                assert_ne!(p.value, q.value);
            }
        }
        let flipped = augment_errors(&ds, 0.0625, 0.0025, 1).unwrap();
        assert_eq!(flipped.x_subjects, ds.x_subjects);
        assert_eq!(augment_errors(&ds, 0.0025, 0.0625, 1).unwrap(), aug);
        assert!(augment_errors(&ds, -1.0, 0.0, 1).is_err());
    }

    #[test]
    fn injected_noise_has_the_requested_variance() {
        let points: Vec<ObservationPoint> =
            (0..1000).map(|j| ObservationPoint::new(j as f64 / 999.0, 0.0)).collect();
        let subjects: Vec<SubjectRecord> = (0..100)
            .map(|i| SubjectRecord::new(format!("x{i}"), points.clone()))
            .collect();
        let ds = TwoSampleDataset::new(subjects.clone(), subjects);
        let aug = augment_errors(&ds, 0.0025, 0.0625, 17).unwrap();
        let draws: Vec<f64> = aug.x_subjects.iter().flat_map(|s| s.points.iter().map(|p| p.value)).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!((0.058..=0.062).contains(&var), "{var}");
    }

    #[test]
    fn noise_modes_parse() {
        assert_eq!("augment".parse::<NoiseMode>().unwrap(), NoiseMode::Augment);
        assert_eq!("equal-errors".parse::<NoiseMode>().unwrap(), NoiseMode::EqualErrors);
        assert_eq!("None".parse::<NoiseMode>().unwrap(), NoiseMode::None);
        assert!("both".parse::<NoiseMode>().is_err());
        assert_eq!(NoiseMode::default(), NoiseMode::EqualErrors);
    }

    #[test]
    fn equal_errors_is_the_plain_test() {
        let mut y = smooth_sample(6, 0.0, 2);
        for s in &mut y {
            s.id = format!("y{}", s.id);
        }
        let ds = TwoSampleDataset::new(smooth_sample(6, 0.0, 1), y);
        let config = TestConfig {
            smoother: SmootherConfig {
                grid_size: 21,
                ..SmootherConfig::with_bandwidth(0.3)
            },
            permutations: 20,
            seed: 4,
            ..TestConfig::default()
        };
        assert_eq!(
            med_test_with_noise(&ds, &config, true).unwrap(),
            med_permutation_test(&ds, &config).unwrap()
        );
    }
}
