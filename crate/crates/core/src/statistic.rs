//! The marginal energy distance statistic and its companions.
//!
//! `MED_n = ∫ 2 G1(t,t) - G2(t,t) - G3(t,t) dt`, with each diagonal surface
//! estimated by [`crate::smoother`] on one shared grid and the integral taken
//! by the trapezoid rule. The statistic is reported unscaled and is not
//! truncated at zero.

use serde::{Deserialize, Serialize};

use crate::data::{DenseSample, TwoSampleDataset};
use crate::error::{MedError, Result};
use crate::smoother::{
    abs_diff, trapezoid, DiagonalCurve, IndexedDataset, SmootherConfig, Surface,
};

/// The three diagonal curves on their shared grid and the integrated statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedBreakdown {
    pub statistic: f64,
    pub grid: Vec<f64>,
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    pub g3: Vec<f64>,
    pub config: SmootherConfig,
}

impl MedBreakdown {
    pub fn curve(&self, surface: Surface) -> DiagonalCurve {
        let values = match surface {
            Surface::G1 => &self.g1,
            Surface::G2 => &self.g2,
            Surface::G3 => &self.g3,
        };
        DiagonalCurve::new(self.grid.clone(), values.clone())
    }

    /// `2 g1 - g2 - g3` pointwise.
    pub fn integrand(&self) -> DiagonalCurve {
        let values = integrand(&self.g1, &self.g2, &self.g3);
        DiagonalCurve::new(self.grid.clone(), values)
    }
}

fn integrand(g1: &[f64], g2: &[f64], g3: &[f64]) -> Vec<f64> {
    g1.iter()
        .zip(g2)
        .zip(g3)
        .map(|((a, b), c)| 2.0 * a - (b + c))
        .collect()
}

pub fn med_statistic(dataset: &TwoSampleDataset, config: &SmootherConfig) -> Result<MedBreakdown> {
    dataset.ensure_valid()?;
    config.validate()?;
    let indexed = IndexedDataset::new(dataset);
    let (g1, (g2, g3)) = rayon::join(
        || indexed.diagonal_curve(Surface::G1, config, &abs_diff),
        || {
            rayon::join(
                || indexed.diagonal_curve(Surface::G2, config, &abs_diff),
                || indexed.diagonal_curve(Surface::G3, config, &abs_diff),
            )
        },
    );
    let (g1, g2, g3) = (g1?, g2?, g3?);
    let values = integrand(&g1.values, &g2.values, &g3.values);
    Ok(MedBreakdown {
        statistic: trapezoid(&g1.grid, &values),
        grid: g1.grid,
        g1: g1.values,
        g2: g2.values,
        g3: g3.values,
        config: *config,
    })
}

/// U-type energy distance between fully observed curves sharing `grid`,
/// with the L2 norm computed by the trapezoid rule.
pub fn dense_energy_distance(
    grid: &[f64],
    x_curves: &[Vec<f64>],
    y_curves: &[Vec<f64>],
) -> Result<f64> {
    if grid.len() < 2 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(MedError::GridMismatch(
            "grid must hold at least two strictly increasing points".into(),
        ));
    }
    if let Some(bad) = x_curves
        .iter()
        .chain(y_curves)
        .find(|c| c.len() != grid.len())
    {
        return Err(MedError::GridMismatch(format!(
            "curve has {} values, grid has {}",
            bad.len(),
            grid.len()
        )));
    }
    let (n, m) = (x_curves.len(), y_curves.len());
    if n < 2 || m < 2 {
        return Err(MedError::InvalidConfig(format!(
            "dense energy distance needs n, m >= 2, got ({n}, {m})"
        )));
    }

    let mut scratch = vec![0.0; grid.len()];
    let mut l2 = |f: &[f64], g: &[f64]| {
        for ((s, a), b) in scratch.iter_mut().zip(f).zip(g) {
            *s = (a - b) * (a - b);
        }
        trapezoid(grid, &scratch).sqrt()
    };

    let mut cross = 0.0;
    for f in x_curves {
        for g in y_curves {
            cross += l2(f, g);
        }
    }
    let mut within = |curves: &[Vec<f64>]| {
        let mut total = 0.0;
        for (i, f) in curves.iter().enumerate() {
            for g in &curves[i + 1..] {
                total += l2(f, g);
            }
        }
        total
    };
    let within_x = within(x_curves);
    let within_y = within(y_curves);
    let (nf, mf) = (n as f64, m as f64);
    Ok(2.0 / (nf * mf) * cross
        - 2.0 / (nf * (nf - 1.0)) * within_x
        - 2.0 / (mf * (mf - 1.0)) * within_y)
}

impl DenseSample {
    pub fn energy_distance(&self) -> Result<f64> {
        dense_energy_distance(&self.grid, &self.x_curves, &self.y_curves)
    }
}

/// Population MED for centred Gaussian marginals with variances `var_x(t)`, `var_y(t)`.
///
/// Uses `E|N(0, v)| = sqrt(2 v / pi)` pointwise and composite Simpson over `[0, 1]`.
pub fn gaussian_population_med(
    var_x: impl Fn(f64) -> f64,
    var_y: impl Fn(f64) -> f64,
) -> Result<f64> {
    const INTERVALS: usize = 2000;
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let mut total = 0.0;
    for i in 0..=INTERVALS {
        let t = i as f64 / INTERVALS as f64;
        let (vx, vy) = (var_x(t), var_y(t));
        for v in [vx, vy] {
            if !(v >= 0.0) {
                return Err(MedError::NegativeVariance { t, value: v });
            }
        }
        let f = c * (2.0 * (vx + vy).sqrt() - (2.0 * vx).sqrt() - (2.0 * vy).sqrt());
        let w = if i == 0 || i == INTERVALS {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        total += w * f;
    }
    Ok(total / (3.0 * INTERVALS as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_med_closed_forms() {
        assert_eq!(gaussian_population_med(|_| 1.0, |_| 1.0).unwrap(), 0.0);
        let expected = (2.0 / std::f64::consts::PI).sqrt()
            * (2.0 * 5f64.sqrt() - 2f64.sqrt() - 8f64.sqrt());
        let got = gaussian_population_med(|_| 1.0, |_| 4.0).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.1831).abs() < 5e-5);
        let varying = gaussian_population_med(|t| 1.0 + t, |t| 1.0 + t).unwrap();
        assert!(varying.abs() < 1e-15);
        assert!(matches!(
            gaussian_population_med(|t| t - 0.5, |_| 1.0),
            Err(MedError::NegativeVariance { .. })
        ));
    }

    #[test]
    fn dense_degenerate_samples() {
        let grid = vec![0.0, 0.25, 0.5, 0.75, 1.0];
        let f = vec![0.0, 1.0, 0.0, -1.0, 0.0];
        let g = vec![1.0; 5];
        let ed = dense_energy_distance(&grid, &[f.clone(), f.clone()], &[g.clone(), g.clone()])
            .unwrap();
        let diff: Vec<f64> = f.iter().zip(&g).map(|(a, b)| (a - b) * (a - b)).collect();
        let norm = trapezoid(&grid, &diff).sqrt();
        assert!((ed - 2.0 * norm).abs() < 1e-14);
    }

    #[test]
    fn dense_identical_multisets_are_nonpositive() {
        let grid = vec![0.0, 0.5, 1.0];
        let curves = vec![vec![0.0, 1.0, 2.0], vec![1.0, 1.0, 1.0], vec![3.0, 0.0, -1.0]];
        let mut shuffled = curves.clone();
        shuffled.rotate_left(1);
        let ed = dense_energy_distance(&grid, &curves, &shuffled).unwrap();
        let mut max_dist: f64 = 0.0;
        for f in &curves {
            for g in &curves {
                let d: Vec<f64> = f.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).collect();
                max_dist = max_dist.max(trapezoid(&grid, &d).sqrt());
            }
        }
        assert!(ed <= 0.0 && ed >= -max_dist, "{ed}");
    }

    #[test]
    fn dense_rejects_mismatched_grids() {
        let grid = vec![0.0, 1.0];
        let ok = vec![vec![0.0, 1.0], vec![1.0, 1.0]];
        assert!(matches!(
            dense_energy_distance(&grid, &ok, &[vec![0.0], vec![1.0, 2.0]]),
            Err(MedError::GridMismatch(_))
        ));
        assert!(dense_energy_distance(&[0.0, 0.0], &ok, &ok).is_err());
        assert!(dense_energy_distance(&grid, &ok[..1], &ok).is_err());
    }
}
