//! Independent reference implementations used as test oracles.
//!
//! Nothing here calls into the library's numerical code: surfaces are fitted
//! by forming the weighted 3x3 normal equations pair by pair and solving
//! them with Gaussian elimination.

#![allow(dead_code)]

use medtest::{SubjectRecord, TwoSampleDataset};

pub fn epanechnikov(u: f64) -> f64 {
    if u.abs() < 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

/// One weighted observation pair entering a surface fit.
struct Row {
    d1: f64,
    d2: f64,
    w: f64,
    r: f64,
}

fn rows(
    first: &[SubjectRecord],
    second: &[SubjectRecord],
    same_group: bool,
    (h1, h2): (f64, f64),
    t: f64,
    response: &dyn Fn(f64, f64, f64, f64) -> f64,
) -> Vec<Row> {
    let mut out = Vec::new();
    for (i, a) in first.iter().enumerate() {
        for (k, b) in second.iter().enumerate() {
            if same_group && i == k {
                continue;
            }
            for p in &a.points {
                for q in &b.points {
                    let (d1, d2) = (p.time - t, q.time - t);
                    let w = epanechnikov(d1 / h1) / (h1 * a.len() as f64)
                        * epanechnikov(d2 / h2)
                        / (h2 * b.len() as f64);
                    if w > 0.0 {
                        out.push(Row {
                            d1,
                            d2,
                            w,
                            r: response(p.time, p.value, q.time, q.value),
                        });
                    }
                }
            }
        }
    }
    out
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for c in col..3 {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut s = b[row];
        for c in row + 1..3 {
            s -= a[row][c] * x[c];
        }
        x[row] = s / a[row][row];
    }
    x
}

fn det3(a: &[[f64; 3]; 3]) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Weighted least-squares intercept of `r ~ 1 + d1 + d2`, falling back to the
/// weighted mean when the normal equations are numerically singular.
fn intercept(rows: &[Row]) -> Option<f64> {
    if rows.is_empty() {
        return None;
    }
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for row in rows {
        let x = [1.0, row.d1, row.d2];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] += row.w * x[i] * x[j];
            }
            b[i] += row.w * x[i] * row.r;
        }
    }
    let scale = a[0][0] * a[1][1] * a[2][2];
    if scale > 0.0 && det3(&a).abs() > 1e-8 * scale {
        Some(solve3(a, b)[0])
    } else {
        Some(b[0] / a[0][0])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Which {
    G1,
    G2,
    G3,
}

/// Diagonal value of one surface at `t`, enlarging both bandwidths by 1.5 up
/// to three times while no pair has positive weight.
pub fn surface_at(
    ds: &TwoSampleDataset,
    which: Which,
    (hx, hy): (f64, f64),
    t: f64,
    response: &dyn Fn(f64, f64, f64, f64) -> f64,
) -> Option<f64> {
    let (first, second, same, h) = match which {
        Which::G1 => (&ds.x_subjects, &ds.y_subjects, false, (hx, hy)),
        Which::G2 => (&ds.x_subjects, &ds.x_subjects, true, (hx, hx)),
        Which::G3 => (&ds.y_subjects, &ds.y_subjects, true, (hy, hy)),
    };
    let mut h = h;
    for _ in 0..4 {
        let r = rows(first, second, same, h, t, response);
        if !r.is_empty() {
            return intercept(&r);
        }
        h = (h.0 * 1.5, h.1 * 1.5);
    }
    None
}

pub fn abs_response(_: f64, a: f64, _: f64, b: f64) -> f64 {
    (a - b).abs()
}

pub fn grid(m: usize) -> Vec<f64> {
    (0..m).map(|k| k as f64 / (m - 1) as f64).collect()
}

pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    let mut total = 0.0;
    for k in 1..grid.len() {
        total += 0.5 * (grid[k] - grid[k - 1]) * (values[k] + values[k - 1]);
    }
    total
}

/// MED by explicit normal equations at every grid point.
pub fn brute_med(ds: &TwoSampleDataset, h: (f64, f64), m: usize) -> f64 {
    let g = grid(m);
    let integrand: Vec<f64> = g
        .iter()
        .map(|&t| {
            let s = |w| surface_at(ds, w, h, t, &abs_response).expect("non-degenerate window");
            2.0 * s(Which::G1) - s(Which::G2) - s(Which::G3)
        })
        .collect();
    trapezoid(&g, &integrand)
}

/// Energy distance of dense curves: explicit sums over all curve pairs.
pub fn brute_dense_ed(grid: &[f64], x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let dist = |f: &[f64], g: &[f64]| {
        let sq: Vec<f64> = f.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).collect();
        trapezoid(grid, &sq).sqrt()
    };
    let (n, m) = (x.len() as f64, y.len() as f64);
    let mut cross = 0.0;
    for f in x {
        for g in y {
            cross += dist(f, g);
        }
    }
    let mut wx = 0.0;
    for (i, f) in x.iter().enumerate() {
        for (j, g) in x.iter().enumerate() {
            if i != j {
                wx += dist(f, g);
            }
        }
    }
    let mut wy = 0.0;
    for (i, f) in y.iter().enumerate() {
        for (j, g) in y.iter().enumerate() {
            if i != j {
                wy += dist(f, g);
            }
        }
    }
    2.0 * cross / (n * m) - wx / (n * (n - 1.0)) - wy / (m * (m - 1.0))
}

/// Folded-normal population MED for `N(0, vx)` against `N(0, vy)` at every t.
pub fn folded_normal_med(vx: f64, vy: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    c * (2.0 * (vx + vy).sqrt() - (2.0 * vx).sqrt() - (2.0 * vy).sqrt())
}

/// Small datasets with a few subjects per group and well-spread schedules.
pub fn micro_dataset(seed: u64, subjects: usize) -> TwoSampleDataset {
    // A tiny LCG keeps the fixture independent of the library's RNG plumbing.
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = move || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut group = |prefix: &str| -> Vec<SubjectRecord> {
        (0..subjects)
            .map(|i| {
                let count = 3 + (next() * 4.0) as usize;
                let times: Vec<f64> = (0..count)
                    .map(|j| (j as f64 + next()) / count as f64)
                    .collect();
                let values: Vec<f64> = times.iter().map(|_| 4.0 * next() - 2.0).collect();
                SubjectRecord::from_pairs(format!("{prefix}{i}"), &times, &values)
            })
            .collect()
    };
    let x = group("x");
    let y = group("y");
    TwoSampleDataset::new(x, y)
}

/// Like [`micro_dataset`] but with times and values on a dyadic lattice, so
/// that shifts and power-of-two scalings of the values are exact.
pub fn dyadic_dataset(seed: u64, subjects: usize) -> TwoSampleDataset {
    let ds = micro_dataset(seed, subjects);
    let snap = |v: f64, step: f64| (v / step).round() * step;
    let fix = |g: &[SubjectRecord]| -> Vec<SubjectRecord> {
        g.iter()
            .map(|s| {
                let mut times: Vec<f64> = s.points.iter().map(|p| snap(p.time, 1.0 / 64.0)).collect();
                times.dedup();
                let values: Vec<f64> = s.points.iter().take(times.len()).map(|p| snap(p.value, 1.0 / 16.0)).collect();
                SubjectRecord::from_pairs(&s.id, &times, &values)
            })
            .collect()
    };
    TwoSampleDataset::new(fix(&ds.x_subjects), fix(&ds.y_subjects))
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
