//! MED for many relabelings of one pooled sample.
//!
//! A permutation only changes which subjects are called X and which Y; the
//! subjects themselves, and therefore every subject-pair sum entering the
//! smoother, stay the same. At each grid point we tabulate, for every ordered
//! pair of distinct subjects `(i, k)`,
//!
//! ```text
//! A00[i,k] = Σ_a Σ_b k_a k_b |z_a - z_b|
//! A10[i,k] = Σ_a Σ_b k_a u_a k_b |z_a - z_b|
//! A01[i,k] = Σ_a Σ_b k_a k_b u_b |z_a - z_b|
//! ```
//!
//! and per subject the kernel power sums `s_i^p = Σ_a k_a u_a^p`. For a labeling
//! with X-indicator vector `x`, every response moment of the three surfaces is
//! a quadratic form `xᵀ A x` plus row/column sums, and every design moment is
//! a product of group totals of `s_i^p` minus a diagonal correction.
//!
//! Grid points whose window is empty under some labeling are recomputed by the
//! direct smoother with bandwidth expansion, for that labeling only.

use rayon::prelude::*;

use crate::data::{SubjectRecord, TwoSampleDataset};
use crate::error::{MedError, Result};
use crate::kernel::Kernel;
use crate::permutation::apply_permutation;
use crate::smoother::{
    abs_diff, exclusive_sums, pair_surface_at, trapezoid, IndexedDataset, MomentAccumulator,
    Pairing, SmootherConfig,
};

/// MED of `dataset` relabeled by each order in `labelings`.
///
/// Each labeling lists pooled subject indices (X first, then Y); its first `n`
/// entries form the new X group. The result depends only on the resulting
/// X set, not on the order within it.
pub fn med_for_labelings(
    dataset: &TwoSampleDataset,
    config: &SmootherConfig,
    labelings: &[Vec<usize>],
) -> Result<Vec<f64>> {
    dataset.ensure_valid()?;
    config.validate()?;
    let pooled: Vec<&SubjectRecord> = dataset.pooled().collect();
    let total = pooled.len();
    let n = dataset.n();

    let masks: Vec<Labeling> = labelings
        .iter()
        .enumerate()
        .map(|(index, order)| {
            Labeling::new(order, n, total).map_err(|e| MedError::Replicate {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let grid = config.grid();
    let per_point: Vec<Result<Vec<f64>>> = grid
        .par_iter()
        .enumerate()
        .map(|(g, &t)| {
            GridPoint::new(&pooled, config, t)
                .integrands(dataset, config, labelings, &masks)
                .map_err(|e| e.at_grid_point(g))
        })
        .collect();
    let mut columns = Vec::with_capacity(grid.len());
    for column in per_point {
        columns.push(column?);
    }

    let mut scratch = vec![0.0; grid.len()];
    Ok((0..masks.len())
        .map(|l| {
            for (s, column) in scratch.iter_mut().zip(&columns) {
                *s = column[l];
            }
            trapezoid(&grid, &scratch)
        })
        .collect())
}

struct Labeling {
    /// Indicators of X and of Y membership as 0.0 / 1.0.
    x_mask: Vec<f64>,
    y_mask: Vec<f64>,
    /// X members in ascending pooled index.
    x_members: Vec<usize>,
    y_members: Vec<usize>,
}

impl Labeling {
    fn new(order: &[usize], n: usize, total: usize) -> Result<Self> {
        if order.len() != total {
            return Err(MedError::InvalidPermutation(format!(
                "expected {total} entries, got {}",
                order.len()
            )));
        }
        let mut mask = vec![0.0; total];
        let mut seen = vec![false; total];
        for (pos, &i) in order.iter().enumerate() {
            if i >= total || seen[i] {
                return Err(MedError::InvalidPermutation(format!(
                    "entry {i} repeated or out of range"
                )));
            }
            seen[i] = true;
            if pos < n {
                mask[i] = 1.0;
            }
        }
        let x_members = (0..total).filter(|&i| mask[i] == 1.0).collect();
        let y_members = (0..total).filter(|&i| mask[i] == 0.0).collect();
        Ok(Self {
            y_mask: mask.iter().map(|m| 1.0 - m).collect(),
            x_mask: mask,
            x_members,
            y_members,
        })
    }
}

#[derive(Default)]
struct SubjectWindow {
    k: Vec<f64>,
    u: Vec<f64>,
    z: Vec<f64>,
    sums: [f64; 3],
    positive: u64,
}

impl SubjectWindow {
    fn new(subject: &SubjectRecord, kernel: Kernel, t: f64, h: f64) -> Self {
        let weight = 1.0 / subject.points.len() as f64;
        let mut w = Self::default();
        for p in &subject.points {
            if (p.time - t).abs() < h {
                let u = (p.time - t) / h;
                let k = weight * kernel.eval(u) / h;
                w.sums[0] += k;
                w.sums[1] += k * u;
                w.sums[2] += k * u * u;
                if k > 0.0 {
                    w.positive += 1;
                }
                w.k.push(k);
                w.u.push(u);
                w.z.push(p.value);
            }
        }
        w
    }

    fn is_empty(&self) -> bool {
        self.k.is_empty()
    }
}

/// `(A00, A10, A01)` entries for one ordered subject pair.
fn pair_entries(a: &SubjectWindow, b: &SubjectWindow) -> (f64, f64, f64) {
    let (mut s00, mut s10, mut s01) = (0.0, 0.0, 0.0);
    for ((&ka, &ua), &za) in a.k.iter().zip(&a.u).zip(&a.z) {
        let (mut row0, mut row_u) = (0.0, 0.0);
        for ((&kb, &ub), &zb) in b.k.iter().zip(&b.u).zip(&b.z) {
            let r = kb * (za - zb).abs();
            row0 += r;
            row_u += ub * r;
        }
        s00 += ka * row0;
        s10 += ka * ua * row0;
        s01 += ka * row_u;
    }
    (s00, s10, s01)
}

/// Sums of a pair matrix over the four group blocks of one labeling.
#[derive(Debug, Clone, Copy, Default)]
struct Blocks {
    xx: f64,
    xy: f64,
    yx: f64,
    yy: f64,
}

/// Square matrix of subject-pair entries; the diagonal is zero.
struct PairMatrix {
    size: usize,
    data: Vec<f64>,
}

impl PairMatrix {
    fn zeros(size: usize) -> Self {
        Self {
            size,
            data: vec![0.0; size * size],
        }
    }

    fn set(&mut self, i: usize, k: usize, v: f64) {
        self.data[i * self.size + k] = v;
    }

    /// Every block summed from its own entries only, rows in ascending index.
    fn blocks(&self, l: &Labeling) -> Blocks {
        let mut b = Blocks::default();
        for (i, row) in self.data.chunks_exact(self.size).enumerate() {
            let (to_x, to_y) = dot2(row, &l.x_mask, &l.y_mask);
            if l.x_mask[i] == 1.0 {
                b.xx += to_x;
                b.xy += to_y;
            } else {
                b.yx += to_x;
                b.yy += to_y;
            }
        }
        b
    }
}

/// `(a · x, a · y)` in one pass.
fn dot2(a: &[f64], x: &[f64], y: &[f64]) -> (f64, f64) {
    let mut lx = [0.0f64; 4];
    let mut ly = [0.0f64; 4];
    let (ca, cx, cy) = (a.chunks_exact(4), x.chunks_exact(4), y.chunks_exact(4));
    let (ra, rx, ry) = (ca.remainder(), cx.remainder(), cy.remainder());
    for ((v, p), q) in ca.zip(cx).zip(cy) {
        for j in 0..4 {
            lx[j] += v[j] * p[j];
            ly[j] += v[j] * q[j];
        }
    }
    let mut tx = 0.0;
    let mut ty = 0.0;
    for ((v, p), q) in ra.iter().zip(rx).zip(ry) {
        tx += v * p;
        ty += v * q;
    }
    (
        (lx[0] + lx[1]) + (lx[2] + lx[3]) + tx,
        (ly[0] + ly[1]) + (ly[2] + ly[3]) + ty,
    )
}

/// Pair matrices for one bandwidth combination.
enum PairTables {
    /// Both members share a bandwidth, so `A01 = A10ᵀ`.
    Symmetric { a00: PairMatrix, a10: PairMatrix },
    Full {
        a00: PairMatrix,
        a10: PairMatrix,
        a01: PairMatrix,
    },
}

impl PairTables {
    fn symmetric(windows: &[SubjectWindow]) -> Self {
        let size = windows.len();
        let (mut a00, mut a10) = (PairMatrix::zeros(size), PairMatrix::zeros(size));
        for i in 0..size {
            if windows[i].is_empty() {
                continue;
            }
            for k in i + 1..size {
                if windows[k].is_empty() {
                    continue;
                }
                let (s00, s10, s01) = pair_entries(&windows[i], &windows[k]);
                a00.set(i, k, s00);
                a00.set(k, i, s00);
                a10.set(i, k, s10);
                a10.set(k, i, s01);
            }
        }
        PairTables::Symmetric { a00, a10 }
    }

    fn full(first: &[SubjectWindow], second: &[SubjectWindow]) -> Self {
        let size = first.len();
        let mut a00 = PairMatrix::zeros(size);
        let mut a10 = PairMatrix::zeros(size);
        let mut a01 = PairMatrix::zeros(size);
        for i in 0..size {
            if first[i].is_empty() {
                continue;
            }
            for k in 0..size {
                if k == i || second[k].is_empty() {
                    continue;
                }
                let (s00, s10, s01) = pair_entries(&first[i], &second[k]);
                a00.set(i, k, s00);
                a10.set(i, k, s10);
                a01.set(i, k, s01);
            }
        }
        PairTables::Full { a00, a10, a01 }
    }

    /// `[V00, V10, V01]` over ordered pairs inside X, inside Y, and from X to Y.
    fn responses(&self, l: &Labeling) -> [[f64; 3]; 3] {
        match self {
            PairTables::Symmetric { a00, a10 } => {
                let (b00, b10) = (a00.blocks(l), a10.blocks(l));
                [
                    [b00.xx, b10.xx, b10.xx],
                    [b00.yy, b10.yy, b10.yy],
                    // A01[i, k] = A10[k, i]
                    [b00.xy, b10.xy, b10.yx],
                ]
            }
            PairTables::Full { a00, a10, a01 } => {
                let (b00, b10, b01) = (a00.blocks(l), a10.blocks(l), a01.blocks(l));
                [
                    [b00.xx, b10.xx, b01.xx],
                    [b00.yy, b10.yy, b01.yy],
                    [b00.xy, b10.xy, b01.xy],
                ]
            }
        }
    }
}

struct GridPoint {
    t: f64,
    /// Windows under `h_x`, and under `h_y` when it differs.
    windows_x: Vec<SubjectWindow>,
    windows_y: Option<Vec<SubjectWindow>>,
    within_x: PairTables,
    within_y: Option<PairTables>,
    cross: Option<PairTables>,
}

impl GridPoint {
    fn new(pooled: &[&SubjectRecord], config: &SmootherConfig, t: f64) -> Self {
        let windows = |h: f64| -> Vec<SubjectWindow> {
            pooled
                .iter()
                .map(|s| SubjectWindow::new(s, config.kernel, t, h))
                .collect()
        };
        let windows_x = windows(config.h_x);
        if config.h_x == config.h_y {
            let within_x = PairTables::symmetric(&windows_x);
            Self {
                t,
                windows_x,
                windows_y: None,
                within_x,
                within_y: None,
                cross: None,
            }
        } else {
            let windows_y = windows(config.h_y);
            Self {
                t,
                within_x: PairTables::symmetric(&windows_x),
                within_y: Some(PairTables::symmetric(&windows_y)),
                cross: Some(PairTables::full(&windows_x, &windows_y)),
                windows_x,
                windows_y: Some(windows_y),
            }
        }
    }

    fn windows_y(&self) -> &[SubjectWindow] {
        self.windows_y.as_deref().unwrap_or(&self.windows_x)
    }

    /// `2 G1 - G2 - G3` at this grid point for every labeling.
    fn integrands(
        &self,
        dataset: &TwoSampleDataset,
        config: &SmootherConfig,
        orders: &[Vec<usize>],
        labelings: &[Labeling],
    ) -> Result<Vec<f64>> {
        labelings
            .iter()
            .enumerate()
            .map(|(index, l)| {
                let [g1, g2, g3] = self.surfaces(l).map(|s| match s {
                    Some(m) => Ok(m.intercept(config.cond_tol).0),
                    None => Err(()),
                });
                let fallback = |surface: usize| {
                    self.fallback(dataset, config, &orders[index], surface)
                        .map_err(|e| MedError::Replicate {
                            index,
                            source: Box::new(e),
                        })
                };
                let g1 = g1.or_else(|_| fallback(0))?;
                let g2 = g2.or_else(|_| fallback(1))?;
                let g3 = g3.or_else(|_| fallback(2))?;
                Ok(2.0 * g1 - (g2 + g3))
            })
            .collect()
    }

    /// Normalised moments of G1, G2, G3, or `None` where no pair contributes.
    fn surfaces(&self, l: &Labeling) -> [Option<MomentAccumulator>; 3] {
        let (nx, ny) = (l.x_members.len() as f64, l.y_members.len() as f64);
        let wy = self.windows_y();

        let v_x = self.within_x.responses(l);
        let v_y = match &self.within_y {
            Some(tables) => tables.responses(l),
            None => v_x,
        };
        let v_cross = match &self.cross {
            Some(tables) => tables.responses(l)[2],
            None => v_x[2],
        };

        let g2 = within_design(&self.windows_x, &l.x_members)
            .map(|u| with_responses(u, v_x[0]).scaled(1.0 / (nx * (nx - 1.0))));
        let g3 = within_design(wy, &l.y_members)
            .map(|u| with_responses(u, v_y[1]).scaled(1.0 / (ny * (ny - 1.0))));

        let group_total = |windows: &[SubjectWindow], members: &[usize]| {
            let mut s = [0.0; 3];
            let mut positive = 0u64;
            for &i in members {
                for a in 0..3 {
                    s[a] += windows[i].sums[a];
                }
                positive += windows[i].positive;
            }
            (s, positive)
        };
        let (sx, pos_x) = group_total(&self.windows_x, &l.x_members);
        let (sy, pos_y) = group_total(wy, &l.y_members);
        let g1 = (pos_x > 0 && pos_y > 0).then(|| {
            with_responses(
                MomentAccumulator {
                    u00: sx[0] * sy[0],
                    u10: sx[1] * sy[0],
                    u01: sx[0] * sy[1],
                    u20: sx[2] * sy[0],
                    u11: sx[1] * sy[1],
                    u02: sx[0] * sy[2],
                    ..MomentAccumulator::default()
                },
                v_cross,
            )
            .scaled(1.0 / (nx * ny))
        });
        [g1, g2, g3]
    }

    fn fallback(
        &self,
        dataset: &TwoSampleDataset,
        config: &SmootherConfig,
        order: &[usize],
        surface: usize,
    ) -> Result<f64> {
        let relabeled = apply_permutation(dataset, order)?;
        let indexed = IndexedDataset::new(&relabeled);
        let (pairing, h) = match surface {
            0 => (Pairing::Cross(&indexed.x, &indexed.y), (config.h_x, config.h_y)),
            1 => (Pairing::Within(&indexed.x), (config.h_x, config.h_x)),
            _ => (Pairing::Within(&indexed.y), (config.h_y, config.h_y)),
        };
        Ok(pair_surface_at(pairing, config, h, (self.t, self.t), &abs_diff)?.value)
    }
}

/// Design moments over ordered pairs of distinct members, or `None` if no
/// such pair has positive weight.
fn within_design(windows: &[SubjectWindow], members: &[usize]) -> Option<MomentAccumulator> {
    let sums: Vec<[f64; 3]> = members.iter().map(|&i| windows[i].sums).collect();
    let others = exclusive_sums(&sums);
    let total: u64 = members.iter().map(|&i| windows[i].positive).sum();
    let mut pairs = 0u64;
    let mut u = MomentAccumulator::default();
    for ((a, o), &i) in sums.iter().zip(&others).zip(members) {
        u.u00 += a[0] * o[0];
        u.u10 += a[1] * o[0];
        u.u01 += a[0] * o[1];
        u.u20 += a[2] * o[0];
        u.u11 += a[1] * o[1];
        u.u02 += a[0] * o[2];
        pairs += windows[i].positive * (total - windows[i].positive);
    }
    (pairs > 0).then_some(u)
}

fn with_responses(u: MomentAccumulator, v: [f64; 3]) -> MomentAccumulator {
    MomentAccumulator {
        v00: v[0],
        v10: v[1],
        v01: v[2],
        ..u
    }
}
