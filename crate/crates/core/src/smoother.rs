//! Bivariate local-linear smoothing over subject pairs, evaluated on the diagonal.
//!
//! For a pair of observations `(a, b)` taken from two different subjects the
//! smoother regresses a pair response (by default `|z_a - z_b|`) on the offsets
//! `(T_a - t1, T_b - t2)` with product-kernel weights
//! `K_h1(T_a - t1) K_h2(T_b - t2) / (N_a N_b)`. The fitted intercept is the
//! surface estimate at `(t1, t2)`.
//!
//! The normal equations only involve six design moments `U^{p1 p2}` and three
//! response moments `V^{p1 p2}` ([`MomentAccumulator`]), and the intercept has a
//! closed form in terms of them. Design moments factorise over the two sides of
//! a pair, so only the response moments need an explicit double loop.
//!
//! Within-sample surfaces use every ordered pair of distinct subjects. The
//! double loop runs over the whole window and same-subject contributions are
//! subtracted afterwards, which keeps the inner loops branch free.
//!
//! Window points are visited in a canonical order (time, then value, then
//! weight), so results do not depend on how subjects are ordered inside a group.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ObservationPoint, SubjectRecord, TwoSampleDataset};
use crate::error::{MedError, Result};
use crate::kernel::Kernel;

pub const DEFAULT_BANDWIDTH: f64 = 0.2;
pub const DEFAULT_GRID_SIZE: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmootherConfig {
    pub kernel: Kernel,
    pub h_x: f64,
    pub h_y: f64,
    pub grid_size: usize,
    /// Threshold on `det(M) / (U00 U20 U02)` below which the local-constant
    /// estimate replaces the local-linear one.
    pub cond_tol: f64,
    pub expand_factor: f64,
    pub max_expansions: u32,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            kernel: Kernel::Epanechnikov,
            h_x: DEFAULT_BANDWIDTH,
            h_y: DEFAULT_BANDWIDTH,
            grid_size: DEFAULT_GRID_SIZE,
            cond_tol: 1e-8,
            expand_factor: 1.5,
            max_expansions: 3,
        }
    }
}

impl SmootherConfig {
    pub fn with_bandwidth(h: f64) -> Self {
        Self {
            h_x: h,
            h_y: h,
            ..Self::default()
        }
    }

    /// `0.2 (n / 100)^(-1/5)`, the default bandwidth shrunk at the `n^(-1/5)` rate.
    pub fn rate_bandwidth(n: usize) -> f64 {
        DEFAULT_BANDWIDTH * (n as f64 / 100.0).powf(-0.2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MedError::InvalidConfig(msg));
        for (name, h) in [("h_x", self.h_x), ("h_y", self.h_y)] {
            if !(h > 0.0 && h <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {h}"));
            }
        }
        if self.grid_size < 2 {
            return bad(format!("grid size must be >= 2, got {}", self.grid_size));
        }
        if !(self.cond_tol > 0.0 && self.cond_tol.is_finite()) {
            return bad(format!("cond_tol must be positive, got {}", self.cond_tol));
        }
        if !(self.expand_factor > 1.0 && self.expand_factor.is_finite()) {
            return bad(format!(
                "expand_factor must exceed 1, got {}",
                self.expand_factor
            ));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        uniform_grid(self.grid_size)
    }
}

/// `m` equally spaced points on `[0, 1]`, endpoints included.
pub fn uniform_grid(m: usize) -> Vec<f64> {
    let last = (m - 1) as f64;
    (0..m).map(|k| k as f64 / last).collect()
}

/// Weighted sums entering the 3x3 normal equations of the local-linear fit.
///
/// `u_pq = sum w s1^p s2^q` and `v_pq = sum w s1^p s2^q r` where `s1, s2` are
/// the bandwidth-scaled offsets of the two members of a pair and `r` is the
/// pair response.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MomentAccumulator {
    pub u00: f64,
    pub u10: f64,
    pub u01: f64,
    pub u20: f64,
    pub u11: f64,
    pub u02: f64,
    pub v00: f64,
    pub v10: f64,
    pub v01: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    LocalLinear,
    LocalConstant,
}

impl MomentAccumulator {
    pub fn scaled(self, c: f64) -> Self {
        Self {
            u00: c * self.u00,
            u10: c * self.u10,
            u01: c * self.u01,
            u20: c * self.u20,
            u11: c * self.u11,
            u02: c * self.u02,
            v00: c * self.v00,
            v10: c * self.v10,
            v01: c * self.v01,
        }
    }

    /// Closed-form intercept `(W1 V00 - W2 V10 + W3 V01) / (W1 U00 - W2 U10 + W3 U01)`.
    ///
    /// Falls back to `V00 / U00` when the normalised determinant is below
    /// `cond_tol`. Requires `u00 > 0`.
    pub fn intercept(&self, cond_tol: f64) -> (f64, FitKind) {
        let w1 = self.u20 * self.u02 - self.u11 * self.u11;
        let w2 = self.u10 * self.u02 - self.u01 * self.u11;
        let w3 = self.u10 * self.u11 - self.u01 * self.u20;
        // Grouped so that exchanging the roles of the two coordinates gives
        // bitwise-identical results.
        let den = w1 * self.u00 + (w3 * self.u01 - w2 * self.u10);
        let num = w1 * self.v00 + (w3 * self.v01 - w2 * self.v10);
        let scale = self.u00 * (self.u20 * self.u02);
        if scale > 0.0 && den.abs() > cond_tol * scale {
            (num / den, FitKind::LocalLinear)
        } else {
            (self.v00 / self.u00, FitKind::LocalConstant)
        }
    }
}

/// A group's observations sorted canonically, with per-subject index lists.
#[derive(Debug, Clone)]
pub struct GroupPoints {
    times: Vec<f64>,
    values: Vec<f64>,
    weights: Vec<f64>,
    subject: Vec<usize>,
    /// Positions (into the sorted arrays) of each subject's points, ascending.
    by_subject: Vec<Vec<usize>>,
}

impl GroupPoints {
    pub fn new(subjects: &[SubjectRecord]) -> Self {
        let mut rows: Vec<(f64, f64, f64, usize)> = subjects
            .iter()
            .enumerate()
            .flat_map(|(s, rec)| {
                let w = 1.0 / rec.points.len() as f64;
                rec.points.iter().map(move |p| (p.time, p.value, w, s))
            })
            .collect();
        rows.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then(a.1.total_cmp(&b.1))
                .then(a.2.total_cmp(&b.2))
        });
        // Subjects are renumbered by their first point in canonical order, so
        // per-subject reductions do not depend on the input order either.
        let mut rank = vec![usize::MAX; subjects.len()];
        let mut next = 0;
        for row in &rows {
            if rank[row.3] == usize::MAX {
                rank[row.3] = next;
                next += 1;
            }
        }
        for r in rank.iter_mut().filter(|r| **r == usize::MAX) {
            *r = next;
            next += 1;
        }
        let mut by_subject = vec![Vec::new(); subjects.len()];
        for (pos, row) in rows.iter().enumerate() {
            by_subject[rank[row.3]].push(pos);
        }
        Self {
            times: rows.iter().map(|r| r.0).collect(),
            values: rows.iter().map(|r| r.1).collect(),
            weights: rows.iter().map(|r| r.2).collect(),
            subject: rows.iter().map(|r| rank[r.3]).collect(),
            by_subject,
        }
    }

    pub fn subject_count(&self) -> usize {
        self.by_subject.len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Index range of points with `|T - t| < h`.
    fn window(&self, t: f64, h: f64) -> std::ops::Range<usize> {
        let lo = self.times.partition_point(|&x| x - t <= -h);
        let hi = self.times.partition_point(|&x| x - t < h);
        lo..hi.max(lo)
    }

    fn entries(&self, kernel: Kernel, t: f64, h: f64) -> Window {
        let range = self.window(t, h);
        let mut window = Window::default();
        for i in range {
            let u = (self.times[i] - t) / h;
            let k = self.weights[i] * kernel.eval(u) / h;
            window.k.push(k);
            window.u.push(u);
            window.obs.push(ObservationPoint::new(self.times[i], self.values[i]));
            window.subject.push(self.subject[i]);
        }
        window
    }
}

#[derive(Debug, Default)]
struct Window {
    k: Vec<f64>,
    u: Vec<f64>,
    obs: Vec<ObservationPoint>,
    subject: Vec<usize>,
}

impl Window {
    fn len(&self) -> usize {
        self.k.len()
    }

    fn positive(&self) -> u64 {
        self.k.iter().filter(|&&k| k > 0.0).count() as u64
    }

    /// `[sum k, sum k u, sum k u^2]`
    fn power_sums(&self) -> [f64; 3] {
        let mut s = [0.0; 3];
        for (&k, &u) in self.k.iter().zip(&self.u) {
            s[0] += k;
            s[1] += k * u;
            s[2] += k * u * u;
        }
        s
    }
}

/// Which subject pairs enter a surface.
#[derive(Debug, Clone, Copy)]
pub enum Pairing<'a> {
    /// Every (first, second) pair with first from one group and second from the other.
    Cross(&'a GroupPoints, &'a GroupPoints),
    /// Every ordered pair of distinct subjects from one group.
    Within(&'a GroupPoints),
}

impl Pairing<'_> {
    /// Per-pair normalisation `1 / (n m)` or `1 / (n (n - 1))`.
    fn normalisation(&self) -> f64 {
        match self {
            Pairing::Cross(a, b) => 1.0 / (a.subject_count() as f64 * b.subject_count() as f64),
            Pairing::Within(g) => {
                let n = g.subject_count() as f64;
                1.0 / (n * (n - 1.0))
            }
        }
    }
}

/// Default pair response `|z_first - z_second|`.
#[inline]
pub fn abs_diff(first: ObservationPoint, second: ObservationPoint) -> f64 {
    (first.value - second.value).abs()
}

/// Normalised moments at `(t1, t2)` and the number of contributing point pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowMoments {
    pub moments: MomentAccumulator,
    pub pairs: u64,
}

pub fn accumulate_moments<R>(
    pairing: Pairing<'_>,
    kernel: Kernel,
    (h1, h2): (f64, f64),
    (t1, t2): (f64, f64),
    response: &R,
) -> WindowMoments
where
    R: Fn(ObservationPoint, ObservationPoint) -> f64 + ?Sized,
{
    let norm = pairing.normalisation();
    let raw = match pairing {
        Pairing::Cross(a, b) => {
            let wa = a.entries(kernel, t1, h1);
            let wb = b.entries(kernel, t2, h2);
            cross_moments(&wa, &wb, response)
        }
        Pairing::Within(g) => {
            let w1 = g.entries(kernel, t1, h1);
            let w2 = g.entries(kernel, t2, h2);
            within_moments(g, &w1, &w2, response)
        }
    };
    WindowMoments {
        moments: raw.moments.scaled(norm),
        pairs: raw.pairs,
    }
}

fn product_moments(s1: [f64; 3], s2: [f64; 3]) -> MomentAccumulator {
    MomentAccumulator {
        u00: s1[0] * s2[0],
        u10: s1[1] * s2[0],
        u01: s1[0] * s2[1],
        u20: s1[2] * s2[0],
        u11: s1[1] * s2[1],
        u02: s1[0] * s2[2],
        ..MomentAccumulator::default()
    }
}

fn cross_moments<R>(wa: &Window, wb: &Window, response: &R) -> WindowMoments
where
    R: Fn(ObservationPoint, ObservationPoint) -> f64 + ?Sized,
{
    let mut acc = product_moments(wa.power_sums(), wb.power_sums());

    // Walk both windows in merged key order; the earlier point of each pair
    // drives the inner loop over the later points of the other side. The pair
    // set and the summation order are then symmetric in the two groups.
    let (mut ia, mut ib) = (0, 0);
    while ia < wa.len() || ib < wb.len() {
        let take_a = ib >= wb.len()
            || (ia < wa.len() && key_le(wa.obs[ia], wa.k[ia], wb.obs[ib], wb.k[ib]));
        if take_a {
            let (k, u, p) = (wa.k[ia], wa.u[ia], wa.obs[ia]);
            let (mut row0, mut row_u) = (0.0, 0.0);
            for j in ib..wb.len() {
                let r = wb.k[j] * response(p, wb.obs[j]);
                row0 += r;
                row_u += wb.u[j] * r;
            }
            acc.v00 += k * row0;
            acc.v10 += k * u * row0;
            acc.v01 += k * row_u;
            ia += 1;
        } else {
            let (k, u, q) = (wb.k[ib], wb.u[ib], wb.obs[ib]);
            let (mut row0, mut row_u) = (0.0, 0.0);
            for i in ia..wa.len() {
                let r = wa.k[i] * response(wa.obs[i], q);
                row0 += r;
                row_u += wa.u[i] * r;
            }
            acc.v00 += k * row0;
            acc.v10 += k * row_u;
            acc.v01 += k * u * row0;
            ib += 1;
        }
    }
    WindowMoments {
        moments: acc,
        pairs: wa.positive() * wb.positive(),
    }
}

fn key_le(a: ObservationPoint, wa: f64, b: ObservationPoint, wb: f64) -> bool {
    a.time
        .total_cmp(&b.time)
        .then(a.value.total_cmp(&b.value))
        .then(wa.total_cmp(&wb))
        .is_le()
}

fn within_moments<R>(g: &GroupPoints, w1: &Window, w2: &Window, response: &R) -> WindowMoments
where
    R: Fn(ObservationPoint, ObservationPoint) -> f64 + ?Sized,
{
    // Design moments factor over subjects: sum_i P1_i * (sum_{k != i} P2_k).
    // The "other subjects" totals come from prefix and suffix sums rather
    // than by subtracting a subject from the grand total, which would cancel
    // badly when one subject dominates the window.
    let count = g.subject_count();
    let (p1, pos1) = subject_power_sums(w1, count);
    let (p2, pos2) = subject_power_sums(w2, count);
    let others = exclusive_sums(&p2);
    let total2: u64 = pos2.iter().sum();

    let mut acc = MomentAccumulator::default();
    let mut pairs = 0u64;
    for s in 0..count {
        let (a, o) = (p1[s], others[s]);
        acc.u00 += a[0] * o[0];
        acc.u10 += a[1] * o[0];
        acc.u01 += a[0] * o[1];
        acc.u20 += a[2] * o[0];
        acc.u11 += a[1] * o[1];
        acc.u02 += a[0] * o[2];
        pairs += pos1[s] * (total2 - pos2[s]);
    }

    for i in 0..w1.len() {
        let (k, u, p, subj) = (w1.k[i], w1.u[i], w1.obs[i], w1.subject[i]);
        let (mut row0, mut row_u) = (0.0, 0.0);
        for j in 0..w2.len() {
            if w2.subject[j] != subj {
                let r = w2.k[j] * response(p, w2.obs[j]);
                row0 += r;
                row_u += w2.u[j] * r;
            }
        }
        acc.v00 += k * row0;
        acc.v10 += k * u * row0;
        acc.v01 += k * row_u;
    }

    WindowMoments {
        moments: acc,
        pairs,
    }
}

/// Per-subject `[sum k, sum k u, sum k u^2]` and counts of positive weights.
fn subject_power_sums(w: &Window, count: usize) -> (Vec<[f64; 3]>, Vec<u64>) {
    let mut sums = vec![[0.0f64; 3]; count];
    let mut positive = vec![0u64; count];
    for j in 0..w.len() {
        let (k, u) = (w.k[j], w.u[j]);
        let slot = &mut sums[w.subject[j]];
        slot[0] += k;
        slot[1] += k * u;
        slot[2] += k * u * u;
        if k > 0.0 {
            positive[w.subject[j]] += 1;
        }
    }
    (sums, positive)
}

/// `out[i] = sum_{k != i} v[k]`, accumulated without subtraction.
pub(crate) fn exclusive_sums(v: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let mut out = vec![[0.0f64; 3]; v.len()];
    let mut running = [0.0f64; 3];
    for (o, x) in out.iter_mut().zip(v) {
        *o = running;
        for a in 0..3 {
            running[a] += x[a];
        }
    }
    running = [0.0; 3];
    for (o, x) in out.iter_mut().zip(v).rev() {
        for a in 0..3 {
            o[a] += running[a];
            running[a] += x[a];
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceEstimate {
    pub value: f64,
    pub fit: FitKind,
    /// Number of bandwidth enlargements needed to find a non-empty window.
    pub expansions: u32,
}

/// Surface estimate at `(t1, t2)`, enlarging both bandwidths if the window is empty.
pub fn pair_surface_at<R>(
    pairing: Pairing<'_>,
    config: &SmootherConfig,
    bandwidths: (f64, f64),
    at: (f64, f64),
    response: &R,
) -> Result<SurfaceEstimate>
where
    R: Fn(ObservationPoint, ObservationPoint) -> f64 + ?Sized,
{
    let (mut h1, mut h2) = bandwidths;
    for expansions in 0..=config.max_expansions {
        let wm = accumulate_moments(pairing, config.kernel, (h1, h2), at, response);
        if wm.pairs > 0 {
            let (value, fit) = wm.moments.intercept(config.cond_tol);
            return Ok(SurfaceEstimate {
                value,
                fit,
                expansions,
            });
        }
        h1 *= config.expand_factor;
        h2 *= config.expand_factor;
    }
    Err(MedError::DegenerateWindow {
        t1: at.0,
        t2: at.1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Surface {
    /// `E|X(t1) - Y(t2)|`
    G1,
    /// `E|X(t1) - X'(t2)|`
    G2,
    /// `E|Y(t1) - Y'(t2)|`
    G3,
}

/// A smoothed surface evaluated at `t1 = t2 = t` on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl DiagonalCurve {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(grid.len(), values.len(), "grid and values differ in length");
        Self { grid, values }
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,value\n");
        for (t, v) in self.grid.iter().zip(&self.values) {
            out.push_str(&format!("{t},{v}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut grid = Vec::new();
        let mut values = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let parse = |s: Option<&str>| {
                s.and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| MedError::Parse {
                        line: i as u64 + 1,
                        message: format!("malformed curve row `{line}`"),
                    })
            };
            let mut fields = line.split(',');
            grid.push(parse(fields.next())?);
            values.push(parse(fields.next())?);
        }
        Ok(Self { grid, values })
    }
}

/// Composite trapezoid rule on the curve's grid.
pub fn trapezoid_integral(curve: &DiagonalCurve) -> f64 {
    trapezoid(&curve.grid, &curve.values)
}

pub(crate) fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    debug_assert_eq!(grid.len(), values.len());
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

/// Pre-sorted points of both groups, reused across the three surfaces.
#[derive(Debug, Clone)]
pub struct IndexedDataset {
    pub x: GroupPoints,
    pub y: GroupPoints,
}

impl IndexedDataset {
    pub fn new(dataset: &TwoSampleDataset) -> Self {
        Self {
            x: GroupPoints::new(&dataset.x_subjects),
            y: GroupPoints::new(&dataset.y_subjects),
        }
    }

    fn pairing(&self, surface: Surface, config: &SmootherConfig) -> (Pairing<'_>, (f64, f64)) {
        match surface {
            Surface::G1 => (Pairing::Cross(&self.x, &self.y), (config.h_x, config.h_y)),
            Surface::G2 => (Pairing::Within(&self.x), (config.h_x, config.h_x)),
            Surface::G3 => (Pairing::Within(&self.y), (config.h_y, config.h_y)),
        }
    }

    pub fn diagonal_curve<R>(
        &self,
        surface: Surface,
        config: &SmootherConfig,
        response: &R,
    ) -> Result<DiagonalCurve>
    where
        R: Fn(ObservationPoint, ObservationPoint) -> f64 + Sync + ?Sized,
    {
        let estimates = self.diagonal_estimates(surface, config, response)?;
        Ok(DiagonalCurve::new(
            config.grid(),
            estimates.iter().map(|e| e.value).collect(),
        ))
    }

    /// Per-grid-point estimates, including which fit produced each value.
    pub fn diagonal_estimates<R>(
        &self,
        surface: Surface,
        config: &SmootherConfig,
        response: &R,
    ) -> Result<Vec<SurfaceEstimate>>
    where
        R: Fn(ObservationPoint, ObservationPoint) -> f64 + Sync + ?Sized,
    {
        config.validate()?;
        let (pairing, bandwidths) = self.pairing(surface, config);
        if let Pairing::Within(g) = pairing {
            if g.subject_count() < 2 {
                return Err(MedError::InvalidConfig(format!(
                    "surface {surface:?} needs at least two subjects in its group"
                )));
            }
        }
        let grid = config.grid();
        let estimates: Vec<Result<SurfaceEstimate>> = grid
            .par_iter()
            .map(|&t| pair_surface_at(pairing, config, bandwidths, (t, t), response))
            .collect();
        estimates
            .into_iter()
            .enumerate()
            .map(|(index, estimate)| estimate.map_err(|e| e.at_grid_point(index)))
            .collect()
    }
}

pub fn diagonal_curve<R>(
    dataset: &TwoSampleDataset,
    surface: Surface,
    config: &SmootherConfig,
    response: &R,
) -> Result<DiagonalCurve>
where
    R: Fn(ObservationPoint, ObservationPoint) -> f64 + Sync + ?Sized,
{
    IndexedDataset::new(dataset).diagonal_curve(surface, config, response)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subject(id: &str, times: &[f64], values: &[f64]) -> SubjectRecord {
        SubjectRecord::from_pairs(id, times, values)
    }

    fn small_dataset() -> TwoSampleDataset {
        TwoSampleDataset::new(
            vec![
                subject("x1", &[0.1, 0.35, 0.52, 0.8], &[0.3, -1.2, 0.7, 2.0]),
                subject("x2", &[0.22, 0.47, 0.61], &[1.1, 0.4, -0.3]),
                subject("x3", &[0.05, 0.44, 0.58, 0.93], &[-0.6, 0.9, 1.5, 0.2]),
            ],
            vec![
                subject("y1", &[0.15, 0.4, 0.66], &[0.5, 2.2, -1.0]),
                subject("y2", &[0.3, 0.49, 0.55, 0.9], &[-0.4, 0.1, 1.3, 0.8]),
                subject("y3", &[0.02, 0.51, 0.97], &[1.7, -0.8, 0.0]),
            ],
        )
    }

    #[test]
    fn trapezoid_rules() {
        let grid = uniform_grid(11);
        let ones = DiagonalCurve::new(grid.clone(), vec![1.0; 11]);
        assert!((trapezoid_integral(&ones) - 1.0).abs() < 1e-15);
        let linear = DiagonalCurve::new(grid.clone(), grid.clone());
        assert!((trapezoid_integral(&linear) - 0.5).abs() < 1e-15);

        let grid = uniform_grid(101);
        let square = DiagonalCurve::new(grid.clone(), grid.iter().map(|t| t * t).collect());
        // 1/3 + h^2 / 6 with h = 0.01
        assert!((trapezoid_integral(&square) - 0.333350).abs() < 1e-6);
    }

    #[test]
    fn constant_values_give_zero_surfaces() {
        let ds = small_dataset().map_values(|_| 5.0);
        let config = SmootherConfig::with_bandwidth(0.3);
        for surface in [Surface::G1, Surface::G2, Surface::G3] {
            let curve = diagonal_curve(&ds, surface, &config, &abs_diff).unwrap();
            assert!(curve.values.iter().all(|&v| v == 0.0), "{surface:?}");
        }
    }

    #[test]
    fn affine_response_is_reproduced() {
        let ds = small_dataset();
        let idx = IndexedDataset::new(&ds);
        let config = SmootherConfig::with_bandwidth(0.35);
        let affine = |a: ObservationPoint, b: ObservationPoint| 2.0 + 3.0 * a.time - b.time;
        for (pairing, t1, t2) in [
            (Pairing::Cross(&idx.x, &idx.y), 0.45, 0.5),
            (Pairing::Within(&idx.x), 0.5, 0.4),
            (Pairing::Within(&idx.y), 0.45, 0.45),
        ] {
            let est = pair_surface_at(pairing, &config, (0.35, 0.35), (t1, t2), &affine).unwrap();
            assert_eq!(est.fit, FitKind::LocalLinear);
            assert!((est.value - (2.0 + 3.0 * t1 - t2)).abs() < 1e-9, "{est:?}");
        }
    }

    #[test]
    fn empty_window_expands_then_fails() {
        let ds = TwoSampleDataset::new(
            vec![subject("a", &[0.0], &[1.0]), subject("b", &[0.02], &[2.0])],
            vec![subject("c", &[0.01], &[0.0]), subject("d", &[0.03], &[3.0])],
        );
        let idx = IndexedDataset::new(&ds);
        let config = SmootherConfig::with_bandwidth(0.1);
        // t = 0.2: empty at h = 0.1, non-empty at 0.15 * 1.5 = 0.225
        let est =
            pair_surface_at(Pairing::Cross(&idx.x, &idx.y), &config, (0.1, 0.1), (0.2, 0.2), &abs_diff)
                .unwrap();
        assert_eq!(est.expansions, 2);
        // t = 0.9 is out of reach even at 0.1 * 1.5^3
        let err =
            pair_surface_at(Pairing::Cross(&idx.x, &idx.y), &config, (0.1, 0.1), (0.9, 0.9), &abs_diff)
                .unwrap_err();
        assert!(matches!(err, MedError::DegenerateWindow { .. }));

        let curve_err = diagonal_curve(&ds, Surface::G1, &config, &abs_diff).unwrap_err();
        assert!(matches!(curve_err, MedError::AtGridPoint { .. }));
    }

    #[test]
    fn collinear_window_falls_back_to_local_constant() {
        // Every X observation at one time: the slope in the first coordinate
        // is not identifiable.
        let ds = TwoSampleDataset::new(
            vec![subject("a", &[0.5], &[1.0]), subject("b", &[0.5], &[3.0])],
            vec![subject("c", &[0.45, 0.55], &[0.0, 2.0]), subject("d", &[0.5], &[1.0])],
        );
        let idx = IndexedDataset::new(&ds);
        let config = SmootherConfig::with_bandwidth(0.2);
        let wm = accumulate_moments(
            Pairing::Cross(&idx.x, &idx.y),
            config.kernel,
            (0.2, 0.2),
            (0.5, 0.5),
            &abs_diff,
        );
        let est =
            pair_surface_at(Pairing::Cross(&idx.x, &idx.y), &config, (0.2, 0.2), (0.5, 0.5), &abs_diff)
                .unwrap();
        assert_eq!(est.fit, FitKind::LocalConstant);
        assert!((est.value - wm.moments.v00 / wm.moments.u00).abs() < 1e-15);
    }

    #[test]
    fn single_subject_window_has_no_within_pairs() {
        let ds = TwoSampleDataset::new(
            vec![subject("a", &[0.1, 0.12, 0.9], &[1.0, 5.0, 0.0]), subject("b", &[0.8], &[2.0])],
            vec![subject("c", &[0.5], &[0.0]), subject("d", &[0.5], &[1.0])],
        );
        let idx = IndexedDataset::new(&ds);
        let wm = accumulate_moments(
            Pairing::Within(&idx.x),
            Kernel::Epanechnikov,
            (0.1, 0.1),
            (0.1, 0.1),
            &abs_diff,
        );
        assert_eq!(wm.pairs, 0);
    }

    #[test]
    fn config_validation() {
        assert!(SmootherConfig::default().validate().is_ok());
        assert!(SmootherConfig::with_bandwidth(0.0).validate().is_err());
        assert!(SmootherConfig::with_bandwidth(1.5).validate().is_err());
        let mut c = SmootherConfig::default();
        c.grid_size = 1;
        assert!(c.validate().is_err());
        assert!((SmootherConfig::rate_bandwidth(100) - 0.2).abs() < 1e-15);
        assert!(SmootherConfig::rate_bandwidth(3200) < 0.1 + 1e-12);
    }

    #[test]
    fn curve_csv_round_trip() {
        let curve = DiagonalCurve::new(uniform_grid(5), vec![0.1, -2.5, 1.0 / 3.0, 7.0, 1e-300]);
        assert_eq!(DiagonalCurve::from_csv(&curve.to_csv()).unwrap(), curve);
    }
}
