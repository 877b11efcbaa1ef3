//! Empirical measures on finite point sets, ε-dense sampling over box
//! partitions, and the comparison `μ₁(F) ≤ μ₂(F_ε)` between a sample and
//! its image under ψ.
//!
//! Admissibility is measured against `B` axis-aligned dyadic boxes of side
//! `s < ε`: the sample size `n` is picked from a caller-supplied set and
//! must be at least `2B`. The points themselves are laid out over an equal
//! partition into `r^k` boxes of side `1/r < ε` (diameter `< ε` in the max
//! metric), with `⌊n/r^k⌋` points per box and the remainder in the last
//! one. `r` is chosen to keep that remainder small, which matters when `n`
//! is not a multiple of `B`. Points sit at the centres of a regular
//! sub-grid of each box. A sufficient size from the classical existence
//! argument, `1/n < a/2m^{m+1}`, is far larger than what is needed in
//! practice.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dynamics::{circle_dist, dist_unchecked, MinimalMap, TorusPoint};
use crate::error::{check_dim, invalid, Error, Result};
use crate::C64;

/// Uniform probability measure on a finite support.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    support: Vec<TorusPoint>,
}

impl EmpiricalMeasure {
    pub fn new(support: Vec<TorusPoint>) -> Result<Self> {
        let first = support.first().ok_or_else(|| invalid("support", "need at least one point"))?;
        let k = first.dim();
        for p in &support {
            check_dim(k, p.dim())?;
        }
        Ok(Self { support })
    }

    pub fn support(&self) -> &[TorusPoint] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.support[0].dim()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    /// Number of support points in `F`.
    pub fn count_in(&self, set: &ClosedArcSet) -> usize {
        self.support.iter().filter(|p| set.contains(p)).count()
    }

    /// Number of support points within distance `< ε` of `F`.
    pub fn count_near(&self, set: &ClosedArcSet, eps: f64) -> usize {
        self.support.iter().filter(|p| set.dist_to(p) < eps).count()
    }

    pub fn mass(&self, set: &ClosedArcSet) -> f64 {
        self.count_in(set) as f64 / self.len() as f64
    }

    /// The empirical measure on `{ψ(x_1), …, ψ(x_n)}`.
    pub fn push_forward(&self, map: &MinimalMap) -> Result<Self> {
        check_dim(map.dim(), self.dim())?;
        Ok(Self { support: self.support.iter().map(|p| map.apply_unchecked(p)).collect() })
    }

    /// One point per row, one column per coordinate.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for p in &self.support {
            w.serialize(p.coords())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
        let mut support = Vec::new();
        for rec in r.deserialize() {
            let coords: Vec<f64> = rec?;
            support.push(TorusPoint::new(coords)?);
        }
        Self::new(support)
    }
}

/// A closed arc of the circle. `lo ≤ hi` is the ordinary interval
/// `[lo, hi]`; `lo > hi` wraps through 0 as `[lo, 1] ∪ [0, hi]`.
/// `lo = hi` is a single point and `[0, 1]` the whole circle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Arc {
    lo: f64,
    hi: f64,
}

impl Arc {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) {
            return Err(invalid("arc", format!("endpoints [{lo}, {hi}] must lie in [0, 1]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn full() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn point(t: f64) -> Result<Self> {
        Self::new(t, t)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn is_full(&self) -> bool {
        (self.lo == 0.0 && self.hi == 1.0) || self.length() >= 1.0
    }

    pub fn length(&self) -> f64 {
        if self.lo <= self.hi {
            self.hi - self.lo
        } else {
            1.0 - self.lo + self.hi
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        if self.is_full() {
            return true;
        }
        if self.lo <= self.hi {
            // `hi = 1` also catches the point 0 ≡ 1.
            (self.lo <= t && t <= self.hi) || (self.hi == 1.0 && t == 0.0)
        } else {
            t >= self.lo || t <= self.hi
        }
    }

    /// Circle distance from `t` to the arc.
    pub fn dist_to(&self, t: f64) -> f64 {
        if self.contains(t) {
            0.0
        } else {
            circle_dist(t, self.lo).min(circle_dist(t, self.hi))
        }
    }
}

impl TryFrom<[f64; 2]> for Arc {
    type Error = Error;
    fn try_from(v: [f64; 2]) -> Result<Self> {
        Arc::new(v[0], v[1])
    }
}

impl From<Arc> for [f64; 2] {
    fn from(a: Arc) -> Self {
        [a.lo, a.hi]
    }
}

/// A finite union of closed boxes, each a product of closed arcs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedArcSet {
    dim: usize,
    boxes: Vec<Vec<Arc>>,
}

impl ClosedArcSet {
    pub fn empty(dim: usize) -> Self {
        Self { dim, boxes: Vec::new() }
    }

    pub fn whole(dim: usize) -> Self {
        Self { dim, boxes: vec![vec![Arc::full(); dim]] }
    }

    pub fn from_boxes(dim: usize, boxes: Vec<Vec<Arc>>) -> Result<Self> {
        for b in &boxes {
            check_dim(dim, b.len())?;
        }
        Ok(Self { dim, boxes })
    }

    /// A single arc on the circle.
    pub fn arc(lo: f64, hi: f64) -> Result<Self> {
        Ok(Self { dim: 1, boxes: vec![vec![Arc::new(lo, hi)?]] })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn boxes(&self) -> &[Vec<Arc>] {
        &self.boxes
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn contains(&self, x: &TorusPoint) -> bool {
        self.boxes.iter().any(|b| b.iter().zip(x.coords()).all(|(a, t)| a.contains(*t)))
    }

    /// Max-metric distance to the set; `+∞` for the empty set. The
    /// dilation `F_ε` is `{x : dist_to(x) < ε}`.
    pub fn dist_to(&self, x: &TorusPoint) -> f64 {
        self.boxes
            .iter()
            .map(|b| b.iter().zip(x.coords()).map(|(a, t)| a.dist_to(*t)).fold(0.0, f64::max))
            .fold(f64::INFINITY, f64::min)
    }

    /// Lebesgue measure of a single box (union measure is not needed).
    pub fn box_measure(&self, i: usize) -> f64 {
        self.boxes[i].iter().map(Arc::length).product()
    }
}

/// Side of the dyadic boxes used for density `ε`: the largest `2^{−p}`
/// strictly below `ε`, or `1` when a single box (diameter 1/2) is enough.
pub fn dyadic_side(eps: f64) -> f64 {
    if eps > 0.5 {
        return 1.0;
    }
    let mut s = 0.5;
    while s >= eps {
        s /= 2.0;
    }
    s
}

/// Number of dyadic boxes that sets the admissible sizes for density `ε`
/// on `T^k`.
pub fn box_count(eps: f64, dim: usize) -> usize {
    let per_axis = (1.0 / dyadic_side(eps)).round() as usize;
    per_axis.pow(dim as u32)
}

/// Smallest admissible size for `boxes` boxes.
pub fn min_sample_size(boxes: usize) -> usize {
    if boxes == 1 {
        1
    } else {
        2 * boxes
    }
}

/// ε-dense sample following the box-partition scheme. Picks the smallest
/// admissible `n` in `sizes`.
pub fn epsilon_dense_sample(map: &MinimalMap, eps: f64, sizes: &[usize]) -> Result<EmpiricalMeasure> {
    if !(eps > 0.0) {
        return Err(invalid("eps", "must be positive"));
    }
    if sizes.is_empty() {
        return Err(invalid("sizes", "need at least one candidate size"));
    }
    if !map.lebesgue_invariant() {
        return Err(Error::UnknownInvariantMeasure);
    }
    let k = map.dim();
    let boxes = box_count(eps, k);
    let needed = min_sample_size(boxes);
    let n = sizes.iter().copied().filter(|&n| n >= needed).min().ok_or(Error::NoAdmissibleSize { boxes, needed })?;
    Ok(EmpiricalMeasure { support: box_sample(eps, k, n) })
}

/// Boxes per axis for `n` points: among the equal partitions with side
/// below `ε` and at least two points per box, the one leaving the fewest
/// points over for the last box. The dyadic partition wins ties.
pub fn partition_per_axis(eps: f64, dim: usize, n: usize) -> usize {
    let dyadic = (1.0 / dyadic_side(eps)).round() as usize;
    let leftover = |r: usize| n % r.pow(dim as u32);
    let mut best = dyadic;
    let mut r = (1.0 / eps).floor() as usize + 1;
    while 2 * r.pow(dim as u32) <= n {
        if leftover(r) < leftover(best) {
            best = r;
        }
        r += 1;
    }
    best
}

/// The point layout of [`epsilon_dense_sample`] for `n` points, with no
/// admissibility check.
pub fn box_sample(eps: f64, dim: usize, n: usize) -> Vec<TorusPoint> {
    let per_axis = partition_per_axis(eps, dim, n);
    let side = 1.0 / per_axis as f64;
    let boxes = per_axis.pow(dim as u32);
    let base = n / boxes;
    let mut out = Vec::with_capacity(n);
    for b in 0..boxes {
        let count = if b + 1 == boxes { n - base * (boxes - 1) } else { base };
        let corner: Vec<f64> = box_corner(b, per_axis, dim).into_iter().map(|c| c as f64 * side).collect();
        out.extend(sub_grid(&corner, side, count));
    }
    out
}

/// Multi-index of box `b`, first coordinate varying slowest.
fn box_corner(mut b: usize, per_axis: usize, dim: usize) -> Vec<usize> {
    let mut idx = vec![0; dim];
    for i in (0..dim).rev() {
        idx[i] = b % per_axis;
        b /= per_axis;
    }
    idx
}

/// `count` points at cell centres of the smallest `r^k` sub-grid of the box
/// with `r^k ≥ count`, taken in row-major order.
fn sub_grid(corner: &[f64], side: f64, count: usize) -> Vec<TorusPoint> {
    if count == 0 {
        return Vec::new();
    }
    let dim = corner.len();
    if dim == 1 {
        let h = side / count as f64;
        return (0..count).map(|t| TorusPoint::circle(corner[0] + (t as f64 + 0.5) * h)).collect();
    }
    let mut r = 1usize;
    while r.pow(dim as u32) < count {
        r += 1;
    }
    let h = side / r as f64;
    (0..count)
        .map(|c| {
            let idx = box_corner(c, r, dim);
            let coords = corner.iter().zip(idx).map(|(c0, i)| c0 + (i as f64 + 0.5) * h).collect();
            TorusPoint::new(coords).expect("finite coordinates")
        })
        .collect()
}

/// One row of a measure comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub index: usize,
    /// `#{x_j ∈ F}`.
    pub count_mu1: usize,
    /// `#{ψ(x_j) ∈ F_ε}`.
    pub count_mu2_dilated: usize,
    /// `#{ψ(x_j) ∈ F}`.
    pub count_mu2: usize,
    /// `#{x_j ∈ F_ε}`.
    pub count_mu1_dilated: usize,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub n: usize,
    pub eps: f64,
    pub rows: Vec<ComparisonRow>,
    pub all_pass: bool,
}

impl ComparisonReport {
    pub fn failures(&self) -> impl Iterator<Item = &ComparisonRow> {
        self.rows.iter().filter(|r| !r.pass)
    }
}

/// Checks `μ₁(F) ≤ μ₂(F_ε)` and `μ₂(F) ≤ μ₁(F_ε)` for every test set, with
/// `μ₂` the image of `μ₁` under ψ. Counts are compared as integers.
pub fn check_measure_comparison(mu1: &EmpiricalMeasure, map: &MinimalMap, eps: f64, tests: &[ClosedArcSet]) -> Result<ComparisonReport> {
    if !(eps > 0.0) {
        return Err(invalid("eps", "must be positive"));
    }
    let mu2 = mu1.push_forward(map)?;
    let mut rows = Vec::with_capacity(tests.len());
    for (index, f) in tests.iter().enumerate() {
        check_dim(mu1.dim(), f.dim())?;
        let count_mu1 = mu1.count_in(f);
        let count_mu2 = mu2.count_in(f);
        let count_mu2_dilated = mu2.count_near(f, eps);
        let count_mu1_dilated = mu1.count_near(f, eps);
        let pass = count_mu1 <= count_mu2_dilated && count_mu2 <= count_mu1_dilated;
        rows.push(ComparisonRow { index, count_mu1, count_mu2_dilated, count_mu2, count_mu1_dilated, pass });
    }
    let all_pass = rows.iter().all(|r| r.pass);
    Ok(ComparisonReport { n: mu1.len(), eps, rows, all_pass })
}

/// `(1/n) Σ f(x_j)`.
pub fn empirical_integral(mu: &EmpiricalMeasure, f: impl Fn(&TorusPoint) -> C64) -> C64 {
    mu.support.iter().map(f).sum::<C64>() / mu.len() as f64
}

/// All closed arcs with endpoints on the `1/steps` grid, wrapping arcs and
/// single points included.
pub fn grid_arcs(steps: usize) -> Vec<ClosedArcSet> {
    let mut out = Vec::with_capacity(steps * steps);
    for a in 0..steps {
        for b in 0..steps {
            let (lo, hi) = (a as f64 / steps as f64, b as f64 / steps as f64);
            out.push(ClosedArcSet::arc(lo, hi).expect("grid endpoints lie in [0, 1)"));
        }
    }
    out
}

/// Fill distance: the largest distance from a reference point to the
/// nearest support point.
pub fn fill_distance(mu: &EmpiricalMeasure, reference: &[TorusPoint]) -> f64 {
    reference
        .iter()
        .map(|r| mu.support.iter().map(|p| dist_unchecked(r, p)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// Regular reference grid with `per_axis^k` points, offset by half a cell.
pub fn reference_grid(dim: usize, per_axis: usize) -> Vec<TorusPoint> {
    let total = per_axis.pow(dim as u32);
    (0..total)
        .map(|c| {
            let idx = box_corner(c, per_axis, dim);
            TorusPoint::new(idx.into_iter().map(|i| (i as f64 + 0.5) / per_axis as f64).collect()).expect("finite")
        })
        .collect()
}
