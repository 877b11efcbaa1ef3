//! Rokhlin towers for minimal maps and the tracial (cyclic) Rokhlin checks
//! on finite stage models.
//!
//! # Construction
//!
//! Both supported map families move the first coordinate by the rotation
//! `t ↦ t + θ`, so towers are built on the circle and lifted. Take a dyadic
//! base arc `J = [0, β)` with `β < η`. The first-return map of the rotation
//! to `J` cuts `J` into finitely many arcs `P` with constant return time
//! `h(P)`, and the columns `P, P+θ, …, P+(h−1)θ` tile the circle. Each
//! column is chopped into chunks of `N` consecutive levels; the bottom arc
//! of every chunk is a candidate base. Candidates are admitted greedily as
//! long as their `N` translates avoid every translate admitted earlier,
//! until the covered measure exceeds `1 − δ`. At most `N − 1` levels per
//! column are lost, so coverage is at least `1 − (N − 1)β`. If the target is
//! missed, `β` is halved up to a fixed budget.
//!
//! For skew products the circle bases are multiplied by a dyadic grid of
//! open fibre cells of side `< η`.
//!
//! # Exactness
//!
//! Endpoints are kept in the symbolic form `q + jθ` with `q` dyadic and `j`
//! an integer. Two such numbers with the same `j` compare exactly; for
//! different `j` the sign of `Δq + Δj·θ` is read off in floating point and
//! refused (as [`Error::Undecidable`]) when it is within `1e−11` of zero.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{circle_dist, wrap, MinimalMap, TorusPoint};
use crate::error::{check_dim, invalid, Error, Result};
use crate::limitalg::{build_intertwiners, MAX_STAGE_POINTS, seeded_basepoints, StageAutomorphism, StageModel, TestFunction};
use crate::matalg::{BlockDiag, MatrixFunction};
use crate::measure::{box_count, epsilon_dense_sample};

pub const DECIDE_MARGIN: f64 = 1e-11;
/// How many times the base arc may be halved before giving up.
pub const BETA_HALVINGS: usize = 8;

/// The real number `q + j·θ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitValue {
    pub q: f64,
    pub j: i64,
}

impl OrbitValue {
    pub fn new(q: f64, j: i64) -> Self {
        Self { q, j }
    }

    pub fn value(&self, theta: f64) -> f64 {
        self.q + self.j as f64 * theta
    }

    fn shifted(self, dq: f64, dj: i64) -> Self {
        Self { q: self.q + dq, j: self.j + dj }
    }
}

fn compare(a: OrbitValue, b: OrbitValue, theta: f64) -> Result<Ordering> {
    if a.j == b.j {
        return Ok(a.q.total_cmp(&b.q));
    }
    let d = (a.q - b.q) + (a.j - b.j) as f64 * theta;
    if d.abs() < DECIDE_MARGIN {
        return Err(Error::Undecidable(d));
    }
    Ok(if d < 0.0 { Ordering::Less } else { Ordering::Greater })
}

fn lt(a: OrbitValue, b: OrbitValue, theta: f64) -> Result<bool> {
    Ok(compare(a, b, theta)? == Ordering::Less)
}

fn max_of(a: OrbitValue, b: OrbitValue, theta: f64) -> Result<OrbitValue> {
    Ok(if lt(a, b, theta)? { b } else { a })
}

fn min_of(a: OrbitValue, b: OrbitValue, theta: f64) -> Result<OrbitValue> {
    Ok(if lt(a, b, theta)? { a } else { b })
}

/// An arc `(start, end)` of the circle with `start < end < start + 1` as
/// real numbers; read open or closed according to context.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitArc {
    pub start: OrbitValue,
    pub end: OrbitValue,
}

impl OrbitArc {
    pub fn length(&self, theta: f64) -> f64 {
        (self.end.q - self.start.q) + (self.end.j - self.start.j) as f64 * theta
    }

    /// Translate by `steps` rotations and reduce so the start lies in `[0, 1)`.
    pub fn translate(&self, steps: i64, theta: f64) -> Self {
        let s = self.start.shifted(0.0, steps);
        let n = s.value(theta).floor();
        Self { start: s.shifted(-n, 0), end: self.end.shifted(-n, steps) }
    }

    /// Floating endpoints in `[0, 1)`; `lo > hi` when the arc wraps.
    pub fn endpoints(&self, theta: f64) -> (f64, f64) {
        (wrap(self.start.value(theta)), wrap(self.end.value(theta)))
    }

    /// Exact disjointness of the open arcs.
    pub fn disjoint_from(&self, other: &Self, theta: f64) -> Result<bool> {
        let n0 = (self.start.value(theta) - other.start.value(theta)).round();
        for n in [n0 - 1.0, n0, n0 + 1.0] {
            let (a2, b2) = (other.start.shifted(n, 0), other.end.shifted(n, 0));
            if lt(self.start, b2, theta)? && lt(a2, self.end, theta)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn contains_open(&self, t: f64, theta: f64) -> bool {
        let (s, len) = (self.start.value(theta), self.length(theta));
        let u = (t - s).rem_euclid(1.0);
        u > 0.0 && u < len
    }

    fn contains_closed(&self, t: f64, theta: f64) -> bool {
        let (s, len) = (self.start.value(theta), self.length(theta));
        let u = (t - s).rem_euclid(1.0);
        u <= len || u == 0.0
    }

    /// Distance from `t` to the complement of the open arc.
    fn depth(&self, t: f64, theta: f64) -> f64 {
        if !self.contains_open(t, theta) {
            return 0.0;
        }
        let (s, e) = self.endpoints(theta);
        circle_dist(t, s).min(circle_dist(t, e))
    }
}

/// Open interval `(lo, hi)` of a fibre coordinate, `0 ≤ lo < hi ≤ 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FibreInterval {
    pub lo: f64,
    pub hi: f64,
}

impl FibreInterval {
    fn contains_open(&self, t: f64) -> bool {
        self.lo < t && t < self.hi
    }

    fn depth(&self, t: f64) -> f64 {
        if self.contains_open(t) {
            (t - self.lo).min(self.hi - t)
        } else {
            0.0
        }
    }
}

/// A column of the tower: the circle factor of a base and of its inner set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TowerColumn {
    pub base: OrbitArc,
    pub inner: OrbitArc,
}

/// Bases `G_i = column × fibre cell`, inner sets `S_i` obtained by moving
/// every face inwards by `shrink`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TowerSpec {
    pub map: MinimalMap,
    pub height: usize,
    pub delta: f64,
    pub eta: f64,
    /// Length of the circle arc the columns were cut from.
    pub beta: f64,
    pub columns: Vec<TowerColumn>,
    /// Open fibre cells (one list of `k − 1` intervals per cell); a single
    /// empty cell on the circle.
    pub fibre_cells: Vec<Vec<FibreInterval>>,
    pub shrink: f64,
    /// `μ(∪_{j<N} ψ^j(∪G_i))`.
    pub coverage: f64,
}

impl TowerSpec {
    /// Number of bases `L`.
    pub fn num_bases(&self) -> usize {
        self.columns.len() * self.fibre_cells.len()
    }

    fn theta(&self) -> f64 {
        self.map.theta()
    }

    fn base_parts(&self, i: usize) -> (&TowerColumn, &[FibreInterval]) {
        let cells = self.fibre_cells.len();
        (&self.columns[i / cells], &self.fibre_cells[i % cells])
    }

    pub fn base_measure(&self, i: usize) -> f64 {
        let (col, cell) = self.base_parts(i);
        col.base.length(self.theta()) * cell.iter().map(|c| c.hi - c.lo).product::<f64>()
    }

    pub fn inner_measure(&self, i: usize) -> f64 {
        let (col, cell) = self.base_parts(i);
        col.inner.length(self.theta()) * cell.iter().map(|c| c.hi - c.lo - 2.0 * self.shrink).product::<f64>()
    }

    /// Index of the base whose open set contains `x`.
    pub fn base_containing(&self, x: &TorusPoint) -> Option<usize> {
        let theta = self.theta();
        let col = self.columns.iter().position(|c| c.base.contains_open(x.coord(0), theta))?;
        let cell = self.fibre_cells.iter().position(|cell| cell.iter().enumerate().all(|(d, iv)| iv.contains_open(x.coord(d + 1))))?;
        Some(col * self.fibre_cells.len() + cell)
    }

    /// Whether `x` lies in some closed inner set `S̄_i`.
    pub fn in_inner(&self, x: &TorusPoint) -> bool {
        let theta = self.theta();
        let s = self.shrink;
        self.columns.iter().any(|c| c.inner.contains_closed(x.coord(0), theta))
            && self.fibre_cells.iter().any(|cell| cell.iter().enumerate().all(|(d, iv)| iv.lo + s <= x.coord(d + 1) && x.coord(d + 1) <= iv.hi - s))
    }

    /// The bump `Σ_i g_i'(x)`: 1 on the inner sets, 0 off the bases,
    /// linear in the distance to the base boundary in between.
    pub fn bump(&self, x: &TorusPoint) -> f64 {
        let Some(i) = self.base_containing(x) else { return 0.0 };
        let (col, cell) = self.base_parts(i);
        let mut depth = col.base.depth(x.coord(0), self.theta());
        for (d, iv) in cell.iter().enumerate() {
            depth = depth.min(iv.depth(x.coord(d + 1)));
        }
        (depth / self.shrink).min(1.0)
    }

    /// Hand-made circle tower (useful for rational rotations and tests).
    /// Arcs are `(start, length)` pairs; `shrink` defines the inner arcs.
    pub fn from_circle_arcs(map: MinimalMap, height: usize, arcs: &[(f64, f64)], shrink: f64) -> Result<Self> {
        if map.dim() != 1 {
            return Err(invalid("map", "hand-made towers live on the circle"));
        }
        if height == 0 {
            return Err(invalid("height", "must be at least 1"));
        }
        let theta = map.theta();
        let columns: Vec<TowerColumn> = arcs
            .iter()
            .map(|&(s, len)| {
                if !(len > 2.0 * shrink && len < 1.0) {
                    return Err(invalid("arcs", "each arc needs 2·shrink < length < 1"));
                }
                let base = OrbitArc { start: OrbitValue::new(s, 0), end: OrbitValue::new(s + len, 0) };
                Ok(TowerColumn { base, inner: shrink_arc(&base, shrink) })
            })
            .collect::<Result<_>>()?;
        let coverage = height as f64 * columns.iter().map(|c| c.base.length(theta)).sum::<f64>();
        let eta = arcs.iter().map(|a| a.1).fold(0.0, f64::max);
        Ok(Self { map, height, delta: 1.0 - coverage.min(1.0), eta, beta: eta, columns, fibre_cells: vec![Vec::new()], shrink, coverage })
    }
}

fn shrink_arc(a: &OrbitArc, r: f64) -> OrbitArc {
    OrbitArc { start: a.start.shifted(r, 0), end: a.end.shifted(-r, 0) }
}

/// First-return partition of `[0, β)` under `t ↦ t + θ`: arcs with their
/// return times.
pub fn first_return_partition(theta: f64, beta: f64) -> Result<Vec<(OrbitArc, i64)>> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(invalid("beta", "must lie in (0, 1)"));
    }
    let max_t = (64.0 / beta).ceil() as i64 + 64;
    let mut open = vec![(OrbitValue::new(0.0, 0), OrbitValue::new(beta, 0))];
    let mut pieces = Vec::new();
    for t in 1..=max_t {
        if open.is_empty() {
            break;
        }
        let base = (t as f64 * theta).floor();
        for n in [base, base + 1.0] {
            // J − tθ + n = [n − tθ, n − tθ + β)
            let (c, d) = (OrbitValue::new(n, -t), OrbitValue::new(n + beta, -t));
            let mut rest = Vec::with_capacity(open.len() + 1);
            for (a, b) in open {
                let lo = max_of(a, c, theta)?;
                let hi = min_of(b, d, theta)?;
                if lt(lo, hi, theta)? {
                    pieces.push((OrbitArc { start: lo, end: hi }, t));
                    if lt(a, lo, theta)? {
                        rest.push((a, lo));
                    }
                    if lt(hi, b, theta)? {
                        rest.push((hi, b));
                    }
                } else {
                    rest.push((a, b));
                }
            }
            open = rest;
        }
    }
    if !open.is_empty() {
        return Err(invalid("theta", format!("no first return to [0, {beta}) within {max_t} steps; is the rotation minimal?")));
    }
    pieces.sort_by(|a, b| a.0.start.value(theta).total_cmp(&b.0.start.value(theta)));
    Ok(pieces)
}

fn largest_dyadic_below(x: f64) -> f64 {
    let mut s = 0.5;
    while s >= x {
        s /= 2.0;
    }
    s
}

/// Greedy admission of chunk bases; returns admitted arcs and coverage.
fn admit_columns(theta: f64, height: usize, delta: f64, beta: f64) -> Result<(Vec<OrbitArc>, f64)> {
    let n = height as i64;
    let mut candidates = Vec::new();
    for (piece, h) in first_return_partition(theta, beta)? {
        for c in 0..h / n {
            candidates.push(piece.translate(c * n, theta));
        }
    }
    let mut admitted: Vec<OrbitArc> = Vec::new();
    let mut levels: Vec<OrbitArc> = Vec::new();
    let mut covered = 0.0;
    for cand in candidates {
        if covered > 1.0 - delta {
            break;
        }
        let translates: Vec<OrbitArc> = (0..n).map(|j| cand.translate(j, theta)).collect();
        let mut free = true;
        'outer: for t in &translates {
            for l in &levels {
                if !t.disjoint_from(l, theta)? {
                    free = false;
                    break 'outer;
                }
            }
        }
        if free {
            covered += height as f64 * cand.length(theta);
            admitted.push(cand);
            levels.extend(translates);
        }
    }
    Ok((admitted, covered))
}

/// Builds a tower of height `N` with coverage `> 1 − δ` and bases of
/// diameter `< η`.
pub fn build_tower(map: &MinimalMap, height: usize, delta: f64, eta: f64) -> Result<TowerSpec> {
    if height == 0 {
        return Err(invalid("height", "must be at least 1"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta", "must lie in (0, 1)"));
    }
    if !(eta > 0.0) {
        return Err(invalid("eta", "must be positive"));
    }
    if !map.is_minimal() {
        return Err(Error::NotMinimal);
    }
    let theta = map.theta();
    let mut beta = largest_dyadic_below(eta.min(1.0));
    let mut best = 0.0;
    for _ in 0..=BETA_HALVINGS {
        let (arcs, coverage) = admit_columns(theta, height, delta, beta)?;
        if coverage > 1.0 - delta {
            return finish_tower(map, height, delta, eta, beta, arcs, coverage);
        }
        best = f64::max(best, coverage);
        beta /= 2.0;
    }
    Err(Error::TowerCoverage { achieved: best, target: 1.0 - delta })
}

fn finish_tower(map: &MinimalMap, height: usize, delta: f64, eta: f64, beta: f64, arcs: Vec<OrbitArc>, coverage: f64) -> Result<TowerSpec> {
    let theta = map.theta();
    let k = map.dim();
    let fibre_cells = fibre_grid(k - 1, largest_dyadic_below(eta.min(1.0)));
    let num_bases = (arcs.len() * fibre_cells.len()) as f64;
    let budget = delta / (4.0 * num_bases * height as f64);
    let min_side = arcs
        .iter()
        .map(|a| a.length(theta))
        .chain(fibre_cells.iter().flatten().map(|c| c.hi - c.lo))
        .fold(f64::INFINITY, f64::min);
    let mut shrink = largest_dyadic_below((min_side / 4.0).min(budget));
    let mut tower = TowerSpec {
        map: map.clone(),
        height,
        delta,
        eta,
        beta,
        columns: Vec::new(),
        fibre_cells,
        shrink,
        coverage,
    };
    loop {
        tower.shrink = shrink;
        tower.columns = arcs.iter().map(|a| TowerColumn { base: *a, inner: shrink_arc(a, shrink) }).collect();
        let worst = (0..tower.num_bases()).map(|i| tower.base_measure(i) - tower.inner_measure(i)).fold(0.0, f64::max);
        if worst < budget {
            return Ok(tower);
        }
        shrink /= 2.0;
    }
}

fn fibre_grid(dims: usize, side: f64) -> Vec<Vec<FibreInterval>> {
    if dims == 0 {
        return vec![Vec::new()];
    }
    let per = (1.0 / side).round() as usize;
    let total = per.pow(dims as u32);
    (0..total)
        .map(|mut c| {
            let mut cell = vec![FibreInterval { lo: 0.0, hi: 0.0 }; dims];
            for d in (0..dims).rev() {
                let i = c % per;
                c /= per;
                cell[d] = FibreInterval { lo: i as f64 * side, hi: (i + 1) as f64 * side };
            }
            cell
        })
        .collect()
}

/// Outcome of [`verify_tower`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TowerCheck {
    /// Levels `ψ^i(∪G)` and `ψ^j(∪G)`, `i < j < N`, are disjoint, decided
    /// exactly on the circle factor.
    pub levels_disjoint: bool,
    /// The bases are pairwise disjoint.
    pub bases_disjoint: bool,
    /// `S̄_i ⊂ G_i` and `μ(S_i) > μ(G_i) − δ/(4LN)` for every `i`.
    pub inner_ok: bool,
    pub max_diameter: f64,
    pub diameter_ok: bool,
    pub coverage: f64,
    pub coverage_ok: bool,
    /// Points per axis of the sampled cross-check.
    pub grid_resolution: usize,
    /// Largest number of tower levels containing one grid point.
    pub grid_max_multiplicity: usize,
    /// Fraction of grid points covered by some level.
    pub grid_coverage: f64,
    pub pass: bool,
}

/// Verifies the four tower conditions; the sampled check uses
/// `resolution` points per axis.
pub fn verify_tower(tower: &TowerSpec, resolution: usize) -> Result<TowerCheck> {
    let theta = tower.theta();
    let n = tower.height as i64;
    let mut levels_disjoint = true;
    let mut bases_disjoint = true;
    'outer: for (a, ca) in tower.columns.iter().enumerate() {
        for (b, cb) in tower.columns.iter().enumerate().skip(a) {
            for i in 0..n {
                for j in 0..n {
                    if a == b && i == j {
                        continue;
                    }
                    if !ca.base.translate(i, theta).disjoint_from(&cb.base.translate(j, theta), theta)? {
                        if i == j {
                            bases_disjoint = false;
                        } else {
                            levels_disjoint = false;
                        }
                        break 'outer;
                    }
                }
            }
        }
    }
    let budget = tower.delta / (4.0 * tower.num_bases() as f64 * tower.height as f64);
    let inner_ok = tower.columns.iter().all(|c| {
        lt(c.base.start, c.inner.start, theta).unwrap_or(false)
            && lt(c.inner.start, c.inner.end, theta).unwrap_or(false)
            && lt(c.inner.end, c.base.end, theta).unwrap_or(false)
    }) && tower.fibre_cells.iter().flatten().all(|iv| iv.hi - iv.lo > 2.0 * tower.shrink)
        && (0..tower.num_bases()).all(|i| tower.inner_measure(i) > tower.base_measure(i) - budget);
    let max_diameter = tower
        .columns
        .iter()
        .map(|c| c.base.length(theta).min(0.5))
        .chain(tower.fibre_cells.iter().flatten().map(|iv| iv.hi - iv.lo))
        .fold(0.0, f64::max);
    let coverage = tower.height as f64 * tower.columns.iter().map(|c| c.base.length(theta)).sum::<f64>();

    let k = tower.map.dim();
    let grid = crate::measure::reference_grid(k, resolution);
    let counts: Vec<usize> = grid
        .par_iter()
        .map(|x| {
            let mut y = x.clone();
            let mut count = 0;
            for _ in 0..tower.height {
                if tower.base_containing(&y).is_some() {
                    count += 1;
                }
                y = tower.map.apply_inverse_unchecked(&y);
            }
            count
        })
        .collect();
    let grid_max_multiplicity = counts.iter().copied().max().unwrap_or(0);
    let grid_coverage = counts.iter().filter(|c| **c > 0).count() as f64 / grid.len().max(1) as f64;

    let diameter_ok = max_diameter < tower.eta;
    let coverage_ok = coverage > 1.0 - tower.delta;
    let pass = levels_disjoint && bases_disjoint && inner_ok && diameter_ok && coverage_ok && grid_max_multiplicity <= 1;
    Ok(TowerCheck {
        levels_disjoint,
        bases_disjoint,
        inner_ok,
        max_diameter,
        diameter_ok,
        coverage,
        coverage_ok,
        grid_resolution: resolution,
        grid_max_multiplicity,
        grid_coverage,
        pass,
    })
}

/// Diagonal projections `e_1 … e_N` over `slots` blocks of size `m`, with
/// sampled bump values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionFamily {
    pub block: usize,
    /// `masks[j][s]`: slot `s` belongs to `e_{j+1}`.
    pub masks: Vec<Vec<bool>>,
    /// `bumps[j][s]`: the level-`j+1` bump `h_{j+1}` at the slot's point.
    pub bumps: Vec<Vec<f64>>,
}

impl ProjectionFamily {
    pub fn height(&self) -> usize {
        self.masks.len()
    }

    pub fn slots(&self) -> usize {
        self.masks.first().map_or(0, Vec::len)
    }

    pub fn dim(&self) -> usize {
        self.slots() * self.block
    }

    pub fn rank(&self, j: usize) -> usize {
        self.masks[j].iter().filter(|b| **b).count() * self.block
    }

    /// Diagonal of `e_{j+1}` as 0/1 reals of length `dim`.
    pub fn diagonal(&self, j: usize) -> Vec<f64> {
        self.masks[j].iter().flat_map(|&b| std::iter::repeat_n(if b { 1.0 } else { 0.0 }, self.block)).collect()
    }

    /// `e_i e_j = 0` for `i ≠ j`.
    pub fn mutually_orthogonal(&self) -> bool {
        (0..self.slots()).all(|s| self.masks.iter().filter(|m| m[s]).count() <= 1)
    }

    /// Same slots with extra leading slots that lie in no projection.
    pub fn with_leading_slots(&self, extra: usize) -> Self {
        let pad = |v: &Vec<bool>| std::iter::repeat_n(false, extra).chain(v.iter().copied()).collect();
        let padf = |v: &Vec<f64>| std::iter::repeat_n(0.0, extra).chain(v.iter().copied()).collect();
        Self { block: self.block, masks: self.masks.iter().map(pad).collect(), bumps: self.bumps.iter().map(padf).collect() }
    }
}

/// `e_j` selects the sample points `x` with `ψ^{j−1}(x) ∈ ∪S̄_i`, so that
/// `e_{j+1}` is the pullback of `e_j` under ψ; each slot carries `1_m`.
pub fn tower_projections(tower: &TowerSpec, points: &[TorusPoint], m: usize) -> Result<ProjectionFamily> {
    if m == 0 {
        return Err(invalid("m", "block size must be at least 1"));
    }
    for p in points {
        check_dim(tower.map.dim(), p.dim())?;
    }
    let per_point: Vec<(Vec<bool>, Vec<f64>)> = points
        .par_iter()
        .map(|x| {
            let mut y = x.clone();
            let mut mask = Vec::with_capacity(tower.height);
            let mut bump = Vec::with_capacity(tower.height);
            for _ in 0..tower.height {
                mask.push(tower.in_inner(&y));
                bump.push(tower.bump(&y));
                y = tower.map.apply_unchecked(&y);
            }
            (mask, bump)
        })
        .collect();
    let masks = (0..tower.height).map(|j| per_point.iter().map(|(m, _)| m[j]).collect()).collect();
    let bumps = (0..tower.height).map(|j| per_point.iter().map(|(_, b)| b[j]).collect()).collect();
    Ok(ProjectionFamily { block: m, masks, bumps })
}

/// The measured quantities of the tracial Rokhlin conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RokhlinReport {
    pub eps: f64,
    pub cyclic: bool,
    /// `max_{i, x} ‖e_i x − x e_i‖`.
    pub commutator: f64,
    /// `max_j ‖α(e_j) − e_{j+1}‖`, with `j = N → 1` included when cyclic.
    pub shift: f64,
    /// `tr(1 − Σ e_j)` (normalized).
    pub residual_trace: f64,
    pub orthogonal: bool,
    pub commutator_pass: bool,
    pub shift_pass: bool,
    pub trace_pass: bool,
    pub pass: bool,
}

/// Measures the three tracial Rokhlin quantities for `e` against the stage
/// automorphism `alpha` and sampled test elements `tests`.
pub fn check_tracial_rokhlin(e: &ProjectionFamily, alpha: &StageAutomorphism, tests: &[BlockDiag], eps: f64, cyclic: bool) -> Result<RokhlinReport> {
    let dim = e.dim();
    let n = e.height();
    let mut commutator = 0.0f64;
    for j in 0..n {
        let d = e.diagonal(j);
        for x in tests {
            check_dim(dim, x.dim())?;
            commutator = commutator.max(x.commutator_with_diagonal(&d)?);
        }
    }
    let moved: Vec<Vec<bool>> = e.masks.iter().map(|m| alpha.apply_to_mask(m, e.block)).collect::<Result<_>>()?;
    let mut shift = 0.0f64;
    let pairs = if cyclic { n } else { n.saturating_sub(1) };
    for j in 0..pairs {
        let next = &e.masks[(j + 1) % n];
        if moved[j] != *next {
            shift = 1.0;
        }
    }
    let covered: usize = (0..n).map(|j| e.rank(j)).sum();
    let residual_trace = if dim == 0 { 1.0 } else { 1.0 - covered as f64 / dim as f64 };
    let orthogonal = e.mutually_orthogonal();
    let commutator_pass = commutator < eps;
    let shift_pass = shift < eps;
    let trace_pass = residual_trace < eps;
    Ok(RokhlinReport {
        eps,
        cyclic,
        commutator,
        shift,
        residual_trace,
        orthogonal,
        commutator_pass,
        shift_pass,
        trace_pass,
        pass: commutator_pass && shift_pass && trace_pass && orthogonal,
    })
}

/// Re-aligns a geometric family so that `α(e_j) = e_{j+1}` holds exactly,
/// wraparound included.
///
/// The slot permutation `p` of `α` acts on constant diagonal projections by
/// `α(e_E) = e_{p⁻¹(E)}`. A 0/1 family with `α^N(e_1) = e_1` must make `e_1`
/// a union of `p^N`-orbits, so only cycles of `p` whose length is a multiple
/// of `N` can carry it. On each such cycle that meets the geometric base
/// `e_1`, one residue class mod `N` (the one with the largest overlap with
/// the base) becomes part of `e_1`, and `e_{j+1} = α^j(e_1)`. Other cycles
/// are left out and show up in the residual trace.
pub fn align_cyclic(geometric: &ProjectionFamily, alpha: &StageAutomorphism) -> Result<ProjectionFamily> {
    let n = geometric.height();
    let p = alpha.slot_permutation(geometric.slots(), geometric.block)?;
    let base = &geometric.masks[0];
    let mut e1 = vec![false; geometric.slots()];
    for cycle in p.cycles() {
        let len = cycle.len();
        if n == 0 || len % n != 0 || !cycle.iter().any(|&s| base[s]) {
            continue;
        }
        let best = (0..n)
            .max_by_key(|&r| (cycle.iter().skip(r).step_by(n).filter(|&&s| base[s]).count(), std::cmp::Reverse(r)))
            .expect("n >= 1");
        for &s in cycle.iter().skip(best).step_by(n) {
            e1[s] = true;
        }
    }
    Ok(push_family(e1, n, alpha, geometric))
}

/// Non-cyclic alignment: base slots are admitted greedily when their first
/// `N` pullbacks avoid everything admitted so far; `e_{j+1} = α^j(e_1)`.
pub fn align_linear(geometric: &ProjectionFamily, alpha: &StageAutomorphism) -> Result<ProjectionFamily> {
    let n = geometric.height();
    let p = alpha.slot_permutation(geometric.slots(), geometric.block)?;
    let inv = p.inverse();
    let mut used = vec![false; geometric.slots()];
    let mut e1 = vec![false; geometric.slots()];
    for s in 0..geometric.slots() {
        if !geometric.masks[0][s] {
            continue;
        }
        let mut orbit = Vec::with_capacity(n);
        let mut t = s;
        for _ in 0..n {
            orbit.push(t);
            t = inv.get(t);
        }
        let distinct = {
            let mut o = orbit.clone();
            o.sort_unstable();
            o.dedup();
            o.len() == orbit.len()
        };
        if distinct && orbit.iter().all(|&t| !used[t]) {
            for &t in &orbit {
                used[t] = true;
            }
            e1[s] = true;
        }
    }
    Ok(push_family(e1, n, alpha, geometric))
}

fn push_family(e1: Vec<bool>, n: usize, alpha: &StageAutomorphism, geometric: &ProjectionFamily) -> ProjectionFamily {
    let mut masks = Vec::with_capacity(n);
    let mut cur = e1;
    for _ in 0..n {
        let next = alpha.apply_to_mask(&cur, geometric.block).expect("slot count checked");
        masks.push(cur);
        cur = next;
    }
    let bumps = masks
        .iter()
        .zip(&geometric.bumps)
        .map(|(m, b)| m.iter().zip(b).map(|(&on, &v)| if on { v } else { 0.0 }).collect())
        .collect();
    ProjectionFamily { block: geometric.block, masks, bumps }
}

/// Parameters of the end-to-end Rokhlin check on one connecting stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RokhlinParams {
    pub map: MinimalMap,
    pub height: usize,
    /// Tolerance of the three Rokhlin quantities.
    pub eps: f64,
    /// Tower coverage defect `δ`.
    pub delta: f64,
    /// Tower base diameter bound `η`.
    pub eta: f64,
    /// Density of the stage sample.
    pub sample_eps: f64,
    /// Lower bound on the number of sample points.
    pub min_points: usize,
    pub k1: usize,
    pub a1: usize,
    pub testset: Vec<TestFunction>,
    pub basepoints: usize,
    pub seed: u64,
    pub cyclic: bool,
}

impl RokhlinParams {
    pub fn golden_default() -> Self {
        Self {
            map: MinimalMap::golden_rotation(),
            height: 3,
            eps: 0.1,
            delta: 0.05,
            eta: 0.05,
            sample_eps: 0.1,
            min_points: 233,
            k1: 1,
            a1: 1,
            testset: TestFunction::standard_set(),
            basepoints: 4,
            seed: 0,
            cyclic: true,
        }
    }
}

/// Outcome of [`run_rokhlin`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RokhlinRun {
    pub tower: TowerCheck,
    pub num_bases: usize,
    pub sample_points: usize,
    pub stage_dim: usize,
    pub bottleneck: f64,
    /// Cycle lengths of the stage intertwiner on the point slots.
    pub cycle_lengths: Vec<usize>,
    /// The tower projections `e_j` as they come from the geometry.
    pub geometric: RokhlinReport,
    /// The family re-aligned along the intertwiner's cycles.
    pub aligned: RokhlinReport,
    /// Fraction of the aligned `e_1` that lies in the geometric `e_1`.
    pub base_overlap: f64,
    pub pass: bool,
}

/// Tower, one matching-aware stage, intertwiner and the Rokhlin check.
pub fn run_rokhlin(params: &RokhlinParams) -> Result<(RokhlinRun, ProjectionFamily)> {
    if !(params.eps > 0.0) || !(params.sample_eps > 0.0) {
        return Err(invalid("eps", "must be positive"));
    }
    if params.a1 == 0 {
        return Err(invalid("a1", "must be at least 1"));
    }
    let map = &params.map;
    let tower = build_tower(map, params.height, params.delta, params.eta)?;
    let check = verify_tower(&tower, 1000)?;
    let boxes = box_count(params.sample_eps, map.dim());
    let size = params.min_points.max(2 * boxes).div_ceil(boxes) * boxes;
    if size > MAX_STAGE_POINTS {
        return Err(invalid("min_points", format!("a stage sample of {size} points exceeds the limit of {MAX_STAGE_POINTS}")));
    }
    let pts = epsilon_dense_sample(map, params.sample_eps, &[size])?.support().to_vec();
    let model = StageModel::new(params.k1, vec![params.a1], vec![params.a1 + pts.len()], vec![pts.clone()])?;
    let tests: Vec<MatrixFunction> = params.testset.iter().map(|t| t.to_matrix(map.dim(), params.k1)).collect::<Result<_>>()?;
    let basepoints = seeded_basepoints(map.dim(), params.basepoints.max(1), params.seed);
    let run = build_intertwiners(&model, map, &tests, &[params.eps], &basepoints)?;
    let alpha = run.automorphism(map, &model, 2);
    let geometric = tower_projections(&tower, &pts, params.k1)?.with_leading_slots(params.a1);
    let mut samples = Vec::new();
    for g in &tests {
        for y in &basepoints {
            samples.push(model.eval_image(g, 1, 2, y)?);
        }
    }
    let geo = check_tracial_rokhlin(&geometric, &alpha, &samples, params.eps, params.cyclic)?;
    let aligned_family = if params.cyclic { align_cyclic(&geometric, &alpha)? } else { align_linear(&geometric, &alpha)? };
    let aligned = check_tracial_rokhlin(&aligned_family, &alpha, &samples, params.eps, params.cyclic)?;
    let e1 = &aligned_family.masks[0];
    let total = e1.iter().filter(|b| **b).count();
    let inside = e1.iter().zip(&geometric.masks[0]).filter(|(a, b)| **a && **b).count();
    let base_overlap = if total == 0 { 0.0 } else { inside as f64 / total as f64 };
    let mut cycle_lengths: Vec<usize> = run.matchings[0].cycles().iter().map(Vec::len).collect();
    cycle_lengths.sort_unstable();
    let pass = aligned.pass && check.pass;
    Ok((
        RokhlinRun {
            num_bases: tower.num_bases(),
            tower: check,
            sample_points: pts.len(),
            stage_dim: model.k(2),
            bottleneck: run.stages[0].bottleneck,
            cycle_lengths,
            geometric: geo,
            aligned,
            base_overlap,
            pass,
        },
        aligned_family,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{circle_grid, golden_theta};
    use crate::matching::Permutation;

    #[test]
    fn orbit_value_comparisons() {
        let t = golden_theta();
        let a = OrbitValue::new(0.5, 0);
        let b = OrbitValue::new(0.0, 1);
        assert_eq!(compare(a, b, t).unwrap(), Ordering::Less);
        assert_eq!(compare(b, b, t).unwrap(), Ordering::Equal);
        let near = OrbitValue::new(t, 0);
        assert!(matches!(compare(near, b, t), Err(Error::Undecidable(_))));
    }

    #[test]
    fn first_return_partition_tiles_the_base() {
        let t = golden_theta();
        let beta = 1.0 / 64.0;
        let parts = first_return_partition(t, beta).unwrap();
        let total: f64 = parts.iter().map(|(a, _)| a.length(t)).sum();
        assert!((total - beta).abs() < 1e-12);
        // three-gap theorem: at most three return times
        let mut times: Vec<i64> = parts.iter().map(|p| p.1).collect();
        times.sort_unstable();
        times.dedup();
        assert!(times.len() <= 3, "{times:?}");
        // Kac: the columns tile the circle
        let cover: f64 = parts.iter().map(|(a, h)| a.length(t) * *h as f64).sum();
        assert!((cover - 1.0).abs() < 1e-9);
    }

    #[test]
    fn height_one_tower() {
        let tower = build_tower(&MinimalMap::golden_rotation(), 1, 0.1, 0.05).unwrap();
        let check = verify_tower(&tower, 1000).unwrap();
        assert!(check.pass, "{check:?}");
        assert!(tower.coverage >= 0.9);
    }

    #[test]
    fn silver_rotation_tower() {
        let map = MinimalMap::rotation(2f64.sqrt() - 1.0);
        let tower = build_tower(&map, 2, 0.2, 0.05).unwrap();
        let check = verify_tower(&tower, 1000).unwrap();
        assert!(check.pass && check.coverage >= 0.8, "{check:?}");
    }

    #[test]
    fn golden_tower_five_levels() {
        let tower = build_tower(&MinimalMap::golden_rotation(), 5, 0.1, 0.02).unwrap();
        let check = verify_tower(&tower, 2000).unwrap();
        assert!(check.levels_disjoint && check.bases_disjoint);
        assert!(check.coverage > 0.9);
        assert!((check.grid_coverage - check.coverage).abs() < 0.01);
        assert!(check.pass, "{check:?}");
    }

    #[test]
    fn furstenberg_tower() {
        let map = MinimalMap::furstenberg(golden_theta(), vec![1], vec![]).unwrap();
        let tower = build_tower(&map, 3, 0.2, 0.1).unwrap();
        let check = verify_tower(&tower, 60).unwrap();
        assert!(check.pass, "{check:?}");
        assert_eq!(tower.fibre_cells.len(), 16);
    }

    #[test]
    fn tower_errors() {
        assert!(matches!(build_tower(&MinimalMap::rotation(0.25), 2, 0.1, 0.05), Err(Error::NotMinimal)));
        assert!(build_tower(&MinimalMap::golden_rotation(), 0, 0.1, 0.05).is_err());
        assert!(build_tower(&MinimalMap::golden_rotation(), 2, 1.5, 0.05).is_err());
        // demanding coverage 1 − (N−1)β style targets beyond the halving budget fails honestly
        assert!(matches!(build_tower(&MinimalMap::golden_rotation(), 50, 1e-6, 0.5), Err(Error::TowerCoverage { .. })));
    }

    #[test]
    fn projections_of_a_periodic_model() {
        let map = MinimalMap::rotation(0.25);
        let tower = TowerSpec::from_circle_arcs(map.clone(), 4, &[(0.9, 0.3)], 0.05).unwrap();
        let pts = circle_grid(4);
        let fam = tower_projections(&tower, &pts, 1).unwrap();
        for j in 0..4 {
            assert_eq!(fam.rank(j), 1);
        }
        assert!(fam.mutually_orthogonal());
        // α = pullback along the exact matching s(j) = j − 1
        let alpha = StageAutomorphism::new(map, Some(Permutation::cyclic_shift(4, 1)), 1);
        let rep = check_tracial_rokhlin(&fam, &alpha, &[], 0.01, true).unwrap();
        assert_eq!((rep.commutator, rep.shift, rep.residual_trace), (0.0, 0.0, 0.0));
        assert!(rep.pass);
        let empty = ProjectionFamily { block: 1, masks: vec![vec![false; 4]; 2], bumps: vec![vec![0.0; 4]; 2] };
        let rep = check_tracial_rokhlin(&empty, &alpha, &[], 0.5, false).unwrap();
        assert_eq!(rep.residual_trace, 1.0);
        assert!(!rep.pass);
    }

    #[test]
    fn no_points_in_inner_sets() {
        let tower = build_tower(&MinimalMap::golden_rotation(), 3, 0.1, 0.05).unwrap();
        // a point far from every inner set: use the complement of the tower
        let outside: Vec<TorusPoint> = (0..2000)
            .map(|i| TorusPoint::circle(i as f64 / 2000.0))
            .filter(|p| (0..3).all(|j| !tower.in_inner(&MinimalMap::golden_rotation().apply_power(p, j).unwrap())))
            .take(3)
            .collect();
        let fam = tower_projections(&tower, &outside, 2).unwrap();
        assert!((0..3).all(|j| fam.rank(j) == 0));
    }

    #[test]
    fn bumps_are_between_zero_and_one() {
        let tower = build_tower(&MinimalMap::golden_rotation(), 3, 0.1, 0.05).unwrap();
        for i in 0..5000 {
            let x = TorusPoint::circle(i as f64 / 5000.0 + 1e-5);
            let b = tower.bump(&x);
            assert!((0.0..=1.0).contains(&b));
            if tower.in_inner(&x) {
                assert_eq!(b, 1.0);
            }
            if tower.base_containing(&x).is_none() {
                assert_eq!(b, 0.0);
            }
        }
    }

    #[test]
    fn cyclic_alignment_on_a_single_cycle() {
        let map = MinimalMap::golden_rotation();
        let n = 12;
        let geometric = ProjectionFamily {
            block: 1,
            masks: vec![(0..n).map(|s| s < 2).collect(), vec![false; n], vec![false; n]],
            bumps: vec![vec![1.0; n]; 3],
        };
        let alpha = StageAutomorphism::new(map, Some(Permutation::cyclic_shift(n, 5)), 1);
        let fam = align_cyclic(&geometric, &alpha).unwrap();
        let rep = check_tracial_rokhlin(&fam, &alpha, &[], 0.1, true).unwrap();
        assert_eq!(rep.shift, 0.0);
        assert_eq!(rep.residual_trace, 0.0);
        assert!(rep.orthogonal);
        let lin = align_linear(&geometric, &alpha).unwrap();
        let rep = check_tracial_rokhlin(&lin, &alpha, &[], 0.1, false).unwrap();
        assert_eq!(rep.shift, 0.0);
        assert!(rep.orthogonal);
    }

    #[test]
    fn golden_rokhlin_pipeline() {
        let (run, fam) = run_rokhlin(&RokhlinParams::golden_default()).unwrap();
        assert_eq!(run.sample_points, 240);
        assert_eq!(run.stage_dim, 241);
        assert_eq!(run.cycle_lengths, vec![60, 60, 60, 60]);
        assert_eq!(run.aligned.shift, 0.0);
        assert!((run.aligned.residual_trace - 1.0 / 241.0).abs() < 1e-12);
        assert!(run.pass, "{run:?}");
        assert!(fam.mutually_orthogonal());
    }
}
