//! Finite stages of the inductive limit `lim (C(X) ⊗ M_{k(n)}, φ_n)`.
//!
//! The connecting map `φ_n` sends `f` to
//! `diag(f, …, f, f(x(1,n)), …, f(x(l(n),n)))` with `a_n` copies of `f`, so
//! `k(n+1) = b_n k(n)` with `b_n = a_n + l(n)`. Images of stage-1 functions
//! are never stored as matrices: `φ_{1,n}(g)(y)` is block diagonal with
//! `k(n)/k(1)` blocks, each of them `g` evaluated at `y` or at an archived
//! sample point. The list of those evaluation points (the *leaves*) obeys
//!
//! ```text
//! leaves_{n+1}(y) = leaves_n(y) repeated a_n times,
//!                   then leaves_n(x(1,n)), …, leaves_n(x(l(n),n))
//! ```
//!
//! which makes evaluation at stage 5 (half a million blocks) cheap.
//!
//! Intertwiners are block permutations acting on the `k(1)`-blocks. With
//! `s_n` the optimal matching of stage `n` (so `x_j ≈ ψ(x_{s_n(j)})`) and
//! `σ_n = s_n⁻¹`,
//!
//! ```text
//! U_{n+1} = diag(1_{a_n k(n)}, σ_n ⊗ 1_{k(n)}),   V_1 = 1,
//! V_{n+1} = (1_{b_n} ⊗ V_n) · U_{n+1}.
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{MinimalMap, TorusPoint};
use crate::error::{check_dim, invalid, Error, Result};
use crate::matalg::{evaluate_diag, intertwining_defect, modulus_defect_bound, BlockDiag, IntertwinerMatrix, MatrixFunction, ScalarFn, TrigPoly};
use crate::matching::{min_bottleneck, Permutation};
use crate::measure::{box_count, epsilon_dense_sample};
use crate::C64;

pub const DEFAULT_STAGES: usize = 4;
/// Largest sample size tried, as a multiple of the box count.
pub const MAX_SIZE_MULTIPLE: usize = 64;
/// Largest stage sample; the matching needs a dense `n × n` distance table.
pub const MAX_STAGE_POINTS: usize = 4096;
pub const MANIFEST_SCHEMA: u32 = 1;

/// `ε_n = 2^{−n}` for `n = 1..=stages`.
pub fn default_epsilons(stages: usize) -> Vec<f64> {
    (1..=stages).map(|n| 0.5f64.powi(n as i32)).collect()
}

#[derive(Deserialize)]
struct StageRecord {
    k1: usize,
    a: Vec<usize>,
    b: Vec<usize>,
    points: Vec<Vec<TorusPoint>>,
}

/// Block sizes, multiplicities and archived sample points of stages
/// `1..=T+1`, where `T` is the number of connecting maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StageRecord")]
pub struct StageModel {
    k1: usize,
    a: Vec<usize>,
    b: Vec<usize>,
    points: Vec<Vec<TorusPoint>>,
    #[serde(skip)]
    k: Vec<usize>,
    #[serde(skip)]
    offsets: Vec<usize>,
}

impl TryFrom<StageRecord> for StageModel {
    type Error = Error;

    fn try_from(r: StageRecord) -> Result<Self> {
        Self::new(r.k1, r.a, r.b, r.points)
    }
}

impl StageModel {
    /// `points[n−1]` holds `x(1,n), …, x(l(n),n)`.
    pub fn new(k1: usize, a: Vec<usize>, b: Vec<usize>, points: Vec<Vec<TorusPoint>>) -> Result<Self> {
        if k1 == 0 {
            return Err(invalid("k1", "must be at least 1"));
        }
        check_dim(a.len(), b.len())?;
        check_dim(a.len(), points.len())?;
        let dim = points.iter().flatten().map(TorusPoint::dim).next();
        let mut k = vec![k1];
        let mut offsets = vec![0];
        for (n, ((&an, &bn), pts)) in a.iter().zip(&b).zip(&points).enumerate() {
            if an == 0 {
                return Err(invalid("a", format!("a_{} must be at least 1", n + 1)));
            }
            if bn <= an {
                return Err(invalid("b", format!("l_{} = b − a must be at least 1", n + 1)));
            }
            check_dim(bn - an, pts.len())?;
            if let Some(d) = dim {
                for p in pts {
                    check_dim(d, p.dim())?;
                }
            }
            k.push(k[n].checked_mul(bn).ok_or(Error::Overflow)?);
            offsets.push(offsets[n] + pts.len());
        }
        Ok(Self { k1, a, b, points, k, offsets })
    }

    /// Number of connecting maps `T`.
    pub fn stages(&self) -> usize {
        self.a.len()
    }

    /// `k(n)` for `1 ≤ n ≤ T + 1`.
    pub fn k(&self, n: usize) -> usize {
        self.k[n - 1]
    }

    pub fn a(&self, n: usize) -> usize {
        self.a[n - 1]
    }

    pub fn b(&self, n: usize) -> usize {
        self.b[n - 1]
    }

    pub fn l(&self, n: usize) -> usize {
        self.b[n - 1] - self.a[n - 1]
    }

    pub fn points(&self, n: usize) -> &[TorusPoint] {
        &self.points[n - 1]
    }

    pub fn ratio(&self, n: usize) -> f64 {
        self.a(n) as f64 / self.b(n) as f64
    }

    pub fn ratios_nonincreasing(&self) -> bool {
        (2..=self.stages()).all(|n| self.ratio(n) <= self.ratio(n - 1))
    }

    /// Every archived point, stage by stage.
    pub fn archive(&self) -> impl Iterator<Item = &TorusPoint> {
        self.points.iter().flatten()
    }

    /// The first `stages` connecting maps.
    pub fn truncate(&self, stages: usize) -> Result<Self> {
        if stages > self.stages() {
            return Err(invalid("stages", format!("model has only {} stages", self.stages())));
        }
        Self::new(self.k1, self.a[..stages].to_vec(), self.b[..stages].to_vec(), self.points[..stages].to_vec())
    }

    fn check_stage(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.stages() + 1 {
            return Err(invalid("stage", format!("stage {n} outside 1..={}", self.stages() + 1)));
        }
        Ok(())
    }

    /// Leaf codes of `φ_{m,n}`: `0` is the basepoint, `c > 0` is archive
    /// point `c − 1`.
    fn leaves(&self, m: usize, n: usize) -> Vec<usize> {
        let mut cur = vec![0usize];
        for i in m..n {
            let an = self.a(i);
            let mut next = Vec::with_capacity(cur.len() * self.b(i));
            for _ in 0..an {
                next.extend_from_slice(&cur);
            }
            for j in 0..self.l(i) {
                let code = self.offsets[i - 1] + j + 1;
                next.extend(cur.iter().map(|&c| if c == 0 { code } else { c }));
            }
            cur = next;
        }
        cur
    }

    /// `φ_{m,n}(f)(y)` as `k(n)/k(m)` blocks of size `k(m)`.
    pub fn eval_image(&self, f: &MatrixFunction, m: usize, n: usize, y: &TorusPoint) -> Result<BlockDiag> {
        self.check_stage(m)?;
        self.check_stage(n)?;
        if n < m {
            return Err(invalid("stage", "target stage precedes source stage"));
        }
        check_dim(self.k(m), f.block_size())?;
        check_dim(f.dim(), y.dim())?;
        let mut at = vec![y.clone()];
        at.extend(self.archive().cloned());
        let table = evaluate_diag(f, &at)?;
        table.select(&self.leaves(m, n))
    }
}

/// `φ_n(f)` as a literal matrix function of block size `k(n+1)`.
pub fn connecting_map(f: &MatrixFunction, model: &StageModel, n: usize) -> Result<MatrixFunction> {
    if n == 0 || n > model.stages() {
        return Err(invalid("stage", format!("no connecting map at stage {n}")));
    }
    let k = model.k(n);
    check_dim(k, f.block_size())?;
    let mut entries = Vec::new();
    for c in 0..model.a(n) {
        for (&(i, j), g) in f.entries() {
            entries.push(((c * k + i, c * k + j), g.clone()));
        }
    }
    for (t, x) in model.points(n).iter().enumerate() {
        let value = f.eval(x)?;
        let off = (model.a(n) + t) * k;
        for i in 0..k {
            for j in 0..k {
                let v = value[(i, j)];
                if v != C64::new(0.0, 0.0) {
                    entries.push(((off + i, off + j), ScalarFn::constant(f.dim(), v)));
                }
            }
        }
    }
    MatrixFunction::from_entries(f.dim(), model.k(n + 1), entries)
}

/// `ad(V)(f ∘ ψ)`, or `f ∘ ψ` when `v` is absent.
pub fn stage_automorphism(f: &MatrixFunction, map: &MinimalMap, v: Option<&IntertwinerMatrix>) -> Result<MatrixFunction> {
    let composed = f.compose(map)?;
    let Some(v) = v else { return Ok(composed) };
    let m = f.block_size();
    check_dim(m, v.size())?;
    match v {
        IntertwinerMatrix::Permutation { perm, m: bm } => {
            // (P f P*)_{ij} = f_{π(i) π(j)}
            let inv = perm.kron_identity(*bm).inverse();
            let entries = composed.entries().map(|(&(i, j), g)| ((inv.get(i), inv.get(j)), g.clone())).collect();
            MatrixFunction::from_entries(f.dim(), m, entries)
        }
        IntertwinerMatrix::Dense(w) => {
            let mut entries = Vec::new();
            for (&(a, b), g) in composed.entries() {
                for i in 0..m {
                    for j in 0..m {
                        let c = w[(i, a)] * w[(j, b)].conj();
                        if c != C64::new(0.0, 0.0) {
                            entries.push(((i, j), g.scale(c)));
                        }
                    }
                }
            }
            MatrixFunction::from_entries(f.dim(), m, entries)
        }
    }
}

/// `ad(V) ∘ (ψ^♮ ⊗ id)` with `V` a permutation of `block`-sized blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct StageAutomorphism {
    map: MinimalMap,
    conj: Option<Permutation>,
    block: usize,
}

impl StageAutomorphism {
    pub fn new(map: MinimalMap, conj: Option<Permutation>, block: usize) -> Self {
        Self { map, conj, block }
    }

    pub fn map(&self) -> &MinimalMap {
        &self.map
    }

    pub fn conj(&self) -> Option<&Permutation> {
        self.conj.as_ref()
    }

    pub fn block(&self) -> usize {
        self.block
    }

    /// The block permutation seen on `slots` blocks of size `block`.
    pub fn slot_permutation(&self, slots: usize, block: usize) -> Result<Permutation> {
        match &self.conj {
            None => Ok(Permutation::identity(slots)),
            Some(p) => {
                check_dim(self.block, block)?;
                check_dim(p.len(), slots)?;
                Ok(p.clone())
            }
        }
    }

    /// Image of the constant diagonal projection with the given slot mask:
    /// slot `s` of the result is slot `p(s)` of the input.
    pub fn apply_to_mask(&self, mask: &[bool], block: usize) -> Result<Vec<bool>> {
        self.slot_permutation(mask.len(), block)?.gather(mask)
    }

    /// `V D V*` for a constant block-diagonal `D`.
    pub fn apply_constant(&self, d: &BlockDiag) -> Result<BlockDiag> {
        match &self.conj {
            None => Ok(d.clone()),
            Some(p) => {
                check_dim(self.block, d.block_size())?;
                d.conj_perm(p)
            }
        }
    }

    /// `α(f)` for a literal matrix function.
    pub fn apply(&self, f: &MatrixFunction) -> Result<MatrixFunction> {
        let v = self.conj.as_ref().map(|p| IntertwinerMatrix::Permutation { perm: p.clone(), m: self.block });
        stage_automorphism(f, &self.map, v.as_ref())
    }
}

/// Test-function descriptors; each becomes `g ⊗ 1_{k(1)}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// `z_index^power`.
    Coordinate { index: usize, power: i64 },
    /// `e^{2πi⟨freq, x⟩}`.
    Monomial { freq: Vec<i64> },
    Constant { re: f64, im: f64 },
}

impl TestFunction {
    /// `{z, z², 1}`.
    pub fn standard_set() -> Vec<Self> {
        vec![Self::Coordinate { index: 0, power: 1 }, Self::Coordinate { index: 0, power: 2 }, Self::Constant { re: 1.0, im: 0.0 }]
    }

    pub fn scalar(&self, dim: usize) -> Result<ScalarFn> {
        Ok(match self {
            Self::Coordinate { index, power } => TrigPoly::coordinate(dim, *index, *power)?.into(),
            Self::Monomial { freq } => TrigPoly::monomial(dim, freq.clone(), C64::new(1.0, 0.0))?.into(),
            Self::Constant { re, im } => ScalarFn::constant(dim, C64::new(*re, *im)),
        })
    }

    pub fn to_matrix(&self, dim: usize, k1: usize) -> Result<MatrixFunction> {
        let g = self.scalar(dim)?;
        MatrixFunction::from_entries(dim, k1, (0..k1).map(|i| ((i, i), g.clone())).collect())
    }
}

/// `δ = ε / max_f m² L_f`: any matching with bottleneck below `δ` keeps
/// every certified defect below `ε`.
pub fn matching_threshold(testset: &[MatrixFunction], eps: f64) -> f64 {
    let c = testset
        .iter()
        .map(|f| {
            let m = f.block_size() as f64;
            m * m * f.max_entry_lipschitz()
        })
        .fold(0.0, f64::max);
    if c == 0.0 {
        f64::INFINITY
    } else {
        eps / c
    }
}

/// The first multiple of the box count (from twice the box count) whose
/// box sample admits a matching with bottleneck below `threshold`.
pub fn matching_aware_sample(map: &MinimalMap, eps: f64, threshold: f64) -> Result<(Vec<TorusPoint>, f64)> {
    let boxes = box_count(eps, map.dim());
    let mut best = f64::INFINITY;
    for mult in 2..=MAX_SIZE_MULTIPLE {
        if mult.saturating_mul(boxes) > MAX_STAGE_POINTS {
            break;
        }
        let mu = epsilon_dense_sample(map, eps, &[mult * boxes])?;
        let pts = mu.support().to_vec();
        let b = min_bottleneck(&pts, map)?.epsilon;
        if b < threshold {
            return Ok((pts, b));
        }
        best = best.min(b);
    }
    Err(Error::NoMatching { stage: 0, threshold, bottleneck: best })
}

/// Samples every stage with [`matching_aware_sample`]; `b_n = a_n + l_n`.
pub fn sample_stages(map: &MinimalMap, k1: usize, a: &[usize], testset: &[MatrixFunction], eps: &[f64]) -> Result<StageModel> {
    check_dim(a.len(), eps.len())?;
    let mut points = Vec::with_capacity(a.len());
    let mut b = Vec::with_capacity(a.len());
    for (n, (&an, &e)) in a.iter().zip(eps).enumerate() {
        let threshold = matching_threshold(testset, e);
        let (pts, _) = matching_aware_sample(map, e, threshold).map_err(|err| match err {
            Error::NoMatching { threshold, bottleneck, .. } => Error::NoMatching { stage: n + 1, threshold, bottleneck },
            other => other,
        })?;
        b.push(an + pts.len());
        points.push(pts);
    }
    StageModel::new(k1, a.to_vec(), b, points)
}

/// Per-stage result of [`build_intertwiners`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageDefect {
    pub stage: usize,
    pub points: usize,
    pub eps: f64,
    /// Matching threshold `δ_n`.
    pub threshold: f64,
    pub bottleneck: f64,
    /// `max ‖φ_n∘ad(V_n)∘α_n(f) − ad(V_{n+1})∘α_{n+1}∘φ_n(f)‖` over test
    /// functions and basepoints.
    pub defect: f64,
    /// `max_f intertwining_defect(f, x(·,n), ψ, s_n)`.
    pub pointwise_defect: f64,
    /// `max_f modulus_defect_bound(f, bottleneck)`.
    pub certificate: f64,
    pub pass: bool,
}

/// Matchings, intertwiners and defects of a multi-stage run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntertwinerRun {
    /// `s_n` for each stage.
    pub matchings: Vec<Permutation>,
    pub stages: Vec<StageDefect>,
    /// `‖φ_{1,T+1}(g∘ψ) − ad(V_{T+1})(φ_{1,T+1}(g)∘ψ)‖`.
    pub telescoped: f64,
    /// `Σ ε_n`.
    pub telescoped_bound: f64,
    pub pass: bool,
    #[serde(skip)]
    pub intertwiners: Vec<Permutation>,
}

impl IntertwinerRun {
    /// `V_n` on the `k(1)`-blocks of stage `n`.
    pub fn v(&self, n: usize) -> &Permutation {
        &self.intertwiners[n - 1]
    }

    pub fn automorphism(&self, map: &MinimalMap, model: &StageModel, n: usize) -> StageAutomorphism {
        StageAutomorphism::new(map.clone(), Some(self.v(n).clone()), model.k1)
    }
}

/// `U_{n+1}` and `V_{n+1}` from `V_n` and `s_n`.
pub fn next_intertwiner(model: &StageModel, n: usize, v: &Permutation, s: &Permutation) -> Result<Permutation> {
    let g = model.k(n) / model.k1;
    check_dim(g, v.len())?;
    check_dim(model.l(n), s.len())?;
    let u = Permutation::identity(model.a(n) * g).direct_sum(&s.inverse().kron_identity(g));
    v.repeat(model.b(n)).product(&u)
}

fn stage_defect_at(model: &StageModel, map: &MinimalMap, g: &MatrixFunction, n: usize, v_n: &Permutation, v_next: &Permutation, y: &TorusPoint) -> Result<f64> {
    let h = |z: &TorusPoint| -> Result<BlockDiag> { model.eval_image(g, 1, n, &map.apply(z)?)?.conj_perm(v_n) };
    let hy = h(y)?;
    let mut parts: Vec<BlockDiag> = Vec::with_capacity(model.l(n) + 1);
    for x in model.points(n) {
        parts.push(h(x)?);
    }
    let mut refs: Vec<&BlockDiag> = std::iter::repeat_n(&hy, model.a(n)).collect();
    refs.extend(parts.iter());
    let lhs = BlockDiag::concat(&refs)?;
    let rhs = model.eval_image(g, 1, n + 1, &map.apply(y)?)?.conj_perm(v_next)?;
    lhs.sub(&rhs)?.norm()
}

/// Builds `V_1, …, V_{T+1}` and measures the ladder defects over the test
/// set (stage-1 functions) at the given basepoints.
pub fn build_intertwiners(model: &StageModel, map: &MinimalMap, testset: &[MatrixFunction], eps: &[f64], basepoints: &[TorusPoint]) -> Result<IntertwinerRun> {
    check_dim(model.stages(), eps.len())?;
    if basepoints.is_empty() {
        return Err(invalid("basepoints", "need at least one basepoint"));
    }
    for f in testset {
        check_dim(model.k1, f.block_size())?;
        check_dim(map.dim(), f.dim())?;
    }
    let mut v = vec![Permutation::identity(1)];
    let mut matchings = Vec::new();
    let mut stages = Vec::new();
    for n in 1..=model.stages() {
        let e = eps[n - 1];
        let threshold = matching_threshold(testset, e);
        let pts = model.points(n);
        let best = min_bottleneck(pts, map)?;
        if !(best.epsilon < threshold) {
            return Err(Error::NoMatching { stage: n, threshold, bottleneck: best.epsilon });
        }
        let s = best.permutation;
        let next = next_intertwiner(model, n, &v[n - 1], &s)?;
        let per_fn: Vec<(f64, f64, f64)> = testset
            .par_iter()
            .map(|g| -> Result<(f64, f64, f64)> {
                let mut d = 0.0f64;
                for y in basepoints {
                    d = d.max(stage_defect_at(model, map, g, n, &v[n - 1], &next, y)?);
                }
                let pw = intertwining_defect(g, pts, map, &s)?;
                let cert = if best.epsilon > 0.0 { modulus_defect_bound(g, best.epsilon)? } else { 0.0 };
                Ok((d, pw, cert))
            })
            .collect::<Result<_>>()?;
        let defect = per_fn.iter().map(|t| t.0).fold(0.0, f64::max);
        let pointwise_defect = per_fn.iter().map(|t| t.1).fold(0.0, f64::max);
        let certificate = per_fn.iter().map(|t| t.2).fold(0.0, f64::max);
        let ok_cert = per_fn.iter().all(|&(d, _, c)| d <= c + 1e-12);
        stages.push(StageDefect {
            stage: n,
            points: pts.len(),
            eps: e,
            threshold,
            bottleneck: best.epsilon,
            defect,
            pointwise_defect,
            certificate,
            pass: defect < e && ok_cert,
        });
        matchings.push(s);
        v.push(next);
    }
    let top = model.stages() + 1;
    let tele: Vec<f64> = testset
        .par_iter()
        .map(|g| -> Result<f64> {
            let gpsi = g.compose(map)?;
            let mut d = 0.0f64;
            for y in basepoints {
                let lhs = model.eval_image(&gpsi, 1, top, y)?;
                let rhs = model.eval_image(g, 1, top, &map.apply(y)?)?.conj_perm(&v[top - 1])?;
                d = d.max(lhs.sub(&rhs)?.norm()?);
            }
            Ok(d)
        })
        .collect::<Result<_>>()?;
    let telescoped = tele.into_iter().fold(0.0, f64::max);
    let telescoped_bound: f64 = eps.iter().sum();
    let pass = stages.iter().all(|s| s.pass) && telescoped < telescoped_bound;
    Ok(IntertwinerRun { matchings, stages, telescoped, telescoped_bound, pass, intertwiners: v })
}

/// Normalized trace of `φ_{m,n}(f)(basepoint)`, and the bound
/// `Π_{i=m}^{n−1}(a_i/b_i) · osc(tr f)/k(m)` on how much it can move with
/// the basepoint.
pub fn stage_trace(f: &MatrixFunction, model: &StageModel, m: usize, n: usize, basepoint: &TorusPoint) -> Result<(C64, f64)> {
    let img = model.eval_image(f, m, n, basepoint)?;
    let weight: f64 = (m..n).map(|i| model.ratio(i)).product();
    Ok((img.normalized_trace(), weight * f.trace_oscillation_bound() / model.k(m) as f64))
}

/// One stage of the trace claim.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub stage: usize,
    pub value_re: f64,
    pub value_im: f64,
    /// `|τ_n(f) − ∫ f dμ|`.
    pub error: f64,
    pub oscillation_bound: f64,
    /// `|τ_n(f) − τ_n(f∘ψ)|`.
    pub invariance_gap: f64,
    /// `a_{n−1}/b_{n−1}`.
    pub ratio: f64,
    /// `ω(ε_{n−1})` of the test function.
    pub slack: f64,
    pub pass: bool,
}

/// Checks `|τ_n(f) − ∫f| < a_{n−1}/b_{n−1} + ω(ε_{n−1})` and the same bound
/// for the ψ-invariance gap at stages `2..=T+1`.
pub fn trace_claims(model: &StageModel, map: &MinimalMap, f: &MatrixFunction, integral: C64, eps: &[f64], basepoint: &TorusPoint) -> Result<Vec<TraceRow>> {
    check_dim(model.stages(), eps.len())?;
    let fpsi = f.compose(map)?;
    let m = f.block_size() as f64;
    (2..=model.stages() + 1)
        .map(|n| {
            let (value, osc) = stage_trace(f, model, 1, n, basepoint)?;
            let (shifted, _) = stage_trace(&fpsi, model, 1, n, basepoint)?;
            let ratio = model.ratio(n - 1);
            let slack = m * m * f.max_entry_modulus(eps[n - 2]);
            let error = (value - integral).norm();
            let invariance_gap = (value - shifted).norm();
            let bound = ratio + slack;
            Ok(TraceRow {
                stage: n,
                value_re: value.re,
                value_im: value.im,
                error,
                oscillation_bound: osc,
                invariance_gap,
                ratio,
                slack,
                pass: error < bound && invariance_gap < bound,
            })
        })
        .collect()
}

/// Uniform basepoints drawn from a seeded ChaCha stream.
pub fn seeded_basepoints(dim: usize, count: usize, seed: u64) -> Vec<TorusPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| TorusPoint::new((0..dim).map(|_| rng.random::<f64>()).collect()).expect("coordinates in [0, 1)"))
        .collect()
}

/// Parameters of a multi-stage run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub map: MinimalMap,
    pub k1: usize,
    pub a: Vec<usize>,
    pub eps: Vec<f64>,
    pub testset: Vec<TestFunction>,
    pub basepoints: usize,
    pub seed: u64,
}

impl RunParams {
    pub fn golden_default() -> Self {
        Self {
            map: MinimalMap::golden_rotation(),
            k1: 1,
            a: vec![1; DEFAULT_STAGES],
            eps: default_epsilons(DEFAULT_STAGES),
            testset: TestFunction::standard_set(),
            basepoints: 4,
            seed: 0,
        }
    }

    pub fn test_matrices(&self) -> Result<Vec<MatrixFunction>> {
        self.testset.iter().map(|t| t.to_matrix(self.map.dim(), self.k1)).collect()
    }
}

/// Everything needed to replay a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub params: RunParams,
    pub model: StageModel,
    pub basepoints: Vec<TorusPoint>,
    pub run: IntertwinerRun,
}

/// Samples the stages and builds the intertwiners.
pub fn run_intertwining(params: &RunParams) -> Result<RunManifest> {
    if params.eps.iter().any(|e| !(*e > 0.0)) {
        return Err(invalid("eps", "every ε_n must be positive"));
    }
    let tests = params.test_matrices()?;
    let model = sample_stages(&params.map, params.k1, &params.a, &tests, &params.eps)?;
    run_on_model(params, model)
}

fn run_on_model(params: &RunParams, model: StageModel) -> Result<RunManifest> {
    let tests = params.test_matrices()?;
    let basepoints = seeded_basepoints(params.map.dim(), params.basepoints.max(1), params.seed);
    let run = build_intertwiners(&model, &params.map, &tests, &params.eps, &basepoints)?;
    Ok(RunManifest { schema: MANIFEST_SCHEMA, params: params.clone(), model, basepoints, run })
}

/// Re-runs the recorded model with the recorded parameters.
pub fn replay(manifest: &RunManifest) -> Result<RunManifest> {
    if manifest.schema != MANIFEST_SCHEMA {
        return Err(invalid("schema", format!("unsupported manifest schema {}", manifest.schema)));
    }
    run_on_model(&manifest.params, manifest.model.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{circle_grid, golden_theta};
    use nalgebra::DMatrix;

    fn z(p: i64) -> MatrixFunction {
        MatrixFunction::scalar(TrigPoly::coordinate(1, 0, p).unwrap())
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn maxdiff(a: &crate::matalg::CMatrix) -> f64 {
        a.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn tiny_model() -> StageModel {
        StageModel::new(1, vec![1], vec![3], vec![vec![TorusPoint::circle(0.0), TorusPoint::circle(0.5)]]).unwrap()
    }

    #[test]
    fn connecting_map_example() {
        let model = tiny_model();
        let phi = connecting_map(&z(1), &model, 1).unwrap();
        assert_eq!(phi.block_size(), 3);
        for x in [0.0, 0.3, 0.71] {
            let v = phi.eval(&TorusPoint::circle(x)).unwrap();
            let want = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![C64::from_polar(1.0, std::f64::consts::TAU * x), c(1.0, 0.0), c(-1.0, 0.0)]));
            assert!(maxdiff(&(v - want)) < 1e-12);
        }
        let id = connecting_map(&MatrixFunction::identity(1, 1), &model, 1).unwrap();
        assert_eq!(id, MatrixFunction::identity(1, 3));
        assert!(connecting_map(&MatrixFunction::identity(1, 2), &model, 1).is_err());
    }

    #[test]
    fn leaves_agree_with_literal_connecting_maps() {
        let model = StageModel::new(
            1,
            vec![2, 1],
            vec![3, 3],
            vec![vec![TorusPoint::circle(0.1)], vec![TorusPoint::circle(0.4), TorusPoint::circle(0.8)]],
        )
        .unwrap();
        let f = z(1).add(&z(-2).scale(c(0.5, 0.25))).unwrap();
        let literal = connecting_map(&connecting_map(&f, &model, 1).unwrap(), &model, 2).unwrap();
        for y in [0.0, 0.37, 0.9] {
            let p = TorusPoint::circle(y);
            let a = literal.eval(&p).unwrap();
            let b = model.eval_image(&f, 1, 3, &p).unwrap().to_dense();
            assert!(maxdiff(&(a - b)) < 1e-12);
        }
    }

    #[test]
    fn stage_automorphism_examples() {
        let f = z(1);
        let same = stage_automorphism(&f, &MinimalMap::rotation(0.0), None).unwrap();
        for x in [0.1, 0.6] {
            let p = TorusPoint::circle(x);
            assert!(maxdiff(&(same.eval(&p).unwrap() - f.eval(&p).unwrap())) < 1e-15);
        }
        let rot = stage_automorphism(&f, &MinimalMap::rotation(0.3), None).unwrap();
        for x in [0.1, 0.6] {
            let want = C64::from_polar(1.0, std::f64::consts::TAU * (x + 0.3));
            assert!((rot.eval(&TorusPoint::circle(x)).unwrap()[(0, 0)] - want).norm() < 1e-12);
        }
        let d = DMatrix::from_fn(3, 3, |i, j| c((i * 3 + j) as f64, 0.0));
        let cf = MatrixFunction::constant(1, &d).unwrap();
        let perm = Permutation::new(vec![2, 0, 1]).unwrap();
        let v = IntertwinerMatrix::Permutation { perm: perm.clone(), m: 1 };
        let got = stage_automorphism(&cf, &MinimalMap::golden_rotation(), Some(&v)).unwrap().eval(&TorusPoint::circle(0.2)).unwrap();
        let w = v.to_dense();
        assert!(maxdiff(&(got - &w * d.clone() * w.adjoint())) < 1e-12);
        let dense = stage_automorphism(&cf, &MinimalMap::golden_rotation(), Some(&IntertwinerMatrix::Dense(w.clone()))).unwrap();
        assert!(maxdiff(&(dense.eval(&TorusPoint::circle(0.2)).unwrap() - &w * d * w.adjoint())) < 1e-12);
    }

    #[test]
    fn exact_grid_has_zero_defects() {
        let map = MinimalMap::rotation(0.2);
        let pts = circle_grid(5);
        let model = StageModel::new(1, vec![1, 1, 1], vec![6, 6, 6], vec![pts.clone(), pts.clone(), pts]).unwrap();
        let tests = vec![z(1), z(2)];
        let run = build_intertwiners(&model, &map, &tests, &[0.5, 0.25, 0.125], &seeded_basepoints(1, 3, 7)).unwrap();
        for s in &run.stages {
            assert!(s.defect < 1e-12, "{s:?}");
            assert!(s.pass);
        }
        assert!(run.telescoped < 1e-12);
        assert_eq!(run.v(4).len(), 216);
    }

    #[test]
    fn constant_tests_have_zero_defect() {
        let map = MinimalMap::golden_rotation();
        let model = StageModel::new(1, vec![1], vec![6], vec![circle_grid(5)]).unwrap();
        let tests = vec![MatrixFunction::identity(1, 1).scale(c(2.0, -1.0))];
        let run = build_intertwiners(&model, &map, &tests, &[0.5], &seeded_basepoints(1, 2, 1)).unwrap();
        assert_eq!(run.stages[0].defect, 0.0);
        assert_eq!(run.telescoped, 0.0);
    }

    #[test]
    fn no_matching_is_reported() {
        let map = MinimalMap::golden_rotation();
        let model = StageModel::new(1, vec![1], vec![6], vec![circle_grid(5)]).unwrap();
        let err = build_intertwiners(&model, &map, &[z(1)], &[0.01], &seeded_basepoints(1, 1, 1)).unwrap_err();
        assert!(matches!(err, Error::NoMatching { stage: 1, .. }), "{err:?}");
    }

    #[test]
    fn matching_aware_sizes() {
        let map = MinimalMap::golden_rotation();
        let tests: Vec<MatrixFunction> = TestFunction::standard_set().iter().map(|t| t.to_matrix(1, 1).unwrap()).collect();
        let model = sample_stages(&map, 1, &[1, 1, 1, 1], &tests, &default_epsilons(4)).unwrap();
        let sizes: Vec<usize> = (1..=4).map(|n| model.l(n)).collect();
        assert_eq!(sizes, vec![8, 16, 32, 96]);
        assert_eq!(model.k(5), 9 * 17 * 33 * 97);
        assert!(model.ratios_nonincreasing());
    }

    #[test]
    fn trace_recursion_and_basepoint_bound() {
        let model = StageModel::new(
            1,
            vec![2, 1],
            vec![5, 4],
            vec![circle_grid(3), vec![TorusPoint::circle(0.05), TorusPoint::circle(0.3), TorusPoint::circle(0.77)]],
        )
        .unwrap();
        let f = z(1).add(&z(3).scale(c(0.2, 0.7))).unwrap();
        let tau1 = |x: &TorusPoint| f.eval(x).unwrap()[(0, 0)];
        for y in [0.0, 0.33, 0.8] {
            let p = TorusPoint::circle(y);
            // τ_{n+1}(y) = (a_n/b_n) τ_n(y) + (1/b_n) Σ_j τ_n(x_j)
            let tau2 = |x: &TorusPoint| (2.0 * tau1(x) + model.points(1).iter().map(tau1).sum::<C64>()) / 5.0;
            let want = (tau2(&p) + model.points(2).iter().map(tau2).sum::<C64>()) / 4.0;
            let (got, osc) = stage_trace(&f, &model, 1, 3, &p).unwrap();
            assert!((got - want).norm() < 1e-12);
            assert!((osc - 0.4 * 0.25 * f.trace_oscillation_bound()).abs() < 1e-15);
            let (other, _) = stage_trace(&f, &model, 1, 3, &TorusPoint::circle(0.5)).unwrap();
            assert!((got - other).norm() <= osc + 1e-12);
        }
        let (v, o) = stage_trace(&MatrixFunction::identity(1, 1).scale(c(3.0, 1.0)), &model, 1, 3, &TorusPoint::circle(0.2)).unwrap();
        assert!((v - c(3.0, 1.0)).norm() < 1e-12);
        assert_eq!(o, 0.0);
    }

    #[test]
    fn golden_trace_of_z_is_small() {
        let params = RunParams::golden_default();
        let tests = params.test_matrices().unwrap();
        let model = sample_stages(&params.map, 1, &params.a, &tests, &params.eps).unwrap();
        let (v, osc) = stage_trace(&z(1), &model, 1, 4, &TorusPoint::circle(golden_theta())).unwrap();
        assert!(v.norm() < 0.05 && osc < 0.05, "{v} {osc}");
    }

    #[test]
    fn stage_model_validation() {
        assert!(StageModel::new(0, vec![], vec![], vec![]).is_err());
        assert!(StageModel::new(1, vec![2], vec![2], vec![vec![]]).is_err());
        assert!(StageModel::new(1, vec![1], vec![3], vec![vec![TorusPoint::circle(0.0)]]).is_err());
        let m = tiny_model();
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<StageModel>(&json).unwrap(), m);
        assert!(serde_json::from_str::<StageModel>(r#"{"k1":1,"a":[1],"b":[1],"points":[[]]}"#).is_err());
    }

    #[test]
    fn automorphism_on_masks() {
        let alpha = StageAutomorphism::new(MinimalMap::golden_rotation(), Some(Permutation::new(vec![1, 2, 0]).unwrap()), 1);
        assert_eq!(alpha.apply_to_mask(&[true, false, false], 1).unwrap(), vec![false, false, true]);
        assert!(alpha.apply_to_mask(&[true, false], 1).is_err());
        let none = StageAutomorphism::new(MinimalMap::golden_rotation(), None, 1);
        assert_eq!(none.apply_to_mask(&[true, false], 3).unwrap(), vec![true, false]);
    }
}
