//! Exact integer bookkeeping for maps on `K_1`.
//!
//! A standard map between wedges of circles sends source circle `i` around
//! target circle `j` exactly `c[j][i]` times, so column `i` of its matrix is
//! the winding vector of the image of circle `i`. Composition is the matrix
//! product, and a numerical winding counter recovers the matrix from
//! pointwise evaluation. All integer arithmetic is checked `i64`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dynamics::{circle_delta, circle_dist, MinimalMap, TorusPoint};
use crate::error::{check_dim, invalid, Error, Result};

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<i64>>", into = "Vec<Vec<i64>>")]
pub struct IntMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i64>,
}

impl IntMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Self::scalar(n, 1)
    }

    pub fn scalar(n: usize, c: i64) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = c;
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<i64>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            check_dim(c, row.len())?;
            data.extend(row);
        }
        Ok(Self { rows: r, cols: c, data })
    }

    pub fn from_columns(cols: &[Vec<i64>]) -> Result<Self> {
        let c = cols.len();
        let r = cols.first().map_or(0, Vec::len);
        let mut m = Self::zeros(r, c);
        for (j, col) in cols.iter().enumerate() {
            check_dim(r, col.len())?;
            for (i, v) in col.iter().enumerate() {
                m.data[i * c + j] = *v;
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> i64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: i64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[i64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<i64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<i64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        check_dim(self.cols, other.rows)?;
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = 0i64;
                for k in 0..self.cols {
                    let t = self.get(i, k).checked_mul(other.get(k, j)).ok_or(Error::Overflow)?;
                    acc = acc.checked_add(t).ok_or(Error::Overflow)?;
                }
                out.data[i * other.cols + j] = acc;
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[i64]) -> Result<Vec<i64>> {
        check_dim(self.cols, v.len())?;
        (0..self.rows)
            .map(|i| {
                self.row(i).iter().zip(v).try_fold(0i64, |acc, (a, b)| {
                    a.checked_mul(*b).and_then(|t| acc.checked_add(t)).ok_or(Error::Overflow)
                })
            })
            .collect()
    }

    /// Determinant by fraction-free (Bareiss) elimination.
    pub fn determinant(&self) -> Result<i64> {
        if !self.is_square() {
            return Err(Error::DimensionMismatch { expected: self.rows, found: self.cols });
        }
        let n = self.rows;
        if n == 0 {
            return Ok(1);
        }
        let mut a: Vec<Vec<i128>> = self.to_rows().into_iter().map(|r| r.into_iter().map(i128::from).collect()).collect();
        let mut sign = 1i128;
        let mut prev = 1i128;
        for k in 0..n - 1 {
            if a[k][k] == 0 {
                match (k + 1..n).find(|&r| a[r][k] != 0) {
                    Some(r) => {
                        a.swap(k, r);
                        sign = -sign;
                    }
                    None => return Ok(0),
                }
            }
            for i in k + 1..n {
                for j in k + 1..n {
                    let num = a[i][j]
                        .checked_mul(a[k][k])
                        .and_then(|x| a[i][k].checked_mul(a[k][j]).and_then(|y| x.checked_sub(y)))
                        .ok_or(Error::Overflow)?;
                    a[i][j] = num / prev;
                }
            }
            prev = a[k][k];
        }
        i64::try_from(sign * a[n - 1][n - 1]).map_err(|_| Error::Overflow)
    }
}

impl fmt::Debug for IntMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.to_rows())
    }
}

impl TryFrom<Vec<Vec<i64>>> for IntMatrix {
    type Error = Error;
    fn try_from(v: Vec<Vec<i64>>) -> Result<Self> {
        IntMatrix::from_rows(v)
    }
}

impl From<IntMatrix> for Vec<Vec<i64>> {
    fn from(m: IntMatrix) -> Self {
        m.to_rows()
    }
}

/// A point of a wedge of circles: circle index and angle in turns. Angle
/// 0 is the common basepoint, whatever the index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WedgePoint {
    pub circle: usize,
    pub angle: f64,
}

impl WedgePoint {
    pub const BASE: WedgePoint = WedgePoint { circle: 0, angle: 0.0 };

    pub fn new(circle: usize, angle: f64) -> Self {
        Self { circle, angle: crate::dynamics::wrap(angle) }
    }

    pub fn is_base(&self) -> bool {
        circle_dist(self.angle, 0.0) < BASE_TOL
    }
}

const BASE_TOL: f64 = 1e-12;
/// Largest admissible angle change between consecutive samples.
pub const ALIAS_STEP: f64 = 0.25;
pub const CLOSED_TOL: f64 = 1e-9;
pub const RESIDUE_TOL: f64 = 0.1;
pub const MIN_SAMPLES: usize = 16;

/// The standard map of an integer matrix with `rows` target circles and
/// `cols` source circles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StandardMap {
    matrix: IntMatrix,
}

pub fn standard_map(kappa: IntMatrix) -> StandardMap {
    StandardMap { matrix: kappa }
}

impl StandardMap {
    pub fn matrix(&self) -> &IntMatrix {
        &self.matrix
    }

    pub fn sources(&self) -> usize {
        self.matrix.cols
    }

    pub fn targets(&self) -> usize {
        self.matrix.rows
    }

    /// Image of angle `t` on source circle `i`. The circle is cut into one
    /// segment per nonzero entry of column `i`, in row order, and the
    /// segment for row `j` winds `c[j][i]` times around target circle `j`.
    /// A column with one nonzero entry `c` gives `z ↦ z^c`; a zero column
    /// gives the constant map to the basepoint.
    pub fn eval(&self, p: WedgePoint) -> Result<WedgePoint> {
        if p.circle >= self.sources() {
            return Err(invalid("circle", format!("source circle {} out of range 0..{}", p.circle, self.sources())));
        }
        let nonzero: Vec<(usize, i64)> =
            (0..self.targets()).map(|j| (j, self.matrix.get(j, p.circle))).filter(|(_, c)| *c != 0).collect();
        if nonzero.is_empty() || p.is_base() {
            return Ok(WedgePoint::BASE);
        }
        let r = nonzero.len();
        let s = p.angle * r as f64;
        let seg = (s.floor() as usize).min(r - 1);
        let (j, c) = nonzero[seg];
        Ok(WedgePoint::new(j, c as f64 * (s - seg as f64)))
    }
}

/// `s2 ∘ s1`, whose matrix is the product `C2 · C1`.
pub fn compose_standard(s2: &StandardMap, s1: &StandardMap) -> Result<StandardMap> {
    check_dim(s2.sources(), s1.targets())?;
    Ok(StandardMap { matrix: s2.matrix.mul(&s1.matrix)? })
}

struct Tracker {
    totals: Vec<f64>,
}

impl Tracker {
    fn step(&mut self, circle: usize, delta: f64) -> Result<()> {
        if delta.abs() > ALIAS_STEP {
            return Err(Error::Aliasing { step: delta.abs() });
        }
        self.totals[circle] += delta;
        Ok(())
    }

    fn finish(self) -> Result<Vec<i64>> {
        self.totals
            .into_iter()
            .map(|w| {
                let k = w.round();
                let residue = (w - k).abs();
                if residue > RESIDUE_TOL {
                    Err(Error::WindingResidue { residue })
                } else {
                    Ok(k as i64)
                }
            })
            .collect()
    }
}

/// Winding numbers of a closed loop in a wedge of `circles` circles,
/// sampled at `t = i/samples`, `i = 0..=samples`.
pub fn winding_vector(path: impl Fn(f64) -> WedgePoint, circles: usize, samples: usize) -> Result<Vec<i64>> {
    if samples < MIN_SAMPLES {
        return Err(invalid("samples", format!("need at least {MIN_SAMPLES} samples")));
    }
    let pts: Vec<WedgePoint> = (0..=samples).map(|i| path(i as f64 / samples as f64)).collect();
    if pts.iter().any(|p| p.circle >= circles && !p.is_base()) {
        return Err(invalid("loop", "point on a circle outside the wedge"));
    }
    let (first, last) = (pts[0], pts[samples]);
    let gap = if first.is_base() && last.is_base() {
        0.0
    } else if first.circle == last.circle {
        circle_dist(first.angle, last.angle)
    } else {
        circle_dist(first.angle, 0.0) + circle_dist(last.angle, 0.0)
    };
    if gap > CLOSED_TOL {
        return Err(Error::NotClosed { gap });
    }
    let mut tracker = Tracker { totals: vec![0.0; circles] };
    for w in pts.windows(2) {
        let (p, q) = (w[0], w[1]);
        match (p.is_base(), q.is_base()) {
            (true, true) => {}
            (true, false) => tracker.step(q.circle, circle_delta(q.angle, 0.0))?,
            (false, true) => tracker.step(p.circle, circle_delta(0.0, p.angle))?,
            (false, false) if p.circle == q.circle => tracker.step(p.circle, circle_delta(q.angle, p.angle))?,
            (false, false) => {
                let out = circle_delta(0.0, p.angle);
                let into = circle_delta(q.angle, 0.0);
                if out.abs() + into.abs() > ALIAS_STEP {
                    return Err(Error::Aliasing { step: out.abs() + into.abs() });
                }
                tracker.step(p.circle, out)?;
                tracker.step(q.circle, into)?;
            }
        }
    }
    tracker.finish()
}

/// Per-coordinate winding numbers of a closed loop in `T^k`.
pub fn torus_winding(path: impl Fn(f64) -> TorusPoint, samples: usize) -> Result<Vec<i64>> {
    if samples < MIN_SAMPLES {
        return Err(invalid("samples", format!("need at least {MIN_SAMPLES} samples")));
    }
    let pts: Vec<TorusPoint> = (0..=samples).map(|i| path(i as f64 / samples as f64)).collect();
    let k = pts[0].dim();
    for p in &pts {
        check_dim(k, p.dim())?;
    }
    let gap = crate::dynamics::dist(&pts[0], &pts[samples])?;
    if gap > CLOSED_TOL {
        return Err(Error::NotClosed { gap });
    }
    let mut tracker = Tracker { totals: vec![0.0; k] };
    for w in pts.windows(2) {
        for c in 0..k {
            tracker.step(c, circle_delta(w[1].coord(c), w[0].coord(c)))?;
        }
    }
    tracker.finish()
}

/// Matrix of a standard map recovered by the winding counter, one column
/// per source circle.
pub fn winding_matrix(s: &StandardMap, samples: usize) -> Result<IntMatrix> {
    let cols = (0..s.sources())
        .map(|i| winding_vector(|t| s.eval(WedgePoint::new(i, t)).expect("source index in range"), s.targets(), samples))
        .collect::<Result<Vec<_>>>()?;
    if cols.is_empty() {
        return Ok(IntMatrix::zeros(s.targets(), 0));
    }
    IntMatrix::from_columns(&cols)
}

/// Induced map of a torus homeomorphism on the coordinate loops: column
/// `i` is the winding vector of `ψ(t·e_i)`.
pub fn k1_by_winding(map: &MinimalMap, samples: usize) -> Result<IntMatrix> {
    let k = map.dim();
    let cols = (0..k)
        .map(|i| {
            torus_winding(
                |t| {
                    let mut c = vec![0.0; k];
                    c[i] = t;
                    map.apply_unchecked(&TorusPoint::new(c).expect("finite"))
                },
                samples,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    IntMatrix::from_columns(&cols)
}

/// Unipotent lower-triangular matrix with sub-diagonal `d`: the map on the
/// coordinate-loop part of `K_1(C(T^k))` induced by the Furstenberg map
/// with exponents `d`.
pub fn furstenberg_k1(d: &[i64], k: usize) -> Result<IntMatrix> {
    if k == 0 {
        return Err(invalid("k", "dimension must be at least 1"));
    }
    check_dim(k - 1, d.len())?;
    let mut m = IntMatrix::identity(k);
    for (j, dj) in d.iter().enumerate() {
        m.set(j + 1, j, *dj);
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SquareFailure {
    /// Chain index `n` (0-based).
    pub index: usize,
    /// Which identity failed: 1 for `h_{n+1}κ_n = κ_{n+1}h_n`, 2 for
    /// `h̄_{n+1}h_n = κ_{n+1}κ_n`, 3 for `h_{n+1}h̄_n = κ_{n+1}κ_n`.
    pub identity: u8,
    pub lhs: IntMatrix,
    pub rhs: IntMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SquaresReport {
    pub squares_checked: usize,
    pub pass: bool,
    pub first_failure: Option<SquareFailure>,
}

/// Exact checks of the three commuting identities along the chain.
pub fn check_intertwining_squares(h: &[IntMatrix], hbar: &[IntMatrix], kappa: &[IntMatrix]) -> Result<SquaresReport> {
    check_dim(kappa.len(), h.len())?;
    check_dim(kappa.len(), hbar.len())?;
    let mut checked = 0;
    for n in 0..kappa.len().saturating_sub(1) {
        let kk = kappa[n + 1].mul(&kappa[n])?;
        let identities = [
            (1u8, h[n + 1].mul(&kappa[n])?, kappa[n + 1].mul(&h[n])?),
            (2u8, hbar[n + 1].mul(&h[n])?, kk.clone()),
            (3u8, h[n + 1].mul(&hbar[n])?, kk),
        ];
        for (identity, lhs, rhs) in identities {
            checked += 1;
            if lhs != rhs {
                return Ok(SquaresReport {
                    squares_checked: checked,
                    pass: false,
                    first_failure: Some(SquareFailure { index: n, identity, lhs, rhs }),
                });
            }
        }
    }
    Ok(SquaresReport { squares_checked: checked, pass: true, first_failure: None })
}

/// Stage groups `Z ⊕ Z^{r00}` (for `K_0`) and `Z^{r1}` (for `K_1`) with
/// connecting maps `b_n ⊕ a_n` and `a_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitGroupModel {
    pub rank00: usize,
    pub rank1: usize,
    pub a: Vec<i64>,
    pub b: Vec<i64>,
}

impl LimitGroupModel {
    pub fn new(rank00: usize, rank1: usize, a: Vec<i64>, b: Vec<i64>) -> Result<Self> {
        check_dim(a.len(), b.len())?;
        for (n, (an, bn)) in a.iter().zip(&b).enumerate() {
            if *bn < 2 {
                return Err(invalid("b", format!("b_{} = {bn} must be at least 2", n + 1)));
            }
            if *an < 1 || bn - an < 1 {
                return Err(invalid("a", format!("need 1 <= a_{0} < b_{0}, got a = {an}, b = {bn}", n + 1)));
            }
        }
        Ok(Self { rank00, rank1, a, b })
    }

    /// `k_n` with `k_1 = 1`, `n` 1-based.
    pub fn k(&self, n: usize) -> Result<i64> {
        self.b[..n.saturating_sub(1).min(self.b.len())].iter().try_fold(1i64, |acc, b| acc.checked_mul(*b).ok_or(Error::Overflow))
    }

    pub fn stages(&self) -> usize {
        self.a.len()
    }

    pub fn kappa0(&self, n: usize) -> IntMatrix {
        let mut m = IntMatrix::scalar(1 + self.rank00, self.a[n]);
        m.set(0, 0, self.b[n]);
        m
    }

    pub fn kappa1(&self, n: usize) -> IntMatrix {
        IntMatrix::scalar(self.rank1, self.a[n])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageInducedMap {
    pub stage: usize,
    pub gamma0: IntMatrix,
    pub gamma1: IntMatrix,
    pub commutes0: bool,
    pub commutes1: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InducedLimitMap {
    pub stages: Vec<StageInducedMap>,
    pub is_identity: bool,
    pub all_commute: bool,
}

/// Stage matrices of `I(γ₀) ⊕ I(γ₁)` and their commutation with the
/// connecting maps.
pub fn induced_limit_map(gamma0: &IntMatrix, gamma1: &IntMatrix, model: &LimitGroupModel) -> Result<InducedLimitMap> {
    check_dim(1 + model.rank00, gamma0.rows())?;
    check_dim(1 + model.rank00, gamma0.cols())?;
    check_dim(model.rank1, gamma1.rows())?;
    check_dim(model.rank1, gamma1.cols())?;
    let n0 = gamma0.rows();
    let fixes = gamma0.get(0, 0) == 1 && (1..n0).all(|j| gamma0.get(0, j) == 0 && gamma0.get(j, 0) == 0);
    if !fixes {
        return Err(Error::MovesDimensionSummand(format!("first row {:?}, first column {:?}", gamma0.row(0), gamma0.column(0))));
    }
    if gamma0.determinant()? == 0 || gamma1.determinant()? == 0 {
        return Err(Error::Singular);
    }
    let mut stages = Vec::with_capacity(model.stages());
    for n in 0..model.stages() {
        let (k0, k1) = (model.kappa0(n), model.kappa1(n));
        let commutes0 = gamma0.mul(&k0)? == k0.mul(gamma0)?;
        let commutes1 = gamma1.mul(&k1)? == k1.mul(gamma1)?;
        stages.push(StageInducedMap { stage: n + 1, gamma0: gamma0.clone(), gamma1: gamma1.clone(), commutes0, commutes1 });
    }
    let is_identity = *gamma0 == IntMatrix::identity(n0) && *gamma1 == IntMatrix::identity(gamma1.rows());
    let all_commute = stages.iter().all(|s| s.commutes0 && s.commutes1);
    Ok(InducedLimitMap { stages, is_identity, all_commute })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{golden_theta, Phase, PhaseTerm};
    use proptest::prelude::*;

    fn m(rows: &[&[i64]]) -> IntMatrix {
        IntMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    fn power_loop(k: i64) -> impl Fn(f64) -> WedgePoint {
        move |t| WedgePoint::new(0, k as f64 * t)
    }

    #[test]
    fn winding_examples() {
        assert_eq!(winding_vector(|_| WedgePoint::BASE, 1, 64).unwrap(), vec![0]);
        assert_eq!(winding_vector(power_loop(1), 1, 64).unwrap(), vec![1]);
        for k in -5..=5 {
            assert_eq!(winding_vector(power_loop(k), 1, 1024).unwrap(), vec![k]);
        }
    }

    #[test]
    fn winding_errors() {
        assert!(matches!(winding_vector(power_loop(20), 1, 32), Err(Error::Aliasing { .. })));
        assert!(matches!(winding_vector(|t| WedgePoint::new(0, 0.5 * t), 1, 64), Err(Error::NotClosed { .. })));
        assert!(winding_vector(power_loop(1), 1, 8).is_err());
    }

    #[test]
    fn standard_map_examples() {
        let id = standard_map(IntMatrix::identity(3));
        for i in 0..3 {
            for t in [0.1, 0.5, 0.77] {
                let p = WedgePoint::new(i, t);
                let q = id.eval(p).unwrap();
                assert_eq!(q.circle, i);
                assert!((q.angle - t).abs() < 1e-12);
            }
        }
        let zero = standard_map(m(&[&[0]]));
        assert!(zero.eval(WedgePoint::new(0, 0.3)).unwrap().is_base());
        let s = standard_map(m(&[&[1, 1], &[0, 1]]));
        assert_eq!(winding_matrix(&s, 256).unwrap(), *s.matrix());
    }

    #[test]
    fn composition_examples() {
        let two = standard_map(m(&[&[2]]));
        assert_eq!(compose_standard(&two, &two).unwrap().matrix(), &m(&[&[4]]));
        let s = standard_map(m(&[&[1, 1], &[0, 1]]));
        let id = standard_map(IntMatrix::identity(2));
        assert_eq!(compose_standard(&id, &s).unwrap(), s);
        let t = standard_map(m(&[&[1, 0], &[1, 1]]));
        let st = compose_standard(&s, &t).unwrap();
        assert_eq!(st.matrix(), &m(&[&[2, 1], &[1, 1]]));
        // winding of the pointwise composite
        let cols = (0..2)
            .map(|i| winding_vector(|x| s.eval(t.eval(WedgePoint::new(i, x)).unwrap()).unwrap(), 2, 1024).unwrap())
            .collect::<Vec<_>>();
        assert_eq!(IntMatrix::from_columns(&cols).unwrap(), *st.matrix());
        assert!(compose_standard(&two, &s).is_err());
    }

    #[test]
    fn squares_examples() {
        let i2 = IntMatrix::identity(2);
        let ids = vec![i2.clone(); 3];
        assert!(check_intertwining_squares(&ids, &ids, &ids).unwrap().pass);
        let kappa = vec![m(&[&[1, 1], &[0, 1]]), m(&[&[2, 0], &[1, 1]]), m(&[&[1, 0], &[3, 1]])];
        assert!(check_intertwining_squares(&kappa, &kappa, &kappa).unwrap().pass);
        let two = vec![IntMatrix::scalar(2, 2); 3];
        let rep = check_intertwining_squares(&ids, &ids, &two).unwrap();
        assert!(!rep.pass);
        let fail = rep.first_failure.unwrap();
        assert_eq!((fail.index, fail.identity), (0, 2));
        assert_eq!(fail.lhs, i2);
        assert_eq!(fail.rhs, IntMatrix::scalar(2, 4));
        assert!(check_intertwining_squares(&ids, &ids, &[i2.clone(), IntMatrix::identity(3)]).is_err());
    }

    #[test]
    fn furstenberg_matrices() {
        assert_eq!(furstenberg_k1(&[], 1).unwrap(), m(&[&[1]]));
        assert_eq!(furstenberg_k1(&[1], 2).unwrap(), m(&[&[1, 0], &[1, 1]]));
        assert_eq!(furstenberg_k1(&[2, 3], 3).unwrap(), m(&[&[1, 0, 0], &[2, 1, 0], &[0, 3, 1]]));
        assert!(furstenberg_k1(&[1], 3).is_err());
        let phase = Phase { terms: vec![PhaseTerm { freq: 2, cos: 0.1, sin: 0.05 }] };
        let f = MinimalMap::furstenberg(golden_theta(), vec![2, 3], vec![phase, Phase::zero()]).unwrap();
        assert_eq!(k1_by_winding(&f, 1024).unwrap(), furstenberg_k1(&[2, 3], 3).unwrap());
        let f2 = MinimalMap::furstenberg(golden_theta(), vec![1], vec![]).unwrap();
        assert_eq!(k1_by_winding(&f2, 1024).unwrap(), furstenberg_k1(&[1], 2).unwrap());
        assert_eq!(k1_by_winding(&MinimalMap::golden_rotation(), 64).unwrap(), m(&[&[1]]));
    }

    #[test]
    fn induced_maps() {
        let model = LimitGroupModel::new(1, 2, vec![1, 2, 3], vec![3, 5, 7]).unwrap();
        assert_eq!(model.k(1).unwrap(), 1);
        assert_eq!(model.k(3).unwrap(), 15);
        let id = induced_limit_map(&IntMatrix::identity(2), &IntMatrix::identity(2), &model).unwrap();
        assert!(id.is_identity && id.all_commute);
        let g1 = m(&[&[1, 1], &[0, 1]]);
        let g0 = m(&[&[1, 0], &[0, -1]]);
        let ind = induced_limit_map(&g0, &g1, &model).unwrap();
        assert!(!ind.is_identity && ind.all_commute);
        assert_eq!(ind.stages.len(), 3);
        let bad = m(&[&[2, 0], &[0, 1]]);
        assert!(matches!(induced_limit_map(&bad, &g1, &model), Err(Error::MovesDimensionSummand(_))));
        assert_eq!(induced_limit_map(&IntMatrix::identity(2), &m(&[&[1, 1], &[1, 1]]), &model), Err(Error::Singular));
        assert!(LimitGroupModel::new(1, 1, vec![2], vec![2]).is_err());
        assert!(LimitGroupModel::new(1, 1, vec![1], vec![1]).is_err());
    }

    #[test]
    fn determinants() {
        assert_eq!(m(&[&[2, 1], &[1, 1]]).determinant().unwrap(), 1);
        assert_eq!(m(&[&[0, 1, 2], &[1, 0, 3], &[4, -3, 8]]).determinant().unwrap(), -2);
        assert_eq!(m(&[&[1, 2], &[2, 4]]).determinant().unwrap(), 0);
        assert_eq!(IntMatrix::identity(0).determinant().unwrap(), 1);
    }

    #[test]
    fn overflow_is_reported() {
        let big = IntMatrix::scalar(1, i64::MAX);
        assert_eq!(big.mul(&IntMatrix::scalar(1, 2)), Err(Error::Overflow));
    }

    #[test]
    fn json_arrays() {
        let a = m(&[&[1, -2], &[3, 4]]);
        assert_eq!(serde_json::to_string(&a).unwrap(), "[[1,-2],[3,4]]");
        assert_eq!(serde_json::from_str::<IntMatrix>("[[1,-2],[3,4]]").unwrap(), a);
        assert!(serde_json::from_str::<IntMatrix>("[[1],[3,4]]").is_err());
    }

    fn small_matrix(r: usize, c: usize) -> impl Strategy<Value = IntMatrix> {
        proptest::collection::vec(-3i64..=3, r * c).prop_map(move |v| IntMatrix { rows: r, cols: c, data: v })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn composite_winding_equals_product((a, b) in (1usize..4, 1usize..4, 1usize..4).prop_flat_map(|(p, q, r)| (small_matrix(p, q), small_matrix(q, r)))) {
            let (s2, s1) = (standard_map(a.clone()), standard_map(b.clone()));
            let comp = compose_standard(&s2, &s1).unwrap();
            prop_assert_eq!(comp.matrix(), &a.mul(&b).unwrap());
            for i in 0..s1.sources() {
                let col = winding_vector(|t| s2.eval(s1.eval(WedgePoint::new(i, t)).unwrap()).unwrap(), s2.targets(), 4096).unwrap();
                prop_assert_eq!(col, comp.matrix().column(i));
            }
        }

        #[test]
        fn winding_is_refinement_invariant(a in small_matrix(2, 2)) {
            let s = standard_map(a);
            prop_assert_eq!(winding_matrix(&s, 64).unwrap(), winding_matrix(&s, 4096).unwrap());
        }
    }
}
