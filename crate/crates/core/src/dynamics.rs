//! The torus `T^k` with coordinates in full turns, its max-coordinate circle
//! metric, and the minimal maps we iterate on it: irrational rotations of the
//! circle and Furstenberg skew products.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::fmt;

use crate::error::{check_dim, invalid, Error, Result};

/// Values this close below 1 are clamped to 0 after a mod-1 reduction.
pub const WRAP_CLAMP: f64 = 1e-15;

/// Reduce into `[0, 1)`.
pub fn wrap(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    if r >= 1.0 - WRAP_CLAMP {
        0.0
    } else {
        r
    }
}

/// Distance on the circle `R/Z`.
pub fn circle_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Signed representative of `a - b` in `[-1/2, 1/2)`.
pub fn circle_delta(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    if d >= 0.5 {
        d - 1.0
    } else {
        d
    }
}

/// A point of `T^k`, each coordinate in `[0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TorusPoint {
    coords: Vec<f64>,
}

impl TorusPoint {
    /// Builds a point, reducing every coordinate mod 1.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(invalid("coords", "a torus point needs at least one coordinate"));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(invalid("coords", "coordinates must be finite"));
        }
        Ok(Self { coords: coords.into_iter().map(wrap).collect() })
    }

    pub fn circle(x: f64) -> Self {
        Self { coords: vec![wrap(x)] }
    }

    pub fn origin(dim: usize) -> Self {
        Self { coords: vec![0.0; dim.max(1)] }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.coords[i]
    }
}

impl TryFrom<Vec<f64>> for TorusPoint {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        TorusPoint::new(v)
    }
}

impl From<TorusPoint> for Vec<f64> {
    fn from(p: TorusPoint) -> Self {
        p.coords
    }
}

impl fmt::Display for TorusPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Max over coordinates of the circle distance. Bounded by 1/2.
pub fn dist(x: &TorusPoint, y: &TorusPoint) -> Result<f64> {
    check_dim(x.dim(), y.dim())?;
    Ok(dist_unchecked(x, y))
}

pub(crate) fn dist_unchecked(x: &TorusPoint, y: &TorusPoint) -> f64 {
    x.coords.iter().zip(&y.coords).map(|(a, b)| circle_dist(*a, *b)).fold(0.0, f64::max)
}

/// One term `cos·cos(2π·freq·t) + sin·sin(2π·freq·t)` of a real phase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseTerm {
    pub freq: i64,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// A real trigonometric polynomial in the first coordinate, in turns.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Phase {
    pub terms: Vec<PhaseTerm>,
}

impl Phase {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self { terms: vec![PhaseTerm { freq: 0, cos: c, sin: 0.0 }] }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|p| {
                let a = TAU * p.freq as f64 * t;
                p.cos * a.cos() + p.sin * a.sin()
            })
            .sum()
    }

    /// Lipschitz constant with respect to the circle distance on `t`.
    pub fn lipschitz(&self) -> f64 {
        self.terms
            .iter()
            .map(|p| TAU * p.freq.unsigned_abs() as f64 * p.cos.hypot(p.sin))
            .sum()
    }

    /// `Some(c)` when the phase is the constant `c`.
    pub fn as_constant(&self) -> Option<f64> {
        let mut c = 0.0;
        for p in &self.terms {
            if p.freq == 0 {
                c += p.cos;
            } else if p.cos != 0.0 || p.sin != 0.0 {
                return None;
            }
        }
        Some(c)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MapKind {
    Rotation { theta: f64 },
    /// `x_1 ↦ x_1 + θ`, `x_{j+1} ↦ d_j·x_j + f_j(x_1) + x_{j+1}`.
    Furstenberg { theta: f64, exponents: Vec<i64>, phases: Vec<Phase> },
}

/// A homeomorphism of `T^k`. Parameters are kept exactly as given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MapRecord", into = "MapRecord")]
pub struct MinimalMap {
    kind: MapKind,
    dim: usize,
}

/// Affine form `x ↦ A·x + b (mod 1)` with an integer matrix `A` (row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct AffineForm {
    pub matrix: Vec<Vec<i64>>,
    pub offset: Vec<f64>,
}

impl MinimalMap {
    pub fn rotation(theta: f64) -> Self {
        Self { kind: MapKind::Rotation { theta }, dim: 1 }
    }

    /// `exponents` and `phases` both have length `dim - 1`; an empty
    /// `phases` means all phases vanish.
    pub fn furstenberg(theta: f64, exponents: Vec<i64>, phases: Vec<Phase>) -> Result<Self> {
        let dim = exponents.len() + 1;
        let phases = if phases.is_empty() { vec![Phase::zero(); exponents.len()] } else { phases };
        if phases.len() != exponents.len() {
            return Err(Error::DimensionMismatch { expected: exponents.len(), found: phases.len() });
        }
        if !theta.is_finite() {
            return Err(invalid("theta", "must be finite"));
        }
        Ok(Self { kind: MapKind::Furstenberg { theta, exponents, phases }, dim })
    }

    /// The golden rotation `θ = (√5 − 1)/2`.
    pub fn golden_rotation() -> Self {
        Self::rotation(golden_theta())
    }

    pub fn kind(&self) -> &MapKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn theta(&self) -> f64 {
        match &self.kind {
            MapKind::Rotation { theta } | MapKind::Furstenberg { theta, .. } => *theta,
        }
    }

    /// Minimality flag: the base rotation is not visibly rational and, for
    /// Furstenberg maps, every exponent is nonzero.
    pub fn is_minimal(&self) -> bool {
        let irrational = !is_near_rational(self.theta(), 1000, 1e-9);
        match &self.kind {
            MapKind::Rotation { .. } => irrational,
            MapKind::Furstenberg { exponents, .. } => irrational && exponents.iter().all(|d| *d != 0),
        }
    }

    /// Lebesgue measure is the unique invariant measure.
    pub fn lebesgue_invariant(&self) -> bool {
        match &self.kind {
            MapKind::Rotation { .. } => true,
            MapKind::Furstenberg { exponents, .. } => exponents.iter().all(|d| *d != 0),
        }
    }

    pub fn apply(&self, x: &TorusPoint) -> Result<TorusPoint> {
        check_dim(self.dim, x.dim())?;
        Ok(self.apply_unchecked(x))
    }

    pub(crate) fn apply_unchecked(&self, x: &TorusPoint) -> TorusPoint {
        match &self.kind {
            MapKind::Rotation { theta } => TorusPoint { coords: vec![wrap(x.coords[0] + theta)] },
            MapKind::Furstenberg { theta, exponents, phases } => {
                let c = &x.coords;
                let mut out = Vec::with_capacity(c.len());
                out.push(wrap(c[0] + theta));
                for (j, (d, f)) in exponents.iter().zip(phases).enumerate() {
                    out.push(wrap(*d as f64 * c[j] + f.eval(c[0]) + c[j + 1]));
                }
                TorusPoint { coords: out }
            }
        }
    }

    pub fn apply_inverse(&self, y: &TorusPoint) -> Result<TorusPoint> {
        check_dim(self.dim, y.dim())?;
        Ok(self.apply_inverse_unchecked(y))
    }

    pub(crate) fn apply_inverse_unchecked(&self, y: &TorusPoint) -> TorusPoint {
        match &self.kind {
            MapKind::Rotation { theta } => TorusPoint { coords: vec![wrap(y.coords[0] - theta)] },
            MapKind::Furstenberg { theta, exponents, phases } => {
                let c = &y.coords;
                let mut out = Vec::with_capacity(c.len());
                out.push(wrap(c[0] - theta));
                for (j, (d, f)) in exponents.iter().zip(phases).enumerate() {
                    let prev = out[j];
                    out.push(wrap(c[j + 1] - *d as f64 * prev - f.eval(out[0])));
                }
                TorusPoint { coords: out }
            }
        }
    }

    /// `ψ^power`, negative powers iterate the inverse.
    pub fn apply_power(&self, x: &TorusPoint, power: i64) -> Result<TorusPoint> {
        check_dim(self.dim, x.dim())?;
        let mut y = x.clone();
        for _ in 0..power.unsigned_abs() {
            y = if power >= 0 { self.apply_unchecked(&y) } else { self.apply_inverse_unchecked(&y) };
        }
        Ok(y)
    }

    /// Lipschitz constant for the max-coordinate circle metric.
    pub fn lipschitz(&self) -> f64 {
        match &self.kind {
            MapKind::Rotation { .. } => 1.0,
            MapKind::Furstenberg { exponents, phases, .. } => exponents
                .iter()
                .zip(phases)
                .map(|(d, f)| d.unsigned_abs() as f64 + f.lipschitz() + 1.0)
                .fold(1.0, f64::max),
        }
    }

    /// `Some` when the map is `x ↦ A·x + b` (rotations, Furstenberg maps
    /// with constant phases).
    pub fn affine_form(&self) -> Option<AffineForm> {
        match &self.kind {
            MapKind::Rotation { theta } => {
                Some(AffineForm { matrix: vec![vec![1]], offset: vec![*theta] })
            }
            MapKind::Furstenberg { theta, exponents, phases } => {
                let k = self.dim;
                let mut matrix = vec![vec![0i64; k]; k];
                let mut offset = vec![*theta];
                matrix[0][0] = 1;
                for (j, (d, f)) in exponents.iter().zip(phases).enumerate() {
                    matrix[j + 1][j] = *d;
                    matrix[j + 1][j + 1] = 1;
                    offset.push(f.as_constant()?);
                }
                Some(AffineForm { matrix, offset })
            }
        }
    }
}

pub fn golden_theta() -> f64 {
    (5f64.sqrt() - 1.0) / 2.0
}

/// Whether `x` lies within `tol` of some `p/q` with `q <= max_den`.
pub fn is_near_rational(x: f64, max_den: u64, tol: f64) -> bool {
    (1..=max_den).any(|q| {
        let qf = q as f64;
        ((x * qf).round() / qf - x).abs() < tol
    })
}

/// `[x, ψ(x), …, ψ^{n−1}(x)]`.
pub fn orbit(map: &MinimalMap, x: &TorusPoint, n: usize) -> Result<Vec<TorusPoint>> {
    check_dim(map.dim(), x.dim())?;
    if n == 0 {
        return Err(invalid("n", "orbit length must be at least 1"));
    }
    let mut out = Vec::with_capacity(n);
    out.push(x.clone());
    for i in 1..n {
        let next = map.apply_unchecked(&out[i - 1]);
        out.push(next);
    }
    Ok(out)
}

/// The uniform grid `{j/n}` on the circle.
pub fn circle_grid(n: usize) -> Vec<TorusPoint> {
    (0..n).map(|j| TorusPoint::circle(j as f64 / n as f64)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct MapRecord {
    kind: String,
    theta: f64,
    #[serde(default)]
    exponents: Vec<i64>,
    #[serde(default)]
    phases: Vec<Phase>,
    dim: usize,
}

impl TryFrom<MapRecord> for MinimalMap {
    type Error = Error;
    fn try_from(r: MapRecord) -> Result<Self> {
        match r.kind.as_str() {
            "rotation" => {
                if r.dim != 1 {
                    return Err(invalid("dim", "a rotation acts on the circle (dim = 1)"));
                }
                if !r.exponents.is_empty() || !r.phases.is_empty() {
                    return Err(invalid("exponents", "a rotation takes no exponents or phases"));
                }
                if !r.theta.is_finite() {
                    return Err(invalid("theta", "must be finite"));
                }
                Ok(MinimalMap::rotation(r.theta))
            }
            "furstenberg" => {
                let m = MinimalMap::furstenberg(r.theta, r.exponents, r.phases)?;
                check_dim(m.dim, r.dim)?;
                Ok(m)
            }
            other => Err(invalid("kind", format!("unknown map kind `{other}`"))),
        }
    }
}

impl From<MinimalMap> for MapRecord {
    fn from(m: MinimalMap) -> Self {
        match m.kind {
            MapKind::Rotation { theta } => MapRecord {
                kind: "rotation".into(),
                theta,
                exponents: vec![],
                phases: vec![],
                dim: 1,
            },
            MapKind::Furstenberg { theta, exponents, phases } => MapRecord {
                kind: "furstenberg".into(),
                theta,
                exponents,
                phases,
                dim: m.dim,
            },
        }
    }
}
