//! Complex trigonometric polynomials `Σ_ν c_ν e^{2πi ν·x}` on `T^k`.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::dynamics::{AffineForm, TorusPoint};
use crate::error::{check_dim, invalid, Error, Result};
use crate::C64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrigRecord", into = "TrigRecord")]
pub struct TrigPoly {
    dim: usize,
    terms: BTreeMap<Vec<i64>, C64>,
}

impl TrigPoly {
    pub fn zero(dim: usize) -> Self {
        Self { dim, terms: BTreeMap::new() }
    }

    pub fn constant(dim: usize, c: C64) -> Self {
        Self::monomial(dim, vec![0; dim], c).expect("zero frequency has the right length")
    }

    pub fn one(dim: usize) -> Self {
        Self::constant(dim, C64::new(1.0, 0.0))
    }

    pub fn monomial(dim: usize, freq: Vec<i64>, c: C64) -> Result<Self> {
        check_dim(dim, freq.len())?;
        let mut p = Self::zero(dim);
        if c != C64::new(0.0, 0.0) {
            p.terms.insert(freq, c);
        }
        Ok(p)
    }

    /// `z_i^power`, the `i`-th coordinate character raised to `power`.
    pub fn coordinate(dim: usize, i: usize, power: i64) -> Result<Self> {
        if i >= dim {
            return Err(invalid("coordinate", format!("index {i} out of range for dimension {dim}")));
        }
        let mut freq = vec![0; dim];
        freq[i] = power;
        Self::monomial(dim, freq, C64::new(1.0, 0.0))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[i64], C64)> {
        self.terms.iter().map(|(k, v)| (k.as_slice(), *v))
    }

    pub fn eval(&self, x: &TorusPoint) -> Result<C64> {
        check_dim(self.dim, x.dim())?;
        Ok(self.eval_unchecked(x.coords()))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> C64 {
        self.terms
            .iter()
            .map(|(nu, c)| {
                let phase: f64 = nu.iter().zip(x).map(|(n, t)| *n as f64 * t).sum();
                c * C64::from_polar(1.0, TAU * phase)
            })
            .sum()
    }

    pub fn as_constant(&self) -> Option<C64> {
        match self.terms.len() {
            0 => Some(C64::new(0.0, 0.0)),
            1 => self.terms.iter().next().filter(|(nu, _)| nu.iter().all(|n| *n == 0)).map(|(_, c)| *c),
            _ => None,
        }
    }

    fn insert_add(&mut self, nu: Vec<i64>, c: C64) {
        let entry = self.terms.entry(nu).or_insert(C64::new(0.0, 0.0));
        *entry += c;
    }

    fn prune(mut self) -> Self {
        self.terms.retain(|_, c| *c != C64::new(0.0, 0.0));
        self
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim, other.dim)?;
        let mut out = self.clone();
        for (nu, c) in &other.terms {
            out.insert_add(nu.clone(), *c);
        }
        Ok(out.prune())
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { dim: self.dim, terms: self.terms.iter().map(|(k, c)| (k.clone(), c * s)).collect() }.prune()
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim, other.dim)?;
        let mut out = Self::zero(self.dim);
        for (a, ca) in &self.terms {
            for (b, cb) in &other.terms {
                let nu = a.iter().zip(b).map(|(x, y)| x + y).collect();
                out.insert_add(nu, ca * cb);
            }
        }
        Ok(out.prune())
    }

    /// Pointwise complex conjugate.
    pub fn adjoint(&self) -> Self {
        Self {
            dim: self.dim,
            terms: self.terms.iter().map(|(nu, c)| (nu.iter().map(|n| -n).collect(), c.conj())).collect(),
        }
    }

    /// `Σ |c_ν|`, a bound on the sup norm.
    pub fn sup_bound(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).sum()
    }

    /// `2 Σ_{ν≠0} |c_ν|`, a bound on `|p(x) − p(y)|` for all `x, y`.
    pub fn oscillation_bound(&self) -> f64 {
        2.0 * self.terms.iter().filter(|(nu, _)| nu.iter().any(|n| *n != 0)).map(|(_, c)| c.norm()).sum::<f64>()
    }

    /// `2π Σ |c_ν| ‖ν‖₁`, a Lipschitz constant for the max-coordinate metric.
    pub fn lipschitz(&self) -> f64 {
        TAU * self.terms.iter().map(|(nu, c)| c.norm() * nu.iter().map(|n| n.unsigned_abs() as f64).sum::<f64>()).sum::<f64>()
    }

    /// `ω(δ) = min(L·δ, oscillation)`.
    pub fn modulus(&self, delta: f64) -> f64 {
        (self.lipschitz() * delta).min(self.oscillation_bound())
    }

    /// `p ∘ (x ↦ A·x + b)`, exact: `e^{2πi ν·(Ax+b)} = e^{2πi ν·b} e^{2πi (Aᵀν)·x}`.
    pub fn pullback_affine(&self, a: &AffineForm) -> Result<Self> {
        check_dim(self.dim, a.offset.len())?;
        let mut out = Self::zero(self.dim);
        for (nu, c) in &self.terms {
            let new_nu: Vec<i64> = (0..self.dim)
                .map(|col| {
                    (0..self.dim)
                        .map(|row| nu[row].checked_mul(a.matrix[row][col]).ok_or(Error::Overflow))
                        .try_fold(0i64, |acc, v| acc.checked_add(v?).ok_or(Error::Overflow))
                })
                .collect::<Result<_>>()?;
            let phase: f64 = nu.iter().zip(&a.offset).map(|(n, b)| *n as f64 * b).sum();
            out.insert_add(new_nu, c * C64::from_polar(1.0, TAU * phase));
        }
        Ok(out.prune())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TrigRecord {
    dim: usize,
    terms: Vec<TermRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TermRecord {
    freq: Vec<i64>,
    re: f64,
    #[serde(default)]
    im: f64,
}

impl TryFrom<TrigRecord> for TrigPoly {
    type Error = Error;
    fn try_from(r: TrigRecord) -> Result<Self> {
        let mut p = TrigPoly::zero(r.dim);
        for t in r.terms {
            check_dim(r.dim, t.freq.len())?;
            if !t.re.is_finite() || !t.im.is_finite() {
                return Err(invalid("terms", "coefficients must be finite"));
            }
            p.insert_add(t.freq, C64::new(t.re, t.im));
        }
        Ok(p.prune())
    }
}

impl From<TrigPoly> for TrigRecord {
    fn from(p: TrigPoly) -> Self {
        TrigRecord {
            dim: p.dim,
            terms: p.terms.into_iter().map(|(freq, c)| TermRecord { freq, re: c.re, im: c.im }).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{dist, MinimalMap};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn evaluation_and_constants() {
        let z = TrigPoly::coordinate(1, 0, 1).unwrap();
        assert!((z.eval(&TorusPoint::circle(0.5)).unwrap() - c(-1.0, 0.0)).norm() < 1e-15);
        assert_eq!(TrigPoly::constant(2, c(2.0, 1.0)).as_constant(), Some(c(2.0, 1.0)));
        assert_eq!(TrigPoly::zero(1).as_constant(), Some(c(0.0, 0.0)));
        assert_eq!(z.as_constant(), None);
        assert!(z.eval(&TorusPoint::origin(2)).is_err());
    }

    #[test]
    fn lipschitz_of_character() {
        let z = TrigPoly::coordinate(1, 0, 1).unwrap();
        assert!((z.lipschitz() - TAU).abs() < 1e-15);
        assert!((z.modulus(0.01) - TAU * 0.01).abs() < 1e-15);
        assert_eq!(z.modulus(10.0), 2.0);
        assert_eq!(TrigPoly::constant(1, c(3.0, 0.0)).modulus(0.3), 0.0);
    }

    #[test]
    fn product_adds_frequencies() {
        let z = TrigPoly::coordinate(1, 0, 1).unwrap();
        let z2 = z.mul(&z).unwrap();
        assert_eq!(z2, TrigPoly::coordinate(1, 0, 2).unwrap());
        let one = z.mul(&z.adjoint()).unwrap();
        assert_eq!(one.as_constant(), Some(c(1.0, 0.0)));
        assert_eq!(z.sub(&z).unwrap(), TrigPoly::zero(1));
    }

    #[test]
    fn json_round_trip() {
        let p = TrigPoly::monomial(2, vec![1, -2], c(0.5, -0.25)).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let back: TrigPoly = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }

    fn poly2() -> impl Strategy<Value = TrigPoly> {
        proptest::collection::vec(((-3i64..=3, -3i64..=3), -1.0..1.0f64, -1.0..1.0f64), 0..5).prop_map(|ts| {
            let mut p = TrigPoly::zero(2);
            for ((a, b), re, im) in ts {
                p = p.add(&TrigPoly::monomial(2, vec![a, b], C64::new(re, im)).unwrap()).unwrap();
            }
            p
        })
    }

    fn point2() -> impl Strategy<Value = TorusPoint> {
        (0.0..1.0f64, 0.0..1.0f64).prop_map(|(a, b)| TorusPoint::new(vec![a, b]).unwrap())
    }

    proptest! {
        #[test]
        fn ring_operations_are_pointwise(p in poly2(), q in poly2(), x in point2()) {
            let (px, qx) = (p.eval(&x).unwrap(), q.eval(&x).unwrap());
            prop_assert!((p.mul(&q).unwrap().eval(&x).unwrap() - px * qx).norm() < 1e-10);
            prop_assert!((p.add(&q).unwrap().eval(&x).unwrap() - (px + qx)).norm() < 1e-12);
            prop_assert!((p.adjoint().eval(&x).unwrap() - px.conj()).norm() < 1e-12);
        }

        #[test]
        fn lipschitz_bound_is_valid(p in poly2(), x in point2(), dx in -0.01..0.01f64, dy in -0.01..0.01f64) {
            let y = TorusPoint::new(vec![x.coord(0) + dx, x.coord(1) + dy]).unwrap();
            let d = dist(&x, &y).unwrap();
            let lhs = (p.eval(&x).unwrap() - p.eval(&y).unwrap()).norm();
            prop_assert!(lhs <= p.modulus(d) + 1e-12);
        }

        #[test]
        fn affine_pullback_matches_composition(p in poly2(), x in point2(), d in -3i64..4, b in 0.0..1.0f64) {
            let map = MinimalMap::furstenberg(0.3, vec![d], vec![crate::dynamics::Phase::constant(b)]).unwrap();
            let pulled = p.pullback_affine(&map.affine_form().unwrap()).unwrap();
            let direct = p.eval(&map.apply(&x).unwrap()).unwrap();
            prop_assert!((pulled.eval(&x).unwrap() - direct).norm() < 1e-9);
        }
    }
}
