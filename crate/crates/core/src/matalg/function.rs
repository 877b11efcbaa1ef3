use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::trig::TrigPoly;
use super::CMatrix;
use crate::dynamics::{MinimalMap, TorusPoint};
use crate::error::{check_dim, invalid, Error, Result};
use crate::C64;

/// A scalar function `p ∘ ψ_r ∘ … ∘ ψ_1` with `p` a trigonometric
/// polynomial. Compositions with affine maps are folded into `p`; any
/// other map stays on the precomposition chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarFn {
    poly: TrigPoly,
    pre: Vec<MinimalMap>,
}

impl ScalarFn {
    pub fn new(poly: TrigPoly) -> Self {
        Self { poly, pre: Vec::new() }
    }

    pub fn constant(dim: usize, c: C64) -> Self {
        Self::new(TrigPoly::constant(dim, c))
    }

    pub fn poly(&self) -> &TrigPoly {
        &self.poly
    }

    pub fn precompositions(&self) -> &[MinimalMap] {
        &self.pre
    }

    pub fn dim(&self) -> usize {
        self.poly.dim()
    }

    pub fn as_constant(&self) -> Option<C64> {
        self.poly.as_constant()
    }

    pub(crate) fn eval_unchecked(&self, x: &TorusPoint) -> C64 {
        if self.pre.is_empty() {
            return self.poly.eval_unchecked(x.coords());
        }
        let mut y = x.clone();
        for m in &self.pre {
            y = m.apply_unchecked(&y);
        }
        self.poly.eval_unchecked(y.coords())
    }

    pub fn eval(&self, x: &TorusPoint) -> Result<C64> {
        check_dim(self.dim(), x.dim())?;
        Ok(self.eval_unchecked(x))
    }

    /// `f ∘ ψ`.
    pub fn compose(&self, map: &MinimalMap) -> Result<Self> {
        check_dim(self.dim(), map.dim())?;
        if self.as_constant().is_some() {
            return Ok(self.clone());
        }
        if self.pre.is_empty() {
            if let Some(a) = map.affine_form() {
                return Ok(Self::new(self.poly.pullback_affine(&a)?));
            }
        }
        let mut pre = Vec::with_capacity(self.pre.len() + 1);
        pre.push(map.clone());
        pre.extend(self.pre.iter().cloned());
        Ok(Self { poly: self.poly.clone(), pre })
    }

    fn chain_lipschitz(&self) -> f64 {
        self.pre.iter().map(MinimalMap::lipschitz).product()
    }

    pub fn lipschitz(&self) -> f64 {
        self.poly.lipschitz() * self.chain_lipschitz()
    }

    pub fn oscillation_bound(&self) -> f64 {
        self.poly.oscillation_bound()
    }

    pub fn sup_bound(&self) -> f64 {
        self.poly.sup_bound()
    }

    /// Certified modulus of continuity `ω(δ)`.
    pub fn modulus(&self, delta: f64) -> f64 {
        (self.lipschitz() * delta).min(self.oscillation_bound())
    }

    fn combine(&self, other: &Self, op: impl Fn(&TrigPoly, &TrigPoly) -> Result<TrigPoly>) -> Result<Self> {
        let pre = if self.as_constant().is_some() {
            other.pre.clone()
        } else if other.as_constant().is_some() || self.pre == other.pre {
            self.pre.clone()
        } else {
            return Err(Error::IncompatibleComposition);
        };
        let poly = op(&self.poly, &other.poly)?;
        let pre = if poly.as_constant().is_some() { Vec::new() } else { pre };
        Ok(Self { poly, pre })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.combine(other, TrigPoly::add)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.combine(other, TrigPoly::mul)
    }

    pub fn adjoint(&self) -> Self {
        Self { poly: self.poly.adjoint(), pre: self.pre.clone() }
    }

    pub fn scale(&self, s: C64) -> Self {
        let poly = self.poly.scale(s);
        let pre = if poly.as_constant().is_some() { Vec::new() } else { self.pre.clone() };
        Self { poly, pre }
    }
}

impl From<TrigPoly> for ScalarFn {
    fn from(p: TrigPoly) -> Self {
        ScalarFn::new(p)
    }
}

/// An element of `C(T^k) ⊗ M_m`, stored sparsely by entry.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixFunction {
    dim: usize,
    m: usize,
    entries: BTreeMap<(usize, usize), ScalarFn>,
}

impl MatrixFunction {
    pub fn zero(dim: usize, m: usize) -> Self {
        Self { dim, m, entries: BTreeMap::new() }
    }

    pub fn identity(dim: usize, m: usize) -> Self {
        let one = ScalarFn::constant(dim, C64::new(1.0, 0.0));
        Self { dim, m, entries: (0..m).map(|i| ((i, i), one.clone())).collect() }
    }

    /// The `1 × 1` function `p`.
    pub fn scalar(f: impl Into<ScalarFn>) -> Self {
        let f = f.into();
        let dim = f.dim();
        Self::from_entries(dim, 1, vec![((0, 0), f)]).expect("a 1x1 entry is in range")
    }

    pub fn from_entries(dim: usize, m: usize, entries: Vec<((usize, usize), ScalarFn)>) -> Result<Self> {
        if m == 0 {
            return Err(invalid("m", "block size must be at least 1"));
        }
        let mut out = Self::zero(dim, m);
        for ((i, j), f) in entries {
            if i >= m || j >= m {
                return Err(invalid("entries", format!("entry ({i}, {j}) outside a {m}x{m} block")));
            }
            check_dim(dim, f.dim())?;
            let merged = match out.entries.remove(&(i, j)) {
                Some(prev) => prev.add(&f)?,
                None => f,
            };
            out.insert(i, j, merged);
        }
        Ok(out)
    }

    /// A constant function with value `c`.
    pub fn constant(dim: usize, c: &CMatrix) -> Result<Self> {
        if c.nrows() != c.ncols() {
            return Err(Error::DimensionMismatch { expected: c.nrows(), found: c.ncols() });
        }
        let entries = (0..c.nrows())
            .flat_map(|i| (0..c.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| ((i, j), ScalarFn::constant(dim, c[(i, j)])))
            .collect();
        Self::from_entries(dim, c.nrows(), entries)
    }

    fn insert(&mut self, i: usize, j: usize, f: ScalarFn) {
        if f.as_constant() != Some(C64::new(0.0, 0.0)) {
            self.entries.insert((i, j), f);
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block_size(&self) -> usize {
        self.m
    }

    pub fn entry(&self, i: usize, j: usize) -> Option<&ScalarFn> {
        self.entries.get(&(i, j))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(usize, usize), &ScalarFn)> {
        self.entries.iter()
    }

    pub fn is_constant(&self) -> bool {
        self.entries.values().all(|f| f.as_constant().is_some())
    }

    pub fn eval(&self, x: &TorusPoint) -> Result<CMatrix> {
        check_dim(self.dim, x.dim())?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &TorusPoint) -> CMatrix {
        let mut out = DMatrix::zeros(self.m, self.m);
        for ((i, j), f) in &self.entries {
            out[(*i, *j)] = f.eval_unchecked(x);
        }
        out
    }

    /// `f ∘ ψ`, entrywise.
    pub fn compose(&self, map: &MinimalMap) -> Result<Self> {
        check_dim(self.dim, map.dim())?;
        let mut out = Self::zero(self.dim, self.m);
        for (&(i, j), f) in &self.entries {
            out.insert(i, j, f.compose(map)?);
        }
        Ok(out)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim, other.dim)?;
        check_dim(self.m, other.m)?;
        let mut acc: BTreeMap<(usize, usize), ScalarFn> = BTreeMap::new();
        for (&(i, k), f) in &self.entries {
            for (&(k2, j), g) in other.entries.range((k, 0)..(k + 1, 0)) {
                debug_assert_eq!(k, k2);
                let prod = f.mul(g)?;
                let next = match acc.remove(&(i, j)) {
                    Some(prev) => prev.add(&prod)?,
                    None => prod,
                };
                acc.insert((i, j), next);
            }
        }
        let mut out = Self::zero(self.dim, self.m);
        for ((i, j), f) in acc {
            out.insert(i, j, f);
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim, other.dim)?;
        check_dim(self.m, other.m)?;
        let mut out = self.clone();
        for (&(i, j), g) in &other.entries {
            let next = match out.entries.remove(&(i, j)) {
                Some(prev) => prev.add(g)?,
                None => g.clone(),
            };
            out.insert(i, j, next);
        }
        Ok(out)
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = Self::zero(self.dim, self.m);
        for (&(i, j), f) in &self.entries {
            out.insert(i, j, f.scale(s));
        }
        out
    }

    /// Pointwise conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self {
            dim: self.dim,
            m: self.m,
            entries: self.entries.iter().map(|(&(i, j), f)| ((j, i), f.adjoint())).collect(),
        }
    }

    /// Largest entry Lipschitz constant.
    pub fn max_entry_lipschitz(&self) -> f64 {
        self.entries.values().map(ScalarFn::lipschitz).fold(0.0, f64::max)
    }

    /// Largest entry modulus of continuity `ω(δ)`.
    pub fn max_entry_modulus(&self, delta: f64) -> f64 {
        self.entries.values().map(|f| f.modulus(delta)).fold(0.0, f64::max)
    }

    /// Bound on `|tr f(x) − tr f(y)|` over all `x, y`.
    pub fn trace_oscillation_bound(&self) -> f64 {
        (0..self.m).filter_map(|i| self.entries.get(&(i, i))).map(ScalarFn::oscillation_bound).sum()
    }

    /// Bound on `sup_x ‖f(x)‖` via the Frobenius norm of entry sup bounds.
    pub fn sup_norm_bound(&self) -> f64 {
        self.entries.values().map(|f| f.sup_bound().powi(2)).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{golden_theta, Phase, PhaseTerm};

    fn z(dim: usize, i: usize, p: i64) -> ScalarFn {
        TrigPoly::coordinate(dim, i, p).unwrap().into()
    }

    #[test]
    fn composition_folds_affine_maps() {
        let f = z(1, 0, 1);
        let g = f.compose(&MinimalMap::rotation(0.3)).unwrap();
        assert!(g.precompositions().is_empty());
        for x in [0.0, 0.17, 0.5, 0.93] {
            let want = C64::from_polar(1.0, std::f64::consts::TAU * (x + 0.3));
            assert!((g.eval(&TorusPoint::circle(x)).unwrap() - want).norm() < 1e-12);
        }
    }

    #[test]
    fn composition_chains_non_affine_maps() {
        let phase = Phase { terms: vec![PhaseTerm { freq: 1, cos: 0.2, sin: 0.0 }] };
        let psi = MinimalMap::furstenberg(golden_theta(), vec![1], vec![phase]).unwrap();
        let f = z(2, 1, 1);
        let g = f.compose(&psi).unwrap().compose(&psi).unwrap();
        assert_eq!(g.precompositions().len(), 2);
        let x = TorusPoint::new(vec![0.3, 0.8]).unwrap();
        let direct = f.eval(&psi.apply(&psi.apply(&x).unwrap()).unwrap()).unwrap();
        assert!((g.eval(&x).unwrap() - direct).norm() < 1e-12);
        assert!(g.lipschitz() >= f.lipschitz());
        // mixing chains is rejected
        assert_eq!(g.add(&f), Err(Error::IncompatibleComposition));
        assert!(g.add(&ScalarFn::constant(2, C64::new(1.0, 0.0))).is_ok());
    }

    #[test]
    fn matrix_function_algebra() {
        let f = MatrixFunction::from_entries(
            1,
            2,
            vec![((0, 0), ScalarFn::constant(1, C64::new(1.0, 0.0))), ((0, 1), z(1, 0, 1)), ((1, 1), ScalarFn::constant(1, C64::new(1.0, 0.0)))],
        )
        .unwrap();
        let x = TorusPoint::circle(0.2);
        let fx = f.eval(&x).unwrap();
        let ffx = f.mul(&f).unwrap().eval(&x).unwrap();
        assert!((ffx - &fx * &fx).norm() < 1e-12);
        assert!((f.adjoint().eval(&x).unwrap() - fx.adjoint()).norm() < 1e-15);
        assert!(MatrixFunction::identity(1, 3).is_constant());
        assert!(!f.is_constant());
        assert!(MatrixFunction::from_entries(1, 2, vec![((2, 0), z(1, 0, 1))]).is_err());
    }
}
