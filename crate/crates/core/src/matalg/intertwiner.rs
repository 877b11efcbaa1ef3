use nalgebra::DMatrix;
use rayon::prelude::*;

use super::function::MatrixFunction;
use super::matrix::{spectral_norm, BlockDiag, CMatrix};
use crate::dynamics::{MinimalMap, TorusPoint};
use crate::error::{check_dim, invalid, Result};
use crate::matching::Permutation;
use crate::C64;

/// A unitary intertwiner: either the block permutation `U_s ⊗ 1_m` or a
/// general dense unitary.
#[derive(Clone, Debug, PartialEq)]
pub enum IntertwinerMatrix {
    Permutation { perm: Permutation, m: usize },
    Dense(CMatrix),
}

impl IntertwinerMatrix {
    pub fn size(&self) -> usize {
        match self {
            Self::Permutation { perm, m } => perm.len() * m,
            Self::Dense(a) => a.nrows(),
        }
    }

    pub fn is_block_permutation(&self) -> bool {
        matches!(self, Self::Permutation { .. })
    }

    pub fn to_dense(&self) -> CMatrix {
        match self {
            Self::Permutation { perm, m } => {
                let n = perm.len() * m;
                let mut out = DMatrix::zeros(n, n);
                for (j, &i) in perm.images().iter().enumerate() {
                    for r in 0..*m {
                        out[(j * m + r, i * m + r)] = C64::new(1.0, 0.0);
                    }
                }
                out
            }
            Self::Dense(a) => a.clone(),
        }
    }

    /// `‖W*W − 1‖`.
    pub fn unitarity_defect(&self) -> Result<f64> {
        match self {
            Self::Permutation { .. } => Ok(0.0),
            Self::Dense(a) => {
                let n = a.nrows();
                spectral_norm(&(a.ad_mul(a) - CMatrix::identity(n, n)))
            }
        }
    }

    /// `W A W*`.
    pub fn conjugate(&self, a: &BlockDiag) -> Result<CMatrix> {
        match self {
            Self::Permutation { perm, m } if *m == a.block_size() => Ok(a.conj_perm(perm)?.to_dense()),
            _ => {
                let w = self.to_dense();
                check_dim(w.nrows(), a.dim())?;
                Ok(&w * a.to_dense() * w.adjoint())
            }
        }
    }
}

/// `W = U_s ⊗ 1_m`, acting on `m × m` blocks.
pub fn permutation_intertwiner(s: &Permutation, m: usize) -> IntertwinerMatrix {
    IntertwinerMatrix::Permutation { perm: s.clone(), m }
}

/// `diag(f(x_1), …, f(x_n))`.
pub fn evaluate_diag(f: &MatrixFunction, points: &[TorusPoint]) -> Result<BlockDiag> {
    if points.is_empty() {
        return Err(invalid("points", "need at least one point"));
    }
    for p in points {
        check_dim(f.dim(), p.dim())?;
    }
    let blocks: Vec<CMatrix> = points.par_iter().map(|p| f.eval_unchecked(p)).collect();
    BlockDiag::from_blocks(&blocks)
}

/// `‖diag(f(x_j)) − W diag(f(ψ x_j)) W*‖`, computed blockwise as
/// `max_j ‖f(x_j) − f(ψ(x_{s(j)}))‖`.
pub fn intertwining_defect(f: &MatrixFunction, points: &[TorusPoint], map: &MinimalMap, s: &Permutation) -> Result<f64> {
    check_dim(points.len(), s.len())?;
    check_dim(f.dim(), map.dim())?;
    let lhs = evaluate_diag(f, points)?;
    let images: Vec<TorusPoint> = points.iter().map(|p| map.apply_unchecked(p)).collect();
    let rhs = evaluate_diag(f, &images)?.conj_perm(s)?;
    lhs.sub(&rhs)?.norm()
}

/// The same defect through dense `mn × mn` matrices; a cross-check for
/// small inputs.
pub fn intertwining_defect_dense(f: &MatrixFunction, points: &[TorusPoint], map: &MinimalMap, s: &Permutation) -> Result<f64> {
    check_dim(points.len(), s.len())?;
    let lhs = evaluate_diag(f, points)?.to_dense();
    let images: Vec<TorusPoint> = points.iter().map(|p| map.apply(p)).collect::<Result<_>>()?;
    let w = permutation_intertwiner(s, f.block_size()).to_dense();
    let rhs = &w * evaluate_diag(f, &images)?.to_dense() * w.adjoint();
    spectral_norm(&(lhs - rhs))
}

/// `m² · max_entry ω(δ)`: whenever `dist(x, x') < δ`,
/// `‖f(x) − f(x')‖ ≤` this value.
pub fn modulus_defect_bound(f: &MatrixFunction, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(invalid("delta", "must be positive"));
    }
    let m = f.block_size() as f64;
    Ok(m * m * f.max_entry_modulus(delta))
}
