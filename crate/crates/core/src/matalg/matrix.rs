use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_dim, invalid, Error, Result};
use crate::matching::Permutation;
use crate::C64;

pub type CMatrix = DMatrix<C64>;

pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 100_000;

/// Largest singular value.
///
/// The nonzero pattern is split into connected components first (rows and
/// columns linked by nonzero entries); the norm is the maximum over the
/// component submatrices, which makes (block-)diagonal and permutation
/// inputs exact. Larger components go through power iteration on `A*A`.
pub fn spectral_norm(a: &CMatrix) -> Result<f64> {
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(invalid("matrix", "entries must be finite"));
    }
    let components = components(a);
    let mut best = 0.0f64;
    for (rows, cols) in components {
        let v = if rows.len() == 1 && cols.len() == 1 {
            a[(rows[0], cols[0])].norm()
        } else if rows.len() == 1 || cols.len() == 1 {
            rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).map(|rc| a[rc].norm_sqr()).sum::<f64>().sqrt()
        } else {
            let sub = DMatrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])]);
            power_iteration(&sub, POWER_TOL, POWER_MAX_ITER)?
        };
        best = best.max(v);
    }
    Ok(best)
}

/// Connected components of the bipartite row/column graph of nonzeros.
fn components(a: &CMatrix) -> Vec<(Vec<usize>, Vec<usize>)> {
    let (r, c) = a.shape();
    let mut parent: Vec<usize> = (0..r + c).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let zero = C64::new(0.0, 0.0);
    for j in 0..c {
        for i in 0..r {
            if a[(i, j)] != zero {
                let (x, y) = (find(&mut parent, i), find(&mut parent, r + j));
                if x != y {
                    parent[x] = y;
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, (Vec<usize>, Vec<usize>)> = Default::default();
    for i in 0..r {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().0.push(i);
    }
    for j in 0..c {
        let root = find(&mut parent, r + j);
        groups.entry(root).or_default().1.push(j);
    }
    groups.into_values().filter(|(rows, cols)| !rows.is_empty() && !cols.is_empty()).collect()
}

/// Power iteration on `A*A` from a fixed pseudo-random start; stops when
/// the Rayleigh quotient changes by less than `tol` relative.
pub fn power_iteration(a: &CMatrix, tol: f64, max_iter: usize) -> Result<f64> {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x0005_eed0_fa11);
    let mut v = DVector::from_fn(n, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let norm = v.norm();
    v /= C64::new(norm, 0.0);
    let mut lambda = 0.0f64;
    for _ in 0..max_iter {
        let av = a * &v;
        let w = a.ad_mul(&av);
        let next = av.norm_squared();
        let wn = w.norm();
        if wn == 0.0 {
            return Ok(0.0);
        }
        v = w / C64::new(wn, 0.0);
        if (next - lambda).abs() <= tol * next {
            return Ok(next.sqrt());
        }
        lambda = next;
    }
    Err(Error::NoConvergence { iterations: max_iter })
}

/// Writes a matrix as CSV, one row per line, `re,im` pairs per entry.
pub fn write_matrix_csv<W: Write>(a: &CMatrix, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for i in 0..a.nrows() {
        let row: Vec<String> = (0..a.ncols()).flat_map(|j| [a[(i, j)].re.to_string(), a[(i, j)].im.to_string()]).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// A block-diagonal matrix with equal square blocks of size `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDiag {
    m: usize,
    data: Vec<C64>,
}

impl BlockDiag {
    pub fn from_blocks(blocks: &[CMatrix]) -> Result<Self> {
        let m = blocks.first().map(|b| b.nrows()).ok_or_else(|| invalid("blocks", "need at least one block"))?;
        let mut data = Vec::with_capacity(blocks.len() * m * m);
        for b in blocks {
            check_dim(m, b.nrows())?;
            check_dim(m, b.ncols())?;
            data.extend(b.iter());
        }
        Ok(Self { m, data })
    }

    /// A diagonal matrix (blocks of size 1).
    pub fn from_diagonal(diag: Vec<C64>) -> Self {
        Self { m: 1, data: diag }
    }

    pub fn identity(blocks: usize, m: usize) -> Self {
        let mut data = vec![C64::new(0.0, 0.0); blocks * m * m];
        for b in 0..blocks {
            for i in 0..m {
                data[b * m * m + i * m + i] = C64::new(1.0, 0.0);
            }
        }
        Self { m, data }
    }

    pub fn block_size(&self) -> usize {
        self.m
    }

    pub fn num_blocks(&self) -> usize {
        self.data.len() / (self.m * self.m)
    }

    pub fn dim(&self) -> usize {
        self.num_blocks() * self.m
    }

    fn block_slice(&self, j: usize) -> &[C64] {
        let s = self.m * self.m;
        &self.data[j * s..(j + 1) * s]
    }

    /// Block `j` as a matrix (column-major storage).
    pub fn block(&self, j: usize) -> CMatrix {
        DMatrix::from_column_slice(self.m, self.m, self.block_slice(j))
    }

    /// Diagonal entries, in order.
    pub fn diagonal(&self) -> Vec<C64> {
        let m = self.m;
        (0..self.num_blocks()).flat_map(|b| (0..m).map(move |i| (b, i))).map(|(b, i)| self.data[b * m * m + i * m + i]).collect()
    }

    pub fn to_dense(&self) -> CMatrix {
        let (m, n) = (self.m, self.dim());
        let mut out = DMatrix::zeros(n, n);
        for b in 0..self.num_blocks() {
            out.view_mut((b * m, b * m), (m, m)).copy_from(&self.block(b));
        }
        out
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        check_dim(self.m, other.m)?;
        check_dim(self.data.len(), other.data.len())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self { m: self.m, data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect() })
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        if self.m == 1 {
            return Ok(Self { m: 1, data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect() });
        }
        let blocks: Vec<CMatrix> = (0..self.num_blocks()).map(|j| self.block(j) * other.block(j)).collect();
        Self::from_blocks(&blocks)
    }

    pub fn adjoint(&self) -> Self {
        if self.m == 1 {
            return Self { m: 1, data: self.data.iter().map(|z| z.conj()).collect() };
        }
        let blocks: Vec<CMatrix> = (0..self.num_blocks()).map(|j| self.block(j).adjoint()).collect();
        Self::from_blocks(&blocks).expect("non-empty")
    }

    /// `P · self · P*` for the block permutation `P ⊗ 1_m`: block `j` of the
    /// result is block `p(j)` of `self`.
    pub fn conj_perm(&self, p: &Permutation) -> Result<Self> {
        check_dim(self.num_blocks(), p.len())?;
        let s = self.m * self.m;
        let mut data = Vec::with_capacity(self.data.len());
        for &i in p.images() {
            data.extend_from_slice(&self.data[i * s..(i + 1) * s]);
        }
        Ok(Self { m: self.m, data })
    }

    /// The blocks at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let (n, s) = (self.num_blocks(), self.m * self.m);
        let mut data = Vec::with_capacity(indices.len() * s);
        for &i in indices {
            if i >= n {
                return Err(invalid("indices", format!("block {i} out of {n}")));
            }
            data.extend_from_slice(&self.data[i * s..(i + 1) * s]);
        }
        Ok(Self { m: self.m, data })
    }

    /// `diag(parts[0], parts[1], …)`.
    pub fn concat(parts: &[&Self]) -> Result<Self> {
        let m = parts.first().map(|p| p.m).ok_or_else(|| invalid("parts", "need at least one part"))?;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        for p in parts {
            check_dim(m, p.m)?;
            data.extend_from_slice(&p.data);
        }
        Ok(Self { m, data })
    }

    /// Operator norm: the maximum over blocks.
    pub fn norm(&self) -> Result<f64> {
        if self.m == 1 {
            return Ok(self.data.iter().map(|z| z.norm()).fold(0.0, f64::max));
        }
        let norms: Result<Vec<f64>> = (0..self.num_blocks()).into_par_iter().map(|j| spectral_norm(&self.block(j))).collect();
        Ok(norms?.into_iter().fold(0.0, f64::max))
    }

    /// `tr(A)/dim`.
    pub fn normalized_trace(&self) -> C64 {
        let d = self.dim();
        self.diagonal().into_iter().sum::<C64>() / d as f64
    }

    /// `‖D A − A D‖` for a diagonal 0/1 (or real) matrix `D` given by its
    /// diagonal. Works for any block size of `A`.
    pub fn commutator_with_diagonal(&self, d: &[f64]) -> Result<f64> {
        check_dim(self.dim(), d.len())?;
        let m = self.m;
        let norms: Result<Vec<f64>> = (0..self.num_blocks())
            .into_par_iter()
            .map(|b| {
                let blk = self.block(b);
                let c = DMatrix::from_fn(m, m, |r, s| blk[(r, s)] * (d[b * m + r] - d[b * m + s]));
                spectral_norm(&c)
            })
            .collect();
        Ok(norms?.into_iter().fold(0.0, f64::max))
    }
}
