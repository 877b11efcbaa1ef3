//! Matchings between a finite point set and its image under ψ.
//!
//! For points `x_0 … x_{n−1}` the threshold graph joins `j` (left) to `i`
//! (right) when `dist(x_j, ψ(x_i)) < ε`. A perfect matching in that graph
//! is a permutation `s` with `dist(x_j, ψ(x_{s(j)})) < ε` for every `j`.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{dist_unchecked, MinimalMap, TorusPoint};
use crate::error::{check_dim, invalid, Error, Result};

/// A bijection of `{0, …, n−1}`, stored as its image vector.
///
/// As a matrix, `P[j][s(j)] = 1`, so conjugating a block-diagonal matrix
/// moves block `s(j)` to position `j`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    images: Vec<usize>,
}

impl Permutation {
    pub fn new(images: Vec<usize>) -> Result<Self> {
        let n = images.len();
        let mut seen = vec![false; n];
        for &i in &images {
            if i >= n {
                return Err(Error::InvalidPermutation(format!("image {i} out of range 0..{n}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidPermutation(format!("image {i} repeated")));
            }
        }
        Ok(Self { images })
    }

    pub fn identity(n: usize) -> Self {
        Self { images: (0..n).collect() }
    }

    /// `j ↦ j + shift (mod n)`.
    pub fn cyclic_shift(n: usize, shift: i64) -> Self {
        let n_i = n as i64;
        Self { images: (0..n_i).map(|j| (j + shift).rem_euclid(n_i.max(1)) as usize).collect() }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[usize] {
        &self.images
    }

    pub fn get(&self, j: usize) -> usize {
        self.images[j]
    }

    pub fn is_identity(&self) -> bool {
        self.images.iter().enumerate().all(|(j, &i)| i == j)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.len()];
        for (j, &i) in self.images.iter().enumerate() {
            inv[i] = j;
        }
        Self { images: inv }
    }

    /// The permutation of the matrix product `P_self · P_other`, namely
    /// `j ↦ other(self(j))`.
    pub fn product(&self, other: &Self) -> Result<Self> {
        check_dim(self.len(), other.len())?;
        Ok(Self { images: self.images.iter().map(|&i| other.images[i]).collect() })
    }

    /// `P ⊗ 1_m`: slot `j·m + r` goes to `s(j)·m + r`.
    pub fn kron_identity(&self, m: usize) -> Self {
        let mut images = Vec::with_capacity(self.len() * m);
        for &i in &self.images {
            images.extend((0..m).map(|r| i * m + r));
        }
        Self { images }
    }

    /// `1_m ⊗ P`: `m` consecutive copies acting on consecutive ranges.
    pub fn repeat(&self, m: usize) -> Self {
        let n = self.len();
        let mut images = Vec::with_capacity(n * m);
        for c in 0..m {
            images.extend(self.images.iter().map(|&i| c * n + i));
        }
        Self { images }
    }

    /// Block sum `diag(self, other)`.
    pub fn direct_sum(&self, other: &Self) -> Self {
        let n = self.len();
        let mut images = self.images.clone();
        images.extend(other.images.iter().map(|&i| i + n));
        Self { images }
    }

    /// Cycle decomposition following `j → s(j)`, each cycle starting at its
    /// smallest element, cycles ordered by that element.
    pub fn cycles(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.len()];
        let mut out = Vec::new();
        for start in 0..self.len() {
            if seen[start] {
                continue;
            }
            let mut cycle = vec![start];
            seen[start] = true;
            let mut j = self.images[start];
            while j != start {
                seen[j] = true;
                cycle.push(j);
                j = self.images[j];
            }
            out.push(cycle);
        }
        out
    }

    /// Applies the permutation to a list: entry `j` of the result is
    /// `items[s(j)]`.
    pub fn gather<T: Clone>(&self, items: &[T]) -> Result<Vec<T>> {
        check_dim(self.len(), items.len())?;
        Ok(self.images.iter().map(|&i| items[i].clone()).collect())
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Permutation::new(v)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.images
    }
}

/// Row-major `n × n` table `d[j·n + i] = dist(x_j, ψ(x_i))`.
pub fn image_distances(points: &[TorusPoint], map: &MinimalMap) -> Result<Vec<f64>> {
    if points.is_empty() {
        return Err(invalid("points", "need at least one point"));
    }
    for p in points {
        check_dim(map.dim(), p.dim())?;
    }
    let images: Vec<TorusPoint> = points.par_iter().map(|p| map.apply_unchecked(p)).collect();
    let n = points.len();
    let mut table = vec![0.0; n * n];
    table.par_chunks_mut(n).zip(points.par_iter()).for_each(|(row, x)| {
        for (cell, y) in row.iter_mut().zip(&images) {
            *cell = dist_unchecked(x, y);
        }
    });
    Ok(table)
}

/// Maximum bipartite matching by Hopcroft–Karp. `adj[j]` lists the right
/// vertices adjacent to left vertex `j`; returns `mate[j]`.
pub fn max_matching(adj: &[Vec<usize>], right: usize) -> Vec<Option<usize>> {
    const FREE: usize = usize::MAX;
    let left = adj.len();
    let mut mate_l = vec![FREE; left];
    let mut mate_r = vec![FREE; right];
    let mut layer = vec![0usize; left];

    loop {
        let mut queue = VecDeque::new();
        for j in 0..left {
            if mate_l[j] == FREE {
                layer[j] = 0;
                queue.push_back(j);
            } else {
                layer[j] = usize::MAX;
            }
        }
        let mut found = false;
        while let Some(j) = queue.pop_front() {
            for &i in &adj[j] {
                match mate_r[i] {
                    FREE => found = true,
                    k if layer[k] == usize::MAX => {
                        layer[k] = layer[j] + 1;
                        queue.push_back(k);
                    }
                    _ => {}
                }
            }
        }
        if !found {
            break;
        }

        let mut cursor = vec![0usize; left];
        let mut progressed = false;
        for root in 0..left {
            if mate_l[root] != FREE {
                continue;
            }
            // Iterative layered DFS; `stack` holds left vertices on the path.
            let mut stack = vec![root];
            while let Some(&j) = stack.last() {
                if cursor[j] == adj[j].len() {
                    layer[j] = usize::MAX;
                    stack.pop();
                    continue;
                }
                let i = adj[j][cursor[j]];
                cursor[j] += 1;
                let k = mate_r[i];
                if k == FREE {
                    // Augment along the stack.
                    let mut right_v = i;
                    while let Some(l) = stack.pop() {
                        let prev = mate_l[l];
                        mate_l[l] = right_v;
                        mate_r[right_v] = l;
                        right_v = prev;
                    }
                    progressed = true;
                    break;
                } else if layer[k] == layer[j].wrapping_add(1) {
                    stack.push(k);
                }
            }
        }
        if !progressed {
            break;
        }
    }
    mate_l.into_iter().map(|i| (i != FREE).then_some(i)).collect()
}

fn perfect_matching_where(n: usize, table: &[f64], accept: impl Fn(f64) -> bool + Sync) -> Option<Permutation> {
    let adj: Vec<Vec<usize>> = table
        .par_chunks(n)
        .map(|row| row.iter().enumerate().filter(|(_, d)| accept(**d)).map(|(i, _)| i).collect())
        .collect();
    let mate = max_matching(&adj, n);
    let images: Option<Vec<usize>> = mate.into_iter().collect();
    images.map(|images| Permutation { images })
}

/// A permutation `s` with `dist(x_j, ψ(x_{s(j)})) < ε` for all `j`, or
/// `None` when the threshold graph has no perfect matching.
pub fn find_matching(points: &[TorusPoint], map: &MinimalMap, eps: f64) -> Result<Option<Permutation>> {
    if !(eps > 0.0) {
        return Err(invalid("eps", "must be positive"));
    }
    let table = image_distances(points, map)?;
    Ok(perfect_matching_where(points.len(), &table, |d| d < eps))
}

/// An optimal bottleneck matching and its value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bottleneck {
    pub epsilon: f64,
    pub permutation: Permutation,
}

/// `ε* = min_s max_j dist(x_j, ψ(x_{s(j)}))` by binary search over the
/// sorted distinct distances, with a matching that attains it.
pub fn min_bottleneck(points: &[TorusPoint], map: &MinimalMap) -> Result<Bottleneck> {
    let table = image_distances(points, map)?;
    let n = points.len();
    let mut values = table.clone();
    values.par_sort_unstable_by(f64::total_cmp);
    values.dedup();

    // The largest value always admits the complete bipartite graph.
    let (mut lo, mut hi) = (0usize, values.len() - 1);
    let mut best = perfect_matching_where(n, &table, |_| true).expect("complete graph has a perfect matching");
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        let t = values[mid];
        match perfect_matching_where(n, &table, |d| d <= t) {
            Some(p) => {
                best = p;
                hi = mid;
            }
            None => lo = mid + 1,
        }
    }
    let epsilon = bottleneck_from_table(n, &table, &best);
    Ok(Bottleneck { epsilon, permutation: best })
}

fn bottleneck_from_table(n: usize, table: &[f64], s: &Permutation) -> f64 {
    s.images.iter().enumerate().map(|(j, &i)| table[j * n + i]).fold(0.0, f64::max)
}

/// `max_j dist(x_j, ψ(x_{s(j)}))`.
pub fn bottleneck_of(points: &[TorusPoint], map: &MinimalMap, s: &Permutation) -> Result<f64> {
    check_dim(points.len(), s.len())?;
    for p in points {
        check_dim(map.dim(), p.dim())?;
    }
    Ok(points
        .iter()
        .enumerate()
        .map(|(j, x)| dist_unchecked(x, &map.apply_unchecked(&points[s.get(j)])))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{circle_dist, circle_grid, golden_theta};
    use itertools::Itertools;
    use proptest::prelude::*;

    fn brute_force(points: &[TorusPoint], map: &MinimalMap) -> f64 {
        let n = points.len();
        let table = image_distances(points, map).unwrap();
        (0..n)
            .permutations(n)
            .map(|p| p.iter().enumerate().map(|(j, &i)| table[j * n + i]).fold(0.0, f64::max))
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn permutation_validation() {
        assert!(Permutation::new(vec![1, 0, 2]).is_ok());
        assert!(Permutation::new(vec![1, 1, 2]).is_err());
        assert!(Permutation::new(vec![0, 3]).is_err());
        let p: Permutation = serde_json::from_str("[2,0,1]").unwrap();
        assert_eq!(serde_json::to_string(&p).unwrap(), "[2,0,1]");
        assert!(serde_json::from_str::<Permutation>("[0,0]").is_err());
    }

    #[test]
    fn permutation_algebra() {
        let p = Permutation::new(vec![2, 0, 1]).unwrap();
        assert!(p.product(&p.inverse()).unwrap().is_identity());
        assert_eq!(p.cycles(), vec![vec![0, 2, 1]]);
        assert_eq!(p.gather(&['a', 'b', 'c']).unwrap(), vec!['c', 'a', 'b']);
        assert_eq!(p.kron_identity(2).images(), &[4, 5, 0, 1, 2, 3]);
        assert_eq!(p.repeat(2).images(), &[2, 0, 1, 5, 3, 4]);
        assert_eq!(Permutation::identity(1).direct_sum(&p).images(), &[0, 3, 1, 2]);
        assert_eq!(Permutation::cyclic_shift(4, -1).images(), &[3, 0, 1, 2]);
    }

    #[test]
    fn exact_matching_on_grid() {
        let pts = circle_grid(5);
        let s = find_matching(&pts, &MinimalMap::rotation(0.2), 1e-9).unwrap().unwrap();
        assert_eq!(s.images(), &[4, 0, 1, 2, 3]);
        let b = min_bottleneck(&pts, &MinimalMap::rotation(0.2)).unwrap();
        assert!(b.epsilon < 1e-12);
    }

    #[test]
    fn large_threshold_accepts_everything() {
        let pts = circle_grid(5);
        let s = find_matching(&pts, &MinimalMap::rotation(0.37), 0.51).unwrap();
        assert!(s.is_some());
    }

    #[test]
    fn theta_point_three_grid() {
        let pts = circle_grid(5);
        let r = MinimalMap::rotation(0.3);
        assert!(find_matching(&pts, &r, 0.11).unwrap().is_some());
        assert!(find_matching(&pts, &r, 0.09).unwrap().is_none());
        let b = min_bottleneck(&pts, &r).unwrap();
        assert!((b.epsilon - 0.1).abs() < 1e-12);
        assert!((brute_force(&pts, &r) - b.epsilon).abs() < 1e-15);
        assert!((bottleneck_of(&pts, &r, &b.permutation).unwrap() - b.epsilon).abs() < 1e-15);
    }

    #[test]
    fn golden_grid_matches_cyclic_shift_oracle() {
        let r = MinimalMap::golden_rotation();
        let n = 89;
        let pts = circle_grid(n);
        let shift_opt = (0..n).map(|k| circle_dist(k as f64 / n as f64, golden_theta())).fold(f64::INFINITY, f64::min);
        let b = min_bottleneck(&pts, &r).unwrap();
        assert!((b.epsilon - shift_opt).abs() < 1e-15);
        assert!(b.epsilon < 1.0 / n as f64);
    }

    #[test]
    fn hopcroft_karp_handles_deficient_graphs() {
        let adj = vec![vec![0], vec![0], vec![1, 2]];
        let mate = max_matching(&adj, 3);
        assert_eq!(mate.iter().filter(|m| m.is_some()).count(), 2);
        let adj = vec![vec![0, 1], vec![0], vec![1, 2]];
        let mate = max_matching(&adj, 3);
        assert_eq!(mate, vec![Some(1), Some(0), Some(2)]);
    }

    #[test]
    fn torus_points_match_exhaustively() {
        let f = MinimalMap::furstenberg(golden_theta(), vec![1], vec![]).unwrap();
        let pts: Vec<TorusPoint> = (0..6)
            .map(|j| TorusPoint::new(vec![j as f64 / 6.0, (j * j) as f64 / 7.0]).unwrap())
            .collect();
        let b = min_bottleneck(&pts, &f).unwrap();
        assert!((b.epsilon - brute_force(&pts, &f)).abs() < 1e-15);
    }

    fn circle_points(max: usize) -> impl Strategy<Value = Vec<TorusPoint>> {
        proptest::collection::vec(0.0..1.0f64, 1..=max)
            .prop_map(|xs| xs.into_iter().map(TorusPoint::circle).collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn bottleneck_matches_exhaustive_search(pts in circle_points(7), theta in 0.0..1.0f64) {
            let r = MinimalMap::rotation(theta);
            let b = min_bottleneck(&pts, &r).unwrap();
            prop_assert_eq!(b.epsilon, brute_force(&pts, &r));
        }

        #[test]
        fn threshold_succeeds_iff_above_bottleneck(pts in circle_points(12), theta in 0.0..1.0f64, bump in 1e-9..0.05f64) {
            let r = MinimalMap::rotation(theta);
            let b = min_bottleneck(&pts, &r).unwrap();
            prop_assert!(find_matching(&pts, &r, b.epsilon + bump).unwrap().is_some());
            if b.epsilon > 0.0 {
                prop_assert!(find_matching(&pts, &r, b.epsilon).unwrap().is_none());
            }
        }

        #[test]
        fn relabeling_conjugates_the_matching(pts in circle_points(10), theta in 0.0..1.0f64, seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let n = pts.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let pi = Permutation::new(order).unwrap();
            let relabeled = pi.gather(&pts).unwrap();
            let r = MinimalMap::rotation(theta);
            let b = min_bottleneck(&pts, &r).unwrap();
            let b2 = min_bottleneck(&relabeled, &r).unwrap();
            prop_assert_eq!(b.epsilon, b2.epsilon);
            // π s π⁻¹ transported to the relabeled set attains the same bottleneck.
            let conj = pi.product(&b.permutation).unwrap().product(&pi.inverse()).unwrap();
            prop_assert_eq!(bottleneck_of(&relabeled, &r, &conj).unwrap(), b.epsilon);
        }
    }
}
