//! Compressed sparse row storage and a profile (envelope) `LDLᵀ` solver.
//!
//! Matrices are stored with both triangles in CSR form, columns sorted
//! within each row. The direct solver reorders with reverse Cuthill–McKee
//! and factors the variable-band profile without pivoting; for the
//! symmetric positive definite systems of this crate that is stable, and for
//! shifted indefinite pencils tiny pivots are reported as [`Error::Singular`].

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from triplets, summing duplicates. Entries are merged in a
    /// stable `(row, col)` order, so the result does not depend on how the
    /// triplets were produced as long as their sequence is fixed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < n && c < n, "triplet ({r}, {c}) out of range for n = {n}");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |p| vals[p])
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).map(move |(&j, &x)| (i, j, x))
        })
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            let mut acc = 0.0;
            for (&j, &a) in c.iter().zip(v) {
                acc += a * x[j];
            }
            *yi = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    /// `xᵀ A y`.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.n)
            .map(|i| {
                let (c, v) = self.row(i);
                let mut acc = 0.0;
                for (&j, &a) in c.iter().zip(v) {
                    acc += a * y[j];
                }
                x[i] * acc
            })
            .sum()
    }

    /// `a·self + b·other` for two matrices with the same sparsity pattern.
    pub fn lin_comb(&self, a: f64, other: &CsrMatrix, b: f64) -> CsrMatrix {
        assert!(self.row_ptr == other.row_ptr && self.cols == other.cols, "pattern mismatch");
        let vals = self.vals.iter().zip(&other.vals).map(|(x, y)| a * x + b * y).collect();
        CsrMatrix { n: self.n, row_ptr: self.row_ptr.clone(), cols: self.cols.clone(), vals }
    }

    pub fn same_pattern(&self, other: &CsrMatrix) -> bool {
        self.row_ptr == other.row_ptr && self.cols == other.cols
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        self.triplets().map(|(i, j, v)| (v - self.get(j, i)).abs()).fold(0.0, f64::max)
    }

    /// Dense principal submatrix on `idx` (row-major `k × k`).
    pub fn principal_submatrix(&self, idx: &[usize]) -> Vec<f64> {
        let k = idx.len();
        let mut out = vec![0.0; k * k];
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                out[a * k + b] = self.get(i, j);
            }
        }
        out
    }

    pub fn values(&self) -> &[f64] {
        &self.vals
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut out = nalgebra::DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.triplets() {
            out[(i, j)] = v;
        }
        out
    }
}

/// Reverse Cuthill–McKee ordering of the symmetric pattern, starting each
/// component from a pseudo-peripheral vertex. Returns `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let bfs_levels = |root: usize, mask: &[bool]| -> Vec<Vec<usize>> {
        let mut seen = mask.to_vec();
        seen[root] = true;
        let mut levels = vec![vec![root]];
        loop {
            let mut next = Vec::new();
            for &u in levels.last().unwrap() {
                for &v in a.row(u).0 {
                    if !seen[v] {
                        seen[v] = true;
                        next.push(v);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            levels.push(next);
        }
        levels
    };

    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        // pseudo-peripheral start: repeatedly jump to a min-degree vertex of
        // the last BFS level while the eccentricity grows
        let mut root = seed;
        let mut levels = bfs_levels(root, &visited);
        loop {
            let cand = *levels.last().unwrap().iter().min_by_key(|&&v| (degree[v], v)).unwrap();
            let cand_levels = bfs_levels(cand, &visited);
            if cand_levels.len() > levels.len() {
                root = cand;
                levels = cand_levels;
            } else {
                break;
            }
        }
        let start = order.len();
        visited[root] = true;
        order.push(root);
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            let mut nbrs: Vec<usize> = a.row(u).0.iter().copied().filter(|&v| !visited[v]).collect();
            nbrs.sort_by_key(|&v| (degree[v], v));
            for v in nbrs {
                visited[v] = true;
                order.push(v);
                queue.push_back(v);
            }
        }
        order[start..].reverse();
    }
    order.reverse();
    order
}

/// Profile `LDLᵀ` factorization with a fill-reducing symmetric permutation.
#[derive(Clone, Debug)]
pub struct EnvelopeLdl {
    n: usize,
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
    /// First stored column of each (permuted) row.
    first: Vec<usize>,
    /// Start of each row's strictly-lower segment in `lower`.
    offset: Vec<usize>,
    lower: Vec<f64>,
    diag: Vec<f64>,
}

impl EnvelopeLdl {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let perm = reverse_cuthill_mckee(a);
        Self::factor_with_perm(a, perm)
    }

    pub fn factor_with_perm(a: &CsrMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = a.n();
        let mut inv_perm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv_perm[old] = new;
        }
        let mut first = vec![0usize; n];
        for i in 0..n {
            let old = perm[i];
            first[i] = a.row(old).0.iter().map(|&c| inv_perm[c]).filter(|&c| c <= i).min().unwrap_or(i);
        }
        let mut offset = vec![0usize; n + 1];
        for i in 0..n {
            offset[i + 1] = offset[i] + (i - first[i]);
        }
        let mut lower = vec![0.0; offset[n]];
        let mut diag = vec![0.0; n];
        for i in 0..n {
            let old = perm[i];
            let (cols, vals) = a.row(old);
            for (&c, &v) in cols.iter().zip(vals) {
                let j = inv_perm[c];
                if j < i {
                    lower[offset[i] + j - first[i]] = v;
                } else if j == i {
                    diag[i] = v;
                }
            }
        }

        let scale = diag.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        // row-oriented LDLᵀ: row i holds t_ij = l_ij d_j during the sweep
        for i in 0..n {
            let fi = first[i];
            let (done, rest) = lower.split_at_mut(offset[i]);
            let row_i = &mut rest[..i - fi];
            for j in fi..i {
                let fj = first[j];
                let lo = fi.max(fj);
                let row_j = &done[offset[j]..offset[j] + (j - fj)];
                let mut acc = 0.0;
                for k in lo..j {
                    acc += row_i[k - fi] * row_j[k - fj];
                }
                row_i[j - fi] -= acc;
            }
            let mut dsum = 0.0;
            for j in fi..i {
                let t = row_i[j - fi];
                let l = t / diag[j];
                dsum += t * l;
                row_i[j - fi] = l;
            }
            let d = diag[i] - dsum;
            if !d.is_finite() || d.abs() <= 1e-13 * scale {
                return Err(Error::Singular(format!("pivot {d:e} at row {i} of {n}")));
            }
            diag[i] = d;
        }
        Ok(Self { n, perm, inv_perm, first, offset, lower, diag })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of negative pivots, i.e. the inertia count of eigenvalues
    /// below zero (Sylvester).
    pub fn negative_pivots(&self) -> usize {
        self.diag.iter().filter(|&&d| d < 0.0).count()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut y: Vec<f64> = (0..n).map(|i| b[self.perm[i]]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.lower[self.offset[i]..self.offset[i] + (i - fi)];
            let mut acc = 0.0;
            for (k, &l) in row.iter().enumerate() {
                acc += l * y[fi + k];
            }
            y[i] -= acc;
        }
        for i in 0..n {
            y[i] /= self.diag[i];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let yi = y[i];
            let row = &self.lower[self.offset[i]..self.offset[i] + (i - fi)];
            for (k, &l) in row.iter().enumerate() {
                y[fi + k] -= l * yi;
            }
        }
        (0..n).map(|old| y[self.inv_perm[old]]).collect()
    }

    pub fn profile_size(&self) -> usize {
        self.lower.len()
    }
}
