//! Sparse directed flow graphs and the random-walk transition matrices
//! derived from them.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Directed weighted adjacency among `n` regions for one interval.
///
/// Entries are sorted by `(src, dst)`, unique, and strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseFlowMatrix {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseFlowMatrix {
    pub fn empty(n: usize) -> Self {
        SparseFlowMatrix { n, entries: Vec::new() }
    }

    /// Builds a matrix from unordered triplets. Duplicate pairs are summed and
    /// zero results dropped.
    pub fn from_triplets(
        n: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for (i, j, w) in triplets {
            if i >= n || j >= n {
                return Err(Error::Range(format!("flow entry ({i},{j}) outside {n} regions")));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!("flow weight {w} at ({i},{j})")));
            }
            entries.push((i, j, w));
        }
        entries.sort_by_key(|&(i, j, _)| (i, j));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for (i, j, w) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += w,
                _ => merged.push((i, j, w)),
            }
        }
        merged.retain(|e| e.2 > 0.0);
        Ok(SparseFlowMatrix { n, entries: merged })
    }

    pub fn from_dense(n: usize, dense: &[f64]) -> Result<Self> {
        if dense.len() != n * n {
            return shape_err(format!("dense flow needs {} values, got {}", n * n, dense.len()));
        }
        Self::from_triplets(
            n,
            dense
                .iter()
                .enumerate()
                .filter(|(_, &w)| w != 0.0)
                .map(|(idx, &w)| (idx / n, idx % n, w)),
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// Number of edges `|E|`.
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self.entries.binary_search_by_key(&(i, j), |&(a, b, _)| (a, b)) {
            Ok(pos) => self.entries[pos].2,
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n * self.n];
        for &(i, j, w) in &self.entries {
            d[i * self.n + j] = w;
        }
        d
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n];
        for &(i, _, w) in &self.entries {
            s[i] += w;
        }
        s
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n];
        for &(_, j, w) in &self.entries {
            s[j] += w;
        }
        s
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.2).sum()
    }

    pub fn map_weights(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_triplets(self.n, self.entries.iter().map(|&(i, j, w)| (i, j, f(w))))
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        self.map_weights(|w| w * c)
    }

    /// Regions flow-connected to `i` in either direction, excluding `i`.
    pub fn receptive_field(&self, i: usize) -> Result<BTreeSet<usize>> {
        if i >= self.n {
            return Err(Error::Range(format!("region {i} outside {} regions", self.n)));
        }
        Ok(self
            .entries
            .iter()
            .filter_map(|&(a, b, _)| {
                if a == i && b != i {
                    Some(b)
                } else if b == i && a != i {
                    Some(a)
                } else {
                    None
                }
            })
            .collect())
    }

    /// Receptive fields of every region in one pass.
    pub fn receptive_fields(&self) -> Vec<BTreeSet<usize>> {
        let mut fields = vec![BTreeSet::new(); self.n];
        for &(a, b, _) in &self.entries {
            if a != b {
                fields[a].insert(b);
                fields[b].insert(a);
            }
        }
        fields
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_sorted_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut indptr = vec![0usize; rows + 1];
        for &(i, _, _) in triplets {
            indptr[i + 1] += 1;
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        CsrMatrix {
            rows,
            cols,
            indptr,
            indices: triplets.iter().map(|t| t.1).collect(),
            values: triplets.iter().map(|t| t.2).collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.rows * self.cols];
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                d[i * self.cols + j] += v;
            }
        }
        d
    }

    /// `y = A s` for a single column `s`.
    pub fn spmv(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.spmm(s, 1)
    }

    /// `Y = A X` where `X` is `cols x c`, row-major.
    pub fn spmm(&self, x: &[f64], c: usize) -> Result<Vec<f64>> {
        if x.len() != self.cols * c {
            return shape_err(format!(
                "spmm: matrix is {}x{}, signal has {} values for {c} channels",
                self.rows,
                self.cols,
                x.len()
            ));
        }
        let mut y = vec![0.0; self.rows * c];
        self.spmm_into(x, c, &mut y);
        Ok(y)
    }

    pub(crate) fn spmm_into(&self, x: &[f64], c: usize, y: &mut [f64]) {
        for i in 0..self.rows {
            let out = &mut y[i * c..(i + 1) * c];
            out.iter_mut().for_each(|v| *v = 0.0);
            for (j, a) in self.row(i) {
                let src = &x[j * c..(j + 1) * c];
                for (o, s) in out.iter_mut().zip(src) {
                    *o += a * s;
                }
            }
        }
    }

    /// `Y += Aᵀ X` where `X` is `rows x c`.
    pub(crate) fn spmm_transpose_acc(&self, x: &[f64], c: usize, y: &mut [f64]) {
        for i in 0..self.rows {
            let src = &x[i * c..(i + 1) * c];
            for (j, a) in self.row(i) {
                let out = &mut y[j * c..(j + 1) * c];
                for (o, s) in out.iter_mut().zip(src) {
                    *o += a * s;
                }
            }
        }
    }
}

/// Sparse matrix-vector product `m · s`.
pub fn spmv(m: &CsrMatrix, s: &[f64]) -> Result<Vec<f64>> {
    m.spmv(s)
}

/// Forward and backward random-walk transition matrices of one flow graph:
/// `out = D_O⁻¹ f` and `in = D_I⁻¹ fᵀ`. Rows without flow stay all-zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionPair {
    pub out_transition: CsrMatrix,
    pub in_transition: CsrMatrix,
}

impl TransitionPair {
    pub fn n(&self) -> usize {
        self.out_transition.rows()
    }
}

/// Builds both transition matrices in `O(N + |E|)`.
pub fn make_transitions(f: &SparseFlowMatrix) -> TransitionPair {
    let n = f.n();
    let out_deg = f.row_sums();
    let in_deg = f.column_sums();

    let out_trip: Vec<_> = f
        .entries()
        .iter()
        .map(|&(i, j, w)| (i, j, w / out_deg[i]))
        .collect();
    let out_transition = CsrMatrix::from_sorted_triplets(n, n, &out_trip);

    // counting sort by destination gives fᵀ in row order
    let mut indptr = vec![0usize; n + 1];
    for &(_, j, _) in f.entries() {
        indptr[j + 1] += 1;
    }
    for r in 0..n {
        indptr[r + 1] += indptr[r];
    }
    let mut cursor = indptr.clone();
    let mut indices = vec![0usize; f.nnz()];
    let mut values = vec![0.0; f.nnz()];
    for &(i, j, w) in f.entries() {
        let slot = cursor[j];
        indices[slot] = i;
        values[slot] = w / in_deg[j];
        cursor[j] += 1;
    }
    let in_transition = CsrMatrix {
        rows: n,
        cols: n,
        indptr,
        indices,
        values,
    };

    TransitionPair {
        out_transition,
        in_transition,
    }
}
