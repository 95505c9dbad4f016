//! Sparse Cholesky factorization of the reduced camera system with a
//! minimum-degree fill-reducing ordering.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lower triangle of a symmetric matrix in compressed-column form.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricCsc {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SymmetricCsc {
    /// Keeps the structurally non-zero entries of the lower triangle.
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for j in 0..n {
            for i in j..n {
                let v = m[(i, j)];
                if v != 0.0 || i == j {
                    row_idx.push(i);
                    values.push(v);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Self {
            n,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[p];
                if i != j {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        adj
    }

    /// `P A P^T` where `perm[new] = old`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n;
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for j in 0..n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let (a, b) = (inv[self.row_idx[p]], inv[j]);
                let (r, c) = if a >= b { (a, b) } else { (b, a) };
                cols[c].push((r, self.values[p]));
            }
        }
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for mut c in cols {
            c.sort_by_key(|e| e.0);
            for (r, v) in c {
                row_idx.push(r);
                values.push(v);
            }
            col_ptr.push(row_idx.len());
        }
        Self {
            n,
            col_ptr,
            row_idx,
            values,
        }
    }
}

/// Fixed-width bitset over `n` nodes.
#[derive(Clone)]
struct BitRow(Vec<u64>);

impl BitRow {
    fn new(n: usize) -> Self {
        Self(vec![0; n.div_ceil(64)])
    }
    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
    fn clear(&mut self, i: usize) {
        self.0[i / 64] &= !(1 << (i % 64));
    }
    fn count(&self) -> u32 {
        self.0.iter().map(|w| w.count_ones()).sum()
    }
    fn union_with(&mut self, other: &BitRow) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a |= b;
        }
    }
    fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().flat_map(|(w, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    None
                } else {
                    let t = bits.trailing_zeros() as usize;
                    bits &= bits - 1;
                    Some(w * 64 + t)
                }
            })
        })
    }
}

/// Exact minimum-degree ordering on the elimination graph (ties broken by index).
/// Returns `perm` with `perm[new] = old`.
pub fn minimum_degree_ordering(a: &SymmetricCsc) -> Vec<usize> {
    let n = a.n;
    let mut adj: Vec<BitRow> = vec![BitRow::new(n); n];
    for (i, nbrs) in a.adjacency().into_iter().enumerate() {
        for j in nbrs {
            adj[i].set(j);
        }
    }
    let mut alive = vec![true; n];
    let mut degree: Vec<u32> = adj.iter().map(|r| r.count()).collect();
    let mut perm = Vec::with_capacity(n);
    for _ in 0..n {
        let v = (0..n)
            .filter(|&i| alive[i])
            .min_by_key(|&i| (degree[i], i))
            .expect("a node remains");
        alive[v] = false;
        perm.push(v);
        let nbrs: Vec<usize> = adj[v].ones().collect();
        let row_v = adj[v].clone();
        for &u in &nbrs {
            adj[u].union_with(&row_v);
            adj[u].clear(u);
            adj[u].clear(v);
            degree[u] = adj[u].count();
        }
    }
    perm
}

pub fn is_permutation(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || seen[p] {
            return false;
        }
        seen[p] = true;
    }
    true
}

/// Cholesky factor `L` of a permuted matrix, stored column-wise with sorted rows
/// and the diagonal first in each column.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
    pub perm: Vec<usize>,
}

impl CholeskyFactor {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Solves `A x = b` for the original (unpermuted) matrix.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for j in 0..n {
            let start = self.col_ptr[j];
            y[j] /= self.values[start];
            let yj = y[j];
            for p in start + 1..self.col_ptr[j + 1] {
                y[self.row_idx[p]] -= self.values[p] * yj;
            }
        }
        for j in (0..n).rev() {
            let start = self.col_ptr[j];
            let mut s = y[j];
            for p in start + 1..self.col_ptr[j + 1] {
                s -= self.values[p] * y[self.row_idx[p]];
            }
            y[j] = s / self.values[start];
        }
        let mut x = DVector::zeros(n);
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

/// Column patterns of `L` (each sorted, diagonal first) via the elimination tree.
fn symbolic(a: &SymmetricCsc) -> Vec<Vec<usize>> {
    let n = a.n;
    let mut patterns: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut mark = vec![usize::MAX; n];
    for j in 0..n {
        let mut rows = vec![j];
        mark[j] = j;
        for p in a.col_ptr[j]..a.col_ptr[j + 1] {
            let i = a.row_idx[p];
            if mark[i] != j {
                mark[i] = j;
                rows.push(i);
            }
        }
        for &c in &children[j] {
            for &i in &patterns[c] {
                if i > j && mark[i] != j {
                    mark[i] = j;
                    rows.push(i);
                }
            }
        }
        rows[1..].sort_unstable();
        if rows.len() > 1 {
            children[rows[1]].push(j);
        }
        patterns.push(rows);
    }
    patterns
}

/// Factors `A` (given in its original ordering) after applying `perm`.
pub fn cholesky(a: &SymmetricCsc, perm: Vec<usize>) -> Result<CholeskyFactor> {
    let pa = a.permuted(&perm);
    let n = pa.n;
    let patterns = symbolic(&pa);
    let mut col_ptr = Vec::with_capacity(n + 1);
    col_ptr.push(0);
    for p in &patterns {
        col_ptr.push(col_ptr.last().unwrap() + p.len());
    }
    let row_idx: Vec<usize> = patterns.iter().flatten().copied().collect();
    let mut values = vec![0.0; row_idx.len()];
    // Columns k < j with a non-zero in row j.
    let mut row_lists: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, p) in patterns.iter().enumerate() {
        for &i in &p[1..] {
            row_lists[i].push(k);
        }
    }
    let mut next: Vec<usize> = (0..n).map(|k| col_ptr[k] + 1).collect();
    let mut x = vec![0.0; n];
    for j in 0..n {
        for p in pa.col_ptr[j]..pa.col_ptr[j + 1] {
            x[pa.row_idx[p]] = pa.values[p];
        }
        for &k in &row_lists[j] {
            let p = next[k];
            let ljk = values[p];
            for q in p..col_ptr[k + 1] {
                x[row_idx[q]] -= ljk * values[q];
            }
            next[k] += 1;
        }
        let d = x[j];
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite {
                column: perm[j],
                pivot: d,
            });
        }
        let ljj = d.sqrt();
        let start = col_ptr[j];
        values[start] = ljj;
        x[j] = 0.0;
        for q in start + 1..col_ptr[j + 1] {
            let i = row_idx[q];
            values[q] = x[i] / ljj;
            x[i] = 0.0;
        }
    }
    Ok(CholeskyFactor {
        n,
        col_ptr,
        row_idx,
        values,
        perm,
    })
}

/// Result of [`sparse_factor_solve`].
#[derive(Debug, Clone)]
pub struct SparseSolution {
    pub x: DVector<f64>,
    /// Diagonal shift that finally made the system factorable (0 if none was needed).
    pub shift: f64,
    pub factor_nnz: usize,
}

/// Maximum number of diagonal-shift doublings before giving up.
const MAX_SHIFT_DOUBLINGS: usize = 5;

/// Solves the reduced normal equations with a minimum-degree ordered Cholesky.
/// A factorization failure adds a diagonal shift (relative to the largest
/// diagonal entry) that doubles on each retry.
pub fn sparse_factor_solve(matrix: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<SparseSolution> {
    let n = matrix.nrows();
    if n == 0 {
        return Ok(SparseSolution {
            x: DVector::zeros(0),
            shift: 0.0,
            factor_nnz: 0,
        });
    }
    let csc = SymmetricCsc::from_dense(matrix);
    let perm = minimum_degree_ordering(&csc);
    let max_diag = (0..n)
        .map(|i| matrix[(i, i)].abs())
        .fold(0.0, f64::max)
        .max(1e-300);
    let mut shift = 0.0;
    let mut last_err = None;
    for attempt in 0..=MAX_SHIFT_DOUBLINGS + 1 {
        let mut a = csc.clone();
        if shift > 0.0 {
            for j in 0..n {
                a.values[a.col_ptr[j]] += shift;
            }
        }
        match cholesky(&a, perm.clone()) {
            Ok(f) => {
                return Ok(SparseSolution {
                    x: f.solve(rhs),
                    shift,
                    factor_nnz: f.nnz(),
                })
            }
            Err(e) => last_err = Some(e),
        }
        shift = if attempt == 0 {
            1e-9 * max_diag
        } else {
            shift * 2.0
        };
    }
    Err(last_err.expect("at least one attempt"))
}
