//! Compressed-row sparse matrices, ILU(0) and an envelope (skyline) Cholesky
//! factorization with reverse Cuthill-McKee ordering.

use std::collections::VecDeque;
use std::io::Write;

use crate::error::{check_len, invalid, Error, Result};

/// CSR matrix with sorted, duplicate-free column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

/// Coordinate-format accumulator; duplicates are summed on conversion.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            ..Default::default()
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            rows: Vec::with_capacity(cap),
            cols: Vec::with_capacity(cap),
            vals: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        self.rows.push(i);
        self.cols.push(j);
        self.vals.push(v);
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn build(self) -> CsrMatrix {
        let n = self.nrows;
        let mut count = vec![0usize; n + 1];
        for &r in &self.rows {
            count[r + 1] += 1;
        }
        for i in 0..n {
            count[i + 1] += count[i];
        }
        let mut pos = count.clone();
        let nnz = self.vals.len();
        let mut cols = vec![0usize; nnz];
        let mut vals = vec![0.0; nnz];
        for k in 0..nnz {
            let r = self.rows[k];
            cols[pos[r]] = self.cols[k];
            vals[pos[r]] = self.vals[k];
            pos[r] += 1;
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut out_vals = Vec::with_capacity(nnz);
        row_ptr.push(0);
        let mut perm: Vec<usize> = Vec::new();
        for i in 0..n {
            let (s, e) = (count[i], count[i + 1]);
            perm.clear();
            perm.extend(s..e);
            perm.sort_unstable_by_key(|&k| cols[k]);
            let mut last = usize::MAX;
            for &k in &perm {
                if cols[k] == last {
                    *out_vals.last_mut().unwrap() += vals[k];
                } else {
                    col_idx.push(cols[k]);
                    out_vals.push(vals[k]);
                    last = cols[k];
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            nrows: n,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            vals: out_vals,
        }
    }
}

impl CsrMatrix {
    pub fn from_parts(
        nrows: usize,
        ncols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        vals: Vec<f64>,
    ) -> Result<Self> {
        check_len(nrows + 1, row_ptr.len())?;
        check_len(col_idx.len(), vals.len())?;
        if row_ptr[nrows] != col_idx.len() || row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return invalid("inconsistent row pointers");
        }
        for i in 0..nrows {
            let r = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            if r.windows(2).any(|w| w[0] >= w[1]) || r.iter().any(|&c| c >= ncols) {
                return invalid(format!("row {i} has unsorted or out-of-range columns"));
            }
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            vals,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.vals
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[s..e], &self.vals[s..e])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        match c.binary_search(&j) {
            Ok(k) => v[k],
            Err(_) => 0.0,
        }
    }

    pub fn max_row_nnz(&self) -> usize {
        self.row_ptr
            .windows(2)
            .map(|w| w[1] - w[0])
            .max()
            .unwrap_or(0)
    }

    /// `y = A x`
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut acc = 0.0;
            for k in s..e {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|i| self.get(i, i))
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut b = TripletBuilder::with_capacity(self.ncols, self.nrows, self.nnz());
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                b.push(j, i, a);
            }
        }
        b.build()
    }

    /// `self * other`
    pub fn matmul(&self, other: &CsrMatrix) -> Result<CsrMatrix> {
        check_len(self.ncols, other.nrows)?;
        let mut acc = vec![0.0; other.ncols];
        let mut mark = vec![usize::MAX; other.ncols];
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        let mut touched: Vec<usize> = Vec::new();
        for i in 0..self.nrows {
            touched.clear();
            let (ca, va) = self.row(i);
            for (&k, &a) in ca.iter().zip(va) {
                let (cb, vb) = other.row(k);
                for (&j, &b) in cb.iter().zip(vb) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = 0.0;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                col_idx.push(j);
                vals.push(acc[j]);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(CsrMatrix {
            nrows: self.nrows,
            ncols: other.ncols,
            row_ptr,
            col_idx,
            vals,
        })
    }

    /// Replaces rows and columns in `dofs` by those of the identity.
    pub fn constrain_symmetric(&mut self, dofs: &[usize]) {
        let mut mark = vec![false; self.nrows.max(self.ncols)];
        for &d in dofs {
            mark[d] = true;
        }
        for i in 0..self.nrows {
            let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
            for k in s..e {
                let j = self.col_idx[k];
                if mark[i] || mark[j] {
                    self.vals[k] = if i == j { 1.0 } else { 0.0 };
                }
            }
        }
    }

    /// Symmetric permutation `B[i][j] = A[perm[i]][perm[j]]`.
    pub fn permute_symmetric(&self, perm: &[usize]) -> CsrMatrix {
        let n = self.nrows;
        let mut inv = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let mut b = TripletBuilder::with_capacity(n, n, self.nnz());
        for (i, &p) in perm.iter().enumerate() {
            let (c, v) = self.row(p);
            for (&j, &a) in c.iter().zip(v) {
                b.push(i, inv[j], a);
            }
        }
        b.build()
    }

    pub fn to_dense(&self) -> crate::dense::DenseMatrix {
        let mut m = crate::dense::DenseMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                m[(i, j)] = a;
            }
        }
        m
    }

    /// Matrix Market coordinate (general, real) output with 1-based indices.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                writeln!(w, "{} {} {:.17e}", i + 1, j + 1, a)?;
            }
        }
        Ok(())
    }
}

/// Incomplete LU factorization with zero fill, computed in a given row
/// ordering. `L` is unit lower triangular; both factors share `A`'s pattern.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    lu: CsrMatrix,
    diag_pos: Vec<usize>,
    perm: Vec<usize>,
}

impl Ilu0 {
    /// Factors `P A P^T` where row `i` of the permuted matrix is row
    /// `perm[i]` of `a`.
    pub fn new(a: &CsrMatrix, perm: &[usize]) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || perm.len() != n {
            return invalid("ILU(0) needs a square matrix and a full permutation");
        }
        let mut lu = a.permute_symmetric(perm);
        let mut diag_pos = vec![usize::MAX; n];
        for (i, dp) in diag_pos.iter_mut().enumerate() {
            let (c, _) = lu.row(i);
            match c.binary_search(&i) {
                Ok(k) => *dp = lu.row_ptr[i] + k,
                Err(_) => return Err(Error::ZeroPivot { row: i, value: 0.0 }),
            }
        }
        let scale = lu.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (s, e) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for k in s..e {
                pos[lu.col_idx[k]] = k;
            }
            for k in s..e {
                let kc = lu.col_idx[k];
                if kc >= i {
                    break;
                }
                let piv = lu.vals[diag_pos[kc]];
                let f = lu.vals[k] / piv;
                lu.vals[k] = f;
                let (ks, ke) = (diag_pos[kc] + 1, lu.row_ptr[kc + 1]);
                for kk in ks..ke {
                    let j = lu.col_idx[kk];
                    let p = pos[j];
                    if p != usize::MAX {
                        lu.vals[p] -= f * lu.vals[kk];
                    }
                }
            }
            let d = lu.vals[diag_pos[i]];
            if !(d.abs() > 1e-14 * scale) {
                return Err(Error::ZeroPivot { row: i, value: d });
            }
            for k in s..e {
                pos[lu.col_idx[k]] = usize::MAX;
            }
        }
        Ok(Self {
            lu,
            diag_pos,
            perm: perm.to_vec(),
        })
    }

    /// `x = (LU)^{-1} b` in the original ordering; `work` has length n.
    pub fn solve(&self, b: &[f64], x: &mut [f64], work: &mut [f64]) {
        let n = self.lu.nrows;
        for i in 0..n {
            work[i] = b[self.perm[i]];
        }
        for i in 0..n {
            let mut s = work[i];
            for k in self.lu.row_ptr[i]..self.diag_pos[i] {
                s -= self.lu.vals[k] * work[self.lu.col_idx[k]];
            }
            work[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = work[i];
            for k in self.diag_pos[i] + 1..self.lu.row_ptr[i + 1] {
                s -= self.lu.vals[k] * work[self.lu.col_idx[k]];
            }
            work[i] = s / self.lu.vals[self.diag_pos[i]];
        }
        for i in 0..n {
            x[self.perm[i]] = work[i];
        }
    }

    /// `x = (LU)^{-T} b`: `U^T` forward, then `L^T` backward.
    pub fn solve_transpose(&self, b: &[f64], x: &mut [f64], work: &mut [f64]) {
        let n = self.lu.nrows;
        for i in 0..n {
            work[i] = b[self.perm[i]];
        }
        // U^T y = b: column sweep over rows of U
        for i in 0..n {
            let yi = work[i] / self.lu.vals[self.diag_pos[i]];
            work[i] = yi;
            for k in self.diag_pos[i] + 1..self.lu.row_ptr[i + 1] {
                work[self.lu.col_idx[k]] -= self.lu.vals[k] * yi;
            }
        }
        // L^T z = y
        for i in (0..n).rev() {
            let zi = work[i];
            for k in self.lu.row_ptr[i]..self.diag_pos[i] {
                work[self.lu.col_idx[k]] -= self.lu.vals[k] * zi;
            }
        }
        for i in 0..n {
            x[self.perm[i]] = work[i];
        }
    }
}

/// Reverse Cuthill-McKee ordering of the symmetric pattern of `a`.
/// `perm[new] = old`.
pub fn rcm_ordering(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut nbrs = Vec::new();
    while order.len() < n {
        // start each component from a minimum-degree vertex
        let start = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| degree[i])
            .unwrap();
        let start = pseudo_peripheral(a, start, &visited);
        let mut queue = VecDeque::new();
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            nbrs.clear();
            nbrs.extend(a.row(v).0.iter().copied().filter(|&j| !visited[j]));
            nbrs.sort_by_key(|&j| degree[j]);
            for &j in &nbrs {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}

fn pseudo_peripheral(a: &CsrMatrix, start: usize, blocked: &[bool]) -> usize {
    let mut root = start;
    let mut ecc = 0;
    for _ in 0..8 {
        let (levels, last) = bfs_levels(a, root, blocked);
        if levels <= ecc {
            break;
        }
        ecc = levels;
        root = last;
    }
    root
}

fn bfs_levels(a: &CsrMatrix, root: usize, blocked: &[bool]) -> (usize, usize) {
    let n = a.nrows();
    let mut level = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    level[root] = 0;
    queue.push_back(root);
    let mut last = root;
    while let Some(v) = queue.pop_front() {
        // prefer the minimum-degree vertex in the final level
        if level[v] > level[last]
            || (level[v] == level[last] && a.row(v).0.len() < a.row(last).0.len())
        {
            last = v;
        }
        for &j in a.row(v).0 {
            if !blocked[j] && level[j] == usize::MAX {
                level[j] = level[v] + 1;
                queue.push_back(j);
            }
        }
    }
    (level[last], last)
}

/// Envelope (variable-band) Cholesky factorization `P A P^T = L L^T` of a
/// symmetric positive definite matrix, with RCM ordering.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    n: usize,
    perm: Vec<usize>,
    /// First column stored in row `i` of `L`.
    first: Vec<usize>,
    /// Start of row `i` in `vals`; row `i` holds columns `first[i]..=i`.
    start: Vec<usize>,
    vals: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let perm = rcm_ordering(a);
        Self::with_ordering(a, perm)
    }

    pub fn with_ordering(a: &CsrMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return invalid("Cholesky needs a square matrix");
        }
        let pa = a.permute_symmetric(&perm);
        let mut first = vec![0usize; n];
        for (i, f) in first.iter_mut().enumerate() {
            *f = pa.row(i).0.first().copied().unwrap_or(i).min(i);
        }
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        let mut vals = vec![0.0; start[n]];
        for i in 0..n {
            let (c, v) = pa.row(i);
            for (&j, &x) in c.iter().zip(v) {
                if j <= i {
                    vals[start[i] + j - first[i]] = x;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let mut s = vals[start[i] + j - fi];
                let ri = &vals[start[i] + k0 - fi..start[i] + j - fi];
                let rj = &vals[start[j] + k0 - fj..start[j] + j - fj];
                for (a, b) in ri.iter().zip(rj) {
                    s -= a * b;
                }
                vals[start[i] + j - fi] = s / vals[start[j] + j - fj];
            }
            let row = &vals[start[i]..start[i] + i - fi];
            let d = vals[start[i] + i - fi] - row.iter().map(|v| v * v).sum::<f64>();
            if !(d > 0.0) {
                return Err(Error::NotPositiveDefinite { row: perm[i] });
            }
            vals[start[i] + i - fi] = d.sqrt();
        }
        Ok(Self {
            n,
            perm,
            first,
            start,
            vals,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored entries of `L`.
    pub fn envelope_size(&self) -> usize {
        self.vals.len()
    }

    pub fn solve(&self, b: &[f64], x: &mut [f64]) {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.vals[self.start[i]..self.start[i] + i - fi];
            let mut s = y[i];
            for (a, yy) in row.iter().zip(&y[fi..i]) {
                s -= a * yy;
            }
            y[i] = s / self.vals[self.start[i] + i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            y[i] /= self.vals[self.start[i] + i - fi];
            let yi = y[i];
            let row = &self.vals[self.start[i]..self.start[i] + i - fi];
            for (a, yy) in row.iter().zip(y[fi..i].iter_mut()) {
                *yy -= a * yi;
            }
        }
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_2d(n: usize) -> CsrMatrix {
        let mut b = TripletBuilder::new(n * n, n * n);
        for j in 0..n {
            for i in 0..n {
                let r = i + n * j;
                b.push(r, r, 4.0);
                if i > 0 {
                    b.push(r, r - 1, -1.0);
                }
                if i + 1 < n {
                    b.push(r, r + 1, -1.0);
                }
                if j > 0 {
                    b.push(r, r - n, -1.0);
                }
                if j + 1 < n {
                    b.push(r, r + n, -1.0);
                }
            }
        }
        b.build()
    }

    #[test]
    fn triplets_sum_duplicates() {
        let mut b = TripletBuilder::new(2, 3);
        b.push(1, 2, 1.0);
        b.push(0, 1, 2.0);
        b.push(1, 2, 0.5);
        b.push(1, 0, -1.0);
        let a = b.build();
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.get(1, 2), 1.5);
        assert_eq!(a.row(1).0, &[0, 2]);
        let t = a.transpose();
        assert_eq!(t.get(2, 1), 1.5);
        let mut y = [0.0; 2];
        a.apply(&[1.0, 1.0, 1.0], &mut y);
        assert_eq!(y, [2.0, 0.5]);
    }

    #[test]
    fn cholesky_solves_laplacian() {
        let a = laplace_2d(12);
        let ch = EnvelopeCholesky::new(&a).unwrap();
        let xt: Vec<f64> = (0..144).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b = vec![0.0; 144];
        a.apply(&xt, &mut b);
        let mut x = vec![0.0; 144];
        ch.solve(&b, &mut x);
        for (u, v) in x.iter().zip(&xt) {
            assert!((u - v).abs() < 1e-12);
        }
        // RCM keeps the envelope near n * bandwidth
        assert!(ch.envelope_size() < 144 * 14);
    }

    #[test]
    fn indefinite_is_rejected() {
        let mut b = TripletBuilder::new(2, 2);
        b.push(0, 0, 1.0);
        b.push(0, 1, 2.0);
        b.push(1, 0, 2.0);
        b.push(1, 1, 1.0);
        assert!(matches!(
            EnvelopeCholesky::new(&b.build()),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn ilu0_is_exact_for_tridiagonal() {
        let n = 10;
        let mut b = TripletBuilder::new(n, n);
        for i in 0..n {
            b.push(i, i, 2.5);
            if i > 0 {
                b.push(i, i - 1, -1.0);
                b.push(i - 1, i, -1.0);
            }
        }
        let a = b.build();
        let perm: Vec<usize> = (0..n).collect();
        let ilu = Ilu0::new(&a, &perm).unwrap();
        let xt: Vec<f64> = (0..n).map(|i| i as f64 - 3.0).collect();
        let mut rhs = vec![0.0; n];
        a.apply(&xt, &mut rhs);
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        ilu.solve(&rhs, &mut x, &mut w);
        for (u, v) in x.iter().zip(&xt) {
            assert!((u - v).abs() < 1e-12);
        }
        // symmetric matrix: transpose solve gives the same result
        ilu.solve_transpose(&rhs, &mut x, &mut w);
        for (u, v) in x.iter().zip(&xt) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn ilu0_transpose_solve_is_adjoint() {
        let a = laplace_2d(5);
        let n = a.nrows();
        let perm: Vec<usize> = (0..n).rev().collect();
        let ilu = Ilu0::new(&a, &perm).unwrap();
        let u: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let v: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let (mut su, mut stv, mut w) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        ilu.solve(&u, &mut su, &mut w);
        ilu.solve_transpose(&v, &mut stv, &mut w);
        let l: f64 = su.iter().zip(&v).map(|(a, b)| a * b).sum();
        let r: f64 = u.iter().zip(&stv).map(|(a, b)| a * b).sum();
        assert!((l - r).abs() < 1e-12);
    }

    #[test]
    fn matmul_and_permute() {
        let a = laplace_2d(3);
        let i = CsrMatrix::identity(9);
        assert_eq!(a.matmul(&i).unwrap(), a);
        let perm: Vec<usize> = (0..9).rev().collect();
        let p = a.permute_symmetric(&perm);
        assert_eq!(p.get(0, 1), a.get(8, 7));
    }

    #[test]
    fn matrix_market_header() {
        let a = laplace_2d(2);
        let mut out = Vec::new();
        a.write_matrix_market(&mut out).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert!(s.starts_with("%%MatrixMarket matrix coordinate real general\n4 4 12\n"));
    }
}
