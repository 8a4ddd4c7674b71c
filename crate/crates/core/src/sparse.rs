//! Compressed sparse column storage and the handful of sparse kernels the
//! two injection methods are built from.
//!
//! The structural arrays (column offsets and row indices) live in a
//! [`SparsityPattern`] behind an `Arc`, so matrices that only differ in their
//! values share one pattern. Frozen patterns are what make in-place Jacobian
//! assembly possible: a plan computes write positions once and later calls
//! only touch `nzval`.
//!
//! ```text
//!  col_start: 0   2     5   6
//!  row_idx:   0 2 | 0 1 2 | 1
//!  nzval:     a b | c d e | f
//! ```
//!
//! Explicit zeros are legal and are never dropped.

use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use num_traits::Zero;

use crate::error::{Error, Result};

/// Column offsets and row indices of a CSC matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    n_rows: usize,
    n_cols: usize,
    col_start: Vec<usize>,
    row_idx: Vec<usize>,
}

impl SparsityPattern {
    /// Checks every CSC invariant: `col_start` starts at zero, is
    /// non-decreasing and ends at `row_idx.len()`; rows are strictly
    /// increasing within a column and below `n_rows`.
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        col_start: Vec<usize>,
        row_idx: Vec<usize>,
    ) -> Result<Self> {
        if col_start.len() != n_cols + 1 {
            return Err(Error::Construction(format!(
                "col_start has length {}, expected {}",
                col_start.len(),
                n_cols + 1
            )));
        }
        if col_start[0] != 0 || col_start[n_cols] != row_idx.len() {
            return Err(Error::Construction(
                "col_start must begin at 0 and end at nnz".into(),
            ));
        }
        for j in 0..n_cols {
            let (lo, hi) = (col_start[j], col_start[j + 1]);
            if lo > hi {
                return Err(Error::Construction(format!(
                    "col_start decreases at column {j}"
                )));
            }
            let rows = &row_idx[lo..hi];
            if rows.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Construction(format!(
                    "rows of column {j} are not strictly increasing"
                )));
            }
            if rows.last().is_some_and(|&r| r >= n_rows) {
                return Err(Error::Construction(format!(
                    "row index out of range in column {j}"
                )));
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            col_start,
            row_idx,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col_start(&self) -> &[usize] {
        &self.col_start
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    /// Offset range into `row_idx`/`nzval` for column `j`.
    #[inline]
    pub fn col_range(&self, j: usize) -> std::ops::Range<usize> {
        self.col_start[j]..self.col_start[j + 1]
    }

    /// Position of `(row, col)` in `nzval`, if structurally present.
    pub fn find(&self, row: usize, col: usize) -> Option<usize> {
        if col >= self.n_cols {
            return None;
        }
        let range = self.col_range(col);
        self.row_idx[range.clone()]
            .binary_search(&row)
            .ok()
            .map(|off| range.start + off)
    }

    /// True when every diagonal entry of a square pattern is stored.
    pub fn has_full_diagonal(&self) -> bool {
        self.n_rows == self.n_cols && (0..self.n_cols).all(|j| self.find(j, j).is_some())
    }

    /// The pattern of `[[P, P], [P, P]]`, i.e. the union of the four blocks
    /// of a polar power-flow Jacobian built on this pattern.
    pub fn tile_2x2(&self) -> SparsityPattern {
        let (n_rows, n_cols) = (self.n_rows, self.n_cols);
        let mut col_start = Vec::with_capacity(2 * n_cols + 1);
        let mut row_idx = Vec::with_capacity(4 * self.nnz());
        col_start.push(0);
        for _ in 0..2 {
            for j in 0..n_cols {
                let rows = &self.row_idx[self.col_range(j)];
                row_idx.extend_from_slice(rows);
                row_idx.extend(rows.iter().map(|&r| r + n_rows));
                col_start.push(row_idx.len());
            }
        }
        SparsityPattern {
            n_rows: 2 * n_rows,
            n_cols: 2 * n_cols,
            col_start,
            row_idx,
        }
    }
}

/// Compressed sparse column matrix with a shareable pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix<T> {
    pattern: Arc<SparsityPattern>,
    nzval: Vec<T>,
}

impl<T: Copy> CscMatrix<T> {
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        col_start: Vec<usize>,
        row_idx: Vec<usize>,
        nzval: Vec<T>,
    ) -> Result<Self> {
        let pattern = SparsityPattern::new(n_rows, n_cols, col_start, row_idx)?;
        Self::from_pattern(Arc::new(pattern), nzval)
    }

    pub fn from_pattern(pattern: Arc<SparsityPattern>, nzval: Vec<T>) -> Result<Self> {
        if nzval.len() != pattern.nnz() {
            return Err(Error::Construction(format!(
                "{} values for a pattern with {} nonzeros",
                nzval.len(),
                pattern.nnz()
            )));
        }
        Ok(Self { pattern, nzval })
    }

    /// A matrix on `pattern` with every stored value set to `fill`.
    pub fn filled(pattern: Arc<SparsityPattern>, fill: T) -> Self {
        let nzval = vec![fill; pattern.nnz()];
        Self { pattern, nzval }
    }

    /// Same structure (shared, not copied), every stored value set to `fill`.
    pub fn pattern_clone_with_values<U: Copy>(&self, fill: U) -> CscMatrix<U> {
        CscMatrix::filled(Arc::clone(&self.pattern), fill)
    }

    /// Applies `f` to every stored value; the pattern is shared.
    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> CscMatrix<U> {
        CscMatrix {
            pattern: Arc::clone(&self.pattern),
            nzval: self.nzval.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    /// Cheap pointer check first, structural comparison otherwise.
    pub fn shares_pattern_with<U>(&self, other: &CscMatrix<U>) -> bool {
        Arc::ptr_eq(&self.pattern, &other.pattern) || *self.pattern == *other.pattern
    }

    pub fn n_rows(&self) -> usize {
        self.pattern.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.pattern.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.nzval.len()
    }

    pub fn col_start(&self) -> &[usize] {
        &self.pattern.col_start
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.pattern.row_idx
    }

    pub fn nzval(&self) -> &[T] {
        &self.nzval
    }

    pub fn nzval_mut(&mut self) -> &mut [T] {
        &mut self.nzval
    }

    /// Stored value at `(row, col)`; `None` for structural zeros.
    pub fn get(&self, row: usize, col: usize) -> Option<T> {
        self.pattern.find(row, col).map(|k| self.nzval[k])
    }

    /// Iterates `(row, col, value)` in column-major storage order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.n_cols()).flat_map(move |j| {
            self.pattern
                .col_range(j)
                .map(move |k| (self.pattern.row_idx[k], j, self.nzval[k]))
        })
    }
}

impl<T: Copy + Zero> CscMatrix<T> {
    pub fn diag(values: &[T]) -> Self {
        let n = values.len();
        CscMatrix {
            pattern: Arc::new(SparsityPattern {
                n_rows: n,
                n_cols: n,
                col_start: (0..=n).collect(),
                row_idx: (0..n).collect(),
            }),
            nzval: values.to_vec(),
        }
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.n_rows() * self.n_cols()];
        for (i, j, v) in self.iter() {
            out[i * self.n_cols() + j] = v;
        }
        out
    }
}

impl CscMatrix<Complex64> {
    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }

    pub fn re(&self) -> CscMatrix<f64> {
        self.map(|z| z.re)
    }

    pub fn im(&self) -> CscMatrix<f64> {
        self.map(|z| z.im)
    }
}

/// Coordinate-format staging area for building a [`CscMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct TripletList<T> {
    pub n_rows: usize,
    pub n_cols: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<T>,
}

impl<T> TripletList<T> {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        Self::with_capacity(n_rows, n_cols, 0)
    }

    pub fn with_capacity(n_rows: usize, n_cols: usize, cap: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            rows: Vec::with_capacity(cap),
            cols: Vec::with_capacity(cap),
            vals: Vec::with_capacity(cap),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, val: T) {
        self.rows.push(row);
        self.cols.push(col);
        self.vals.push(val);
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }
}

/// Converts triplets to CSC. Duplicates are summed in input order, starting
/// from the first occurrence (no implicit `0 +`).
pub fn csc_from_triplets<T: Copy + Add<Output = T>>(t: &TripletList<T>) -> Result<CscMatrix<T>> {
    let nt = t.vals.len();
    if t.rows.len() != nt || t.cols.len() != nt {
        return Err(Error::Construction(format!(
            "triplet arrays differ in length ({}, {}, {})",
            t.rows.len(),
            t.cols.len(),
            nt
        )));
    }
    for (p, (&r, &c)) in t.rows.iter().zip(&t.cols).enumerate() {
        if r >= t.n_rows || c >= t.n_cols {
            return Err(Error::Construction(format!(
                "triplet {p} at ({r}, {c}) outside {}x{}",
                t.n_rows, t.n_cols
            )));
        }
    }

    // Stable bucket sort by column.
    let mut bucket_start = vec![0usize; t.n_cols + 1];
    for &c in &t.cols {
        bucket_start[c + 1] += 1;
    }
    for j in 0..t.n_cols {
        bucket_start[j + 1] += bucket_start[j];
    }
    let mut next = bucket_start.clone();
    let mut order = vec![0usize; nt];
    for (p, &c) in t.cols.iter().enumerate() {
        order[next[c]] = p;
        next[c] += 1;
    }

    let mut col_start = Vec::with_capacity(t.n_cols + 1);
    let mut row_idx = Vec::with_capacity(nt);
    let mut nzval = Vec::with_capacity(nt);
    col_start.push(0);
    for j in 0..t.n_cols {
        let seg = &mut order[bucket_start[j]..bucket_start[j + 1]];
        seg.sort_by_key(|&p| t.rows[p]);
        for &p in seg.iter() {
            let r = t.rows[p];
            match row_idx.last() {
                Some(&last) if last == r && row_idx.len() > col_start[j] => {
                    let top = nzval.len() - 1;
                    nzval[top] = nzval[top] + t.vals[p];
                }
                _ => {
                    row_idx.push(r);
                    nzval.push(t.vals[p]);
                }
            }
        }
        col_start.push(row_idx.len());
    }
    Ok(CscMatrix {
        pattern: Arc::new(SparsityPattern {
            n_rows: t.n_rows,
            n_cols: t.n_cols,
            col_start,
            row_idx,
        }),
        nzval,
    })
}

/// `y = A x` into a caller-owned buffer. Accumulation runs column by column
/// over the stored nonzeros, so the result is deterministic.
pub fn spmv_complex_into(
    a: &CscMatrix<Complex64>,
    x: &[Complex64],
    y: &mut [Complex64],
) -> Result<()> {
    if x.len() != a.n_cols() || y.len() != a.n_rows() {
        return Err(Error::Domain(format!(
            "spmv: matrix is {}x{}, x has {}, y has {}",
            a.n_rows(),
            a.n_cols(),
            x.len(),
            y.len()
        )));
    }
    y.fill(Complex64::zero());
    let col_start = a.col_start();
    let row_idx = a.row_idx();
    let nzval = a.nzval();
    for (j, &xj) in x.iter().enumerate() {
        for k in col_start[j]..col_start[j + 1] {
            y[row_idx[k]] += nzval[k] * xj;
        }
    }
    Ok(())
}

pub fn spmv_complex(a: &CscMatrix<Complex64>, x: &[Complex64]) -> Result<Vec<Complex64>> {
    let mut y = vec![Complex64::zero(); a.n_rows()];
    spmv_complex_into(a, x, &mut y)?;
    Ok(y)
}

/// Block concatenation `[[a11, a12], [a21, a22]]` into a freshly allocated
/// matrix.
pub fn concat4(
    a11: &CscMatrix<f64>,
    a12: &CscMatrix<f64>,
    a21: &CscMatrix<f64>,
    a22: &CscMatrix<f64>,
) -> Result<CscMatrix<f64>> {
    let (top, bottom) = (a11.n_rows(), a21.n_rows());
    let (left, right) = (a11.n_cols(), a12.n_cols());
    if a12.n_rows() != top
        || a22.n_rows() != bottom
        || a21.n_cols() != left
        || a22.n_cols() != right
    {
        return Err(Error::Domain(format!(
            "non-conformable blocks: {}x{}, {}x{}, {}x{}, {}x{}",
            a11.n_rows(),
            a11.n_cols(),
            a12.n_rows(),
            a12.n_cols(),
            a21.n_rows(),
            a21.n_cols(),
            a22.n_rows(),
            a22.n_cols()
        )));
    }
    let nnz = a11.nnz() + a12.nnz() + a21.nnz() + a22.nnz();
    let mut col_start = Vec::with_capacity(left + right + 1);
    let mut row_idx = Vec::with_capacity(nnz);
    let mut nzval = Vec::with_capacity(nnz);
    col_start.push(0);
    for (upper, lower, n_cols) in [(a11, a21, left), (a12, a22, right)] {
        for j in 0..n_cols {
            let r = upper.pattern.col_range(j);
            row_idx.extend_from_slice(&upper.row_idx()[r.clone()]);
            nzval.extend_from_slice(&upper.nzval[r]);
            let r = lower.pattern.col_range(j);
            row_idx.extend(lower.row_idx()[r.clone()].iter().map(|&i| i + top));
            nzval.extend_from_slice(&lower.nzval[r]);
            col_start.push(row_idx.len());
        }
    }
    Ok(CscMatrix {
        pattern: Arc::new(SparsityPattern {
            n_rows: top + bottom,
            n_cols: left + right,
            col_start,
            row_idx,
        }),
        nzval,
    })
}

/// Sparse-sparse product `a * b` (Gustavson). The structural product is kept
/// in full, including entries that cancel numerically.
pub fn spgemm<T>(a: &CscMatrix<T>, b: &CscMatrix<T>) -> Result<CscMatrix<T>>
where
    T: Copy + Zero + Add<Output = T> + Mul<Output = T>,
{
    if a.n_cols() != b.n_rows() {
        return Err(Error::Domain(format!(
            "spgemm: {}x{} times {}x{}",
            a.n_rows(),
            a.n_cols(),
            b.n_rows(),
            b.n_cols()
        )));
    }
    let n_rows = a.n_rows();
    let mut mark = vec![usize::MAX; n_rows];
    let mut acc = vec![T::zero(); n_rows];
    let mut touched: Vec<usize> = Vec::new();
    let mut col_start = Vec::with_capacity(b.n_cols() + 1);
    let mut row_idx = Vec::new();
    let mut nzval = Vec::new();
    col_start.push(0);
    for j in 0..b.n_cols() {
        touched.clear();
        for kb in b.pattern.col_range(j) {
            let (l, blj) = (b.row_idx()[kb], b.nzval[kb]);
            for ka in a.pattern.col_range(l) {
                let i = a.row_idx()[ka];
                let prod = a.nzval[ka] * blj;
                if mark[i] == j {
                    acc[i] = acc[i] + prod;
                } else {
                    mark[i] = j;
                    acc[i] = prod;
                    touched.push(i);
                }
            }
        }
        touched.sort_unstable();
        for &i in &touched {
            row_idx.push(i);
            nzval.push(acc[i]);
        }
        col_start.push(row_idx.len());
    }
    Ok(CscMatrix {
        pattern: Arc::new(SparsityPattern {
            n_rows,
            n_cols: b.n_cols(),
            col_start,
            row_idx,
        }),
        nzval,
    })
}

fn union_combine<T: Copy>(
    a: &CscMatrix<T>,
    b: &CscMatrix<T>,
    both: impl Fn(T, T) -> T,
    only_a: impl Fn(T) -> T,
    only_b: impl Fn(T) -> T,
) -> Result<CscMatrix<T>> {
    if a.n_rows() != b.n_rows() || a.n_cols() != b.n_cols() {
        return Err(Error::Domain(format!(
            "elementwise op on {}x{} and {}x{}",
            a.n_rows(),
            a.n_cols(),
            b.n_rows(),
            b.n_cols()
        )));
    }
    let mut col_start = Vec::with_capacity(a.n_cols() + 1);
    let mut row_idx = Vec::with_capacity(a.nnz().max(b.nnz()));
    let mut nzval = Vec::with_capacity(a.nnz().max(b.nnz()));
    col_start.push(0);
    for j in 0..a.n_cols() {
        let (mut ka, ea) = (a.col_start()[j], a.col_start()[j + 1]);
        let (mut kb, eb) = (b.col_start()[j], b.col_start()[j + 1]);
        while ka < ea || kb < eb {
            let ra = if ka < ea { a.row_idx()[ka] } else { usize::MAX };
            let rb = if kb < eb { b.row_idx()[kb] } else { usize::MAX };
            if ra == rb {
                row_idx.push(ra);
                nzval.push(both(a.nzval[ka], b.nzval[kb]));
                ka += 1;
                kb += 1;
            } else if ra < rb {
                row_idx.push(ra);
                nzval.push(only_a(a.nzval[ka]));
                ka += 1;
            } else {
                row_idx.push(rb);
                nzval.push(only_b(b.nzval[kb]));
                kb += 1;
            }
        }
        col_start.push(row_idx.len());
    }
    Ok(CscMatrix {
        pattern: Arc::new(SparsityPattern {
            n_rows: a.n_rows(),
            n_cols: a.n_cols(),
            col_start,
            row_idx,
        }),
        nzval,
    })
}

/// `a + b` on the union of both patterns.
pub fn sparse_add<T: Copy + Add<Output = T>>(
    a: &CscMatrix<T>,
    b: &CscMatrix<T>,
) -> Result<CscMatrix<T>> {
    union_combine(a, b, |x, y| x + y, |x| x, |y| y)
}

/// `a - b` on the union of both patterns.
pub fn sparse_sub<T: Copy + Sub<Output = T> + Neg<Output = T>>(
    a: &CscMatrix<T>,
    b: &CscMatrix<T>,
) -> Result<CscMatrix<T>> {
    union_combine(a, b, |x, y| x - y, |x| x, |y| -y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn duplicate_triplets_are_summed() {
        let mut t = TripletList::new(1, 1);
        t.push(0, 0, 1.0);
        t.push(0, 0, 2.0);
        let m = csc_from_triplets(&t).unwrap();
        assert_eq!(m.nzval(), &[3.0]);
        assert_eq!(m.col_start(), &[0, 1]);
    }

    #[test]
    fn empty_triplets_give_empty_columns() {
        let m = csc_from_triplets(&TripletList::<f64>::new(3, 3)).unwrap();
        assert_eq!(m.col_start(), &[0, 0, 0, 0]);
        assert_eq!(m.nnz(), 0);
    }

    #[test]
    fn dense_2x2_is_column_major() {
        let (a, b, cc, d) = (1.0, 2.0, 3.0, 4.0);
        let mut t = TripletList::new(2, 2);
        t.push(0, 0, a);
        t.push(0, 1, b);
        t.push(1, 0, cc);
        t.push(1, 1, d);
        let m = csc_from_triplets(&t).unwrap();
        assert_eq!(m.nzval(), &[a, cc, b, d]);
        assert_eq!(m.row_idx(), &[0, 1, 0, 1]);
    }

    #[test]
    fn out_of_range_triplet_is_rejected() {
        let mut t = TripletList::new(2, 2);
        t.push(2, 0, 1.0);
        assert!(matches!(csc_from_triplets(&t), Err(Error::Construction(_))));
        let mut t = TripletList::new(2, 2);
        t.push(0, 5, 1.0);
        assert!(matches!(csc_from_triplets(&t), Err(Error::Construction(_))));
    }

    #[test]
    fn explicit_zeros_survive_construction() {
        let mut t = TripletList::new(2, 2);
        t.push(1, 1, 1.0);
        t.push(1, 1, -1.0);
        let m = csc_from_triplets(&t).unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(1, 1), Some(0.0));
    }

    #[test]
    fn pattern_validation() {
        assert!(CscMatrix::new(2, 2, vec![0, 1, 2], vec![0, 0], vec![1.0, 1.0]).is_ok());
        assert!(CscMatrix::new(2, 2, vec![0, 2, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(CscMatrix::new(2, 2, vec![0, 1, 2], vec![0, 2], vec![1.0, 1.0]).is_err());
        assert!(CscMatrix::new(2, 2, vec![1, 1, 2], vec![0, 0], vec![1.0, 1.0]).is_err());
        assert!(CscMatrix::new(2, 2, vec![0, 1, 2], vec![0, 0], vec![1.0]).is_err());
    }

    #[test]
    fn spmv_identity_and_zero() {
        let x = vec![c(1.0, 2.0), c(-3.0, 0.5), c(0.0, -1.0)];
        let eye = CscMatrix::diag(&[Complex64::new(1.0, 0.0); 3]);
        assert_eq!(spmv_complex(&eye, &x).unwrap(), x);
        let zero = csc_from_triplets(&TripletList::<Complex64>::new(3, 3)).unwrap();
        assert!(spmv_complex(&zero, &x).unwrap().iter().all(|z| z.is_zero()));
    }

    #[test]
    fn spmv_two_bus_matches_dense_product() {
        let mut t = TripletList::new(2, 2);
        t.push(0, 0, c(0.0, -10.0));
        t.push(0, 1, c(0.0, 10.0));
        t.push(1, 0, c(0.0, 10.0));
        t.push(1, 1, c(0.0, -10.0));
        let y = csc_from_triplets(&t).unwrap();
        let x = [Complex64::from_polar(1.0, 0.1), c(1.0, 0.0)];
        let dense = y.to_dense();
        let got = spmv_complex(&y, &x).unwrap();
        for i in 0..2 {
            let want = dense[2 * i] * x[0] + dense[2 * i + 1] * x[1];
            assert!((got[i] - want).norm() < 1e-15);
        }
    }

    #[test]
    fn spmv_dimension_mismatch() {
        let eye = CscMatrix::diag(&[Complex64::new(1.0, 0.0); 3]);
        assert!(matches!(
            spmv_complex(&eye, &[Complex64::zero(); 2]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn concat4_of_scalars() {
        let s = |v: f64| CscMatrix::diag(&[v]);
        let m = concat4(&s(1.0), &s(2.0), &s(3.0), &s(4.0)).unwrap();
        assert_eq!(m.nzval(), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(m.row_idx(), &[0, 1, 0, 1]);
    }

    #[test]
    fn concat4_keeps_empty_columns() {
        let e = csc_from_triplets(&TripletList::<f64>::new(2, 2)).unwrap();
        let d = CscMatrix::diag(&[5.0, 6.0]);
        let m = concat4(&e, &e, &e, &d).unwrap();
        assert_eq!(m.n_cols(), 4);
        assert_eq!(m.col_start(), &[0, 0, 0, 1, 2]);
        assert_eq!(m.row_idx(), &[2, 3]);
    }

    #[test]
    fn concat4_rejects_nonconformable_blocks() {
        let a = CscMatrix::diag(&[1.0]);
        let b = CscMatrix::diag(&[1.0, 2.0]);
        assert!(matches!(concat4(&a, &b, &a, &a), Err(Error::Domain(_))));
    }

    #[test]
    fn pattern_clone_shares_structure() {
        let eye = CscMatrix::diag(&[1.0, 1.0, 1.0]);
        let z = eye.pattern_clone_with_values(0.0);
        assert_eq!(z.nzval(), &[0.0, 0.0, 0.0]);
        assert_eq!(z.col_start(), eye.col_start());
        assert_eq!(z.row_idx(), eye.row_idx());
        assert!(Arc::ptr_eq(z.pattern(), eye.pattern()));
        assert!(z.shares_pattern_with(&eye));
    }

    #[test]
    fn tile_2x2_matches_concat4() {
        let mut t = TripletList::new(3, 3);
        for (r, cc) in [(0, 0), (1, 1), (2, 2), (0, 2), (2, 0), (1, 0)] {
            t.push(r, cc, 1.0);
        }
        let m = csc_from_triplets(&t).unwrap();
        let tiled = m.pattern().tile_2x2();
        let cat = concat4(&m, &m, &m, &m).unwrap();
        assert_eq!(&tiled, cat.pattern().as_ref());
    }

    #[test]
    fn spgemm_with_diagonal_scales_columns() {
        let mut t = TripletList::new(2, 2);
        t.push(0, 0, 1.0);
        t.push(1, 0, 2.0);
        t.push(0, 1, 3.0);
        let a = csc_from_triplets(&t).unwrap();
        let p = spgemm(&a, &CscMatrix::diag(&[10.0, 100.0])).unwrap();
        assert_eq!(p.nzval(), &[10.0, 20.0, 300.0]);
        assert!(p.shares_pattern_with(&a));
    }

    #[test]
    fn add_and_sub_take_the_union() {
        let a = CscMatrix::diag(&[1.0, 2.0]);
        let mut t = TripletList::new(2, 2);
        t.push(0, 1, 5.0);
        t.push(1, 1, 1.0);
        let b = csc_from_triplets(&t).unwrap();
        let s = sparse_add(&a, &b).unwrap();
        assert_eq!(s.to_dense(), vec![1.0, 5.0, 0.0, 3.0]);
        let d = sparse_sub(&a, &b).unwrap();
        assert_eq!(d.to_dense(), vec![1.0, -5.0, 0.0, 1.0]);
    }

    fn dense_strategy(max: usize) -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
        (1..=max, 1..=max).prop_flat_map(|(r, c)| {
            let cell = prop_oneof![3 => Just(0.0), 2 => -10.0..10.0f64];
            (Just(r), Just(c), proptest::collection::vec(cell, r * c))
        })
    }

    fn from_dense(r: usize, c: usize, d: &[f64]) -> CscMatrix<f64> {
        let mut t = TripletList::new(r, c);
        for i in 0..r {
            for j in 0..c {
                if d[i * c + j] != 0.0 {
                    t.push(i, j, d[i * c + j]);
                }
            }
        }
        csc_from_triplets(&t).unwrap()
    }

    proptest! {
        #[test]
        fn triplets_reproduce_dense((r, c, d) in dense_strategy(8)) {
            let m = from_dense(r, c, &d);
            prop_assert_eq!(m.to_dense(), d);
        }

        #[test]
        fn shuffled_triplets_give_same_matrix((r, c, d) in dense_strategy(6), seed in any::<u64>()) {
            let mut entries: Vec<(usize, usize, f64)> = (0..r * c)
                .filter(|&p| d[p] != 0.0)
                .map(|p| (p / c, p % c, d[p]))
                .collect();
            // deterministic shuffle
            let mut s = seed | 1;
            for i in (1..entries.len()).rev() {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                entries.swap(i, (s % (i as u64 + 1)) as usize);
            }
            let mut t = TripletList::new(r, c);
            for (i, j, v) in entries { t.push(i, j, v); }
            prop_assert_eq!(csc_from_triplets(&t).unwrap(), from_dense(r, c, &d));
        }

        #[test]
        fn concat4_matches_dense_blocks(
            (r1, c1, d11) in dense_strategy(4),
            seed_rows in 1usize..=4, seed_cols in 1usize..=4,
            vals in proptest::collection::vec(-5.0..5.0f64, 48),
        ) {
            let (r2, c2) = (seed_rows, seed_cols);
            let mk = |r: usize, c: usize, off: usize| -> Vec<f64> {
                (0..r * c).map(|p| if (p + off).is_multiple_of(3) { 0.0 } else { vals[(p + off) % vals.len()] }).collect()
            };
            let (d12, d21, d22) = (mk(r1, c2, 1), mk(r2, c1, 2), mk(r2, c2, 5));
            let m = concat4(
                &from_dense(r1, c1, &d11), &from_dense(r1, c2, &d12),
                &from_dense(r2, c1, &d21), &from_dense(r2, c2, &d22),
            ).unwrap();
            let (nr, nc) = (r1 + r2, c1 + c2);
            let mut want = vec![0.0; nr * nc];
            for i in 0..nr {
                for j in 0..nc {
                    want[i * nc + j] = match (i < r1, j < c1) {
                        (true, true) => d11[i * c1 + j],
                        (true, false) => d12[i * c2 + j - c1],
                        (false, true) => d21[(i - r1) * c1 + j],
                        (false, false) => d22[(i - r1) * c2 + j - c1],
                    };
                }
            }
            prop_assert_eq!(m.to_dense(), want);
        }

        #[test]
        fn spmv_matches_dense_oracle(
            re in proptest::collection::vec(-1.0..1.0f64, 400),
            im in proptest::collection::vec(-1.0..1.0f64, 400),
            mask in proptest::collection::vec(0u8..4, 400),
            xs in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 20),
        ) {
            let n = 20;
            let mut t = TripletList::new(n, n);
            let mut dense = vec![Complex64::zero(); n * n];
            for p in 0..n * n {
                if mask[p] == 0 {
                    let v = c(re[p], im[p]);
                    dense[p] = v;
                    t.push(p / n, p % n, v);
                }
            }
            let a = csc_from_triplets(&t).unwrap();
            let x: Vec<Complex64> = xs.iter().map(|&(r, i)| c(r, i)).collect();
            let y = spmv_complex(&a, &x).unwrap();
            for i in 0..n {
                let mut want = Complex64::zero();
                let mut scale = 0.0;
                for j in 0..n {
                    want += dense[i * n + j] * x[j];
                    scale += (dense[i * n + j] * x[j]).norm();
                }
                prop_assert!((y[i] - want).norm() <= 1e-13 * scale.max(f64::MIN_POSITIVE));
            }
        }
    }
}
