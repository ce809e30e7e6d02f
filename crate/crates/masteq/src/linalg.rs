//! Sparse and dense matrix kernels used by the integrator.
//!
//! `SparseMatrix` is a compressed column-major store. Generator matrices are
//! assembled column by column and the truncation bookkeeping lives on column
//! sums, so the column-major layout keeps the hot paths contiguous.
//! `DenseMatrix` is a small row-major matrix for Hessenberg projections;
//! `dense_expm` is a degree-13 Pade approximant with scaling and squaring.

use std::cell::Cell;

use crate::error::{Error, Result};

thread_local! {
    static SPMV_COUNT: Cell<u64> = const { Cell::new(0) };
}

/// Running count of sparse matrix-vector products on this thread. Cost
/// reports are defined at this layer so they cannot drift from the code
/// that does the work.
pub fn spmv_count() -> u64 {
    SPMV_COUNT.with(|c| c.get())
}

fn bump_spmv() {
    SPMV_COUNT.with(|c| c.set(c.get() + 1));
}

/// Compressed sparse column matrix with sorted, deduplicated row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    rows: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseMatrix {
            nrows,
            ncols,
            col_ptr: vec![0; ncols + 1],
            rows: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            nrows: n,
            ncols: n,
            col_ptr: (0..=n).collect(),
            rows: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    /// Builds from (row, col, value) triplets. Duplicates are summed,
    /// entries that cancel to exactly zero are removed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut trips: Vec<(usize, usize, f64)> = Vec::new();
        for (r, c, v) in triplets {
            if r >= nrows {
                return Err(Error::DimensionMismatch {
                    context: "from_triplets row index",
                    expected: nrows,
                    got: r,
                });
            }
            if c >= ncols {
                return Err(Error::DimensionMismatch {
                    context: "from_triplets col index",
                    expected: ncols,
                    got: c,
                });
            }
            trips.push((c, r, v));
        }
        trips.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut col_ptr = vec![0usize; ncols + 1];
        let mut rows = Vec::with_capacity(trips.len());
        let mut vals: Vec<f64> = Vec::with_capacity(trips.len());
        let mut i = 0;
        while i < trips.len() {
            let (c, r, _) = trips[i];
            let mut sum = 0.0;
            while i < trips.len() && trips[i].0 == c && trips[i].1 == r {
                sum += trips[i].2;
                i += 1;
            }
            if sum != 0.0 {
                while col_ptr.len() <= c + 1 {
                    unreachable!();
                }
                rows.push(r);
                vals.push(sum);
                col_ptr[c + 1] += 1;
            }
        }
        for c in 0..ncols {
            col_ptr[c + 1] += col_ptr[c];
        }
        Ok(SparseMatrix {
            nrows,
            ncols,
            col_ptr,
            rows,
            vals,
        })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let lo = self.col_ptr[c];
        let hi = self.col_ptr[c + 1];
        match self.rows[lo..hi].binary_search(&r) {
            Ok(k) => self.vals[lo + k],
            Err(_) => 0.0,
        }
    }

    /// y = A x.
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols {
            return Err(Error::DimensionMismatch {
                context: "spmv",
                expected: self.ncols,
                got: x.len(),
            });
        }
        bump_spmv();
        let mut y = vec![0.0; self.nrows];
        for c in 0..self.ncols {
            let xc = x[c];
            if xc == 0.0 {
                continue;
            }
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.rows[k]] += self.vals[k] * xc;
            }
        }
        Ok(y)
    }

    /// y = A^T x. On a column store this is a gather per column.
    pub fn spmv_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.nrows {
            return Err(Error::DimensionMismatch {
                context: "spmv_transpose",
                expected: self.nrows,
                got: x.len(),
            });
        }
        bump_spmv();
        let mut y = vec![0.0; self.ncols];
        for c in 0..self.ncols {
            let mut acc = 0.0;
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                acc += self.vals[k] * x[self.rows[k]];
            }
            y[c] = acc;
        }
        Ok(y)
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.ncols];
        for c in 0..self.ncols {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                s[c] += self.vals[k];
            }
        }
        s
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.nrows + 1];
        for &r in &self.rows {
            counts[r + 1] += 1;
        }
        for i in 0..self.nrows {
            counts[i + 1] += counts[i];
        }
        let mut col_ptr = counts.clone();
        let mut rows = vec![0usize; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        for c in 0..self.ncols {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.rows[k];
                let dst = col_ptr[r];
                rows[dst] = c;
                vals[dst] = self.vals[k];
                col_ptr[r] += 1;
            }
        }
        counts.truncate(self.nrows + 1);
        SparseMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            col_ptr: counts,
            rows,
            vals,
        }
    }

    pub fn scaled(&self, factor: f64) -> SparseMatrix {
        let mut out = self.clone();
        for v in &mut out.vals {
            *v *= factor;
        }
        out
    }

    /// Sum of scaled matrices over the structural union of their patterns.
    /// Entries that cancel to exactly zero are dropped.
    pub fn linear_combination(terms: &[(f64, &SparseMatrix)]) -> Result<SparseMatrix> {
        let (nrows, ncols) = match terms.first() {
            Some((_, m)) => (m.nrows, m.ncols),
            None => return Ok(SparseMatrix::zeros(0, 0)),
        };
        for (_, m) in terms {
            if m.nrows != nrows || m.ncols != ncols {
                return Err(Error::DimensionMismatch {
                    context: "linear_combination",
                    expected: nrows,
                    got: m.nrows,
                });
            }
        }
        let mut acc = vec![0.0; nrows];
        let mut touched: Vec<usize> = Vec::new();
        let mut col_ptr = vec![0usize; ncols + 1];
        let mut rows = Vec::new();
        let mut vals = Vec::new();
        for c in 0..ncols {
            for (w, m) in terms {
                for k in m.col_ptr[c]..m.col_ptr[c + 1] {
                    let r = m.rows[k];
                    if acc[r] == 0.0 && !touched.contains(&r) {
                        touched.push(r);
                    }
                    acc[r] += w * m.vals[k];
                }
            }
            touched.sort_unstable();
            for &r in &touched {
                if acc[r] != 0.0 {
                    rows.push(r);
                    vals.push(acc[r]);
                }
                acc[r] = 0.0;
            }
            touched.clear();
            col_ptr[c + 1] = rows.len();
        }
        Ok(SparseMatrix {
            nrows,
            ncols,
            col_ptr,
            rows,
            vals,
        })
    }

    /// C = self * other, sparse-sparse with a dense column accumulator.
    pub fn matmul(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.ncols != other.nrows {
            return Err(Error::DimensionMismatch {
                context: "matmul",
                expected: self.ncols,
                got: other.nrows,
            });
        }
        let mut acc = vec![0.0; self.nrows];
        let mut touched: Vec<usize> = Vec::new();
        let mut col_ptr = vec![0usize; other.ncols + 1];
        let mut rows = Vec::new();
        let mut vals = Vec::new();
        for c in 0..other.ncols {
            for bk in other.col_ptr[c]..other.col_ptr[c + 1] {
                let mid = other.rows[bk];
                let bval = other.vals[bk];
                for ak in self.col_ptr[mid]..self.col_ptr[mid + 1] {
                    let r = self.rows[ak];
                    if acc[r] == 0.0 && !touched.contains(&r) {
                        touched.push(r);
                    }
                    acc[r] += self.vals[ak] * bval;
                }
            }
            touched.sort_unstable();
            for &r in &touched {
                if acc[r] != 0.0 {
                    rows.push(r);
                    vals.push(acc[r]);
                }
                acc[r] = 0.0;
            }
            touched.clear();
            col_ptr[c + 1] = rows.len();
        }
        Ok(SparseMatrix {
            nrows: self.nrows,
            ncols: other.ncols,
            col_ptr,
            rows,
            vals,
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.nrows, self.ncols);
        for c in 0..self.ncols {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                d.set(self.rows[k], c, self.vals[k]);
            }
        }
        d
    }

    /// Iterates over the stored entries of one column as (row, value).
    pub fn column(&self, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.col_ptr[c]..self.col_ptr[c + 1]).map(move |k| (self.rows[k], self.vals[k]))
    }
}

/// Commutator [A, B] = AB - BA. The result is canonicalized and entries
/// below 1e-300 in magnitude are dropped to keep patterns from filling
/// with denormal residue.
pub fn commutator(a: &SparseMatrix, b: &SparseMatrix) -> Result<SparseMatrix> {
    let ab = a.matmul(b)?;
    let ba = b.matmul(a)?;
    let mut c = SparseMatrix::linear_combination(&[(1.0, &ab), (-1.0, &ba)])?;
    let mut col_ptr = vec![0usize; c.ncols + 1];
    let mut rows = Vec::with_capacity(c.nnz());
    let mut vals = Vec::with_capacity(c.nnz());
    for col in 0..c.ncols {
        for k in c.col_ptr[col]..c.col_ptr[col + 1] {
            if c.vals[k].abs() >= 1e-300 {
                rows.push(c.rows[k]);
                vals.push(c.vals[k]);
            }
        }
        col_ptr[col + 1] = rows.len();
    }
    c.col_ptr = col_ptr;
    c.rows = rows;
    c.vals = vals;
    Ok(c)
}

/// Small row-major dense matrix for Hessenberg work.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        DenseMatrix {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let nrows = rows.len();
        let ncols = if nrows > 0 { rows[0].len() } else { 0 };
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in rows {
            assert_eq!(r.len(), ncols);
            data.extend_from_slice(r);
        }
        DenseMatrix { nrows, ncols, data }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.ncols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.ncols + c] = v;
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.ncols, other.nrows);
        let mut out = DenseMatrix::zeros(self.nrows, other.ncols);
        for i in 0..self.nrows {
            for k in 0..self.ncols {
                let a = self.at(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.ncols {
                    out.data[i * out.ncols + j] += a * other.at(k, j);
                }
            }
        }
        out
    }

    pub fn add_scaled(&mut self, factor: f64, other: &DenseMatrix) {
        assert_eq!(self.data.len(), other.data.len());
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += factor * y;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for x in &mut self.data {
            *x *= factor;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let mut acc = 0.0;
            for j in 0..self.ncols {
                acc += self.at(i, j) * x[j];
            }
            y[i] = acc;
        }
        y
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        let mut best: f64 = 0.0;
        for c in 0..self.ncols {
            let mut s = 0.0;
            for r in 0..self.nrows {
                s += self.at(r, c).abs();
            }
            best = best.max(s);
        }
        best
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Solves self * X = rhs by LU with partial pivoting; consumes both.
    pub fn lu_solve(mut self, mut rhs: DenseMatrix) -> Result<DenseMatrix> {
        assert_eq!(self.nrows, self.ncols);
        assert_eq!(rhs.nrows, self.nrows);
        let n = self.nrows;
        let m = rhs.ncols;
        for k in 0..n {
            let mut piv = k;
            let mut best = self.at(k, k).abs();
            for r in k + 1..n {
                let v = self.at(r, k).abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best < 1e-300 {
                return Err(Error::NonFinite {
                    context: "singular matrix in lu_solve",
                });
            }
            if piv != k {
                for c in 0..n {
                    let tmp = self.at(k, c);
                    self.set(k, c, self.at(piv, c));
                    self.set(piv, c, tmp);
                }
                for c in 0..m {
                    let tmp = rhs.at(k, c);
                    rhs.set(k, c, rhs.at(piv, c));
                    rhs.set(piv, c, tmp);
                }
            }
            let inv = 1.0 / self.at(k, k);
            for r in k + 1..n {
                let f = self.at(r, k) * inv;
                if f == 0.0 {
                    continue;
                }
                self.set(r, k, 0.0);
                for c in k + 1..n {
                    let v = self.at(r, c) - f * self.at(k, c);
                    self.set(r, c, v);
                }
                for c in 0..m {
                    let v = rhs.at(r, c) - f * rhs.at(k, c);
                    rhs.set(r, c, v);
                }
            }
        }
        for k in (0..n).rev() {
            let inv = 1.0 / self.at(k, k);
            for c in 0..m {
                let mut acc = rhs.at(k, c);
                for j in k + 1..n {
                    acc -= self.at(k, j) * rhs.at(j, c);
                }
                rhs.set(k, c, acc * inv);
            }
        }
        Ok(rhs)
    }
}

const PADE13_THETA: f64 = 5.371920351148152;
const PADE13_B: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Matrix exponential by scaling and squaring with the degree-13 diagonal
/// Pade approximant. Intended for the small Hessenberg matrices of the
/// Krylov projection; norms beyond exp-representable range are rejected.
pub fn dense_expm(h: &DenseMatrix) -> Result<DenseMatrix> {
    assert_eq!(h.nrows(), h.ncols());
    let n = h.nrows();
    if n == 0 {
        return Ok(DenseMatrix::zeros(0, 0));
    }
    let norm = h.norm_one();
    if !norm.is_finite() || norm > 700.0 {
        return Err(Error::ExpOverflow { norm });
    }
    let squarings = if norm > PADE13_THETA {
        (norm / PADE13_THETA).log2().ceil() as u32
    } else {
        0
    };
    let mut a = h.clone();
    a.scale(0.5f64.powi(squarings as i32));

    let a2 = a.matmul(&a);
    let a4 = a2.matmul(&a2);
    let a6 = a4.matmul(&a2);
    let b = &PADE13_B;

    // U = A (A6 (b13 A6 + b11 A4 + b9 A2) + b7 A6 + b5 A4 + b3 A2 + b1 I)
    let mut inner = DenseMatrix::zeros(n, n);
    inner.add_scaled(b[13], &a6);
    inner.add_scaled(b[11], &a4);
    inner.add_scaled(b[9], &a2);
    let mut u = a6.matmul(&inner);
    u.add_scaled(b[7], &a6);
    u.add_scaled(b[5], &a4);
    u.add_scaled(b[3], &a2);
    u.add_scaled(b[1], &DenseMatrix::identity(n));
    let u = a.matmul(&u);

    // V = A6 (b12 A6 + b10 A4 + b8 A2) + b6 A6 + b4 A4 + b2 A2 + b0 I
    let mut inner = DenseMatrix::zeros(n, n);
    inner.add_scaled(b[12], &a6);
    inner.add_scaled(b[10], &a4);
    inner.add_scaled(b[8], &a2);
    let mut v = a6.matmul(&inner);
    v.add_scaled(b[6], &a6);
    v.add_scaled(b[4], &a4);
    v.add_scaled(b[2], &a2);
    v.add_scaled(b[0], &DenseMatrix::identity(n));

    // (V - U) X = (V + U)
    let mut vm = v.clone();
    vm.add_scaled(-1.0, &u);
    let mut vp = v;
    vp.add_scaled(1.0, &u);
    let mut x = vm.lu_solve(vp)?;
    for _ in 0..squarings {
        x = x.matmul(&x);
    }
    if !x.is_finite() {
        return Err(Error::ExpOverflow { norm });
    }
    Ok(x)
}

pub fn norm1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: 30-term Taylor series after scaling the norm
    /// below 1/4, then repeated squaring.
    fn taylor_expm(h: &DenseMatrix) -> DenseMatrix {
        let n = h.nrows();
        let norm = h.norm_one();
        let mut squarings = 0u32;
        let mut scale = 1.0;
        while norm * scale > 0.25 {
            scale *= 0.5;
            squarings += 1;
        }
        let mut a = h.clone();
        a.scale(scale);
        let mut sum = DenseMatrix::identity(n);
        let mut term = DenseMatrix::identity(n);
        for k in 1..=30 {
            term = term.matmul(&a);
            term.scale(1.0 / k as f64);
            sum.add_scaled(1.0, &term);
        }
        for _ in 0..squarings {
            sum = sum.matmul(&sum);
        }
        sum
    }

    fn random_dense(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                m.set(r, c, rng.gen_range(-1.0..1.0) * scale);
            }
        }
        m
    }

    /// Random sparse generator: nonnegative off-diagonals, zero column sums.
    pub(crate) fn random_generator(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> SparseMatrix {
        let mut trips = Vec::new();
        let mut diag = vec![0.0; n];
        for c in 0..n {
            for _ in 0..3 {
                let r = rng.gen_range(0..n);
                if r == c {
                    continue;
                }
                let v = rng.gen_range(0.0..scale);
                trips.push((r, c, v));
                diag[c] -= v;
            }
        }
        for c in 0..n {
            trips.push((c, c, diag[c]));
        }
        SparseMatrix::from_triplets(n, n, trips).unwrap()
    }

    fn max_entry_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..a.nrows() {
            for c in 0..a.ncols() {
                worst = worst.max((a.at(r, c) - b.at(r, c)).abs());
            }
        }
        worst
    }

    #[test]
    fn triplets_dedup_and_drop_zero() {
        let m = SparseMatrix::from_triplets(
            2,
            2,
            vec![(0, 0, 1.0), (0, 0, 2.0), (1, 1, 5.0), (1, 1, -5.0), (1, 0, 0.0)],
        )
        .unwrap();
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.nnz(), 1);
    }

    #[test]
    fn triplets_reject_out_of_range() {
        assert!(SparseMatrix::from_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
        assert!(SparseMatrix::from_triplets(2, 2, vec![(0, 5, 1.0)]).is_err());
    }

    #[test]
    fn spmv_matches_hand_computation() {
        // [[1, 2], [0, 3]] * [1, 2] = [5, 6]
        let m =
            SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 2.0), (1, 1, 3.0)]).unwrap();
        assert_eq!(m.spmv(&[1.0, 2.0]).unwrap(), vec![5.0, 6.0]);
        assert!(m.spmv(&[1.0]).is_err());
    }

    #[test]
    fn spmv_transpose_matches_explicit_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let m = random_generator(&mut rng, 17, 2.0);
            let x: Vec<f64> = (0..17).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = m.spmv_transpose(&x).unwrap();
            let b = m.transpose().spmv(&x).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn spmv_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = random_generator(&mut rng, 23, 3.0);
            let x: Vec<f64> = (0..23).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..23).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
            let lhs = m.spmv(&xy).unwrap();
            let mx = m.spmv(&x).unwrap();
            let my = m.spmv(&y).unwrap();
            for i in 0..23 {
                assert!((lhs[i] - mx[i] - my[i]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn column_sums_hand_case() {
        let m =
            SparseMatrix::from_triplets(2, 2, vec![(0, 0, -1.0), (1, 0, 1.0), (0, 1, 2.0)]).unwrap();
        assert_eq!(m.column_sums(), vec![0.0, 2.0]);
    }

    #[test]
    fn linear_combination_unions_patterns() {
        let a = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 1, 2.0)]).unwrap();
        let b = SparseMatrix::from_triplets(2, 2, vec![(0, 1, 3.0), (1, 1, -1.0)]).unwrap();
        let c = SparseMatrix::linear_combination(&[(2.0, &a), (1.0, &b)]).unwrap();
        assert_eq!(c.get(0, 0), 2.0);
        assert_eq!(c.get(0, 1), 3.0);
        assert_eq!(c.get(1, 1), 3.0);
        // exact cancellation leaves no stored entry
        let d = SparseMatrix::linear_combination(&[(1.0, &a), (-1.0, &a)]).unwrap();
        assert_eq!(d.nnz(), 0);
    }

    #[test]
    fn matmul_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let a = random_generator(&mut rng, 12, 1.5);
            let b = random_generator(&mut rng, 12, 1.5);
            let c = a.matmul(&b).unwrap();
            let cd = a.to_dense().matmul(&b.to_dense());
            assert!(max_entry_diff(&c.to_dense(), &cd) < 1e-12);
        }
    }

    #[test]
    fn commutator_two_state_pair() {
        // [[-1,-1],[1,1]] against [[-1,1],[1,-1]] gives [[-2,-2],[2,2]]
        let a0 = SparseMatrix::from_triplets(
            2,
            2,
            vec![(0, 0, -1.0), (1, 0, 1.0), (0, 1, 1.0), (1, 1, -1.0)],
        )
        .unwrap();
        let a1 = SparseMatrix::from_triplets(
            2,
            2,
            vec![(0, 0, -1.0), (1, 0, 1.0), (0, 1, -1.0), (1, 1, 1.0)],
        )
        .unwrap();
        let c = commutator(&a1, &a0).unwrap();
        assert_eq!(c.get(0, 0), -2.0);
        assert_eq!(c.get(0, 1), -2.0);
        assert_eq!(c.get(1, 0), 2.0);
        assert_eq!(c.get(1, 1), 2.0);
    }

    #[test]
    fn commutator_of_generators_has_zero_column_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..20 {
            let a = random_generator(&mut rng, 30, 2.0);
            let b = random_generator(&mut rng, 30, 2.0);
            let c = commutator(&a, &b).unwrap();
            let scale = c.max_abs().max(1.0);
            for s in c.column_sums() {
                assert!(s.abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn lu_solve_recovers_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let n = 9;
            let mut a = random_dense(&mut rng, n, 1.0);
            for i in 0..n {
                a.set(i, i, a.at(i, i) + 4.0);
            }
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b = a.mul_vec(&x);
            let mut rhs = DenseMatrix::zeros(n, 1);
            for i in 0..n {
                rhs.set(i, 0, b[i]);
            }
            let sol = a.clone().lu_solve(rhs).unwrap();
            for i in 0..n {
                assert!((sol.at(i, 0) - x[i]).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn expm_nilpotent_is_exact() {
        let h = DenseMatrix::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let e = dense_expm(&h).unwrap();
        let want = DenseMatrix::from_rows(&[&[1.0, 1.0], &[0.0, 1.0]]);
        assert!(max_entry_diff(&e, &want) < 1e-14);
    }

    #[test]
    fn expm_diagonal() {
        let h = DenseMatrix::from_rows(&[&[-1.0, 0.0], &[0.0, 2.0]]);
        let e = dense_expm(&h).unwrap();
        assert!((e.at(0, 0) - (-1.0f64).exp()).abs() < 1e-14);
        assert!((e.at(1, 1) - 2.0f64.exp()).abs() < 1e-13);
        assert_eq!(e.at(0, 1), 0.0);
    }

    #[test]
    fn expm_matches_taylor_oracle_small_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..25 {
            let mut h = random_dense(&mut rng, 8, 0.3);
            let norm = h.norm_one();
            if norm > 1.0 {
                h.scale(1.0 / norm);
            }
            let pade = dense_expm(&h).unwrap();
            let taylor = taylor_expm(&h);
            assert!(max_entry_diff(&pade, &taylor) < 1e-12);
        }
    }

    #[test]
    fn expm_matches_taylor_oracle_moderate_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..10 {
            let h = random_dense(&mut rng, 10, 3.0);
            let pade = dense_expm(&h).unwrap();
            let taylor = taylor_expm(&h);
            let scale = taylor.max_abs().max(1.0);
            assert!(max_entry_diff(&pade, &taylor) / scale < 1e-12);
        }
    }

    #[test]
    fn expm_inverse_identity_moderate_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for _ in 0..10 {
            let mut h = random_dense(&mut rng, 12, 1.0);
            let norm = h.norm_one();
            h.scale(5.0 / norm);
            let mut neg = h.clone();
            neg.scale(-1.0);
            let prod = dense_expm(&h).unwrap().matmul(&dense_expm(&neg).unwrap());
            let diff = max_entry_diff(&prod, &DenseMatrix::identity(12));
            assert!(diff < 1e-12, "identity defect {diff}");
        }
    }

    #[test]
    fn expm_inverse_identity_large_norm() {
        // At norm 50 the product is only well conditioned when both
        // exponentials stay bounded, so use skew-symmetric matrices.
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        for _ in 0..10 {
            let n = 12;
            let mut h = DenseMatrix::zeros(n, n);
            for r in 0..n {
                for c in r + 1..n {
                    let v = rng.gen_range(-1.0..1.0);
                    h.set(r, c, v);
                    h.set(c, r, -v);
                }
            }
            let norm = h.norm_one();
            h.scale(50.0 / norm);
            let mut neg = h.clone();
            neg.scale(-1.0);
            let prod = dense_expm(&h).unwrap().matmul(&dense_expm(&neg).unwrap());
            let diff = max_entry_diff(&prod, &DenseMatrix::identity(n));
            assert!(diff < 1e-10, "identity defect {diff}");
        }
    }

    #[test]
    fn expm_of_generator_is_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..10 {
            let g = random_generator(&mut rng, 15, 1.0).to_dense();
            let e = dense_expm(&g).unwrap();
            for c in 0..15 {
                let mut s = 0.0;
                for r in 0..15 {
                    let v = e.at(r, c);
                    assert!(v > -1e-13);
                    s += v;
                }
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn expm_rejects_pathological_norm() {
        let h = DenseMatrix::from_rows(&[&[1e9, 0.0], &[0.0, 1e9]]);
        match dense_expm(&h) {
            Err(Error::ExpOverflow { norm }) => assert!(norm > 700.0),
            other => panic!("expected overflow error, got {other:?}"),
        }
    }
}
