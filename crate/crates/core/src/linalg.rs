//! Small dense linear algebra kernel, generic over [`Real`].
//!
//! Matrices are row-major. The problem sizes in this crate are a few hundred
//! columns at most, so plain O(n^3) kernels are sufficient.

use std::ops::{Index, IndexMut};

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {0})")]
    NotPositiveDefinite(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(&'static str),
    #[error("eigen iteration did not converge")]
    NoConvergence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match shape");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn diag(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| x * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect(),
        }
    }

    pub fn add_scaled_in_place(&mut self, other: &Self, s: T) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + s * b;
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == T::zero() {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(brow) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "matvec dimension");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ v`
    pub fn tmatvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.rows, v.len(), "tmatvec dimension");
        let mut out = vec![T::zero(); self.cols];
        for i in 0..self.rows {
            let vi = v[i];
            if vi == T::zero() {
                continue;
            }
            for (o, &x) in out.iter_mut().zip(self.row(i)) {
                *o = *o + vi * x;
            }
        }
        out
    }

    /// `selfᵀ diag(w) self`, exploiting symmetry and row sparsity.
    pub fn weighted_gram(&self, w: Option<&[T]>) -> Self {
        let p = self.cols;
        let mut g = Self::zeros(p, p);
        let mut nz: Vec<usize> = Vec::with_capacity(p);
        for i in 0..self.rows {
            let wi = w.map_or(T::one(), |w| w[i]);
            if wi == T::zero() {
                continue;
            }
            let row = self.row(i);
            nz.clear();
            nz.extend((0..p).filter(|&j| row[j] != T::zero()));
            for (a, &j) in nz.iter().enumerate() {
                let xj = row[j] * wi;
                for &k in &nz[a..] {
                    let gk = &mut g.data[j * p + k];
                    *gk = *gk + xj * row[k];
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                g.data[j * p + k] = g.data[k * p + j];
            }
        }
        g
    }

    /// `selfᵀ diag(w) v`
    pub fn weighted_tmatvec(&self, w: Option<&[T]>, v: &[T]) -> Vec<T> {
        match w {
            None => self.tmatvec(v),
            Some(w) => {
                let wv: Vec<T> = w.iter().zip(v).map(|(&a, &b)| a * b).collect();
                self.tmatvec(&wv)
            }
        }
    }

    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        Self::from_fn(rows.len(), cols.len(), |i, j| self[(rows[i], cols[j])])
    }

    pub fn select_cols(&self, cols: &[usize]) -> Self {
        Self::from_fn(self.rows, cols.len(), |i, j| self[(i, cols[j])])
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self::from_fn(rows.len(), self.cols, |i, j| self[(rows[i], j)])
    }

    pub fn hstack(blocks: &[&Self]) -> Self {
        let rows = blocks.first().map_or(0, |b| b.rows);
        assert!(blocks.iter().all(|b| b.rows == rows), "hstack row mismatch");
        let cols = blocks.iter().map(|b| b.cols).sum();
        let mut out = Self::zeros(rows, cols);
        let mut off = 0;
        for b in blocks {
            for i in 0..rows {
                out.row_mut(i)[off..off + b.cols].copy_from_slice(b.row(i));
            }
            off += b.cols;
        }
        out
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Self) {
        for i in 0..block.rows {
            for j in 0..block.cols {
                self[(r0 + i, c0 + j)] = block[(i, j)];
            }
        }
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Symmetrizes in place as `(A + Aᵀ)/2`.
    pub fn symmetrize(&mut self) {
        let half = T::lit(0.5);
        for i in 0..self.rows {
            for j in 0..i {
                let v = (self[(i, j)] + self[(j, i)]) * half;
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }
}

impl<T> Index<(usize, usize)> for Mat<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Mat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: Mat<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn new(a: &Mat<T>) -> Result<Self, LinalgError> {
        if a.rows != a.cols {
            return Err(LinalgError::Dimension("cholesky of non-square matrix"));
        }
        let n = a.rows;
        let mut l = Mat::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            {
                let lj = l.row(j);
                d = d - dot(&lj[..j], &lj[..j]);
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(LinalgError::NotPositiveDefinite(j));
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let s = {
                    let (li, lj) = (l.row(i), l.row(j));
                    a[(i, j)] - dot(&li[..j], &lj[..j])
                };
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l })
    }

    /// Factorizes `A`, retrying with a diagonal ridge of `jitter · max|diag|`
    /// (growing tenfold) when the plain factorization fails.
    pub fn new_with_jitter(a: &Mat<T>, jitter: T) -> Result<(Self, T), LinalgError> {
        match Self::new(a) {
            Ok(c) => Ok((c, T::zero())),
            Err(_) => {
                let scale = (0..a.rows).fold(T::zero(), |m, i| m.max(a[(i, i)].abs())).max(T::one());
                let mut ridge = jitter * scale;
                for _ in 0..8 {
                    let mut b = a.clone();
                    for i in 0..b.rows {
                        b[(i, i)] = b[(i, i)] + ridge;
                    }
                    if let Ok(c) = Self::new(&b) {
                        return Ok((c, ridge));
                    }
                    ridge = ridge * T::lit(10.0);
                }
                Err(LinalgError::NotPositiveDefinite(0))
            }
        }
    }

    pub fn factor(&self) -> &Mat<T> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.rows
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.l.rows;
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let row = self.l.row(i);
            let s = dot(&row[..i], &y[..i]);
            y[i] = (y[i] - s) / row[i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s = s - self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    /// Solves `L z = b` only.
    pub fn solve_lower(&self, b: &[T]) -> Vec<T> {
        let n = self.l.rows;
        let mut y = b.to_vec();
        for i in 0..n {
            let row = self.l.row(i);
            let s = dot(&row[..i], &y[..i]);
            y[i] = (y[i] - s) / row[i];
        }
        y
    }

    pub fn solve_mat(&self, b: &Mat<T>) -> Mat<T> {
        let mut out = Mat::zeros(b.rows, b.cols);
        for j in 0..b.cols {
            let x = self.solve(&b.col(j));
            for i in 0..b.rows {
                out[(i, j)] = x[i];
            }
        }
        out
    }

    pub fn inverse(&self) -> Mat<T> {
        let n = self.l.rows;
        // invert L, then A^{-1} = L^{-T} L^{-1}
        let mut linv = Mat::zeros(n, n);
        for j in 0..n {
            linv[(j, j)] = T::one() / self.l[(j, j)];
            for i in (j + 1)..n {
                let mut s = T::zero();
                for k in j..i {
                    s = s + self.l[(i, k)] * linv[(k, j)];
                }
                linv[(i, j)] = -s / self.l[(i, i)];
            }
        }
        let mut inv = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = T::zero();
                for k in i..n {
                    s = s + linv[(k, i)] * linv[(k, j)];
                }
                inv[(i, j)] = s;
                inv[(j, i)] = s;
            }
        }
        inv
    }

    pub fn logdet(&self) -> T {
        let two = T::lit(2.0);
        (0..self.l.rows).map(|i| self.l[(i, i)].ln() * two).sum()
    }
}

/// Eigen-decomposition of a symmetric matrix: eigenvalues ascending, with the
/// matching eigenvectors stored as columns.
#[derive(Debug, Clone)]
pub struct SymEigen<T> {
    pub values: Vec<T>,
    pub vectors: Mat<T>,
}

impl<T: Real> SymEigen<T> {
    /// Cyclic Jacobi rotations.
    pub fn new(a: &Mat<T>) -> Result<Self, LinalgError> {
        if a.rows != a.cols {
            return Err(LinalgError::Dimension("eigen of non-square matrix"));
        }
        let n = a.rows;
        let mut m = a.clone();
        m.symmetrize();
        let mut v = Mat::identity(n);
        let eps = T::epsilon();
        let mut converged = n <= 1;
        for _sweep in 0..100 {
            let mut off = T::zero();
            let mut total = T::zero();
            for i in 0..n {
                for j in 0..n {
                    let x = m[(i, j)] * m[(i, j)];
                    total = total + x;
                    if i != j {
                        off = off + x;
                    }
                }
            }
            if off <= eps * eps * total || off == T::zero() {
                converged = true;
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = m[(p, q)];
                    let app = m[(p, p)];
                    let aqq = m[(q, q)];
                    // Entries below the rounding of both diagonals are already zero.
                    if apq.abs() <= eps * T::lit(0.5) * app.abs().min(aqq.abs()) {
                        m[(p, q)] = T::zero();
                        m[(q, p)] = T::zero();
                        continue;
                    }
                    let theta = (aqq - app) / (T::lit(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m[(k, p)];
                        let mkq = m[(k, q)];
                        m[(k, p)] = c * mkp - s * mkq;
                        m[(k, q)] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[(p, k)];
                        let mqk = m[(q, k)];
                        m[(p, k)] = c * mpk - s * mqk;
                        m[(q, k)] = s * mpk + c * mqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                    // The rotation annihilates the pair exactly; drop rounding residue.
                    m[(p, q)] = T::zero();
                    m[(q, p)] = T::zero();
                }
            }
        }
        if !converged {
            return Err(LinalgError::NoConvergence);
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).unwrap_or(std::cmp::Ordering::Equal));
        let values = order.iter().map(|&i| m[(i, i)]).collect();
        let vectors = Mat::from_fn(n, n, |r, c| v[(r, order[c])]);
        Ok(Self { values, vectors })
    }

    /// Number of eigenvalues above `rel_tol · max eigenvalue`.
    pub fn rank(&self, rel_tol: T) -> usize {
        let max = self.values.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
        self.values.iter().filter(|&&x| x > rel_tol * max).count()
    }
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix, truncated to the
/// `rank` largest eigenvalues. Returns the inverse and the rank used.
pub fn pinv_sym<T: Real>(a: &Mat<T>, rank: Option<usize>, rel_tol: T) -> Result<(Mat<T>, usize), LinalgError> {
    let e = SymEigen::new(a)?;
    let n = a.nrows();
    let auto_rank = e.rank(rel_tol);
    let r = rank.map_or(auto_rank, |r| r.min(auto_rank));
    let mut out = Mat::zeros(n, n);
    for idx in (n - r)..n {
        let lam = e.values[idx];
        for i in 0..n {
            let vi = e.vectors[(i, idx)] / lam;
            for j in 0..n {
                out[(i, j)] = out[(i, j)] + vi * e.vectors[(j, idx)];
            }
        }
    }
    Ok((out, r))
}

/// Householder reflector `Q` with first column parallel to `c`; columns
/// `1..k` form an orthonormal basis of the complement of `c`.
pub fn householder_complement<T: Real>(c: &[T]) -> Mat<T> {
    let k = c.len();
    let norm = c.iter().map(|&x| x * x).sum::<T>().sqrt();
    let mut v = c.to_vec();
    let sign = if c[0] >= T::zero() { T::one() } else { -T::one() };
    v[0] = v[0] + sign * norm;
    let vv: T = v.iter().map(|&x| x * x).sum();
    let mut q = Mat::identity(k);
    if vv > T::zero() {
        let two = T::lit(2.0);
        for i in 0..k {
            for j in 0..k {
                q[(i, j)] = q[(i, j)] - two * v[i] * v[j] / vv;
            }
        }
    }
    Mat::from_fn(k, k - 1, |i, j| q[(i, j + 1)])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> Mat<f64> {
        let b = Mat::from_fn(n + 2, n, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0 + if i == j { 3.0 } else { 0.0 });
        b.weighted_gram(None)
    }

    #[test]
    fn cholesky_solves_and_inverts() {
        let a = spd(5);
        let c = Cholesky::new(&a).unwrap();
        let b = vec![1.0, -2.0, 0.5, 3.0, 0.0];
        let x = c.solve(&b);
        let ax = a.matvec(&x);
        for (u, v) in ax.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10);
        }
        let id = a.matmul(&c.inverse());
        for i in 0..5 {
            for j in 0..5 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - e).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(Cholesky::new(&a).is_err());
    }

    #[test]
    fn eigen_reconstructs() {
        let a = spd(6);
        let e = SymEigen::new(&a).unwrap();
        let rec = e.vectors.matmul(&Mat::diag(&e.values)).matmul(&e.vectors.transpose());
        assert!(rec.add(&a.scale(-1.0)).max_abs() < 1e-9);
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn householder_complement_is_orthonormal_and_orthogonal() {
        let c = [3.0f64, 1.0, -2.0, 0.5];
        let q = householder_complement(&c);
        let qtq = q.transpose().matmul(&q);
        assert!(qtq.add(&Mat::identity(3).scale(-1.0)).max_abs() < 1e-12);
        let qc = q.tmatvec(&c);
        assert!(qc.iter().all(|x| x.abs() < 1e-12));
    }
}
