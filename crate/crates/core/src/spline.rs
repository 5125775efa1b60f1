//! Penalized B-spline bases (P-splines), their difference penalties,
//! sum-to-zero constraints, the mixed-model reparameterization and
//! tensor-product bases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{householder_complement, Mat, SymEigen};
use crate::scalar::Real;

pub const DEFAULT_BASIS_DIM: usize = 10;
pub const DEFAULT_TENSOR_DIM: usize = 5;
pub const DEFAULT_DEGREE: usize = 3;
pub const DEFAULT_PENALTY_ORDER: usize = 2;
/// Eigenvalues below this fraction of the largest count as zero.
pub const NULL_SPACE_TOL: f64 = 1e-10;

/// B-spline basis on equidistant knots spanning `[lower, upper]`, extended by
/// `degree` knots on each side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis<T> {
    pub knots: Vec<T>,
    pub degree: usize,
    pub dim: usize,
    pub lower: T,
    pub upper: T,
}

impl<T: Real> BSplineBasis<T> {
    pub fn new(lower: T, upper: T, dim: usize, degree: usize) -> Result<Self> {
        if dim < degree + 1 {
            return Err(Error::Dimension(format!("basis dimension {dim} too small for degree {degree}")));
        }
        if !(upper > lower) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::Domain(format!("degenerate basis range [{lower}, {upper}]")));
        }
        let intervals = dim - degree;
        let h = (upper - lower) / T::from_usize_lossy(intervals);
        let knots = (0..dim + degree + 1)
            .map(|j| {
                let off = j as f64 - degree as f64;
                lower + h * T::lit(off)
            })
            .collect();
        Ok(Self { knots, degree, dim, lower, upper })
    }

    /// Basis for observed values: range `[min x, max x]`.
    pub fn for_data(x: &[T], dim: usize, degree: usize) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("basis covariate has non-finite values".into()));
        }
        let (lo, hi) = x.iter().fold((T::infinity(), T::neg_infinity()), |(a, b), &v| (a.min(v), b.max(v)));
        Self::new(lo, hi, dim, degree)
    }

    fn tolerance(&self) -> T {
        (self.upper - self.lower) * T::lit(1e-10)
    }

    pub fn contains(&self, x: T) -> bool {
        x >= self.lower - self.tolerance() && x <= self.upper + self.tolerance()
    }

    /// Values of all `dim` basis functions at `x` (at most `degree + 1` nonzero).
    pub fn evaluate(&self, x: T) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.dim];
        let (first, vals) = self.evaluate_nonzero(x)?;
        for (i, v) in vals.into_iter().enumerate() {
            out[first + i] = v;
        }
        Ok(out)
    }

    /// Index of the first nonzero basis function and the `degree + 1` values
    /// starting there.
    pub fn evaluate_nonzero(&self, x: T) -> Result<(usize, Vec<T>)> {
        if !x.is_finite() || !self.contains(x) {
            return Err(Error::Range(format!("value {x} outside basis range [{}, {}]", self.lower, self.upper)));
        }
        let x = x.max(self.lower).min(self.upper);
        let p = self.degree;
        let t = &self.knots;
        // knot span: t[span] <= x < t[span+1], span in p..dim
        let mut span = p;
        while span + 1 < self.dim && x >= t[span + 1] {
            span += 1;
        }
        let mut n = vec![T::zero(); p + 1];
        n[0] = T::one();
        let mut left = vec![T::zero(); p + 1];
        let mut right = vec![T::zero(); p + 1];
        for j in 1..=p {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = T::zero();
            for r in 0..j {
                let tmp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            n[j] = saved;
        }
        Ok((span - p, n))
    }

    /// `n × dim` design matrix.
    pub fn design(&self, x: &[T]) -> Result<Mat<T>> {
        let mut m = Mat::zeros(x.len(), self.dim);
        for (i, &xi) in x.iter().enumerate() {
            let (first, vals) = self.evaluate_nonzero(xi)?;
            for (j, v) in vals.into_iter().enumerate() {
                m[(i, first + j)] = v;
            }
        }
        Ok(m)
    }
}

/// Difference operator `D` ((k − order) × k) and penalty `P = DᵀD`.
pub fn difference_penalty<T: Real>(k: usize, order: usize) -> Result<(Mat<T>, Mat<T>)> {
    if order == 0 || order >= k {
        return Err(Error::Dimension(format!("difference order {order} invalid for {k} coefficients")));
    }
    let mut stencil = vec![0i64; order + 1];
    for (i, s) in stencil.iter_mut().enumerate() {
        let binom = (0..i).fold(1i64, |acc, m| acc * (order - m) as i64 / (m + 1) as i64);
        *s = if (order - i).is_multiple_of(2) { binom } else { -binom };
    }
    let d = Mat::from_fn(k - order, k, |r, c| {
        if c >= r && c - r <= order {
            T::lit(stencil[c - r] as f64)
        } else {
            T::zero()
        }
    });
    let p = d.transpose().matmul(&d);
    Ok((d, p))
}

/// A univariate P-spline block: design, knots, difference penalty and an
/// optional sum-to-zero constraint.
#[derive(Debug, Clone)]
pub struct BasisBlock<T> {
    pub basis: BSplineBasis<T>,
    /// `n × k` (or `n × (k−1)` when constrained).
    pub design: Mat<T>,
    pub penalty: Mat<T>,
    pub difference: Mat<T>,
    pub penalty_order: usize,
    /// `k × (k−1)` map from constrained to original coefficients.
    pub constraint: Option<Mat<T>>,
}

/// Cubic-by-default B-spline design with the order-2 difference penalty attached.
pub fn bspline_basis<T: Real>(x: &[T], k: usize, degree: usize) -> Result<BasisBlock<T>> {
    let basis = BSplineBasis::for_data(x, k, degree)?;
    let design = basis.design(x)?;
    let order = DEFAULT_PENALTY_ORDER.min(k - 1);
    let (difference, penalty) = difference_penalty(k, order)?;
    Ok(BasisBlock { basis, design, penalty, difference, penalty_order: order, constraint: None })
}

impl<T: Real> BasisBlock<T> {
    pub fn dim(&self) -> usize {
        self.design.ncols()
    }

    pub fn with_penalty_order(mut self, order: usize) -> Result<Self> {
        let (d, p) = difference_penalty(self.basis.dim, order)?;
        self.difference = d;
        self.penalty = match &self.constraint {
            Some(q) => q.transpose().matmul(&p).matmul(q),
            None => p,
        };
        self.penalty_order = order;
        Ok(self)
    }
}

/// Imposes `Σ_rows B a = 0`: the design is post-multiplied by an orthonormal
/// basis of the complement of its column sums and the penalty is transformed
/// congruently.
pub fn apply_sum_to_zero<T: Real>(block: &BasisBlock<T>) -> Result<BasisBlock<T>> {
    if block.constraint.is_some() {
        return Err(Error::Dimension("block is already constrained".into()));
    }
    let q = sum_to_zero_map(&block.design)?;
    Ok(BasisBlock {
        basis: block.basis.clone(),
        design: block.design.matmul(&q),
        penalty: q.transpose().matmul(&block.penalty).matmul(&q),
        difference: block.difference.clone(),
        penalty_order: block.penalty_order,
        constraint: Some(q),
    })
}

/// `k × (k−1)` orthonormal map onto the complement of the design's column sums.
pub fn sum_to_zero_map<T: Real>(design: &Mat<T>) -> Result<Mat<T>> {
    if design.ncols() < 2 {
        return Err(Error::Dimension("sum-to-zero constraint needs at least 2 columns".into()));
    }
    let sums = design.tmatvec(&vec![T::one(); design.nrows()]);
    if sums.iter().all(|&s| s == T::zero()) {
        return Err(Error::Domain("design has no observations to center on".into()));
    }
    Ok(householder_complement(&sums))
}

/// Mixed-model form of a penalized block: `B a = X β + Z b`, with the penalty
/// zero on β and `Σ λ_m bᵀ S_m b` on b (a single penalty becomes the identity).
#[derive(Debug, Clone)]
pub struct MixedReparam<T> {
    pub x_unpen: Mat<T>,
    pub z_pen: Mat<T>,
    /// `k × k` map from mixed coefficients `(β, b)` to block coefficients `a`.
    pub transform: Mat<T>,
    pub null_dim: usize,
    /// Penalties on `b`.
    pub penalties: Vec<Mat<T>>,
}

/// Splits the coefficient space by the eigen-decomposition of the penalty.
pub fn reparameterize_to_mixed<T: Real>(block: &BasisBlock<T>) -> Result<MixedReparam<T>> {
    reparameterize_multi(&block.design, std::slice::from_ref(&block.penalty))
}

/// Mixed reparameterization for one or several penalties on the same
/// coefficients (tensor products); the null space is that of `Σ S_m`.
pub fn reparameterize_multi<T: Real>(design: &Mat<T>, penalties: &[Mat<T>]) -> Result<MixedReparam<T>> {
    let k = design.ncols();
    let mut total = Mat::zeros(k, k);
    for p in penalties {
        if p.nrows() != k || p.ncols() != k {
            return Err(Error::Dimension("penalty size does not match design".into()));
        }
        total = total.add(p);
    }
    let (transform, null_dim, pos_vecs, pos_vals) = penalty_split(&total)?;
    let scaled = Mat::from_fn(k, k - null_dim, |i, j| pos_vecs[(i, j)] / pos_vals[j].sqrt());
    let pens = if penalties.len() == 1 {
        vec![Mat::identity(k - null_dim)]
    } else {
        penalties.iter().map(|p| scaled.transpose().matmul(p).matmul(&scaled)).collect()
    };
    let mixed = design.matmul(&transform);
    let null_cols: Vec<usize> = (0..null_dim).collect();
    let pen_cols: Vec<usize> = (null_dim..k).collect();
    Ok(MixedReparam {
        x_unpen: mixed.select_cols(&null_cols),
        z_pen: mixed.select_cols(&pen_cols),
        transform,
        null_dim,
        penalties: pens,
    })
}

/// Returns `(transform, null_dim, V1, eigenvalues of V1)` for a PSD penalty.
fn penalty_split<T: Real>(p: &Mat<T>) -> Result<(Mat<T>, usize, Mat<T>, Vec<T>)> {
    let k = p.nrows();
    let eig = SymEigen::new(p)?;
    let max = eig.values.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    if let Some(&neg) = eig.values.iter().find(|&&v| v < -T::lit(1e-8) * max.max(T::min_positive_value())) {
        return Err(Error::Numeric(format!("penalty is indefinite (eigenvalue {neg})")));
    }
    let cut = T::lit(NULL_SPACE_TOL) * max;
    let null_dim = eig.values.iter().filter(|&&v| v <= cut).count();
    let pos_vals: Vec<T> = eig.values[null_dim..].to_vec();
    let pos_vecs = Mat::from_fn(k, k - null_dim, |i, j| eig.vectors[(i, null_dim + j)]);
    let transform = Mat::from_fn(k, k, |i, j| {
        if j < null_dim {
            eig.vectors[(i, j)]
        } else {
            eig.vectors[(i, j)] / pos_vals[j - null_dim].sqrt()
        }
    });
    Ok((transform, null_dim, pos_vecs, pos_vals))
}

/// Row-wise Kronecker product of two marginal bases with one penalty per margin.
///
/// Column `j1 · k2 + j2` holds `B1_{j1}(x) · B2_{j2}(z)`.
#[derive(Debug, Clone)]
pub struct TensorBlock<T> {
    pub design: Mat<T>,
    /// `P1 ⊗ I_{k2}` and `I_{k1} ⊗ P2`.
    pub penalties: [Mat<T>; 2],
    pub margins: [BSplineBasis<T>; 2],
    pub smoothing: [T; 2],
}

pub fn row_kronecker<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &x in a {
        for &y in b {
            out.push(x * y);
        }
    }
    out
}

pub fn kron<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    Mat::from_fn(a.nrows() * b.nrows(), a.ncols() * b.ncols(), |i, j| {
        a[(i / b.nrows(), j / b.ncols())] * b[(i % b.nrows(), j % b.ncols())]
    })
}

pub fn tensor_product<T: Real>(block_x: &BasisBlock<T>, block_z: &BasisBlock<T>) -> Result<TensorBlock<T>> {
    let (bx, bz) = (&block_x.design, &block_z.design);
    if bx.nrows() != bz.nrows() {
        return Err(Error::Dimension(format!("marginal row counts differ: {} vs {}", bx.nrows(), bz.nrows())));
    }
    let (k1, k2) = (bx.ncols(), bz.ncols());
    let mut design = Mat::zeros(bx.nrows(), k1 * k2);
    for i in 0..bx.nrows() {
        design.row_mut(i).copy_from_slice(&row_kronecker(bx.row(i), bz.row(i)));
    }
    let penalties = [kron(&block_x.penalty, &Mat::identity(k2)), kron(&Mat::identity(k1), &block_z.penalty)];
    Ok(TensorBlock {
        design,
        penalties,
        margins: [block_x.basis.clone(), block_z.basis.clone()],
        smoothing: [T::one(), T::one()],
    })
}

/// A smooth model term in the form the model engine consumes: one or two
/// marginal bases, an optional centering constraint and the mixed
/// reparameterization, so new rows can be mapped to the same coordinates.
#[derive(Debug, Clone)]
pub struct SmoothBasis<T> {
    pub margins: Vec<BSplineBasis<T>>,
    pub constraint: Option<Mat<T>>,
    pub transform: Mat<T>,
    pub null_dim: usize,
    pub penalties: Vec<Mat<T>>,
}

impl<T: Real> SmoothBasis<T> {
    /// Univariate P-spline, optionally restricted to rows where `mask` is
    /// true (other rows get a zero design row). Knots span `range` when given,
    /// otherwise the observed range of the masked rows.
    pub fn univariate(
        x: &[T],
        mask: Option<&[bool]>,
        range: Option<(T, T)>,
        k: usize,
        order: usize,
        center: bool,
    ) -> Result<(Self, Mat<T>)> {
        let active: Vec<T> = active_values(x, mask);
        let basis = match range {
            Some((lo, hi)) => BSplineBasis::new(lo, hi, k, DEFAULT_DEGREE)?,
            None => BSplineBasis::for_data(&active, k, DEFAULT_DEGREE)?,
        };
        let raw = masked_design(x.len(), mask, |i| basis.evaluate(x[i]))?;
        let (_, p) = difference_penalty(k, order)?;
        Self::finish(vec![basis], raw, vec![p], center)
    }

    /// Tensor-product smooth of two covariates.
    pub fn tensor(
        x1: &[T],
        x2: &[T],
        mask: Option<&[bool]>,
        ranges: Option<[(T, T); 2]>,
        dims: (usize, usize),
        order: usize,
        center: bool,
    ) -> Result<(Self, Mat<T>)> {
        let (a1, a2) = (active_values(x1, mask), active_values(x2, mask));
        let (m1, m2) = match ranges {
            Some([r1, r2]) => (
                BSplineBasis::new(r1.0, r1.1, dims.0, DEFAULT_DEGREE)?,
                BSplineBasis::new(r2.0, r2.1, dims.1, DEFAULT_DEGREE)?,
            ),
            None => (
                BSplineBasis::for_data(&a1, dims.0, DEFAULT_DEGREE)?,
                BSplineBasis::for_data(&a2, dims.1, DEFAULT_DEGREE)?,
            ),
        };
        if x1.len() != x2.len() {
            return Err(Error::Dimension("tensor covariates differ in length".into()));
        }
        let raw = masked_design(x1.len(), mask, |i| Ok(row_kronecker(&m1.evaluate(x1[i])?, &m2.evaluate(x2[i])?)))?;
        let (_, p1) = difference_penalty(dims.0, order.min(dims.0 - 1))?;
        let (_, p2) = difference_penalty(dims.1, order.min(dims.1 - 1))?;
        let pens = vec![kron(&p1, &Mat::identity(dims.1)), kron(&Mat::identity(dims.0), &p2)];
        Self::finish(vec![m1, m2], raw, pens, center)
    }

    fn finish(margins: Vec<BSplineBasis<T>>, raw: Mat<T>, pens: Vec<Mat<T>>, center: bool) -> Result<(Self, Mat<T>)> {
        let (design, pens, constraint) = if center {
            let q = sum_to_zero_map(&raw)?;
            let pens: Vec<Mat<T>> = pens.iter().map(|p| q.transpose().matmul(p).matmul(&q)).collect();
            (raw.matmul(&q), pens, Some(q))
        } else {
            (raw, pens, None)
        };
        let mr = reparameterize_multi(&design, &pens)?;
        let mixed = Mat::hstack(&[&mr.x_unpen, &mr.z_pen]);
        Ok((
            Self { margins, constraint, transform: mr.transform, null_dim: mr.null_dim, penalties: mr.penalties },
            mixed,
        ))
    }

    /// Number of coefficients in mixed coordinates.
    pub fn dim(&self) -> usize {
        self.transform.ncols()
    }

    /// Unconstrained basis row at a point (one value per margin).
    pub fn raw_row(&self, point: &[T]) -> Result<Vec<T>> {
        match self.margins.as_slice() {
            [m] => m.evaluate(point[0]),
            [m1, m2] => Ok(row_kronecker(&m1.evaluate(point[0])?, &m2.evaluate(point[1])?)),
            _ => Err(Error::Dimension("smooth must have one or two margins".into())),
        }
    }

    /// Design row in mixed coordinates `(β, b)`.
    pub fn mixed_row(&self, point: &[T]) -> Result<Vec<T>> {
        let raw = self.raw_row(point)?;
        let constrained = match &self.constraint {
            Some(q) => q.tmatvec(&raw),
            None => raw,
        };
        Ok(self.transform.tmatvec(&constrained))
    }

    pub fn in_range(&self, point: &[T]) -> bool {
        self.margins.iter().zip(point).all(|(m, &v)| m.contains(v))
    }
}

fn active_values<T: Real>(x: &[T], mask: Option<&[bool]>) -> Vec<T> {
    match mask {
        Some(m) => x.iter().zip(m).filter(|(_, &b)| b).map(|(&v, _)| v).collect(),
        None => x.to_vec(),
    }
}

fn masked_design<T: Real>(n: usize, mask: Option<&[bool]>, row: impl Fn(usize) -> Result<Vec<T>>) -> Result<Mat<T>> {
    let mut rows = Vec::with_capacity(n);
    let mut width = 0;
    for i in 0..n {
        if mask.is_none_or(|m| m[i]) {
            let r = row(i)?;
            width = r.len();
            rows.push(Some(r));
        } else {
            rows.push(None);
        }
    }
    let mut m = Mat::zeros(n, width);
    for (i, r) in rows.into_iter().enumerate() {
        if let Some(r) = r {
            m.row_mut(i).copy_from_slice(&r);
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn difference_stencil_order_two() {
        let (d, _) = difference_penalty::<f64>(4, 2).unwrap();
        assert_eq!(d.row(0), &[1.0, -2.0, 1.0, 0.0]);
        assert_eq!(d.row(1), &[0.0, 1.0, -2.0, 1.0]);
        let (d3, _) = difference_penalty::<f64>(5, 3).unwrap();
        assert_eq!(d3.row(0), &[-1.0, 3.0, -3.0, 1.0, 0.0]);
        assert!(difference_penalty::<f64>(3, 3).is_err());
    }

    #[test]
    fn penalty_annihilates_linear_sequences() {
        let (_, p) = difference_penalty::<f64>(7, 2).unwrap();
        let a: Vec<f64> = (0..7).map(|j| 2.5 - 0.75 * j as f64).collect();
        assert!(p.matvec(&a).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn basis_errors() {
        assert!(matches!(bspline_basis(&[0.0, 1.0], 3, 3), Err(Error::Dimension(_))));
        assert!(matches!(bspline_basis(&[2.0, 2.0], 6, 3), Err(Error::Domain(_))));
        let b = bspline_basis(&[0.0, 1.0], 6, 3).unwrap();
        assert!(matches!(b.basis.evaluate(-0.5), Err(Error::Range(_))));
    }

    #[test]
    fn rows_have_local_support() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 / 7.0).collect();
        let b = bspline_basis(&x, 10, 3).unwrap();
        for i in 0..x.len() {
            let nz = b.design.row(i).iter().filter(|v| v.abs() > 0.0).count();
            assert!(nz <= 4);
        }
    }

    #[test]
    fn tensor_width_and_indicator_identity() {
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let z: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let bx = bspline_basis(&x, 5, 3).unwrap();
        let bz = bspline_basis(&z, 6, 3).unwrap();
        let t = tensor_product(&bx, &bz).unwrap();
        assert_eq!(t.design.ncols(), 30);
        let e = [0.0, 0.0, 1.0, 0.0, 0.0];
        let row = row_kronecker(&e, bz.design.row(3));
        assert_eq!(&row[12..18], bz.design.row(3));
        assert!(row[..12].iter().chain(&row[18..]).all(|&v| v == 0.0));
        let short = bspline_basis(&z[..10], 6, 3).unwrap();
        assert!(matches!(tensor_product(&bx, &short), Err(Error::Dimension(_))));
    }
}
