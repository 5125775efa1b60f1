mod common;

use nalgebra::{DMatrix, DVector};
use panelamm::linalg::Mat;
use panelamm::spline::{
    apply_sum_to_zero, bspline_basis, difference_penalty, reparameterize_to_mixed, tensor_product, BSplineBasis,
};
use proptest::prelude::*;

fn dm(m: &Mat<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Penalized least-squares fitted values `X (XᵀX + S)⁻¹ Xᵀ y`.
fn ridge_fit(x: &DMatrix<f64>, s: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let a = x.transpose() * x + s;
    let b = x.transpose() * y;
    x * a.lu().solve(&b).unwrap()
}

/// Textbook Cox–de Boor recursion on an explicit knot vector.
fn cox_de_boor(knots: &[f64], j: usize, p: usize, x: f64) -> f64 {
    if p == 0 {
        return if knots[j] <= x && x < knots[j + 1] { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = knots[j + p] - knots[j];
    if d1 > 0.0 {
        v += (x - knots[j]) / d1 * cox_de_boor(knots, j, p - 1, x);
    }
    let d2 = knots[j + p + 1] - knots[j + 1];
    if d2 > 0.0 {
        v += (knots[j + p + 1] - x) / d2 * cox_de_boor(knots, j + 1, p - 1, x);
    }
    v
}

#[test]
fn basis_matches_cox_de_boor_at_interval_midpoints() {
    let b = BSplineBasis::<f64>::new(-1.0, 3.0, 9, 3).unwrap();
    for w in b.knots[3..b.knots.len() - 3].windows(2) {
        let x = 0.5 * (w[0] + w[1]);
        let row = b.evaluate(x).unwrap();
        for (j, v) in row.iter().enumerate() {
            assert!((v - cox_de_boor(&b.knots, j, 3, x)).abs() < 1e-13, "x = {x}, j = {j}");
        }
    }
}

#[test]
fn order_two_penalty_has_two_zero_eigenvalues() {
    for k in [4, 8, 12] {
        let (_, p) = difference_penalty::<f64>(k, 2).unwrap();
        let eig = dm(&p).symmetric_eigen();
        let max = eig.eigenvalues.amax();
        let zeros = eig.eigenvalues.iter().filter(|v| v.abs() < 1e-10 * max).count();
        assert_eq!(zeros, 2, "k = {k}");
        assert!(eig.eigenvalues.iter().all(|&v| v > -1e-10 * max));
    }
}

#[test]
fn mixed_form_reproduces_penalized_fit() {
    let mut r = common::rng(11);
    let x = common::uniforms(&mut r, 40, 0.0, 5.0);
    let y: Vec<f64> = x.iter().zip(common::normals(&mut r, 40, 0.2)).map(|(v, e)| v.sin() + e).collect();
    let yv = DVector::from_column_slice(&y);
    let block = bspline_basis(&x, 8, 3).unwrap();
    let mr = reparameterize_to_mixed(&block).unwrap();
    assert_eq!(mr.null_dim, 2);
    let b = dm(&block.design);
    let xz = dm(&Mat::hstack(&[&mr.x_unpen, &mr.z_pen]));
    for lambda in [0.0, 0.1, 1.0, 10.0] {
        let direct = ridge_fit(&b, &(dm(&block.penalty) * lambda), &yv);
        let mut s = DMatrix::zeros(8, 8);
        for j in 2..8 {
            s[(j, j)] = lambda;
        }
        let mixed = ridge_fit(&xz, &s, &yv);
        assert!((direct - mixed).amax() < 1e-8, "lambda = {lambda}");
    }
}

#[test]
fn unpenalized_part_spans_straight_lines() {
    let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.77).cos() * 3.0).collect();
    let y: Vec<f64> = x.iter().map(|v| v * v).collect();
    let mr = reparameterize_to_mixed(&bspline_basis(&x, 10, 3).unwrap()).unwrap();
    let yv = DVector::from_column_slice(&y);
    let fit_null = ridge_fit(&dm(&mr.x_unpen), &DMatrix::zeros(2, 2), &yv);
    let line = common::ols(&x.iter().map(|&v| vec![1.0, v]).collect::<Vec<_>>(), &y);
    for (i, &v) in x.iter().enumerate() {
        assert!((fit_null[i] - (line[0] + line[1] * v)).abs() < 1e-8);
    }
}

#[test]
fn sum_to_zero_removes_the_constant_and_keeps_fits() {
    let mut r = common::rng(5);
    let x = common::uniforms(&mut r, 60, -2.0, 2.0);
    let y: Vec<f64> = x.iter().zip(common::normals(&mut r, 60, 0.3)).map(|(v, e)| 1.5 + v.exp() + e).collect();
    let yv = DVector::from_column_slice(&y);
    let raw = bspline_basis(&x, 10, 3).unwrap();
    let con = apply_sum_to_zero(&raw).unwrap();
    assert_eq!(con.design.ncols(), 9);
    assert!(con.constraint.is_some());

    // Every column, hence every effect, sums to zero over the sample.
    let bq = dm(&con.design);
    for j in 0..9 {
        assert!(bq.column(j).sum().abs() < 1e-10);
    }
    // The constant is orthogonal to the constrained span.
    let ones = DVector::from_element(60, 1.0);
    let proj = ridge_fit(&bq, &(DMatrix::identity(9, 9) * 1e-14), &ones);
    assert!(proj.amax() < 1e-8);

    // Intercept plus constrained smooth fits like the unconstrained smooth.
    for lambda in [0.0, 1.0, 25.0] {
        let direct = ridge_fit(&dm(&raw.design), &(dm(&raw.penalty) * lambda), &yv);
        let mut x1 = DMatrix::zeros(60, 10);
        x1.column_mut(0).fill(1.0);
        x1.view_mut((0, 1), (60, 9)).copy_from(&bq);
        let mut s = DMatrix::zeros(10, 10);
        s.view_mut((1, 1), (9, 9)).copy_from(&(dm(&con.penalty) * lambda));
        let constrained = ridge_fit(&x1, &s, &yv);
        assert!((direct - constrained).amax() < 1e-8, "lambda = {lambda}");
    }
}

#[test]
fn tensor_reproduces_bilinear_surface() {
    let mut x = Vec::new();
    let mut z = Vec::new();
    for i in 0..8 {
        for j in 0..8 {
            x.push(i as f64 / 7.0);
            z.push(-1.0 + j as f64 / 3.5);
        }
    }
    let y: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a * b).collect();
    let t = tensor_product(&bspline_basis(&x, 5, 3).unwrap(), &bspline_basis(&z, 5, 3).unwrap()).unwrap();
    assert_eq!(t.design.ncols(), 25);
    let fit = ridge_fit(&dm(&t.design), &(DMatrix::identity(25, 25) * 1e-13), &DVector::from_column_slice(&y));
    for (f, v) in fit.iter().zip(&y) {
        assert!((f - v).abs() < 1e-8);
    }
    for p in &t.penalties {
        let e = dm(p).symmetric_eigen();
        assert!(e.eigenvalues.iter().all(|&v| v > -1e-10 * e.eigenvalues.amax()));
    }
    for r in [0, 17, 40] {
        let a = t.margins[0].evaluate(x[r]).unwrap();
        let b = t.margins[1].evaluate(z[r]).unwrap();
        for j1 in 0..5 {
            for j2 in 0..5 {
                assert_eq!(t.design[(r, j1 * 5 + j2)], a[j1] * b[j2]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rows_sum_to_one(lo in -50.0f64..50.0, width in 0.1f64..100.0, k in 4usize..15, u in prop::collection::vec(0.0f64..=1.0, 1..40)) {
        let b = BSplineBasis::<f64>::new(lo, lo + width, k, 3).unwrap();
        for t in u {
            let x = lo + t * width;
            let s: f64 = b.evaluate(x).unwrap().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12, "x = {}, sum = {}", x, s);
        }
    }

    #[test]
    fn penalty_rank_and_null_space(k in 3usize..14, order in 1usize..4, coefs in prop::collection::vec(-3.0f64..3.0, 4)) {
        prop_assume!(order < k);
        let (d, p) = difference_penalty::<f64>(k, order).unwrap();
        prop_assert_eq!(d.nrows(), k - order);
        let rank = dm(&p).rank(1e-9 * dm(&p).amax());
        prop_assert_eq!(rank, k - order);
        // Polynomial sequences of degree < order lie in the null space.
        let seq: Vec<f64> = (0..k)
            .map(|j| (0..order).map(|q| coefs[q] * (j as f64).powi(q as i32)).sum())
            .collect();
        let scale = seq.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(p.matvec(&seq).iter().all(|v| v.abs() < 1e-9 * scale));
    }

    #[test]
    fn constrained_effects_sum_to_zero(seed in 0u64..1000, k in 5usize..12) {
        let mut r = common::rng(seed);
        let x = common::uniforms(&mut r, 50, 0.0, 10.0);
        let con = apply_sum_to_zero(&bspline_basis(&x, k, 3).unwrap()).unwrap();
        let c = common::normals(&mut r, k - 1, 5.0);
        let total: f64 = con.design.matvec(&c).iter().sum();
        prop_assert!(total.abs() < 1e-8);
    }
}
