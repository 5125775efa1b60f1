#![allow(dead_code)]

use panelamm::panel::{Column, PanelDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normals(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Vec<f64> {
    (0..n).map(|_| { let z: f64 = StandardNormal.sample(rng); sd * z }).collect()
}

pub fn uniforms(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Balanced panel from named numeric columns.
pub fn panel(n_units: usize, n_years: usize, y: Vec<f64>, cols: Vec<(&str, Vec<f64>)>) -> PanelDataset<f64> {
    PanelDataset::balanced(
        n_units,
        2000,
        n_years,
        y,
        cols.into_iter().map(|(n, v)| (n.to_string(), Column::numeric(v))).collect(),
    )
    .unwrap()
}

/// Ordinary least squares via nalgebra's SVD.
pub fn ols(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let p = x[0].len();
    let xm = nalgebra::DMatrix::from_fn(n, p, |i, j| x[i][j]);
    let yv = nalgebra::DVector::from_column_slice(y);
    let svd = xm.svd(true, true);
    svd.solve(&yv, 1e-12).unwrap().iter().copied().collect()
}
