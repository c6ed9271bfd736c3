#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use panelctrl_core::panel::PanelBlocks;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(r: &mut ChaCha8Rng, n: usize, t: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, t, |_, _| r.sample::<f64, _>(StandardNormal))
}

pub fn normal_vector(r: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal))
}

/// Random uncentered blocks whose treated unit sits partly outside the
/// donor hull, so SCM does not fit exactly.
pub fn raw_instance(r: &mut ChaCha8Rng, n0: usize, t0: usize, n_post: usize) -> PanelBlocks {
    let x0 = normal_matrix(r, n0, t0);
    let shift = r.random_range(0.5..2.0);
    let x1 = normal_vector(r, t0).map(|v| v * 0.5 + shift);
    let y0 = normal_matrix(r, n0, n_post);
    let y1 = normal_vector(r, n_post);
    PanelBlocks::from_parts(x1, x0, y1, y0).unwrap()
}

pub fn instance(r: &mut ChaCha8Rng, n0: usize, t0: usize, n_post: usize) -> PanelBlocks {
    raw_instance(r, n0, t0, n_post).centered()
}

/// Log-uniform draw on `[lo, hi]`.
pub fn log_uniform(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + r.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Dense `(x0ᵀx0 + λI)⁻¹ b` through an LU factorization.
pub fn dense_shifted_solve(x0: &DMatrix<f64>, b: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let t0 = x0.ncols();
    let a = x0.tr_mul(x0) + DMatrix::identity(t0, t0) * lambda;
    a.lu().solve(b).expect("shifted Gram matrix is invertible")
}
