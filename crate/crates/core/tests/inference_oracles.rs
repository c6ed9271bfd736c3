mod common;

use nalgebra::{DMatrix, DVector};
use panelctrl_core::estimator::{Estimator, EstimatorSpec, LambdaChoice};
use panelctrl_core::inference::{
    conformal_interval, conformal_p, jackknife_bounds, jackknife_plus, order_statistic, Conformal, Target,
};
use panelctrl_core::panel::{split_and_center, PanelBlocks, PanelData};
use panelctrl_core::scm::{solve_scm, ScmConfig};
use rand::Rng;

fn panel(seed: u64, n: usize, t: usize, t0: usize) -> PanelData {
    let mut r = common::rng(seed);
    let mut y = common::normal_matrix(&mut r, n, t);
    for j in 0..t {
        y[(0, j)] = 0.5 * y[(0, j)] + 0.8;
    }
    let units = (0..n).map(|i| format!("u{i}")).collect();
    let times = (1..=t).map(|s| s.to_string()).collect();
    PanelData::new(y, units, times, 0, t0).unwrap()
}

/// Residuals of a Ridge ASCM refit on the pre periods plus the post period
/// with the null effect removed, built from the raw outcome matrix.
fn reference_residuals(p: &PanelData, tau0: f64, lambda: f64) -> DVector<f64> {
    let y = p.outcomes();
    let (n0, k) = (p.n_units() - 1, p.t0() + 1);
    let raw_x1 = DVector::from_fn(k, |j, _| if j < k - 1 { y[(0, j)] } else { y[(0, j)] - tau0 });
    let raw_x0 = DMatrix::from_fn(n0, k, |i, j| y[(i + 1, j)]);
    let mut x0 = raw_x0.clone();
    let mut x1 = raw_x1.clone();
    for j in 0..k {
        let m = x0.column(j).mean();
        x0.column_mut(j).add_scalar_mut(-m);
        x1[j] -= m;
    }
    let b = PanelBlocks::from_parts(x1.clone(), x0.clone(), DVector::zeros(1), DMatrix::zeros(n0, 1)).unwrap();
    let scm = solve_scm(&b, &ScmConfig::default()).unwrap();
    let resid = &x1 - x0.tr_mul(&scm.values);
    let w = &scm.values + &x0 * common::dense_shifted_solve(&x0, &resid, lambda);
    raw_x1 - raw_x0.tr_mul(&w)
}

fn reference_p(r: &DVector<f64>) -> f64 {
    let n = r.len();
    let post = r[n - 1].abs();
    (1 + (0..n - 1).filter(|&t| r[t].abs() >= post).count()) as f64 / n as f64
}

#[test]
fn conformal_p_values_match_independent_refits() {
    let p = panel(51, 6, 9, 8);
    let lambda = 0.8;
    let est = Estimator::new(EstimatorSpec::RidgeAscm(LambdaChoice::Fixed(lambda)));
    let blocks = split_and_center(&p, true);
    let conf = Conformal::new(&blocks, &est, 0);
    for k in 0..=20 {
        let tau0 = -3.1 + 0.31 * k as f64;
        let oracle = reference_residuals(&p, tau0, lambda);
        let resid = conf.residuals(tau0).unwrap();
        assert!((&resid - &oracle).amax() < 1e-8);
        assert_eq!(conformal_p(&p, tau0, &est, 0).unwrap(), reference_p(&oracle), "tau0 = {tau0}");
    }
}

#[test]
fn minimal_alpha_accepts_the_whole_grid() {
    let p = panel(52, 6, 9, 8);
    let est = Estimator::new(EstimatorSpec::RidgeAscm(LambdaChoice::Fixed(1.0)));
    let grid: Vec<f64> = (0..41).map(|k| -10.0 + 0.5 * k as f64).collect();
    let iv = conformal_interval(&p, 1.0 / 9.0, Some(&grid), &est, 0).unwrap();
    assert_eq!((iv.lower, iv.upper), (-10.0, 10.0));
    assert!(!iv.disconnected);
}

#[test]
fn interval_contains_the_point_estimate() {
    let p = panel(53, 12, 31, 30);
    for spec in [EstimatorSpec::Scm, EstimatorSpec::RidgeAscm(LambdaChoice::Fixed(2.0))] {
        let est = Estimator::new(spec);
        let iv = conformal_interval(&p, 0.1, None, &est, 0).unwrap();
        assert!(iv.contains(iv.point));
        let y0 = iv.to_target(Target::Counterfactual);
        assert!(y0.contains(y0.point));
        let jk = jackknife_plus(&p, 0.1, &est, 0).unwrap();
        assert!(jk.lower <= jk.upper);
    }
}

#[test]
fn order_statistics_match_a_full_sort() {
    let mut r = common::rng(54);
    for _ in 0..200 {
        let n = r.random_range(1..60);
        let v: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        let k = r.random_range(1..=n);
        assert_eq!(order_statistic(&v, k), sorted[k - 1]);
    }
}

#[test]
fn jackknife_bounds_match_sorted_ranks() {
    let mut r = common::rng(55);
    for _ in 0..200 {
        let n = r.random_range(1..60);
        let alpha = r.random_range(0.01..0.5);
        let lows: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..0.0)).collect();
        let highs: Vec<f64> = (0..n).map(|_| r.random_range(0.0..5.0)).collect();
        let (lo, hi) = jackknife_bounds(&lows, &highs, alpha);
        let mut sl = lows.clone();
        let mut sh = highs.clone();
        sl.sort_by(f64::total_cmp);
        sh.sort_by(f64::total_cmp);
        let m = (n + 1) as f64;
        let k_lo = (alpha * m + 1e-12).floor() as usize;
        let k_hi = ((1.0 - alpha) * m - 1e-12).ceil() as usize;
        let want_lo = if k_lo == 0 { f64::NEG_INFINITY } else { sl[k_lo - 1] };
        let want_hi = if k_hi > n { f64::INFINITY } else { sh[k_hi - 1] };
        assert_eq!((lo, hi), (want_lo, want_hi));
    }
}
