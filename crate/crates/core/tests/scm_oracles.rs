mod common;

use nalgebra::{DMatrix, DVector};
use panelctrl_core::panel::PanelBlocks;
use panelctrl_core::scm::{imbalance, solve_scm, solve_scm_detailed, ScmConfig};

fn gap_sq(b: &PanelBlocks, w: &[f64]) -> f64 {
    let w = DVector::from_column_slice(w);
    (&b.x1 - b.x0.tr_mul(&w)).norm_squared()
}

/// Minimum of the squared imbalance over the simplex grid with spacing 1/steps.
fn grid_min(b: &PanelBlocks, steps: usize) -> f64 {
    let h = 1.0 / steps as f64;
    let mut best = f64::INFINITY;
    match b.n0() {
        2 => {
            for i in 0..=steps {
                let a = i as f64 * h;
                best = best.min(gap_sq(b, &[a, 1.0 - a]));
            }
        }
        3 => {
            for i in 0..=steps {
                for j in 0..=steps - i {
                    let (a, c) = (i as f64 * h, j as f64 * h);
                    best = best.min(gap_sq(b, &[a, c, (1.0 - a - c).max(0.0)]));
                }
            }
        }
        n => panic!("grid oracle only for N0 <= 3, got {n}"),
    }
    best
}

#[test]
fn matches_exhaustive_simplex_grid() {
    let mut r = common::rng(11);
    let cfg = ScmConfig::default().with_zeta(0.0);
    for case in 0..12 {
        let n0 = if case % 3 == 0 { 2 } else { 3 };
        let t0 = 2 + case % 3;
        let b = common::raw_instance(&mut r, n0, t0, 1);
        let w = solve_scm(&b, &cfg).unwrap();
        let solver = gap_sq(&b, w.values.as_slice());
        let oracle = grid_min(&b, 1000);
        assert!(solver <= oracle + 1e-12, "case {case}: solver {solver} above grid {oracle}");
        assert!(oracle - solver <= 1e-5, "case {case}: gap {}", oracle - solver);
    }
}

#[test]
fn kkt_residual_on_larger_instances() {
    let mut r = common::rng(12);
    for &(n0, t0) in &[(10, 5), (25, 12), (40, 30), (50, 89), (8, 40)] {
        let b = common::instance(&mut r, n0, t0, 2);
        let fit = solve_scm_detailed(&b, &ScmConfig::default(), None).unwrap();
        assert!(fit.kkt_residual <= 1e-8, "{n0}x{t0}: {}", fit.kkt_residual);
        fit.weights.check_invariants().unwrap();
    }
}

#[test]
fn importance_weights_scale_the_quadratic_form() {
    let b = PanelBlocks::from_parts(
        DVector::from_vec(vec![0.3, 1.7]),
        DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 2.0, 1.0, -1.0, 3.0]),
        DVector::from_vec(vec![0.0]),
        DMatrix::zeros(3, 1),
    )
    .unwrap();
    let w = panelctrl_core::DonorWeights::uniform(3, b.donor_ids.clone(), panelctrl_core::Provenance::Scm);
    let g = &b.x1 - w.apply(&b.x0);
    let v = DVector::from_vec(vec![4.0, 1.0]);
    let direct = (4.0 * g[0] * g[0] + g[1] * g[1]).sqrt();
    let plain = imbalance(&b, &w, None).unwrap();
    let scaled = imbalance(&b, &w, Some(&v)).unwrap();
    assert!((scaled - direct).abs() < 1e-14);
    assert!((scaled * scaled - plain * plain - 3.0 * g[0] * g[0]).abs() < 1e-12);
}
