mod common;

use nalgebra::DVector;
use panelctrl_core::covariates::{residualize, CovariatePanel};
use panelctrl_core::estimator::{Estimator, EstimatorSpec, LambdaChoice};
use panelctrl_core::inference::{jackknife_bounds, Conformal, IntervalMethod, PredictionInterval, Target};
use panelctrl_core::panel::PanelBlocks;
use panelctrl_core::ridge_augment::{augment_weights, ridge_weights, verify_penalized_form, Anchor};
use panelctrl_core::scm::{imbalance, project_simplex, solve_scm, solve_scm_detailed, ScmConfig};
use panelctrl_core::selection::{loo_cv, CvMode};
use proptest::prelude::*;

fn blocks(seed: u64, n0: usize, t0: usize) -> PanelBlocks {
    common::instance(&mut common::rng(seed), n0, t0, 2)
}

fn permuted(b: &PanelBlocks, perm: &[usize]) -> PanelBlocks {
    PanelBlocks {
        x0: b.x0.select_rows(perm),
        y0_post: b.y0_post.select_rows(perm),
        donor_ids: perm.iter().map(|&i| b.donor_ids[i].clone()).collect(),
        ..b.clone()
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn scm_weights_are_simplex_and_trace_descends(seed in any::<u64>(), n0 in 2usize..25, t0 in 1usize..15) {
        let b = blocks(seed, n0, t0);
        let fit = solve_scm_detailed(&b, &ScmConfig::default(), None).unwrap();
        fit.weights.check_invariants().unwrap();
        let scale = 1.0 + fit.trace[0].abs();
        for w in fit.trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * scale);
        }
    }

    #[test]
    fn scm_solution_does_not_depend_on_the_start(seed in any::<u64>(), n0 in 2usize..20, t0 in 1usize..12) {
        let b = blocks(seed, n0, t0);
        let start = project_simplex(&common::normal_vector(&mut common::rng(seed ^ 0xABCD), n0));
        let cfg = ScmConfig::default();
        let a = solve_scm_detailed(&b, &cfg, None).unwrap();
        let c = solve_scm_detailed(&b, &cfg, Some(&start)).unwrap();
        prop_assert!((a.objective - c.objective).abs() <= 1e-9 * (1.0 + a.objective));
    }

    #[test]
    fn augmentation_shrinks_imbalance_monotonically(seed in any::<u64>(), n0 in 3usize..20, t0 in 2usize..10) {
        let b = blocks(seed, n0, t0);
        let scm = solve_scm(&b, &ScmConfig::default()).unwrap();
        let base = imbalance(&b, &scm, None).unwrap();
        let mut prev = base;
        for lambda in [1e4, 1e2, 1.0, 1e-2] {
            let aug = augment_weights(&scm, &b, lambda).unwrap();
            let imb = imbalance(&b, &aug, None).unwrap();
            prop_assert!(imb <= prev + 1e-10 * (1.0 + base));
            prev = imb;
        }
    }

    #[test]
    fn penalized_forms_are_stationary(seed in any::<u64>(), n0 in 2usize..20, t0 in 1usize..10, l in -2.0f64..4.0) {
        let b = blocks(seed, n0, t0);
        let lambda = 10f64.powf(l);
        let scm = solve_scm(&b, &ScmConfig::default()).unwrap();
        let aug = augment_weights(&scm, &b, lambda).unwrap();
        prop_assert!(verify_penalized_form(&aug, Anchor::Weights(&scm), &b, lambda).unwrap().pass);
        let ridge = ridge_weights(&b, lambda).unwrap();
        prop_assert!(verify_penalized_form(&ridge, Anchor::Uniform, &b, lambda).unwrap().pass);
    }

    #[test]
    fn rescaling_outcomes_rescales_the_penalty(seed in any::<u64>(), n0 in 3usize..15, t0 in 2usize..8, c in 0.1f64..10.0) {
        let b = blocks(seed, n0, t0);
        let s = b.scaled(c);
        let w = augment_weights(&solve_scm(&b, &ScmConfig::default()).unwrap(), &b, 0.5).unwrap();
        let ws = augment_weights(&solve_scm(&s, &ScmConfig::default()).unwrap(), &s, 0.5 * c * c).unwrap();
        prop_assert!((w.values - ws.values).amax() < 1e-6);
    }

    #[test]
    fn common_time_shocks_leave_effects_unchanged(seed in any::<u64>(), n0 in 3usize..12, t0 in 3usize..8) {
        let b = blocks(seed, n0, t0).uncentered();
        let mut r = common::rng(seed ^ 7);
        let pre = common::normal_vector(&mut r, t0) * 5.0;
        let post = common::normal_vector(&mut r, 2) * 5.0;
        let mut shocked = b.clone();
        shocked.x1 += &pre;
        shocked.y1_post += &post;
        for i in 0..n0 {
            for j in 0..t0 { shocked.x0[(i, j)] += pre[j]; }
            for j in 0..2 { shocked.y0_post[(i, j)] += post[j]; }
        }
        for spec in [
            EstimatorSpec::Scm,
            EstimatorSpec::RidgeAscm(LambdaChoice::Fixed(0.3)),
            EstimatorSpec::FixedEffects,
            EstimatorSpec::DemeanedScm,
        ] {
            let e = Estimator::new(spec);
            let a = e.estimate(&b).unwrap().att;
            let s = e.estimate(&shocked).unwrap().att;
            prop_assert!((a - s).amax() < 1e-7);
        }
    }

    #[test]
    fn cv_is_stable_under_donor_permutation(seed in any::<u64>(), n0 in 3usize..9, t0 in 3usize..7) {
        let b = blocks(seed, n0, t0);
        let mut perm: Vec<usize> = (0..n0).collect();
        perm.rotate_left(1);
        perm.swap(0, n0 - 1);
        let grid = [10.0, 1.0, 0.1];
        let a = loo_cv(&b, &grid, CvMode::LeaveOne).unwrap();
        let p = loo_cv(&permuted(&b, &perm), &grid, CvMode::LeaveOne).unwrap();
        for (x, y) in a.cv_mse.iter().zip(&p.cv_mse) {
            prop_assert!((x - y).abs() <= 1e-7 * (1.0 + x));
        }
        prop_assert_eq!(a.lambda_min, p.lambda_min);
    }

    #[test]
    fn residualizing_twice_changes_nothing(seed in any::<u64>(), k in 1usize..4) {
        let b = blocks(seed, 10, 5);
        let mut r = common::rng(seed ^ 3);
        let cov = CovariatePanel::new((0..k).map(|j| format!("z{j}")).collect(), common::normal_vector(&mut r, k), common::normal_matrix(&mut r, 10, k)).unwrap();
        let once = residualize(&b, &cov).unwrap();
        let twice = residualize(&once.blocks(&b), &cov).unwrap();
        prop_assert!((&once.x0_check - &twice.x0_check).amax() < 1e-10);
        prop_assert!((&once.x1_check - &twice.x1_check).amax() < 1e-10);
        prop_assert!(twice.projection.amax() < 1e-10);
    }

    #[test]
    fn conformal_p_values_lie_in_range(seed in any::<u64>(), tau in -5.0f64..5.0) {
        let b = blocks(seed, 6, 7);
        let est = Estimator::new(EstimatorSpec::RidgeAscm(LambdaChoice::Fixed(1.0)));
        let p = Conformal::new(&b, &est, 1).p_value(tau).unwrap();
        prop_assert!((1.0 / 8.0..=1.0).contains(&p));
    }

    #[test]
    fn jackknife_intervals_widen_as_alpha_falls(seed in any::<u64>(), n in 3usize..60, a in 0.01f64..0.5, b in 0.01f64..0.5) {
        let mut r = common::rng(seed);
        let centre = common::normal_vector(&mut r, n);
        let spread = common::normal_vector(&mut r, n).map(f64::abs);
        let lows: Vec<f64> = (0..n).map(|i| centre[i] - spread[i]).collect();
        let highs: Vec<f64> = (0..n).map(|i| centre[i] + spread[i]).collect();
        let (small, large) = if a < b { (a, b) } else { (b, a) };
        let (lo_s, hi_s) = jackknife_bounds(&lows, &highs, small);
        let (lo_l, hi_l) = jackknife_bounds(&lows, &highs, large);
        prop_assert!(lo_s <= lo_l && hi_l <= hi_s);
    }

    #[test]
    fn target_conversion_round_trips(lo in -5.0f64..0.0, w in 0.0f64..5.0, obs in -3.0f64..3.0, v in -6.0f64..6.0) {
        let iv = PredictionInterval {
            lower: lo,
            upper: lo + w,
            level: 0.9,
            method: IntervalMethod::FullConformal,
            target: Target::Effect,
            point: lo + 0.5 * w,
            observed: obs,
            post_period: 0,
            grid_spacing: None,
            disconnected: false,
        };
        let y0 = iv.to_target(Target::Counterfactual);
        prop_assert_eq!(iv.contains(v), y0.contains(obs - v) || (obs - v - y0.lower).abs() < 1e-12 || (obs - v - y0.upper).abs() < 1e-12);
        let back = y0.to_target(Target::Effect);
        prop_assert!((back.lower - iv.lower).abs() < 1e-12 && (back.upper - iv.upper).abs() < 1e-12);
        prop_assert!((y0.width() - iv.width()).abs() < 1e-12);
    }
}

#[test]
fn scaled_importance_is_respected() {
    let b = blocks(5, 6, 3);
    let v = DVector::from_vec(vec![4.0, 1.0, 1.0]);
    let w = solve_scm(&b, &ScmConfig::default().with_importance(v.clone())).unwrap();
    let plain = solve_scm(&b, &ScmConfig::default()).unwrap();
    assert!(imbalance(&b, &w, Some(&v)).unwrap() <= imbalance(&b, &plain, Some(&v)).unwrap() + 1e-9);
}
