use panelctrl_core::estimator::{Estimator, EstimatorSpec, LambdaChoice};
use panelctrl_core::panel::split_and_center;
use panelctrl_core::scm::{imbalance, solve_scm, ScmConfig};
use panelctrl_core::selection::{default_lambda_grid, in_time_placebo, loo_cv, CvMode, SelectRule};
use panelctrl_core::sim::application_panel;

#[test]
fn application_panel_has_the_study_dimensions() {
    let p = application_panel();
    assert_eq!((p.n_units(), p.n_periods(), p.t0()), (51, 105, 89));
    assert_eq!(p.donor_indices().len(), 50);
    assert_eq!(p.n_post(), 16);
}

#[test]
fn one_se_penalty_exceeds_the_minimizer() {
    let b = split_and_center(&application_panel(), true);
    let grid = default_lambda_grid(&b);
    for mode in [CvMode::LeaveOne, CvMode::LeaveFuture] {
        let cv = loo_cv(&b, &grid, mode).unwrap();
        assert!(cv.lambda_1se > cv.lambda_min, "{mode:?}: {} <= {}", cv.lambda_1se, cv.lambda_min);
    }
}

#[test]
fn augmentation_improves_pre_period_fit() {
    let b = split_and_center(&application_panel(), true);
    let scm = solve_scm(&b, &ScmConfig::default()).unwrap();
    let est = Estimator::new(EstimatorSpec::RidgeAscm(LambdaChoice::cv(SelectRule::Min))).estimate(&b).unwrap();
    assert!(imbalance(&b, &est.weights, None).unwrap() < imbalance(&b, &scm, None).unwrap());
    assert_eq!(est.att.len(), 16);
}

#[test]
fn placebo_runs_at_full_scale() {
    let p = application_panel();
    let t = p.time_ids()[80].clone();
    let pl = in_time_placebo(&p, &t, &Estimator::new(EstimatorSpec::RidgeAscm(LambdaChoice::Fixed(1.0)))).unwrap();
    assert_eq!(pl.placebo_gaps().len(), 9);
    assert!(pl.placebo_gaps().iter().all(|g| g.is_finite()));
}
