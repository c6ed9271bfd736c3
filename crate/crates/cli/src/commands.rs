use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use panelctrl_core::covariates::{
    balance_table, joint_augment, joint_solve, outcome_balance_table, residualize, two_step_estimate, write_balance_csv,
};
use panelctrl_core::inference::{conformal_interval_blocks, jackknife_plus_blocks, write_gap_csv, ConformalConfig};
use panelctrl_core::panel::{panel_from_table, LongTable};
use panelctrl_core::ridge_augment::{
    augment_weights, bound_sketch, fit_ridge, ridge_weights, svd_imbalance, verify_penalized_form, weight_norm_bound,
    Anchor, STATIONARITY_TOL,
};
use panelctrl_core::scm::{imbalance, solve_scm};
use panelctrl_core::selection::{default_lambda_grid, in_time_placebo, log_grid, loo_cv_with, select_lambda, CvTarget};
use panelctrl_core::sim::{run_monte_carlo, standard_bank, Dgp, DgpKind, McConfig};
use panelctrl_core::{
    split_and_center, AugEstimate, CovariatePanel, CvMode, Error, Estimator, EstimatorSpec, LambdaChoice, PanelBlocks,
    PanelData, ScmConfig, SelectRule, Target,
};
use serde::Serialize;
use serde_json::json;

use crate::args::{
    CovariateModeArg, CvArgs, CvModeArg, DgpArg, DiagnoseArgs, EstimateArgs, EstimatorArg, InferenceArg, PanelArgs,
    PenaltyArgs, PlaceboArgs, ScaleArg, SelectArg, SimulateArgs,
};
use crate::exit::{CliError, CliResult};
use crate::manifest::{Manifest, OutDir};

fn read_table(path: &Path) -> CliResult<LongTable> {
    Ok(LongTable::from_reader(BufReader::new(File::open(path)?))?)
}

fn load(args: &PanelArgs) -> CliResult<(LongTable, PanelData)> {
    let table = read_table(&args.input)?;
    let panel = panel_from_table(&table, &args.treated, &args.treatment_time)?;
    log::info!(
        "panel: {} units, {} periods, {} before treatment",
        panel.n_units(),
        panel.n_periods(),
        panel.t0()
    );
    Ok((table, panel))
}

fn rule(s: SelectArg) -> SelectRule {
    match s {
        SelectArg::Min => SelectRule::Min,
        SelectArg::OneSe => SelectRule::OneSe,
    }
}

fn mode(m: CvModeArg) -> CvMode {
    match m {
        CvModeArg::LeaveOne => CvMode::LeaveOne,
        CvModeArg::LeaveFuture => CvMode::LeaveFuture,
    }
}

fn lambda_choice(p: &PenaltyArgs) -> CliResult<LambdaChoice> {
    match p.lambda {
        Some(l) if !(l > 0.0 && l.is_finite()) => {
            Err(Error::InvalidConfig(format!("--lambda must be positive and finite, got {l}")).into())
        }
        Some(l) => Ok(LambdaChoice::Fixed(l)),
        None => Ok(LambdaChoice::Cv { rule: rule(p.select), mode: mode(p.cv_mode), grid: None }),
    }
}

pub fn estimator(p: &PenaltyArgs) -> CliResult<Estimator> {
    let spec = match p.estimator {
        EstimatorArg::Scm => EstimatorSpec::Scm,
        EstimatorArg::Ridge => EstimatorSpec::Ridge(lambda_choice(p)?),
        EstimatorArg::RidgeAscm => EstimatorSpec::RidgeAscm(lambda_choice(p)?),
        EstimatorArg::FixedEffects => EstimatorSpec::FixedEffects,
        EstimatorArg::DemeanedScm => EstimatorSpec::DemeanedScm,
    };
    if p.lambda.is_some() && !matches!(spec, EstimatorSpec::Ridge(_) | EstimatorSpec::RidgeAscm(_)) {
        log::warn!("--lambda has no effect on {}", spec.name());
    }
    Ok(Estimator::new(spec))
}

fn check_alpha(alpha: f64) -> CliResult<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("--alpha must lie in (0, 1), got {alpha}")).into());
    }
    Ok(())
}

/// Label safe to embed in a file name.
fn file_label(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

#[derive(Serialize)]
struct PeriodResult {
    time: String,
    att: f64,
    ci_lower: Option<f64>,
    ci_upper: Option<f64>,
}

pub fn estimate(args: &EstimateArgs) -> CliResult<()> {
    check_alpha(args.alpha)?;
    let (table, panel) = load(&args.panel)?;
    let blocks = split_and_center(&panel, true);
    let est = estimator(&args.penalty)?.resolve(&blocks)?;
    let lambda = est.lambda();
    if let Some(l) = lambda {
        log::info!("{} with lambda {l}", est.name());
    }
    let pre_times = &panel.time_ids()[..panel.t0()];
    let post_times = &panel.time_ids()[panel.t0()..];

    let (fit, cov) = if args.covariates.is_empty() {
        (est.estimate(&blocks)?, None)
    } else {
        if args.inference != InferenceArg::None {
            return Err(Error::InvalidConfig("intervals are not available together with --covariates".into()).into());
        }
        let cov = CovariatePanel::from_table(&table, &panel, &args.covariates)?.standardized(&blocks);
        let fit = covariate_estimate(&est, &blocks, &cov, args.covariate_mode)?;
        (fit, Some(cov))
    };

    let intervals = match args.inference {
        InferenceArg::None => vec![None; fit.att.len()],
        method => (0..fit.att.len())
            .map(|t| {
                let iv = match method {
                    InferenceArg::Conformal => {
                        conformal_interval_blocks(&blocks, args.alpha, &ConformalConfig::default(), &est, t)?
                    }
                    _ => jackknife_plus_blocks(&blocks, args.alpha, &est, t)?,
                };
                Ok(Some(iv))
            })
            .collect::<CliResult<Vec<_>>>()?,
    };

    let mut out = OutDir::create(&args.out)?;
    out.write("weights.csv", |w| Ok(fit.weights.write_csv(w)?))?;
    out.write("gap.csv", |w| Ok(write_gap_csv(w, &fit, pre_times, post_times, &intervals)?))?;
    let balance = match &cov {
        Some(c) => balance_table(c, &fit.weights),
        None => outcome_balance_table(&blocks, &fit.weights, pre_times),
    };
    out.write("balance.csv", |w| Ok(write_balance_csv(w, &balance)?))?;

    let periods: Vec<PeriodResult> = post_times
        .iter()
        .enumerate()
        .map(|(t, time)| {
            let iv = intervals[t].as_ref().map(|iv| iv.to_target(Target::Effect));
            PeriodResult {
                time: time.clone(),
                att: fit.att[t],
                ci_lower: iv.as_ref().map(|iv| iv.lower),
                ci_upper: iv.as_ref().map(|iv| iv.upper),
            }
        })
        .collect();
    let pre_rmse = (fit.gap_pre.norm_squared() / fit.gap_pre.len() as f64).sqrt();
    let mut manifest = Manifest::new("estimate", args)?;
    manifest.panel = Some(panel.manifest());
    manifest.results = json!({
        "estimator": est.name(),
        "lambda": lambda,
        "pre_rmse": pre_rmse,
        "pure_weighting": fit.pure_weighting,
        "effects": periods,
    });
    out.finish(manifest)
}

fn covariate_estimate(
    est: &Estimator,
    blocks: &PanelBlocks,
    cov: &CovariatePanel,
    mode: CovariateModeArg,
) -> CliResult<AugEstimate> {
    let cfg = ScmConfig::default();
    let fit = match (&est.spec, mode) {
        (EstimatorSpec::Scm, CovariateModeArg::Joint) => AugEstimate::from_weights(blocks, joint_solve(blocks, cov, &cfg)?),
        (EstimatorSpec::Scm, CovariateModeArg::Residualize) => {
            let res = residualize(blocks, cov)?;
            AugEstimate::from_weights(blocks, solve_scm(&res.blocks(blocks), &cfg)?)
        }
        (EstimatorSpec::RidgeAscm(_), CovariateModeArg::Joint) => {
            let cov = cov.clone().with_lambda(est.lambda().expect("resolved penalty"));
            let scm = joint_solve(blocks, &cov, &cfg)?;
            joint_augment(&scm, blocks, &cov)?
        }
        (EstimatorSpec::RidgeAscm(_), CovariateModeArg::Residualize) => {
            two_step_estimate(blocks, cov, &cfg, est.lambda().expect("resolved penalty"))?
        }
        (spec, _) => {
            return Err(Error::InvalidConfig(format!(
                "--covariates needs --estimator scm or ridge-ascm, got {}",
                spec.name()
            ))
            .into())
        }
    };
    Ok(fit)
}

pub fn cv(args: &CvArgs) -> CliResult<()> {
    let (_, panel) = load(&args.panel)?;
    let blocks = split_and_center(&panel, true);
    let target = match args.penalty.estimator {
        EstimatorArg::RidgeAscm => CvTarget::RidgeAscm,
        EstimatorArg::Ridge => CvTarget::Ridge,
        other => {
            let name = estimator(&PenaltyArgs { estimator: other, ..args.penalty.clone() })?.name();
            return Err(Error::InvalidConfig(format!("{name} has no penalty to cross-validate")).into());
        }
    };
    let mut grid = if args.lambda_grid.is_empty() { default_lambda_grid(&blocks) } else { args.lambda_grid.clone() };
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.dedup();
    let result = loo_cv_with(&blocks, &grid, mode(args.penalty.cv_mode), &ScmConfig::default(), target)?;
    for w in &result.warnings {
        log::warn!("{w}");
    }
    let selected = select_lambda(&result, rule(args.penalty.select));

    let mut out = OutDir::create(&args.out)?;
    out.write("cv.csv", |w| Ok(result.write_csv(w)?))?;
    let mut manifest = Manifest::new("cv", args)?;
    manifest.panel = Some(panel.manifest());
    manifest.results = json!({
        "estimator": args.penalty.estimator,
        "lambda_min": result.lambda_min,
        "lambda_1se": result.lambda_1se,
        "selected": selected,
        "held_out": result.held_out,
        "warnings": result.warnings,
    });
    out.finish(manifest)
}

pub fn placebo(args: &PlaceboArgs) -> CliResult<()> {
    let (_, panel) = load(&args.panel)?;
    let est = estimator(&args.penalty)?;
    let runs = args
        .placebo_times
        .iter()
        .map(|t| in_time_placebo(&panel, t, &est))
        .collect::<Result<Vec<_>, _>>()?;

    let mut out = OutDir::create(&args.out)?;
    let mut results = Vec::new();
    for run in &runs {
        let name = format!("placebo_{}.csv", file_label(&run.placebo_time));
        out.write(&name, |w| Ok(run.write_csv(w)?))?;
        let gaps = run.placebo_gaps();
        results.push(json!({
            "placebo_time": run.placebo_time,
            "file": name,
            "mean_gap": gaps.mean(),
            "rms_gap": (gaps.norm_squared() / gaps.len() as f64).sqrt(),
        }));
    }
    let mut manifest = Manifest::new("placebo", args)?;
    manifest.panel = Some(panel.manifest());
    manifest.results = json!({ "estimator": est.name(), "placebos": results });
    out.finish(manifest)
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let kind = match args.dgp {
        DgpArg::Factor => DgpKind::Factor,
        DgpArg::FixedEffects => DgpKind::FixedEffects,
        DgpArg::Ar3 => DgpKind::Ar3,
    };
    let mut cfg = match args.scale {
        ScaleArg::Desk => McConfig::desk(args.reps, args.seed),
        ScaleArg::Full => McConfig::full(args.reps, args.seed),
    };
    cfg.stratify = args.stratify;
    let mut dgp = Dgp::calibrated(kind).with_noise_multiplier(args.noise_multiplier);
    if let Some(theta) = args.theta {
        dgp = dgp.with_theta(theta);
    }
    let report = run_monte_carlo(&dgp, &standard_bank(), &cfg)?;
    if report.dropped > 0 {
        log::warn!("{} replication(s) dropped after an estimator failed", report.dropped);
    }

    let mut out = OutDir::create(&args.out)?;
    out.write("mc_report.csv", |w| Ok(report.write_csv(w)?))?;
    out.write("mc_report.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &report)?;
        Ok(())
    })?;
    if args.stratify {
        out.write("mc_strata.csv", |w| Ok(report.write_strata_csv(w)?))?;
    }
    if args.raw {
        out.write("mc_raw.csv", |w| Ok(report.write_raw_csv(w)?))?;
    }
    let mut manifest = Manifest::new("simulate", args)?;
    manifest.seed = Some(args.seed);
    manifest.results = json!({
        "dgp": report.dgp,
        "post_period": report.post_period,
        "dropped": report.dropped,
        "rows": report.rows,
    });
    out.finish(manifest)
}

/// One row of identity_checks.csv.
#[derive(Debug, Serialize)]
pub struct Check {
    pub check: &'static str,
    pub lambda: f64,
    pub value: f64,
    pub reference: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(check: &'static str, lambda: f64, value: f64, reference: f64, tolerance: f64) -> Self {
        Self { check, lambda, value, reference, tolerance, pass: value <= reference + tolerance }
    }

    fn equal(check: &'static str, lambda: f64, value: f64, reference: f64, tolerance: f64) -> Self {
        Self { check, lambda, value, reference, tolerance, pass: (value - reference).abs() <= tolerance }
    }
}

/// The closed-form identities and bounds of the ridge augmentation at `lambda`.
pub fn identity_checks(blocks: &PanelBlocks, lambda: f64) -> CliResult<Vec<Check>> {
    let scm = solve_scm(blocks, &ScmConfig::default())?;
    let aug = augment_weights(&scm, blocks, lambda)?;
    let ridge = ridge_weights(blocks, lambda)?;
    let scale = blocks.x0.amax().max(blocks.x1.amax()).max(blocks.y0_post.amax()).max(1.0);
    let mut checks = Vec::new();

    let r = verify_penalized_form(&aug, Anchor::Weights(&scm), blocks, lambda)?;
    checks.push(Check::at_most("aug_penalized_form", lambda, r.residual, 0.0, STATIONARITY_TOL));
    let r = verify_penalized_form(&ridge, Anchor::Uniform, blocks, lambda)?;
    checks.push(Check::at_most("ridge_penalized_form", lambda, r.residual, 0.0, STATIONARITY_TOL));

    let mut worst = 0.0_f64;
    for t in 0..blocks.n_post() {
        let fit = fit_ridge(blocks, lambda, t)?;
        let weighted = ridge.values.dot(&blocks.y0_post.column(t));
        worst = worst.max((weighted - fit.predict(&blocks.x1)).abs());
    }
    checks.push(Check::at_most("ridge_weighting_identity", lambda, worst, 0.0, 1e-10 * scale));

    let s = svd_imbalance(&scm, blocks, lambda)?;
    let rnorm = imbalance(blocks, &scm, None)?;
    let tol = 1e-8 * rnorm.max(1.0);
    checks.push(Check::equal("svd_imbalance_identity", lambda, s.direct, s.via_svd, tol));
    checks.push(Check::at_most("imbalance_bound", lambda, s.direct, s.upper_bound, tol));
    checks.push(Check::at_most("imbalance_monotone", lambda, s.direct, rnorm, tol));

    let b = weight_norm_bound(&scm, blocks, lambda)?;
    checks.push(Check::at_most("weight_norm_bound", lambda, b.norm, b.bound, 1e-10 * b.bound.max(1.0)));

    // de-meaned SCM against the weighted difference in differences
    let dm = Estimator::new(EstimatorSpec::DemeanedScm).estimate(blocks)?;
    let raw = blocks.uncentered();
    let pre_shift = raw.x1.mean() - scm.values.dot(&raw.x0.column_mean());
    let mut worst = 0.0_f64;
    for t in 0..blocks.n_post() {
        let did = blocks.y1_post[t] - scm.values.dot(&blocks.y0_post.column(t)) - pre_shift;
        worst = worst.max((dm.att[t] - did).abs());
    }
    checks.push(Check::at_most("demeaned_scm_did_form", lambda, worst, 0.0, 1e-12 * scale));
    Ok(checks)
}

fn write_checks<W: std::io::Write>(w: W, checks: &[Check]) -> CliResult<()> {
    use panelctrl_core::io::{fmt_f64, write_csv};
    write_csv(
        w,
        &["check", "lambda", "value", "reference", "tolerance", "status"],
        checks.iter().map(|c| {
            vec![
                c.check.to_string(),
                fmt_f64(c.lambda),
                fmt_f64(c.value),
                fmt_f64(c.reference),
                fmt_f64(c.tolerance),
                if c.pass { "PASS" } else { "FAIL" }.to_string(),
            ]
        }),
    )?;
    Ok(())
}

pub fn diagnose(args: &DiagnoseArgs) -> CliResult<()> {
    let (_, panel) = load(&args.panel)?;
    let blocks = split_and_center(&panel, true);
    let lambda = match args.lambda {
        Some(l) if !(l > 0.0 && l.is_finite()) => {
            return Err(Error::InvalidConfig(format!("--lambda must be positive and finite, got {l}")).into())
        }
        Some(l) => l,
        None => {
            let est = Estimator::new(EstimatorSpec::RidgeAscm(LambdaChoice::cv(SelectRule::Min)));
            est.resolve(&blocks)?.lambda().expect("resolved penalty")
        }
    };
    if args.sigma.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
        return Err(Error::InvalidConfig("--sigma values must be finite and >= 0".into()).into());
    }

    let mut checks = Vec::new();
    for l in [lambda / 100.0, lambda, lambda * 100.0] {
        checks.extend(identity_checks(&blocks, l)?);
    }
    let failed = checks.iter().filter(|c| !c.pass).count();

    let sd = blocks.treated_pre_sd();
    if !(sd > 0.0 && sd.is_finite()) {
        return Err(Error::InvalidPanel("treated pre-period outcomes have no spread".into()).into());
    }
    let scaled = blocks.scaled(1.0 / sd);
    let scm = solve_scm(&scaled, &ScmConfig::default())?;
    let grid = log_grid(1e8, 1e-2, 51);
    let sketch = bound_sketch(&scm, &scaled, &grid, &args.sigma, args.factors, args.factor_bound)?;

    let mut out = OutDir::create(&args.out)?;
    out.write("bound_sketch.csv", |w| Ok(sketch.write_csv(w)?))?;
    out.write("identity_checks.csv", |w| write_checks(w, &checks))?;

    let minima: Vec<_> = (0..args.sigma.len())
        .map(|k| {
            let curve = sketch.curve(k);
            let best = curve.iter().min_by(|a, b| a.total.total_cmp(&b.total)).expect("non-empty grid");
            json!({ "sigma": best.sigma, "lambda_min": best.lambda_ridge, "total_pct_min": best.total_pct })
        })
        .collect();
    let mut manifest = Manifest::new("diagnose", args)?;
    manifest.panel = Some(panel.manifest());
    manifest.results = json!({
        "lambda": lambda,
        "treated_pre_sd": sd,
        "checks_failed": failed,
        "checks": checks,
        "sketch_minima": minima,
    });
    out.finish(manifest)?;
    if failed > 0 {
        return Err(CliError::ChecksFailed(failed));
    }
    Ok(())
}
