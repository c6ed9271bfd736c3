//! Ridge penalty selection by cross-validation over pre-treatment periods,
//! and in-time placebo runs.

use std::cmp::Ordering;
use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{recentered, require_pre, Design, Estimator};
use crate::io::{fmt_f64, write_csv};
use crate::linalg::ControlSvd;
use crate::panel::{split_and_center, PanelBlocks, PanelData, TimeOrder};
use crate::ridge_augment::{augment_weights_with, ridge_weights_with, AugEstimate};
use crate::scm::{solve_scm, ScmConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CvMode {
    /// Hold out one period and fit on all others.
    #[default]
    LeaveOne,
    /// Hold out one period and fit only on the periods before it.
    LeaveFuture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectRule {
    #[default]
    Min,
    OneSe,
}

/// Which weighting estimator the penalty is tuned for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CvTarget {
    RidgeAscm,
    Ridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// Descending.
    pub lambda_grid: Vec<f64>,
    pub cv_mse: Vec<f64>,
    pub cv_se: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_1se: f64,
    pub mode: CvMode,
    /// Held-out periods (0-based) that contributed.
    pub held_out: Vec<usize>,
    pub warnings: Vec<String>,
}

impl CvResult {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_csv(
            writer,
            &["lambda", "cv_mse", "cv_se"],
            (0..self.lambda_grid.len())
                .map(|k| vec![fmt_f64(self.lambda_grid[k]), fmt_f64(self.cv_mse[k]), fmt_f64(self.cv_se[k])]),
        )
    }
}

/// 20 log-spaced penalties from `1e-3·d1²` to `1e3·d1²`, descending, where
/// `d1` is the top singular value of `x0 / √N0`.
pub fn default_lambda_grid(blocks: &PanelBlocks) -> Vec<f64> {
    let svd = ControlSvd::new(&recentered(blocks).x0);
    let s = svd.d.get(0).map(|d| d * d).filter(|&v| v > 0.0).unwrap_or(1.0);
    log_grid(1e3 * s, 1e-3 * s, 20)
}

/// `n` log-spaced values from `hi` down to `lo`.
pub fn log_grid(hi: f64, lo: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    let (a, b) = (hi.ln(), lo.ln());
    (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect()
}

/// Cross-validate Ridge ASCM over `lambda_grid` with default SCM settings.
pub fn loo_cv(blocks: &PanelBlocks, lambda_grid: &[f64], mode: CvMode) -> Result<CvResult> {
    loo_cv_with(blocks, lambda_grid, mode, &ScmConfig::default(), CvTarget::RidgeAscm)
}

pub fn loo_cv_with(
    blocks: &PanelBlocks,
    lambda_grid: &[f64],
    mode: CvMode,
    scm: &ScmConfig,
    target: CvTarget,
) -> Result<CvResult> {
    require_pre(blocks.t0(), 3, "cross-validation")?;
    if lambda_grid.is_empty() || lambda_grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidConfig("lambda grid must be non-empty, positive and finite".into()));
    }
    let mut grid = lambda_grid.to_vec();
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.dedup();

    let design = Design::from_blocks(blocks);
    let t0 = blocks.t0();
    let mut warnings = Vec::new();
    let mut held = Vec::new();
    for t in 0..t0 {
        let remaining = match mode {
            CvMode::LeaveOne => t0 - 1,
            CvMode::LeaveFuture => t,
        };
        if remaining < 2 {
            let msg = format!("skipped held-out period {}: only {remaining} earlier period(s) remain", t + 1);
            log::warn!("{msg}");
            warnings.push(msg);
        } else {
            held.push(t);
        }
    }
    if held.is_empty() {
        return Err(Error::TooFewPeriods("no held-out period leaves enough periods to refit".into()));
    }

    let residuals: Vec<Vec<f64>> = held
        .par_iter()
        .map(|&t| {
            let pre: Vec<usize> = match mode {
                CvMode::LeaveOne => (0..t0).filter(|&s| s != t).collect(),
                CvMode::LeaveFuture => (0..t).collect(),
            };
            let b = design.blocks(&pre, &[t]).centered();
            held_out_residuals(&b, &grid, &scm.restricted(&pre, 0), target)
        })
        .collect::<Result<_>>()?;

    let n = held.len() as f64;
    let mut cv_mse = Vec::with_capacity(grid.len());
    let mut cv_se = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let sq: Vec<f64> = residuals.iter().map(|r| r[k] * r[k]).collect();
        let mean = sq.iter().sum::<f64>() / n;
        let var = if sq.len() > 1 { sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        cv_mse.push(mean);
        cv_se.push(var.sqrt() / n.sqrt());
    }
    let (kmin, _) = cv_mse
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) });
    let threshold = cv_mse[kmin] + cv_se[kmin];
    let k1se = (0..grid.len()).find(|&k| cv_mse[k] <= threshold).unwrap_or(kmin);
    Ok(CvResult {
        lambda_min: grid[kmin],
        lambda_1se: grid[k1se],
        lambda_grid: grid,
        cv_mse,
        cv_se,
        mode,
        held_out: held,
        warnings,
    })
}

/// Prediction error at the single post column of `b` for every penalty.
fn held_out_residuals(b: &PanelBlocks, grid: &[f64], scm: &ScmConfig, target: CvTarget) -> Result<Vec<f64>> {
    let svd = ControlSvd::new(&b.x0);
    let observed = b.y1_post[0];
    let y0 = b.y0_post.column(0);
    let base = match target {
        CvTarget::RidgeAscm => Some(solve_scm(b, scm)?),
        CvTarget::Ridge => None,
    };
    grid.iter()
        .map(|&l| {
            let w = match &base {
                Some(scm_w) => augment_weights_with(&svd, scm_w, b, l)?,
                None => ridge_weights_with(&svd, b, l)?,
            };
            Ok(observed - w.values.dot(&y0))
        })
        .collect()
}

pub fn select_lambda(cv: &CvResult, rule: SelectRule) -> f64 {
    match rule {
        SelectRule::Min => cv.lambda_min,
        SelectRule::OneSe => cv.lambda_1se,
    }
}

/// Re-run the estimator with a fake treatment date inside the pre-period.
pub fn in_time_placebo(p: &PanelData, placebo_time: &str, est: &Estimator) -> Result<PlaceboEstimate> {
    let order = TimeOrder::infer(p.time_ids().iter().map(String::as_str));
    let idx = p
        .time_ids()
        .iter()
        .position(|t| order.cmp(t, placebo_time) == Ordering::Equal)
        .ok_or_else(|| Error::InvalidConfig(format!("placebo time `{placebo_time}` is not an observed period")))?;
    if idx >= p.t0() {
        return Err(Error::InvalidConfig(format!(
            "placebo time `{placebo_time}` must be before the treatment time `{}`",
            p.time_ids()[p.t0()]
        )));
    }
    require_pre(idx, 3, "an in-time placebo")?;
    let truncated = p.truncate_periods(p.t0(), idx)?;
    let blocks = split_and_center(&truncated, true);
    let estimate = est.estimate(&blocks)?;
    Ok(PlaceboEstimate {
        placebo_time: placebo_time.to_string(),
        pre_times: truncated.time_ids()[..idx].to_vec(),
        post_times: truncated.time_ids()[idx..].to_vec(),
        estimate,
    })
}

#[derive(Debug, Clone)]
pub struct PlaceboEstimate {
    pub placebo_time: String,
    pub pre_times: Vec<String>,
    pub post_times: Vec<String>,
    pub estimate: AugEstimate,
}

impl PlaceboEstimate {
    pub fn placebo_gaps(&self) -> &DVector<f64> {
        &self.estimate.att
    }

    /// Estimate CSV with a leading `placebo_time` column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let e = &self.estimate;
        let pre = self.pre_times.iter().enumerate().map(|(t, label)| {
            let obs = e.observed_pre[t];
            (label, obs, obs - e.gap_pre[t], e.gap_pre[t])
        });
        let post = self
            .post_times
            .iter()
            .enumerate()
            .map(|(t, label)| (label, e.observed_post[t], e.counterfactual[t], e.att[t]));
        write_csv(
            writer,
            &["placebo_time", "time", "observed", "counterfactual", "gap"],
            pre.chain(post).map(|(label, o, c, g)| {
                vec![self.placebo_time.clone(), label.clone(), fmt_f64(o), fmt_f64(c), fmt_f64(g)]
            }),
        )
    }
}
