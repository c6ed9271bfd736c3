//! Conformal p-values and prediction intervals for a single post period.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{recentered, require_pre, Design, Estimator};
use crate::io::{fmt_f64, write_csv};
use crate::panel::{split_and_center, PanelBlocks, PanelData};
use crate::ridge_augment::AugEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalMethod {
    FullConformal,
    JackknifePlus,
}

impl IntervalMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::FullConformal => "full-conformal",
            Self::JackknifePlus => "jackknife-plus",
        }
    }
}

/// What the interval is for: the untreated outcome or the effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Counterfactual,
    Effect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub lower: f64,
    pub upper: f64,
    /// `1 − α`.
    pub level: f64,
    pub method: IntervalMethod,
    pub target: Target,
    /// Point estimate on the same target.
    pub point: f64,
    /// Observed treated outcome in the post period.
    pub observed: f64,
    pub post_period: usize,
    /// Spacing of the candidate-effect grid (full conformal only).
    pub grid_spacing: Option<f64>,
    /// Rejected grid points lie between accepted ones.
    pub disconnected: bool,
}

impl PredictionInterval {
    /// Re-express on the other target; `τ = Y₁ − Y₁(0)` so the map is a
    /// reflection through the observed outcome.
    pub fn to_target(&self, target: Target) -> Self {
        if target == self.target {
            return self.clone();
        }
        Self {
            lower: self.observed - self.upper,
            upper: self.observed - self.lower,
            point: self.observed - self.point,
            target,
            ..self.clone()
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

fn check_post(blocks: &PanelBlocks, post_period: usize) -> Result<()> {
    if post_period >= blocks.n_post() {
        return Err(Error::InvalidConfig(format!(
            "post period {post_period} out of range; the panel has {} post period(s)",
            blocks.n_post()
        )));
    }
    Ok(())
}

/// p-value of the sharp null `τ = tau0` in post period `post_period`.
pub fn conformal_p(p: &PanelData, tau0: f64, est: &Estimator, post_period: usize) -> Result<f64> {
    let blocks = split_and_center(p, true);
    check_post(&blocks, post_period)?;
    let est = est.resolve(&blocks)?;
    Conformal::new(&blocks, &est, post_period).p_value(tau0)
}

/// Refits under candidate nulls for one post period.
pub struct Conformal<'a> {
    design: Design,
    est: &'a Estimator,
    column: usize,
    pre: Vec<usize>,
}

impl<'a> Conformal<'a> {
    /// `est` should already be resolved (fixed penalty).
    pub fn new(blocks: &PanelBlocks, est: &'a Estimator, post_period: usize) -> Self {
        let design = Design::from_blocks(blocks);
        let t0 = blocks.t0();
        Self { design, est, column: t0 + post_period, pre: (0..t0).collect() }
    }

    pub fn observed(&self) -> f64 {
        self.design.treated[self.column]
    }

    /// In-sample residuals of the refit that treats the adjusted post
    /// observation as an extra pre period; the last entry is the post one.
    pub fn residuals(&self, tau0: f64) -> Result<DVector<f64>> {
        let mut cols = self.pre.clone();
        cols.push(self.column);
        let mut b = self.design.blocks(&cols, &[]);
        let last = cols.len() - 1;
        b.x1[last] -= tau0;
        let est = Estimator { spec: self.est.spec.clone(), scm: self.est.scm.restricted(&self.pre, 1) };
        Ok(est.estimate(&b)?.gap_pre)
    }

    pub fn p_value(&self, tau0: f64) -> Result<f64> {
        Ok(p_from_residuals(&self.residuals(tau0)?))
    }
}

/// `(1 + #{t ≤ T0 : |r_post| ≤ |r_t|}) / (T0 + 1)` with `r_post` last.
pub fn p_from_residuals(r: &DVector<f64>) -> f64 {
    let n = r.len();
    let post = r[n - 1].abs();
    let count = r.iter().take(n - 1).filter(|v| post <= v.abs()).count();
    (count + 1) as f64 / n as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConformalConfig {
    /// Explicit candidate effects; `None` builds a grid around the estimate.
    pub tau_grid: Option<Vec<f64>>,
    pub grid_points: usize,
    /// Half-width of the automatic grid in units of the pre-period RMS residual.
    pub half_width: f64,
    /// Extra grid extensions allowed when an endpoint is accepted.
    pub max_widen: usize,
    /// Bisection steps at each interval endpoint.
    pub refine_steps: usize,
}

impl Default for ConformalConfig {
    fn default() -> Self {
        Self { tau_grid: None, grid_points: 101, half_width: 5.0, max_widen: 8, refine_steps: 8 }
    }
}

/// Invert the conformal test over a grid of effects.
pub fn conformal_interval(
    p: &PanelData,
    alpha: f64,
    tau_grid: Option<&[f64]>,
    est: &Estimator,
    post_period: usize,
) -> Result<PredictionInterval> {
    let blocks = split_and_center(p, true);
    let cfg = ConformalConfig { tau_grid: tau_grid.map(<[f64]>::to_vec), ..ConformalConfig::default() };
    conformal_interval_blocks(&blocks, alpha, &cfg, est, post_period)
}

pub fn conformal_interval_blocks(
    blocks: &PanelBlocks,
    alpha: f64,
    cfg: &ConformalConfig,
    est: &Estimator,
    post_period: usize,
) -> Result<PredictionInterval> {
    check_alpha(alpha)?;
    check_post(blocks, post_period)?;
    let blocks = recentered(blocks);
    let est = est.resolve(&blocks)?;
    let fit = est.estimate(&blocks)?;
    let tau_hat = fit.att[post_period];
    let conf = Conformal::new(&blocks, &est, post_period);
    let observed = conf.observed();
    let accept = |tau: f64| conf.p_value(tau).map(|p| p >= alpha);

    let (mut taus, spacing, auto) = match &cfg.tau_grid {
        Some(g) => {
            if g.is_empty() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig("effect grid must be non-empty and finite".into()));
            }
            let mut g = g.clone();
            g.sort_by(f64::total_cmp);
            g.dedup();
            let spacing = if g.len() > 1 { (g[g.len() - 1] - g[0]) / (g.len() - 1) as f64 } else { 0.0 };
            (g, spacing, false)
        }
        None => {
            if cfg.grid_points < 3 {
                return Err(Error::InvalidConfig("effect grid needs at least 3 points".into()));
            }
            let rms = (fit.gap_pre.norm_squared() / fit.gap_pre.len() as f64).sqrt();
            let scale = if rms > 0.0 { rms } else { 1e-6 * (1.0 + observed.abs()) };
            let half = (cfg.grid_points - 1) / 2;
            let h = cfg.half_width * scale / half as f64;
            let g = (0..2 * half + 1).map(|k| tau_hat + (k as f64 - half as f64) * h).collect();
            (g, h, true)
        }
    };

    let mut ok: Vec<bool> = taus.par_iter().map(|&t| accept(t)).collect::<Result<_>>()?;
    if auto {
        let half = (cfg.grid_points - 1) / 2;
        for _ in 0..cfg.max_widen {
            let lo_hit = ok[0];
            let hi_hit = *ok.last().unwrap();
            if !lo_hit && !hi_hit {
                break;
            }
            if lo_hit {
                let start = taus[0];
                let ext: Vec<f64> = (1..=half).rev().map(|k| start - k as f64 * spacing).collect();
                let flags: Vec<bool> = ext.par_iter().map(|&t| accept(t)).collect::<Result<_>>()?;
                taus.splice(0..0, ext);
                ok.splice(0..0, flags);
            }
            if hi_hit {
                let end = *taus.last().unwrap();
                let ext: Vec<f64> = (1..=half).map(|k| end + k as f64 * spacing).collect();
                let flags: Vec<bool> = ext.par_iter().map(|&t| accept(t)).collect::<Result<_>>()?;
                taus.extend(ext);
                ok.extend(flags);
            }
        }
    }

    let first = ok.iter().position(|&a| a).ok_or(Error::EmptyAcceptance { alpha })?;
    let last = ok.iter().rposition(|&a| a).unwrap();
    let disconnected = ok[first..=last].iter().any(|&a| !a);

    let mut lower = taus[first];
    let mut upper = taus[last];
    if first > 0 {
        lower = refine(lower, taus[first - 1], cfg.refine_steps, &accept)?;
    }
    if last + 1 < taus.len() {
        upper = refine(upper, taus[last + 1], cfg.refine_steps, &accept)?;
    }
    Ok(PredictionInterval {
        lower,
        upper,
        level: 1.0 - alpha,
        method: IntervalMethod::FullConformal,
        target: Target::Effect,
        point: tau_hat,
        observed,
        post_period,
        grid_spacing: Some(spacing),
        disconnected,
    })
}

/// Move an accepted endpoint towards its rejected neighbour by bisection.
fn refine(mut inside: f64, mut outside: f64, steps: usize, accept: &impl Fn(f64) -> Result<bool>) -> Result<f64> {
    for _ in 0..steps {
        let mid = 0.5 * (inside + outside);
        if accept(mid)? {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    Ok(inside)
}

/// Leave-one-period-out prediction interval for the untreated outcome.
pub fn jackknife_plus(p: &PanelData, alpha: f64, est: &Estimator, post_period: usize) -> Result<PredictionInterval> {
    jackknife_plus_blocks(&split_and_center(p, true), alpha, est, post_period)
}

pub fn jackknife_plus_blocks(
    blocks: &PanelBlocks,
    alpha: f64,
    est: &Estimator,
    post_period: usize,
) -> Result<PredictionInterval> {
    check_alpha(alpha)?;
    check_post(blocks, post_period)?;
    require_pre(blocks.t0(), 3, "the jackknife+")?;
    let blocks = recentered(blocks);
    let est = est.resolve(&blocks)?;
    let fit = est.estimate(&blocks)?;
    let design = Design::from_blocks(&blocks);
    let t0 = blocks.t0();
    let column = t0 + post_period;

    let loo: Vec<(f64, f64)> = (0..t0)
        .into_par_iter()
        .map(|t| {
            let pre: Vec<usize> = (0..t0).filter(|&s| s != t).collect();
            let b = design.blocks(&pre, &[t, column]);
            let e = Estimator { spec: est.spec.clone(), scm: est.scm.restricted(&pre, 0) };
            let out = e.estimate(&b)?;
            let resid = (design.treated[t] - out.counterfactual[0]).abs();
            Ok((out.counterfactual[1] - resid, out.counterfactual[1] + resid))
        })
        .collect::<Result<_>>()?;
    let lows: Vec<f64> = loo.iter().map(|x| x.0).collect();
    let highs: Vec<f64> = loo.iter().map(|x| x.1).collect();
    let (lower, upper) = jackknife_bounds(&lows, &highs, alpha);
    Ok(PredictionInterval {
        lower,
        upper,
        level: 1.0 - alpha,
        method: IntervalMethod::JackknifePlus,
        target: Target::Counterfactual,
        point: fit.counterfactual[post_period],
        observed: design.treated[column],
        post_period,
        grid_spacing: None,
        disconnected: false,
    })
}

/// The `⌊α(n+1)⌋`-th smallest of `lows` and the `⌈(1−α)(n+1)⌉`-th smallest of
/// `highs`, with out-of-range ranks mapped to ∓∞.
pub fn jackknife_bounds(lows: &[f64], highs: &[f64], alpha: f64) -> (f64, f64) {
    let total = (lows.len() + 1) as f64;
    let k_lo = (alpha * total + 1e-12).floor() as usize;
    let k_hi = ((1.0 - alpha) * total - 1e-12).ceil() as usize;
    let lower = if k_lo == 0 { f64::NEG_INFINITY } else { order_statistic(lows, k_lo) };
    let upper = if k_hi > highs.len() { f64::INFINITY } else { order_statistic(highs, k_hi.max(1)) };
    (lower, upper)
}

/// 1-based `k`-th smallest value.
pub fn order_statistic(values: &[f64], k: usize) -> f64 {
    let mut v = values.to_vec();
    let (_, kth, _) = v.select_nth_unstable_by(k - 1, f64::total_cmp);
    *kth
}

/// Gap-plot CSV with interval columns for the post periods that have one.
pub fn write_gap_csv<W: Write>(
    writer: W,
    est: &AugEstimate,
    pre_times: &[String],
    post_times: &[String],
    intervals: &[Option<PredictionInterval>],
) -> Result<()> {
    if pre_times.len() != est.gap_pre.len() || post_times.len() != est.att.len() || intervals.len() != est.att.len() {
        return Err(Error::Dimension("time labels or intervals do not match the estimate".into()));
    }
    let pre = pre_times.iter().enumerate().map(|(t, label)| {
        let obs = est.observed_pre[t];
        vec![
            label.clone(),
            fmt_f64(obs),
            fmt_f64(obs - est.gap_pre[t]),
            fmt_f64(est.gap_pre[t]),
            String::new(),
            String::new(),
            String::new(),
        ]
    });
    let post = post_times.iter().enumerate().map(|(t, label)| {
        let mut row = vec![
            label.clone(),
            fmt_f64(est.observed_post[t]),
            fmt_f64(est.counterfactual[t]),
            fmt_f64(est.att[t]),
        ];
        match &intervals[t] {
            Some(iv) => {
                let iv = iv.to_target(Target::Effect);
                row.extend([fmt_f64(iv.lower), fmt_f64(iv.upper), iv.method.as_str().to_string()]);
            }
            None => row.extend([String::new(), String::new(), String::new()]),
        }
        row
    });
    write_csv(writer, &["time", "observed", "counterfactual", "gap", "ci_lower", "ci_upper", "method"], pre.chain(post))
}
