//! Replicated estimation under a known zero effect.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{Estimator, EstimatorSpec, LambdaChoice};
use crate::inference::{conformal_interval_blocks, jackknife_plus_blocks, ConformalConfig, Target};
use crate::io::{compensated_sum, fmt_f64, write_csv};
use crate::panel::split_and_center;
use crate::selection::SelectRule;
use crate::sim::dgp::{draw_panel, Dgp};

/// Seed for replication `rep`, independent of evaluation order.
pub fn replication_seed(seed: u64, rep: u64) -> u64 {
    splitmix64(seed ^ splitmix64(rep.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n: usize,
    pub t: usize,
    pub t0: usize,
    pub replications: usize,
    pub seed: u64,
    /// Post period of the estimand; `None` uses the DGP's convention.
    pub post_period: Option<usize>,
    /// Break results down by quartile of the SCM pre-period fit.
    pub stratify: bool,
}

impl McConfig {
    /// Desk-scale defaults.
    pub fn desk(replications: usize, seed: u64) -> Self {
        Self { n: 20, t: 30, t0: 25, replications, seed, post_period: None, stratify: false }
    }

    /// Full application scale.
    pub fn full(replications: usize, seed: u64) -> Self {
        Self { n: 50, t: 105, t0: 89, replications, seed, post_period: None, stratify: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub estimator: String,
    pub bias: f64,
    pub bias_se: f64,
    /// `|bias|` relative to the SCM row, in percent.
    pub abs_bias_pct: f64,
    pub rmse: f64,
    pub rmse_se: f64,
    pub rmse_pct: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumRow {
    /// 1 = best SCM fit.
    pub quartile: usize,
    pub estimator: String,
    pub bias: f64,
    pub rmse: f64,
    pub reps: usize,
}

/// One replication's estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub rep: usize,
    pub seed: u64,
    pub treated: String,
    /// Root mean squared SCM pre-period gap.
    pub scm_fit: f64,
    /// Effect estimates in bank order.
    pub estimates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub dgp: String,
    pub config: McConfig,
    pub post_period: usize,
    pub rows: Vec<McRow>,
    pub dropped: usize,
    pub strata: Option<Vec<StratumRow>>,
    #[serde(skip)]
    pub replications: Vec<Replication>,
}

impl McReport {
    pub fn row(&self, name: &str) -> Option<&McRow> {
        self.rows.iter().find(|r| r.estimator == name)
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.rows
            .iter()
            .position(|r| r.estimator == name)
            .ok_or_else(|| Error::InvalidConfig(format!("estimator `{name}` is not in the report")))
    }

    /// Mean and Monte Carlo standard error of the paired difference `a − b`.
    pub fn paired_difference(&self, a: &str, b: &str) -> Result<(f64, f64)> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let d: Vec<f64> = self.replications.iter().map(|r| r.estimates[ia] - r.estimates[ib]).collect();
        let (mean, sd) = mean_sd(&d);
        Ok((mean, sd / (d.len() as f64).sqrt()))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_csv(
            writer,
            &["estimator", "bias", "bias_se", "abs_bias_pct", "rmse", "rmse_se", "rmse_pct", "reps", "dropped"],
            self.rows.iter().map(|r| {
                vec![
                    r.estimator.clone(),
                    fmt_f64(r.bias),
                    fmt_f64(r.bias_se),
                    fmt_f64(r.abs_bias_pct),
                    fmt_f64(r.rmse),
                    fmt_f64(r.rmse_se),
                    fmt_f64(r.rmse_pct),
                    r.reps.to_string(),
                    self.dropped.to_string(),
                ]
            }),
        )
    }

    pub fn write_strata_csv<W: Write>(&self, writer: W) -> Result<()> {
        let rows = self.strata.as_deref().unwrap_or(&[]);
        write_csv(
            writer,
            &["quartile", "estimator", "bias", "rmse", "reps"],
            rows.iter().map(|r| {
                vec![r.quartile.to_string(), r.estimator.clone(), fmt_f64(r.bias), fmt_f64(r.rmse), r.reps.to_string()]
            }),
        )
    }

    /// Per-replication audit log.
    pub fn write_raw_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut header = vec!["rep".to_string(), "seed".into(), "treated".into(), "scm_fit".into()];
        header.extend(self.rows.iter().map(|r| r.estimator.clone()));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv(
            writer,
            &header,
            self.replications.iter().map(|r| {
                let mut row = vec![r.rep.to_string(), r.seed.to_string(), r.treated.clone(), fmt_f64(r.scm_fit)];
                row.extend(r.estimates.iter().map(|&v| fmt_f64(v)));
                row
            }),
        )
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = compensated_sum(v.iter().copied()) / n;
    let var = if v.len() > 1 { compensated_sum(v.iter().map(|x| (x - mean).powi(2))) / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// SCM, Ridge ASCM and ridge (both with the CV-minimizing penalty), the
/// fixed-effects estimator and de-meaned SCM.
pub fn standard_bank() -> Vec<Estimator> {
    vec![
        Estimator::new(EstimatorSpec::Scm),
        Estimator::new(EstimatorSpec::RidgeAscm(LambdaChoice::cv(SelectRule::Min))),
        Estimator::new(EstimatorSpec::Ridge(LambdaChoice::cv(SelectRule::Min))),
        Estimator::new(EstimatorSpec::FixedEffects),
        Estimator::new(EstimatorSpec::DemeanedScm),
    ]
}

fn check_bank(bank: &[Estimator]) -> Result<usize> {
    let scm = bank
        .iter()
        .position(|e| e.spec == EstimatorSpec::Scm)
        .ok_or_else(|| Error::InvalidConfig("the estimator bank must include SCM".into()))?;
    let mut names: Vec<&str> = bank.iter().map(Estimator::name).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidConfig("estimator names in the bank must be distinct".into()));
    }
    Ok(scm)
}

fn check_config(cfg: &McConfig) -> Result<()> {
    if cfg.replications == 0 {
        return Err(Error::InvalidConfig("need at least one replication".into()));
    }
    Ok(())
}

/// Estimate the effect in every replication with every estimator and
/// aggregate bias and RMSE. A replication in which any estimator fails is
/// dropped for all of them and counted.
pub fn run_monte_carlo(dgp: &Dgp, bank: &[Estimator], cfg: &McConfig) -> Result<McReport> {
    check_config(cfg)?;
    let scm_idx = check_bank(bank)?;
    dgp.validate(cfg.t)?;
    let post = cfg.post_period.unwrap_or_else(|| dgp.estimand_period(cfg.t, cfg.t0));
    if post >= cfg.t - cfg.t0 {
        return Err(Error::InvalidConfig(format!("post period {post} out of range")));
    }

    let outcomes: Vec<Option<Replication>> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| {
            let seed = replication_seed(cfg.seed, rep as u64);
            match replicate(dgp, bank, cfg, post, rep, seed, scm_idx) {
                Ok(r) => Some(r),
                Err(e) => {
                    log::warn!("replication {rep} dropped: {e}");
                    None
                }
            }
        })
        .collect();
    let dropped = outcomes.iter().filter(|o| o.is_none()).count();
    let reps: Vec<Replication> = outcomes.into_iter().flatten().collect();
    if reps.is_empty() {
        return Err(Error::InvalidConfig("every replication failed".into()));
    }

    let mut rows: Vec<McRow> = bank
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let est: Vec<f64> = reps.iter().map(|r| r.estimates[k]).collect();
            let sq: Vec<f64> = est.iter().map(|v| v * v).collect();
            let (bias, sd) = mean_sd(&est);
            let (mse, sq_sd) = mean_sd(&sq);
            let n = est.len() as f64;
            let rmse = mse.sqrt();
            McRow {
                estimator: e.name().to_string(),
                bias,
                bias_se: sd / n.sqrt(),
                abs_bias_pct: f64::NAN,
                rmse,
                rmse_se: if rmse > 0.0 { sq_sd / n.sqrt() / (2.0 * rmse) } else { 0.0 },
                rmse_pct: f64::NAN,
                reps: est.len(),
            }
        })
        .collect();
    let (scm_bias, scm_rmse) = (rows[scm_idx].bias.abs(), rows[scm_idx].rmse);
    for r in &mut rows {
        r.abs_bias_pct = 100.0 * r.bias.abs() / scm_bias;
        r.rmse_pct = 100.0 * r.rmse / scm_rmse;
    }

    let strata = cfg.stratify.then(|| stratify(bank, &reps));
    Ok(McReport { dgp: dgp.kind().as_str().to_string(), config: cfg.clone(), post_period: post, rows, dropped, strata, replications: reps })
}

fn replicate(
    dgp: &Dgp,
    bank: &[Estimator],
    cfg: &McConfig,
    post: usize,
    rep: usize,
    seed: u64,
    scm_idx: usize,
) -> Result<Replication> {
    let panel = draw_panel(dgp, cfg.n, cfg.t, cfg.t0, seed)?;
    let blocks = split_and_center(&panel, true);
    let mut estimates = Vec::with_capacity(bank.len());
    let mut scm_fit = f64::NAN;
    for (k, e) in bank.iter().enumerate() {
        let out = e.estimate(&blocks)?;
        if !out.att[post].is_finite() {
            return Err(Error::InvalidConfig(format!("{} produced a non-finite estimate", e.name())));
        }
        if k == scm_idx {
            scm_fit = (out.gap_pre.norm_squared() / out.gap_pre.len() as f64).sqrt();
        }
        estimates.push(out.att[post]);
    }
    Ok(Replication { rep, seed, treated: panel.treated_label().to_string(), scm_fit, estimates })
}

/// Rank-based quartiles of the SCM fit; every replication lands in exactly one.
pub fn fit_quartiles(fits: &[f64]) -> Vec<usize> {
    let n = fits.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| fits[a].total_cmp(&fits[b]).then(a.cmp(&b)));
    let mut q = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        q[i] = rank * 4 / n + 1;
    }
    q
}

fn stratify(bank: &[Estimator], reps: &[Replication]) -> Vec<StratumRow> {
    let fits: Vec<f64> = reps.iter().map(|r| r.scm_fit).collect();
    let q = fit_quartiles(&fits);
    let mut out = Vec::new();
    for quartile in 1..=4 {
        let members: Vec<&Replication> = reps.iter().zip(&q).filter(|(_, &k)| k == quartile).map(|(r, _)| r).collect();
        for (k, e) in bank.iter().enumerate() {
            let est: Vec<f64> = members.iter().map(|r| r.estimates[k]).collect();
            let n = est.len() as f64;
            out.push(StratumRow {
                quartile,
                estimator: e.name().to_string(),
                bias: compensated_sum(est.iter().copied()) / n,
                rmse: (compensated_sum(est.iter().map(|v| v * v)) / n).sqrt(),
                reps: est.len(),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub estimator: String,
    pub alpha: f64,
    pub conformal: f64,
    pub jackknife_plus: f64,
    pub conformal_width: f64,
    pub jackknife_plus_width: f64,
    pub reps: usize,
    pub dropped: usize,
}

/// Share of replications whose intervals contain the untreated outcome of
/// the first post period.
pub fn run_coverage(dgp: &Dgp, est: &Estimator, cfg: &McConfig, alpha: f64) -> Result<CoverageReport> {
    check_config(cfg)?;
    dgp.validate(cfg.t)?;
    let conf_cfg = ConformalConfig::default();
    let results: Vec<Option<(bool, bool, f64, f64)>> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| {
            let seed = replication_seed(cfg.seed, rep as u64);
            let run = || -> Result<(bool, bool, f64, f64)> {
                let panel = draw_panel(dgp, cfg.n, cfg.t, cfg.t0, seed)?;
                let blocks = split_and_center(&panel, true);
                let resolved = est.resolve(&blocks)?;
                // zero effect: the observed outcome is the untreated one
                let truth = blocks.y1_post[0];
                let c = conformal_interval_blocks(&blocks, alpha, &conf_cfg, &resolved, 0)?.to_target(Target::Counterfactual);
                let j = jackknife_plus_blocks(&blocks, alpha, &resolved, 0)?;
                Ok((c.contains(truth), j.contains(truth), c.width(), j.width()))
            };
            run().map_err(|e| log::warn!("coverage replication {rep} dropped: {e}")).ok()
        })
        .collect();
    let dropped = results.iter().filter(|r| r.is_none()).count();
    let ok: Vec<_> = results.into_iter().flatten().collect();
    if ok.is_empty() {
        return Err(Error::InvalidConfig("every replication failed".into()));
    }
    let n = ok.len() as f64;
    Ok(CoverageReport {
        estimator: est.name().to_string(),
        alpha,
        conformal: ok.iter().filter(|r| r.0).count() as f64 / n,
        jackknife_plus: ok.iter().filter(|r| r.1).count() as f64 / n,
        conformal_width: compensated_sum(ok.iter().map(|r| r.2)) / n,
        jackknife_plus_width: compensated_sum(ok.iter().map(|r| r.3)) / n,
        reps: ok.len(),
        dropped,
    })
}
