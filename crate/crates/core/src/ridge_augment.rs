//! Ridge outcome models and ridge-augmented synthetic control weights.
//!
//! All public functions take the ridge penalty `λ^ridge` on the scale of
//! `x0ᵀx0`. The singular-value diagnostics work with `λ = λ^ridge / N0`
//! against the singular values of `x0 / √N0` and report both.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_csv};
use crate::linalg::ControlSvd;
use crate::panel::PanelBlocks;
use crate::scm::{DonorWeights, Provenance, WeightsRecord};

/// Ridge regression of one control post-period outcome on the lagged outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeFit {
    pub intercept: f64,
    pub coefs: Vec<f64>,
    pub lambda: f64,
    pub post_period: usize,
}

impl RidgeFit {
    /// `η0 + xᵀη` for a pre-period row in the same (centered) coordinates.
    pub fn predict(&self, x: &DVector<f64>) -> f64 {
        self.intercept + x.iter().zip(&self.coefs).map(|(a, b)| a * b).sum::<f64>()
    }
}

fn require_centered(blocks: &PanelBlocks) -> Result<()> {
    if blocks.is_centered() {
        Ok(())
    } else {
        Err(Error::NotCentered)
    }
}

fn check_lambda(svd: &ControlSvd, lambda_ridge: f64) -> Result<()> {
    if !(lambda_ridge >= 0.0 && lambda_ridge.is_finite()) {
        return Err(Error::InvalidConfig(format!("ridge penalty must be finite and >= 0, got {lambda_ridge}")));
    }
    if lambda_ridge == 0.0 && !svd.full_column_rank() {
        return Err(Error::Singular(format!(
            "x0ᵀx0 has rank {} < {} and the ridge penalty is zero",
            svd.rank, svd.t0
        )));
    }
    Ok(())
}

/// `x0 (x0ᵀx0 + λI)⁻¹ b`, evaluated through the SVD without forming `x0ᵀx0`.
fn hat_adjustment(svd: &ControlSvd, b: &DVector<f64>, lambda_ridge: f64) -> DVector<f64> {
    let n0 = svd.n0 as f64;
    let proj = svd.v.tr_mul(b);
    let scaled = DVector::from_fn(svd.rank, |j, _| {
        let d = svd.d[j];
        proj[j] * n0.sqrt() * d / (n0 * d * d + lambda_ridge)
    });
    &svd.u * scaled
}

/// Ridge fit for post period `post_period` (0-based among post periods).
pub fn fit_ridge(blocks: &PanelBlocks, lambda_ridge: f64, post_period: usize) -> Result<RidgeFit> {
    fit_ridge_with(&ControlSvd::new(&blocks.x0), blocks, lambda_ridge, post_period)
}

pub fn fit_ridge_with(svd: &ControlSvd, blocks: &PanelBlocks, lambda_ridge: f64, post_period: usize) -> Result<RidgeFit> {
    require_centered(blocks)?;
    check_lambda(svd, lambda_ridge)?;
    if post_period >= blocks.n_post() {
        return Err(Error::Dimension(format!("post period {post_period} out of range 0..{}", blocks.n_post())));
    }
    let y = blocks.y0_post.column(post_period).into_owned();
    let intercept = y.mean();
    // η = V diag(√N0 d / (N0 d² + λ)) Uᵀ y
    let n0 = svd.n0 as f64;
    let uy = svd.u.tr_mul(&y);
    let scaled = DVector::from_fn(svd.rank, |j, _| {
        let d = svd.d[j];
        uy[j] * n0.sqrt() * d / (n0 * d * d + lambda_ridge)
    });
    let coefs = &svd.v * scaled;
    Ok(RidgeFit { intercept, coefs: coefs.iter().copied().collect(), lambda: lambda_ridge, post_period })
}

/// Ridge-augmented weights `γ^scm + x0 (x0ᵀx0 + λI)⁻¹ (x1 − x0ᵀγ^scm)`.
pub fn augment_weights(scm_w: &DonorWeights, blocks: &PanelBlocks, lambda_ridge: f64) -> Result<DonorWeights> {
    augment_weights_with(&ControlSvd::new(&blocks.x0), scm_w, blocks, lambda_ridge)
}

pub fn augment_weights_with(
    svd: &ControlSvd,
    scm_w: &DonorWeights,
    blocks: &PanelBlocks,
    lambda_ridge: f64,
) -> Result<DonorWeights> {
    require_centered(blocks)?;
    check_lambda(svd, lambda_ridge)?;
    check_len(scm_w, blocks)?;
    if !scm_w.sum_constrained {
        return Err(Error::InvalidConfig("augmentation needs sum-constrained base weights".into()));
    }
    let r = &blocks.x1 - scm_w.apply(&blocks.x0);
    let values = &scm_w.values + hat_adjustment(svd, &r, lambda_ridge);
    Ok(DonorWeights {
        values,
        provenance: Provenance::Augmented,
        sum_constrained: true,
        simplex: false,
        donor_ids: blocks.donor_ids.clone(),
    })
}

/// Weights reproducing the ridge regression prediction: `1/N0 + (x1 − x̄0)ᵀ(x0ᵀx0 + λI)⁻¹x_i`.
pub fn ridge_weights(blocks: &PanelBlocks, lambda_ridge: f64) -> Result<DonorWeights> {
    ridge_weights_with(&ControlSvd::new(&blocks.x0), blocks, lambda_ridge)
}

pub fn ridge_weights_with(svd: &ControlSvd, blocks: &PanelBlocks, lambda_ridge: f64) -> Result<DonorWeights> {
    require_centered(blocks)?;
    check_lambda(svd, lambda_ridge)?;
    let n0 = blocks.n0();
    // x̄0 is zero for centered blocks
    let values = DVector::from_element(n0, 1.0 / n0 as f64) + hat_adjustment(svd, &blocks.x1, lambda_ridge);
    Ok(DonorWeights {
        values,
        provenance: Provenance::Ridge,
        sum_constrained: true,
        simplex: false,
        donor_ids: blocks.donor_ids.clone(),
    })
}

fn check_len(w: &DonorWeights, blocks: &PanelBlocks) -> Result<()> {
    if w.len() != blocks.n0() {
        return Err(Error::Dimension(format!("{} weights for {} donors", w.len(), blocks.n0())));
    }
    Ok(())
}

/// Anchor of the penalized weighting problem.
#[derive(Debug, Clone)]
pub enum Anchor<'a> {
    Weights(&'a DonorWeights),
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub residual: f64,
    pub pass: bool,
}

pub const STATIONARITY_TOL: f64 = 1e-8;

/// Stationarity of `w` for `(1/2λ)‖x1 − x0ᵀγ‖² + ½‖γ − anchor‖²` subject to `Σγ = 1`.
pub fn verify_penalized_form(
    w: &DonorWeights,
    anchor: Anchor<'_>,
    blocks: &PanelBlocks,
    lambda_ridge: f64,
) -> Result<StationarityReport> {
    check_len(w, blocks)?;
    if !w.sum_constrained {
        return Err(Error::InvalidConfig("penalized-form check needs sum-constrained weights".into()));
    }
    if !(lambda_ridge > 0.0 && lambda_ridge.is_finite()) {
        return Err(Error::InvalidConfig(format!("penalized form needs a positive finite penalty, got {lambda_ridge}")));
    }
    let n0 = blocks.n0();
    let anchor = match anchor {
        Anchor::Weights(a) => {
            check_len(a, blocks)?;
            a.values.clone()
        }
        Anchor::Uniform => DVector::from_element(n0, 1.0 / n0 as f64),
    };
    let gap = &blocks.x1 - w.apply(&blocks.x0);
    let mut grad = (&blocks.x0 * gap) * (-1.0 / lambda_ridge) + (&w.values - anchor);
    let mean = grad.mean();
    grad.add_scalar_mut(-mean);
    let residual = grad.amax();
    Ok(StationarityReport { residual, pass: residual <= STATIONARITY_TOL })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvdImbalance {
    pub lambda_ridge: f64,
    /// `λ^ridge / N0`.
    pub lambda: f64,
    pub direct: f64,
    pub via_svd: f64,
    pub upper_bound: f64,
}

/// Pre-period imbalance of the augmented weights computed directly and
/// through the singular values, with the shrinkage upper bound.
pub fn svd_imbalance(scm_w: &DonorWeights, blocks: &PanelBlocks, lambda_ridge: f64) -> Result<SvdImbalance> {
    svd_imbalance_with(&ControlSvd::new(&blocks.x0), scm_w, blocks, lambda_ridge)
}

pub fn svd_imbalance_with(
    svd: &ControlSvd,
    scm_w: &DonorWeights,
    blocks: &PanelBlocks,
    lambda_ridge: f64,
) -> Result<SvdImbalance> {
    let aug = augment_weights_with(svd, scm_w, blocks, lambda_ridge)?;
    let lambda = lambda_ridge / blocks.n0() as f64;
    let direct = (&blocks.x1 - aug.apply(&blocks.x0)).norm();
    let r = &blocks.x1 - scm_w.apply(&blocks.x0);
    let (rt, perp) = svd.rotate(&r);
    let shrunk = rt
        .iter()
        .zip(svd.d.iter())
        .map(|(x, d)| {
            let f = if lambda == 0.0 { 0.0 } else { lambda / (d * d + lambda) };
            (f * x).powi(2)
        })
        .sum::<f64>();
    let via_svd = (shrunk + perp * perp).sqrt();
    let dm = svd.min_singular_value();
    let factor = if lambda == 0.0 { 0.0 } else { lambda / (dm * dm + lambda) };
    Ok(SvdImbalance { lambda_ridge, lambda, direct, via_svd, upper_bound: factor * r.norm() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightNormBound {
    pub norm: f64,
    pub bound: f64,
}

/// `‖γ^aug‖₂` against `‖γ^scm‖₂ + N0^{-1/2} ‖diag(d/(d² + λ)) r̃‖₂`.
pub fn weight_norm_bound(scm_w: &DonorWeights, blocks: &PanelBlocks, lambda_ridge: f64) -> Result<WeightNormBound> {
    weight_norm_bound_with(&ControlSvd::new(&blocks.x0), scm_w, blocks, lambda_ridge)
}

pub fn weight_norm_bound_with(
    svd: &ControlSvd,
    scm_w: &DonorWeights,
    blocks: &PanelBlocks,
    lambda_ridge: f64,
) -> Result<WeightNormBound> {
    let aug = augment_weights_with(svd, scm_w, blocks, lambda_ridge)?;
    let lambda = lambda_ridge / blocks.n0() as f64;
    let r = &blocks.x1 - scm_w.apply(&blocks.x0);
    let (rt, _) = svd.rotate(&r);
    let tail = rt.iter().zip(svd.d.iter()).map(|(x, d)| (d / (d * d + lambda) * x).powi(2)).sum::<f64>().sqrt();
    Ok(WeightNormBound {
        norm: aug.values.norm(),
        bound: scm_w.values.norm() + tail / (blocks.n0() as f64).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Constant,
    UnitMean,
    Ridge,
}

/// Outcome model `m̂` fitted on the control units.
pub trait OutcomeModel {
    fn kind(&self) -> ModelKind;

    fn fit(&mut self, blocks: &PanelBlocks) -> Result<()>;

    /// Post-period predictions for a unit with pre-period row `x`.
    fn predict(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// Pre-period fit residuals of the augmented estimator.
    fn pre_gap(&self, scm_w: &DonorWeights, blocks: &PanelBlocks) -> Result<DVector<f64>> {
        Ok(&blocks.x1 - scm_w.apply(&blocks.x0))
    }
}

/// `m̂ ≡ control mean`; augmentation leaves SCM untouched.
#[derive(Debug, Clone, Default)]
pub struct ConstantModel {
    means: Option<DVector<f64>>,
}

impl OutcomeModel for ConstantModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Constant
    }

    fn fit(&mut self, blocks: &PanelBlocks) -> Result<()> {
        let means = DVector::from_iterator(blocks.n_post(), blocks.y0_post.column_iter().map(|c| c.mean()));
        self.means = Some(means);
        Ok(())
    }

    fn predict(&self, _x: &DVector<f64>) -> Result<DVector<f64>> {
        self.means.clone().ok_or(Error::ModelNotFitted)
    }
}

/// Unit fixed effects, `m̂(X_i) = X̄_i`; augmentation gives de-meaned SCM.
#[derive(Debug, Clone, Default)]
pub struct UnitMeanModel {
    n_post: Option<usize>,
}

impl OutcomeModel for UnitMeanModel {
    fn kind(&self) -> ModelKind {
        ModelKind::UnitMean
    }

    fn fit(&mut self, blocks: &PanelBlocks) -> Result<()> {
        self.n_post = Some(blocks.n_post());
        Ok(())
    }

    fn predict(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.n_post.ok_or(Error::ModelNotFitted)?;
        Ok(DVector::from_element(n, x.mean()))
    }

    fn pre_gap(&self, scm_w: &DonorWeights, blocks: &PanelBlocks) -> Result<DVector<f64>> {
        self.n_post.ok_or(Error::ModelNotFitted)?;
        let means = DVector::from_iterator(blocks.n0(), blocks.x0.row_iter().map(|r| r.mean()));
        let shift = blocks.x1.mean() - scm_w.values.dot(&means);
        Ok((&blocks.x1 - scm_w.apply(&blocks.x0)).add_scalar(-shift))
    }
}

/// Per-post-period ridge regressions sharing one penalty.
#[derive(Debug, Clone)]
pub struct RidgeModel {
    pub lambda_ridge: f64,
    fits: Option<Vec<RidgeFit>>,
}

impl RidgeModel {
    pub fn new(lambda_ridge: f64) -> Self {
        Self { lambda_ridge, fits: None }
    }

    pub fn fits(&self) -> Option<&[RidgeFit]> {
        self.fits.as_deref()
    }
}

impl OutcomeModel for RidgeModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Ridge
    }

    fn fit(&mut self, blocks: &PanelBlocks) -> Result<()> {
        let svd = ControlSvd::new(&blocks.x0);
        let fits = (0..blocks.n_post())
            .map(|p| fit_ridge_with(&svd, blocks, self.lambda_ridge, p))
            .collect::<Result<Vec<_>>>()?;
        self.fits = Some(fits);
        Ok(())
    }

    fn predict(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let fits = self.fits.as_ref().ok_or(Error::ModelNotFitted)?;
        Ok(DVector::from_iterator(fits.len(), fits.iter().map(|f| f.predict(x))))
    }

    fn pre_gap(&self, scm_w: &DonorWeights, blocks: &PanelBlocks) -> Result<DVector<f64>> {
        self.fits.as_ref().ok_or(Error::ModelNotFitted)?;
        let aug = augment_weights(scm_w, blocks, self.lambda_ridge)?;
        Ok(&blocks.x1 - aug.apply(&blocks.x0))
    }
}

/// Counterfactual and effect estimates for the treated unit.
#[derive(Debug, Clone, PartialEq)]
pub struct AugEstimate {
    pub counterfactual: DVector<f64>,
    pub att: DVector<f64>,
    pub gap_pre: DVector<f64>,
    pub weights: DonorWeights,
    /// The counterfactual is exactly `Σ γ_i Y_it` for the stored weights.
    pub pure_weighting: bool,
    pub observed_pre: DVector<f64>,
    pub observed_post: DVector<f64>,
}

impl AugEstimate {
    /// Pure weighting estimate `Σ γ_i Y_it` with the matching pre-period gap.
    pub fn from_weights(blocks: &PanelBlocks, weights: DonorWeights) -> Self {
        let counterfactual = weights.apply(&blocks.y0_post);
        let raw = blocks.uncentered();
        let gap_pre = &raw.x1 - weights.apply(&raw.x0);
        Self {
            att: &blocks.y1_post - &counterfactual,
            counterfactual,
            gap_pre,
            weights,
            pure_weighting: true,
            observed_pre: raw.x1,
            observed_post: blocks.y1_post.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W, pre_times: &[String], post_times: &[String]) -> Result<()> {
        if pre_times.len() != self.gap_pre.len() || post_times.len() != self.att.len() {
            return Err(Error::Dimension("time labels do not match the estimate".into()));
        }
        let pre = pre_times.iter().enumerate().map(|(t, label)| {
            let obs = self.observed_pre[t];
            vec![label.clone(), fmt_f64(obs), fmt_f64(obs - self.gap_pre[t]), fmt_f64(self.gap_pre[t])]
        });
        let post = post_times.iter().enumerate().map(|(t, label)| {
            vec![
                label.clone(),
                fmt_f64(self.observed_post[t]),
                fmt_f64(self.counterfactual[t]),
                fmt_f64(self.att[t]),
            ]
        });
        write_csv(writer, &["time", "observed", "counterfactual", "gap"], pre.chain(post))
    }

    pub fn to_record(&self) -> EstimateRecord {
        EstimateRecord {
            counterfactual: self.counterfactual.iter().copied().collect(),
            att: self.att.iter().copied().collect(),
            gap_pre: self.gap_pre.iter().copied().collect(),
            pure_weighting: self.pure_weighting,
            weights: self.weights.to_record(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub counterfactual: Vec<f64>,
    pub att: Vec<f64>,
    pub gap_pre: Vec<f64>,
    pub pure_weighting: bool,
    pub weights: WeightsRecord,
}

/// `m̂(X₁) + Σ γ_i (Y_i − m̂(X_i))` for every post period.
pub fn augment_with_model(scm_w: &DonorWeights, model: &dyn OutcomeModel, blocks: &PanelBlocks) -> Result<AugEstimate> {
    check_len(scm_w, blocks)?;
    let mut counterfactual = model.predict(&blocks.x1)?;
    if counterfactual.len() != blocks.n_post() {
        return Err(Error::Dimension("model predictions do not cover the post periods".into()));
    }
    for (i, row) in blocks.x0.row_iter().enumerate() {
        let m = model.predict(&row.transpose())?;
        let resid = blocks.y0_post.row(i).transpose() - m;
        counterfactual += resid * scm_w.values[i];
    }
    let gap_pre = model.pre_gap(scm_w, blocks)?;
    Ok(AugEstimate {
        att: &blocks.y1_post - &counterfactual,
        counterfactual,
        gap_pre,
        weights: scm_w.clone(),
        pure_weighting: model.kind() == ModelKind::Constant,
        observed_pre: &blocks.x1 + &blocks.centering,
        observed_post: blocks.y1_post.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub lambda_ridge: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub imbalance: f64,
    pub excess: f64,
    pub scm_approx: f64,
    pub total: f64,
    /// Total relative to the largest-λ entry at the same σ.
    pub total_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSketch {
    pub lambda_grid: Vec<f64>,
    pub sigma_grid: Vec<f64>,
    pub j_factors: usize,
    pub m_bound: f64,
    pub t0: usize,
    /// Row-major over σ then λ.
    pub terms: Vec<BoundTerms>,
}

impl BoundSketch {
    pub fn curve(&self, sigma_index: usize) -> &[BoundTerms] {
        let n = self.lambda_grid.len();
        &self.terms[sigma_index * n..(sigma_index + 1) * n]
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_csv(
            writer,
            &["lambda", "sigma", "imbalance", "excess", "scm_approx", "total_pct"],
            self.terms.iter().map(|t| {
                vec![
                    fmt_f64(t.lambda_ridge),
                    fmt_f64(t.sigma),
                    fmt_f64(t.imbalance),
                    fmt_f64(t.excess),
                    fmt_f64(t.scm_approx),
                    fmt_f64(t.total_pct),
                ]
            }),
        )
    }
}

enum BoundForm {
    Factor { j: usize, m_bound: f64 },
    Linear { beta_norm: f64 },
}

/// Worst-case error terms under the linear factor model across λ and σ, with
/// the deviation parameter set to zero.
pub fn bound_sketch(
    scm_w: &DonorWeights,
    blocks: &PanelBlocks,
    lambda_grid: &[f64],
    sigma_grid: &[f64],
    j: usize,
    m_bound: f64,
) -> Result<BoundSketch> {
    if j == 0 || !(m_bound > 0.0) {
        return Err(Error::InvalidConfig("factor count and factor bound must be positive".into()));
    }
    sketch(scm_w, blocks, lambda_grid, sigma_grid, BoundForm::Factor { j, m_bound })
}

/// The same machinery for an autoregressive linear model: only the
/// imbalance term remains, scaled by `‖β‖₂`.
pub fn bound_sketch_linear(
    scm_w: &DonorWeights,
    blocks: &PanelBlocks,
    lambda_grid: &[f64],
    beta_norm: f64,
) -> Result<BoundSketch> {
    if !(beta_norm >= 0.0 && beta_norm.is_finite()) {
        return Err(Error::InvalidConfig(format!("coefficient norm must be finite and >= 0, got {beta_norm}")));
    }
    sketch(scm_w, blocks, lambda_grid, &[0.0], BoundForm::Linear { beta_norm })
}

fn sketch(
    scm_w: &DonorWeights,
    blocks: &PanelBlocks,
    lambda_grid: &[f64],
    sigma_grid: &[f64],
    form: BoundForm,
) -> Result<BoundSketch> {
    check_len(scm_w, blocks)?;
    if lambda_grid.is_empty() || lambda_grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidConfig("lambda grid must be non-empty, positive and finite".into()));
    }
    if sigma_grid.is_empty() || sigma_grid.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
        return Err(Error::InvalidConfig("sigma grid must be non-empty, non-negative and finite".into()));
    }
    let svd = ControlSvd::new(&blocks.x0);
    let n0 = blocks.n0() as f64;
    let t0 = blocks.t0();
    let r = &blocks.x1 - scm_w.apply(&blocks.x0);
    let (rt, perp) = svd.rotate(&r);
    let anchor = lambda_grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let (scale, scm_const, j_factors, m_bound) = match form {
        BoundForm::Factor { j, m_bound } => {
            (j as f64 * m_bound * m_bound / (t0 as f64).sqrt(), 2.0 * (2.0 * n0).ln().sqrt(), j, m_bound)
        }
        BoundForm::Linear { beta_norm } => (beta_norm, 0.0, 0, 0.0),
    };
    let linear = scm_const == 0.0;

    let terms_at = |lambda_ridge: f64, sigma: f64| {
        let lambda = lambda_ridge / n0;
        let mut imb = perp * perp;
        let mut exc = 0.0;
        for (x, d) in rt.iter().zip(svd.d.iter()) {
            imb += (lambda / (d * d + lambda) * x).powi(2);
            exc += (d / (d * d + lambda) * x).powi(2);
        }
        let imbalance = scale * imb.sqrt();
        let excess = if linear { 0.0 } else { scale * 4.0 * sigma * exc.sqrt() };
        let scm_approx = scale * scm_const;
        (lambda, imbalance, excess, scm_approx)
    };

    let mut terms = Vec::with_capacity(lambda_grid.len() * sigma_grid.len());
    for &sigma in sigma_grid {
        let (_, ai, ae, asa) = terms_at(anchor, sigma);
        let anchor_total = ai + ae + asa;
        for &lambda_ridge in lambda_grid {
            let (lambda, imbalance, excess, scm_approx) = terms_at(lambda_ridge, sigma);
            let total = imbalance + excess + scm_approx;
            let total_pct = if anchor_total > 0.0 { 100.0 * total / anchor_total } else { 100.0 };
            terms.push(BoundTerms { lambda_ridge, lambda, sigma, imbalance, excess, scm_approx, total, total_pct });
        }
    }
    Ok(BoundSketch { lambda_grid: lambda_grid.to_vec(), sigma_grid: sigma_grid.to_vec(), j_factors, m_bound, t0, terms })
}
