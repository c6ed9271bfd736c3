//! Estimator specifications shared by selection, inference and simulation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ControlSvd;
use crate::panel::PanelBlocks;
use crate::ridge_augment::{augment_weights_with, augment_with_model, ridge_weights_with, AugEstimate, OutcomeModel, UnitMeanModel};
use crate::scm::{solve_scm, DonorWeights, Provenance, ScmConfig};
use crate::selection::{default_lambda_grid, loo_cv_with, select_lambda, CvMode, CvTarget, SelectRule};

/// How the ridge penalty is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaChoice {
    Fixed(f64),
    Cv { rule: SelectRule, mode: CvMode, grid: Option<Vec<f64>> },
}

impl LambdaChoice {
    pub fn cv(rule: SelectRule) -> Self {
        Self::Cv { rule, mode: CvMode::LeaveOne, grid: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorSpec {
    Scm,
    /// Ridge regression alone, written as a weighting estimator.
    Ridge(LambdaChoice),
    /// SCM augmented with ridge regression.
    RidgeAscm(LambdaChoice),
    /// Uniform-weight difference in differences.
    FixedEffects,
    /// SCM augmented with unit fixed effects.
    DemeanedScm,
}

impl EstimatorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Scm => "scm",
            Self::Ridge(_) => "ridge",
            Self::RidgeAscm(_) => "ridge-ascm",
            Self::FixedEffects => "fixed-effects",
            Self::DemeanedScm => "demeaned-scm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimator {
    pub spec: EstimatorSpec,
    pub scm: ScmConfig,
}

impl Estimator {
    pub fn new(spec: EstimatorSpec) -> Self {
        Self { spec, scm: ScmConfig::default() }
    }

    pub fn with_scm(mut self, scm: ScmConfig) -> Self {
        self.scm = scm;
        self
    }

    pub fn name(&self) -> &'static str {
        self.spec.name()
    }

    /// The fixed ridge penalty, if already resolved.
    pub fn lambda(&self) -> Option<f64> {
        match &self.spec {
            EstimatorSpec::Ridge(LambdaChoice::Fixed(l)) | EstimatorSpec::RidgeAscm(LambdaChoice::Fixed(l)) => Some(*l),
            _ => None,
        }
    }

    /// Replace a cross-validated penalty by the value selected on `blocks`.
    pub fn resolve(&self, blocks: &PanelBlocks) -> Result<Self> {
        let (choice, target) = match &self.spec {
            EstimatorSpec::Ridge(c) => (c, CvTarget::Ridge),
            EstimatorSpec::RidgeAscm(c) => (c, CvTarget::RidgeAscm),
            _ => return Ok(self.clone()),
        };
        let LambdaChoice::Cv { rule, mode, grid } = choice else {
            return Ok(self.clone());
        };
        let b = recentered(blocks);
        let grid = match grid {
            Some(g) => g.clone(),
            None => default_lambda_grid(&b),
        };
        let cv = loo_cv_with(&b, &grid, *mode, &self.scm, target)?;
        let lambda = select_lambda(&cv, *rule);
        let spec = match target {
            CvTarget::Ridge => EstimatorSpec::Ridge(LambdaChoice::Fixed(lambda)),
            CvTarget::RidgeAscm => EstimatorSpec::RidgeAscm(LambdaChoice::Fixed(lambda)),
        };
        Ok(Self { spec, scm: self.scm.clone() })
    }

    /// Fit on the pre-period blocks and predict every post period.
    pub fn estimate(&self, blocks: &PanelBlocks) -> Result<AugEstimate> {
        let b = recentered(blocks);
        let est = self.resolve(&b)?;
        let lambda = est.lambda();
        match &est.spec {
            EstimatorSpec::Scm => Ok(AugEstimate::from_weights(&b, solve_scm(&b, &est.scm)?)),
            EstimatorSpec::Ridge(_) => {
                let svd = ControlSvd::new(&b.x0);
                let w = ridge_weights_with(&svd, &b, lambda.expect("resolved"))?;
                Ok(AugEstimate::from_weights(&b, w))
            }
            EstimatorSpec::RidgeAscm(_) => {
                let scm = solve_scm(&b, &est.scm)?;
                let svd = ControlSvd::new(&b.x0);
                let w = augment_weights_with(&svd, &scm, &b, lambda.expect("resolved"))?;
                Ok(AugEstimate::from_weights(&b, w))
            }
            EstimatorSpec::FixedEffects => {
                let w = DonorWeights::uniform(b.n0(), b.donor_ids.clone(), Provenance::Scm);
                fixed_effects(&b, w)
            }
            EstimatorSpec::DemeanedScm => fixed_effects(&b, solve_scm(&b, &est.scm)?),
        }
    }
}

fn fixed_effects(b: &PanelBlocks, w: DonorWeights) -> Result<AugEstimate> {
    let mut m = UnitMeanModel::default();
    m.fit(b)?;
    augment_with_model(&w, &m, b)
}

/// Blocks centered by the control means of their own pre-period columns.
pub fn recentered(blocks: &PanelBlocks) -> PanelBlocks {
    if blocks.centering.iter().all(|&c| c == 0.0) {
        blocks.centered()
    } else {
        blocks.uncentered().centered()
    }
}

/// Raw treated and control series over all periods, for rebuilding
/// sub-designs with arbitrary pre and post columns.
#[derive(Debug, Clone)]
pub struct Design {
    pub treated: DVector<f64>,
    pub controls: DMatrix<f64>,
    pub t0: usize,
    pub donor_ids: Vec<String>,
}

impl Design {
    pub fn from_blocks(blocks: &PanelBlocks) -> Self {
        let full = blocks.full_matrix();
        let (n, t) = full.shape();
        Self {
            treated: full.row(0).transpose(),
            controls: full.rows(1, n - 1).into_owned(),
            t0: blocks.t0(),
            donor_ids: blocks.donor_ids.clone(),
        }
        .check(t)
    }

    fn check(self, t: usize) -> Self {
        debug_assert_eq!(self.treated.len(), t);
        self
    }

    pub fn n_periods(&self) -> usize {
        self.treated.len()
    }

    /// Uncentered blocks with the given pre and post period indices.
    pub fn blocks(&self, pre: &[usize], post: &[usize]) -> PanelBlocks {
        let n0 = self.controls.nrows();
        PanelBlocks {
            x1: DVector::from_iterator(pre.len(), pre.iter().map(|&t| self.treated[t])),
            x0: DMatrix::from_fn(n0, pre.len(), |i, j| self.controls[(i, pre[j])]),
            y1_post: DVector::from_iterator(post.len(), post.iter().map(|&t| self.treated[t])),
            y0_post: DMatrix::from_fn(n0, post.len(), |i, j| self.controls[(i, post[j])]),
            centering: DVector::zeros(pre.len()),
            donor_ids: self.donor_ids.clone(),
        }
    }
}

impl ScmConfig {
    /// Configuration for a design built from a subset of the pre periods
    /// plus `extra` appended columns of unit importance.
    pub fn restricted(&self, cols: &[usize], extra: usize) -> Self {
        let mut out = self.clone();
        if let Some(v) = &self.importance {
            let n = cols.len() + extra;
            out.importance = Some(DVector::from_fn(n, |j, _| if j < cols.len() { v[cols[j]] } else { 1.0 }));
        }
        out
    }
}

pub(crate) fn require_pre(t0: usize, min: usize, what: &str) -> Result<()> {
    if t0 < min {
        Err(Error::TooFewPeriods(format!("{what} needs at least {min} pre-treatment periods, got {t0}")))
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blocks(seed: u64) -> PanelBlocks {
        let mut s = seed;
        let mut r = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let x1 = DVector::from_fn(6, |_, _| r() + 0.7);
        let x0 = DMatrix::from_fn(7, 6, |_, _| r());
        let y1 = DVector::from_fn(2, |_, _| r());
        let y0 = DMatrix::from_fn(7, 2, |_, _| r());
        PanelBlocks::from_parts(x1, x0, y1, y0).unwrap()
    }

    #[test]
    fn weighting_estimators_are_pure() {
        let b = blocks(1);
        for spec in [
            EstimatorSpec::Scm,
            EstimatorSpec::Ridge(LambdaChoice::Fixed(0.5)),
            EstimatorSpec::RidgeAscm(LambdaChoice::Fixed(0.5)),
            EstimatorSpec::RidgeAscm(LambdaChoice::cv(SelectRule::Min)),
        ] {
            let e = Estimator::new(spec).estimate(&b).unwrap();
            assert!(e.pure_weighting);
            assert!((&e.counterfactual - e.weights.apply(&b.y0_post)).amax() < 1e-12);
            assert!((&e.att - (&b.y1_post - &e.counterfactual)).amax() < 1e-15);
        }
    }

    #[test]
    fn centering_does_not_change_estimates() {
        let b = blocks(2);
        for spec in [EstimatorSpec::RidgeAscm(LambdaChoice::Fixed(0.3)), EstimatorSpec::DemeanedScm, EstimatorSpec::FixedEffects] {
            let est = Estimator::new(spec);
            let a = est.estimate(&b).unwrap();
            let c = est.estimate(&b.centered()).unwrap();
            assert!((a.counterfactual - c.counterfactual).amax() < 1e-10);
            assert!((a.gap_pre - c.gap_pre).amax() < 1e-10);
        }
    }

    #[test]
    fn design_round_trip() {
        let b = blocks(3);
        let d = Design::from_blocks(&b.centered());
        let pre: Vec<usize> = (0..6).collect();
        let back = d.blocks(&pre, &[6, 7]);
        assert!((back.x0 - &b.x0).amax() < 1e-14);
        assert!((back.y1_post - &b.y1_post).amax() < 1e-14);
    }
}
