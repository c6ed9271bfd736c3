//! Auxiliary covariates: joint balancing, joint ridge augmentation and the
//! two-step residualized estimator.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_csv};
use crate::linalg::{least_squares, ControlSvd};
use crate::panel::{column_means, LongTable, PanelBlocks, PanelData, TimeOrder};
use crate::ridge_augment::{augment_weights_with, AugEstimate};
use crate::scm::{solve_scm, DonorWeights, Provenance, ScmConfig};

/// Unit-level covariates for the treated unit and the donors, centered by
/// the donor means.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariatePanel {
    pub names: Vec<String>,
    pub z1: DVector<f64>,
    /// `N0 × K`, zero column means.
    pub z0: DMatrix<f64>,
    /// Donor means removed from `z1` and `z0`.
    pub centering: DVector<f64>,
    /// Per-column multipliers applied by [`CovariatePanel::standardized`].
    pub scale: DVector<f64>,
    pub theta_x: f64,
    pub theta_z: f64,
    pub lambda_x: f64,
    pub lambda_z: f64,
}

impl CovariatePanel {
    pub fn new(names: Vec<String>, z1: DVector<f64>, z0: DMatrix<f64>) -> Result<Self> {
        let k = names.len();
        if z1.len() != k || z0.ncols() != k {
            return Err(Error::Dimension(format!("{k} covariate names, z1 has {}, z0 has {} columns", z1.len(), z0.ncols())));
        }
        if z1.iter().chain(z0.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidPanel("covariates must be finite".into()));
        }
        let means = column_means(&z0);
        let mut z0 = z0;
        for (j, m) in means.iter().enumerate() {
            z0.column_mut(j).add_scalar_mut(-m);
        }
        Ok(Self {
            names,
            z1: z1 - &means,
            z0,
            centering: means,
            scale: DVector::from_element(k, 1.0),
            theta_x: 1.0,
            theta_z: 1.0,
            lambda_x: 1.0,
            lambda_z: 1.0,
        })
    }

    /// No covariates.
    pub fn empty(n0: usize) -> Self {
        Self::new(Vec::new(), DVector::zeros(0), DMatrix::zeros(n0, 0)).expect("empty covariates are valid")
    }

    /// Average the named extra columns of a long table over each unit's
    /// pre-treatment rows.
    pub fn from_table(table: &LongTable, panel: &PanelData, columns: &[String]) -> Result<Self> {
        let idx = columns
            .iter()
            .map(|c| {
                table.column_index(c).filter(|&i| i > 0).ok_or_else(|| Error::InvalidConfig(format!("unknown covariate column `{c}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let order = TimeOrder::infer(panel.time_ids().iter().map(String::as_str));
        let pre = &panel.time_ids()[..panel.t0()];
        let unit_pos: HashMap<&str, usize> = panel.unit_ids().iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
        let n = panel.n_units();
        let k = columns.len();
        let mut sums = DMatrix::<f64>::zeros(n, k);
        let mut counts = DMatrix::<usize>::zeros(n, k);
        for row in &table.rows {
            let Some(&i) = unit_pos.get(row.unit.as_str()) else { continue };
            if !pre.iter().any(|t| order.cmp(t, &row.time) == Ordering::Equal) {
                continue;
            }
            for (c, &col) in idx.iter().enumerate() {
                if let Some(v) = row.values[col] {
                    sums[(i, c)] += v;
                    counts[(i, c)] += 1;
                }
            }
        }
        let mut z = DMatrix::zeros(n, k);
        for i in 0..n {
            for c in 0..k {
                if counts[(i, c)] == 0 {
                    return Err(Error::MissingCell { unit: panel.unit_ids()[i].clone(), time: format!("{} (pre-period)", columns[c]) });
                }
                z[(i, c)] = sums[(i, c)] / counts[(i, c)] as f64;
            }
        }
        let tr = panel.treated_index();
        let donors = panel.donor_indices();
        let z1 = z.row(tr).transpose();
        let z0 = z.select_rows(&donors);
        Self::new(columns.to_vec(), z1, z0)
    }

    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn with_lambda(mut self, lambda_ridge: f64) -> Self {
        self.lambda_x = lambda_ridge;
        self.lambda_z = lambda_ridge;
        self
    }

    pub fn with_theta(mut self, theta_x: f64, theta_z: f64) -> Self {
        self.theta_x = theta_x;
        self.theta_z = theta_z;
        self
    }

    /// Rescale each covariate so its donor standard deviation equals the
    /// pooled standard deviation of the lagged outcomes.
    pub fn standardized(&self, blocks: &PanelBlocks) -> Self {
        let target = pooled_sd(&blocks.x0);
        let mut out = self.clone();
        for j in 0..self.k() {
            let sd = sd_of(self.z0.column(j).iter().copied());
            let f = if sd > 0.0 && target > 0.0 { target / sd } else { 1.0 };
            out.z0.column_mut(j).scale_mut(f);
            out.z1[j] *= f;
            out.scale[j] *= f;
        }
        out
    }

    fn check(&self, blocks: &PanelBlocks) -> Result<()> {
        if self.z0.nrows() != blocks.n0() {
            return Err(Error::Dimension(format!("covariates cover {} donors, panel has {}", self.z0.nrows(), blocks.n0())));
        }
        for (name, v) in [("theta_x", self.theta_x), ("theta_z", self.theta_z), ("lambda_x", self.lambda_x), ("lambda_z", self.lambda_z)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

fn sd_of(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    if n < 2 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    (values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Standard deviation of all entries around their column means.
fn pooled_sd(x0: &DMatrix<f64>) -> f64 {
    let (n, t) = x0.shape();
    if n < 2 {
        return 0.0;
    }
    let means = column_means(x0);
    let ss: f64 = x0.column_iter().zip(means.iter()).map(|(c, m)| c.iter().map(|v| (v - m).powi(2)).sum::<f64>()).sum();
    (ss / ((n - 1) * t) as f64).sqrt()
}

/// `[√θx·X, √θz·Z]` stacked as one pre-period block.
fn stacked(blocks: &PanelBlocks, cov: &CovariatePanel, x_scale: f64, z_scale: f64) -> PanelBlocks {
    let (n0, t0, k) = (blocks.n0(), blocks.t0(), cov.k());
    let x1 = DVector::from_fn(t0 + k, |j, _| if j < t0 { x_scale * blocks.x1[j] } else { z_scale * cov.z1[j - t0] });
    let x0 = DMatrix::from_fn(n0, t0 + k, |i, j| if j < t0 { x_scale * blocks.x0[(i, j)] } else { z_scale * cov.z0[(i, j - t0)] });
    let mut centering = DVector::zeros(t0 + k);
    centering.rows_mut(0, t0).copy_from(&(&blocks.centering * x_scale));
    PanelBlocks { x1, x0, centering, ..blocks.clone() }
}

/// Simplex weights balancing lagged outcomes and covariates jointly.
pub fn joint_solve(blocks: &PanelBlocks, cov: &CovariatePanel, cfg: &ScmConfig) -> Result<DonorWeights> {
    cov.check(blocks)?;
    if cov.k() == 0 || cov.theta_z == 0.0 {
        if cov.theta_x == 1.0 {
            return solve_scm(blocks, cfg);
        }
        let scaled = stacked(blocks, &CovariatePanel::empty(blocks.n0()), cov.theta_x.sqrt(), 0.0);
        return solve_scm(&scaled, cfg);
    }
    let s = stacked(blocks, cov, cov.theta_x.sqrt(), cov.theta_z.sqrt());
    let mut cfg = cfg.clone();
    if let Some(v) = &cfg.importance {
        if v.len() != blocks.t0() {
            return Err(Error::Dimension(format!("importance has length {} but T0 = {}", v.len(), blocks.t0())));
        }
        cfg.importance = Some(DVector::from_fn(s.t0(), |j, _| if j < v.len() { v[j] } else { 1.0 }));
    }
    solve_scm(&s, &cfg)
}

/// Ridge augmentation on the stacked lagged outcomes and covariates.
pub fn joint_augment(scm_w: &DonorWeights, blocks: &PanelBlocks, cov: &CovariatePanel) -> Result<AugEstimate> {
    let w = joint_augment_weights(scm_w, blocks, cov)?;
    Ok(AugEstimate::from_weights(blocks, w))
}

pub fn joint_augment_weights(scm_w: &DonorWeights, blocks: &PanelBlocks, cov: &CovariatePanel) -> Result<DonorWeights> {
    cov.check(blocks)?;
    let s = joint_stack(blocks, cov)?;
    augment_weights_with(&ControlSvd::new(&s.x0), scm_w, &s, cov.lambda_x)
}

/// The stacked system used by [`joint_augment`]: `[X, Z·√(λx/λz)]` with penalty `λx`.
pub fn joint_stack(blocks: &PanelBlocks, cov: &CovariatePanel) -> Result<PanelBlocks> {
    cov.check(blocks)?;
    if cov.k() == 0 {
        return Ok(blocks.clone());
    }
    if cov.lambda_z == 0.0 {
        return Err(Error::InvalidConfig("joint augmentation needs lambda_z > 0; use the two-step path for unpenalized covariates".into()));
    }
    Ok(stacked(blocks, cov, 1.0, (cov.lambda_x / cov.lambda_z).sqrt()))
}

/// Lagged outcomes with the donor-fitted covariate projection removed.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualizedPanel {
    pub x1_check: DVector<f64>,
    pub x0_check: DMatrix<f64>,
    /// `(Z₀ᵀZ₀)⁻¹Z₀ᵀX₀`, `K × T0`.
    pub projection: DMatrix<f64>,
    pub y1_check: DVector<f64>,
    pub y0_check: DMatrix<f64>,
    /// `(Z₀ᵀZ₀)⁻¹Z₀ᵀY₀,post`, `K × (T − T0)`.
    pub post_projection: DMatrix<f64>,
}

impl ResidualizedPanel {
    /// Residualized outcomes as panel blocks (centered when the inputs are).
    pub fn blocks(&self, like: &PanelBlocks) -> PanelBlocks {
        PanelBlocks {
            x1: self.x1_check.clone(),
            x0: self.x0_check.clone(),
            y0_post: self.y0_check.clone(),
            y1_post: self.y1_check.clone(),
            centering: DVector::zeros(self.x1_check.len()),
            donor_ids: like.donor_ids.clone(),
        }
    }
}

/// Names of covariate columns that are (numerically) spanned by earlier ones.
fn dependent_columns(z0: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let scale = z0.amax().max(f64::MIN_POSITIVE);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut bad = Vec::new();
    for (j, col) in z0.column_iter().enumerate() {
        let mut v = col.into_owned();
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v -= q * c;
            }
        }
        let norm = v.norm();
        if norm <= 1e-10 * scale * (z0.nrows() as f64).sqrt() {
            bad.push(names[j].clone());
        } else {
            basis.push(v / norm);
        }
    }
    bad
}

pub fn residualize(blocks: &PanelBlocks, cov: &CovariatePanel) -> Result<ResidualizedPanel> {
    cov.check(blocks)?;
    let k = cov.k();
    if k == 0 {
        return Ok(ResidualizedPanel {
            x1_check: blocks.x1.clone(),
            x0_check: blocks.x0.clone(),
            projection: DMatrix::zeros(0, blocks.t0()),
            y1_check: blocks.y1_post.clone(),
            y0_check: blocks.y0_post.clone(),
            post_projection: DMatrix::zeros(0, blocks.n_post()),
        });
    }
    if k >= blocks.n0() {
        return Err(Error::InvalidConfig(format!(
            "the two-step path needs fewer covariates ({k}) than donors ({})",
            blocks.n0()
        )));
    }
    let bad = dependent_columns(&cov.z0, &cov.names);
    if !bad.is_empty() {
        return Err(Error::RankDeficientCovariates { columns: bad });
    }
    let projection = least_squares(&cov.z0, &blocks.x0, "donor covariate matrix")?;
    let post_projection = least_squares(&cov.z0, &blocks.y0_post, "donor covariate matrix")?;
    Ok(ResidualizedPanel {
        x1_check: &blocks.x1 - projection.tr_mul(&cov.z1),
        x0_check: &blocks.x0 - &cov.z0 * &projection,
        y1_check: &blocks.y1_post - post_projection.tr_mul(&cov.z1),
        y0_check: &blocks.y0_post - &cov.z0 * &post_projection,
        projection,
        post_projection,
    })
}

/// Two-step weights: ridge augmentation in the residualized space plus an
/// exact covariate-balancing correction.
pub fn two_step_weights(
    scm_w_on_resid: &DonorWeights,
    blocks: &PanelBlocks,
    cov: &CovariatePanel,
    lambda_ridge: f64,
) -> Result<DonorWeights> {
    let res = residualize(blocks, cov)?;
    two_step_weights_with(&res, scm_w_on_resid, blocks, cov, lambda_ridge)
}

fn two_step_weights_with(
    res: &ResidualizedPanel,
    scm_w: &DonorWeights,
    blocks: &PanelBlocks,
    cov: &CovariatePanel,
    lambda_ridge: f64,
) -> Result<DonorWeights> {
    let rb = res.blocks(blocks);
    let mut w = augment_weights_with(&ControlSvd::new(&rb.x0), scm_w, &rb, lambda_ridge)?;
    if cov.k() > 0 {
        let s = &cov.z1 - cov.z0.tr_mul(&scm_w.values);
        let zz = cov.z0.tr_mul(&cov.z0);
        let coef = crate::linalg::solve_svd(&zz, &s, "donor covariate Gram matrix")?;
        w.values += &cov.z0 * coef;
        w.provenance = Provenance::CovariateAdjusted;
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoStepImbalance {
    pub direct: f64,
    pub bound: f64,
    pub covariate_imbalance: f64,
}

/// Lagged-outcome imbalance of the two-step weights against its shrinkage bound.
pub fn two_step_imbalance(
    scm_w_on_resid: &DonorWeights,
    blocks: &PanelBlocks,
    cov: &CovariatePanel,
    lambda_ridge: f64,
) -> Result<TwoStepImbalance> {
    let res = residualize(blocks, cov)?;
    let w = two_step_weights_with(&res, scm_w_on_resid, blocks, cov, lambda_ridge)?;
    let svd = ControlSvd::new(&res.x0_check);
    let d = svd.min_singular_value();
    let n0 = blocks.n0() as f64;
    let factor = if lambda_ridge == 0.0 { 0.0 } else { lambda_ridge / (lambda_ridge + n0 * d * d) };
    let rcheck = (&res.x1_check - scm_w_on_resid.apply(&res.x0_check)).norm();
    Ok(TwoStepImbalance {
        direct: (&blocks.x1 - w.apply(&blocks.x0)).norm(),
        bound: factor * rcheck,
        covariate_imbalance: (&cov.z1 - w.apply(&cov.z0)).amax(),
    })
}

/// Full two-step estimator: residualize, fit SCM on the residualized lagged
/// outcomes, then augment and rebalance the covariates.
pub fn two_step_estimate(blocks: &PanelBlocks, cov: &CovariatePanel, cfg: &ScmConfig, lambda_ridge: f64) -> Result<AugEstimate> {
    let res = residualize(blocks, cov)?;
    let scm = solve_scm(&res.blocks(blocks), cfg)?;
    let w = two_step_weights_with(&res, &scm, blocks, cov, lambda_ridge)?;
    Ok(AugEstimate::from_weights(blocks, w))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub covariate: String,
    pub raw_gap: f64,
    pub weighted_gap: f64,
}

/// Absolute treated-minus-donor differences, in donor standard deviations,
/// before and after weighting.
pub fn balance_table(cov: &CovariatePanel, w: &DonorWeights) -> Vec<BalanceRow> {
    (0..cov.k())
        .map(|j| {
            let col = cov.z0.column(j);
            let sd = sd_of(col.iter().copied());
            let s = if sd > 0.0 { sd } else { 1.0 };
            BalanceRow {
                covariate: cov.names[j].clone(),
                raw_gap: (cov.z1[j] - col.mean()).abs() / s,
                weighted_gap: (cov.z1[j] - w.values.dot(&col)).abs() / s,
            }
        })
        .collect()
}

/// The same diagnostic over pre-period outcomes (standardized by the donor
/// spread at each period).
pub fn outcome_balance_table(blocks: &PanelBlocks, w: &DonorWeights, labels: &[String]) -> Vec<BalanceRow> {
    let raw = blocks.uncentered();
    (0..raw.t0())
        .map(|t| {
            let col = raw.x0.column(t);
            let sd = sd_of(col.iter().copied());
            let s = if sd > 0.0 { sd } else { 1.0 };
            BalanceRow {
                covariate: labels.get(t).cloned().unwrap_or_else(|| format!("pre{}", t + 1)),
                raw_gap: (raw.x1[t] - col.mean()).abs() / s,
                weighted_gap: (raw.x1[t] - w.values.dot(&col)).abs() / s,
            }
        })
        .collect()
}

pub fn write_balance_csv<W: Write>(writer: W, rows: &[BalanceRow]) -> Result<()> {
    write_csv(
        writer,
        &["covariate", "raw_gap", "weighted_gap"],
        rows.iter().map(|r| vec![r.covariate.clone(), fmt_f64(r.raw_gap), fmt_f64(r.weighted_gap)]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed;
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        }
    }

    fn setup(n0: usize, t0: usize, k: usize, seed: u64) -> (PanelBlocks, CovariatePanel) {
        let mut r = lcg(seed);
        let x1 = DVector::from_fn(t0, |_, _| r() + 0.6);
        let x0 = DMatrix::from_fn(n0, t0, |_, _| r());
        let y1 = DVector::from_fn(2, |_, _| r());
        let y0 = DMatrix::from_fn(n0, 2, |_, _| r());
        let b = PanelBlocks::from_parts(x1, x0, y1, y0).unwrap().centered();
        let names = (0..k).map(|j| format!("z{j}")).collect();
        let z1 = DVector::from_fn(k, |_, _| r() + 0.3);
        let z0 = DMatrix::from_fn(n0, k, |_, _| r());
        (b, CovariatePanel::new(names, z1, z0).unwrap())
    }

    #[test]
    fn residualization_is_orthogonal_and_idempotent() {
        let (b, cov) = setup(8, 4, 2, 3);
        let res = residualize(&b, &cov).unwrap();
        assert!(cov.z0.tr_mul(&res.x0_check).amax() < 1e-8);
        let again = residualize(&res.blocks(&b), &cov).unwrap();
        assert!((again.x0_check - &res.x0_check).amax() < 1e-10);
    }

    #[test]
    fn two_step_balances_covariates_exactly() {
        let (b, cov) = setup(9, 5, 2, 4);
        let res = residualize(&b, &cov).unwrap();
        let scm = solve_scm(&res.blocks(&b), &ScmConfig::default()).unwrap();
        let w = two_step_weights(&scm, &b, &cov, 0.5).unwrap();
        assert!((&cov.z1 - w.apply(&cov.z0)).amax() < 1e-8);
        let imb = two_step_imbalance(&scm, &b, &cov, 0.5).unwrap();
        assert!(imb.direct <= imb.bound + 1e-10);
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let (b, mut cov) = setup(8, 4, 2, 5);
        let c0 = cov.z0.column(0).into_owned();
        cov.z0.set_column(1, &(c0 * 2.0));
        cov.names = vec!["gdp".into(), "gdp2".into()];
        match residualize(&b, &cov) {
            Err(Error::RankDeficientCovariates { columns }) => assert_eq!(columns, vec!["gdp2".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_theta_z_matches_plain_scm() {
        let (b, cov) = setup(6, 3, 1, 6);
        let cov = cov.with_theta(1.0, 0.0);
        let a = joint_solve(&b, &cov, &ScmConfig::default()).unwrap();
        let p = solve_scm(&b, &ScmConfig::default()).unwrap();
        assert!((a.values - p.values).amax() < 1e-12);
    }

    #[test]
    fn balance_rows() {
        let (_, cov) = setup(6, 3, 2, 7);
        let w = DonorWeights::uniform(6, vec![String::new(); 6], Provenance::Scm);
        let rows = balance_table(&cov, &w);
        assert_eq!(rows.len(), 2);
        for r in rows {
            assert!((r.raw_gap - r.weighted_gap).abs() < 1e-12);
        }
    }
}
