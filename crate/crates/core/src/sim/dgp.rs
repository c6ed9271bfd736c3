//! Data-generating processes with outcome-based selection of one treated unit.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::PanelData;
use crate::sim::fixture::{calibration, factor_fixture};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DgpKind {
    Factor,
    FixedEffects,
    Ar3,
}

impl DgpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Factor => "factor",
            Self::FixedEffects => "fixed-effects",
            Self::Ar3 => "ar3",
        }
    }
}

/// `Y_it = α_i + ν_t + φ_i·μ_t + ε_it`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorDgp {
    pub mu: DMatrix<f64>,
    pub nu: DVector<f64>,
    pub alpha_mean: f64,
    pub alpha_sd: f64,
    pub phi_cov: DMatrix<f64>,
    pub sigma_eps: f64,
    /// Multiplies `sigma_eps`.
    pub noise_multiplier: f64,
    pub theta: f64,
}

/// `Y_it = α_i + ν_t + ε_it`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedEffectsDgp {
    pub nu: DVector<f64>,
    pub alpha_mean: f64,
    pub alpha_sd: f64,
    pub sigma_eps: f64,
    pub noise_multiplier: f64,
    pub theta: f64,
}

/// `Y_it = β0 + Σ_j β_j Y_i(t−j) + ε_it`, started from zero and burnt in.
#[derive(Debug, Clone, PartialEq)]
pub struct Ar3Dgp {
    pub beta0: f64,
    pub beta: [f64; 3],
    pub sigma_eps: f64,
    pub noise_multiplier: f64,
    pub theta: f64,
    pub burn_in: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dgp {
    Factor(FactorDgp),
    FixedEffects(FixedEffectsDgp),
    Ar3(Ar3Dgp),
}

impl Dgp {
    /// Calibrated defaults from the shipped fixture.
    pub fn calibrated(kind: DgpKind) -> Self {
        let c = calibration();
        let f = factor_fixture();
        match kind {
            DgpKind::Factor => {
                let j = c.factor.phi_cov.len();
                let cov = DMatrix::from_fn(j, j, |a, b| c.factor.phi_cov[a][b]);
                Self::Factor(FactorDgp {
                    mu: f.mu,
                    nu: f.nu,
                    alpha_mean: c.factor.alpha_mean,
                    alpha_sd: c.factor.alpha_sd,
                    phi_cov: cov,
                    sigma_eps: c.factor.sigma_eps,
                    noise_multiplier: 1.0,
                    theta: c.factor.theta,
                })
            }
            DgpKind::FixedEffects => Self::FixedEffects(FixedEffectsDgp {
                nu: f.nu,
                alpha_mean: c.fixed_effects.alpha_mean,
                alpha_sd: c.fixed_effects.alpha_sd,
                sigma_eps: c.fixed_effects.sigma_eps,
                noise_multiplier: 1.0,
                theta: c.fixed_effects.theta,
            }),
            DgpKind::Ar3 => Self::Ar3(Ar3Dgp {
                beta0: c.ar3.beta0,
                beta: c.ar3.beta,
                sigma_eps: c.ar3.sigma_eps,
                noise_multiplier: 1.0,
                theta: c.ar3.theta,
                burn_in: 200,
            }),
        }
    }

    pub fn kind(&self) -> DgpKind {
        match self {
            Self::Factor(_) => DgpKind::Factor,
            Self::FixedEffects(_) => DgpKind::FixedEffects,
            Self::Ar3(_) => DgpKind::Ar3,
        }
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        match &mut self {
            Self::Factor(d) => d.theta = theta,
            Self::FixedEffects(d) => d.theta = theta,
            Self::Ar3(d) => d.theta = theta,
        }
        self
    }

    pub fn with_noise_multiplier(mut self, m: f64) -> Self {
        match &mut self {
            Self::Factor(d) => d.noise_multiplier = m,
            Self::FixedEffects(d) => d.noise_multiplier = m,
            Self::Ar3(d) => d.noise_multiplier = m,
        }
        self
    }

    /// Post period (0-based) whose effect is the estimand: the last period
    /// for the factor and fixed-effects designs, the first for AR(3).
    pub fn estimand_period(&self, t: usize, t0: usize) -> usize {
        match self {
            Self::Ar3(_) => 0,
            _ => t - t0 - 1,
        }
    }

    pub fn validate(&self, t: usize) -> Result<()> {
        let noise = |s: f64, m: f64| {
            if !(s >= 0.0 && m >= 0.0 && s.is_finite() && m.is_finite()) {
                Err(Error::InvalidConfig("noise scale must be finite and >= 0".into()))
            } else {
                Ok(())
            }
        };
        match self {
            Self::Factor(d) => {
                noise(d.sigma_eps, d.noise_multiplier)?;
                let j = d.mu.ncols();
                if d.phi_cov.shape() != (j, j) {
                    return Err(Error::Dimension(format!("loading covariance must be {j}×{j}")));
                }
                loading_factor(&d.phi_cov)?;
                check_len(d.nu.len(), t)?;
                if d.mu.nrows() != d.nu.len() {
                    return Err(Error::Dimension(format!(
                        "factor path has {} periods but the time effects have {}",
                        d.mu.nrows(),
                        d.nu.len()
                    )));
                }
                if !(d.alpha_sd >= 0.0) {
                    return Err(Error::InvalidConfig("alpha_sd must be >= 0".into()));
                }
            }
            Self::FixedEffects(d) => {
                noise(d.sigma_eps, d.noise_multiplier)?;
                check_len(d.nu.len(), t)?;
                if !(d.alpha_sd >= 0.0) {
                    return Err(Error::InvalidConfig("alpha_sd must be >= 0".into()));
                }
            }
            Self::Ar3(d) => {
                noise(d.sigma_eps, d.noise_multiplier)?;
                if ar_spectral_radius(&d.beta) >= 1.0 {
                    return Err(Error::InvalidConfig(format!("AR coefficients {:?} are not stationary", d.beta)));
                }
            }
        }
        Ok(())
    }
}

fn check_len(have: usize, t: usize) -> Result<()> {
    if have < t {
        Err(Error::InvalidConfig(format!("time effects cover {have} periods, {t} requested")))
    } else {
        Ok(())
    }
}

/// Symmetric square root of a PSD covariance, rejecting anything else.
fn loading_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let j = cov.nrows();
    if j == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let scale = cov.amax().max(f64::MIN_POSITIVE);
    if (cov - cov.transpose()).amax() > 1e-12 * scale {
        return Err(Error::InvalidConfig("loading covariance is not symmetric".into()));
    }
    let eig = cov.clone().symmetric_eigen();
    if eig.eigenvalues.min() < -1e-12 * scale {
        return Err(Error::InvalidConfig("loading covariance is not positive semidefinite".into()));
    }
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose())
}

/// Largest modulus among the roots of the AR(3) companion matrix.
pub fn ar_spectral_radius(beta: &[f64; 3]) -> f64 {
    let c = DMatrix::from_row_slice(3, 3, &[beta[0], beta[1], beta[2], 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    c.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Rescale to mean zero and unit (population) variance; constant input maps to zeros.
pub fn standardize(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
    v.iter().map(|s| if sd > 0.0 { (s - mean) / sd } else { 0.0 }).collect()
}

/// Selection probabilities `π_i ∝ logit⁻¹(θ · score_i)`.
pub fn selection_probabilities(score: &[f64], theta: f64) -> Vec<f64> {
    let raw: Vec<f64> = score.iter().map(|&z| logistic(theta * z)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / total).collect()
}

/// A simulated panel with its selection diagnostics.
#[derive(Debug, Clone)]
pub struct Draw {
    pub panel: PanelData,
    pub probabilities: Vec<f64>,
}

/// Draw `n` units over `t` periods with the treated unit selected on
/// unit characteristics; the treatment effect is zero. Shorter panels use
/// the final `t` periods of the time-effect and factor paths.
pub fn draw_panel(dgp: &Dgp, n: usize, t: usize, t0: usize, seed: u64) -> Result<PanelData> {
    draw(dgp, n, t, t0, seed).map(|d| d.panel)
}

pub fn draw(dgp: &Dgp, n: usize, t: usize, t0: usize, seed: u64) -> Result<Draw> {
    if n < 3 {
        return Err(Error::InvalidConfig("need at least 3 units".into()));
    }
    if !(t0 >= 2 && t0 < t) {
        return Err(Error::InvalidConfig(format!("need 2 <= T0 < T, got T0 = {t0}, T = {t}")));
    }
    dgp.validate(t)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let mut y = DMatrix::zeros(n, t);
    let (score, theta): (Vec<f64>, f64) = match dgp {
        Dgp::Factor(d) => {
            let root = loading_factor(&d.phi_cov)?;
            let j = d.mu.ncols();
            let alpha: Vec<f64> = (0..n).map(|_| d.alpha_mean + d.alpha_sd * std(&mut rng)).collect();
            let phi = DMatrix::from_fn(n, j, |_, _| std(&mut rng)) * &root;
            let sigma = d.sigma_eps * d.noise_multiplier;
            let off = d.nu.len() - t;
            for i in 0..n {
                for s in 0..t {
                    let common: f64 = (0..j).map(|k| phi[(i, k)] * d.mu[(off + s, k)]).sum();
                    y[(i, s)] = alpha[i] + d.nu[off + s] + common + sigma * std(&mut rng);
                }
            }
            let mut score = standardize(&alpha);
            for k in 0..j {
                let col: Vec<f64> = phi.column(k).iter().copied().collect();
                for (s, z) in score.iter_mut().zip(standardize(&col)) {
                    *s += z;
                }
            }
            (score, d.theta)
        }
        Dgp::FixedEffects(d) => {
            let alpha: Vec<f64> = (0..n).map(|_| d.alpha_mean + d.alpha_sd * std(&mut rng)).collect();
            let sigma = d.sigma_eps * d.noise_multiplier;
            let off = d.nu.len() - t;
            for i in 0..n {
                for s in 0..t {
                    y[(i, s)] = alpha[i] + d.nu[off + s] + sigma * std(&mut rng);
                }
            }
            (standardize(&alpha), d.theta)
        }
        Dgp::Ar3(d) => {
            let noise = Normal::new(0.0, d.sigma_eps * d.noise_multiplier)
                .map_err(|e| Error::InvalidConfig(format!("noise scale: {e}")))?;
            for i in 0..n {
                let mut lags = [0.0_f64; 3];
                for s in 0..d.burn_in + t {
                    let v = d.beta0 + d.beta[0] * lags[0] + d.beta[1] * lags[1] + d.beta[2] * lags[2] + noise.sample(&mut rng);
                    lags = [v, lags[0], lags[1]];
                    if s >= d.burn_in {
                        y[(i, s - d.burn_in)] = v;
                    }
                }
            }
            let recent: Vec<f64> = (0..n).map(|i| (t0 - 3.min(t0)..t0).map(|s| y[(i, s)]).sum()).collect();
            let score = standardize(&recent);
            (score, d.theta)
        }
    };
    let probabilities = selection_probabilities(&score, theta);
    let dist = WeightedIndex::new(&probabilities).map_err(|e| Error::InvalidConfig(format!("selection: {e}")))?;
    let treated = dist.sample(&mut rng);
    let width = n.to_string().len();
    let units = (1..=n).map(|i| format!("u{i:0width$}")).collect();
    let times = (1..=t).map(|s| s.to_string()).collect();
    let panel = PanelData::new(y, units, times, treated, t0)?;
    Ok(Draw { panel, probabilities })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_design_has_identical_units() {
        let dgp = Dgp::Factor(FactorDgp {
            mu: DMatrix::zeros(10, 0),
            nu: DVector::from_fn(10, |s, _| s as f64),
            alpha_mean: 1.0,
            alpha_sd: 0.0,
            phi_cov: DMatrix::zeros(0, 0),
            sigma_eps: 0.0,
            noise_multiplier: 1.0,
            theta: 0.5,
        });
        let p = draw_panel(&dgp, 5, 10, 7, 3).unwrap();
        let y = p.outcomes();
        for i in 1..5 {
            assert_eq!(y.row(i), y.row(0));
        }
    }

    #[test]
    fn same_seed_same_panel() {
        for kind in [DgpKind::Factor, DgpKind::FixedEffects, DgpKind::Ar3] {
            let dgp = Dgp::calibrated(kind);
            let a = draw_panel(&dgp, 20, 30, 25, 99).unwrap();
            let b = draw_panel(&dgp, 20, 30, 25, 99).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let Dgp::Factor(mut d) = Dgp::calibrated(DgpKind::Factor) else { unreachable!() };
        d.phi_cov[(0, 0)] = -1.0;
        assert!(draw_panel(&Dgp::Factor(d), 10, 30, 25, 1).is_err());
        let Dgp::Ar3(mut a) = Dgp::calibrated(DgpKind::Ar3) else { unreachable!() };
        a.beta = [0.9, 0.2, 0.1];
        assert!(draw_panel(&Dgp::Ar3(a), 10, 30, 25, 1).is_err());
    }

    #[test]
    fn calibrated_ar_is_stationary() {
        let Dgp::Ar3(a) = Dgp::calibrated(DgpKind::Ar3) else { unreachable!() };
        let r = ar_spectral_radius(&a.beta);
        assert!(r < 1.0 && r > 0.9);
    }

    #[test]
    fn zero_theta_is_uniform() {
        let p = selection_probabilities(&[3.0, -1.0, 0.5, 7.0], 0.0);
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }
}
