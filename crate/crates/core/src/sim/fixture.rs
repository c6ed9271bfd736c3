//! Calibration fixture shipped with the crate.
//!
//! The values are synthetic (see `scripts/gen_fixture.py`): three smooth
//! factors normalized over the 89-period pre-treatment window, a trending
//! time effect, and distribution parameters on a log per-capita scale.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::PanelData;
use crate::sim::dgp::{draw, Dgp, DgpKind};

const FACTOR_CSV: &str = include_str!("../../fixtures/factor_calibration.csv");
const CALIBRATION_JSON: &str = include_str!("../../fixtures/calibration.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub version: u32,
    pub provenance: String,
    pub n: usize,
    pub t: usize,
    pub t0: usize,
    pub factor: FactorParams,
    pub fixed_effects: FixedEffectsParams,
    pub ar3: Ar3Params,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorParams {
    pub alpha_mean: f64,
    pub alpha_sd: f64,
    pub phi_cov: Vec<Vec<f64>>,
    pub sigma_eps: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEffectsParams {
    pub alpha_mean: f64,
    pub alpha_sd: f64,
    pub sigma_eps: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ar3Params {
    pub beta0: f64,
    pub beta: [f64; 3],
    pub sigma_eps: f64,
    pub theta: f64,
}

/// Time effects `ν` (length T) and factors `μ` (T × J).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorFixture {
    pub nu: DVector<f64>,
    pub mu: DMatrix<f64>,
}

impl FactorFixture {
    pub fn n_periods(&self) -> usize {
        self.nu.len()
    }

    /// The first `t` periods.
    pub fn head(&self, t: usize) -> Result<Self> {
        if t > self.n_periods() {
            return Err(Error::InvalidConfig(format!("fixture has {} periods, {t} requested", self.n_periods())));
        }
        Ok(Self { nu: self.nu.rows(0, t).into_owned(), mu: self.mu.rows(0, t).into_owned() })
    }
}

pub fn calibration() -> Calibration {
    serde_json::from_str(CALIBRATION_JSON).expect("embedded calibration is valid JSON")
}

pub fn factor_fixture() -> FactorFixture {
    let mut rdr = csv::Reader::from_reader(FACTOR_CSV.as_bytes());
    let mut nu = Vec::new();
    let mut mu = Vec::new();
    let mut j = 0;
    for rec in rdr.records() {
        let rec = rec.expect("embedded fixture is valid CSV");
        let vals: Vec<f64> = rec.iter().skip(1).map(|v| v.parse().expect("numeric fixture cell")).collect();
        nu.push(vals[0]);
        j = vals.len() - 1;
        mu.extend_from_slice(&vals[1..]);
    }
    let t = nu.len();
    FactorFixture { nu: DVector::from_vec(nu), mu: DMatrix::from_row_slice(t, j, &mu) }
}

/// Seed of the application-scale panel: among seeds 0..20 the draw whose
/// SCM pre-period imbalance is largest relative to the spread of the
/// centered treated series.
pub const APPLICATION_SEED: u64 = 10;

/// A 51-unit, 105-period panel with 89 pre-periods drawn from the calibrated
/// factor design. The treated unit is the one with the highest selection
/// score, so it sits at the edge of the donor pool and SCM fits it poorly.
pub fn application_panel() -> PanelData {
    let c = calibration();
    let n = 51;
    let d = draw(&Dgp::calibrated(DgpKind::Factor), n, c.t, c.t0, APPLICATION_SEED).expect("calibrated design draws");
    let top = (0..n)
        .max_by(|&a, &b| d.probabilities[a].total_cmp(&d.probabilities[b]))
        .expect("non-empty panel");
    let p = &d.panel;
    PanelData::new(p.outcomes().clone(), p.unit_ids().to_vec(), p.time_ids().to_vec(), top, c.t0)
        .expect("valid panel")
}
