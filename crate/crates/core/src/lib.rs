//! Synthetic control estimation for a single treated unit with ridge
//! augmentation, covariate adjustment, cross-validated penalties, conformal
//! inference and a calibrated simulation harness.

pub mod covariates;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod panel;
pub mod ridge_augment;
pub mod scm;
pub mod selection;
pub mod sim;

pub use covariates::{CovariatePanel, ResidualizedPanel};
pub use error::{Error, Result};
pub use estimator::{Estimator, EstimatorSpec, LambdaChoice};
pub use inference::{IntervalMethod, PredictionInterval, Target};
pub use panel::{load_panel, load_panel_path, split_and_center, PanelBlocks, PanelData};
pub use ridge_augment::{AugEstimate, BoundSketch, RidgeFit};
pub use scm::{DonorWeights, Penalty, Provenance, ScmConfig};
pub use selection::{CvMode, CvResult, SelectRule};
