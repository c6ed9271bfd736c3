//! Calibrated simulation designs and the Monte Carlo harness.

pub mod dgp;
pub mod fixture;
pub mod monte_carlo;

pub use dgp::{draw, draw_panel, Dgp, DgpKind};
pub use fixture::application_panel;
pub use monte_carlo::{run_coverage, run_monte_carlo, standard_bank, CoverageReport, McConfig, McReport};
