use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "panelctrl", version, about = "Synthetic control estimation with ridge augmentation")]
pub struct Cli {
    /// Cap on worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an estimator and write weights, gaps and balance tables.
    Estimate(EstimateArgs),
    /// Cross-validate the ridge penalty over pre-treatment periods.
    Cv(CvArgs),
    /// Re-run the estimator at fake treatment dates inside the pre-period.
    Placebo(PlaceboArgs),
    /// Monte Carlo bias and RMSE study on a calibrated design.
    Simulate(SimulateArgs),
    /// Error-bound sketch and identity checks for the ridge augmentation.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PanelArgs {
    /// Long-format CSV with columns unit, time, outcome (plus covariates).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub treated: String,
    /// First treated period.
    #[arg(long)]
    pub treatment_time: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorArg {
    Scm,
    Ridge,
    RidgeAscm,
    FixedEffects,
    DemeanedScm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectArg {
    Min,
    OneSe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CvModeArg {
    LeaveOne,
    LeaveFuture,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PenaltyArgs {
    #[arg(long, value_enum, default_value_t = EstimatorArg::RidgeAscm)]
    pub estimator: EstimatorArg,
    /// Fixed ridge penalty; overrides --select.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Cross-validation rule used when no --lambda is given.
    #[arg(long, value_enum, default_value_t = SelectArg::Min)]
    pub select: SelectArg,
    #[arg(long, value_enum, default_value_t = CvModeArg::LeaveOne)]
    pub cv_mode: CvModeArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovariateModeArg {
    Joint,
    Residualize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferenceArg {
    Conformal,
    #[value(name = "jackknife+")]
    #[serde(rename = "jackknife+")]
    JackknifePlus,
    None,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
    /// Extra input columns averaged over the pre-period and balanced.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    #[arg(long, value_enum, default_value_t = CovariateModeArg::Residualize)]
    pub covariate_mode: CovariateModeArg,
    #[arg(long, value_enum, default_value_t = InferenceArg::None)]
    pub inference: InferenceArg,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Output directory (created if missing).
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CvArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
    /// Penalties to evaluate; defaults to a grid scaled to the data.
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Vec<f64>,
    /// Output directory (created if missing).
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PlaceboArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    pub placebo_times: Vec<String>,
    /// Output directory (created if missing).
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DgpArg {
    Factor,
    FixedEffects,
    Ar3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleArg {
    /// 20 units, 25 of 30 periods before treatment.
    Desk,
    /// 50 units, 89 of 105 periods before treatment.
    Full,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = DgpArg::Factor)]
    pub dgp: DgpArg,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ScaleArg::Desk)]
    pub scale: ScaleArg,
    /// Multiplies the noise standard deviation.
    #[arg(long, default_value_t = 1.0)]
    pub noise_multiplier: f64,
    /// Selection strength; defaults to the calibrated value for the design.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Also report results by quartile of the SCM pre-period fit.
    #[arg(long)]
    pub stratify: bool,
    /// Write every replication's estimates to mc_raw.csv.
    #[arg(long)]
    pub raw: bool,
    /// Output directory (created if missing).
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    /// Penalty for the identity checks; cross-validated when omitted.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Noise levels in units of the treated unit's pre-period spread.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0, 2.0, 4.0])]
    pub sigma: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    pub factors: usize,
    #[arg(long, default_value_t = 1.0)]
    pub factor_bound: f64,
    /// Output directory (created if missing).
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}
