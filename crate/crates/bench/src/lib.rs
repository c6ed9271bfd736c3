//! Inputs shared by the benchmarks.

use panelctrl_core::sim::{draw_panel, Dgp, DgpKind};
use panelctrl_core::{split_and_center, PanelBlocks, PanelData};

/// Calibrated factor-model panel with `n` units and `t0` of `t` periods
/// before treatment.
pub fn factor_panel(n: usize, t: usize, t0: usize) -> PanelData {
    draw_panel(&Dgp::calibrated(DgpKind::Factor), n, t, t0, 42).expect("calibrated design draws")
}

/// Centered blocks of [`factor_panel`].
pub fn factor_blocks(n: usize, t: usize, t0: usize) -> PanelBlocks {
    split_and_center(&factor_panel(n, t, t0), true)
}

/// Desk scale: 20 units, 25 of 30 periods before treatment.
pub const DESK: (usize, usize, usize) = (20, 30, 25);

/// Application scale: 50 donors plus the treated unit, 89 of 105 periods
/// before treatment.
pub const FULL: (usize, usize, usize) = (51, 105, 89);
