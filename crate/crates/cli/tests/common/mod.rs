#![allow(dead_code)]

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use panelctrl_core::sim::{draw_panel, Dgp, DgpKind};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn panelctrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_panelctrl"))
        .args(args)
        .env_remove("PANELCTRL_LOG")
        .output()
        .expect("binary runs")
}

/// Run and insist on exit status 0.
pub fn ok(args: &[&str]) -> Output {
    let out = panelctrl(args);
    assert!(
        out.status.success(),
        "panelctrl {args:?} exited with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// A 12-unit, 20-period factor-model panel (15 pre-periods) written as a
/// long CSV; returns the path, the treated label and the treatment time.
pub fn factor_panel_csv(dir: &Path) -> (PathBuf, String, String) {
    let p = draw_panel(&Dgp::calibrated(DgpKind::Factor), 12, 20, 15, 3).unwrap();
    let path = dir.join("panel.csv");
    p.write_long_csv(File::create(&path).unwrap()).unwrap();
    (path, p.treated_label().to_string(), p.time_ids()[p.t0()].clone())
}

pub fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records().map(|r| r.unwrap().iter().map(str::to_string).collect()).collect()
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_reader(File::open(path).unwrap()).unwrap()
}
