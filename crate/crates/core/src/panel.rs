//! Panel ingestion and the treated/control, pre/post block layout.
//!
//! A [`PanelData`] is a dense `N × T` outcome matrix with exactly one treated
//! unit and a count `t0` of pre-treatment periods. [`split_and_center`] cuts
//! it into the four blocks every estimator works with:
//!
//! ```text
//!   [ x1ᵀ | y1_post ]     treated row
//!   [ x0  | y0_post ]     N0 control rows
//! ```
//!
//! Long-format CSV (`unit,time,outcome`, extra columns allowed) is the
//! canonical input. Time labels sort numerically when every label parses as a
//! number and lexicographically otherwise.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;

/// Dense panel with a single treated unit.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    outcomes: DMatrix<f64>,
    unit_ids: Vec<String>,
    time_ids: Vec<String>,
    treated_index: usize,
    t0: usize,
}

impl PanelData {
    pub fn new(
        outcomes: DMatrix<f64>,
        unit_ids: Vec<String>,
        time_ids: Vec<String>,
        treated_index: usize,
        t0: usize,
    ) -> Result<Self> {
        let (n, t) = outcomes.shape();
        if unit_ids.len() != n || time_ids.len() != t {
            return Err(Error::Dimension(format!(
                "outcome matrix is {n}×{t} but got {} unit ids and {} time ids",
                unit_ids.len(),
                time_ids.len()
            )));
        }
        if n < 3 {
            return Err(Error::InvalidPanel(format!("need at least 3 units (one treated, two donors), got {n}")));
        }
        if treated_index >= n {
            return Err(Error::InvalidPanel(format!("treated index {treated_index} out of range for {n} units")));
        }
        if t0 < 2 || t0 >= t {
            return Err(Error::TooFewPeriods(format!("need 2 <= T0 < T, got T0={t0}, T={t}")));
        }
        if let Some((i, j)) = first_non_finite(&outcomes) {
            return Err(Error::MissingCell { unit: unit_ids[i].clone(), time: time_ids[j].clone() });
        }
        let order = TimeOrder::infer(time_ids.iter().map(String::as_str));
        if time_ids.windows(2).any(|w| order.cmp(&w[0], &w[1]) != Ordering::Less) {
            return Err(Error::InvalidPanel("time ids must be strictly increasing".into()));
        }
        Ok(Self { outcomes, unit_ids, time_ids, treated_index, t0 })
    }

    pub fn outcomes(&self) -> &DMatrix<f64> {
        &self.outcomes
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn time_ids(&self) -> &[String] {
        &self.time_ids
    }

    pub fn treated_index(&self) -> usize {
        self.treated_index
    }

    pub fn treated_label(&self) -> &str {
        &self.unit_ids[self.treated_index]
    }

    pub fn t0(&self) -> usize {
        self.t0
    }

    pub fn n_units(&self) -> usize {
        self.outcomes.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.outcomes.ncols()
    }

    pub fn n_post(&self) -> usize {
        self.n_periods() - self.t0
    }

    /// Indices of the donor units in panel order.
    pub fn donor_indices(&self) -> Vec<usize> {
        (0..self.n_units()).filter(|&i| i != self.treated_index).collect()
    }

    pub fn donor_ids(&self) -> Vec<String> {
        self.donor_indices().into_iter().map(|i| self.unit_ids[i].clone()).collect()
    }

    /// Same units and times with a different pre/post split.
    pub fn with_t0(&self, t0: usize) -> Result<Self> {
        Self::new(self.outcomes.clone(), self.unit_ids.clone(), self.time_ids.clone(), self.treated_index, t0)
    }

    /// Keep only the first `t` periods.
    pub fn truncate_periods(&self, t: usize, t0: usize) -> Result<Self> {
        if t > self.n_periods() {
            return Err(Error::Dimension(format!("cannot keep {t} of {} periods", self.n_periods())));
        }
        Self::new(
            self.outcomes.columns(0, t).into_owned(),
            self.unit_ids.clone(),
            self.time_ids[..t].to_vec(),
            self.treated_index,
            t0,
        )
    }

    /// Long-format rows `(unit, time, outcome)` in canonical order (units as
    /// stored, times ascending).
    pub fn to_long(&self) -> Vec<(String, String, f64)> {
        let mut rows = Vec::with_capacity(self.outcomes.len());
        for (i, unit) in self.unit_ids.iter().enumerate() {
            for (j, time) in self.time_ids.iter().enumerate() {
                rows.push((unit.clone(), time.clone(), self.outcomes[(i, j)]));
            }
        }
        rows
    }

    pub fn write_long_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["unit", "time", "outcome"])?;
        for (unit, time, y) in self.to_long() {
            w.write_record([unit, time, fmt_f64(y)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn manifest(&self) -> PanelManifest {
        PanelManifest {
            unit_ids: self.unit_ids.clone(),
            time_ids: self.time_ids.clone(),
            treated_index: self.treated_index,
            t0: self.t0,
        }
    }

    /// Dense matrix as CSV: header `unit,<time ids...>`, one row per unit.
    pub fn write_dense_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["unit".to_string()];
        header.extend(self.time_ids.iter().cloned());
        w.write_record(&header)?;
        for (i, unit) in self.unit_ids.iter().enumerate() {
            let mut rec = vec![unit.clone()];
            rec.extend(self.outcomes.row(i).iter().map(|&v| fmt_f64(v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Rebuild from a manifest plus the dense CSV written by [`write_dense_csv`](Self::write_dense_csv).
    pub fn from_manifest<R: Read>(manifest: &PanelManifest, dense: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(dense);
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .skip(1)
                .map(|s| s.parse::<f64>().map_err(|_| Error::InvalidPanel(format!("non-numeric cell `{s}`"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(vals);
        }
        let n = rows.len();
        let t = manifest.time_ids.len();
        if rows.iter().any(|r| r.len() != t) {
            return Err(Error::Dimension("dense CSV width does not match manifest".into()));
        }
        let outcomes = DMatrix::from_fn(n, t, |i, j| rows[i][j]);
        Self::new(outcomes, manifest.unit_ids.clone(), manifest.time_ids.clone(), manifest.treated_index, manifest.t0)
    }
}

fn first_non_finite(m: &DMatrix<f64>) -> Option<(usize, usize)> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Some((i, j));
            }
        }
    }
    None
}

/// JSON-serializable description of a panel's layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelManifest {
    pub unit_ids: Vec<String>,
    pub time_ids: Vec<String>,
    pub treated_index: usize,
    pub t0: usize,
}

/// How time labels are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeOrder {
    Numeric,
    Lexical,
}

impl TimeOrder {
    pub fn infer<'a>(labels: impl IntoIterator<Item = &'a str>) -> Self {
        if labels.into_iter().all(|s| s.trim().parse::<f64>().is_ok()) {
            TimeOrder::Numeric
        } else {
            TimeOrder::Lexical
        }
    }

    pub fn cmp(self, a: &str, b: &str) -> Ordering {
        match self {
            TimeOrder::Numeric => {
                let (x, y) = (a.trim().parse::<f64>(), b.trim().parse::<f64>());
                match (x, y) {
                    (Ok(x), Ok(y)) => x.total_cmp(&y),
                    _ => a.cmp(b),
                }
            }
            TimeOrder::Lexical => a.cmp(b),
        }
    }
}

/// Long-format table: required `unit`, `time`, `outcome` columns plus any
/// extra numeric columns (used for covariates).
#[derive(Debug, Clone)]
pub struct LongTable {
    pub columns: Vec<String>,
    pub rows: Vec<LongRow>,
}

#[derive(Debug, Clone)]
pub struct LongRow {
    pub unit: String,
    pub time: String,
    /// `None` when the cell is empty or `NA`.
    pub values: Vec<Option<f64>>,
}

impl LongTable {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| headers.iter().position(|h| h == name);
        let (ui, ti, oi) = match (find("unit"), find("time"), find("outcome")) {
            (Some(u), Some(t), Some(o)) => (u, t, o),
            _ => return Err(Error::InvalidPanel("input must have columns `unit`, `time`, `outcome`".into())),
        };
        let mut columns = vec!["outcome".to_string()];
        let extra: Vec<usize> = (0..headers.len()).filter(|&c| c != ui && c != ti && c != oi).collect();
        columns.extend(extra.iter().map(|&c| headers[c].to_string()));

        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |c: usize| -> Result<Option<f64>> {
                let s = rec.get(c).unwrap_or("");
                if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
                    return Ok(None);
                }
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|_| Error::InvalidPanel(format!("non-numeric value `{s}` in column `{}`", &headers[c])))
            };
            let mut values = vec![parse(oi)?];
            for &c in &extra {
                values.push(parse(c)?);
            }
            rows.push(LongRow { unit: rec[ui].to_string(), time: rec[ti].to_string(), values });
        }
        Ok(Self { columns, rows })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Pivot one column into a dense `units × times` grid (sorted labels).
    /// Duplicates and gaps are rejected.
    pub fn pivot(&self, column: usize) -> Result<Pivot> {
        let order = TimeOrder::infer(self.rows.iter().map(|r| r.time.as_str()));
        let mut units: Vec<String> = self.rows.iter().map(|r| r.unit.clone()).collect();
        units.sort();
        units.dedup();
        let mut times: Vec<String> = self.rows.iter().map(|r| r.time.clone()).collect();
        times.sort_by(|a, b| order.cmp(a, b));
        times.dedup_by(|a, b| order.cmp(a, b) == Ordering::Equal);
        let unit_pos: HashMap<&str, usize> = units.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
        let time_pos: BTreeMap<&str, usize> = times.iter().enumerate().map(|(j, t)| (t.as_str(), j)).collect();

        let mut cells: Vec<Option<Option<f64>>> = vec![None; units.len() * times.len()];
        for row in &self.rows {
            let i = unit_pos[row.unit.as_str()];
            let j = match time_pos.get(row.time.as_str()) {
                Some(&j) => j,
                // numerically equal but differently spelled label, e.g. "1" vs "1.0"
                None => times.iter().position(|t| order.cmp(t, &row.time) == Ordering::Equal).unwrap(),
            };
            let slot = &mut cells[i * times.len() + j];
            if slot.is_some() {
                return Err(Error::DuplicateCell { unit: row.unit.clone(), time: row.time.clone() });
            }
            *slot = Some(row.values[column]);
        }
        let mut values = DMatrix::zeros(units.len(), times.len());
        for i in 0..units.len() {
            for j in 0..times.len() {
                match cells[i * times.len() + j] {
                    Some(Some(v)) => values[(i, j)] = v,
                    _ => {
                        return Err(Error::MissingCell { unit: units[i].clone(), time: times[j].clone() })
                    }
                }
            }
        }
        Ok(Pivot { units, times, order, values })
    }
}

/// Dense pivot of a long table.
#[derive(Debug, Clone)]
pub struct Pivot {
    pub units: Vec<String>,
    pub times: Vec<String>,
    pub order: TimeOrder,
    pub values: DMatrix<f64>,
}

/// Read a long-format CSV stream and build a validated panel.
///
/// `T0` is the number of observed periods strictly before `treatment_time`.
pub fn load_panel<R: Read>(source: R, treated_label: &str, treatment_time: &str) -> Result<PanelData> {
    let table = LongTable::from_reader(source)?;
    panel_from_table(&table, treated_label, treatment_time)
}

pub fn load_panel_path(path: impl AsRef<Path>, treated_label: &str, treatment_time: &str) -> Result<PanelData> {
    let f = std::fs::File::open(path)?;
    load_panel(std::io::BufReader::new(f), treated_label, treatment_time)
}

pub fn panel_from_table(table: &LongTable, treated_label: &str, treatment_time: &str) -> Result<PanelData> {
    let pivot = table.pivot(0)?;
    let treated_index = pivot
        .units
        .iter()
        .position(|u| u == treated_label)
        .ok_or_else(|| Error::UnknownTreated(treated_label.to_string()))?;
    let t0 = pre_period_count(&pivot.times, pivot.order, treatment_time)?;
    PanelData::new(pivot.values, pivot.units, pivot.times, treated_index, t0)
}

/// Number of labels strictly before `treatment_time`; the treatment time must
/// lie after the first label and no later than the last.
pub fn pre_period_count(times: &[String], order: TimeOrder, treatment_time: &str) -> Result<usize> {
    let first = times.first().ok_or_else(|| Error::InvalidPanel("panel has no periods".into()))?;
    let last = times.last().unwrap();
    // A non-numeric treatment label forces lexical comparison.
    let order = if order == TimeOrder::Numeric && treatment_time.trim().parse::<f64>().is_err() {
        TimeOrder::Lexical
    } else {
        order
    };
    if order.cmp(treatment_time, first) != Ordering::Greater || order.cmp(treatment_time, last) == Ordering::Greater {
        return Err(Error::TreatmentTimeOutOfRange {
            time: treatment_time.to_string(),
            first: first.clone(),
            last: last.clone(),
        });
    }
    Ok(times.iter().filter(|t| order.cmp(t, treatment_time) == Ordering::Less).count())
}

/// The four blocks of the panel, optionally centered by control column means.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelBlocks {
    /// Treated pre-period outcomes (length T0).
    pub x1: DVector<f64>,
    /// Control pre-period outcomes (N0 × T0).
    pub x0: DMatrix<f64>,
    /// Control post-period outcomes (N0 × (T − T0)); never centered.
    pub y0_post: DMatrix<f64>,
    /// Treated post-period outcomes; never centered.
    pub y1_post: DVector<f64>,
    /// Control column means subtracted from `x1` and `x0` (zero if uncentered).
    pub centering: DVector<f64>,
    pub donor_ids: Vec<String>,
}

impl PanelBlocks {
    /// Build blocks directly from matrices (uncentered).
    pub fn from_parts(
        x1: DVector<f64>,
        x0: DMatrix<f64>,
        y1_post: DVector<f64>,
        y0_post: DMatrix<f64>,
    ) -> Result<Self> {
        let (n0, t0) = x0.shape();
        if x1.len() != t0 || y0_post.nrows() != n0 || y1_post.len() != y0_post.ncols() {
            return Err(Error::Dimension(format!(
                "x1 {} / x0 {n0}×{t0} / y1_post {} / y0_post {}×{}",
                x1.len(),
                y1_post.len(),
                y0_post.nrows(),
                y0_post.ncols()
            )));
        }
        if n0 < 2 {
            return Err(Error::InvalidPanel("need at least two donor units".into()));
        }
        if x1.iter().chain(x0.iter()).chain(y1_post.iter()).chain(y0_post.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidPanel("blocks must be finite".into()));
        }
        let donor_ids = (0..n0).map(|i| format!("donor{}", i + 1)).collect();
        Ok(Self { x1, x0, y0_post, y1_post, centering: DVector::zeros(t0), donor_ids })
    }

    pub fn n0(&self) -> usize {
        self.x0.nrows()
    }

    pub fn t0(&self) -> usize {
        self.x0.ncols()
    }

    pub fn n_post(&self) -> usize {
        self.y1_post.len()
    }

    /// Whether `x0` has (numerically) zero column means.
    pub fn is_centered(&self) -> bool {
        max_abs_column_mean(&self.x0) <= 1e-10 * (1.0 + self.x0.amax())
    }

    /// Subtract control column means from `x1` and `x0`; already-centered
    /// blocks are returned unchanged apart from accumulating the shift.
    pub fn centered(&self) -> Self {
        let means = column_means(&self.x0);
        let mut out = self.clone();
        for (j, m) in means.iter().enumerate() {
            out.x0.column_mut(j).add_scalar_mut(-m);
            out.x1[j] -= m;
        }
        out.centering += means;
        out
    }

    /// Undo the centering shift on the pre-period blocks.
    pub fn uncentered(&self) -> Self {
        let mut out = self.clone();
        for (j, m) in self.centering.iter().enumerate() {
            out.x0.column_mut(j).add_scalar_mut(*m);
            out.x1[j] += m;
        }
        out.centering.fill(0.0);
        out
    }

    /// Treated row stacked over control rows, pre and post, uncentered.
    pub fn full_matrix(&self) -> DMatrix<f64> {
        let raw = self.uncentered();
        let (n0, t0, p) = (self.n0(), self.t0(), self.n_post());
        DMatrix::from_fn(n0 + 1, t0 + p, |i, j| match (i, j < t0) {
            (0, true) => raw.x1[j],
            (0, false) => raw.y1_post[j - t0],
            (_, true) => raw.x0[(i - 1, j)],
            (_, false) => raw.y0_post[(i - 1, j - t0)],
        })
    }

    /// Sample standard deviation of the treated pre-period block as stored
    /// (after centering, if the blocks are centered).
    pub fn treated_pre_sd(&self) -> f64 {
        let x = &self.x1;
        let n = x.len() as f64;
        let m = x.mean();
        (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    }

    /// Every outcome multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            x1: &self.x1 * c,
            x0: &self.x0 * c,
            y0_post: &self.y0_post * c,
            y1_post: &self.y1_post * c,
            centering: &self.centering * c,
            donor_ids: self.donor_ids.clone(),
        }
    }

    /// Keep a subset of pre-period columns (in the given order).
    pub fn select_pre(&self, cols: &[usize]) -> Self {
        let x0 = self.x0.select_columns(cols);
        let x1 = DVector::from_iterator(cols.len(), cols.iter().map(|&c| self.x1[c]));
        let centering = DVector::from_iterator(cols.len(), cols.iter().map(|&c| self.centering[c]));
        Self { x1, x0, centering, ..self.clone() }
    }
}

pub(crate) fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

pub(crate) fn max_abs_column_mean(m: &DMatrix<f64>) -> f64 {
    column_means(m).amax()
}

/// Cut a panel into treated/control × pre/post blocks.
pub fn split_and_center(p: &PanelData, center: bool) -> PanelBlocks {
    let donors = p.donor_indices();
    let (t, t0) = (p.n_periods(), p.t0());
    let y = p.outcomes();
    let tr = p.treated_index();
    let blocks = PanelBlocks {
        x1: DVector::from_fn(t0, |j, _| y[(tr, j)]),
        x0: DMatrix::from_fn(donors.len(), t0, |i, j| y[(donors[i], j)]),
        y0_post: DMatrix::from_fn(donors.len(), t - t0, |i, j| y[(donors[i], t0 + j)]),
        y1_post: DVector::from_fn(t - t0, |j, _| y[(tr, t0 + j)]),
        centering: DVector::zeros(t0),
        donor_ids: p.donor_ids(),
    };
    if center {
        blocks.centered()
    } else {
        blocks
    }
}
