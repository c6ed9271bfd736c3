//! Penalized synthetic control weights on the simplex.
//!
//! Solves
//!
//! ```text
//!   min_γ  (x1 − x0ᵀγ)ᵀ V (x1 − x0ᵀγ) + ζ Σ f(γ_i)
//!   s.t.   Σ γ_i = 1,  γ_i ≥ 0
//! ```
//!
//! with `V` diagonal. The squared-L2 dispersion penalty is handled by an
//! accelerated projected-gradient method with function-value restarts and an
//! active-set polish step; the entropy penalty uses exponentiated-gradient
//! (mirror) steps with backtracking.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_csv};
use crate::panel::PanelBlocks;

/// Dispersion penalty `f` applied to each weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Penalty {
    #[default]
    SquaredL2,
    Entropy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScmConfig {
    /// Diagonal of the importance matrix `V`; `None` means the identity.
    pub importance: Option<DVector<f64>>,
    /// Dispersion penalty ζ; `None` selects `1e-8 · tr(x0 V x0ᵀ) / N0`.
    pub zeta: Option<f64>,
    pub penalty: Penalty,
    pub max_iter: usize,
    /// Target for the projected-gradient KKT residual.
    pub tol: f64,
}

impl Default for ScmConfig {
    fn default() -> Self {
        Self { importance: None, zeta: None, penalty: Penalty::SquaredL2, max_iter: 50_000, tol: 1e-10 }
    }
}

impl ScmConfig {
    pub fn with_zeta(mut self, zeta: f64) -> Self {
        self.zeta = Some(zeta);
        self
    }

    pub fn with_importance(mut self, importance: DVector<f64>) -> Self {
        self.importance = Some(importance);
        self
    }

    pub fn with_penalty(mut self, penalty: Penalty) -> Self {
        self.penalty = penalty;
        self
    }

    pub fn validate(&self, t0: usize) -> Result<()> {
        if let Some(z) = self.zeta {
            if !(z >= 0.0 && z.is_finite()) {
                return Err(Error::InvalidConfig(format!("zeta must be finite and >= 0, got {z}")));
            }
        }
        if let Some(v) = &self.importance {
            if v.len() != t0 {
                return Err(Error::Dimension(format!("importance has length {} but T0 = {t0}", v.len())));
            }
            if v.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(Error::InvalidConfig("importance entries must be finite and >= 0".into()));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be positive".into()));
        }
        Ok(())
    }

    fn importance_or_ones(&self, t0: usize) -> DVector<f64> {
        self.importance.clone().unwrap_or_else(|| DVector::from_element(t0, 1.0))
    }

    /// The ζ actually used for `x0`.
    pub fn resolved_zeta(&self, x0: &DMatrix<f64>) -> f64 {
        self.zeta.unwrap_or_else(|| {
            let v = self.importance_or_ones(x0.ncols());
            let mut tr = 0.0;
            for (j, col) in x0.column_iter().enumerate() {
                tr += v[j] * col.norm_squared();
            }
            1e-8 * tr / x0.nrows() as f64
        })
    }
}

/// Which estimator produced a weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Scm,
    Ridge,
    Augmented,
    CovariateAdjusted,
}

/// Weights over the donor units.
#[derive(Debug, Clone, PartialEq)]
pub struct DonorWeights {
    pub values: DVector<f64>,
    pub provenance: Provenance,
    /// Σγ = 1 is enforced.
    pub sum_constrained: bool,
    /// γ ≥ 0 is enforced.
    pub simplex: bool,
    pub donor_ids: Vec<String>,
}

impl DonorWeights {
    pub fn uniform(n0: usize, donor_ids: Vec<String>, provenance: Provenance) -> Self {
        Self {
            values: DVector::from_element(n0, 1.0 / n0 as f64),
            provenance,
            sum_constrained: true,
            simplex: true,
            donor_ids,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Check the flag-implied constraints.
    pub fn check_invariants(&self) -> Result<()> {
        if self.sum_constrained && (self.values.sum() - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidConfig(format!("weights sum to {} instead of 1", self.values.sum())));
        }
        if self.simplex && self.values.min() < -1e-12 {
            return Err(Error::InvalidConfig(format!("negative simplex weight {}", self.values.min())));
        }
        Ok(())
    }

    /// Weighted average of the rows of `m` (`mᵀγ`).
    pub fn apply(&self, m: &DMatrix<f64>) -> DVector<f64> {
        m.tr_mul(&self.values)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_csv(
            writer,
            &["unit", "weight"],
            self.donor_ids.iter().zip(self.values.iter()).map(|(u, w)| vec![u.clone(), fmt_f64(*w)]),
        )
    }

    pub fn to_record(&self) -> WeightsRecord {
        WeightsRecord {
            provenance: self.provenance,
            sum_constrained: self.sum_constrained,
            simplex: self.simplex,
            weights: self
                .donor_ids
                .iter()
                .zip(self.values.iter())
                .map(|(u, &w)| UnitWeight { unit: u.clone(), weight: w })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsRecord {
    pub provenance: Provenance,
    pub sum_constrained: bool,
    pub simplex: bool,
    pub weights: Vec<UnitWeight>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitWeight {
    pub unit: String,
    pub weight: f64,
}

/// Solver output with convergence diagnostics.
#[derive(Debug, Clone)]
pub struct ScmFit {
    pub weights: DonorWeights,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub zeta: f64,
    /// Objective value after every accepted iterate.
    pub trace: Vec<f64>,
}

/// Solve for SCM weights starting from uniform weights.
pub fn solve_scm(blocks: &PanelBlocks, cfg: &ScmConfig) -> Result<DonorWeights> {
    solve_scm_detailed(blocks, cfg, None).map(|f| f.weights)
}

/// Solve for SCM weights with diagnostics and an optional feasible start.
pub fn solve_scm_detailed(blocks: &PanelBlocks, cfg: &ScmConfig, start: Option<&DVector<f64>>) -> Result<ScmFit> {
    let n0 = blocks.n0();
    let t0 = blocks.t0();
    if n0 < 2 {
        return Err(Error::InvalidPanel("SCM needs at least two donors".into()));
    }
    cfg.validate(t0)?;
    let problem = Problem::new(blocks, cfg);
    let x = match start {
        Some(s) => {
            if s.len() != n0 {
                return Err(Error::Dimension(format!("start has length {} but N0 = {n0}", s.len())));
            }
            project_simplex(s)
        }
        None => DVector::from_element(n0, 1.0 / n0 as f64),
    };
    let (values, iterations, residual, trace) = match cfg.penalty {
        Penalty::SquaredL2 => problem.accelerated_pg(x, cfg.max_iter, cfg.tol),
        Penalty::Entropy => problem.mirror_descent(x, cfg.max_iter, cfg.tol),
    };
    if residual > cfg.tol {
        return Err(Error::NonConvergence { iterations, residual });
    }
    let objective = problem.objective(&values);
    Ok(ScmFit {
        weights: DonorWeights {
            values,
            provenance: Provenance::Scm,
            sum_constrained: true,
            simplex: true,
            donor_ids: blocks.donor_ids.clone(),
        },
        objective,
        kkt_residual: residual,
        iterations,
        zeta: problem.zeta,
        trace,
    })
}

/// Weighted L2 norm of the pre-period gap `x1 − x0ᵀγ`.
pub fn imbalance(blocks: &PanelBlocks, w: &DonorWeights, importance: Option<&DVector<f64>>) -> Result<f64> {
    if w.len() != blocks.n0() {
        return Err(Error::Dimension(format!("{} weights for {} donors", w.len(), blocks.n0())));
    }
    let gap = &blocks.x1 - w.apply(&blocks.x0);
    match importance {
        None => Ok(gap.norm()),
        Some(v) => {
            if v.len() != gap.len() {
                return Err(Error::Dimension(format!("importance has length {} but T0 = {}", v.len(), gap.len())));
            }
            Ok(gap.iter().zip(v.iter()).map(|(g, vi)| vi * g * g).sum::<f64>().sqrt())
        }
    }
}

/// SCM objective and projected-gradient KKT residual at arbitrary weights.
pub fn scm_objective(blocks: &PanelBlocks, cfg: &ScmConfig, w: &DVector<f64>) -> Result<(f64, f64)> {
    cfg.validate(blocks.t0())?;
    let p = Problem::new(blocks, cfg);
    Ok((p.objective(w), p.kkt_residual(w)))
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let n = v.len();
    let mut u: Vec<f64> = v.iter().copied().collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    let mut out = DVector::from_fn(n, |i, _| (v[i] - theta).max(0.0));
    // exact renormalization keeps Σγ = 1 to the last bit we can manage
    let s = out.sum();
    if s > 0.0 {
        out /= s;
    }
    out
}

struct Problem<'a> {
    x1: &'a DVector<f64>,
    x0: &'a DMatrix<f64>,
    v: DVector<f64>,
    zeta: f64,
    penalty: Penalty,
    lipschitz: f64,
}

impl<'a> Problem<'a> {
    fn new(blocks: &'a PanelBlocks, cfg: &ScmConfig) -> Self {
        let v = cfg.importance_or_ones(blocks.t0());
        let zeta = cfg.resolved_zeta(&blocks.x0);
        // largest eigenvalue of x0 V x0ᵀ
        let scaled = DMatrix::from_fn(blocks.n0(), blocks.t0(), |i, j| blocks.x0[(i, j)] * v[j].sqrt());
        let smax = crate::linalg::thin_svd(&scaled).map(|s| s.max()).unwrap_or(0.0);
        let lipschitz = (2.0 * (smax * smax + zeta)).max(f64::MIN_POSITIVE);
        Self { x1: &blocks.x1, x0: &blocks.x0, v, zeta, penalty: cfg.penalty, lipschitz }
    }

    fn gap(&self, w: &DVector<f64>) -> DVector<f64> {
        self.x1 - self.x0.tr_mul(w)
    }

    fn objective(&self, w: &DVector<f64>) -> f64 {
        let g = self.gap(w);
        let fit: f64 = g.iter().zip(self.v.iter()).map(|(gi, vi)| vi * gi * gi).sum();
        let pen: f64 = match self.penalty {
            Penalty::SquaredL2 => w.norm_squared(),
            Penalty::Entropy => w.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum(),
        };
        fit + self.zeta * pen
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let g = self.gap(w).component_mul(&self.v);
        let mut grad = self.x0 * g * -2.0;
        match self.penalty {
            Penalty::SquaredL2 => grad += w * (2.0 * self.zeta),
            Penalty::Entropy => {
                if self.zeta > 0.0 {
                    for (gi, &wi) in grad.iter_mut().zip(w.iter()) {
                        *gi += self.zeta * (wi.max(1e-300).ln() + 1.0);
                    }
                }
            }
        }
        grad
    }

    fn kkt_residual(&self, w: &DVector<f64>) -> f64 {
        match self.penalty {
            Penalty::SquaredL2 => {
                let g = self.gradient(w);
                let stepped = project_simplex(&(w - &g / self.lipschitz));
                (w - stepped).amax() * self.lipschitz
            }
            Penalty::Entropy => {
                let g = self.gradient(w);
                let mean = w.dot(&g);
                w.iter().zip(g.iter()).map(|(wi, gi)| (wi * (gi - mean)).abs()).fold(0.0, f64::max)
            }
        }
    }

    /// FISTA with function-value restart; every accepted iterate is no worse
    /// than the previous one.
    fn accelerated_pg(&self, start: DVector<f64>, max_iter: usize, tol: f64) -> (DVector<f64>, usize, f64, Vec<f64>) {
        let step = 1.0 / self.lipschitz;
        let mut x = start;
        let mut fx = self.objective(&x);
        let mut y = x.clone();
        let mut t = 1.0_f64;
        let mut trace = vec![fx];
        let mut residual = self.kkt_residual(&x);
        if residual <= tol {
            return (x, 0, residual, trace);
        }
        for k in 1..=max_iter {
            let mut z = project_simplex(&(&y - self.gradient(&y) * step));
            let mut fz = self.objective(&z);
            if fz > fx {
                t = 1.0;
                z = project_simplex(&(&x - self.gradient(&x) * step));
                fz = self.objective(&z);
                if fz > fx {
                    // no descent possible at machine precision
                    z = x.clone();
                    fz = fx;
                }
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &z + (&z - &x) * ((t - 1.0) / t_next);
            x = z;
            fx = fz;
            t = t_next;

            if k % 25 == 0 {
                if let Some(p) = self.polish(&x) {
                    let fp = self.objective(&p);
                    if fp <= fx + 1e-14 * fx.abs().max(1e-300) {
                        x = p;
                        fx = fp;
                        y = x.clone();
                        t = 1.0;
                    }
                }
            }
            trace.push(fx);
            residual = self.kkt_residual(&x);
            if residual <= tol {
                return (x, k, residual, trace);
            }
        }
        (x, max_iter, residual, trace)
    }

    /// Minimizer on the affine hull of `support` and its multiplier, so that
    /// the gradient equals `-nu` on the support.
    fn support_solve(&self, support: &[usize]) -> Option<(DVector<f64>, f64)> {
        let s = support.len();
        let xs = self.x0.select_rows(support);
        let xv = DMatrix::from_fn(s, xs.ncols(), |i, j| xs[(i, j)] * self.v[j]);
        let mut h = &xv * xs.transpose() * 2.0;
        for i in 0..s {
            h[(i, i)] += 2.0 * self.zeta;
        }
        let c = &xv * self.x1 * 2.0;
        let ones = DVector::from_element(s, 1.0);
        let (a, b) = match h.clone().cholesky() {
            Some(ch) => (ch.solve(&c), ch.solve(&ones)),
            None => {
                let svd = crate::linalg::thin_svd(&h).ok()?;
                let eps = 1e-13 * svd.max();
                let rhs = DMatrix::from_columns(&[c.clone(), ones.clone()]);
                let sol = svd.solve(&rhs, eps);
                (sol.column(0).into_owned(), sol.column(1).into_owned())
            }
        };
        let denom = b.sum();
        if !(denom.abs() > 0.0) {
            return None;
        }
        let nu = (a.sum() - 1.0) / denom;
        let mut w = a - b * nu;
        let total = w.sum();
        if !(total > 0.0) || w.iter().any(|v| !v.is_finite()) {
            return None;
        }
        w /= total;
        Some((w, nu))
    }

    /// Primal active-set refinement started from the feasible point `x`.
    fn polish(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let n = x.len();
        let mut x = x.clone();
        let mut support: Vec<usize> = (0..n).filter(|&i| x[i] > 0.0).collect();
        for _ in 0..4 * n + 8 {
            if support.is_empty() {
                return None;
            }
            let (p, nu) = self.support_solve(&support)?;
            let blocking = support
                .iter()
                .enumerate()
                .filter(|&(k, _)| p[k] < 0.0)
                .map(|(k, &i)| (x[i] / (x[i] - p[k]), k))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            match blocking {
                Some((step, _)) => {
                    for (k, &i) in support.iter().enumerate() {
                        x[i] += step * (p[k] - x[i]);
                    }
                    let mut kept = Vec::with_capacity(support.len());
                    for (k, &i) in support.iter().enumerate() {
                        if p[k] < 0.0 && x[i] <= 1e-15 {
                            x[i] = 0.0;
                        } else {
                            kept.push(i);
                        }
                    }
                    if kept.len() == support.len() {
                        // the blocking variable is the one at the minimum ratio
                        let k = blocking.map(|b| b.1)?;
                        x[support[k]] = 0.0;
                        kept.retain(|&i| i != support[k]);
                    }
                    support = kept;
                    let total = x.sum();
                    x /= total;
                }
                None => {
                    x.fill(0.0);
                    for (k, &i) in support.iter().enumerate() {
                        x[i] = p[k];
                    }
                    let g = self.gradient(&x);
                    let scale = g.amax().max(nu.abs()).max(f64::MIN_POSITIVE);
                    let entering = (0..n)
                        .filter(|i| !support.contains(i))
                        .map(|i| (g[i] + nu, i))
                        .min_by(|a, b| a.0.total_cmp(&b.0));
                    match entering {
                        Some((v, i)) if v < -1e-12 * scale => support.push(i),
                        _ => return Some(x),
                    }
                }
            }
        }
        Some(x)
    }

    /// Exponentiated-gradient steps with Armijo-style backtracking against
    /// the KL proximity term.
    fn mirror_descent(&self, start: DVector<f64>, max_iter: usize, tol: f64) -> (DVector<f64>, usize, f64, Vec<f64>) {
        let n = start.len();
        // strictly interior start
        let mut x = project_simplex(&start).map(|v| v.max(1e-12));
        x /= x.sum();
        let mut fx = self.objective(&x);
        let mut trace = vec![fx];
        let mut eta = 1.0 / self.lipschitz;
        let mut residual = self.kkt_residual(&x);
        for k in 1..=max_iter {
            if residual <= tol {
                return (x, k - 1, residual, trace);
            }
            let g = self.gradient(&x);
            let gmin = g.min();
            let mut accepted = false;
            for _ in 0..60 {
                let mut z = DVector::from_fn(n, |i, _| x[i] * (-(g[i] - gmin) * eta).exp());
                z /= z.sum();
                let fz = self.objective(&z);
                let kl: f64 = z
                    .iter()
                    .zip(x.iter())
                    .filter(|(zi, _)| **zi > 0.0)
                    .map(|(zi, xi)| zi * (zi / xi).ln())
                    .sum();
                let model = fx + g.dot(&(&z - &x)) + kl / eta;
                if fz <= model + 1e-15 * fx.abs() && fz <= fx {
                    x = z;
                    fx = fz;
                    accepted = true;
                    eta *= 1.5;
                    break;
                }
                eta *= 0.5;
            }
            trace.push(fx);
            residual = self.kkt_residual(&x);
            if !accepted || k % 50 == 0 {
                if let Some((z, fz)) = self.entropy_newton(&x, fx, tol) {
                    x = z;
                    fx = fz;
                    trace.push(fx);
                    residual = self.kkt_residual(&x);
                } else if !accepted {
                    return (x, k, residual, trace);
                }
            }
        }
        (x, max_iter, residual, trace)
    }

    /// Damped Newton steps on the simplex, kept strictly interior. Returns
    /// the improved point when at least one step was taken.
    fn entropy_newton(&self, start: &DVector<f64>, f0: f64, tol: f64) -> Option<(DVector<f64>, f64)> {
        if self.zeta <= 0.0 {
            return None;
        }
        let n = start.len();
        let mut x = start.clone();
        let mut fx = f0;
        let mut moved = false;
        let xv = DMatrix::from_fn(n, self.v.len(), |i, j| self.x0[(i, j)] * self.v[j]);
        let base = &xv * self.x0.transpose() * 2.0;
        for _ in 0..30 {
            if self.kkt_residual(&x) <= tol {
                break;
            }
            let g = self.gradient(&x);
            let mut kkt = DMatrix::zeros(n + 1, n + 1);
            kkt.view_mut((0, 0), (n, n)).copy_from(&base);
            for i in 0..n {
                kkt[(i, i)] += self.zeta / x[i];
                kkt[(i, n)] = 1.0;
                kkt[(n, i)] = 1.0;
            }
            let mut rhs = DVector::zeros(n + 1);
            rhs.rows_mut(0, n).copy_from(&(-&g));
            let sol = kkt.lu().solve(&rhs)?;
            let d = sol.rows(0, n).into_owned();
            // largest step keeping every weight positive
            let mut step = 1.0_f64;
            for i in 0..n {
                if d[i] < 0.0 {
                    step = step.min(-0.99 * x[i] / d[i]);
                }
            }
            let mut improved = false;
            for _ in 0..40 {
                let mut z = &x + &d * step;
                z /= z.sum();
                let fz = self.objective(&z);
                if fz <= fx {
                    x = z;
                    fx = fz;
                    improved = true;
                    break;
                }
                step *= 0.5;
            }
            if !improved {
                break;
            }
            moved = true;
        }
        moved.then_some((x, fx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blocks(x1: &[f64], x0_rows: &[&[f64]]) -> PanelBlocks {
        let t0 = x1.len();
        let n0 = x0_rows.len();
        PanelBlocks::from_parts(
            DVector::from_column_slice(x1),
            DMatrix::from_fn(n0, t0, |i, j| x0_rows[i][j]),
            DVector::from_element(1, 0.0),
            DMatrix::zeros(n0, 1),
        )
        .unwrap()
    }

    #[test]
    fn symmetric_midpoint() {
        let b = blocks(&[1.0, 1.0], &[&[0.0, 0.0], &[2.0, 2.0]]);
        let w = solve_scm(&b, &ScmConfig::default().with_zeta(0.0)).unwrap();
        assert!((w.values[0] - 0.5).abs() < 1e-9 && (w.values[1] - 0.5).abs() < 1e-9);
        assert!(imbalance(&b, &w, None).unwrap() < 1e-9);
    }

    #[test]
    fn exact_vertex_fit() {
        let b = blocks(&[1.0, 3.0, -2.0], &[&[1.0, 3.0, -2.0], &[0.0, 1.0, 0.0], &[4.0, 0.0, 2.0], &[-1.0, 2.0, 5.0]]);
        let w = solve_scm(&b, &ScmConfig::default().with_zeta(1e-6)).unwrap();
        assert!((w.values[0] - 1.0).abs() < 1e-6, "{:?}", w.values);
        assert!(w.values.iter().skip(1).all(|&v| v.abs() < 1e-6));
        w.check_invariants().unwrap();
    }

    #[test]
    fn imbalance_hand_values() {
        let b = blocks(&[0.0, 1.0], &[&[0.0, 0.0], &[2.0, 0.0]]);
        let w = DonorWeights::uniform(2, b.donor_ids.clone(), Provenance::Scm);
        assert!((imbalance(&b, &w, None).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        // gap (−1, 1) under V = diag(4, 1): 4·1 + 1·1
        let v = DVector::from_vec(vec![4.0, 1.0]);
        assert!((imbalance(&b, &w, Some(&v)).unwrap() - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn projection_lands_on_simplex() {
        let p = project_simplex(&DVector::from_vec(vec![0.9, -3.0, 0.4, 2.0]));
        assert!((p.sum() - 1.0).abs() < 1e-15);
        assert!(p.min() >= 0.0);
        // already feasible points are fixed
        let q = DVector::from_vec(vec![0.2, 0.3, 0.5]);
        assert!((project_simplex(&q) - q).amax() < 1e-15);
    }

    #[test]
    fn entropy_penalty_stays_interior() {
        let b = blocks(&[1.0, 0.0], &[&[0.0, 0.0], &[2.0, 0.0], &[1.0, 1.0]]);
        let cfg = ScmConfig::default().with_zeta(0.1).with_penalty(Penalty::Entropy);
        let fit = solve_scm_detailed(&b, &cfg, None).unwrap();
        assert!(fit.weights.values.min() > 0.0);
        assert!(fit.kkt_residual <= cfg.tol);
        assert!(fit.trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn non_convergence_is_reported() {
        let b = blocks(&[5.0, -1.0, 0.3], &[&[0.0, 0.0, 1.0], &[2.0, 0.5, 0.0], &[1.0, 1.0, -1.0]]);
        let cfg = ScmConfig { max_iter: 1, tol: 1e-300, ..ScmConfig::default().with_zeta(0.0) };
        match solve_scm(&b, &cfg) {
            Err(Error::NonConvergence { residual, .. }) => assert!(residual > 0.0),
            Err(other) => panic!("unexpected error {other:?}"),
            Ok(_) => {}
        }
    }

    #[test]
    fn rejects_bad_config() {
        let b = blocks(&[1.0, 1.0], &[&[0.0, 0.0], &[2.0, 2.0]]);
        assert!(solve_scm(&b, &ScmConfig::default().with_zeta(-1.0)).is_err());
        assert!(solve_scm(&b, &ScmConfig::default().with_importance(DVector::from_vec(vec![1.0]))).is_err());
    }
}
