//! Dense linear algebra shared by the ridge and covariate paths.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative cutoff below which a singular value counts as zero.
pub const RANK_CUTOFF: f64 = 1e-10;

/// Thin SVD of `x0 / √N0` with numerically-zero directions dropped.
///
/// `u` is `N0 × m`, `d` has the `m` retained singular values in descending
/// order and `v` is `T0 × m`. Every shifted solve against `x0ᵀx0` goes
/// through this factorization, so one instance can be shared across a whole
/// λ grid.
#[derive(Debug, Clone)]
pub struct ControlSvd {
    pub u: DMatrix<f64>,
    pub d: DVector<f64>,
    pub v: DMatrix<f64>,
    pub rank: usize,
    pub n0: usize,
    pub t0: usize,
}

impl ControlSvd {
    /// # Panics
    ///
    /// If `x0` contains non-finite entries.
    pub fn new(x0: &DMatrix<f64>) -> Self {
        let (n0, t0) = x0.shape();
        let full = thin_svd(&(x0 / (n0 as f64).sqrt())).expect("SVD of a finite control matrix");
        let d1 = full.s.get(0).copied().unwrap_or(0.0);
        let rank = full.s.iter().take_while(|&&v| d1 > 0.0 && v > RANK_CUTOFF * d1).count();
        Self {
            u: full.u.columns(0, rank).into_owned(),
            d: full.s.rows(0, rank).into_owned(),
            v: full.v.columns(0, rank).into_owned(),
            rank,
            n0,
            t0,
        }
    }

    /// Whether `x0ᵀx0` is invertible.
    pub fn full_column_rank(&self) -> bool {
        self.rank == self.t0
    }

    /// Smallest singular value over all `T0` directions (zero when the column
    /// space is not full).
    pub fn min_singular_value(&self) -> f64 {
        if self.full_column_rank() {
            self.d.iter().copied().fold(f64::INFINITY, f64::min)
        } else {
            0.0
        }
    }

    /// `(x0ᵀx0 + λ I)⁻¹ b` for a ridge penalty `λ = lambda_ridge ≥ 0`.
    pub fn solve_shifted(&self, b: &DVector<f64>, lambda_ridge: f64) -> Result<DVector<f64>> {
        if lambda_ridge < 0.0 || !lambda_ridge.is_finite() {
            return Err(Error::InvalidConfig(format!("ridge penalty must be finite and >= 0, got {lambda_ridge}")));
        }
        if lambda_ridge == 0.0 && !self.full_column_rank() {
            return Err(Error::Singular(format!(
                "x0ᵀx0 has rank {} < {} and the ridge penalty is zero",
                self.rank, self.t0
            )));
        }
        let n0 = self.n0 as f64;
        let proj = self.v.tr_mul(b);
        let scaled = DVector::from_fn(self.rank, |j, _| proj[j] / (n0 * self.d[j] * self.d[j] + lambda_ridge));
        let mut out = &self.v * scaled;
        if !self.full_column_rank() {
            let perp = b - &self.v * &proj;
            out += perp / lambda_ridge;
        }
        Ok(out)
    }

    /// Coordinates of `r` along the right singular vectors, plus the norm of
    /// the component orthogonal to them.
    pub fn rotate(&self, r: &DVector<f64>) -> (DVector<f64>, f64) {
        let rt = self.v.tr_mul(r);
        let perp = (r - &self.v * &rt).norm();
        (rt, perp)
    }

    /// `u · diag(d) · vᵀ`, i.e. `x0 / √N0` up to the rank cutoff.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.d) * self.v.transpose()
    }
}

/// Thin singular value decomposition `m = u · diag(s) · vᵀ`, singular values
/// descending.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl ThinSvd {
    /// Least-squares solve `v · diag(s⁺) · uᵀ b`, treating singular values at
    /// or below `cutoff` as zero.
    pub fn solve(&self, b: &DMatrix<f64>, cutoff: f64) -> DMatrix<f64> {
        let inv = DVector::from_iterator(self.s.len(), self.s.iter().map(|&v| if v > cutoff { 1.0 / v } else { 0.0 }));
        let mut ub = self.u.tr_mul(b);
        for (mut row, f) in ub.row_iter_mut().zip(inv.iter()) {
            row *= *f;
        }
        &self.v * ub
    }

    pub fn max(&self) -> f64 {
        self.s.get(0).copied().unwrap_or(0.0)
    }

    pub fn min(&self) -> f64 {
        self.s.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn thin_svd(m: &DMatrix<f64>) -> Result<ThinSvd> {
    let (n, t) = m.shape();
    let k = n.min(t);
    if k == 0 {
        return Ok(ThinSvd { u: DMatrix::zeros(n, 0), s: DVector::zeros(0), v: DMatrix::zeros(t, 0) });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidPanel("matrix has non-finite entries".into()));
    }
    let fm = faer::Mat::from_fn(n, t, |i, j| m[(i, j)]);
    let svd = fm.thin_svd().map_err(|e| Error::Singular(format!("SVD failed: {e:?}")))?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    Ok(ThinSvd {
        u: DMatrix::from_fn(n, k, |i, j| u[(i, j)]),
        s: DVector::from_fn(k, |j, _| s[j]),
        v: DMatrix::from_fn(t, k, |i, j| v[(i, j)]),
    })
}

/// Solve the square system `a x = b` through an SVD, rejecting numerically
/// singular systems.
pub fn solve_svd(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let svd = thin_svd(a)?;
    if !(svd.max() > 0.0) || svd.min() <= RANK_CUTOFF * svd.max() {
        return Err(Error::Singular(format!("{what} is numerically singular")));
    }
    let x = svd.solve(&DMatrix::from_column_slice(b.len(), 1, b.as_slice()), 0.0);
    Ok(x.column(0).into_owned())
}

/// Dense `(aᵀa)⁻¹ aᵀ B` for a full-column-rank `a`.
pub fn least_squares(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let svd = thin_svd(a)?;
    if a.ncols() > a.nrows() || !(svd.max() > 0.0) || svd.min() <= RANK_CUTOFF * svd.max() {
        return Err(Error::Singular(format!("{what} is rank deficient")));
    }
    Ok(svd.solve(b, 0.0))
}
