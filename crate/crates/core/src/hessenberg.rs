//! The projected least-squares problem `min_y ‖H̄ₖ y − β e₁‖`.
//!
//! [`HessenbergFactor`] keeps the raw upper Hessenberg columns together with an incremental
//! Givens QR factorization `Ωₖ H̄ₖ = [Rₖ; 0]`, `Ωₖ β e₁ = [zₖ; ρ]`. The update coefficients come
//! from `Rₖ y = zₖ`, solved under one of three [`LsqMode`]s, and `|ρ|` is the implicit residual.

use nalgebra::{DMatrix, DVector, SVD};
use thiserror::Error;

pub const DEFAULT_TRUNCATION_TOL: f64 = 1e-12;

const SVD_MAX_ITERS: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum LsqError {
    #[error("column has {got} entries, expected {expected}")]
    ColumnLength { expected: usize, got: usize },
    #[error("non-finite Hessenberg entry {value} at row {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("no columns absorbed")]
    Empty,
    #[error("truncation tolerance {0} outside [0, 1)")]
    BadTolerance(f64),
    #[error("dimension mismatch: R is {rows}x{cols}, rhs has {rhs} entries")]
    Dimension { rows: usize, cols: usize, rhs: usize },
    #[error("singular value decomposition did not converge")]
    SvdFailed,
}

/// How to solve the triangular system `Rₖ y = zₖ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsqMode {
    /// Back substitution.
    Standard,
    /// Back substitution, redone with the truncated SVD only when the result is non-finite.
    /// This hides the Inf/NaN signal without bounding the error; prefer the other two.
    FallbackOnNonFinite,
    /// Minimum-norm solve through a truncated SVD.
    AlwaysRankRevealing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsqPolicy {
    pub mode: LsqMode,
    /// Singular values below `truncation_tol · σ_max` are dropped.
    pub truncation_tol: f64,
}

impl LsqPolicy {
    pub fn new(mode: LsqMode, truncation_tol: f64) -> Result<Self, LsqError> {
        if !(0.0..1.0).contains(&truncation_tol) {
            return Err(LsqError::BadTolerance(truncation_tol));
        }
        Ok(Self { mode, truncation_tol })
    }

    pub fn standard() -> Self {
        Self { mode: LsqMode::Standard, truncation_tol: DEFAULT_TRUNCATION_TOL }
    }

    pub fn rank_revealing() -> Self {
        Self { mode: LsqMode::AlwaysRankRevealing, truncation_tol: DEFAULT_TRUNCATION_TOL }
    }
}

impl Default for LsqPolicy {
    fn default() -> Self {
        Self::standard()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankReport {
    pub numerical_rank: usize,
    pub dimension: usize,
    pub sigma_max: f64,
    /// Smallest singular value that survived truncation; 0 when none did.
    pub sigma_min_kept: f64,
}

impl RankReport {
    pub fn full_rank(&self) -> bool {
        self.numerical_rank == self.dimension
    }
}

/// A plane rotation `[c s; −s c]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Givens {
    pub c: f64,
    pub s: f64,
}

impl Givens {
    /// Rotation mapping `(a, b)` to `(r, 0)` with `r = hypot(a, b) ≥ 0`.
    pub fn annihilating(a: f64, b: f64) -> (Self, f64) {
        let r = a.hypot(b);
        if r == 0.0 {
            (Self { c: 1.0, s: 0.0 }, 0.0)
        } else {
            (Self { c: a / r, s: b / r }, r)
        }
    }

    pub fn apply(&self, a: f64, b: f64) -> (f64, f64) {
        (self.c * a + self.s * b, -self.s * a + self.c * b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HessenbergFactor {
    beta: f64,
    h_columns: Vec<Vec<f64>>,
    givens: Vec<Givens>,
    r_columns: Vec<Vec<f64>>,
    g_rhs: Vec<f64>,
}

impl HessenbergFactor {
    pub fn new(beta: f64) -> Self {
        Self { beta, h_columns: Vec::new(), givens: Vec::new(), r_columns: Vec::new(), g_rhs: vec![beta] }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn ncols(&self) -> usize {
        self.h_columns.len()
    }

    pub fn h_columns(&self) -> &[Vec<f64>] {
        &self.h_columns
    }

    pub fn givens(&self) -> &[Givens] {
        &self.givens
    }

    /// Transformed right-hand side `[zₖ; ρ]`.
    pub fn g_rhs(&self) -> &[f64] {
        &self.g_rhs
    }

    /// Entry `h_{i,j}` of H̄ (0-based); zero below the subdiagonal.
    pub fn h(&self, i: usize, j: usize) -> f64 {
        self.h_columns[j].get(i).copied().unwrap_or(0.0)
    }

    /// Appends column `k` of H̄ (which must have `k + 2` entries) and extends the QR factorization.
    pub fn absorb_column(&mut self, col: &[f64]) -> Result<(), LsqError> {
        let k = self.ncols();
        if col.len() != k + 2 {
            return Err(LsqError::ColumnLength { expected: k + 2, got: col.len() });
        }
        if let Some((index, &value)) = col.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(LsqError::NonFinite { index, value });
        }
        let mut work = col.to_vec();
        for (i, rot) in self.givens.iter().enumerate() {
            let (a, b) = rot.apply(work[i], work[i + 1]);
            work[i] = a;
            work[i + 1] = b;
        }
        let (rot, r) = Givens::annihilating(work[k], work[k + 1]);
        work[k] = r;
        work.truncate(k + 1);

        let (gk, gk1) = rot.apply(self.g_rhs[k], 0.0);
        self.g_rhs[k] = gk;
        self.g_rhs.push(gk1);

        self.givens.push(rot);
        self.r_columns.push(work);
        self.h_columns.push(col.to_vec());
        Ok(())
    }

    /// `min_y ‖H̄ₖ y − β e₁‖`, read off the last transformed rhs entry.
    pub fn residual_norm(&self) -> f64 {
        self.g_rhs.last().copied().unwrap_or(self.beta).abs()
    }

    /// `Rₖ` as a dense k×k matrix.
    pub fn r_matrix(&self) -> DMatrix<f64> {
        let k = self.ncols();
        DMatrix::from_fn(k, k, |i, j| if i <= j { self.r_columns[j][i] } else { 0.0 })
    }

    /// Raw H̄ₖ as a dense (k+1)×k matrix.
    pub fn h_matrix(&self) -> DMatrix<f64> {
        let k = self.ncols();
        DMatrix::from_fn(k + 1, k, |i, j| self.h(i, j))
    }

    pub fn solve_update(&self, policy: &LsqPolicy) -> Result<(Vec<f64>, RankReport), LsqError> {
        let k = self.ncols();
        if k == 0 {
            return Err(LsqError::Empty);
        }
        solve_triangular_system(&self.r_matrix(), &self.g_rhs[..k], policy)
    }

    /// Residual `‖H̄ₖ y − β e₁‖` of an arbitrary coefficient vector, via the stored rotations.
    pub fn residual_of(&self, y: &[f64]) -> f64 {
        let k = self.ncols();
        let mut sq = self.g_rhs[k] * self.g_rhs[k];
        for i in 0..k {
            let ry: f64 = (i..k).map(|j| self.r_columns[j][i] * y[j]).sum();
            let d = ry - self.g_rhs[i];
            sq += d * d;
        }
        sq.sqrt()
    }

    /// Numerical rank of the square leading block `H(1:j, 1:j)`.
    pub fn rank_of_leading_block(&self, j: usize, tol: f64) -> Result<RankReport, LsqError> {
        assert!(j <= self.ncols(), "leading block {j} exceeds {} columns", self.ncols());
        let block = DMatrix::from_fn(j, j, |r, c| self.h(r, c));
        numerical_rank(&block, tol)
    }
}

fn svd_of(m: &DMatrix<f64>) -> Result<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>, LsqError> {
    SVD::try_new(m.clone(), true, true, f64::EPSILON, SVD_MAX_ITERS).ok_or(LsqError::SvdFailed)
}

fn report_from(sv: &DVector<f64>, tol: f64) -> RankReport {
    let sigma_max = sv.iter().copied().fold(0.0, f64::max);
    let kept: Vec<f64> = sv.iter().copied().filter(|&s| s > 0.0 && s >= tol * sigma_max).collect();
    RankReport {
        numerical_rank: kept.len(),
        dimension: sv.len(),
        sigma_max,
        sigma_min_kept: kept.iter().copied().reduce(f64::min).unwrap_or(0.0),
    }
}

/// Counts singular values `σᵢ > 0` with `σᵢ ≥ tol · σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> Result<RankReport, LsqError> {
    if m.is_empty() {
        return Ok(RankReport { numerical_rank: 0, dimension: 0, sigma_max: 0.0, sigma_min_kept: 0.0 });
    }
    Ok(report_from(&svd_of(m)?.singular_values, tol))
}

fn back_substitute(r: &DMatrix<f64>, z: &[f64]) -> Vec<f64> {
    let k = z.len();
    let mut y = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = ((i + 1)..k).map(|j| r[(i, j)] * y[j]).sum();
        y[i] = (z[i] - s) / r[(i, i)];
    }
    y
}

fn truncated_svd_solve(r: &DMatrix<f64>, z: &[f64], tol: f64) -> Result<(Vec<f64>, RankReport), LsqError> {
    let svd = svd_of(r)?;
    let report = report_from(&svd.singular_values, tol);
    let u = svd.u.as_ref().ok_or(LsqError::SvdFailed)?;
    let v_t = svd.v_t.as_ref().ok_or(LsqError::SvdFailed)?;
    let zv = DVector::from_column_slice(z);
    let mut y = DVector::zeros(r.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > 0.0 && s >= tol * report.sigma_max {
            let coeff = u.column(i).dot(&zv) / s;
            y += v_t.row(i).transpose() * coeff;
        }
    }
    Ok((y.as_slice().to_vec(), report))
}

/// Solves the upper triangular `R y = z` under `policy`, returning the rank view of `R`.
pub fn solve_triangular_system(
    r: &DMatrix<f64>,
    z: &[f64],
    policy: &LsqPolicy,
) -> Result<(Vec<f64>, RankReport), LsqError> {
    if r.nrows() != r.ncols() || r.nrows() != z.len() {
        return Err(LsqError::Dimension { rows: r.nrows(), cols: r.ncols(), rhs: z.len() });
    }
    if z.is_empty() {
        return Err(LsqError::Empty);
    }
    let tol = policy.truncation_tol;
    match policy.mode {
        LsqMode::Standard => {
            let y = back_substitute(r, z);
            let report = numerical_rank(r, tol)?;
            Ok((y, report))
        }
        LsqMode::FallbackOnNonFinite => {
            let y = back_substitute(r, z);
            if y.iter().all(|v| v.is_finite()) {
                Ok((y, numerical_rank(r, tol)?))
            } else {
                truncated_svd_solve(r, z, tol)
            }
        }
        LsqMode::AlwaysRankRevealing => truncated_svd_solve(r, z, tol),
    }
}
