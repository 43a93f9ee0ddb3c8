//! Unrestarted GMRES with Modified Gram-Schmidt Arnoldi.
//!
//! Each projection coefficient passes through the fault-injection hook and then the detector
//! before it is used to update `v`; the new-vector norm `h_{j+1,j}` is checked before the
//! happy-breakdown test. A corrupted coefficient that gets through is used both in the vector
//! update and in H, so it taints the rest of the orthogonalization.

use thiserror::Error;

use crate::hessenberg::{HessenbergFactor, LsqError, LsqPolicy};
use crate::operator::LinearOperator;
use crate::sdc::{check, DetectorAction, DetectorConfig, DetectorEvent, Entry, FaultInjector, Location, Verdict};
use crate::sparse::SparseMatrix;
use crate::vector::{all_finite, axpy, combine, dot, norm2, scale};

#[derive(Debug, Error, PartialEq)]
pub enum GmresError {
    #[error("dimension mismatch: operator is {dim}x{dim}, {what} has length {got}")]
    Dimension { dim: usize, what: &'static str, got: usize },
    #[error("{0} contains non-finite entries")]
    NonFiniteInput(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Lsq(#[from] LsqError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresConfig {
    pub max_iters: usize,
    /// Relative residual target against ‖b‖; 0 runs exactly `max_iters` iterations.
    pub rtol: f64,
    /// `h_{j+1,j} ≤ happy_tol` counts as breakdown.
    pub happy_tol: f64,
    pub detector: Option<DetectorConfig>,
    pub lsq_policy: LsqPolicy,
}

impl Default for GmresConfig {
    fn default() -> Self {
        Self { max_iters: 25, rtol: 0.0, happy_tol: 0.0, detector: None, lsq_policy: LsqPolicy::standard() }
    }
}

impl GmresConfig {
    /// `happy_tol = 1e-14 · ‖A‖_F`, no detector, standard triangular solve.
    pub fn for_matrix(a: &SparseMatrix, max_iters: usize, rtol: f64) -> Self {
        Self { max_iters, rtol, happy_tol: 1e-14 * a.frobenius_norm(), ..Self::default() }
    }

    pub fn with_detector(mut self, detector: DetectorConfig) -> Self {
        self.detector = Some(detector);
        self
    }

    pub fn with_policy(mut self, policy: LsqPolicy) -> Self {
        self.lsq_policy = policy;
        self
    }

    pub fn validate(&self) -> Result<(), GmresError> {
        if self.max_iters == 0 {
            return Err(GmresError::InvalidConfig("max_iters must be at least 1".into()));
        }
        if self.rtol.is_nan() || self.rtol < 0.0 {
            return Err(GmresError::InvalidConfig(format!("rtol must be nonnegative, got {}", self.rtol)));
        }
        if self.happy_tol.is_nan() || self.happy_tol < 0.0 {
            return Err(GmresError::InvalidConfig(format!("happy_tol must be nonnegative, got {}", self.happy_tol)));
        }
        let tau = self.lsq_policy.truncation_tol;
        if !(0.0..1.0).contains(&tau) {
            return Err(GmresError::InvalidConfig(format!("truncation tolerance {tau} outside [0, 1)")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GmresStatus {
    Converged,
    MaxIters,
    HappyBreakdown,
    DetectorAbort,
    NumericalBreakdown,
    /// Flexible solves only: breakdown with a singular leading Hessenberg block.
    RankDeficient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    pub status: GmresStatus,
    /// Number of Hessenberg columns used for `x`.
    pub iterations: usize,
    /// Implicit residual norms, starting with `β`.
    pub residual_history: Vec<f64>,
    pub detector_events: Vec<DetectorEvent>,
}

/// The Arnoldi record of a solve.
#[derive(Debug, Clone, PartialEq)]
pub struct KrylovState {
    pub basis_q: Vec<Vec<f64>>,
    pub hessenberg: HessenbergFactor,
    pub beta: f64,
    pub x0: Vec<f64>,
    pub iteration: usize,
}

impl KrylovState {
    /// `x₀ + [q₁ … q_k] y` with `k = y.len()` equal to the absorbed column count.
    pub fn reconstruct_solution(&self, y: &[f64]) -> Result<Vec<f64>, GmresError> {
        let k = self.hessenberg.ncols();
        if y.len() != k {
            return Err(GmresError::Dimension { dim: k, what: "coefficient vector", got: y.len() });
        }
        Ok(combine(&self.x0, &self.basis_q[..k], y))
    }
}

pub(crate) fn check_inputs<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    x0: &[f64],
    cfg: &GmresConfig,
) -> Result<(), GmresError> {
    cfg.validate()?;
    let dim = a.dim();
    if b.len() != dim {
        return Err(GmresError::Dimension { dim, what: "b", got: b.len() });
    }
    if x0.len() != dim {
        return Err(GmresError::Dimension { dim, what: "x0", got: x0.len() });
    }
    if !all_finite(b) {
        return Err(GmresError::NonFiniteInput("b"));
    }
    if !all_finite(x0) {
        return Err(GmresError::NonFiniteInput("x0"));
    }
    Ok(())
}

pub fn gmres_solve<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    x0: &[f64],
    cfg: &GmresConfig,
    injector: Option<&mut FaultInjector>,
) -> Result<GmresOutcome, GmresError> {
    gmres_solve_with_state(a, b, x0, cfg, injector).map(|(out, _)| out)
}

/// Like [`gmres_solve`], also returning the Arnoldi record.
pub fn gmres_solve_with_state<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    x0: &[f64],
    cfg: &GmresConfig,
    injector: Option<&mut FaultInjector>,
) -> Result<(GmresOutcome, KrylovState), GmresError> {
    gmres_run(a, b, x0, cfg, injector, 1)
}

/// `solve` labels the locations reported to the injector and the detector.
pub(crate) fn gmres_run<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    x0: &[f64],
    cfg: &GmresConfig,
    mut injector: Option<&mut FaultInjector>,
    solve: usize,
) -> Result<(GmresOutcome, KrylovState), GmresError> {
    check_inputs(a, b, x0, cfg)?;
    let n = a.dim();

    let mut r0 = vec![0.0; n];
    a.apply(x0, &mut r0);
    for (ri, bi) in r0.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let beta = norm2(&r0);
    let b_norm = norm2(b);
    let stop_ref = if b_norm > 0.0 { b_norm } else { beta };

    let mut state = KrylovState {
        basis_q: Vec::with_capacity(cfg.max_iters + 1),
        hessenberg: HessenbergFactor::new(beta),
        beta,
        x0: x0.to_vec(),
        iteration: 0,
    };
    let mut history = vec![beta];
    let mut events = Vec::new();

    if beta == 0.0 {
        let out = GmresOutcome {
            x: x0.to_vec(),
            status: GmresStatus::Converged,
            iterations: 0,
            residual_history: history,
            detector_events: events,
        };
        return Ok((out, state));
    }

    scale(1.0 / beta, &mut r0);
    state.basis_q.push(r0);

    let mut status = GmresStatus::MaxIters;
    let mut v = vec![0.0; n];
    'arnoldi: for j in 1..=cfg.max_iters {
        a.apply(&state.basis_q[j - 1], &mut v);
        let mut col = vec![0.0; j + 1];

        for i in 1..=j {
            let loc = Location { solve, iteration: j, entry: Entry::Projection(i) };
            let mut h = dot(&state.basis_q[i - 1], &v);
            if let Some(inj) = injector.as_deref_mut() {
                h = inj.maybe_inject(h, loc);
            }
            if let Some(det) = &cfg.detector {
                if let Verdict::Fault(ev) = check(det, h, loc) {
                    events.push(ev);
                    if det.action != DetectorAction::ReportOnly {
                        status = GmresStatus::DetectorAbort;
                        break 'arnoldi;
                    }
                }
            }
            axpy(-h, &state.basis_q[i - 1], &mut v);
            col[i - 1] = h;
        }

        let hn = norm2(&v);
        if let Some(det) = &cfg.detector {
            let loc = Location { solve, iteration: j, entry: Entry::Norm };
            if let Verdict::Fault(ev) = check(det, hn, loc) {
                events.push(ev);
                if det.action != DetectorAction::ReportOnly {
                    status = GmresStatus::DetectorAbort;
                    break 'arnoldi;
                }
            }
        }
        col[j] = hn;

        if !all_finite(&col) {
            status = GmresStatus::NumericalBreakdown;
            break;
        }
        state.hessenberg.absorb_column(&col)?;
        state.iteration = j;
        let res = state.hessenberg.residual_norm();
        history.push(res);

        if hn <= cfg.happy_tol {
            status = GmresStatus::HappyBreakdown;
            break;
        }
        let mut q = v.clone();
        scale(1.0 / hn, &mut q);
        state.basis_q.push(q);

        if cfg.rtol > 0.0 && res <= cfg.rtol * stop_ref {
            status = GmresStatus::Converged;
            break;
        }
    }

    let k = state.hessenberg.ncols();
    let mut x = if k == 0 {
        x0.to_vec()
    } else {
        let (y, _) = state.hessenberg.solve_update(&cfg.lsq_policy)?;
        state.reconstruct_solution(&y)?
    };
    if !all_finite(&x) {
        // the sandbox promise: always hand back something finite
        status = GmresStatus::NumericalBreakdown;
        x = x0.to_vec();
    }

    let out = GmresOutcome { x, status, iterations: k, residual_history: history, detector_events: events };
    Ok((out, state))
}
