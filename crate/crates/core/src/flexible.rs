//! Flexible GMRES and the nested FT-GMRES solver.
//!
//! The outer iteration is the reliable phase: it applies an arbitrary, possibly different,
//! inner solver each iteration, orthogonalizes with MGS, tracks the numerical rank of the
//! leading square Hessenberg block, and recomputes the true residual explicitly. The update
//! uses the preconditioned vectors `zⱼ`, never the outer basis `qⱼ`.
//!
//! Termination follows the trichotomy: converge to tolerance, detect an invariant subspace
//! (`h_{j+1,j} ≈ 0` with a nonsingular leading block), or fail loudly on rank deficiency.

use crate::gmres::{check_inputs, gmres_run, GmresConfig, GmresError, GmresOutcome, GmresStatus};
use crate::hessenberg::{HessenbergFactor, RankReport};
use crate::operator::LinearOperator;
use crate::sdc::{DetectorAction, DetectorEvent, FaultInjector, FiredRecord};
use crate::sparse::SparseMatrix;
use crate::vector::{all_finite, axpy, combine, dot, norm2, scale};

/// Why an inner solve returned no vector.
#[derive(Debug, PartialEq)]
pub enum InnerFailure {
    /// The inner solve asked for the whole computation to stop.
    Halted,
    Failed(GmresError),
}

/// The flexible preconditioner slot: approximately solves `A z = q` for outer iteration `outer`.
///
/// Implementations must return a finite vector of the operator's dimension in bounded time.
pub trait InnerSolver {
    fn solve(&mut self, outer: usize, q: &[f64]) -> Result<Vec<f64>, InnerFailure>;
}

impl<F: FnMut(usize, &[f64]) -> Vec<f64>> InnerSolver for F {
    fn solve(&mut self, outer: usize, q: &[f64]) -> Result<Vec<f64>, InnerFailure> {
        Ok(self(outer, q))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trichotomy {
    ConvergedToTolerance,
    InvariantSubspace,
    RankDeficientFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlexibleState {
    pub basis_q: Vec<Vec<f64>>,
    pub basis_z: Vec<Vec<f64>>,
    pub hessenberg: HessenbergFactor,
    pub beta: f64,
    pub x0: Vec<f64>,
}

impl FlexibleState {
    /// `x₀ + [z₁ … z_k] y`.
    pub fn reconstruct_solution(&self, y: &[f64]) -> Vec<f64> {
        combine(&self.x0, &self.basis_z[..y.len()], y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlexibleRun {
    /// `status` is [`GmresStatus::RankDeficient`] for the loud failure and
    /// [`GmresStatus::DetectorAbort`] when an inner solve halted the computation.
    pub outcome: GmresOutcome,
    /// `None` when the iteration budget ran out (or a halt) before any of the three outcomes.
    pub trichotomy: Option<Trichotomy>,
    /// `‖b − A xⱼ‖`, recomputed each outer iteration; entry 0 is `‖r₀‖`.
    pub explicit_residual_history: Vec<f64>,
    pub last_rank: Option<RankReport>,
}

pub fn fgmres_solve<A, S>(
    a: &A,
    b: &[f64],
    x0: &[f64],
    inner: &mut S,
    cfg: &GmresConfig,
) -> Result<(GmresOutcome, Option<Trichotomy>), GmresError>
where
    A: LinearOperator + ?Sized,
    S: InnerSolver + ?Sized,
{
    let (run, _) = fgmres_solve_with_state(a, b, x0, inner, cfg)?;
    Ok((run.outcome, run.trichotomy))
}

pub fn fgmres_solve_with_state<A, S>(
    a: &A,
    b: &[f64],
    x0: &[f64],
    inner: &mut S,
    cfg: &GmresConfig,
) -> Result<(FlexibleRun, FlexibleState), GmresError>
where
    A: LinearOperator + ?Sized,
    S: InnerSolver + ?Sized,
{
    check_inputs(a, b, x0, cfg)?;
    let n = a.dim();

    let residual = |x: &[f64]| {
        let mut r = vec![0.0; n];
        a.apply(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        r
    };
    let mut r0 = residual(x0);
    let beta = norm2(&r0);
    let b_norm = norm2(b);
    let stop_ref = if b_norm > 0.0 { b_norm } else { beta };

    let mut state = FlexibleState {
        basis_q: Vec::with_capacity(cfg.max_iters + 1),
        basis_z: Vec::with_capacity(cfg.max_iters),
        hessenberg: HessenbergFactor::new(beta),
        beta,
        x0: x0.to_vec(),
    };
    let mut history = vec![beta];
    let mut explicit = vec![beta];
    let mut x = x0.to_vec();

    if beta == 0.0 {
        let run = FlexibleRun {
            outcome: GmresOutcome {
                x,
                status: GmresStatus::Converged,
                iterations: 0,
                residual_history: history,
                detector_events: Vec::new(),
            },
            trichotomy: Some(Trichotomy::ConvergedToTolerance),
            explicit_residual_history: explicit,
            last_rank: None,
        };
        return Ok((run, state));
    }

    scale(1.0 / beta, &mut r0);
    state.basis_q.push(r0);

    let tau = cfg.lsq_policy.truncation_tol;
    let mut status = GmresStatus::MaxIters;
    let mut trichotomy = None;
    let mut last_rank = None;
    let mut v = vec![0.0; n];

    for j in 1..=cfg.max_iters {
        let z = match inner.solve(j, &state.basis_q[j - 1]) {
            Ok(z) => z,
            Err(InnerFailure::Halted) => {
                status = GmresStatus::DetectorAbort;
                break;
            }
            Err(InnerFailure::Failed(e)) => return Err(e),
        };
        if z.len() != n {
            return Err(GmresError::Dimension { dim: n, what: "inner solve result", got: z.len() });
        }
        if !all_finite(&z) {
            return Err(GmresError::NonFiniteInput("inner solve result"));
        }

        a.apply(&z, &mut v);
        let mut col = vec![0.0; j + 1];
        for i in 1..=j {
            let h = dot(&state.basis_q[i - 1], &v);
            axpy(-h, &state.basis_q[i - 1], &mut v);
            col[i - 1] = h;
        }
        let hn = norm2(&v);
        col[j] = hn;
        state.hessenberg.absorb_column(&col)?;
        state.basis_z.push(z);

        let rank = state.hessenberg.rank_of_leading_block(j, tau)?;
        last_rank = Some(rank);
        let breakdown = hn <= cfg.happy_tol;
        if !breakdown {
            let mut q = v.clone();
            scale(1.0 / hn, &mut q);
            state.basis_q.push(q);
        }

        let (y, _) = state.hessenberg.solve_update(&cfg.lsq_policy)?;
        x = state.reconstruct_solution(&y);
        history.push(state.hessenberg.residual_of(&y));
        let true_res = norm2(&residual(&x));
        explicit.push(true_res);

        if breakdown && !rank.full_rank() {
            status = GmresStatus::RankDeficient;
            trichotomy = Some(Trichotomy::RankDeficientFailure);
            break;
        }
        if cfg.rtol > 0.0 && true_res <= cfg.rtol * stop_ref {
            status = GmresStatus::Converged;
            trichotomy = Some(Trichotomy::ConvergedToTolerance);
            break;
        }
        if breakdown {
            status = GmresStatus::HappyBreakdown;
            trichotomy = Some(Trichotomy::InvariantSubspace);
            break;
        }
    }

    let run = FlexibleRun {
        outcome: GmresOutcome {
            x,
            status,
            iterations: state.basis_z.len(),
            residual_history: history,
            detector_events: Vec::new(),
        },
        trichotomy,
        explicit_residual_history: explicit,
        last_rank,
    };
    Ok((run, state))
}

/// Aggregated result of one FT-GMRES solve.
#[derive(Debug, Clone, PartialEq)]
pub struct FtReport {
    pub x: Vec<f64>,
    pub status: GmresStatus,
    pub trichotomy: Option<Trichotomy>,
    pub outer_iterations: usize,
    pub inner_iterations: Vec<usize>,
    pub inner_statuses: Vec<GmresStatus>,
    pub residual_history: Vec<f64>,
    pub explicit_residual_history: Vec<f64>,
    pub detector_events: Vec<DetectorEvent>,
    pub fault_fired: Option<FiredRecord>,
    /// Inner solves that produced nothing usable and were replaced by `z = q`.
    pub identity_fallbacks: usize,
}

/// Inner GMRES from a zero guess, with the injector routed only to its target solve.
struct NestedGmres<'a> {
    a: &'a SparseMatrix,
    cfg: GmresConfig,
    injector: Option<&'a mut FaultInjector>,
    inner_iterations: Vec<usize>,
    inner_statuses: Vec<GmresStatus>,
    events: Vec<DetectorEvent>,
    fallbacks: usize,
}

impl InnerSolver for NestedGmres<'_> {
    fn solve(&mut self, outer: usize, q: &[f64]) -> Result<Vec<f64>, InnerFailure> {
        let zero = vec![0.0; q.len()];
        let inj = match self.injector.as_deref_mut() {
            Some(inj) if inj.armed() && inj.spec().target_inner_solve == outer => Some(inj),
            _ => None,
        };
        let (out, _) = gmres_run(self.a, q, &zero, &self.cfg, inj, outer).map_err(InnerFailure::Failed)?;
        self.inner_iterations.push(out.iterations);
        self.inner_statuses.push(out.status);
        self.events.extend_from_slice(&out.detector_events);

        let halt = out.status == GmresStatus::DetectorAbort
            && self.cfg.detector.map(|d| d.action) == Some(DetectorAction::Halt);
        if halt {
            return Err(InnerFailure::Halted);
        }
        // a solve aborted before its first column returns its zero guess, which would make
        // H(1:j,1:j) singular; fall back to the unpreconditioned direction instead
        if out.x.iter().all(|&v| v == 0.0) {
            self.fallbacks += 1;
            return Ok(q.to_vec());
        }
        Ok(out.x)
    }
}

/// Unreliable inner GMRES (`inner_cfg`, faults allowed) inside reliable outer FGMRES.
pub fn ftgmres_solve(
    a: &SparseMatrix,
    b: &[f64],
    x0: &[f64],
    inner_cfg: &GmresConfig,
    outer_cfg: &GmresConfig,
    injector: Option<&mut FaultInjector>,
) -> Result<FtReport, GmresError> {
    inner_cfg.validate()?;
    let mut nested = NestedGmres {
        a,
        cfg: *inner_cfg,
        injector,
        inner_iterations: Vec::new(),
        inner_statuses: Vec::new(),
        events: Vec::new(),
        fallbacks: 0,
    };
    let (run, _) = fgmres_solve_with_state(a, b, x0, &mut nested, outer_cfg)?;
    let fault_fired = nested.injector.as_ref().and_then(|inj| inj.fired().copied());
    Ok(FtReport {
        outer_iterations: run.outcome.iterations,
        x: run.outcome.x,
        status: run.outcome.status,
        trichotomy: run.trichotomy,
        inner_iterations: nested.inner_iterations,
        inner_statuses: nested.inner_statuses,
        residual_history: run.outcome.residual_history,
        explicit_residual_history: run.explicit_residual_history,
        detector_events: nested.events,
        fault_fired,
        identity_fallbacks: nested.fallbacks,
    })
}
