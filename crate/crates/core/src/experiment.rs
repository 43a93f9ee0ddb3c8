//! Single solves and single-fault sweeps over FT-GMRES, reported as CSV rows.
//!
//! A sweep always runs the fault-free baseline first, then one solve per
//! (detector setting, fault class, MGS position, inner solve, inner iteration) site, each
//! with exactly one armed injector. `delta` is the change in outer iterations versus the
//! baseline.

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::flexible::{ftgmres_solve, Trichotomy};
use crate::gmres::{gmres_solve, GmresConfig, GmresError, GmresStatus};
use crate::hessenberg::{LsqMode, LsqPolicy, DEFAULT_TRUNCATION_TOL};
use crate::mmio::{read_matrix_market, MatrixMarketError};
use crate::sdc::{DetectorAction, DetectorConfig, DetectorEvent, FaultClass, FaultInjector, FaultSpec, FiredRecord, MgsPosition};
use crate::sparse::{gen_poisson, gen_random_sparse, SparseError, SparseMatrix};

pub const CSV_COLUMNS: [&str; 14] = [
    "matrix_id",
    "detector",
    "action",
    "fault_class",
    "mgs_pos",
    "target_solve",
    "target_iter",
    "fired",
    "observed_h",
    "injected_h",
    "detected",
    "outer_iters",
    "delta",
    "status",
];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    MatrixMarket(#[from] MatrixMarketError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error(transparent)]
    Solver(#[from] GmresError),
    #[error("matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("existing output {path} does not match this sweep: {reason}")]
    ResumeMismatch { path: String, reason: String },
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatrixSource {
    Poisson(usize),
    File(PathBuf),
    /// Diagonally dominant random sparse matrix with 5 off-diagonals per row.
    Random { n: usize, seed: u64 },
}

impl MatrixSource {
    pub fn id(&self) -> String {
        match self {
            MatrixSource::Poisson(n) => format!("poisson{n}"),
            MatrixSource::File(p) => p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string()),
            MatrixSource::Random { n, seed } => format!("random{n}_s{seed}"),
        }
    }

    pub fn load(&self) -> Result<SparseMatrix, ExperimentError> {
        let a = match self {
            MatrixSource::Poisson(n) => gen_poisson(*n)?,
            MatrixSource::File(p) => read_matrix_market(p)?,
            MatrixSource::Random { n, seed } => gen_random_sparse(*n, 5, *seed)?,
        };
        if a.nrows() != a.ncols() {
            return Err(ExperimentError::NotSquare(a.nrows(), a.ncols()));
        }
        Ok(a)
    }
}

/// Solver knobs shared by single solves and sweeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub inner_iters: usize,
    pub outer_max: usize,
    pub rtol: f64,
    pub detector: bool,
    pub action: DetectorAction,
    pub inner_lsq: LsqMode,
    pub outer_lsq: LsqMode,
    pub truncation_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            inner_iters: 25,
            outer_max: 100,
            rtol: 1e-8,
            detector: false,
            action: DetectorAction::AbortInner,
            inner_lsq: LsqMode::Standard,
            outer_lsq: LsqMode::AlwaysRankRevealing,
            truncation_tol: DEFAULT_TRUNCATION_TOL,
        }
    }
}

impl SolverSettings {
    /// Fixed-length inner GMRES from a zero guess, detector bound `‖A‖_F(1 + 64ε)`.
    pub fn inner_config(&self, a: &SparseMatrix) -> GmresConfig {
        let mut cfg = GmresConfig::for_matrix(a, self.inner_iters, 0.0)
            .with_policy(LsqPolicy { mode: self.inner_lsq, truncation_tol: self.truncation_tol });
        if self.detector {
            cfg = cfg.with_detector(DetectorConfig::for_matrix(a, self.action));
        }
        cfg
    }

    pub fn outer_config(&self, a: &SparseMatrix) -> GmresConfig {
        GmresConfig::for_matrix(a, self.outer_max, self.rtol)
            .with_policy(LsqPolicy { mode: self.outer_lsq, truncation_tol: self.truncation_tol })
    }

    pub fn summary(&self) -> String {
        format!(
            "inner_iters={} outer_max={} rtol={:e} detector={} action={} lsq={}/{}",
            self.inner_iters,
            self.outer_max,
            self.rtol,
            on_off(self.detector),
            action_name(self.action),
            lsq_name(self.inner_lsq),
            lsq_name(self.outer_lsq),
        )
    }
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

pub fn action_name(a: DetectorAction) -> &'static str {
    match a {
        DetectorAction::ReportOnly => "report",
        DetectorAction::AbortInner => "abort",
        DetectorAction::Halt => "halt",
    }
}

pub fn lsq_name(m: LsqMode) -> &'static str {
    match m {
        LsqMode::Standard => "standard",
        LsqMode::FallbackOnNonFinite => "fallback",
        LsqMode::AlwaysRankRevealing => "svd",
    }
}

/// Final outcome of a solve as printed and written to CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    InvariantSubspace,
    MaxIters,
    RankDeficient,
    Halted,
    NumericalBreakdown,
}

impl RunStatus {
    fn from_outcome(status: GmresStatus, trichotomy: Option<Trichotomy>) -> Self {
        match (trichotomy, status) {
            (Some(Trichotomy::ConvergedToTolerance), _) => RunStatus::Converged,
            (Some(Trichotomy::InvariantSubspace), _) => RunStatus::InvariantSubspace,
            (Some(Trichotomy::RankDeficientFailure), _) => RunStatus::RankDeficient,
            (None, GmresStatus::DetectorAbort) => RunStatus::Halted,
            (None, GmresStatus::NumericalBreakdown) => RunStatus::NumericalBreakdown,
            (None, _) => RunStatus::MaxIters,
        }
    }

    fn from_gmres(status: GmresStatus) -> Self {
        match status {
            GmresStatus::Converged => RunStatus::Converged,
            GmresStatus::HappyBreakdown => RunStatus::InvariantSubspace,
            GmresStatus::MaxIters => RunStatus::MaxIters,
            GmresStatus::DetectorAbort => RunStatus::Halted,
            GmresStatus::NumericalBreakdown => RunStatus::NumericalBreakdown,
            GmresStatus::RankDeficient => RunStatus::RankDeficient,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::InvariantSubspace => "invariant-subspace",
            RunStatus::MaxIters => "max-iters",
            RunStatus::RankDeficient => "rank-deficient",
            RunStatus::Halted => "halted",
            RunStatus::NumericalBreakdown => "numerical-breakdown",
        }
    }

    /// 0 converged, 2 out of iterations, 3 rank-deficient failure, 5 halted by the detector.
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Converged | RunStatus::InvariantSubspace => 0,
            RunStatus::MaxIters | RunStatus::NumericalBreakdown => 2,
            RunStatus::RankDeficient => 3,
            RunStatus::Halted => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub matrix_id: String,
    pub config: String,
    pub status: RunStatus,
    pub outer_iterations: usize,
    pub inner_iterations_per_outer: Vec<usize>,
    pub residual_history: Vec<f64>,
    pub explicit_residual_history: Vec<f64>,
    pub detector_events: Vec<DetectorEvent>,
    pub fault: Option<FaultSpec>,
    pub fault_fired: Option<FiredRecord>,
    pub x: Vec<f64>,
    pub wall_time: f64,
}

impl SolveReport {
    pub fn final_relative_residual(&self) -> f64 {
        let r0 = self.explicit_residual_history.first().copied().unwrap_or(0.0);
        let last = self.explicit_residual_history.last().copied().unwrap_or(0.0);
        if r0 > 0.0 {
            last / r0
        } else {
            last
        }
    }
}

/// FT-GMRES with `b = 1`, `x₀ = 0` and at most one injected fault.
pub fn run_ftgmres(
    a: &SparseMatrix,
    matrix_id: &str,
    settings: &SolverSettings,
    fault: Option<FaultSpec>,
) -> Result<SolveReport, ExperimentError> {
    let n = a.nrows();
    let b = vec![1.0; n];
    let x0 = vec![0.0; n];
    let mut injector = fault.map(FaultInjector::new);
    let start = Instant::now();
    let rep = ftgmres_solve(a, &b, &x0, &settings.inner_config(a), &settings.outer_config(a), injector.as_mut())?;
    Ok(SolveReport {
        matrix_id: matrix_id.to_string(),
        config: settings.summary(),
        status: RunStatus::from_outcome(rep.status, rep.trichotomy),
        outer_iterations: rep.outer_iterations,
        inner_iterations_per_outer: rep.inner_iterations,
        residual_history: rep.residual_history,
        explicit_residual_history: rep.explicit_residual_history,
        detector_events: rep.detector_events,
        fault,
        fault_fired: rep.fault_fired,
        x: rep.x,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Plain GMRES with `b = 1`, `x₀ = 0`, `outer_max` iterations and the outer tolerance.
pub fn run_gmres(
    a: &SparseMatrix,
    matrix_id: &str,
    settings: &SolverSettings,
    fault: Option<FaultSpec>,
) -> Result<SolveReport, ExperimentError> {
    let n = a.nrows();
    let b = vec![1.0; n];
    let mut cfg = GmresConfig::for_matrix(a, settings.outer_max, settings.rtol)
        .with_policy(LsqPolicy { mode: settings.inner_lsq, truncation_tol: settings.truncation_tol });
    if settings.detector {
        cfg = cfg.with_detector(DetectorConfig::for_matrix(a, settings.action));
    }
    let mut injector = fault.map(FaultInjector::new);
    let start = Instant::now();
    let out = gmres_solve(a, &b, &vec![0.0; n], &cfg, injector.as_mut())?;
    let r = a.spmv(&out.x)?;
    let explicit: f64 = r.iter().zip(&b).map(|(ri, bi)| (bi - ri) * (bi - ri)).sum::<f64>().sqrt();
    let mut status = RunStatus::from_gmres(out.status);
    if status == RunStatus::Halted && settings.action == DetectorAction::AbortInner {
        status = RunStatus::MaxIters;
    }
    Ok(SolveReport {
        matrix_id: matrix_id.to_string(),
        config: settings.summary(),
        status,
        outer_iterations: out.iterations,
        inner_iterations_per_outer: Vec::new(),
        residual_history: out.residual_history,
        explicit_residual_history: vec![(n as f64).sqrt(), explicit],
        detector_events: out.detector_events,
        fault,
        fault_fired: injector.and_then(|i| i.fired().copied()),
        x: out.x,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub matrix_id: String,
    pub detector: bool,
    pub action: DetectorAction,
    pub fault_class: Option<FaultClass>,
    pub mgs_pos: Option<MgsPosition>,
    pub target_solve: usize,
    pub target_iter: usize,
    pub fired: bool,
    pub observed_h: Option<f64>,
    pub injected_h: Option<f64>,
    pub detected: bool,
    pub outer_iters: usize,
    pub delta: i64,
    pub status: RunStatus,
}

impl SweepRow {
    pub fn from_report(rep: &SolveReport, settings: &SolverSettings, baseline_outer: usize) -> Self {
        let spec = rep.fault;
        Self {
            matrix_id: rep.matrix_id.clone(),
            detector: settings.detector,
            action: settings.action,
            fault_class: spec.map(|s| s.fault_class),
            mgs_pos: spec.map(|s| s.mgs_position),
            target_solve: spec.map_or(0, |s| s.target_inner_solve),
            target_iter: spec.map_or(0, |s| s.target_inner_iteration),
            fired: rep.fault_fired.is_some(),
            observed_h: rep.fault_fired.map(|f| f.original),
            injected_h: rep.fault_fired.map(|f| f.injected),
            detected: !rep.detector_events.is_empty(),
            outer_iters: rep.outer_iterations,
            delta: rep.outer_iterations as i64 - baseline_outer as i64,
            status: rep.status,
        }
    }

    pub fn record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        vec![
            self.matrix_id.clone(),
            on_off(self.detector).to_string(),
            action_name(self.action).to_string(),
            self.fault_class.map_or("none".to_string(), |c| c.number().to_string()),
            self.mgs_pos.map_or("none", |p| p.as_str()).to_string(),
            self.target_solve.to_string(),
            self.target_iter.to_string(),
            self.fired.to_string(),
            opt(self.observed_h),
            opt(self.injected_h),
            self.detected.to_string(),
            self.outer_iters.to_string(),
            self.delta.to_string(),
            self.status.as_str().to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub matrix_id: String,
    pub settings: SolverSettings,
    pub classes: Vec<FaultClass>,
    pub positions: Vec<MgsPosition>,
    pub detectors: Vec<bool>,
    /// Extra inner solves targeted beyond the baseline outer count.
    pub margin: usize,
}

impl SweepPlan {
    pub fn new(matrix_id: impl Into<String>, settings: SolverSettings) -> Self {
        Self {
            matrix_id: matrix_id.into(),
            settings,
            classes: FaultClass::ALL.to_vec(),
            positions: vec![MgsPosition::First, MgsPosition::Last],
            detectors: vec![settings.detector],
            margin: 5,
        }
    }

    /// Every (detector, fault) pair in CSV order, given the baseline outer count.
    pub fn runs(&self, baseline_outer: usize) -> Vec<(bool, FaultSpec)> {
        let mut out = Vec::new();
        for &det in &self.detectors {
            for &class in &self.classes {
                for &pos in &self.positions {
                    for solve in 1..=baseline_outer + self.margin {
                        for iter in 1..=self.settings.inner_iters {
                            out.push((
                                det,
                                FaultSpec {
                                    target_inner_solve: solve,
                                    target_inner_iteration: iter,
                                    mgs_position: pos,
                                    fault_class: class,
                                },
                            ));
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub baseline: SolveReport,
    pub rows: Vec<SweepRow>,
}

impl SweepOutcome {
    /// Rows whose fault actually fired.
    pub fn fired(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.fault_class.is_some() && r.fired)
    }

    pub fn max_delta(&self) -> Option<i64> {
        self.fired().map(|r| r.delta).max()
    }
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, ExperimentError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| ExperimentError::ThreadPool(e.to_string()))?;
    Ok(pool.install(f))
}

/// Runs the baseline and every planned fault, handing rows to `sink` in plan order.
///
/// The first `skip` rows are neither passed to `sink` nor kept in the outcome, and their fault
/// runs are not repeated. The baseline is always solved since every delta depends on it.
pub fn run_sweep_with(
    a: &SparseMatrix,
    plan: &SweepPlan,
    jobs: usize,
    skip: usize,
    mut sink: impl FnMut(&SweepRow) -> Result<(), ExperimentError>,
) -> Result<SweepOutcome, ExperimentError> {
    let base_settings = SolverSettings { detector: false, ..plan.settings };
    let baseline = run_ftgmres(a, &plan.matrix_id, &base_settings, None)?;
    let base_outer = baseline.outer_iterations;

    let mut rows = Vec::new();
    let mut index = 0usize;
    for &det in &plan.detectors {
        let settings = SolverSettings { detector: det, ..plan.settings };
        let row = SweepRow::from_report(&baseline, &settings, base_outer);
        if index >= skip {
            sink(&row)?;
        }
        index += 1;
        rows.push(row);
    }

    let runs = plan.runs(base_outer);
    let chunk = (jobs.max(1) * 8).max(16);
    for batch in runs.chunks(chunk) {
        let start = index;
        index += batch.len();
        if index <= skip {
            continue;
        }
        let first = skip.saturating_sub(start);
        let reports: Vec<Result<(SolverSettings, SolveReport), ExperimentError>> = with_pool(jobs, || {
            batch[first..]
                .par_iter()
                .map(|&(det, spec)| {
                    let settings = SolverSettings { detector: det, ..plan.settings };
                    run_ftgmres(a, &plan.matrix_id, &settings, Some(spec)).map(|r| (settings, r))
                })
                .collect()
        })?;
        for rep in reports {
            let (settings, rep) = rep?;
            let row = SweepRow::from_report(&rep, &settings, base_outer);
            sink(&row)?;
            rows.push(row);
        }
    }
    Ok(SweepOutcome { baseline, rows })
}

pub fn run_sweep(a: &SparseMatrix, plan: &SweepPlan, jobs: usize) -> Result<SweepOutcome, ExperimentError> {
    run_sweep_with(a, plan, jobs, 0, |_| Ok(()))
}

/// Runs a sweep into `path`, flushing after every row. If `path` already holds rows from an
/// interrupted run of the same plan, those rows are kept and the sweep continues after them.
pub fn run_sweep_to_csv(
    a: &SparseMatrix,
    plan: &SweepPlan,
    jobs: usize,
    path: &Path,
) -> Result<SweepOutcome, ExperimentError> {
    let existing = count_existing_rows(path)?;
    let file = if let Some((_, valid_len)) = &existing {
        // drop a row that was cut off mid-write
        let f = OpenOptions::new().write(true).open(path)?;
        f.set_len(*valid_len)?;
        OpenOptions::new().append(true).open(path)?
    } else {
        File::create(path)?
    };
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if existing.is_none() {
        wtr.write_record(CSV_COLUMNS)?;
        wtr.flush()?;
    }
    let prior = existing.map(|(rows, _)| rows).unwrap_or_default();
    let skip = prior.len();
    let outcome = run_sweep_with(a, plan, jobs, skip, |row| {
        wtr.write_record(row.record())?;
        wtr.flush()?;
        Ok(())
    })?;
    // baseline rows are recomputed, so they must agree with what is already on disk
    for (old, fresh) in prior.iter().zip(&outcome.rows).take(plan.detectors.len()) {
        if *old != fresh.record() {
            return Err(ExperimentError::ResumeMismatch {
                path: path.display().to_string(),
                reason: "baseline row differs from a fresh run".into(),
            });
        }
    }
    Ok(outcome)
}

type ExistingRows = Option<(Vec<Vec<String>>, u64)>;

/// Complete data rows of an existing sweep file and the byte length they span, or `None` when
/// there is nothing to resume.
fn count_existing_rows(path: &Path) -> Result<ExistingRows, ExperimentError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let mut lines = text.split_inclusive('\n');
    let header = match lines.next() {
        Some(h) if h.ends_with('\n') => h,
        _ => return Ok(None),
    };
    if header.trim_end() != CSV_COLUMNS.join(",") {
        return Err(ExperimentError::ResumeMismatch {
            path: path.display().to_string(),
            reason: "header differs".into(),
        });
    }
    let mut valid = header.len();
    let mut rows = Vec::new();
    for line in lines {
        let fields: Vec<String> = line.trim_end().split(',').map(str::to_string).collect();
        if !line.ends_with('\n') || fields.len() != CSV_COLUMNS.len() {
            break;
        }
        valid += line.len();
        rows.push(fields);
    }
    Ok(Some((rows, valid as u64)))
}

/// Writes one report as a single CSV row (with header).
pub fn write_report_csv(rep: &SolveReport, settings: &SolverSettings, path: &Path) -> Result<(), ExperimentError> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(CSV_COLUMNS)?;
    wtr.write_record(SweepRow::from_report(rep, settings, rep.outer_iterations).record())?;
    wtr.flush()?;
    Ok(())
}
