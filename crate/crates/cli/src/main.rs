use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ftgmres_core::experiment::{
    run_ftgmres, run_gmres, run_sweep_to_csv, write_report_csv, ExperimentError, MatrixSource, SolveReport,
    SolverSettings, SweepPlan,
};
use ftgmres_core::{gen_poisson, write_matrix_market, DetectorAction, FaultClass, FaultSpec, LsqMode, MgsPosition};

const EXIT_USAGE: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "ftgmres", version, about = "Fault-tolerant GMRES experiments on sparse systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the 5-point Poisson matrix on an n x n grid as Matrix Market.
    GenPoisson { n: usize, out: PathBuf },
    /// Print dimensions, nonzeros and norm estimates.
    Info(MatrixArgs),
    /// Run one solve, or a fault-injection sweep with --sweep.
    Solve(SolveArgs),
    /// Same as `solve --sweep`.
    Sweep(SolveArgs),
}

#[derive(Args, Debug, Clone)]
#[group(required = true, multiple = false)]
struct MatrixChoice {
    /// Matrix Market file.
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Generated Poisson matrix on an N x N grid.
    #[arg(long, value_name = "N")]
    poisson: Option<usize>,
    /// Seeded random sparse matrix of order N.
    #[arg(long, value_name = "N")]
    random: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct MatrixArgs {
    #[command(flatten)]
    choice: MatrixChoice,
    /// Seed for --random.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl MatrixArgs {
    fn source(&self) -> MatrixSource {
        let c = &self.choice;
        if let Some(p) = &c.matrix {
            MatrixSource::File(p.clone())
        } else if let Some(n) = c.poisson {
            MatrixSource::Poisson(n)
        } else {
            MatrixSource::Random { n: c.random.unwrap_or(0), seed: self.seed }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Solver {
    Gmres,
    Ftgmres,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Action {
    Report,
    Abort,
    Halt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Lsq {
    Standard,
    Fallback,
    Svd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Pos {
    First,
    Last,
}

#[derive(Args, Debug, Clone)]
struct SolveArgs {
    #[command(flatten)]
    matrix: MatrixArgs,
    #[arg(long, value_enum, default_value_t = Solver::Ftgmres)]
    solver: Solver,
    #[arg(long, default_value_t = 25)]
    inner_iters: usize,
    #[arg(long, default_value_t = 100)]
    outer_max: usize,
    #[arg(long, default_value_t = 1e-8)]
    rtol: f64,
    /// `both` is only meaningful for sweeps.
    #[arg(long, value_enum, default_value_t = Toggle::Off)]
    detector: Toggle,
    #[arg(long, value_enum, default_value_t = Action::Abort)]
    detector_action: Action,
    /// Least-squares policy of the inner solves; the outer solve always truncates.
    #[arg(long, value_enum, default_value_t = Lsq::Standard)]
    lsq: Lsq,
    /// Fault classes, comma separated for sweeps (default for sweeps: 1,2,3).
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(1..=3))]
    fault_class: Vec<u8>,
    /// MGS positions, comma separated for sweeps (default for sweeps: first,last).
    #[arg(long, value_enum, value_delimiter = ',')]
    mgs_pos: Vec<Pos>,
    /// Inner solve hit by a single-solve fault.
    #[arg(long, default_value_t = 1)]
    target_solve: usize,
    /// Inner iteration hit by a single-solve fault.
    #[arg(long, default_value_t = 1)]
    target_iter: usize,
    /// Extra inner solves swept beyond the baseline outer count.
    #[arg(long, default_value_t = 5)]
    margin: usize,
    #[arg(long)]
    sweep: bool,
    #[arg(long, value_name = "CSV_PATH")]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

impl SolveArgs {
    fn settings(&self) -> SolverSettings {
        SolverSettings {
            inner_iters: self.inner_iters,
            outer_max: self.outer_max,
            rtol: self.rtol,
            detector: self.detector == Toggle::On,
            action: match self.detector_action {
                Action::Report => DetectorAction::ReportOnly,
                Action::Abort => DetectorAction::AbortInner,
                Action::Halt => DetectorAction::Halt,
            },
            inner_lsq: match self.lsq {
                Lsq::Standard => LsqMode::Standard,
                Lsq::Fallback => LsqMode::FallbackOnNonFinite,
                Lsq::Svd => LsqMode::AlwaysRankRevealing,
            },
            ..SolverSettings::default()
        }
    }

    fn classes(&self) -> Vec<FaultClass> {
        self.fault_class.iter().filter_map(|&n| FaultClass::from_number(n)).collect()
    }

    fn positions(&self) -> Vec<MgsPosition> {
        self.mgs_pos
            .iter()
            .map(|p| match p {
                Pos::First => MgsPosition::First,
                Pos::Last => MgsPosition::Last,
            })
            .collect()
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Run(ExperimentError),
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        CliError::Run(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn run(cmd: Command) -> Result<u8, CliError> {
    match cmd {
        Command::GenPoisson { n, out } => {
            let a = gen_poisson(n).map_err(ExperimentError::from)?;
            write_matrix_market(&a, &out).map_err(ExperimentError::from)?;
            println!("wrote {} ({}x{}, {} nonzeros)", out.display(), a.nrows(), a.ncols(), a.nnz());
            Ok(0)
        }
        Command::Info(m) => {
            let source = m.source();
            let a = source.load()?;
            let info = a.info();
            println!("matrix     {}", source.id());
            println!("rows       {}", info.nrows);
            println!("cols       {}", info.ncols);
            println!("nnz        {}", info.nnz);
            println!("frobenius  {:.6}", info.frobenius_norm);
            let note = if info.two_norm_converged { "" } else { " (power iteration not converged)" };
            println!("two-norm   {:.6}{note}", info.two_norm_estimate);
            Ok(0)
        }
        Command::Solve(args) if args.sweep => sweep(args),
        Command::Solve(args) => solve(args),
        Command::Sweep(args) => sweep(args),
    }
}

fn solve(args: SolveArgs) -> Result<u8, CliError> {
    if args.detector == Toggle::Both {
        return Err(CliError::Usage("--detector both requires --sweep".into()));
    }
    let classes = args.classes();
    let positions = args.positions();
    if classes.len() > 1 || positions.len() > 1 {
        return Err(CliError::Usage("a single solve takes at most one --fault-class and one --mgs-pos".into()));
    }
    let fault = classes.first().map(|&fault_class| FaultSpec {
        target_inner_solve: args.target_solve,
        target_inner_iteration: args.target_iter,
        mgs_position: positions.first().copied().unwrap_or(MgsPosition::First),
        fault_class,
    });
    let source = args.matrix.source();
    let a = source.load()?;
    let settings = args.settings();
    let rep = match args.solver {
        Solver::Ftgmres => run_ftgmres(&a, &source.id(), &settings, fault)?,
        Solver::Gmres => run_gmres(&a, &source.id(), &settings, fault)?,
    };
    print_report(&rep, args.solver);
    if let Some(out) = &args.out {
        write_report_csv(&rep, &settings, out)?;
    }
    Ok(rep.status.exit_code() as u8)
}

fn print_report(rep: &SolveReport, solver: Solver) {
    let label = match solver {
        Solver::Gmres => "iterations",
        Solver::Ftgmres => "outer iterations",
    };
    println!("matrix     {}", rep.matrix_id);
    println!("config     {}", rep.config);
    println!("status     {}", rep.status.as_str());
    println!("{label:<10} {}", rep.outer_iterations);
    if !rep.inner_iterations_per_outer.is_empty() {
        let inner: Vec<String> = rep.inner_iterations_per_outer.iter().map(|n| n.to_string()).collect();
        println!("inner      {}", inner.join(" "));
    }
    println!("residual   {:.3e} (relative, explicit)", rep.final_relative_residual());
    if let Some(f) = &rep.fault_fired {
        println!("fault      {} {:e} -> {:e}", f.location, f.original, f.injected);
    } else if rep.fault.is_some() {
        println!("fault      not fired");
    }
    for ev in &rep.detector_events {
        println!("detected   {} |h| = {:e} > {:e}", ev.location, ev.observed.abs(), ev.bound);
    }
    println!("time       {:.3}s", rep.wall_time);
}

fn sweep(args: SolveArgs) -> Result<u8, CliError> {
    if args.solver != Solver::Ftgmres {
        return Err(CliError::Usage("sweeps run FT-GMRES only".into()));
    }
    let out = args.out.clone().ok_or_else(|| CliError::Usage("a sweep needs --out CSV_PATH".into()))?;
    let source = args.matrix.source();
    let a = source.load()?;
    let mut plan = SweepPlan::new(source.id(), args.settings());
    let classes = args.classes();
    if !classes.is_empty() {
        plan.classes = classes;
    }
    let positions = args.positions();
    if !positions.is_empty() {
        plan.positions = positions;
    }
    plan.detectors = match args.detector {
        Toggle::On => vec![true],
        Toggle::Off => vec![false],
        Toggle::Both => vec![false, true],
    };
    plan.margin = args.margin;
    let outcome = run_sweep_to_csv(&a, &plan, args.jobs, &out)?;
    let fired = outcome.fired().count();
    let zero = outcome.fired().filter(|r| r.delta == 0).count();
    println!("baseline   {} outer iterations ({})", outcome.baseline.outer_iterations, outcome.baseline.status.as_str());
    println!("rows       {} written to {}", outcome.rows.len(), out.display());
    println!("fired      {fired}");
    if let Some(max) = outcome.max_delta() {
        println!("max delta  {max:+}");
        println!("delta 0    {zero}/{fired}");
    }
    Ok(0)
}
