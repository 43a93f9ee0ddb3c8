//! Sparse GMRES, flexible GMRES and the nested fault-tolerant FT-GMRES solver, with a
//! Hessenberg-bound detector for silent data corruption and a single-fault injection harness.

pub mod experiment;
pub mod flexible;
pub mod gmres;
pub mod hessenberg;
pub mod mmio;
pub mod operator;
pub mod sdc;
pub mod sparse;
pub mod vector;

pub use flexible::{fgmres_solve, ftgmres_solve, FtReport, InnerSolver, Trichotomy};
pub use gmres::{gmres_solve, GmresConfig, GmresError, GmresOutcome, GmresStatus};
pub use hessenberg::{HessenbergFactor, LsqMode, LsqPolicy, RankReport};
pub use mmio::{read_matrix_market, write_matrix_market};
pub use operator::LinearOperator;
pub use sdc::{DetectorAction, DetectorConfig, FaultClass, FaultInjector, FaultSpec, MgsPosition};
pub use sparse::{gen_poisson, SparseMatrix};
