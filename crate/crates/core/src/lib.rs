//! Robust, sparse and constrained impulse-response identification with
//! piecewise linear-quadratic penalties and an interior-point solver.

pub mod error;
pub mod estimator;
pub mod ipsolver;
pub mod kernel;
pub mod linalg;
pub mod plq;
pub mod sim;

pub use error::{Error, Result};
pub use ipsolver::{
    check_injectivity, solve, InjectivityReport, IpState, Polyhedron, SolveReport, SolveStatus,
    SolverOptions,
};
pub use kernel::{KernelFamily, RegressionModel, StableSplineKernel};
pub use plq::{PlqDims, PlqRep};
