//! Problem instances shared by the solver benchmarks.

use plqid::estimator::{assemble, IdentProblem, Loss};
use plqid::sim::{ExperimentSpec, Scenario};
use plqid::{KernelFamily, PlqRep, Polyhedron, StableSplineKernel};

/// Assembled TC-regularized problem on intro-scenario outlier data.
pub fn instance(m: usize, n: usize, loss: Loss, seed: u64) -> (PlqRep, Polyhedron) {
    let spec = ExperimentSpec { m, n, ..ExperimentSpec::desk(Scenario::IntroOutliers, seed) };
    let data = spec.generate(0).expect("valid sizes");
    let kernel = StableSplineKernel::new(KernelFamily::Tc, 0.9).expect("alpha in (0, 1)");
    let problem = IdentProblem::new(data.model, kernel, loss, 1.0).expect("kernel factorizes");
    assemble(&problem).expect("injective")
}
