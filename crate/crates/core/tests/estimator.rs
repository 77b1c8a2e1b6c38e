use nalgebra::DVector;
use plqid::estimator::spec::{identify, ProblemSpec};
use plqid::estimator::{
    complete_monotone_rows, constraints_complete_monotone, estimate, gamma_grid, IdentProblem, Loss,
};
use plqid::ipsolver::{Polyhedron, SolveStatus};
use plqid::sim::{gen_intro, max_violation, ExperimentSpec, Scenario, SsMl};
use plqid::{KernelFamily, SolverOptions, StableSplineKernel};

fn spec(loss: &str, constraints: &str) -> ProblemSpec {
    ProblemSpec::from_json(&format!(
        r#"{{"kernel": "tc", "n": 40, "loss": {loss}, "hyperparameters": "tune:ml", "constraints": "{constraints}"}}"#
    ))
    .unwrap()
}

#[test]
fn every_loss_and_shape_converges_and_respects_constraints() {
    let data = gen_intro(3, 200, true).unwrap();
    let truth: Vec<f64> = data.truth.rows(0, 40).iter().copied().collect();
    let losses = [r#"{"name": "l2"}"#, r#"{"name": "l1"}"#, r#"{"name": "huber", "kappa": 1.0}"#, r#"{"name": "vapnik", "epsilon": 0.01}"#];
    for loss in losses {
        for shape in ["none", "nonneg", "cm:5", "unimodal:auto"] {
            let mut s = spec(loss, shape);
            s.truth = Some(truth.clone());
            let out = identify(&data.u, data.model.z.clone(), &s, &SolverOptions::default()).unwrap();
            assert_eq!(out.status, SolveStatus::Converged, "{loss} {shape}");
            assert!(out.fit.unwrap() > 60.0, "{loss} {shape}: fit {:?}", out.fit);
            let x = DVector::from_vec(out.x.clone());
            let scale = x.amax();
            match shape {
                "nonneg" => assert!(x.min() >= -1e-6 * scale),
                "cm:5" => assert!(max_violation(&complete_monotone_rows(40, 5).unwrap(), &x) <= 1e-6 * scale),
                "unimodal:auto" => assert!(out.mode.is_some()),
                _ => {}
            }
        }
    }
}

#[test]
fn rescaled_constraints_give_the_same_estimate() {
    let data = gen_intro(4, 150, false).unwrap();
    let kernel = StableSplineKernel::new(KernelFamily::Tc, 0.7).unwrap();
    let base = IdentProblem::new(data.model.clone(), kernel, Loss::L1, 0.5).unwrap();
    let poly = constraints_complete_monotone(&base.l, 3).unwrap();
    let mut a = poly.a().clone();
    for (j, mut col) in a.column_iter_mut().enumerate() {
        col *= 1.0 + 10.0 * (j % 7) as f64;
    }
    let scaled = Polyhedron::new(a, poly.rhs().clone()).unwrap();
    let opts = SolverOptions::default();
    let x1 = estimate(&base.clone().with_constraints(poly), &opts).unwrap().ensure_converged().unwrap().x;
    let x2 = estimate(&base.with_constraints(scaled), &opts).unwrap().ensure_converged().unwrap().x;
    assert!((&x1 - &x2).norm() <= 1e-6 * x1.norm());
}

#[test]
fn degenerate_monotone_problem_converges() {
    // hundreds of active constraints at the optimum; needs the refined and
    // augmented Newton solves
    let data = ExperimentSpec::desk(Scenario::IntroOutliers, 17).generate(1).unwrap();
    let l2 = SsMl::new(KernelFamily::Tc, Loss::L2).problem(&data).unwrap();
    let l1 = SsMl::new(KernelFamily::Tc, Loss::L1).problem(&data).unwrap();
    let cm5 = constraints_complete_monotone(&l1.l, 5).unwrap();
    for idx in [8, 27, 44] {
        let g = gamma_grid(l2.gamma)[idx];
        let est = estimate(&l1.clone().with_gamma(g).with_constraints(cm5.clone()), &SolverOptions::default()).unwrap();
        assert!(est.report.converged(), "grid point {idx}: {:?} after {} iterations", est.report.status, est.report.iterations);
    }
}
