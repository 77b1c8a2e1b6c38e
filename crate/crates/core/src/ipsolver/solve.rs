use std::time::Instant;

use super::kkt::{Direction, KktSystem, Residual};
use super::{
    check_injectivity, IpState, IterationRecord, Polyhedron, SolveReport, SolveStatus,
    SolverOptions,
};
use crate::error::Result;
use crate::plq::PlqRep;

#[derive(Debug, Clone)]
pub enum LineSearchOutcome {
    Accepted {
        step: f64,
        state: IpState,
        residual: Residual,
    },
    Stalled,
}

/// Largest step `t` with `x + t·dx ≥ (1 − fraction)·x` for all of `s, r, q, w`,
/// capped at 1.
fn boundary_cap(st: &IpState, d: &Direction, fraction: f64) -> f64 {
    let mut cap: f64 = 1.0;
    for (x, dx) in [(&st.s, &d.ds), (&st.r, &d.dr), (&st.q, &d.dq), (&st.w, &d.dw)] {
        for (xi, di) in x.iter().zip(dx.iter()) {
            if *di < 0.0 {
                cap = cap.min(-fraction * xi / di);
            }
        }
    }
    cap
}

/// Backtracking search along `d`: tries `t = t_max·backtrackⁱ` where `t_max` is
/// the fraction-to-boundary cap, and accepts the first `t` with
/// `‖F_μ(χ + t d)‖ ≤ (1 − η t)‖F_μ(χ)‖` and all of `s, r, q, w` positive.
pub fn line_search(
    sys: &KktSystem<'_>,
    st: &IpState,
    d: &Direction,
    mu: f64,
    current_norm: f64,
    opts: &SolverOptions,
) -> LineSearchOutcome {
    let mut t = boundary_cap(st, d, opts.boundary_fraction);
    for _ in 0..=opts.max_backtracks {
        let trial = st.step(d, t);
        if trial.is_interior() {
            let residual = sys.residual(&trial, mu);
            if residual.norm2() <= (1.0 - opts.eta * t) * current_norm {
                return LineSearchOutcome::Accepted {
                    step: t,
                    state: trial,
                    residual,
                };
            }
        }
        t *= opts.backtrack;
    }
    LineSearchOutcome::Stalled
}

/// Minimizes `ρ(y)` over `{y : Aᵀy ≤ a}`.
///
/// Never returns an error for numerical failures; those are reported via
/// [`SolveReport::status`]. Shape mismatches between objective and
/// constraints are errors.
pub fn solve(rep: &PlqRep, poly: &Polyhedron, opts: &SolverOptions) -> Result<SolveReport> {
    let sys = KktSystem::new(rep, poly)?;
    let mut st = IpState::initial(rep, poly);

    let finish = |st: IpState,
                  status: SolveStatus,
                  iterations: usize,
                  trace: Vec<IterationRecord>,
                  loop_seconds: f64,
                  message: Option<String>| {
        let f0 = sys.residual(&st, 0.0);
        SolveReport {
            y_star: st.y.clone(),
            u_star: st.u.clone(),
            iterations,
            final_mu: st.complementarity(),
            kkt_residual: f0.norm_inf(),
            objective: sys.dual_objective(&st),
            status,
            max_violation: poly.max_violation(&st.y),
            trace,
            centering: opts.centering,
            loop_seconds,
            message,
            state: st,
        }
    };

    let injectivity = check_injectivity(rep);
    if !injectivity.injective {
        return Ok(finish(
            st,
            SolveStatus::StructureError,
            0,
            Vec::new(),
            0.0,
            Some("Null(M) ∩ Null(Bᵀ) ∩ Null(Cᵀ) is nontrivial".into()),
        ));
    }

    let started = Instant::now();
    let mut trace = Vec::new();
    let mut mu = st.mu;
    for iter in 0..opts.max_iters {
        let kkt = sys.residual(&st, 0.0).norm_inf();
        if kkt <= opts.tol && st.complementarity() <= opts.tol {
            let secs = started.elapsed().as_secs_f64();
            return Ok(finish(st, SolveStatus::Converged, iter, trace, secs, None));
        }
        st.mu = mu;
        let res = sys.residual(&st, mu);
        let d = match sys.newton_step(&st, &res) {
            Ok(d) => d,
            Err(e) => {
                let secs = started.elapsed().as_secs_f64();
                return Ok(finish(st, SolveStatus::StructureError, iter, trace, secs, Some(e.to_string())));
            }
        };
        let newton_residual = opts.verify_newton.then(|| {
            let jac = sys.jacobian_dense(&st);
            (jac * d.stacked() + res.stacked()).norm()
        });
        let norm = res.norm2();
        match line_search(&sys, &st, &d, mu, norm, opts) {
            LineSearchOutcome::Accepted { step, state, .. } => {
                trace.push(IterationRecord {
                    iter,
                    mu,
                    residual_norm: norm,
                    kkt_residual: kkt,
                    step,
                    newton_residual,
                });
                st = state;
                mu = st.complementarity();
                if step == 1.0 {
                    mu *= opts.centering;
                }
                st.mu = mu;
            }
            LineSearchOutcome::Stalled => {
                trace.push(IterationRecord {
                    iter,
                    mu,
                    residual_norm: norm,
                    kkt_residual: kkt,
                    step: 0.0,
                    newton_residual,
                });
                let secs = started.elapsed().as_secs_f64();
                return Ok(finish(st, SolveStatus::LineSearchStall, iter + 1, trace, secs, None));
            }
        }
    }
    let kkt = sys.residual(&st, 0.0).norm_inf();
    let secs = started.elapsed().as_secs_f64();
    let status = if kkt <= opts.tol && st.complementarity() <= opts.tol {
        SolveStatus::Converged
    } else {
        SolveStatus::MaxIters
    };
    Ok(finish(st, status, opts.max_iters, trace, secs, None))
}
