//! Sparse LU-based simplex backend for large relaxations and integer programs.

use std::time::Duration;

use microlp::{ComparisonOp, OptimizationDirection, Problem, SolveOptions, Variable};

use super::{LinearProgram, Relaxation, Sense, Status};

fn int_bound(v: f64, lower: bool) -> i32 {
    if v.is_infinite() {
        return if v > 0.0 { i32::MAX } else { i32::MIN };
    }
    let r = if lower { v.ceil() } else { v.floor() };
    r.clamp(i32::MIN as f64, i32::MAX as f64) as i32
}

fn build(lp: &LinearProgram, integer: bool) -> (Problem, Vec<Variable>) {
    let mut cost = vec![0.0; lp.n_cols()];
    if let Some(obj) = &lp.objective {
        for &(j, c) in obj {
            cost[j] += c;
        }
    }
    let mut p = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = lp
        .columns
        .iter()
        .zip(&cost)
        .map(|(c, &k)| {
            if integer && c.integer {
                p.add_integer_var(k, (int_bound(c.lb, true), int_bound(c.ub, false)))
            } else {
                p.add_var(k, (c.lb, c.ub))
            }
        })
        .collect();
    for r in &lp.rows {
        let op = match r.sense {
            Sense::Le => ComparisonOp::Le,
            Sense::Eq => ComparisonOp::Eq,
            Sense::Ge => ComparisonOp::Ge,
        };
        p.add_constraint(r.coeffs.iter().map(|&(j, a)| (vars[j], a)), op, r.rhs);
    }
    (p, vars)
}

fn run(lp: &LinearProgram, integer: bool, node_limit: Option<u64>, time_limit: Option<Duration>) -> Relaxation {
    if lp.columns.iter().any(|c| c.lb > c.ub) {
        return Relaxation { status: Status::Infeasible, x: Vec::new(), pivots: 0 };
    }
    let (p, vars) = build(lp, integer);
    let mut opts = SolveOptions::default();
    opts.node_limit = node_limit;
    opts.time_limit = time_limit;
    match p.solve_with(opts) {
        Ok(outcome) => match outcome.solution() {
            Some(sol) => {
                let x = vars.iter().map(|&v| sol.var_value_raw(v)).collect();
                Relaxation { status: Status::Feasible, x, pivots: sol.stats().lp_iterations as usize }
            }
            None => Relaxation { status: Status::IterationLimit, x: Vec::new(), pivots: 0 },
        },
        Err(microlp::Error::Infeasible) => Relaxation { status: Status::Infeasible, x: Vec::new(), pivots: 0 },
        Err(e) => {
            log::warn!("sparse backend failed: {e}");
            Relaxation { status: Status::NumericFailure, x: Vec::new(), pivots: 0 }
        }
    }
}

pub(crate) fn solve_sparse(lp: &LinearProgram, time_limit: Option<Duration>) -> Relaxation {
    run(lp, false, None, time_limit)
}

/// Warm-started branch-and-bound inside the sparse backend.
pub(crate) fn solve_sparse_mip(lp: &LinearProgram, node_limit: usize, time_limit: Option<Duration>) -> Relaxation {
    run(lp, true, Some(node_limit as u64), time_limit)
}
