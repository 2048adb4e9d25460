//! Depth-first branch-and-bound on the most fractional integer column.

use super::presolve::presolve;
use super::sparse::solve_sparse_mip;
use super::{solve_relaxation, Engine, LinearProgram, SolveResult, SolveStats, SolverOptions, Status, INT_TOL};

struct NodeOutcome {
    status: Status,
    x: Vec<f64>,
    pivots: usize,
    engine: &'static str,
    reduced: (usize, usize),
}

fn solve_node(lp: &LinearProgram, opts: &SolverOptions) -> NodeOutcome {
    let fail = |status| NodeOutcome { status, x: Vec::new(), pivots: 0, engine: "presolve", reduced: (0, 0) };
    if !opts.presolve {
        let (r, engine) = solve_relaxation(lp, opts);
        return NodeOutcome { status: r.status, x: r.x, pivots: r.pivots, engine, reduced: (lp.n_cols(), lp.n_rows()) };
    }
    let Some(p) = presolve(lp) else { return fail(Status::Infeasible) };
    let reduced = (p.reduced.n_cols(), p.reduced.n_rows());
    if p.reduced.n_rows() == 0 {
        // remaining columns are only bounded; take the value closest to zero
        let xr: Vec<f64> = p.reduced.columns.iter().map(|c| if c.lb > 0.0 { c.lb } else if c.ub < 0.0 { c.ub } else { 0.0 }).collect();
        return NodeOutcome { status: Status::Feasible, x: p.expand(&xr), pivots: 0, engine: "presolve", reduced };
    }
    let (r, engine) = solve_relaxation(&p.reduced, opts);
    let x = if r.status == Status::Feasible { p.expand(&r.x) } else { Vec::new() };
    NodeOutcome { status: r.status, x, pivots: r.pivots, engine, reduced }
}

fn result(status: Status, point: Option<Vec<f64>>, stats: SolveStats) -> SolveResult {
    SolveResult { status, point, stats }
}

pub(crate) fn solve_root(lp: &LinearProgram, opts: &SolverOptions) -> SolveResult {
    let n = solve_node(lp, opts);
    let stats = SolveStats {
        iterations: n.pivots,
        nodes: 1,
        engine: n.engine.to_string(),
        reduced_cols: n.reduced.0,
        reduced_rows: n.reduced.1,
        ..SolveStats::default()
    };
    let point = (n.status == Status::Feasible).then_some(n.x);
    result(n.status, point, stats)
}

/// Most fractional integer column, ties to the lowest index.
fn branching_column(lp: &LinearProgram, x: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64, f64)> = None;
    for (j, c) in lp.columns.iter().enumerate() {
        if !c.integer {
            continue;
        }
        let frac = x[j] - x[j].floor();
        if frac > INT_TOL && frac < 1.0 - INT_TOL {
            let score = (frac - 0.5).abs();
            if best.map_or(true, |(_, _, s)| score < s) {
                best = Some((j, x[j], score));
            }
        }
    }
    best.map(|(j, v, _)| (j, v))
}

/// Large reduced programs are searched by the sparse backend, which keeps one
/// warm-started basis for the whole tree.
fn sparse_search(lp: &LinearProgram, opts: &SolverOptions) -> Option<SolveResult> {
    if opts.engine == Engine::Dense || !lp.has_integers() {
        return None;
    }
    let (reduced, expand): (LinearProgram, Box<dyn Fn(&[f64]) -> Vec<f64>>) = if opts.presolve {
        let Some(p) = presolve(lp) else {
            let stats = SolveStats { nodes: 1, engine: "presolve".into(), ..SolveStats::default() };
            return Some(result(Status::Infeasible, None, stats));
        };
        let red = p.reduced.clone();
        (red, Box::new(move |xr: &[f64]| p.expand(xr)))
    } else {
        (lp.clone(), Box::new(|xr: &[f64]| xr.to_vec()))
    };
    if opts.engine == Engine::Auto && reduced.n_rows() <= opts.dense_max_rows {
        return None;
    }
    let r = solve_sparse_mip(&reduced, opts.node_limit, opts.time_limit);
    let stats = SolveStats {
        iterations: r.pivots,
        nodes: 1,
        engine: "sparse-branch-and-bound".into(),
        reduced_cols: reduced.n_cols(),
        reduced_rows: reduced.n_rows(),
        ..SolveStats::default()
    };
    let point = (r.status == Status::Feasible).then(|| expand(&r.x));
    Some(result(r.status, point, stats))
}

pub(crate) fn branch_and_bound(lp: &LinearProgram, opts: &SolverOptions) -> SolveResult {
    if let Some(res) = sparse_search(lp, opts) {
        return res;
    }
    let mut stats = SolveStats::default();
    let mut stack: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new()];
    let mut inconclusive: Option<Status> = None;
    let started = std::time::Instant::now();
    while let Some(changes) = stack.pop() {
        if stats.nodes >= opts.node_limit || opts.time_limit.is_some_and(|t| started.elapsed() >= t) {
            return result(Status::IterationLimit, None, stats);
        }
        stats.nodes += 1;
        let mut node = lp.clone();
        for &(j, lo, hi) in &changes {
            node.columns[j].lb = lo;
            node.columns[j].ub = hi;
        }
        let out = solve_node(&node, opts);
        stats.iterations += out.pivots;
        if stats.nodes == 1 {
            stats.engine = out.engine.to_string();
            stats.reduced_cols = out.reduced.0;
            stats.reduced_rows = out.reduced.1;
        }
        match out.status {
            Status::Feasible => {}
            Status::Infeasible => continue,
            other => {
                inconclusive.get_or_insert(other);
                continue;
            }
        }
        let Some((j, v)) = branching_column(lp, &out.x) else {
            return result(Status::Feasible, Some(out.x), stats);
        };
        let (lo, hi) = (node.columns[j].lb, node.columns[j].ub);
        let down: Vec<_> = changes.iter().copied().chain([(j, lo, v.floor())]).collect();
        let up: Vec<_> = changes.iter().copied().chain([(j, v.ceil(), hi)]).collect();
        // the child nearer the relaxed value is explored first
        if v - v.floor() < 0.5 {
            stack.push(up);
            stack.push(down);
        } else {
            stack.push(down);
            stack.push(up);
        }
    }
    result(inconclusive.unwrap_or(Status::Infeasible), None, stats)
}
