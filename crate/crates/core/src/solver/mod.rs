//! Feasibility solving for linear programs: a dense bounded simplex, a sparse
//! backend for large relaxations, depth-first branch-and-bound and MPS export.

mod bnb;
pub mod mps;
mod presolve;
mod simplex;
mod sparse;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mps::{export_mps, import_solution, parse_solution, write_mps, write_solution};
pub use presolve::{presolve, Presolved};

pub const PRIMAL_TOL: f64 = 1e-7;
pub const INT_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("column {0} has an infinite lower bound")]
    FreeColumn(String),
    #[error("non-finite coefficient in row {0}")]
    NonFinite(String),
    #[error("unknown variable `{0}` in solution file")]
    UnknownVariable(String),
    #[error("malformed solution line {line}: {text}")]
    SolutionFormat { line: usize, text: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub lb: f64,
    pub ub: f64,
    pub integer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates the row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let act = self.activity(x);
        match self.sense {
            Sense::Le => (act - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - act).max(0.0),
            Sense::Eq => (act - self.rhs).abs(),
        }
    }
}

/// Sparse linear feasibility program with bounded columns.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub columns: Vec<Column>,
    pub rows: Vec<Row>,
    /// Optional minimization objective; feasibility only when absent.
    pub objective: Option<Vec<(usize, f64)>>,
}

/// Largest violation found by [`LinearProgram::check_point`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub what: String,
    pub amount: f64,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_column(&mut self, name: impl Into<String>, lb: f64, ub: f64, integer: bool) -> usize {
        self.columns.push(Column { name: name.into(), lb, ub, integer });
        self.columns.len() - 1
    }

    pub fn add_row(&mut self, name: impl Into<String>, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> usize {
        self.rows.push(Row { name: name.into(), coeffs, sense, rhs });
        self.rows.len() - 1
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|r| r.coeffs.len()).sum()
    }

    pub fn has_integers(&self) -> bool {
        self.columns.iter().any(|c| c.integer)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Worst row or bound violation, with row tolerance scaled by `1 + |rhs|`.
    pub fn check_point(&self, x: &[f64], tol: f64) -> Option<Violation> {
        if x.len() != self.n_cols() {
            return Some(Violation { what: "dimension".into(), amount: f64::INFINITY });
        }
        let mut worst: Option<Violation> = None;
        let mut consider = |what: &dyn Fn() -> String, amount: f64, allowed: f64| {
            if amount > allowed && worst.as_ref().map_or(true, |w| amount > w.amount) {
                worst = Some(Violation { what: what(), amount });
            }
        };
        for (c, v) in self.columns.iter().zip(x) {
            if !v.is_finite() {
                consider(&|| format!("column {} not finite", c.name), f64::INFINITY, 0.0);
                continue;
            }
            consider(&|| format!("column {} below lower bound", c.name), c.lb - v, tol);
            consider(&|| format!("column {} above upper bound", c.name), v - c.ub, tol);
        }
        for r in &self.rows {
            consider(&|| format!("row {}", r.name), r.violation(x), tol * (1.0 + r.rhs.abs()));
        }
        worst
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        for c in &self.columns {
            if c.lb == f64::NEG_INFINITY || c.lb.is_nan() || c.ub.is_nan() {
                return Err(SolverError::FreeColumn(c.name.clone()));
            }
        }
        for r in &self.rows {
            if !r.rhs.is_finite() || r.coeffs.iter().any(|(j, a)| !a.is_finite() || *j >= self.columns.len()) {
                return Err(SolverError::NonFinite(r.name.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Feasible,
    Infeasible,
    IterationLimit,
    NumericFailure,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub nodes: usize,
    pub wall_time: f64,
    pub engine: String,
    /// Columns and rows left after presolve at the root.
    pub reduced_cols: usize,
    pub reduced_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: Status,
    pub point: Option<Vec<f64>>,
    pub stats: SolveStats,
}

impl SolveResult {
    pub fn is_feasible(&self) -> bool {
        self.status == Status::Feasible
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    /// Dense simplex for small reduced programs, sparse backend otherwise.
    Auto,
    Dense,
    Sparse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub engine: Engine,
    pub max_pivots: usize,
    pub node_limit: usize,
    pub presolve: bool,
    /// Reduced programs with at most this many rows use the dense engine under `Auto`.
    pub dense_max_rows: usize,
    /// Wall-clock budget; running out reports `IterationLimit`.
    pub time_limit: Option<std::time::Duration>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { engine: Engine::Auto, max_pivots: 1_000_000, node_limit: 100_000, presolve: true, dense_max_rows: 300, time_limit: None }
    }
}

/// Raw outcome of one relaxation solve on an already reduced program.
pub(crate) struct Relaxation {
    pub status: Status,
    pub x: Vec<f64>,
    pub pivots: usize,
}

pub(crate) fn solve_relaxation(lp: &LinearProgram, opts: &SolverOptions) -> (Relaxation, &'static str) {
    let dense = match opts.engine {
        Engine::Dense => true,
        Engine::Sparse => false,
        Engine::Auto => lp.n_rows() <= opts.dense_max_rows,
    };
    if dense {
        (simplex::solve_dense(lp, opts.max_pivots), "dense-simplex")
    } else {
        (sparse::solve_sparse(lp, opts.time_limit), "sparse-simplex")
    }
}

fn finish(lp: &LinearProgram, mut res: SolveResult, started: Instant, exact: bool) -> SolveResult {
    res.stats.wall_time = started.elapsed().as_secs_f64();
    if let Some(x) = res.point.as_mut() {
        if exact {
            for (v, c) in x.iter_mut().zip(&lp.columns) {
                if c.integer {
                    *v = v.round();
                }
            }
        }
        let tol = if exact && !lp.columns.iter().any(|c| !c.integer) { 1e-9 } else { PRIMAL_TOL };
        if let Some(v) = lp.check_point(x, tol) {
            log::warn!("solver point rejected by re-validation: {} off by {:e}", v.what, v.amount);
            res.status = Status::NumericFailure;
            res.point = None;
        }
    }
    res
}

/// Finds a point satisfying all rows and bounds, ignoring integrality.
pub fn solve_lp(lp: &LinearProgram, opts: &SolverOptions) -> Result<SolveResult, SolverError> {
    lp.validate()?;
    let started = Instant::now();
    let mut relaxed = lp.clone();
    for c in &mut relaxed.columns {
        c.integer = false;
    }
    let res = bnb::solve_root(&relaxed, opts);
    Ok(finish(lp, res, started, false))
}

/// Finds a point satisfying all rows, bounds and integrality flags.
pub fn solve_ilp(lp: &LinearProgram, opts: &SolverOptions) -> Result<SolveResult, SolverError> {
    lp.validate()?;
    let started = Instant::now();
    let res = bnb::branch_and_bound(lp, opts);
    let exact = lp.has_integers();
    Ok(finish(lp, res, started, exact))
}
