//! Bound propagation that fixes forced columns and drops settled rows.
//!
//! Rows whose minimal (or maximal) activity already meets the right-hand side
//! force every column to the corresponding bound. Singleton rows become bounds.
//! Fixing cascades until no rule applies.

use std::collections::VecDeque;

use super::{LinearProgram, Sense};

const TOL: f64 = 1e-9;

/// Reduced program plus the data needed to map its points back.
#[derive(Debug, Clone)]
pub struct Presolved {
    pub reduced: LinearProgram,
    /// Original index of each reduced column.
    pub kept: Vec<usize>,
    /// Value of every original column that was fixed.
    pub values: Vec<f64>,
}

impl Presolved {
    /// Full-length point from a point of the reduced program.
    pub fn expand(&self, xr: &[f64]) -> Vec<f64> {
        let mut x = self.values.clone();
        for (k, &j) in self.kept.iter().enumerate() {
            x[j] = xr[k];
        }
        x
    }
}

struct State {
    lb: Vec<f64>,
    ub: Vec<f64>,
    fixed: Vec<bool>,
    integer: Vec<bool>,
}

impl State {
    fn tighten(&mut self, j: usize, lo: f64, hi: f64) -> Result<bool, ()> {
        let (mut lo, mut hi) = (lo.max(self.lb[j]), hi.min(self.ub[j]));
        if self.integer[j] {
            lo = (lo - TOL).ceil();
            hi = (hi + TOL).floor();
        }
        let scale = TOL * (1.0 + lo.abs().max(hi.abs().min(1e12)));
        if lo > hi + scale {
            return Err(());
        }
        if lo > hi {
            hi = lo;
        }
        let changed = lo > self.lb[j] || hi < self.ub[j];
        self.lb[j] = lo;
        self.ub[j] = hi;
        if hi - lo <= scale && !self.fixed[j] {
            self.fixed[j] = true;
            self.ub[j] = self.lb[j];
            return Ok(true);
        }
        Ok(changed)
    }
}

/// Returns `None` when propagation proves the program infeasible.
pub fn presolve(lp: &LinearProgram) -> Option<Presolved> {
    let n = lp.n_cols();
    let mut st = State {
        lb: lp.columns.iter().map(|c| c.lb).collect(),
        ub: lp.columns.iter().map(|c| c.ub).collect(),
        fixed: vec![false; n],
        integer: lp.columns.iter().map(|c| c.integer).collect(),
    };
    for j in 0..n {
        let (lo, hi) = (st.lb[j], st.ub[j]);
        st.tighten(j, lo, hi).ok()?;
    }
    let mut col_rows: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, r) in lp.rows.iter().enumerate() {
        for &(j, a) in &r.coeffs {
            if a != 0.0 {
                col_rows[j].push(i);
            }
        }
    }
    let mut dropped = vec![false; lp.n_rows()];
    let mut queued = vec![true; lp.n_rows()];
    let mut queue: VecDeque<usize> = (0..lp.n_rows()).collect();
    while let Some(i) = queue.pop_front() {
        queued[i] = false;
        if dropped[i] {
            continue;
        }
        let r = &lp.rows[i];
        let mut constant = 0.0;
        let mut live: Vec<(usize, f64)> = Vec::new();
        for &(j, a) in &r.coeffs {
            if a == 0.0 {
                continue;
            }
            if st.fixed[j] {
                constant += a * st.lb[j];
            } else {
                live.push((j, a));
            }
        }
        let rhs = r.rhs - constant;
        let slack = TOL * (1.0 + rhs.abs());
        let mut touched: Vec<usize> = Vec::new();
        let le = matches!(r.sense, Sense::Le | Sense::Eq);
        let ge = matches!(r.sense, Sense::Ge | Sense::Eq);
        if live.is_empty() {
            if (le && -rhs > slack) || (ge && rhs > slack) {
                return None;
            }
            dropped[i] = true;
            continue;
        }
        if live.len() == 1 {
            let (j, a) = live[0];
            let v = rhs / a;
            let (lo, hi) = match (r.sense, a > 0.0) {
                (Sense::Eq, _) => (v, v),
                (Sense::Le, true) | (Sense::Ge, false) => (f64::NEG_INFINITY, v),
                (Sense::Le, false) | (Sense::Ge, true) => (v, f64::INFINITY),
            };
            if st.tighten(j, lo, hi).ok()? {
                touched.push(j);
            }
            dropped[i] = true;
        } else {
            let min_act: f64 = live.iter().map(|&(j, a)| if a > 0.0 { a * st.lb[j] } else { a * st.ub[j] }).sum();
            let max_act: f64 = live.iter().map(|&(j, a)| if a > 0.0 { a * st.ub[j] } else { a * st.lb[j] }).sum();
            if (le && min_act > rhs + slack) || (ge && max_act < rhs - slack) {
                return None;
            }
            if le && min_act.is_finite() && min_act >= rhs - slack {
                for &(j, a) in &live {
                    let v = if a > 0.0 { st.lb[j] } else { st.ub[j] };
                    st.tighten(j, v, v).ok()?;
                    touched.push(j);
                }
                dropped[i] = true;
            } else if ge && max_act.is_finite() && max_act <= rhs + slack {
                for &(j, a) in &live {
                    let v = if a > 0.0 { st.ub[j] } else { st.lb[j] };
                    st.tighten(j, v, v).ok()?;
                    touched.push(j);
                }
                dropped[i] = true;
            } else if (r.sense == Sense::Le && max_act <= rhs + slack) || (r.sense == Sense::Ge && min_act >= rhs - slack) {
                dropped[i] = true;
            }
        }
        for j in touched {
            for &k in &col_rows[j] {
                if !queued[k] && !dropped[k] {
                    queued[k] = true;
                    queue.push_back(k);
                }
            }
        }
    }

    let mut map = vec![usize::MAX; n];
    let mut reduced = LinearProgram::new();
    let mut kept = Vec::new();
    for j in 0..n {
        if !st.fixed[j] {
            map[j] = reduced.add_column(lp.columns[j].name.clone(), st.lb[j], st.ub[j], lp.columns[j].integer);
            kept.push(j);
        }
    }
    for (i, r) in lp.rows.iter().enumerate() {
        if dropped[i] {
            continue;
        }
        let mut constant = 0.0;
        let mut coeffs = Vec::new();
        for &(j, a) in &r.coeffs {
            if st.fixed[j] {
                constant += a * st.lb[j];
            } else if a != 0.0 {
                coeffs.push((map[j], a));
            }
        }
        reduced.add_row(r.name.clone(), coeffs, r.sense, r.rhs - constant);
    }
    if let Some(obj) = &lp.objective {
        reduced.objective = Some(obj.iter().filter(|(j, _)| !st.fixed[*j]).map(|&(j, c)| (map[j], c)).collect());
    }
    let values = (0..n).map(|j| if st.fixed[j] { st.lb[j] } else { 0.0 }).collect();
    Some(Presolved { reduced, kept, values })
}
