//! Dense bounded revised simplex with an explicit basis inverse.

use super::{LinearProgram, Relaxation, Sense, Status};

const PIVOT_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 64;
const BLAND_AFTER: usize = 1_000;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum VarState {
    Basic,
    Lower,
    Upper,
}

struct Tableau {
    m: usize,
    cols: Vec<Vec<(usize, f64)>>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    x: Vec<f64>,
    state: Vec<VarState>,
    basis: Vec<usize>,
    /// Row-major `m x m` basis inverse.
    binv: Vec<f64>,
    b: Vec<f64>,
    cost: Vec<f64>,
    n_struct: usize,
    first_artificial: usize,
    pivots: usize,
}

enum Phase {
    Optimal,
    Unbounded,
    Limit,
    Singular,
}

impl Tableau {
    fn new(lp: &LinearProgram) -> Self {
        let m = lp.n_rows();
        let n = lp.n_cols();
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, r) in lp.rows.iter().enumerate() {
            for &(j, a) in &r.coeffs {
                if a != 0.0 {
                    cols[j].push((i, a));
                }
            }
        }
        let mut lb: Vec<f64> = lp.columns.iter().map(|c| c.lb).collect();
        let mut ub: Vec<f64> = lp.columns.iter().map(|c| c.ub).collect();
        for (i, r) in lp.rows.iter().enumerate() {
            match r.sense {
                Sense::Le => cols.push(vec![(i, 1.0)]),
                Sense::Ge => cols.push(vec![(i, -1.0)]),
                Sense::Eq => continue,
            }
            lb.push(0.0);
            ub.push(f64::INFINITY);
        }
        let mut x: Vec<f64> = lb.clone();
        let mut state = vec![VarState::Lower; x.len()];
        let b: Vec<f64> = lp.rows.iter().map(|r| r.rhs).collect();
        let mut resid = b.clone();
        for (j, col) in cols.iter().enumerate() {
            for &(i, a) in col {
                resid[i] -= a * x[j];
            }
        }
        let first_artificial = cols.len();
        let mut basis = Vec::with_capacity(m);
        let mut binv = vec![0.0; m * m];
        for i in 0..m {
            let s = if resid[i] >= 0.0 { 1.0 } else { -1.0 };
            cols.push(vec![(i, s)]);
            lb.push(0.0);
            ub.push(f64::INFINITY);
            x.push(resid[i].abs());
            state.push(VarState::Basic);
            basis.push(first_artificial + i);
            binv[i * m + i] = s;
        }
        let mut cost = vec![0.0; cols.len()];
        for c in cost.iter_mut().skip(first_artificial) {
            *c = 1.0;
        }
        Self { m, cols, lb, ub, x, state, basis, binv, b, cost, n_struct: n, first_artificial, pivots: 0 }
    }

    fn infeasibility(&self) -> f64 {
        self.x[self.first_artificial..].iter().sum()
    }

    fn column_times_binv(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let mut alpha = vec![0.0; m];
        for &(r, v) in &self.cols[j] {
            for (i, a) in alpha.iter_mut().enumerate() {
                *a += self.binv[i * m + r] * v;
            }
        }
        alpha
    }

    fn duals(&self) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for i in 0..m {
            let c = self.cost[self.basis[i]];
            if c != 0.0 {
                let row = &self.binv[i * m..(i + 1) * m];
                for (yk, bk) in y.iter_mut().zip(row) {
                    *yk += c * bk;
                }
            }
        }
        y
    }

    /// Rebuilds the basis inverse by Gauss-Jordan elimination and recomputes basic values.
    fn refactor(&mut self) -> bool {
        let m = self.m;
        let mut a = vec![0.0; m * m];
        for (k, &j) in self.basis.iter().enumerate() {
            for &(r, v) in &self.cols[j] {
                a[r * m + k] = v;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for c in 0..m {
            let p = (c..m).max_by(|&i, &k| a[i * m + c].abs().total_cmp(&a[k * m + c].abs())).unwrap();
            if a[p * m + c].abs() < 1e-11 {
                return false;
            }
            if p != c {
                for k in 0..m {
                    a.swap(p * m + k, c * m + k);
                    inv.swap(p * m + k, c * m + k);
                }
            }
            let piv = a[c * m + c];
            for k in 0..m {
                a[c * m + k] /= piv;
                inv[c * m + k] /= piv;
            }
            for i in 0..m {
                if i != c {
                    let f = a[i * m + c];
                    if f != 0.0 {
                        for k in 0..m {
                            a[i * m + k] -= f * a[c * m + k];
                            inv[i * m + k] -= f * inv[c * m + k];
                        }
                    }
                }
            }
        }
        self.binv = inv;
        let mut rhs = self.b.clone();
        for (j, col) in self.cols.iter().enumerate() {
            if self.state[j] != VarState::Basic {
                for &(i, v) in col {
                    rhs[i] -= v * self.x[j];
                }
            }
        }
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            self.x[self.basis[i]] = row.iter().zip(&rhs).map(|(a, b)| a * b).sum();
        }
        true
    }

    fn run(&mut self, max_pivots: usize) -> Phase {
        let m = self.m;
        let mut degenerate_run = 0usize;
        loop {
            if self.pivots >= max_pivots {
                return Phase::Limit;
            }
            let bland = degenerate_run >= BLAND_AFTER;
            let y = self.duals();
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.cols.len() {
                let st = self.state[j];
                if st == VarState::Basic || self.lb[j] >= self.ub[j] {
                    continue;
                }
                let d = self.cost[j] - self.cols[j].iter().map(|&(r, v)| y[r] * v).sum::<f64>();
                let eligible = (st == VarState::Lower && d < -OPT_TOL) || (st == VarState::Upper && d > OPT_TOL);
                if eligible {
                    if bland {
                        entering = Some((j, d));
                        break;
                    }
                    if entering.map_or(true, |(_, best)| d.abs() > best.abs()) {
                        entering = Some((j, d));
                    }
                }
            }
            let Some((j, d)) = entering else { return Phase::Optimal };
            let dir = if d < 0.0 { 1.0 } else { -1.0 };
            let alpha = self.column_times_binv(j);

            let mut t_best = f64::INFINITY;
            let mut leave: Option<(usize, bool)> = None;
            for i in 0..m {
                let rate = dir * alpha[i];
                let bi = self.basis[i];
                let limit = if rate > PIVOT_TOL && self.lb[bi].is_finite() {
                    Some(((self.x[bi] - self.lb[bi]) / rate, true))
                } else if rate < -PIVOT_TOL && self.ub[bi].is_finite() {
                    Some(((self.ub[bi] - self.x[bi]) / -rate, false))
                } else {
                    None
                };
                let Some((t, to_lower)) = limit else { continue };
                let t = t.max(0.0);
                let better = match leave {
                    None => true,
                    Some((r, _)) => {
                        if t < t_best - 1e-12 {
                            true
                        } else if t <= t_best + 1e-12 {
                            if bland {
                                bi < self.basis[r]
                            } else {
                                alpha[i].abs() > alpha[r].abs()
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    t_best = t_best.min(t);
                    leave = Some((i, to_lower));
                }
            }
            let span = self.ub[j] - self.lb[j];
            if span.is_finite() && span <= t_best {
                // bound flip
                let delta = dir * span;
                self.x[j] = if dir > 0.0 { self.ub[j] } else { self.lb[j] };
                self.state[j] = if dir > 0.0 { VarState::Upper } else { VarState::Lower };
                for i in 0..m {
                    self.x[self.basis[i]] -= alpha[i] * delta;
                }
                self.pivots += 1;
                degenerate_run = 0;
                continue;
            }
            let Some((r, to_lower)) = leave else { return Phase::Unbounded };
            let delta = dir * t_best;
            for i in 0..m {
                self.x[self.basis[i]] -= alpha[i] * delta;
            }
            self.x[j] += delta;
            let out = self.basis[r];
            self.x[out] = if to_lower { self.lb[out] } else { self.ub[out] };
            self.state[out] = if to_lower { VarState::Lower } else { VarState::Upper };
            self.state[j] = VarState::Basic;
            self.basis[r] = j;

            let piv = alpha[r];
            let (before, rest) = self.binv.split_at_mut(r * m);
            let (prow, after) = rest.split_at_mut(m);
            for v in prow.iter_mut() {
                *v /= piv;
            }
            for (i, row) in before.chunks_mut(m).chain(after.chunks_mut(m)).enumerate() {
                let idx = if i < r { i } else { i + 1 };
                let f = alpha[idx];
                if f != 0.0 {
                    for (a, p) in row.iter_mut().zip(prow.iter()) {
                        *a -= f * p;
                    }
                }
            }
            self.pivots += 1;
            degenerate_run = if t_best < 1e-12 { degenerate_run + 1 } else { 0 };
            if self.pivots % REFACTOR_EVERY == 0 && !self.refactor() {
                return Phase::Singular;
            }
        }
    }
}

/// Phase-one feasibility, followed by phase two when an objective is given.
pub(crate) fn solve_dense(lp: &LinearProgram, max_pivots: usize) -> Relaxation {
    if lp.columns.iter().any(|c| c.lb > c.ub) {
        return Relaxation { status: Status::Infeasible, x: Vec::new(), pivots: 0 };
    }
    let mut t = Tableau::new(lp);
    let scale = 1.0 + t.b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let fail = |status, t: &Tableau| Relaxation { status, x: Vec::new(), pivots: t.pivots };
    match t.run(max_pivots) {
        Phase::Optimal => {}
        Phase::Limit => return fail(Status::IterationLimit, &t),
        Phase::Singular | Phase::Unbounded => return fail(Status::NumericFailure, &t),
    }
    if !t.refactor() {
        return fail(Status::NumericFailure, &t);
    }
    if t.infeasibility() > super::PRIMAL_TOL * scale {
        return fail(Status::Infeasible, &t);
    }
    if let Some(obj) = &lp.objective {
        for j in t.first_artificial..t.cols.len() {
            t.ub[j] = 0.0;
            t.cost[j] = 0.0;
        }
        for &(j, c) in obj {
            t.cost[j] = c;
        }
        match t.run(max_pivots) {
            Phase::Optimal => {}
            Phase::Unbounded => log::warn!("objective unbounded; returning a feasible point"),
            Phase::Limit => return fail(Status::IterationLimit, &t),
            Phase::Singular => return fail(Status::NumericFailure, &t),
        }
        if !t.refactor() {
            return fail(Status::NumericFailure, &t);
        }
    }
    let x = t.x[..t.n_struct].to_vec();
    Relaxation { status: Status::Feasible, x, pivots: t.pivots }
}
