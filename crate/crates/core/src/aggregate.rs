//! Histogram-level algebra: aggregate dynamics, cycle assignments and their
//! counts, co-prime grouping of cycle lengths, averaging and exact steering
//! between histograms inside a strongly connected component.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::DiscreteCountingSet;
use crate::graph::{class_labels, gcd_u64, lcm_u64, Component, Cycle, GraphError, LabeledDigraph};

/// Absolute tolerance for real-valued comparisons.
pub const REAL_TOL: f64 = 1e-9;
pub const DEFAULT_LCM_CAP: u64 = 100_000;

#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error("input violates the aggregate constraints: {0}")]
    InputViolation(String),
    #[error("joint count needs {rows} rows, above the cap of {cap}; use conservative grouping")]
    LcmOverflow { rows: u64, cap: u64 },
    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),
    #[error("class sums {from:?} cannot be rotated onto {to:?}")]
    ParityMismatch { from: Vec<f64>, to: Vec<f64>, horizon: Option<usize> },
    #[error("component is not controllable within {cap} steps")]
    NotPrimitive { cap: usize },
    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// One aggregate step: `w'_q = sum of r_{q'}^mu over edges (q', mu, q)`.
///
/// `r` is indexed by `q * n_modes + mu`. Use `tol = 0` for integer data.
pub fn step(w: &[f64], r: &[f64], g: &LabeledDigraph, tol: f64) -> Result<Vec<f64>, AggregateError> {
    check_input(w, r, g, tol)?;
    let nm = g.n_modes();
    let mut next = vec![0.0; g.n_nodes()];
    for q in 0..g.n_nodes() {
        for m in 0..nm {
            let v = r[q * nm + m];
            if v != 0.0 {
                if let Some(d) = g.successor(q, m) {
                    next[d] += v;
                }
            }
        }
    }
    Ok(next)
}

/// Checks `r >= 0`, mass only on existing actions and `sum_mu r_q^mu = w_q`.
pub fn check_input(w: &[f64], r: &[f64], g: &LabeledDigraph, tol: f64) -> Result<(), AggregateError> {
    let nm = g.n_modes();
    if w.len() != g.n_nodes() || r.len() != g.n_nodes() * nm {
        return Err(AggregateError::InputViolation("dimension mismatch".into()));
    }
    for q in 0..g.n_nodes() {
        let mut total = 0.0;
        for m in 0..nm {
            let v = r[q * nm + m];
            if v < -tol {
                return Err(AggregateError::InputViolation(format!("r[{q}][{m}] = {v} < 0")));
            }
            if v.abs() > tol && g.successor(q, m).is_none() {
                return Err(AggregateError::InputViolation(format!("mass {v} on missing action ({q}, {m})")));
            }
            total += v;
        }
        if (total - w[q]).abs() > tol {
            return Err(AggregateError::InputViolation(format!("node {q}: inputs sum to {total}, state is {}", w[q])));
        }
    }
    Ok(())
}

/// `alpha^{(s)}(i) = alpha((i - s) mod |C|)`.
pub fn circulate(alpha: &[f64], s: usize) -> Vec<f64> {
    let n = alpha.len();
    (0..n).map(|i| alpha[(i + n - s % n) % n]).collect()
}

fn membership(cycle: &Cycle, x: &DiscreteCountingSet) -> Vec<bool> {
    cycle.steps().iter().map(|&(q, m)| x.contains(q, m)).collect()
}

/// Mass of the circulated assignment lying in `x` at time `s`.
pub fn x_count(cycle: &Cycle, alpha: &[f64], s: usize, x: &DiscreteCountingSet) -> f64 {
    let shifted = circulate(alpha, s);
    membership(cycle, x).iter().zip(&shifted).filter(|(b, _)| **b).map(|(_, a)| a).sum()
}

/// `B[s][m] = 1` iff position `(m + s) mod |C|` of the cycle lies in `x`.
pub fn circulant_matrix(cycle: &Cycle, x: &DiscreteCountingSet) -> Vec<Vec<u8>> {
    let mem = membership(cycle, x);
    let n = mem.len();
    (0..n).map(|s| (0..n).map(|m| mem[(m + s) % n] as u8).collect()).collect()
}

/// Largest X-count over all shifts, `||B alpha||_inf`.
pub fn maxcnt(cycle: &Cycle, alpha: &[f64], x: &DiscreteCountingSet) -> f64 {
    circulant_matrix(cycle, x)
        .iter()
        .map(|row| row.iter().zip(alpha).map(|(b, a)| *b as f64 * a).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Least common multiple of the cycle lengths.
pub fn lcm_of(lengths: &[usize]) -> u64 {
    lengths.iter().fold(1u64, |acc, &l| lcm_u64(acc, l as u64))
}

/// Per-shift joint counts over one common period; fails when the period exceeds `cap`.
pub fn joint_counts(cycles: &[&Cycle], alphas: &[&[f64]], x: &DiscreteCountingSet, cap: u64) -> Result<Vec<f64>, AggregateError> {
    let lens: Vec<usize> = cycles.iter().map(|c| c.len()).collect();
    let l = lcm_of(&lens);
    if l > cap {
        return Err(AggregateError::LcmOverflow { rows: l, cap });
    }
    let mut rows = vec![0.0; l as usize];
    for (c, a) in cycles.iter().zip(alphas) {
        let base: Vec<f64> = (0..c.len()).map(|s| x_count(c, a, s, x)).collect();
        for (s, row) in rows.iter_mut().enumerate() {
            *row += base[s % c.len()];
        }
    }
    Ok(rows)
}

/// Largest simultaneous X-count of several circulating assignments.
pub fn joint_maxcnt(cycles: &[Cycle], alphas: &[Vec<f64>], x: &DiscreteCountingSet, cap: u64) -> Result<f64, AggregateError> {
    if cycles.len() != alphas.len() {
        return Err(AggregateError::InvalidAssignment("cycle and assignment counts differ".into()));
    }
    let cs: Vec<&Cycle> = cycles.iter().collect();
    let al: Vec<&[f64]> = alphas.iter().map(|a| a.as_slice()).collect();
    Ok(joint_counts(&cs, &al, x, cap)?.into_iter().fold(0.0, f64::max))
}

/// Groups cycle indices so lengths in different groups are co-prime; this is
/// the finest such partition (connected components of the `gcd > 1` relation).
pub fn coprime_partition(lengths: &[usize]) -> Vec<Vec<usize>> {
    let n = lengths.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        let mut i = i;
        while p[i] != r {
            let nx = p[i];
            p[i] = r;
            i = nx;
        }
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if gcd_u64(lengths[i] as u64, lengths[j] as u64) > 1 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
}

/// Total joint-count rows needed when each group gets its own period.
pub fn partition_rows(lengths: &[usize], groups: &[Vec<usize>]) -> u64 {
    groups.iter().map(|g| lcm_of(&g.iter().map(|&i| lengths[i]).collect::<Vec<_>>())).sum()
}

/// Groups cycle indices by length, ascending.
pub fn length_groups(lengths: &[usize]) -> Vec<Vec<usize>> {
    let mut distinct: Vec<usize> = lengths.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    distinct.iter().map(|&l| (0..lengths.len()).filter(|&i| lengths[i] == l).collect()).collect()
}

/// Sum of per-group joint counts over a partition of the cycles.
pub fn grouped_joint(cycles: &[Cycle], alphas: &[Vec<f64>], x: &DiscreteCountingSet, groups: &[Vec<usize>], cap: u64) -> Result<f64, AggregateError> {
    let mut total = 0.0;
    for g in groups {
        let cs: Vec<Cycle> = g.iter().map(|&i| cycles[i].clone()).collect();
        let al: Vec<Vec<f64>> = g.iter().map(|&i| alphas[i].clone()).collect();
        total += joint_maxcnt(&cs, &al, x, cap)?;
    }
    Ok(total)
}

/// Upper bound on the joint count that groups cycles by length.
pub fn conservative_joint(cycles: &[Cycle], alphas: &[Vec<f64>], x: &DiscreteCountingSet) -> f64 {
    let lens: Vec<usize> = cycles.iter().map(|c| c.len()).collect();
    grouped_joint(cycles, alphas, x, &length_groups(&lens), u64::MAX).expect("length groups never overflow")
}

/// `alpha(i) = totals[i mod P] / (|C| / P)`.
pub fn average_assignment(len: usize, period: usize, totals: &[f64]) -> Result<Vec<f64>, AggregateError> {
    if period == 0 || len % period != 0 {
        return Err(AggregateError::InvalidAssignment(format!("period {period} does not divide cycle length {len}")));
    }
    if totals.len() != period || totals.iter().any(|t| *t < 0.0) {
        return Err(AggregateError::InvalidAssignment("need one nonnegative total per residue class".into()));
    }
    let reps = (len / period) as f64;
    Ok((0..len).map(|i| totals[i % period] / reps).collect())
}

/// Residue-class sums `N_p = sum_i alpha(p + i P)`.
pub fn class_totals(alpha: &[f64], period: usize) -> Vec<f64> {
    let mut t = vec![0.0; period];
    for (i, a) in alpha.iter().enumerate() {
        t[i % period] += a;
    }
    t
}

/// Subcycle with its averaged assignment, aligned so index 0 is the split node.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPart {
    pub steps: Vec<(usize, usize)>,
    pub alpha: Vec<f64>,
}

impl SplitPart {
    pub fn cycle(&self) -> Cycle {
        Cycle::canonical(self.steps.clone())
    }

    /// Canonical cycle together with the assignment rotated to match it.
    pub fn canonical(&self) -> (Cycle, Vec<f64>) {
        let n = self.steps.len();
        let k = (0..n)
            .min_by(|&a, &b| {
                let ra = self.steps[a..].iter().chain(&self.steps[..a]);
                let rb = self.steps[b..].iter().chain(&self.steps[..b]);
                ra.cmp(rb)
            })
            .unwrap_or(0);
        let steps: Vec<_> = self.steps[k..].iter().chain(&self.steps[..k]).copied().collect();
        let alpha: Vec<_> = self.alpha[k..].iter().chain(&self.alpha[..k]).copied().collect();
        (Cycle::canonical(steps.clone()), alpha)
    }
}

/// Splits a cycle through `node` twice into two subcycles carrying
/// proportional P-average assignments.
pub fn split_cycle_average(cycle: &Cycle, alpha: &[f64], node: usize, period: usize) -> Result<(SplitPart, SplitPart), AggregateError> {
    let n = cycle.len();
    if alpha.len() != n {
        return Err(AggregateError::InvalidAssignment("assignment length differs from cycle length".into()));
    }
    let pos: Vec<usize> = (0..n).filter(|&i| cycle.state(i) == node).collect();
    if pos.len() < 2 {
        return Err(AggregateError::InvalidAssignment(format!("node {node} is not visited twice")));
    }
    let (a, b) = (pos[0], pos[1]);
    let (l1, l2) = (b - a, n - (b - a));
    if period == 0 || n % period != 0 || l1 % period != 0 || l2 % period != 0 {
        return Err(AggregateError::InvalidAssignment(format!("period {period} must divide {n}, {l1} and {l2}")));
    }
    // rotate so the split node sits at index 0, keeping residues aligned with the cycle
    let steps: Vec<(usize, usize)> = (0..n).map(|i| (cycle.state(a + i), cycle.mode(a + i))).collect();
    let rotated: Vec<f64> = (0..n).map(|i| alpha[(a + i) % n]).collect();
    let totals = class_totals(&rotated, period);
    let scale = |l: usize| totals.iter().map(|t| t * l as f64 / n as f64).collect::<Vec<f64>>();
    let first = SplitPart { steps: steps[..l1].to_vec(), alpha: average_assignment(l1, period, &scale(l1))? };
    let second = SplitPart { steps: steps[l1..].to_vec(), alpha: average_assignment(l2, period, &scale(l2))? };
    Ok((first, second))
}

/// Steering result: inputs `r(0..T-1)` moving `w_from` to `w_to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteerPlan {
    pub horizon: usize,
    pub period: usize,
    /// Class rotation used by the plan.
    pub rotation: usize,
    /// Every class rotation compatible with the class sums.
    pub compatible_rotations: Vec<usize>,
    pub inputs: Vec<Vec<f64>>,
}

/// Boolean reachability in exactly `t` steps inside a node mask, one bitset per source.
struct Reach {
    words: usize,
    sets: Vec<Vec<u64>>,
}

impl Reach {
    fn identity(n: usize) -> Self {
        let words = n.div_ceil(64);
        let sets = (0..n)
            .map(|u| {
                let mut s = vec![0u64; words];
                s[u / 64] |= 1 << (u % 64);
                s
            })
            .collect();
        Self { words, sets }
    }

    fn contains(&self, u: usize, v: usize) -> bool {
        self.sets[u][v / 64] >> (v % 64) & 1 == 1
    }

    fn advance(&self, adj: &[Vec<usize>]) -> Self {
        let sets = self
            .sets
            .iter()
            .map(|s| {
                let mut out = vec![0u64; self.words];
                for (wi, &word) in s.iter().enumerate() {
                    let mut bits = word;
                    while bits != 0 {
                        let b = bits.trailing_zeros() as usize;
                        bits &= bits - 1;
                        for &d in &adj[wi * 64 + b] {
                            out[d / 64] |= 1 << (d % 64);
                        }
                    }
                }
                out
            })
            .collect();
        Self { words: self.words, sets }
    }
}

fn integral(w: &[f64]) -> bool {
    w.iter().all(|v| *v >= 0.0 && v.fract() == 0.0)
}

/// Moves the histogram `w_from` to `w_to` inside a nontrivial component.
///
/// With `horizon = None` the horizon is the smallest `T` at which every node
/// of each periodic class reaches every node of the rotated class in exactly
/// `T` steps. A fixed horizon must have a compatible class rotation.
pub fn steer(
    g: &LabeledDigraph,
    comp: &Component,
    w_from: &[f64],
    w_to: &[f64],
    horizon: Option<usize>,
) -> Result<SteerPlan, AggregateError> {
    let n = g.n_nodes();
    if w_from.len() != n || w_to.len() != n {
        return Err(AggregateError::InvalidHistogram("dimension mismatch".into()));
    }
    if !integral(w_from) || !integral(w_to) {
        return Err(AggregateError::InvalidHistogram("histograms must be nonnegative integers".into()));
    }
    let (period, label) = class_labels(g, comp)?;
    for q in 0..n {
        if label[q].is_none() && (w_from[q] != 0.0 || w_to[q] != 0.0) {
            return Err(AggregateError::InvalidHistogram(format!("mass at node {q} outside the component")));
        }
    }
    let total_from: f64 = w_from.iter().sum();
    let total_to: f64 = w_to.iter().sum();
    if total_from != total_to {
        return Err(AggregateError::InvalidHistogram(format!("masses differ: {total_from} vs {total_to}")));
    }
    let mut sums_from = vec![0.0; period];
    let mut sums_to = vec![0.0; period];
    for q in 0..n {
        if let Some(p) = label[q] {
            sums_from[p] += w_from[q];
            sums_to[p] += w_to[q];
        }
    }
    let compatible: Vec<usize> =
        (0..period).filter(|&rho| (0..period).all(|p| sums_to[(p + rho) % period] == sums_from[p])).collect();
    let parity_error = || AggregateError::ParityMismatch { from: sums_from.clone(), to: sums_to.clone(), horizon };
    if let Some(t) = horizon {
        if !compatible.contains(&(t % period)) {
            return Err(parity_error());
        }
    } else if compatible.is_empty() {
        return Err(parity_error());
    }
    if w_from == w_to && horizon.unwrap_or(0) == 0 {
        return Ok(SteerPlan { horizon: 0, period, rotation: 0, compatible_rotations: compatible, inputs: Vec::new() });
    }

    let mut mask = vec![false; n];
    for &q in &comp.nodes {
        mask[q] = true;
    }
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|q| {
            if !mask[q] {
                return Vec::new();
            }
            let mut v: Vec<usize> = g.actions(q).map(|(_, d)| d).filter(|&d| mask[d]).collect();
            v.sort_unstable();
            v.dedup();
            v
        })
        .collect();

    let k = comp.nodes.len();
    let cap = period * ((k.saturating_sub(1)).pow(2) + 1) + period;
    let (t, rotation) = match horizon {
        Some(t) => (t, t % period),
        None => {
            let mut reach = Reach::identity(n);
            let mut found = None;
            for t in 1..=cap {
                reach = reach.advance(&adj);
                let rho = t % period;
                if !compatible.contains(&rho) {
                    continue;
                }
                let ok = comp.nodes.iter().all(|&u| {
                    let pu = label[u].unwrap();
                    comp.nodes.iter().all(|&v| label[v].unwrap() != (pu + rho) % period || reach.contains(u, v))
                });
                if ok {
                    found = Some((t, rho));
                    break;
                }
            }
            found.ok_or(AggregateError::NotPrimitive { cap })?
        }
    };

    // northwest-corner transport per class
    let mut flows: Vec<(usize, usize, f64)> = Vec::new();
    for p in 0..period {
        let target = (p + rotation) % period;
        let mut src: Vec<(usize, f64)> = (0..n).filter(|&q| label[q] == Some(p) && w_from[q] > 0.0).map(|q| (q, w_from[q])).collect();
        let mut dst: Vec<(usize, f64)> = (0..n).filter(|&q| label[q] == Some(target) && w_to[q] > 0.0).map(|q| (q, w_to[q])).collect();
        let (mut i, mut j) = (0, 0);
        while i < src.len() && j < dst.len() {
            let amount = src[i].1.min(dst[j].1);
            flows.push((src[i].0, dst[j].0, amount));
            src[i].1 -= amount;
            dst[j].1 -= amount;
            if src[i].1 == 0.0 {
                i += 1;
            }
            if dst[j].1 == 0.0 {
                j += 1;
            }
        }
    }

    let nm = g.n_modes();
    let mut inputs = vec![vec![0.0; n * nm]; t];
    let mut targets: Vec<usize> = flows.iter().map(|f| f.1).collect();
    targets.sort_unstable();
    targets.dedup();
    for v in targets {
        // can[s][x]: x reaches v in exactly t - s steps
        let mut can = vec![vec![false; n]; t + 1];
        can[t][v] = true;
        for s in (0..t).rev() {
            for &x in &comp.nodes {
                can[s][x] = adj[x].iter().any(|&d| can[s + 1][d]);
            }
        }
        for &(u, _, amount) in flows.iter().filter(|f| f.1 == v) {
            if !can[0][u] {
                return Err(AggregateError::NotPrimitive { cap: t });
            }
            let mut x = u;
            for (s, input) in inputs.iter_mut().enumerate() {
                let (m, d) = g
                    .actions(x)
                    .find(|&(_, d)| mask[d] && can[s + 1][d])
                    .expect("layered reachability guarantees a successor");
                input[x * nm + m] += amount;
                x = d;
            }
        }
    }
    Ok(SteerPlan { horizon: t, period, rotation, compatible_rotations: compatible, inputs })
}

/// Replays inputs from `w0`, checking every step, and returns all states.
pub fn replay(g: &LabeledDigraph, w0: &[f64], inputs: &[Vec<f64>], tol: f64) -> Result<Vec<Vec<f64>>, AggregateError> {
    let mut states = vec![w0.to_vec()];
    for r in inputs {
        let next = step(states.last().unwrap(), r, g, tol)?;
        states.push(next);
    }
    Ok(states)
}
