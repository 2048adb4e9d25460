//! Switching protocol, open-loop plan extraction and discrete verification.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Cycle, LabeledDigraph};
use crate::synthesis::{ClassSolution, JointConstraint};

/// Distance from an integer tolerated in group sizes.
pub const COUNT_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("protocol violation at step {step}, node {node}: solution expects {expected} subsystems, fleet has {found}")]
    ProtocolViolation { step: usize, node: usize, expected: f64, found: usize },
    #[error("non-integer group size {value} at step {step}, node {node}, mode {mode}")]
    NonInteger { step: usize, node: usize, mode: usize, value: f64 },
    #[error("subsystem {id} has no transition from node {node} under mode {mode} at step {step}")]
    Blocked { id: usize, node: usize, mode: usize, step: usize },
    #[error("state {0} out of range")]
    StateOutOfRange(usize),
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Per-subsystem discrete states of one class at time `time`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FleetDiscreteState {
    pub states: Vec<usize>,
    pub time: usize,
}

impl FleetDiscreteState {
    pub fn new(states: Vec<usize>) -> Self {
        Self { states, time: 0 }
    }

    pub fn histogram(&self, n_states: usize) -> Vec<usize> {
        let mut h = vec![0; n_states];
        for &q in &self.states {
            h[q] += 1;
        }
        h
    }
}

fn as_count(v: f64, step: usize, node: usize, mode: usize) -> Result<usize, ControlError> {
    let r = v.round();
    if (v - r).abs() > COUNT_TOL || r < 0.0 {
        return Err(ControlError::NonInteger { step, node, mode, value: v });
    }
    Ok(r as usize)
}

/// Group sizes `(q, mu) -> count` prescribed at time `s`.
pub fn group_sizes(g: &LabeledDigraph, sol: &ClassSolution, s: usize) -> Vec<f64> {
    let (nq, nm) = (g.n_nodes(), g.n_modes());
    let t = sol.r.len();
    if s < t {
        return sol.r[s].clone();
    }
    let k = s - t;
    let mut out = vec![0.0; nq * nm];
    for (c, a) in sol.cycles.iter().zip(&sol.alphas) {
        let n = c.len();
        for i in 0..n {
            let (q, m) = c.steps()[i];
            out[q * nm + m] += a[(i + n - k % n) % n];
        }
    }
    out
}

/// Modes for every subsystem at time `s`. At each node the lowest ids take the lowest modes.
pub fn assign_inputs(g: &LabeledDigraph, sol: &ClassSolution, fleet: &FleetDiscreteState, s: usize) -> Result<Vec<usize>, ControlError> {
    let (nq, nm) = (g.n_nodes(), g.n_modes());
    if let Some(&q) = fleet.states.iter().find(|&&q| q >= nq) {
        return Err(ControlError::StateOutOfRange(q));
    }
    let sizes = group_sizes(g, sol, s);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); nq];
    for (id, &q) in fleet.states.iter().enumerate() {
        members[q].push(id);
    }
    let mut modes = vec![0; fleet.states.len()];
    for q in 0..nq {
        let mut counts = Vec::with_capacity(nm);
        for m in 0..nm {
            counts.push(as_count(sizes[q * nm + m], s, q, m)?);
        }
        let expected: usize = counts.iter().sum();
        if expected != members[q].len() {
            return Err(ControlError::ProtocolViolation { step: s, node: q, expected: expected as f64, found: members[q].len() });
        }
        let mut ids = members[q].iter();
        for (m, &c) in counts.iter().enumerate() {
            for &id in ids.by_ref().take(c) {
                modes[id] = m;
            }
        }
    }
    Ok(modes)
}

/// Advances every subsystem under its mode.
pub fn advance(g: &LabeledDigraph, fleet: &FleetDiscreteState, modes: &[usize]) -> Result<FleetDiscreteState, ControlError> {
    let states = fleet
        .states
        .iter()
        .zip(modes)
        .enumerate()
        .map(|(id, (&q, &m))| g.successor(q, m).ok_or(ControlError::Blocked { id, node: q, mode: m, step: fleet.time }))
        .collect::<Result<_, _>>()?;
    Ok(FleetDiscreteState { states, time: fleet.time + 1 })
}

/// Eventually periodic mode word: `prefix` then the cycle word from `offset` on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsystemPlan {
    pub id: usize,
    pub prefix: Vec<usize>,
    pub cycle: usize,
    pub offset: usize,
}

impl SubsystemPlan {
    pub fn mode_at(&self, s: usize, cycles: &[Cycle]) -> usize {
        if s < self.prefix.len() {
            return self.prefix[s];
        }
        let c = &cycles[self.cycle];
        c.mode((self.offset + s - self.prefix.len()) % c.len())
    }
}

/// Runs the protocol to the end of the prefix, then gives every subsystem a
/// berth `(cycle, offset)` on the suffix.
pub fn open_loop_plans(g: &LabeledDigraph, sol: &ClassSolution, fleet0: &FleetDiscreteState) -> Result<Vec<SubsystemPlan>, ControlError> {
    let t = sol.r.len();
    let n = fleet0.states.len();
    let mut prefixes = vec![Vec::with_capacity(t); n];
    let mut fleet = fleet0.clone();
    for s in 0..t {
        let modes = assign_inputs(g, sol, &fleet, s)?;
        for (p, &m) in prefixes.iter_mut().zip(&modes) {
            p.push(m);
        }
        fleet = advance(g, &fleet, &modes)?;
    }
    // berths sorted per node by (mode, cycle, position) with multiplicity
    let mut berths: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); g.n_nodes()];
    for (j, (c, a)) in sol.cycles.iter().zip(&sol.alphas).enumerate() {
        for (i, &v) in a.iter().enumerate() {
            let (q, m) = c.steps()[i];
            for _ in 0..as_count(v, t, q, m)? {
                berths[q].push((m, j, i));
            }
        }
    }
    for b in &mut berths {
        b.sort_unstable();
    }
    let mut next = vec![0; g.n_nodes()];
    let mut plans = Vec::with_capacity(n);
    for (id, prefix) in prefixes.into_iter().enumerate() {
        let q = fleet.states[id];
        let Some(&(_, j, i)) = berths[q].get(next[q]) else {
            return Err(ControlError::ProtocolViolation { step: t, node: q, expected: berths[q].len() as f64, found: next[q] + 1 });
        };
        next[q] += 1;
        plans.push(SubsystemPlan { id, prefix, cycle: j, offset: i });
    }
    for q in 0..g.n_nodes() {
        if next[q] != berths[q].len() {
            return Err(ControlError::ProtocolViolation { step: t, node: q, expected: berths[q].len() as f64, found: next[q] });
        }
    }
    Ok(plans)
}

/// One class as seen by the verifier.
#[derive(Debug, Clone, Copy)]
pub struct ClassPlans<'a> {
    pub graph: &'a LabeledDigraph,
    pub initial: &'a [usize],
    pub plans: &'a [SubsystemPlan],
    pub cycles: &'a [Cycle],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub step: usize,
    pub constraint: usize,
    pub count: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteReport {
    /// `counts[s][l]`.
    pub counts: Vec<Vec<f64>>,
    pub max_counts: Vec<f64>,
    pub first_violation: Option<Violation>,
    pub violations: usize,
}

impl DiscreteReport {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// State and mode sequences of one subsystem over `horizon` steps.
pub fn trajectory(g: &LabeledDigraph, q0: usize, plan: &SubsystemPlan, cycles: &[Cycle], horizon: usize) -> Result<Vec<(usize, usize)>, ControlError> {
    let mut q = q0;
    let mut out = Vec::with_capacity(horizon);
    for s in 0..horizon {
        let m = plan.mode_at(s, cycles);
        out.push((q, m));
        q = g.successor(q, m).ok_or(ControlError::Blocked { id: plan.id, node: q, mode: m, step: s })?;
    }
    Ok(out)
}

/// Steps every class under its plans and counts each joint constraint per step.
pub fn verify_discrete(classes: &[ClassPlans<'_>], constraints: &[JointConstraint], horizon: usize) -> Result<DiscreteReport, ControlError> {
    for (h, c) in classes.iter().enumerate() {
        if c.initial.len() != c.plans.len() {
            return Err(ControlError::Shape(format!("class {h}: {} initial states for {} plans", c.initial.len(), c.plans.len())));
        }
    }
    if constraints.iter().any(|x| x.sets.len() != classes.len()) {
        return Err(ControlError::Shape("constraint class count mismatch".into()));
    }
    let mut counts = vec![vec![0.0; constraints.len()]; horizon];
    for (h, c) in classes.iter().enumerate() {
        let per: Vec<Vec<Vec<f64>>> = c
            .plans
            .par_iter()
            .zip(c.initial.par_iter())
            .map(|(p, &q0)| {
                let tr = trajectory(c.graph, q0, p, c.cycles, horizon)?;
                Ok(tr.iter().map(|&(q, m)| constraints.iter().map(|x| f64::from(u8::from(x.sets[h].contains(q, m)))).collect()).collect())
            })
            .collect::<Result<_, ControlError>>()?;
        for sub in per {
            for (row, add) in counts.iter_mut().zip(sub) {
                for (v, a) in row.iter_mut().zip(add) {
                    *v += a;
                }
            }
        }
    }
    Ok(report_from_counts(counts, constraints.iter().map(|x| x.bound).collect()))
}

pub(crate) fn report_from_counts(counts: Vec<Vec<f64>>, bounds: Vec<f64>) -> DiscreteReport {
    let mut max_counts = vec![0.0f64; bounds.len()];
    let mut first_violation = None;
    let mut violations = 0;
    for (s, row) in counts.iter().enumerate() {
        for (l, &v) in row.iter().enumerate() {
            max_counts[l] = max_counts[l].max(v);
            if v > bounds[l] {
                violations += 1;
                first_violation.get_or_insert(Violation { step: s, constraint: l, count: v, bound: bounds[l] });
            }
        }
    }
    DiscreteReport { counts, max_counts, first_violation, violations }
}

/// Writes `id,class,prefix,cycle,offset`; the prefix is space-separated mode indices.
pub fn write_plans_csv(path: &Path, classes: &[&[SubsystemPlan]]) -> Result<(), ControlError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "class", "prefix", "cycle", "offset"])?;
    let mut id = 0;
    for (h, plans) in classes.iter().enumerate() {
        for p in *plans {
            let word = p.prefix.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(" ");
            w.write_record([id.to_string(), h.to_string(), word, p.cycle.to_string(), p.offset.to_string()])?;
            id += 1;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes per-step counts as `step,constraint,count,bound`.
pub fn write_counts_csv(mut out: impl Write, counts: &[Vec<f64>], bounds: &[f64]) -> Result<(), ControlError> {
    writeln!(out, "step,constraint,count,bound")?;
    for (s, row) in counts.iter().enumerate() {
        for (l, v) in row.iter().enumerate() {
            writeln!(out, "{s},{l},{v},{}", bounds[l])?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::DiscreteCountingSet;
    use crate::graph::tests::ring;

    fn ring_solution() -> (LabeledDigraph, ClassSolution) {
        let g = ring(3);
        let c = Cycle::new(vec![(0, 0), (1, 0), (2, 0)], &g).unwrap();
        (g, ClassSolution { r: vec![], w: vec![], cycles: vec![c], alphas: vec![vec![1.0, 1.0, 1.0]] })
    }

    #[test]
    fn ring_suffix_advances() {
        let (g, sol) = ring_solution();
        let f = FleetDiscreteState::new(vec![0, 1, 2]);
        assert_eq!(assign_inputs(&g, &sol, &f, 0).unwrap(), vec![0, 0, 0]);
        let f1 = advance(&g, &f, &[0, 0, 0]).unwrap();
        assert_eq!(f1.states, vec![1, 2, 0]);
        assert_eq!(assign_inputs(&g, &sol, &f1, 1).unwrap(), vec![0, 0, 0]);
        let bad = FleetDiscreteState::new(vec![0, 0, 2]);
        assert!(matches!(assign_inputs(&g, &sol, &bad, 0), Err(ControlError::ProtocolViolation { .. })));
    }

    #[test]
    fn prefix_split_tie_break() {
        let g = LabeledDigraph::from_edges(1, 2, &[(0, 0, 0), (0, 1, 0)]).unwrap();
        let c = Cycle::new(vec![(0, 1)], &g).unwrap();
        let sol = ClassSolution { r: vec![vec![4.0, 6.0]], w: vec![vec![10.0]], cycles: vec![c], alphas: vec![vec![10.0]] };
        let f = FleetDiscreteState::new(vec![0; 10]);
        let modes = assign_inputs(&g, &sol, &f, 0).unwrap();
        assert_eq!(modes, vec![0, 0, 0, 0, 1, 1, 1, 1, 1, 1]);
        let plans = open_loop_plans(&g, &sol, &f).unwrap();
        assert_eq!(plans[3].prefix, vec![0]);
        assert_eq!(plans[9].mode_at(5, &sol.cycles), 1);
    }

    #[test]
    fn single_subsystem_follows_cycle() {
        let g = LabeledDigraph::from_edges(2, 2, &[(0, 0, 1), (1, 1, 0), (0, 1, 0)]).unwrap();
        let c = Cycle::new(vec![(0, 0), (1, 1)], &g).unwrap();
        let sol = ClassSolution { r: vec![], w: vec![], cycles: vec![c], alphas: vec![vec![0.0, 1.0]] };
        let plans = open_loop_plans(&g, &sol, &FleetDiscreteState::new(vec![1])).unwrap();
        assert_eq!(plans[0].offset, 1);
        let tr = trajectory(&g, 1, &plans[0], &sol.cycles, 4).unwrap();
        assert_eq!(tr, vec![(1, 1), (0, 0), (1, 1), (0, 0)]);
    }

    #[test]
    fn verification_detects_corruption() {
        let (g, sol) = ring_solution();
        let init = vec![0, 1, 2];
        let plans = open_loop_plans(&g, &sol, &FleetDiscreteState::new(init.clone())).unwrap();
        let x = JointConstraint { name: "n0".into(), sets: vec![DiscreteCountingSet::from_pairs(3, 1, &[(0, 0)], 1.0)], bound: 1.0 };
        let cp = ClassPlans { graph: &g, initial: &init, plans: &plans, cycles: &sol.cycles };
        let rep = verify_discrete(&[cp], std::slice::from_ref(&x), 9).unwrap();
        assert!(rep.passed());
        assert_eq!(rep.max_counts, vec![1.0]);
        assert!(verify_discrete(&[cp], &[], 9).unwrap().passed());
        let moved = vec![0, 0, 2];
        let cp = ClassPlans { graph: &g, initial: &moved, plans: &plans, cycles: &sol.cycles };
        let rep = verify_discrete(&[cp], &[x], 9).unwrap();
        assert_eq!(rep.first_violation.unwrap().step, 0);
        assert_eq!(rep.violations, 3);
    }

    #[test]
    fn plans_csv() {
        let (g, sol) = ring_solution();
        let plans = open_loop_plans(&g, &sol, &FleetDiscreteState::new(vec![2, 0, 1])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("plan.csv");
        write_plans_csv(&p, &[&plans]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "id,class,prefix,cycle,offset\n0,0,,0,2\n1,0,,0,0\n2,0,,0,1\n");
    }
}
