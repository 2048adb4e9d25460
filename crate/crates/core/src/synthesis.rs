//! Prefix-suffix feasibility programs over aggregate histograms.
//!
//! Rows are emitted in a fixed order: prefix counting rows, suffix joint-count
//! rows, connection rows, dynamics rows and conservation rows. Columns are the
//! cycle assignments, then the inputs `r(0..T-1)`, then the states `w(1..T)`,
//! class by class, followed by auxiliary group maxima when needed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::DiscreteCountingSet;
use crate::aggregate::{self, coprime_partition, lcm_of, length_groups, partition_rows, AggregateError, DEFAULT_LCM_CAP};
use crate::graph::{Cycle, LabeledDigraph};
use crate::solver::{LinearProgram, Sense, SolveResult, Status};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("{what} = {value} is not divisible by {scale}")]
    Divisibility { what: String, value: f64, scale: u64 },
    #[error("constraint {constraint} needs {rows} suffix rows, above the cap of {cap}, and conservative grouping is disabled")]
    JointOverflow { constraint: usize, rows: u64, cap: u64 },
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrality {
    Exact,
    Relaxed,
}

/// One subsystem class: its graph, initial histogram, cycle set and an optional fixed suffix.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassInstance {
    pub name: String,
    pub graph: LabeledDigraph,
    pub w0: Vec<f64>,
    pub cycles: Vec<Cycle>,
    /// Assignments fixed in advance, one per cycle.
    pub fixed_suffix: Option<Vec<Vec<f64>>>,
}

/// Counting bound over the union of per-class sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointConstraint {
    pub name: String,
    /// One set per class; classes absent from the constraint use an empty set.
    pub sets: Vec<DiscreteCountingSet>,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiClassInstance {
    pub classes: Vec<ClassInstance>,
    pub constraints: Vec<JointConstraint>,
    pub horizon: usize,
    pub integrality: Integrality,
    pub relax_eps: f64,
    /// Per-constraint relaxation overriding `relax_eps`.
    pub relax_per_constraint: Option<Vec<f64>>,
    pub lcm_cap: u64,
    pub conservative_fallback: bool,
    /// Common divisor applied by [`scale_instance`].
    pub scale: u64,
}

/// Single-class instance: graph, initial histogram, counting sets with bounds, horizon and cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub graph: LabeledDigraph,
    pub w0: Vec<f64>,
    pub constraints: Vec<DiscreteCountingSet>,
    pub horizon: usize,
    pub cycles: Vec<Cycle>,
    pub integrality: Integrality,
    pub relax_eps: f64,
    pub relax_per_constraint: Option<Vec<f64>>,
    pub lcm_cap: u64,
    pub conservative_fallback: bool,
    pub scale: u64,
    pub fixed_suffix: Option<Vec<Vec<f64>>>,
}

impl ProblemInstance {
    pub fn new(graph: LabeledDigraph, w0: Vec<f64>, constraints: Vec<DiscreteCountingSet>, horizon: usize, cycles: Vec<Cycle>) -> Self {
        Self {
            graph,
            w0,
            constraints,
            horizon,
            cycles,
            integrality: Integrality::Exact,
            relax_eps: 0.0,
            relax_per_constraint: None,
            lcm_cap: DEFAULT_LCM_CAP,
            conservative_fallback: true,
            scale: 1,
            fixed_suffix: None,
        }
    }

    pub fn total(&self) -> f64 {
        self.w0.iter().sum()
    }

    pub fn to_multiclass(&self) -> MultiClassInstance {
        MultiClassInstance {
            classes: vec![ClassInstance {
                name: "class0".into(),
                graph: self.graph.clone(),
                w0: self.w0.clone(),
                cycles: self.cycles.clone(),
                fixed_suffix: self.fixed_suffix.clone(),
            }],
            constraints: self
                .constraints
                .iter()
                .enumerate()
                .map(|(l, s)| JointConstraint { name: format!("X{l}"), sets: vec![s.clone()], bound: s.bound })
                .collect(),
            horizon: self.horizon,
            integrality: self.integrality,
            relax_eps: self.relax_eps,
            relax_per_constraint: self.relax_per_constraint.clone(),
            lcm_cap: self.lcm_cap,
            conservative_fallback: self.conservative_fallback,
            scale: self.scale,
        }
    }
}

/// `w_q(0)` = number of subsystems starting at `q`.
pub fn aggregate_initial(states: &[usize], n_states: usize) -> Result<Vec<f64>, SynthesisError> {
    let mut w = vec![0.0; n_states];
    for &q in states {
        if q >= n_states {
            return Err(SynthesisError::InvalidInstance(format!("initial state {q} out of range")));
        }
        w[q] += 1.0;
    }
    Ok(w)
}

/// How the suffix rows of one constraint were encoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SuffixEncoding {
    /// No cycle meets the set.
    Empty,
    /// One common period; rows bound the joint count directly.
    Joint { rows: u64 },
    /// Co-prime groups with one auxiliary maximum per group.
    Coprime { groups: usize, rows: u64 },
    /// Cycles grouped by length after the row cap tripped; sound but conservative.
    Conservative { groups: usize, rows: u64, exact_rows: u64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub suffix: Vec<SuffixEncoding>,
    pub n_cols: usize,
    pub n_rows: usize,
    pub nnz: usize,
    pub aux_cols: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassLayout {
    pub alpha: Vec<usize>,
    pub r: usize,
    pub w: usize,
    pub n_states: usize,
    pub n_modes: usize,
}

impl ClassLayout {
    pub fn r_col(&self, s: usize, q: usize, m: usize) -> usize {
        self.r + (s * self.n_states + q) * self.n_modes + m
    }

    /// Column of `w(s)` for `s >= 1`.
    pub fn w_col(&self, s: usize, q: usize) -> usize {
        self.w + (s - 1) * self.n_states + q
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltLp {
    pub lp: LinearProgram,
    pub layout: Vec<ClassLayout>,
    pub report: BuildReport,
    pub horizon: usize,
}

fn validate(inst: &MultiClassInstance) -> Result<(), SynthesisError> {
    if inst.classes.is_empty() {
        return Err(SynthesisError::InvalidInstance("no classes".into()));
    }
    for (h, c) in inst.classes.iter().enumerate() {
        let g = &c.graph;
        if c.w0.len() != g.n_nodes() {
            return Err(SynthesisError::InvalidInstance(format!("class {h}: w(0) has {} entries for {} states", c.w0.len(), g.n_nodes())));
        }
        if c.w0.iter().any(|v| *v < 0.0) {
            return Err(SynthesisError::InvalidInstance(format!("class {h}: negative initial count")));
        }
        if let Some(fs) = &c.fixed_suffix {
            if fs.len() != c.cycles.len() || fs.iter().zip(&c.cycles).any(|(a, cy)| a.len() != cy.len()) {
                return Err(SynthesisError::InvalidInstance(format!("class {h}: fixed suffix does not match the cycles")));
            }
        }
        for (j, cy) in c.cycles.iter().enumerate() {
            for i in 0..cy.len() {
                if g.successor(cy.state(i), cy.mode(i)) != Some(cy.state(i + 1)) {
                    return Err(SynthesisError::InvalidInstance(format!("class {h}: cycle {j} leaves the graph at position {i}")));
                }
            }
        }
    }
    for (l, x) in inst.constraints.iter().enumerate() {
        if x.sets.len() != inst.classes.len() {
            return Err(SynthesisError::InvalidInstance(format!("constraint {l} has {} sets for {} classes", x.sets.len(), inst.classes.len())));
        }
        for (h, s) in x.sets.iter().enumerate() {
            let g = &inst.classes[h].graph;
            if s.n_states != g.n_nodes() || s.n_modes != g.n_modes() {
                return Err(SynthesisError::InvalidInstance(format!("constraint {l} class {h}: set shape mismatch")));
            }
        }
    }
    if let Some(eps) = &inst.relax_per_constraint {
        if eps.len() != inst.constraints.len() {
            return Err(SynthesisError::InvalidInstance("per-constraint relaxation length mismatch".into()));
        }
    }
    Ok(())
}

/// Builds the single-class program.
pub fn build_lp(inst: &ProblemInstance) -> Result<BuiltLp, SynthesisError> {
    build_multiclass(&inst.to_multiclass())
}

/// Builds the program for several classes sharing joint counting constraints.
pub fn build_multiclass(inst: &MultiClassInstance) -> Result<BuiltLp, SynthesisError> {
    validate(inst)?;
    let t = inst.horizon;
    let multi = inst.classes.len() > 1;
    let tag = |h: usize| if multi { format!("h{h}_") } else { String::new() };
    let integer = inst.integrality == Integrality::Exact;
    let mut lp = LinearProgram::new();
    let mut layout = Vec::new();

    for (h, c) in inst.classes.iter().enumerate() {
        let g = &c.graph;
        let (nq, nm) = (g.n_nodes(), g.n_modes());
        let tg = tag(h);
        let mut alpha = Vec::new();
        for (j, cy) in c.cycles.iter().enumerate() {
            alpha.push(lp.n_cols());
            for i in 0..cy.len() {
                let (lb, ub) = match &c.fixed_suffix {
                    Some(fs) => (fs[j][i], fs[j][i]),
                    None => (0.0, f64::INFINITY),
                };
                lp.add_column(format!("C_{tg}alpha_{j}_{i}"), lb, ub, integer);
            }
        }
        let r = lp.n_cols();
        for s in 0..t {
            for q in 0..nq {
                for m in 0..nm {
                    let ub = if g.successor(q, m).is_some() { f64::INFINITY } else { 0.0 };
                    lp.add_column(format!("C_{tg}r_{s}_{q}_{m}"), 0.0, ub, integer);
                }
            }
        }
        let w = lp.n_cols();
        for s in 1..=t {
            for q in 0..nq {
                let ub = if g.is_alive(q) { f64::INFINITY } else { 0.0 };
                lp.add_column(format!("C_{tg}w_{s}_{q}"), 0.0, ub, integer);
            }
        }
        layout.push(ClassLayout { alpha, r, w, n_states: nq, n_modes: nm });
    }

    let bound = |l: usize| {
        let eps = inst.relax_per_constraint.as_ref().map_or(inst.relax_eps, |e| e[l]);
        inst.constraints[l].bound + eps
    };

    // prefix counting rows
    for s in 0..t {
        for (l, x) in inst.constraints.iter().enumerate() {
            let mut coeffs = Vec::new();
            for (h, set) in x.sets.iter().enumerate() {
                for (q, m) in set.pairs() {
                    coeffs.push((layout[h].r_col(s, q, m), 1.0));
                }
            }
            lp.add_row(format!("R17a_{s}_{l}"), coeffs, Sense::Le, bound(l));
        }
    }

    // suffix joint-count rows
    let mut report = BuildReport::default();
    for (l, x) in inst.constraints.iter().enumerate() {
        // cycles meeting the set, as (class, cycle index)
        let members: Vec<(usize, usize)> = inst
            .classes
            .iter()
            .enumerate()
            .flat_map(|(h, c)| {
                let set = &x.sets[h];
                c.cycles
                    .iter()
                    .enumerate()
                    .filter(move |(_, cy)| cy.steps().iter().any(|&(q, m)| set.contains(q, m)))
                    .map(move |(j, _)| (h, j))
            })
            .collect();
        if members.is_empty() {
            report.suffix.push(SuffixEncoding::Empty);
            continue;
        }
        let lens: Vec<usize> = members.iter().map(|&(h, j)| inst.classes[h].cycles[j].len()).collect();
        let full = lcm_of(&lens);
        let coprime = coprime_partition(&lens);
        let coprime_rows = partition_rows(&lens, &coprime);
        let (groups, encoding) = if full <= inst.lcm_cap {
            (vec![(0..lens.len()).collect::<Vec<_>>()], SuffixEncoding::Joint { rows: full })
        } else if coprime_rows <= inst.lcm_cap {
            let n = coprime.len();
            (coprime, SuffixEncoding::Coprime { groups: n, rows: coprime_rows })
        } else if inst.conservative_fallback {
            let groups = length_groups(&lens);
            let rows = partition_rows(&lens, &groups);
            log::info!("constraint {l}: {coprime_rows} exact suffix rows exceed the cap; grouping by length ({rows} rows)");
            (groups.clone(), SuffixEncoding::Conservative { groups: groups.len(), rows, exact_rows: coprime_rows })
        } else {
            return Err(SynthesisError::JointOverflow { constraint: l, rows: coprime_rows, cap: inst.lcm_cap });
        };
        let mut group_rows: Vec<Vec<Vec<(usize, f64)>>> = Vec::new();
        for grp in &groups {
            let glen = lcm_of(&grp.iter().map(|&k| lens[k]).collect::<Vec<_>>()) as usize;
            let mut rows = Vec::with_capacity(glen);
            for k in 0..glen {
                let mut coeffs = Vec::new();
                for &idx in grp {
                    let (h, j) = members[idx];
                    let cy = &inst.classes[h].cycles[j];
                    let set = &x.sets[h];
                    let n = cy.len();
                    for m in 0..n {
                        let pos = (m + k) % n;
                        if set.contains(cy.state(pos), cy.mode(pos)) {
                            coeffs.push((layout[h].alpha[j] + m, 1.0));
                        }
                    }
                }
                rows.push(coeffs);
            }
            group_rows.push(rows);
        }
        if group_rows.len() == 1 {
            for (k, coeffs) in group_rows.pop().unwrap().into_iter().enumerate() {
                lp.add_row(format!("R17b_{l}_{k}"), coeffs, Sense::Le, bound(l));
            }
        } else {
            let mut aux_cols = Vec::new();
            for (gi, rows) in group_rows.into_iter().enumerate() {
                let a = lp.add_column(format!("C_aux_{l}_{gi}"), 0.0, f64::INFINITY, false);
                report.aux_cols += 1;
                aux_cols.push(a);
                for (k, mut coeffs) in rows.into_iter().enumerate() {
                    coeffs.push((a, -1.0));
                    lp.add_row(format!("R17b_{l}_{gi}_{k}"), coeffs, Sense::Le, 0.0);
                }
            }
            lp.add_row(format!("R17b_{l}_sum"), aux_cols.iter().map(|&a| (a, 1.0)).collect(), Sense::Le, bound(l));
        }
        report.suffix.push(encoding);
    }

    // connection rows
    for (h, c) in inst.classes.iter().enumerate() {
        let lay = &layout[h];
        let tg = tag(h);
        let mut on_cycles: Vec<Vec<usize>> = vec![Vec::new(); lay.n_states];
        for (j, cy) in c.cycles.iter().enumerate() {
            for i in 0..cy.len() {
                on_cycles[cy.state(i)].push(lay.alpha[j] + i);
            }
        }
        for q in 0..lay.n_states {
            let mut coeffs: Vec<(usize, f64)> = on_cycles[q].iter().map(|&col| (col, -1.0)).collect();
            let rhs = if t == 0 {
                -c.w0[q]
            } else {
                coeffs.insert(0, (lay.w_col(t, q), 1.0));
                0.0
            };
            lp.add_row(format!("R17c_{tg}{q}"), coeffs, Sense::Eq, rhs);
        }
    }

    // dynamics rows
    for (h, c) in inst.classes.iter().enumerate() {
        let lay = &layout[h];
        let tg = tag(h);
        let pred = c.graph.predecessors();
        for s in 0..t {
            for q in 0..lay.n_states {
                let mut coeffs = vec![(lay.w_col(s + 1, q), 1.0)];
                coeffs.extend(pred[q].iter().map(|&(p, m)| (lay.r_col(s, p, m), -1.0)));
                lp.add_row(format!("R17d_{tg}{s}_{q}"), coeffs, Sense::Eq, 0.0);
            }
        }
    }

    // conservation rows
    for (h, c) in inst.classes.iter().enumerate() {
        let lay = &layout[h];
        let tg = tag(h);
        for s in 0..t {
            for q in 0..lay.n_states {
                let mut coeffs: Vec<(usize, f64)> = (0..lay.n_modes).map(|m| (lay.r_col(s, q, m), 1.0)).collect();
                let rhs = if s == 0 {
                    c.w0[q]
                } else {
                    coeffs.push((lay.w_col(s, q), -1.0));
                    0.0
                };
                lp.add_row(format!("R17e_{tg}{s}_{q}"), coeffs, Sense::Eq, rhs);
            }
        }
    }

    report.n_cols = lp.n_cols();
    report.n_rows = lp.n_rows();
    report.nnz = lp.nnz();
    Ok(BuiltLp { lp, layout, report, horizon: t })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Exact,
    Relaxed,
    Rounded,
}

/// Inputs, states and cycle assignments for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSolution {
    /// `r[s][q * n_modes + mu]` for `s < T`.
    pub r: Vec<Vec<f64>>,
    /// `w[s - 1]` for `s = 1..T`.
    pub w: Vec<Vec<f64>>,
    pub cycles: Vec<Cycle>,
    pub alphas: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixSuffixSolution {
    pub horizon: usize,
    pub classes: Vec<ClassSolution>,
    pub provenance: Provenance,
}

impl PrefixSuffixSolution {
    /// Multiplies every input, state and assignment by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let mul = |v: &Vec<Vec<f64>>| v.iter().map(|row| row.iter().map(|x| x * s).collect()).collect();
        Self {
            horizon: self.horizon,
            provenance: self.provenance,
            classes: self
                .classes
                .iter()
                .map(|c| ClassSolution { r: mul(&c.r), w: mul(&c.w), cycles: c.cycles.clone(), alphas: mul(&c.alphas) })
                .collect(),
        }
    }

    /// Column vector for a built program with the same structure.
    pub fn to_point(&self, built: &BuiltLp, inst: &MultiClassInstance) -> Vec<f64> {
        let mut x = vec![0.0; built.lp.n_cols()];
        for (c, lay) in self.classes.iter().zip(&built.layout) {
            for (j, a) in c.alphas.iter().enumerate() {
                for (i, v) in a.iter().enumerate() {
                    x[lay.alpha[j] + i] = *v;
                }
            }
            for (s, r) in c.r.iter().enumerate() {
                for (k, v) in r.iter().enumerate() {
                    x[lay.r + s * lay.n_states * lay.n_modes + k] = *v;
                }
            }
            for (s, w) in c.w.iter().enumerate() {
                for (q, v) in w.iter().enumerate() {
                    x[lay.w_col(s + 1, q)] = *v;
                }
            }
        }
        fill_aux(built, inst, self, &mut x);
        x
    }
}

/// Sets auxiliary group maxima to the smallest feasible values for the assignments.
fn fill_aux(built: &BuiltLp, _inst: &MultiClassInstance, _sol: &PrefixSuffixSolution, x: &mut [f64]) {
    for row in &built.lp.rows {
        if let Some(&(a, c)) = row.coeffs.last() {
            if c == -1.0 && built.lp.columns[a].name.starts_with("C_aux_") {
                let act: f64 = row.coeffs[..row.coeffs.len() - 1].iter().map(|&(j, v)| v * x[j]).sum();
                x[a] = x[a].max(act);
            }
        }
    }
}

/// Reads a solution out of a solved program.
pub fn decode(built: &BuiltLp, inst: &MultiClassInstance, x: &[f64], provenance: Provenance) -> PrefixSuffixSolution {
    let t = built.horizon;
    let classes = inst
        .classes
        .iter()
        .zip(&built.layout)
        .map(|(c, lay)| {
            let per = lay.n_states * lay.n_modes;
            ClassSolution {
                r: (0..t).map(|s| x[lay.r + s * per..lay.r + (s + 1) * per].to_vec()).collect(),
                w: (1..=t).map(|s| (0..lay.n_states).map(|q| x[lay.w_col(s, q)]).collect()).collect(),
                cycles: c.cycles.clone(),
                alphas: c.cycles.iter().enumerate().map(|(j, cy)| x[lay.alpha[j]..lay.alpha[j] + cy.len()].to_vec()).collect(),
            }
        })
        .collect();
    PrefixSuffixSolution { horizon: t, classes, provenance }
}

/// Suffix count of one joint constraint, computed exactly per co-prime group
/// when the group period is at most `cap`, and by length grouping otherwise.
pub fn suffix_count(inst: &MultiClassInstance, sol: &PrefixSuffixSolution, l: usize, cap: u64) -> f64 {
    let x = &inst.constraints[l];
    // lift every class onto a common index space by shifting node ids
    let mut offset = 0;
    let mut n_total = 0;
    let mut offsets = Vec::new();
    for c in &inst.classes {
        offsets.push(offset);
        offset += c.graph.n_nodes();
        n_total = offset;
    }
    let nm = inst.classes.iter().map(|c| c.graph.n_modes()).max().unwrap_or(1);
    let mut set = DiscreteCountingSet::empty(n_total, nm, x.bound);
    let mut cycles = Vec::new();
    let mut alphas = Vec::new();
    for (h, c) in sol.classes.iter().enumerate() {
        for (q, m) in x.sets[h].pairs() {
            set.insert(q + offsets[h], m);
        }
        for (cy, a) in c.cycles.iter().zip(&c.alphas) {
            cycles.push(Cycle::canonical(cy.steps().iter().map(|&(q, m)| (q + offsets[h], m)).collect()));
            // canonicalization never changes the rotation of a shifted canonical cycle
            alphas.push(a.clone());
        }
    }
    let lens: Vec<usize> = cycles.iter().map(|c| c.len()).collect();
    let mut total = 0.0;
    for grp in coprime_partition(&lens) {
        let gc: Vec<Cycle> = grp.iter().map(|&i| cycles[i].clone()).collect();
        let ga: Vec<Vec<f64>> = grp.iter().map(|&i| alphas[i].clone()).collect();
        total += match aggregate::joint_maxcnt(&gc, &ga, &set, cap) {
            Ok(v) => v,
            Err(_) => aggregate::conservative_joint(&gc, &ga, &set),
        };
    }
    total
}

/// Re-checks a solution against the aggregate dynamics and counts without the solver.
pub fn check_solution(inst: &MultiClassInstance, sol: &PrefixSuffixSolution, tol: f64) -> Result<(), String> {
    if sol.classes.len() != inst.classes.len() {
        return Err("class count mismatch".into());
    }
    let t = inst.horizon;
    for (h, (c, cs)) in inst.classes.iter().zip(&sol.classes).enumerate() {
        if cs.r.len() != t || cs.w.len() != t {
            return Err(format!("class {h}: horizon mismatch"));
        }
        let mut w = c.w0.clone();
        for s in 0..t {
            let next = aggregate::step(&w, &cs.r[s], &c.graph, tol).map_err(|e| format!("class {h} step {s}: {e}"))?;
            if next.iter().zip(&cs.w[s]).any(|(a, b)| (a - b).abs() > tol) {
                return Err(format!("class {h}: w({}) does not follow the dynamics", s + 1));
            }
            w = next;
        }
        let n = c.graph.n_nodes();
        let mut connected = vec![0.0; n];
        for (cy, a) in cs.cycles.iter().zip(&cs.alphas) {
            if a.iter().any(|v| *v < -tol) {
                return Err(format!("class {h}: negative assignment"));
            }
            for i in 0..cy.len() {
                connected[cy.state(i)] += a[i];
            }
        }
        if connected.iter().zip(&w).any(|(a, b)| (a - b).abs() > tol) {
            return Err(format!("class {h}: w(T) differs from the suffix histogram"));
        }
    }
    for (l, x) in inst.constraints.iter().enumerate() {
        let eps = inst.relax_per_constraint.as_ref().map_or(inst.relax_eps, |e| e[l]);
        let bound = x.bound + eps + tol;
        for s in 0..t {
            let count: f64 = sol.classes.iter().zip(&x.sets).map(|(cs, set)| set.pairs().map(|(q, m)| cs.r[s][q * set.n_modes + m]).sum::<f64>()).sum();
            if count > bound {
                return Err(format!("constraint {l}: prefix count {count} at step {s} exceeds {}", x.bound + eps));
            }
        }
        let sc = suffix_count(inst, sol, l, 10_000_000);
        if sc > bound {
            return Err(format!("constraint {l}: suffix count {sc} exceeds {}", x.bound + eps));
        }
    }
    Ok(())
}

/// Divides the initial histogram and every bound by `s`.
pub fn scale_instance(inst: &ProblemInstance, s: u64) -> Result<ProblemInstance, SynthesisError> {
    if s == 0 {
        return Err(SynthesisError::InvalidInstance("scale must be positive".into()));
    }
    let sf = s as f64;
    let divisible = |v: f64| (v / sf).fract() == 0.0;
    for (q, v) in inst.w0.iter().enumerate() {
        if !divisible(*v) {
            return Err(SynthesisError::Divisibility { what: format!("w_{q}(0)"), value: *v, scale: s });
        }
    }
    for (l, x) in inst.constraints.iter().enumerate() {
        if !divisible(x.bound) {
            return Err(SynthesisError::Divisibility { what: format!("R_{l}"), value: x.bound, scale: s });
        }
    }
    let mut out = inst.clone();
    out.w0 = inst.w0.iter().map(|v| v / sf).collect();
    for x in &mut out.constraints {
        x.bound /= sf;
    }
    if let Some(fs) = &mut out.fixed_suffix {
        for a in fs.iter_mut().flatten() {
            *a /= sf;
        }
    }
    out.scale = inst.scale * s;
    Ok(out)
}

/// Horizon and cycle-length bounds under which an infeasible program proves
/// that no solution exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletenessBounds {
    /// Number of distinct histograms, `C(|Q| + N - 1, N)`.
    pub max_horizon: f64,
    pub max_cycle_len: f64,
    /// Horizon sufficient for the relaxed program, `(diam^2 + 1) N / eps`.
    pub relaxed_horizon: f64,
}

pub fn binomial(n: u64, k: u64) -> f64 {
    let k = k.min(n - k.min(n));
    (1..=k).fold(1.0, |acc, i| acc * (n - k + i) as f64 / i as f64).round()
}

pub fn completeness_bounds(n_states: usize, n: usize, diam: usize, eps: f64) -> CompletenessBounds {
    let hist = binomial((n_states + n).saturating_sub(1) as u64, n as u64);
    let d = diam as f64;
    CompletenessBounds { max_horizon: hist, max_cycle_len: n_states as f64 * hist, relaxed_horizon: (d * d + 1.0) * n as f64 / eps }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Solution,
    NoDiscreteSolution,
    NoContinuousSolution,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Solution => "solution",
            Verdict::NoDiscreteSolution => "no discrete solution",
            Verdict::NoContinuousSolution => "no continuous solution",
            Verdict::Inconclusive => "inconclusive (insufficient horizon/cycles)",
        })
    }
}

/// Facts about how the instance was produced that decide what an infeasible result proves.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerdictContext {
    /// Every simple cycle up to this length is in the cycle set.
    pub cycles_complete_to: Option<usize>,
    /// Constraints were contracted by `eps + eta/2` before discretization.
    pub contracted: bool,
    pub diameter: Option<usize>,
}

/// Classifies a solver outcome.
pub fn infeasibility_verdict(inst: &MultiClassInstance, result: &SolveResult, ctx: &VerdictContext) -> Verdict {
    let proven = |contracted: bool| if contracted { Verdict::NoContinuousSolution } else { Verdict::NoDiscreteSolution };
    match result.status {
        Status::Feasible => return Verdict::Solution,
        Status::IterationLimit | Status::NumericFailure => return Verdict::Inconclusive,
        Status::Infeasible => {}
    }
    // initial mass on nodes removed by pruning can never be scheduled
    if inst.classes.iter().any(|c| c.w0.iter().enumerate().any(|(q, v)| *v > 0.0 && !c.graph.is_alive(q))) {
        return proven(ctx.contracted);
    }
    let Some(max_len) = ctx.cycles_complete_to else { return Verdict::Inconclusive };
    let t = inst.horizon as f64;
    let all_cover = inst.classes.iter().all(|c| {
        let n_alive = c.graph.n_alive();
        let n = c.w0.iter().sum::<f64>().round() as usize;
        let b = completeness_bounds(n_alive, n, ctx.diameter.unwrap_or(n_alive), inst.relax_eps.max(f64::MIN_POSITIVE));
        match inst.integrality {
            Integrality::Exact => t >= b.max_horizon && max_len as f64 >= b.max_cycle_len,
            Integrality::Relaxed => inst.relax_eps > 0.0 && ctx.diameter.is_some() && t >= b.relaxed_horizon && max_len >= n_alive,
        }
    });
    if all_cover {
        proven(ctx.contracted)
    } else {
        Verdict::Inconclusive
    }
}
