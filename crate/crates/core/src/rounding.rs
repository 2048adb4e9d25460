//! Rounding of non-integer suffixes and the violation bounds that come with it.
//!
//! Step 1 apportions an integer total to every cycle, step 2 spreads each
//! total pseudo-periodically around its cycle, and step 3 re-solves the prefix
//! against the fixed integer suffix. Only aperiodic graphs are supported.

use thiserror::Error;

use crate::abstraction::DiscreteCountingSet;
use crate::aggregate::maxcnt;
use crate::graph::{period, scc, Cycle, GraphError, LabeledDigraph};
use crate::synthesis::{suffix_count, ClassSolution, Integrality, MultiClassInstance, PrefixSuffixSolution, Provenance};

#[derive(Debug, Error)]
pub enum RoundingError {
    #[error("rounding on periodic graphs is not supported (cycle {cycle} lies in a component of period {period})")]
    PeriodicGraph { cycle: usize, period: usize },
    #[error("{0} cycles but {1} assignments")]
    Shape(usize, usize),
    #[error("negative or non-finite weight {0}")]
    InvalidWeight(f64),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Largest-remainder apportionment of `round(sum weights)` units; ties go to the lowest index.
pub fn apportion_weights(weights: &[f64]) -> Result<Vec<u64>, RoundingError> {
    if let Some(&w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(RoundingError::InvalidWeight(w));
    }
    let total = weights.iter().sum::<f64>().round() as u64;
    let mut out: Vec<u64> = weights.iter().map(|w| w.floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // stable sort keeps the lowest index first among equal remainders
    order.sort_by(|&a, &b| (weights[b] - weights[b].floor()).total_cmp(&(weights[a] - weights[a].floor())));
    for &j in order.iter().take(total.saturating_sub(assigned) as usize) {
        out[j] += 1;
    }
    Ok(out)
}

/// `kappa1 + 1` at indices `floor(k |C| / kappa2)`, `kappa1` elsewhere.
pub fn pseudo_periodic(len: usize, n: u64) -> Vec<f64> {
    if len == 0 {
        return Vec::new();
    }
    let l = len as u64;
    let (k1, k2) = (n / l, n % l);
    let mut out = vec![k1 as f64; len];
    for k in 0..k2 {
        out[(k * l / k2) as usize] += 1.0;
    }
    out
}

fn ensure_aperiodic(g: &LabeledDigraph, cycles: &[Cycle]) -> Result<(), RoundingError> {
    let comps = scc(g);
    let mut comp_of = vec![usize::MAX; g.n_nodes()];
    for (c, comp) in comps.iter().enumerate() {
        for &q in &comp.nodes {
            comp_of[q] = c;
        }
    }
    let mut periods: Vec<Option<usize>> = vec![None; comps.len()];
    for (j, cy) in cycles.iter().enumerate() {
        let c = comp_of[cy.state(0)];
        let p = match periods[c] {
            Some(p) => p,
            None => {
                let p = period(g, &comps[c])?;
                periods[c] = Some(p);
                p
            }
        };
        if p > 1 {
            return Err(RoundingError::PeriodicGraph { cycle: j, period: p });
        }
    }
    Ok(())
}

/// Steps 1 and 2: integer assignments with the apportioned totals.
pub fn round_suffix(g: &LabeledDigraph, cycles: &[Cycle], alphas: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, RoundingError> {
    if cycles.len() != alphas.len() {
        return Err(RoundingError::Shape(cycles.len(), alphas.len()));
    }
    ensure_aperiodic(g, cycles)?;
    let weights: Vec<f64> = alphas.iter().map(|a| a.iter().sum()).collect();
    let totals = apportion_weights(&weights)?;
    Ok(cycles.iter().zip(totals).map(|(c, n)| pseudo_periodic(c.len(), n)).collect())
}

/// Number of maximal circular runs of cycle positions lying in `x`.
pub fn segment_count(cycle: &Cycle, x: &DiscreteCountingSet) -> usize {
    let mem: Vec<bool> = cycle.steps().iter().map(|&(q, m)| x.contains(q, m)).collect();
    let n = mem.len();
    if mem.iter().all(|b| *b) {
        return usize::from(n > 0);
    }
    (0..n).filter(|&i| mem[i] && !mem[(i + n - 1) % n]).count()
}

/// Relaxed bound `R + J + sum_j p_j` met by any rounded suffix of a feasible relaxed one.
pub fn violation_bound(cycles: &[Cycle], x: &DiscreteCountingSet, r: f64) -> f64 {
    r + cycles.len() as f64 + cycles.iter().map(|c| segment_count(c, x) as f64).sum::<f64>()
}

/// `maxcnt(C, average_N) + |C| / 4`, an upper bound on the pseudo-periodic count for `x`.
pub fn worst_case_bound(cycle: &Cycle, n: f64, x: &DiscreteCountingSet) -> f64 {
    let avg = vec![n / cycle.len() as f64; cycle.len()];
    maxcnt(cycle, &avg, x) + cycle.len() as f64 / 4.0
}

/// Step 3 input: the instance with every class suffix fixed to its rounded
/// assignment and each bound relaxed just enough to admit that suffix.
pub fn fix_suffix(inst: &MultiClassInstance, relaxed: &PrefixSuffixSolution) -> Result<MultiClassInstance, RoundingError> {
    if relaxed.classes.len() != inst.classes.len() {
        return Err(RoundingError::Shape(inst.classes.len(), relaxed.classes.len()));
    }
    let mut out = inst.clone();
    let mut rounded = Vec::new();
    for (c, sol) in out.classes.iter_mut().zip(&relaxed.classes) {
        let a = round_suffix(&c.graph, &sol.cycles, &sol.alphas)?;
        c.cycles = sol.cycles.clone();
        c.fixed_suffix = Some(a.clone());
        rounded.push(ClassSolution { r: Vec::new(), w: Vec::new(), cycles: sol.cycles.clone(), alphas: a });
    }
    let probe = PrefixSuffixSolution { horizon: inst.horizon, classes: rounded, provenance: Provenance::Rounded };
    let base: Vec<f64> = (0..inst.constraints.len())
        .map(|l| inst.relax_per_constraint.as_ref().map_or(inst.relax_eps, |e| e[l]))
        .collect();
    let eps = (0..inst.constraints.len())
        .map(|l| {
            let need = suffix_count(inst, &probe, l, inst.lcm_cap) - inst.constraints[l].bound;
            base[l].max(need)
        })
        .collect();
    out.relax_per_constraint = Some(eps);
    out.integrality = Integrality::Exact;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::{fig4, ring};

    fn loop_graph(n: usize) -> (LabeledDigraph, Cycle) {
        // ring plus a self-loop at 0 makes the graph aperiodic
        let mut edges: Vec<(usize, usize, usize)> = (0..n).map(|q| (q, 0, (q + 1) % n)).collect();
        edges.push((0, 1, 0));
        let g = LabeledDigraph::from_edges(n, 2, &edges).unwrap();
        let c = Cycle::new((0..n).map(|q| (q, 0)).collect(), &g).unwrap();
        (g, c)
    }

    #[test]
    fn apportionment() {
        assert_eq!(apportion_weights(&[1.0, 2.0, 0.0]).unwrap(), vec![1, 2, 0]);
        assert_eq!(apportion_weights(&[1.5, 1.5]).unwrap(), vec![2, 1]);
        assert_eq!(apportion_weights(&[0.2, 0.3, 0.5]).unwrap(), vec![0, 0, 1]);
        assert!(apportion_weights(&[-1.0]).is_err());
    }

    #[test]
    fn pseudo_periodic_values() {
        assert_eq!(pseudo_periodic(7, 3), vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(pseudo_periodic(7, 10), vec![2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 1.0]);
        assert_eq!(pseudo_periodic(5, 10), vec![2.0; 5]);
        assert_eq!(pseudo_periodic(4, 0), vec![0.0; 4]);
    }

    #[test]
    fn round_single_cycle() {
        let (g, c) = loop_graph(7);
        let a = vec![vec![0.5, 0.5, 0.25, 0.25, 0.5, 0.5, 0.5]];
        assert_eq!(round_suffix(&g, &[c], &a).unwrap(), vec![vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0]]);
    }

    #[test]
    fn periodic_graph_rejected() {
        let g = ring(4);
        let c = Cycle::new((0..4).map(|q| (q, 0)).collect(), &g).unwrap();
        assert!(matches!(round_suffix(&g, &[c], &[vec![1.0; 4]]), Err(RoundingError::PeriodicGraph { period: 4, .. })));
        let g = fig4();
        let c = Cycle::new(vec![(0, 0), (1, 0), (2, 0), (3, 0)], &g).unwrap();
        assert!(round_suffix(&g, &[c], &[vec![1.0; 4]]).is_err());
    }

    #[test]
    fn segments() {
        let (_, c) = loop_graph(6);
        let none = DiscreteCountingSet::empty(6, 2, 0.0);
        assert_eq!(segment_count(&c, &none), 0);
        let all = DiscreteCountingSet::modes_only(6, 2, &[0], 0.0);
        assert_eq!(segment_count(&c, &all), 1);
        let mid = DiscreteCountingSet::from_pairs(6, 2, &[(1, 0), (2, 0), (3, 0)], 0.0);
        assert_eq!(segment_count(&c, &mid), 1);
        let wrap = DiscreteCountingSet::from_pairs(6, 2, &[(5, 0), (0, 0), (3, 0)], 0.0);
        assert_eq!(segment_count(&c, &wrap), 2);
        assert_eq!(violation_bound(&[c.clone()], &mid, 4.0), 6.0);
        assert_eq!(violation_bound(&[c.clone(), c], &all, 4.0), 8.0);
    }

    #[test]
    fn worst_case() {
        let (_, c) = loop_graph(4);
        let x = DiscreteCountingSet::from_pairs(4, 2, &[(0, 0)], 0.0);
        assert_eq!(worst_case_bound(&c, 8.0, &x), 3.0);
    }
}
