//! Labeled digraph view of an abstraction: strongly connected components,
//! periods, diameters, pruning of forbidden actions and cycle search.

use std::collections::{BTreeSet, HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{Abstraction, DiscreteCountingSet};

pub const DEFAULT_CYCLE_CAP: usize = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("edge ({src}, {mode}, {dst}) out of range")]
    EdgeOutOfRange { src: usize, mode: usize, dst: usize },
    #[error("node {node} has two successors under mode {mode}")]
    Nondeterministic { node: usize, mode: usize },
    #[error("component is trivial (single node without self-loop)")]
    TrivialComponent,
    #[error("graph is not strongly connected")]
    NotStronglyConnected,
    #[error("cycle enumeration exceeded the cap of {cap} cycles")]
    CycleOverflow { cap: usize },
    #[error("invalid cycle: {0}")]
    InvalidCycle(String),
}

/// Deterministic labeled digraph with stable node indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDigraph {
    n_nodes: usize,
    n_modes: usize,
    succ: Vec<Option<usize>>,
    alive: Vec<bool>,
}

impl LabeledDigraph {
    pub fn new(n_nodes: usize, n_modes: usize) -> Self {
        Self { n_nodes, n_modes, succ: vec![None; n_nodes * n_modes], alive: vec![true; n_nodes] }
    }

    pub fn from_edges(n_nodes: usize, n_modes: usize, edges: &[(usize, usize, usize)]) -> Result<Self, GraphError> {
        let mut g = Self::new(n_nodes, n_modes);
        for &(src, mode, dst) in edges {
            if src >= n_nodes || dst >= n_nodes || mode >= n_modes {
                return Err(GraphError::EdgeOutOfRange { src, mode, dst });
            }
            let slot = &mut g.succ[src * n_modes + mode];
            if slot.is_some_and(|d| d != dst) {
                return Err(GraphError::Nondeterministic { node: src, mode });
            }
            *slot = Some(dst);
        }
        Ok(g)
    }

    pub fn from_abstraction(abs: &Abstraction) -> Self {
        Self { n_nodes: abs.n_states(), n_modes: abs.n_modes(), succ: abs.succ.clone(), alive: vec![true; abs.n_states()] }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn is_alive(&self, q: usize) -> bool {
        self.alive[q]
    }

    pub fn alive_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes).filter(|&q| self.alive[q]).collect()
    }

    pub fn n_alive(&self) -> usize {
        self.alive.iter().filter(|a| **a).count()
    }

    /// Successor of `q` under `mode`, if both endpoints are alive.
    pub fn successor(&self, q: usize, mode: usize) -> Option<usize> {
        if !self.alive[q] {
            return None;
        }
        self.succ[q * self.n_modes + mode].filter(|&d| self.alive[d])
    }

    pub fn actions(&self, q: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_modes).filter_map(move |m| self.successor(q, m).map(|d| (m, d)))
    }

    pub fn edges(&self) -> Vec<(usize, usize, usize)> {
        (0..self.n_nodes).flat_map(|q| self.actions(q).map(move |(m, d)| (q, m, d))).collect()
    }

    pub fn n_edges(&self) -> usize {
        (0..self.n_nodes).map(|q| self.actions(q).count()).sum()
    }

    /// Incoming `(source, mode)` pairs per node.
    pub fn predecessors(&self) -> Vec<Vec<(usize, usize)>> {
        let mut pred = vec![Vec::new(); self.n_nodes];
        for (q, m, d) in self.edges() {
            pred[d].push((q, m));
        }
        pred
    }

    pub fn remove_action(&mut self, q: usize, mode: usize) {
        self.succ[q * self.n_modes + mode] = None;
    }

    pub fn remove_node(&mut self, q: usize) {
        self.alive[q] = false;
    }

    fn neighbours(&self, q: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.actions(q).map(|(_, d)| d).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Strongly connected component; `trivial` marks a single node without a self-loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub nodes: Vec<usize>,
    pub trivial: bool,
}

/// Tarjan's algorithm, iterative. Components come out sorted by their smallest node.
pub fn scc(g: &LabeledDigraph) -> Vec<Component> {
    let n = g.n_nodes();
    let adj: Vec<Vec<usize>> = (0..n).map(|q| g.neighbours(q)).collect();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut next = 0usize;
    let mut out = Vec::new();
    for root in 0..n {
        if !g.is_alive(root) || index[root] != usize::MAX {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            if *pos < adj[v].len() {
                let w = adj[v][*pos];
                *pos += 1;
                if index[w] == usize::MAX {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut nodes = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack underflow");
                        on_stack[w] = false;
                        nodes.push(w);
                        if w == v {
                            break;
                        }
                    }
                    nodes.sort_unstable();
                    let trivial = nodes.len() == 1 && !adj[v].contains(&v);
                    out.push(Component { nodes, trivial });
                }
            }
        }
    }
    out.sort_by_key(|c| c.nodes[0]);
    out
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub(crate) fn gcd_u64(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd_u64(b, a % b)
    }
}

pub(crate) fn lcm_u64(a: u64, b: u64) -> u64 {
    a / gcd_u64(a, b) * b
}

fn member_mask(n: usize, nodes: &[usize]) -> Vec<bool> {
    let mut m = vec![false; n];
    for &q in nodes {
        m[q] = true;
    }
    m
}

/// BFS levels from `anchor` restricted to `mask`.
fn bfs_levels(g: &LabeledDigraph, anchor: usize, mask: &[bool]) -> Vec<Option<usize>> {
    let mut level = vec![None; g.n_nodes()];
    level[anchor] = Some(0);
    let mut queue = VecDeque::from([anchor]);
    while let Some(u) = queue.pop_front() {
        let lu = level[u].unwrap();
        for (_, v) in g.actions(u) {
            if mask[v] && level[v].is_none() {
                level[v] = Some(lu + 1);
                queue.push_back(v);
            }
        }
    }
    level
}

fn period_and_levels(g: &LabeledDigraph, comp: &Component) -> Result<(usize, Vec<Option<usize>>), GraphError> {
    if comp.trivial || comp.nodes.is_empty() {
        return Err(GraphError::TrivialComponent);
    }
    let mask = member_mask(g.n_nodes(), &comp.nodes);
    let level = bfs_levels(g, comp.nodes[0], &mask);
    let mut p = 0usize;
    for &u in &comp.nodes {
        let lu = level[u].ok_or(GraphError::NotStronglyConnected)?;
        for (_, v) in g.actions(u) {
            if mask[v] {
                let lv = level[v].ok_or(GraphError::NotStronglyConnected)?;
                p = gcd(p, (lu + 1).abs_diff(lv));
            }
        }
    }
    Ok((p.max(1), level))
}

/// Greatest common divisor of all cycle lengths in a nontrivial component.
pub fn period(g: &LabeledDigraph, comp: &Component) -> Result<usize, GraphError> {
    period_and_levels(g, comp).map(|(p, _)| p)
}

/// Classes `D_0..D_{P-1}`; every edge goes from `D_p` to `D_{p+1 mod P}` and the smallest node is in `D_0`.
pub fn periodic_classes(g: &LabeledDigraph, comp: &Component) -> Result<Vec<Vec<usize>>, GraphError> {
    let (p, level) = period_and_levels(g, comp)?;
    let mut classes = vec![Vec::new(); p];
    for &q in &comp.nodes {
        classes[level[q].unwrap() % p].push(q);
    }
    Ok(classes)
}

/// Class label of every node of the component (`None` outside it).
pub fn class_labels(g: &LabeledDigraph, comp: &Component) -> Result<(usize, Vec<Option<usize>>), GraphError> {
    let classes = periodic_classes(g, comp)?;
    let mut label = vec![None; g.n_nodes()];
    for (p, cls) in classes.iter().enumerate() {
        for &q in cls {
            label[q] = Some(p);
        }
    }
    Ok((classes.len(), label))
}

/// Longest shortest path between two nodes of a strongly connected node set.
pub fn diameter_within(g: &LabeledDigraph, nodes: &[usize]) -> Result<usize, GraphError> {
    let mask = member_mask(g.n_nodes(), nodes);
    let mut diam = 0;
    for &s in nodes {
        let level = bfs_levels(g, s, &mask);
        for &t in nodes {
            diam = diam.max(level[t].ok_or(GraphError::NotStronglyConnected)?);
        }
    }
    Ok(diam)
}

/// Diameter over all alive nodes; fails unless they form one strongly connected set.
pub fn diameter(g: &LabeledDigraph) -> Result<usize, GraphError> {
    diameter_within(g, &g.alive_nodes())
}

/// Removes actions counted by any zero-bound set, then repeatedly removes
/// nodes without a remaining action until every survivor has one.
pub fn prune_zero_count(g: &LabeledDigraph, constraints: &[DiscreteCountingSet]) -> LabeledDigraph {
    let mut out = g.clone();
    for set in constraints.iter().filter(|c| c.bound == 0.0) {
        for (q, m) in set.pairs() {
            if q < out.n_nodes && m < out.n_modes {
                out.remove_action(q, m);
            }
        }
    }
    let pred = out.predecessors();
    let mut out_degree: Vec<usize> = (0..out.n_nodes).map(|q| out.actions(q).count()).collect();
    let mut queue: VecDeque<usize> = (0..out.n_nodes).filter(|&q| out.alive[q] && out_degree[q] == 0).collect();
    while let Some(q) = queue.pop_front() {
        if !out.alive[q] {
            continue;
        }
        out.alive[q] = false;
        for &(p, _) in &pred[q] {
            if out.alive[p] {
                out_degree[p] -= 1;
                if out_degree[p] == 0 {
                    queue.push_back(p);
                }
            }
        }
    }
    for q in 0..out.n_nodes {
        for m in 0..out.n_modes {
            if out.successor(q, m).is_none() {
                out.remove_action(q, m);
            }
        }
    }
    out
}

/// Closed walk `(q_i, mu_i)` stored in its lexicographically smallest rotation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Cycle {
    steps: Vec<(usize, usize)>,
}

fn min_rotation<T: Ord + Clone>(v: &[T]) -> Vec<T> {
    (0..v.len())
        .map(|k| v[k..].iter().chain(&v[..k]).cloned().collect::<Vec<T>>())
        .min()
        .unwrap_or_default()
}

impl Cycle {
    /// Checks closure against `g` and canonicalizes.
    pub fn new(steps: Vec<(usize, usize)>, g: &LabeledDigraph) -> Result<Self, GraphError> {
        if steps.is_empty() {
            return Err(GraphError::InvalidCycle("empty".into()));
        }
        let n = steps.len();
        for i in 0..n {
            let (q, m) = steps[i];
            if q >= g.n_nodes() || m >= g.n_modes() {
                return Err(GraphError::InvalidCycle(format!("pair ({q}, {m}) out of range")));
            }
            let next = steps[(i + 1) % n].0;
            if g.successor(q, m) != Some(next) {
                return Err(GraphError::InvalidCycle(format!("({q}, {m}) does not lead to {next}")));
            }
        }
        Ok(Self::canonical(steps))
    }

    /// Canonicalizes without checking closure.
    pub fn canonical(steps: Vec<(usize, usize)>) -> Self {
        Self { steps: min_rotation(&steps) }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[(usize, usize)] {
        &self.steps
    }

    pub fn state(&self, i: usize) -> usize {
        self.steps[i % self.len()].0
    }

    pub fn mode(&self, i: usize) -> usize {
        self.steps[i % self.len()].1
    }

    pub fn states(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps.iter().map(|s| s.0)
    }

    pub fn is_simple(&self) -> bool {
        let set: HashSet<usize> = self.states().collect();
        set.len() == self.len()
    }

    /// Fraction of positions using `mode`.
    pub fn mode_fraction(&self, mode: usize) -> f64 {
        self.steps.iter().filter(|s| s.1 == mode).count() as f64 / self.len() as f64
    }
}

/// All simple cycles of length at most `max_len`, one per canonical rotation.
pub fn enumerate_simple_cycles(g: &LabeledDigraph, max_len: usize, cap: usize) -> Result<Vec<Cycle>, GraphError> {
    let n = g.n_nodes();
    let pred = g.predecessors();
    let mut out = Vec::new();
    let mut on_path = vec![false; n];
    for start in (0..n).filter(|&q| g.is_alive(q)) {
        // distance from each node back to `start` through nodes >= start
        let mut dist = vec![usize::MAX; n];
        dist[start] = 0;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &(u, _) in &pred[v] {
                if u > start && dist[u] == usize::MAX {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
            }
        }
        let mut path: Vec<(usize, usize)> = Vec::new();
        // explicit DFS stack of (node, next mode to try)
        let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
        on_path[start] = true;
        while let Some(&mut (v, ref mut m)) = stack.last_mut() {
            if *m >= g.n_modes() {
                stack.pop();
                on_path[v] = false;
                path.pop();
                continue;
            }
            let mode = *m;
            *m += 1;
            let Some(w) = g.successor(v, mode) else { continue };
            let depth = stack.len();
            if w == start {
                let mut steps = path.clone();
                steps.push((v, mode));
                out.push(Cycle { steps });
                if out.len() > cap {
                    return Err(GraphError::CycleOverflow { cap });
                }
            } else if w > start && !on_path[w] && dist[w] != usize::MAX && depth + dist[w] <= max_len {
                path.push((v, mode));
                on_path[w] = true;
                stack.push((w, 0));
            }
        }
        on_path[start] = false;
    }
    for c in &mut out {
        *c = Cycle::canonical(std::mem::take(&mut c.steps));
    }
    out.sort_by(|a, b| (a.len(), &a.steps).cmp(&(b.len(), &b.steps)));
    Ok(out)
}

/// Biases the walk toward a mode with a per-walk target fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeBias {
    pub mode: usize,
    /// Target fractions; walk `k` uses `targets[k % targets.len()]`.
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOptions {
    pub count: usize,
    pub seed: u64,
    /// Walks are abandoned after this many steps without a revisit.
    pub max_len: usize,
    pub max_attempts: usize,
    /// Each accepted cycle must visit at least one node of every set.
    #[serde(default)]
    pub visit: Vec<Vec<usize>>,
    #[serde(default)]
    pub bias: Option<ModeBias>,
    /// Probability of repeating the previous mode when it is available.
    #[serde(default)]
    pub hold: f64,
}

impl SampleOptions {
    pub fn new(count: usize, seed: u64) -> Self {
        Self { count, seed, max_len: 10_000, max_attempts: 200 * count.max(1), visit: Vec::new(), bias: None, hold: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub cycles: Vec<Cycle>,
    pub attempts: usize,
    /// Set when the attempt budget ran out before `count` cycles were found.
    pub exhausted: bool,
}

/// Seeded random walks truncated at the first node revisit.
pub fn sample_cycles(g: &LabeledDigraph, opts: &SampleOptions) -> SampleResult {
    let nodes = g.alive_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let masks: Vec<Vec<bool>> = opts.visit.iter().map(|v| member_mask(g.n_nodes(), v)).collect();
    let mut found: BTreeSet<(usize, Cycle)> = BTreeSet::new();
    let mut attempts = 0;
    let mut first_seen = vec![usize::MAX; g.n_nodes()];
    while found.len() < opts.count && attempts < opts.max_attempts && !nodes.is_empty() {
        let target = opts.bias.as_ref().map(|b| (b.mode, b.targets[attempts % b.targets.len()]));
        attempts += 1;
        let mut q = nodes[rng.gen_range(0..nodes.len())];
        let mut walk: Vec<(usize, usize)> = Vec::new();
        let mut prev_mode: Option<usize> = None;
        let closed = loop {
            if first_seen[q] != usize::MAX {
                break Some(first_seen[q]);
            }
            if walk.len() >= opts.max_len {
                break None;
            }
            first_seen[q] = walk.len();
            let acts: Vec<(usize, usize)> = g.actions(q).collect();
            if acts.is_empty() {
                break None;
            }
            let (m, d) = choose_action(&acts, prev_mode, target, opts.hold, &mut rng);
            walk.push((q, m));
            prev_mode = Some(m);
            q = d;
        };
        for &(s, _) in &walk {
            first_seen[s] = usize::MAX;
        }
        let Some(start) = closed else { continue };
        let cycle = Cycle::canonical(walk[start..].to_vec());
        if masks.iter().all(|mask| cycle.states().any(|s| mask[s])) {
            found.insert((cycle.len(), cycle));
        }
    }
    let exhausted = found.len() < opts.count;
    if exhausted {
        log::warn!("cycle sampling found {} of {} cycles in {} attempts", found.len(), opts.count, attempts);
    }
    SampleResult { cycles: found.into_iter().map(|(_, c)| c).collect(), attempts, exhausted }
}

fn choose_action(
    acts: &[(usize, usize)],
    prev_mode: Option<usize>,
    target: Option<(usize, f64)>,
    hold: f64,
    rng: &mut ChaCha8Rng,
) -> (usize, usize) {
    if acts.len() == 1 {
        return acts[0];
    }
    if let Some(pm) = prev_mode {
        if hold > 0.0 && rng.gen::<f64>() < hold {
            if let Some(a) = acts.iter().find(|a| a.0 == pm) {
                return *a;
            }
        }
    }
    if let Some((mode, frac)) = target {
        let biased = acts.iter().find(|a| a.0 == mode).copied();
        let others: Vec<(usize, usize)> = acts.iter().filter(|a| a.0 != mode).copied().collect();
        if let Some(b) = biased {
            if others.is_empty() || rng.gen::<f64>() < frac {
                return b;
            }
            return others[rng.gen_range(0..others.len())];
        }
    }
    acts[rng.gen_range(0..acts.len())]
}
