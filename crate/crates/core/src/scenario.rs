//! Scenario configuration, the two shipped presets and the end-to-end pipeline.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{build_abstraction, check_epsilon, expand_set, Abstraction, AbstractionError, ContinuousCountingSet, DiscreteCountingSet, EpsilonLedgerRow, Region};
use crate::aggregate::DEFAULT_LCM_CAP;
use crate::control::{open_loop_plans, verify_discrete, ClassPlans, ControlError, DiscreteReport, FleetDiscreteState, SubsystemPlan};
use crate::graph::{enumerate_simple_cycles, prune_zero_count, sample_cycles, Cycle, GraphError, LabeledDigraph, ModeBias, SampleOptions, DEFAULT_CYCLE_CAP};
use crate::model::{Domain, Mode, ModelError, Polynomial, SwitchedModel};
use crate::rounding::{fix_suffix, RoundingError};
use crate::sim::{density_histogram, draw_disturbances, simulate_fleet, verify_continuous, ContinuousConstraint, FleetTrace, SimError};
use crate::solver::{export_mps, import_solution, solve_ilp, solve_lp, SolveResult, SolveStats, SolverError, SolverOptions, Status};
use crate::synthesis::{
    build_multiclass, check_solution, decode, infeasibility_verdict, BuildReport, ClassInstance, Integrality, JointConstraint, MultiClassInstance, PrefixSuffixSolution, Provenance,
    SynthesisError, Verdict, VerdictContext,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("class {class}: margin {epsilon} fails the bisimilarity inequality")]
    Certificate { class: String, epsilon: f64, ledger: Vec<EpsilonLedgerRow> },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Rounding(#[from] RoundingError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("solution is inconsistent with the instance: {0}")]
    Inconsistent(String),
}

impl ScenarioError {
    /// Configuration and certificate problems, as opposed to runtime failures.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            ScenarioError::Config(_) | ScenarioError::Certificate { .. } | ScenarioError::Json(_) | ScenarioError::Model(_) | ScenarioError::Abstraction(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub modes: Vec<Mode>,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractionConfig {
    pub eta: f64,
    pub tau: f64,
    /// Margin used to expand counting sets; the minimal certified margin when absent.
    #[serde(default)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitConfig {
    /// Uniform over the domain, redrawn until the cell survives pruning.
    Uniform,
    /// One continuous state per subsystem.
    Explicit { states: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub init: InitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum CycleConfig {
    Enumerate {
        max_len: usize,
    },
    Sample {
        count: usize,
        #[serde(default = "default_walk_len")]
        max_len: usize,
        /// Every cycle visits a state outside each listed constraint's discrete set.
        #[serde(default)]
        visit_outside: Vec<usize>,
        #[serde(default)]
        bias: Option<ModeBias>,
        #[serde(default)]
        hold: f64,
        #[serde(default)]
        max_attempts: Option<usize>,
    },
}

fn default_walk_len() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassConfig {
    pub name: String,
    pub model: ModelConfig,
    pub abstraction: AbstractionConfig,
    pub fleet: FleetConfig,
    pub cycles: CycleConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Max,
    /// At least `bound`; only for mode-only sets, rewritten as a maximum on the other modes.
    Min,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintConfig {
    pub name: String,
    #[serde(default = "default_region")]
    pub region: Region,
    /// Mode indices; all modes when absent.
    #[serde(default)]
    pub modes: Option<Vec<usize>>,
    /// Absolute bound `R`; overrides `fraction`.
    #[serde(rename = "R", default)]
    pub bound: Option<f64>,
    /// Bound as a fraction of the fleet size, rounded down.
    #[serde(default)]
    pub fraction: Option<f64>,
    #[serde(default = "default_kind")]
    pub kind: BoundKind,
    /// Classes the constraint counts; all when absent.
    #[serde(default)]
    pub classes: Option<Vec<usize>>,
}

fn default_region() -> Region {
    Region::All
}

fn default_kind() -> BoundKind {
    BoundKind::Max
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    /// Branch-and-bound on the integer program.
    #[default]
    Internal,
    /// Relaxed program, rounding, then an integer prefix against the fixed suffix.
    Relaxed,
    /// Export to MPS for an external solver.
    Mps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(default)]
    pub solver: SolverChoice,
    #[serde(default)]
    pub relax_eps: f64,
    #[serde(default = "default_lcm_cap")]
    pub lcm_cap: u64,
    #[serde(default = "default_true")]
    pub conservative_fallback: bool,
    /// Common divisor: the program is solved for `N / scale` subsystems.
    #[serde(default)]
    pub scale: Option<u64>,
    #[serde(default)]
    pub node_limit: Option<usize>,
    /// Solver wall-clock budget in seconds.
    #[serde(default)]
    pub time_limit: Option<f64>,
}

fn default_lcm_cap() -> u64 {
    DEFAULT_LCM_CAP
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub horizon: usize,
    /// Density bins over state coordinate 0; defaults to 24 bins over the first class domain.
    #[serde(default)]
    pub bins: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub classes: Vec<ClassConfig>,
    pub constraints: Vec<ConstraintConfig>,
    pub synthesis: SynthesisConfig,
    pub simulation: SimulationConfig,
}

impl ScenarioConfig {
    pub fn from_json(s: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String, ScenarioError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn total_n(&self) -> usize {
        self.classes.iter().map(|c| c.fleet.n).sum()
    }

    /// Sets every class size to `n` split evenly (the first classes take the remainder).
    pub fn set_total_n(&mut self, n: usize) {
        let k = self.classes.len();
        for (h, c) in self.classes.iter_mut().enumerate() {
            c.fleet.n = n / k + usize::from(h < n % k);
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Config(m));
        if self.classes.is_empty() {
            return bad("at least one class is required".into());
        }
        let tau = self.classes[0].abstraction.tau;
        for c in &self.classes {
            if c.abstraction.tau != tau {
                return bad(format!("class {} uses tau {} but the fleet shares tau {tau}", c.name, c.abstraction.tau));
            }
            if let InitConfig::Explicit { states } = &c.fleet.init {
                if states.len() != c.fleet.n {
                    return bad(format!("class {}: {} explicit initial states for N = {}", c.name, states.len(), c.fleet.n));
                }
            }
        }
        for (l, x) in self.constraints.iter().enumerate() {
            if x.bound.is_none() && x.fraction.is_none() {
                return bad(format!("constraint {l} ({}) needs R or fraction", x.name));
            }
            if x.kind == BoundKind::Min && x.region != Region::All {
                return bad(format!("constraint {l} ({}): minimum bounds need a mode-only set", x.name));
            }
            if let Some(cls) = &x.classes {
                if cls.iter().any(|&h| h >= self.classes.len()) {
                    return bad(format!("constraint {l} ({}) names a missing class", x.name));
                }
            }
        }
        if let Some(s) = self.synthesis.scale {
            if s == 0 || self.classes.iter().any(|c| c.fleet.n % s as usize != 0) {
                return bad(format!("scale {s} must divide every class size"));
            }
        }
        if let Some(t) = self.synthesis.time_limit {
            if !(t.is_finite() && t >= 0.0) {
                return bad(format!("time limit {t} must be a non-negative number of seconds"));
            }
        }
        Ok(())
    }

    /// Bound as a maximum count, together with the modes it applies to.
    fn max_form(&self, x: &ConstraintConfig, n_modes: usize) -> (Option<Vec<usize>>, f64) {
        let n = self.total_n() as f64;
        let r = x.bound.unwrap_or_else(|| (x.fraction.unwrap_or(0.0) * n).floor());
        match x.kind {
            BoundKind::Max => (x.modes.clone(), r),
            BoundKind::Min => {
                let inside = x.modes.clone().unwrap_or_default();
                let others: Vec<usize> = (0..n_modes).filter(|m| !inside.contains(m)).collect();
                (Some(others), n - r)
            }
        }
    }
}

/// Sparse polynomial from `(coefficient, exponents)` pairs.
fn poly(pairs: &[(f64, &[u32])]) -> Polynomial {
    Polynomial::from_pairs(pairs)
}

/// The two-state nonlinear example with inputs `u = -1` and `u = 1`.
pub fn numerical_model() -> SwitchedModel {
    let modes = [-1.0, 1.0]
        .iter()
        .enumerate()
        .map(|(k, &u)| {
            let f1 = poly(&[(-2.0, &[1, 0]), (2.0 * u, &[0, 0]), (1.0, &[0, 1])]);
            let f2 = poly(&[(-1.0, &[1, 0]), (u, &[0, 0]), (-2.0, &[0, 1]), (-1.0, &[0, 3])]);
            Mode::new(format!("u{}", k + 1), vec![f1, f2], 9.75, std::f64::consts::SQRT_2, 2.0, 0.0).expect("valid preset mode")
        })
        .collect();
    SwitchedModel::new(modes, Domain::new(vec![-2.0, -1.5], vec![2.0, 1.5]).expect("valid domain")).expect("valid preset model")
}

/// Thermostatic load `theta' = -a (theta - theta_a) - b P 1_on` with `a = 1/(RC)` and `b = COP/C`.
pub fn tcl_model(r: f64, c: f64, theta_a: f64, p: f64, cop: f64, delta_bar: f64, domain: (f64, f64)) -> SwitchedModel {
    let a = 1.0 / (r * c);
    let b = cop / c;
    let off = poly(&[(-a, &[1]), (a * theta_a, &[0])]);
    let on = poly(&[(-a, &[1]), (a * theta_a - b * p, &[0])]);
    let modes = vec![
        Mode::new("off", vec![off], a, 1.0, a, delta_bar).expect("valid preset mode"),
        Mode::new("on", vec![on], a, 1.0, a, delta_bar).expect("valid preset mode"),
    ];
    SwitchedModel::new(modes, Domain::new(vec![domain.0], vec![domain.1]).expect("valid domain")).expect("valid preset model")
}

pub const TCL_COP: f64 = 2.5;
pub const TCL_AMBIENT: f64 = 32.0;
pub const TCL_DEAD_BAND: (f64, f64) = (21.3, 23.7);

/// Numerical example: 55 % caps on both modes and both half planes, `T = 10`, 200 sampled cycles.
pub fn numerical_preset() -> ScenarioConfig {
    let model = numerical_model();
    let dim = 2;
    ScenarioConfig {
        name: "numerical".into(),
        // seed 1 draws 58 of 100 initial states into x1 >= -0.1, above the 55 % cap at time 0
        seed: 2,
        classes: vec![ClassConfig {
            name: "nonlinear".into(),
            model: ModelConfig { modes: model.modes, domain: model.domain },
            abstraction: AbstractionConfig { eta: 0.05, tau: 0.32, epsilon: Some(0.1) },
            fleet: FleetConfig { n: 100, init: InitConfig::Uniform },
            cycles: CycleConfig::Sample { count: 200, max_len: 10_000, visit_outside: vec![2, 3], bias: None, hold: 0.9, max_attempts: None },
        }],
        constraints: vec![
            ConstraintConfig { name: "mode u1".into(), region: Region::All, modes: Some(vec![0]), bound: None, fraction: Some(0.55), kind: BoundKind::Max, classes: None },
            ConstraintConfig { name: "mode u2".into(), region: Region::All, modes: Some(vec![1]), bound: None, fraction: Some(0.55), kind: BoundKind::Max, classes: None },
            ConstraintConfig {
                name: "x1 >= 0".into(),
                region: Region::half_space(dim, 0, Some(0.0), None),
                modes: None,
                bound: None,
                fraction: Some(0.55),
                kind: BoundKind::Max,
                classes: None,
            },
            ConstraintConfig {
                name: "x1 <= 0".into(),
                region: Region::half_space(dim, 0, None, Some(0.0)),
                modes: None,
                bound: None,
                fraction: Some(0.55),
                kind: BoundKind::Max,
                classes: None,
            },
        ],
        synthesis: SynthesisConfig { horizon: 10, solver: SolverChoice::Internal, relax_eps: 0.0, lcm_cap: DEFAULT_LCM_CAP, conservative_fallback: true, scale: None, node_limit: None, time_limit: None },
        simulation: SimulationConfig { horizon: 50, bins: None },
    }
}

fn tcl_class(name: &str, r: f64, c: f64, p: f64, eta: f64, n: usize) -> ClassConfig {
    let model = tcl_model(r, c, TCL_AMBIENT, p, TCL_COP, 0.025, TCL_DEAD_BAND);
    ClassConfig {
        name: name.into(),
        model: ModelConfig { modes: model.modes, domain: model.domain },
        abstraction: AbstractionConfig { eta, tau: 0.05, epsilon: Some(0.2) },
        fleet: FleetConfig { n, init: InitConfig::Uniform },
        cycles: CycleConfig::Sample {
            count: 50,
            max_len: 10_000,
            visit_outside: vec![],
            bias: Some(ModeBias { mode: 1, targets: vec![0.2, 0.25, 0.3, 0.35, 0.4, 0.45] }),
            hold: 0.0,
            max_attempts: None,
        },
    }
}

/// Two TCL classes, dead band [21.3, 23.7] and an upper bound of 60 on the mode-on count for N = 200.
pub fn tcl_preset() -> ScenarioConfig {
    ScenarioConfig {
        name: "tcl".into(),
        seed: 1,
        classes: vec![tcl_class("class1", 2.0, 2.0, 5.6, 0.002, 100), tcl_class("class2", 2.2, 2.2, 5.9, 0.0015, 100)],
        constraints: vec![
            ConstraintConfig {
                name: "dead band".into(),
                region: Region::Outside { lo: vec![TCL_DEAD_BAND.0], hi: vec![TCL_DEAD_BAND.1] },
                modes: None,
                bound: Some(0.0),
                fraction: None,
                kind: BoundKind::Max,
                classes: None,
            },
            ConstraintConfig { name: "on count".into(), region: Region::All, modes: Some(vec![1]), bound: None, fraction: Some(0.3), kind: BoundKind::Max, classes: None },
        ],
        synthesis: SynthesisConfig { horizon: 20, solver: SolverChoice::Internal, relax_eps: 0.0, lcm_cap: DEFAULT_LCM_CAP, conservative_fallback: true, scale: None, node_limit: None, time_limit: None },
        simulation: SimulationConfig { horizon: 100, bins: Some((0..=24).map(|k| 21.3 + 0.1 * k as f64).collect()) },
    }
}

/// Same fleet with a lower bound of 67 of 200 on the mode-on count.
pub fn tcl_min_preset() -> ScenarioConfig {
    let mut cfg = tcl_preset();
    cfg.name = "tcl-min".into();
    cfg.constraints[1] = ConstraintConfig {
        name: "on count".into(),
        region: Region::All,
        modes: Some(vec![1]),
        bound: None,
        fraction: Some(0.335),
        kind: BoundKind::Min,
        classes: None,
    };
    cfg
}

pub fn preset(name: &str) -> Option<ScenarioConfig> {
    match name {
        "numerical" => Some(numerical_preset()),
        "tcl" => Some(tcl_preset()),
        "tcl-min" => Some(tcl_min_preset()),
        _ => None,
    }
}

pub const PRESETS: [&str; 3] = ["numerical", "tcl", "tcl-min"];

/// Per-class artifacts of the preparation stage.
#[derive(Debug, Clone)]
pub struct PreparedClass {
    pub name: String,
    pub model: SwitchedModel,
    pub abstraction: Abstraction,
    pub epsilon: f64,
    pub ledger: Vec<EpsilonLedgerRow>,
    /// Pruned graph.
    pub graph: LabeledDigraph,
    pub initial_states: Vec<usize>,
    pub x0: Vec<Vec<f64>>,
    pub cycles: Vec<Cycle>,
    pub cycles_exhausted: bool,
    pub cycles_complete_to: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ScenarioConfig,
    pub classes: Vec<PreparedClass>,
    /// Instance at the solved scale.
    pub instance: MultiClassInstance,
    pub continuous: Vec<ContinuousConstraint>,
    pub scale: u64,
}

impl Prepared {
    /// Instance with the original fleet size.
    pub fn full_instance(&self) -> MultiClassInstance {
        let mut inst = self.instance.clone();
        let s = self.scale as f64;
        for (c, p) in inst.classes.iter_mut().zip(&self.classes) {
            c.w0 = histogram(&p.initial_states, p.graph.n_nodes());
        }
        for x in &mut inst.constraints {
            x.bound = (x.bound * s).round();
        }
        inst.scale = 1;
        inst
    }
}

fn histogram(states: &[usize], n: usize) -> Vec<f64> {
    let mut w = vec![0.0; n];
    for &q in states {
        w[q] += 1.0;
    }
    w
}

/// Sub-seeds derived from the scenario seed so that stages do not share streams.
fn stage_seed(seed: u64, stage: u64, class: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stage * 1_000_003 + class as u64)
}

fn draw_initial(cfg: &ClassConfig, abs: &Abstraction, g: &LabeledDigraph, count: usize, seed: u64) -> Result<(Vec<usize>, Vec<Vec<f64>>), ScenarioError> {
    match &cfg.fleet.init {
        InitConfig::Explicit { states } => {
            let mut qs = Vec::with_capacity(states.len());
            for x in states {
                let q = abs.grid.locate(x).ok_or_else(|| ScenarioError::Config(format!("class {}: initial state {x:?} outside the grid", cfg.name)))?;
                qs.push(q);
            }
            Ok((qs, states.clone()))
        }
        InitConfig::Uniform => {
            let d = &abs.grid.domain;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut qs = Vec::with_capacity(count);
            let mut xs = Vec::with_capacity(count);
            let mut tries = 0usize;
            while qs.len() < count {
                tries += 1;
                if tries > 10_000 * count.max(1) {
                    return Err(ScenarioError::Config(format!("class {}: no surviving cell found for the initial states", cfg.name)));
                }
                let x: Vec<f64> = d.lo.iter().zip(&d.hi).map(|(l, h)| rng.gen_range(*l..=*h)).collect();
                if let Some(q) = abs.grid.locate(&x) {
                    // with nothing alive the fleet still has to start somewhere, and the program is infeasible
                    if g.is_alive(q) || g.n_alive() == 0 {
                        qs.push(q);
                        xs.push(x);
                    }
                }
            }
            Ok((qs, xs))
        }
    }
}

/// Builds abstractions, discrete constraints, pruned graphs, initial states and cycles.
pub fn prepare(config: &ScenarioConfig) -> Result<Prepared, ScenarioError> {
    config.validate()?;
    let scale = config.synthesis.scale.unwrap_or(1);
    let n_classes = config.classes.len();
    let mut classes = Vec::with_capacity(n_classes);
    let mut discrete: Vec<Vec<DiscreteCountingSet>> = Vec::with_capacity(n_classes);
    let mut continuous: Vec<ContinuousConstraint> = config
        .constraints
        .iter()
        .map(|x| ContinuousConstraint { name: x.name.clone(), sets: vec![None; n_classes], bound: 0.0 })
        .collect();
    for (h, cc) in config.classes.iter().enumerate() {
        let model = SwitchedModel::new(cc.model.modes.clone(), cc.model.domain.clone())?;
        let abs = build_abstraction(&model, cc.abstraction.tau, cc.abstraction.eta)?;
        let epsilon = cc.abstraction.epsilon.unwrap_or(abs.epsilon);
        let ledger = check_epsilon(&model, cc.abstraction.tau, cc.abstraction.eta, epsilon);
        if !epsilon.is_finite() || ledger.iter().any(|r| !r.holds) {
            return Err(ScenarioError::Certificate { class: cc.name.clone(), epsilon, ledger });
        }
        let nm = model.n_modes();
        let mut sets = Vec::with_capacity(config.constraints.len());
        for (l, x) in config.constraints.iter().enumerate() {
            let (modes, bound) = config.max_form(x, nm);
            if modes.as_ref().is_some_and(|ms| ms.iter().any(|&m| m >= nm)) {
                return Err(ScenarioError::Config(format!("constraint {} names a mode class {} does not have", x.name, cc.name)));
            }
            continuous[l].bound = bound;
            let counted = x.classes.as_ref().map_or(true, |c| c.contains(&h));
            if counted {
                let cs = ContinuousCountingSet { region: x.region.clone(), modes, bound };
                sets.push(expand_set(&cs, epsilon, &abs.grid, nm));
                continuous[l].sets[h] = Some(cs);
            } else {
                sets.push(DiscreteCountingSet::empty(abs.n_states(), nm, bound));
            }
        }
        let graph = prune_zero_count(&LabeledDigraph::from_abstraction(&abs), &sets);
        if graph.n_alive() == 0 {
            log::warn!("class {}: pruning removed every state", cc.name);
        }
        let per = cc.fleet.n / scale as usize;
        let (base_q, base_x) = draw_initial(cc, &abs, &graph, per, stage_seed(config.seed, 1, h))?;
        // under scaling every drawn state stands for `scale` subsystems
        let (initial_states, x0) = if matches!(cc.fleet.init, InitConfig::Uniform) && scale > 1 {
            let s = scale as usize;
            (
                base_q.iter().flat_map(|&q| std::iter::repeat(q).take(s)).collect(),
                base_x.iter().flat_map(|x| std::iter::repeat(x.clone()).take(s)).collect(),
            )
        } else {
            (base_q, base_x)
        };
        let (cycles, exhausted, complete) = match &cc.cycles {
            CycleConfig::Enumerate { max_len } => (enumerate_simple_cycles(&graph, *max_len, DEFAULT_CYCLE_CAP)?, false, Some(*max_len)),
            CycleConfig::Sample { count, max_len, visit_outside, bias, hold, max_attempts } => {
                let mut opts = SampleOptions::new(*count, stage_seed(config.seed, 2, h));
                opts.max_len = *max_len;
                if let Some(a) = max_attempts {
                    opts.max_attempts = *a;
                }
                opts.bias = bias.clone();
                opts.hold = *hold;
                for &l in visit_outside {
                    let set = sets.get(l).ok_or_else(|| ScenarioError::Config(format!("visit_outside names missing constraint {l}")))?;
                    opts.visit.push((0..abs.n_states()).filter(|&q| (0..nm).all(|m| !set.contains(q, m))).collect());
                }
                let res = sample_cycles(&graph, &opts);
                (res.cycles, res.exhausted, None)
            }
        };
        log::info!(
            "class {}: {} states, {} alive after pruning, {} cycles, epsilon {epsilon}",
            cc.name,
            abs.n_states(),
            graph.n_alive(),
            cycles.len()
        );
        discrete.push(sets);
        classes.push(PreparedClass {
            name: cc.name.clone(),
            model,
            abstraction: abs,
            epsilon,
            ledger,
            graph,
            initial_states,
            x0,
            cycles,
            cycles_exhausted: exhausted,
            cycles_complete_to: complete,
        });
    }
    let sf = scale as f64;
    let instance = MultiClassInstance {
        classes: classes
            .iter()
            .map(|p| {
                let mut w0 = histogram(&p.initial_states, p.graph.n_nodes());
                for v in &mut w0 {
                    *v /= sf;
                }
                ClassInstance { name: p.name.clone(), graph: p.graph.clone(), w0, cycles: p.cycles.clone(), fixed_suffix: None }
            })
            .collect(),
        constraints: config
            .constraints
            .iter()
            .enumerate()
            .map(|(l, x)| JointConstraint {
                name: x.name.clone(),
                sets: discrete.iter().map(|s| s[l].clone()).collect(),
                // bounds scale down to the largest integer the smaller fleet may use
                bound: (continuous[l].bound / sf).floor(),
            })
            .collect(),
        horizon: config.synthesis.horizon,
        integrality: Integrality::Exact,
        relax_eps: config.synthesis.relax_eps,
        relax_per_constraint: None,
        lcm_cap: config.synthesis.lcm_cap,
        conservative_fallback: config.synthesis.conservative_fallback,
        scale,
    };
    Ok(Prepared { config: config.clone(), classes, instance, continuous, scale })
}

/// Outcome of the synthesis stage.
#[derive(Debug, Clone)]
pub struct Synthesized {
    pub report: BuildReport,
    pub status: Status,
    pub stats: SolveStats,
    pub verdict: Verdict,
    /// Full-scale solution.
    pub solution: Option<PrefixSuffixSolution>,
    /// Where the program was written when exported.
    pub exported: Option<std::path::PathBuf>,
}

pub fn solver_options(config: &ScenarioConfig) -> SolverOptions {
    let mut opts = SolverOptions::default();
    if let Some(n) = config.synthesis.node_limit {
        opts.node_limit = n;
    }
    opts.time_limit = config.synthesis.time_limit.map(std::time::Duration::from_secs_f64);
    opts
}

fn verdict_context(prep: &Prepared) -> VerdictContext {
    let complete = prep.classes.iter().map(|c| c.cycles_complete_to).collect::<Option<Vec<_>>>().and_then(|v| v.into_iter().min());
    VerdictContext { cycles_complete_to: complete, contracted: false, diameter: None }
}

fn finish_solution(prep: &Prepared, inst: &MultiClassInstance, built: &crate::synthesis::BuiltLp, res: &SolveResult, provenance: Provenance) -> Result<PrefixSuffixSolution, ScenarioError> {
    let x = res.point.as_ref().expect("feasible result carries a point");
    let small = decode(built, inst, x, provenance);
    check_solution(inst, &small, 1e-6).map_err(ScenarioError::Inconsistent)?;
    let full = small.scaled(prep.scale as f64);
    if prep.scale > 1 {
        check_solution(&prep.full_instance(), &full, 1e-6).map_err(ScenarioError::Inconsistent)?;
    }
    Ok(full)
}

/// Solves the prepared instance with the chosen strategy.
pub fn synthesize(prep: &Prepared, solver: SolverChoice, out_dir: Option<&Path>, external: Option<&Path>) -> Result<Synthesized, ScenarioError> {
    let opts = solver_options(&prep.config);
    let ctx = verdict_context(prep);
    match solver {
        SolverChoice::Internal => {
            let built = build_multiclass(&prep.instance)?;
            log::info!("program: {} columns, {} rows, {} nonzeros", built.report.n_cols, built.report.n_rows, built.report.nnz);
            let res = solve_ilp(&built.lp, &opts)?;
            let verdict = infeasibility_verdict(&prep.instance, &res, &ctx);
            let solution = if res.is_feasible() { Some(finish_solution(prep, &prep.instance, &built, &res, Provenance::Exact)?) } else { None };
            Ok(Synthesized { report: built.report, status: res.status, stats: res.stats, verdict, solution, exported: None })
        }
        SolverChoice::Relaxed => {
            let mut relaxed = prep.instance.clone();
            relaxed.integrality = Integrality::Relaxed;
            let built = build_multiclass(&relaxed)?;
            let res = solve_lp(&built.lp, &opts)?;
            if !res.is_feasible() {
                let verdict = infeasibility_verdict(&relaxed, &res, &ctx);
                return Ok(Synthesized { report: built.report, status: res.status, stats: res.stats, verdict, solution: None, exported: None });
            }
            let relaxed_sol = decode(&built, &relaxed, res.point.as_ref().unwrap(), Provenance::Relaxed);
            let fixed = fix_suffix(&relaxed, &relaxed_sol)?;
            let built2 = build_multiclass(&fixed)?;
            let mut res2 = solve_ilp(&built2.lp, &opts)?;
            res2.stats.iterations += res.stats.iterations;
            res2.stats.wall_time += res.stats.wall_time;
            if !res2.is_feasible() {
                // the rounded suffix may not be reachable; nothing is proven
                return Ok(Synthesized { report: built2.report, status: res2.status, stats: res2.stats, verdict: Verdict::Inconclusive, solution: None, exported: None });
            }
            let solution = finish_solution(prep, &fixed, &built2, &res2, Provenance::Rounded)?;
            Ok(Synthesized { report: built2.report, status: res2.status, stats: res2.stats, verdict: Verdict::Solution, solution: Some(solution), exported: None })
        }
        SolverChoice::Mps => {
            let built = build_multiclass(&prep.instance)?;
            let dir = out_dir.unwrap_or_else(|| Path::new("."));
            std::fs::create_dir_all(dir)?;
            let path = dir.join("model.mps");
            export_mps(&built.lp, &path)?;
            let Some(sol_path) = external else {
                return Ok(Synthesized {
                    report: built.report,
                    status: Status::IterationLimit,
                    stats: SolveStats { engine: "external".into(), ..SolveStats::default() },
                    verdict: Verdict::Inconclusive,
                    solution: None,
                    exported: Some(path),
                });
            };
            let res = import_solution(&built.lp, sol_path)?;
            let solution = if res.is_feasible() { Some(finish_solution(prep, &prep.instance, &built, &res, Provenance::Exact)?) } else { None };
            let verdict = if solution.is_some() { Verdict::Solution } else { Verdict::Inconclusive };
            Ok(Synthesized { report: built.report, status: res.status, stats: res.stats, verdict, solution, exported: Some(path) })
        }
    }
}

/// Plans, traces and verification reports.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub plans: Vec<Vec<SubsystemPlan>>,
    pub traces: Vec<FleetTrace>,
    pub discrete: DiscreteReport,
    pub continuous: DiscreteReport,
    pub density: Vec<Vec<usize>>,
    pub bins: Vec<f64>,
    /// Largest deviation per class against its margin.
    pub deviation: Vec<(f64, f64)>,
}

impl Simulated {
    pub fn passed(&self) -> bool {
        self.discrete.passed() && self.continuous.passed() && self.deviation.iter().all(|(d, e)| d <= e)
    }
}

pub fn default_bins(prep: &Prepared) -> Vec<f64> {
    prep.config.simulation.bins.clone().unwrap_or_else(|| {
        let d = &prep.classes[0].model.domain;
        (0..=24).map(|k| d.lo[0] + (d.hi[0] - d.lo[0]) * k as f64 / 24.0).collect()
    })
}

/// Extracts plans, co-simulates the continuous fleet and runs both verifiers.
pub fn simulate(prep: &Prepared, solution: &PrefixSuffixSolution, horizon: usize) -> Result<Simulated, ScenarioError> {
    if solution.classes.len() != prep.classes.len() {
        return Err(ScenarioError::Inconsistent(format!("{} solution classes for {} classes", solution.classes.len(), prep.classes.len())));
    }
    let mut plans = Vec::with_capacity(prep.classes.len());
    for (p, cs) in prep.classes.iter().zip(&solution.classes) {
        plans.push(open_loop_plans(&p.graph, cs, &FleetDiscreteState::new(p.initial_states.clone()))?);
    }
    let class_plans: Vec<ClassPlans<'_>> = prep
        .classes
        .iter()
        .zip(&plans)
        .zip(&solution.classes)
        .map(|((p, pl), cs)| ClassPlans { graph: &p.graph, initial: &p.initial_states, plans: pl, cycles: &cs.cycles })
        .collect();
    let full = prep.full_instance();
    let discrete = verify_discrete(&class_plans, &full.constraints, horizon)?;
    let mut traces = Vec::with_capacity(prep.classes.len());
    let mut deviation = Vec::with_capacity(prep.classes.len());
    for (h, ((p, pl), cs)) in prep.classes.iter().zip(&plans).zip(&solution.classes).enumerate() {
        let delta = crate::sim::common_delta_bar(&p.model);
        let d = draw_disturbances(pl.len(), p.model.dim(), delta, stage_seed(prep.config.seed, 3, h));
        let mut abs = p.abstraction.clone();
        abs.epsilon = p.epsilon;
        let tr = simulate_fleet(&p.model, &abs, &p.initial_states, &p.x0, pl, &cs.cycles, &d, horizon)?;
        deviation.push((tr.max_deviation(), p.epsilon));
        traces.push(tr);
    }
    let refs: Vec<&FleetTrace> = traces.iter().collect();
    let continuous = verify_continuous(&refs, &prep.continuous)?;
    let bins = default_bins(prep);
    let density = density_histogram(&refs, 0, &bins)?;
    Ok(Simulated { plans, traces, discrete, continuous, density, bins, deviation })
}
