//! Grid-based deterministic abstraction of a switched model.
//!
//! States are the centres `eta * floor(x / eta) + eta / 2` of the hyperboxes
//! covering the domain, enumerated in lexicographic axis order (axis 0 is the
//! most significant). Each (state, mode) pair has at most one successor, the
//! quantized nominal flow over one sampling period.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Domain, ModelError, SwitchedModel};

pub const ABSTRACTION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AbstractionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid discretization: {0}")]
    Discretization(String),
    #[error(
        "mode `{mode}`: M exp(-lambda tau) = {contraction} >= 1, no bisimilarity margin exists for tau = {tau}"
    )]
    Certificate { mode: String, contraction: f64, tau: f64 },
    #[error("malformed abstraction document: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn floor_index(v: f64) -> i64 {
    // nudge exact-boundary inputs that land a few ulps below an integer
    (v + 1e-12 * v.abs().max(1.0)).floor() as i64
}

/// `eta * floor(x / eta) + eta / 2`, componentwise.
pub fn quantize(x: &[f64], eta: f64) -> Vec<f64> {
    x.iter().map(|v| eta * floor_index(v / eta) as f64 + 0.5 * eta).collect()
}

/// Uniform grid of side `eta` over a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub eta: f64,
    pub domain: Domain,
    /// Inclusive integer index range per axis.
    pub ranges: Vec<(i64, i64)>,
}

impl Grid {
    pub fn new(domain: Domain, eta: f64) -> Result<Self, AbstractionError> {
        domain.validate()?;
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(AbstractionError::Discretization(format!("eta must be positive, got {eta}")));
        }
        let ranges = domain
            .lo
            .iter()
            .zip(&domain.hi)
            .map(|(l, h)| (floor_index(l / eta), floor_index(h / eta)))
            .collect();
        Ok(Self { eta, domain, ranges })
    }

    pub fn dim(&self) -> usize {
        self.ranges.len()
    }

    pub fn axis_len(&self, k: usize) -> usize {
        let (a, b) = self.ranges[k];
        (b - a + 1) as usize
    }

    pub fn len(&self) -> usize {
        (0..self.dim()).map(|k| self.axis_len(k)).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Integer cell indices of state `idx`.
    pub fn cell(&self, mut idx: usize) -> Vec<i64> {
        let n = self.dim();
        let mut out = vec![0i64; n];
        for k in (0..n).rev() {
            let len = self.axis_len(k);
            out[k] = self.ranges[k].0 + (idx % len) as i64;
            idx /= len;
        }
        out
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.cell(idx).into_iter().map(|c| self.eta * c as f64 + 0.5 * self.eta).collect()
    }

    fn index_of_cell(&self, cell: &[i64]) -> Option<usize> {
        let mut idx = 0usize;
        for (k, &c) in cell.iter().enumerate() {
            let (a, b) = self.ranges[k];
            if c < a || c > b {
                return None;
            }
            idx = idx * self.axis_len(k) + (c - a) as usize;
        }
        Some(idx)
    }

    /// State index of `quantize(x)`, if it lies on the grid.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        if x.len() != self.dim() {
            return None;
        }
        let cell: Vec<i64> = x.iter().map(|v| floor_index(v / self.eta)).collect();
        self.index_of_cell(&cell)
    }

    /// Closed hyperbox `[p - eta/2, p + eta/2]` of state `idx`.
    pub fn cell_bounds(&self, idx: usize) -> (Vec<f64>, Vec<f64>) {
        let cell = self.cell(idx);
        let lo = cell.iter().map(|&c| self.eta * c as f64).collect();
        let hi = cell.iter().map(|&c| self.eta * (c + 1) as f64).collect();
        (lo, hi)
    }
}

/// Finite deterministic transition system over grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct Abstraction {
    pub grid: Grid,
    pub mode_names: Vec<String>,
    /// `succ[state * n_modes + mode]`, `None` when the flow leaves the domain.
    pub succ: Vec<Option<usize>>,
    pub epsilon: f64,
    pub tau: f64,
}

impl Abstraction {
    pub fn n_states(&self) -> usize {
        self.grid.len()
    }

    pub fn n_modes(&self) -> usize {
        self.mode_names.len()
    }

    pub fn successor(&self, state: usize, mode: usize) -> Option<usize> {
        self.succ[state * self.n_modes() + mode]
    }

    pub fn point(&self, state: usize) -> Vec<f64> {
        self.grid.point(state)
    }

    pub fn to_document(&self) -> AbstractionDocument {
        AbstractionDocument {
            version: ABSTRACTION_FORMAT_VERSION,
            eta: self.grid.eta,
            tau: self.tau,
            epsilon: self.epsilon,
            domain: self.grid.domain.clone(),
            ranges: self.grid.ranges.clone(),
            modes: self.mode_names.clone(),
            succ: self.succ.iter().map(|s| s.map_or(-1, |v| v as i64)).collect(),
        }
    }

    pub fn from_document(doc: AbstractionDocument) -> Result<Self, AbstractionError> {
        if doc.version != ABSTRACTION_FORMAT_VERSION {
            return Err(AbstractionError::Format(format!("unsupported version {}", doc.version)));
        }
        let grid = Grid::new(doc.domain, doc.eta)?;
        if grid.ranges != doc.ranges {
            return Err(AbstractionError::Format("index ranges do not match domain and eta".into()));
        }
        let n = grid.len();
        if doc.succ.len() != n * doc.modes.len() {
            return Err(AbstractionError::Format(format!(
                "successor table has {} entries, expected {}",
                doc.succ.len(),
                n * doc.modes.len()
            )));
        }
        let succ = doc
            .succ
            .iter()
            .map(|&s| match s {
                -1 => Ok(None),
                s if s >= 0 && (s as usize) < n => Ok(Some(s as usize)),
                s => Err(AbstractionError::Format(format!("successor index {s} out of range"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { grid, mode_names: doc.modes, succ, epsilon: doc.epsilon, tau: doc.tau })
    }

    pub fn to_json(&self) -> Result<String, AbstractionError> {
        Ok(serde_json::to_string(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self, AbstractionError> {
        Self::from_document(serde_json::from_str(s)?)
    }
}

/// Serialized form: index ranges plus a flat successor array with `-1` for a missing successor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractionDocument {
    pub version: u32,
    pub eta: f64,
    pub tau: f64,
    pub epsilon: f64,
    pub domain: Domain,
    pub ranges: Vec<(i64, i64)>,
    pub modes: Vec<String>,
    pub succ: Vec<i64>,
}

/// Builds the (tau, eta) abstraction. `epsilon` is filled with the minimal
/// margin when the certificates admit one, and with `NaN` otherwise.
pub fn build_abstraction(model: &SwitchedModel, tau: f64, eta: f64) -> Result<Abstraction, AbstractionError> {
    model.validate()?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(AbstractionError::Discretization(format!("tau must be positive, got {tau}")));
    }
    let grid = Grid::new(model.domain.clone(), eta)?;
    let n_modes = model.n_modes();
    let rows: Vec<Vec<Option<usize>>> = (0..grid.len())
        .into_par_iter()
        .map(|q| {
            let p = grid.point(q);
            model
                .modes
                .iter()
                .map(|m| {
                    let next = m.nominal_flow(&p, tau)?;
                    Ok(if model.domain.contains(&next) { grid.locate(&next) } else { None })
                })
                .collect::<Result<Vec<_>, ModelError>>()
        })
        .collect::<Result<_, _>>()?;
    let mut succ = Vec::with_capacity(grid.len() * n_modes);
    for r in rows {
        succ.extend(r);
    }
    let epsilon = min_bisim_epsilon(model, tau, eta).unwrap_or(f64::NAN);
    Ok(Abstraction {
        grid,
        mode_names: model.modes.iter().map(|m| m.name.clone()).collect(),
        succ,
        epsilon,
        tau,
    })
}

/// Per-mode terms of the bisimilarity inequality at a given margin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonLedgerRow {
    pub mode: String,
    pub kl_term: f64,
    pub disturbance_term: f64,
    pub quantization_term: f64,
    pub total: f64,
    pub epsilon: f64,
    pub holds: bool,
}

/// Smallest margin satisfying `M e^{-lambda tau} eps + delta/K (e^{K tau} - 1) + eta/2 <= eps` for all modes.
pub fn min_bisim_epsilon(model: &SwitchedModel, tau: f64, eta: f64) -> Result<f64, AbstractionError> {
    let mut best = 0.0f64;
    for m in &model.modes {
        let contraction = m.kl_gain * (-m.kl_rate * tau).exp();
        if contraction >= 1.0 {
            return Err(AbstractionError::Certificate { mode: m.name.clone(), contraction, tau });
        }
        let drift = m.delta_bar / m.lipschitz * ((m.lipschitz * tau).exp() - 1.0);
        best = best.max((drift + 0.5 * eta) / (1.0 - contraction));
    }
    Ok(best)
}

/// Evaluates the bisimilarity inequality for every mode at margin `epsilon`.
pub fn check_epsilon(model: &SwitchedModel, tau: f64, eta: f64, epsilon: f64) -> Vec<EpsilonLedgerRow> {
    model
        .modes
        .iter()
        .map(|m| {
            let kl_term = m.kl_bound(epsilon, tau);
            let disturbance_term = m.delta_bar / m.lipschitz * ((m.lipschitz * tau).exp() - 1.0);
            let quantization_term = 0.5 * eta;
            let total = kl_term + disturbance_term + quantization_term;
            EpsilonLedgerRow {
                mode: m.name.clone(),
                kl_term,
                disturbance_term,
                quantization_term,
                total,
                epsilon,
                holds: total <= epsilon * (1.0 + 1e-12),
            }
        })
        .collect()
}

pub fn epsilon_holds(model: &SwitchedModel, tau: f64, eta: f64, epsilon: f64) -> bool {
    check_epsilon(model, tau, eta, epsilon).iter().all(|r| r.holds)
}

/// Box bounds in JSON: finite numbers, or the strings `"inf"` and `"-inf"`.
mod bounds {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Bound {
        Finite(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let out: Vec<Bound> = v
            .iter()
            .map(|x| match *x {
                x if x == f64::INFINITY => Bound::Text("inf".into()),
                x if x == f64::NEG_INFINITY => Bound::Text("-inf".into()),
                x => Bound::Finite(x),
            })
            .collect();
        out.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Bound>::deserialize(d)?
            .into_iter()
            .map(|b| match b {
                Bound::Finite(x) => Ok(x),
                Bound::Text(t) => match t.as_str() {
                    "inf" | "+inf" => Ok(f64::INFINITY),
                    "-inf" => Ok(f64::NEG_INFINITY),
                    other => Err(serde::de::Error::custom(format!("invalid bound `{other}`"))),
                },
            })
            .collect()
    }
}

/// State part of a continuous counting set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// Closed box; infinite bounds encode half-spaces.
    Box {
        #[serde(with = "bounds")]
        lo: Vec<f64>,
        #[serde(with = "bounds")]
        hi: Vec<f64>,
    },
    /// Open complement of a closed box.
    Outside {
        #[serde(with = "bounds")]
        lo: Vec<f64>,
        #[serde(with = "bounds")]
        hi: Vec<f64>,
    },
    /// Whole state space (mode-only counting).
    All,
}

impl Region {
    pub fn half_space(dim: usize, axis: usize, lower: Option<f64>, upper: Option<f64>) -> Self {
        let mut lo = vec![f64::NEG_INFINITY; dim];
        let mut hi = vec![f64::INFINITY; dim];
        if let Some(l) = lower {
            lo[axis] = l;
        }
        if let Some(u) = upper {
            hi[axis] = u;
        }
        Region::Box { lo, hi }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Region::All => true,
            Region::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| v >= l && v <= h),
            Region::Outside { lo, hi } => !x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| v >= l && v <= h),
        }
    }

    /// Minkowski sum with the sup-norm ball of radius `eps`.
    pub fn inflate(&self, eps: f64) -> Region {
        match self {
            Region::All => Region::All,
            Region::Box { lo, hi } => Region::Box {
                lo: lo.iter().map(|v| v - eps).collect(),
                hi: hi.iter().map(|v| v + eps).collect(),
            },
            Region::Outside { lo, hi } => Region::Outside {
                lo: lo.iter().map(|v| v + eps).collect(),
                hi: hi.iter().map(|v| v - eps).collect(),
            },
        }
    }

    /// Minkowski difference with the sup-norm ball of radius `eps`.
    pub fn deflate(&self, eps: f64) -> Region {
        self.inflate(-eps)
    }
}

/// Continuous counting set `region x modes` with bound `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousCountingSet {
    pub region: Region,
    /// Mode indices; `None` means all modes.
    pub modes: Option<Vec<usize>>,
    pub bound: f64,
}

impl ContinuousCountingSet {
    pub fn contains(&self, x: &[f64], mode: usize) -> bool {
        self.mode_matches(mode) && self.region.contains(x)
    }

    pub fn mode_matches(&self, mode: usize) -> bool {
        self.modes.as_ref().map_or(true, |ms| ms.contains(&mode))
    }
}

/// Set of (state, mode) pairs with a counting bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteCountingSet {
    pub n_states: usize,
    pub n_modes: usize,
    /// Membership flags indexed by `state * n_modes + mode`.
    pub member: Vec<bool>,
    pub bound: f64,
}

impl DiscreteCountingSet {
    pub fn empty(n_states: usize, n_modes: usize, bound: f64) -> Self {
        Self { n_states, n_modes, member: vec![false; n_states * n_modes], bound }
    }

    pub fn from_pairs(n_states: usize, n_modes: usize, pairs: &[(usize, usize)], bound: f64) -> Self {
        let mut s = Self::empty(n_states, n_modes, bound);
        for &(q, m) in pairs {
            s.insert(q, m);
        }
        s
    }

    /// Product-form constructor `states x modes`.
    pub fn product(n_states: usize, n_modes: usize, states: &[usize], modes: &[usize], bound: f64) -> Self {
        let mut s = Self::empty(n_states, n_modes, bound);
        for &q in states {
            for &m in modes {
                s.insert(q, m);
            }
        }
        s
    }

    /// Mode-only set: every state paired with the listed modes.
    pub fn modes_only(n_states: usize, n_modes: usize, modes: &[usize], bound: f64) -> Self {
        let states: Vec<usize> = (0..n_states).collect();
        Self::product(n_states, n_modes, &states, modes, bound)
    }

    pub fn insert(&mut self, q: usize, m: usize) {
        self.member[q * self.n_modes + m] = true;
    }

    pub fn contains(&self, q: usize, m: usize) -> bool {
        self.member[q * self.n_modes + m]
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let nm = self.n_modes;
        self.member.iter().enumerate().filter(|(_, b)| **b).map(move |(i, _)| (i / nm, i % nm))
    }

    pub fn len(&self) -> usize {
        self.member.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// States with at least one member pair.
    pub fn states(&self) -> Vec<usize> {
        (0..self.n_states).filter(|&q| (0..self.n_modes).any(|m| self.contains(q, m))).collect()
    }

    pub fn is_subset_of(&self, other: &DiscreteCountingSet) -> bool {
        self.member.iter().zip(&other.member).all(|(a, b)| !*a || *b)
    }
}

/// Does the open cell `(lo, hi)` meet the closed box `[blo, bhi]`?
fn open_cell_meets_box(lo: &[f64], hi: &[f64], blo: &[f64], bhi: &[f64]) -> bool {
    (0..lo.len()).all(|k| lo[k] < bhi[k] && hi[k] > blo[k] && blo[k] <= bhi[k])
}

/// Is the closed cell `[lo, hi]` inside the closed box `[blo, bhi]`?
fn cell_inside_box(lo: &[f64], hi: &[f64], blo: &[f64], bhi: &[f64]) -> bool {
    (0..lo.len()).all(|k| lo[k] >= blo[k] && hi[k] <= bhi[k])
}

/// Does the closed cell meet the closed box?
fn cell_meets_box(lo: &[f64], hi: &[f64], blo: &[f64], bhi: &[f64]) -> bool {
    (0..lo.len()).all(|k| lo[k] <= bhi[k] && hi[k] >= blo[k] && blo[k] <= bhi[k])
}

fn grid_membership(set: &ContinuousCountingSet, grid: &Grid, n_modes: usize, keep: impl Fn(&[f64], &[f64]) -> bool) -> DiscreteCountingSet {
    let n = grid.len();
    let mut out = DiscreteCountingSet::empty(n, n_modes, set.bound);
    for q in 0..n {
        let (lo, hi) = grid.cell_bounds(q);
        if keep(&lo, &hi) {
            for m in 0..n_modes {
                if set.mode_matches(m) {
                    out.insert(q, m);
                }
            }
        }
    }
    out
}

/// Grid states whose cell meets the set inflated by `eps` (conservative expansion).
pub fn expand_set(set: &ContinuousCountingSet, eps: f64, grid: &Grid, n_modes: usize) -> DiscreteCountingSet {
    match set.region.inflate(eps) {
        Region::All => grid_membership(set, grid, n_modes, |_, _| true),
        Region::Box { lo, hi } => grid_membership(set, grid, n_modes, |cl, ch| open_cell_meets_box(cl, ch, &lo, &hi)),
        // complement of the deflated closed box: a cell is in unless it lies inside that box
        Region::Outside { lo, hi } => grid_membership(set, grid, n_modes, |cl, ch| !cell_inside_box(cl, ch, &lo, &hi)),
    }
}

/// Grid states whose cell lies inside the set deflated by `eps`.
pub fn contract_set(set: &ContinuousCountingSet, eps: f64, grid: &Grid, n_modes: usize) -> DiscreteCountingSet {
    match set.region.deflate(eps) {
        Region::All => grid_membership(set, grid, n_modes, |_, _| true),
        Region::Box { lo, hi } => grid_membership(set, grid, n_modes, |cl, ch| cell_inside_box(cl, ch, &lo, &hi)),
        Region::Outside { lo, hi } => grid_membership(set, grid, n_modes, |cl, ch| !cell_meets_box(cl, ch, &lo, &hi)),
    }
}
