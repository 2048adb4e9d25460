//! Continuous fleet co-simulation under open-loop plans.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{Abstraction, ContinuousCountingSet};
use crate::control::{report_from_counts, DiscreteReport, SubsystemPlan};
use crate::graph::Cycle;
use crate::model::{sup_norm, ModelError, SwitchedModel};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("subsystem {id}: {source}")]
    Model { id: usize, source: ModelError },
    #[error("subsystem {id} has no abstract successor from state {state} under mode {mode} at step {step}")]
    Blocked { id: usize, state: usize, mode: usize, step: usize },
    #[error("{0}")]
    Shape(String),
    #[error("bin edges must be strictly increasing with at least two entries")]
    Bins,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Samples `x(k tau)` for `k = 0..=H`, the modes applied on `[k tau, (k+1) tau)`
/// and the paired abstract states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetTrace {
    pub tau: f64,
    /// `states[n][k]`.
    pub states: Vec<Vec<Vec<f64>>>,
    /// `modes[n][k]` for `k < H`.
    pub modes: Vec<Vec<usize>>,
    /// `abstract_states[n][k]`.
    pub abstract_states: Vec<Vec<usize>>,
    /// Largest sup-norm gap between a subsystem and its abstract point, per sample.
    pub deviations: Vec<f64>,
    /// Samples where a subsystem left the domain by more than `epsilon`.
    pub domain_exits: usize,
}

impl FleetTrace {
    pub fn n_subsystems(&self) -> usize {
        self.states.len()
    }

    pub fn horizon(&self) -> usize {
        self.modes.first().map_or(0, |m| m.len())
    }

    pub fn max_deviation(&self) -> f64 {
        self.deviations.iter().copied().fold(0.0, f64::max)
    }
}

/// Constant disturbances drawn uniformly from `[-delta_bar, delta_bar]^dim`.
pub fn draw_disturbances(n: usize, dim: usize, delta_bar: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| if delta_bar > 0.0 { rng.gen_range(-delta_bar..=delta_bar) } else { 0.0 }).collect())
        .collect()
}

/// Largest disturbance admissible for every mode.
pub fn common_delta_bar(model: &SwitchedModel) -> f64 {
    model.modes.iter().map(|m| m.delta_bar).fold(f64::INFINITY, f64::min)
}

/// Integrates every subsystem from `x0` under its plan and tracks the abstract state alongside.
#[allow(clippy::too_many_arguments)]
pub fn simulate_fleet(
    model: &SwitchedModel,
    abs: &Abstraction,
    initial: &[usize],
    x0: &[Vec<f64>],
    plans: &[SubsystemPlan],
    cycles: &[Cycle],
    disturbances: &[Vec<f64>],
    horizon: usize,
) -> Result<FleetTrace, SimError> {
    let n = plans.len();
    if initial.len() != n || x0.len() != n || disturbances.len() != n {
        return Err(SimError::Shape(format!(
            "{n} plans, {} initial states, {} continuous states, {} disturbances",
            initial.len(),
            x0.len(),
            disturbances.len()
        )));
    }
    let tau = abs.tau;
    let eps = abs.epsilon;
    type PerSub = (Vec<Vec<f64>>, Vec<usize>, Vec<usize>, Vec<f64>, usize);
    let per: Vec<PerSub> = (0..n)
        .into_par_iter()
        .map(|id| {
            let plan = &plans[id];
            let mut x = x0[id].clone();
            let mut q = initial[id];
            let mut xs = Vec::with_capacity(horizon + 1);
            let mut ms = Vec::with_capacity(horizon);
            let mut qs = Vec::with_capacity(horizon + 1);
            let mut dev = Vec::with_capacity(horizon + 1);
            let mut exits = 0;
            for k in 0..=horizon {
                let gap: Vec<f64> = x.iter().zip(abs.point(q)).map(|(a, b)| a - b).collect();
                dev.push(sup_norm(&gap));
                if model.domain.excess(&x) > eps {
                    exits += 1;
                }
                xs.push(x.clone());
                qs.push(q);
                if k == horizon {
                    break;
                }
                let m = plan.mode_at(k, cycles);
                ms.push(m);
                x = model.modes[m].flow(&x, tau, &disturbances[id]).map_err(|source| SimError::Model { id, source })?;
                q = abs.successor(q, m).ok_or(SimError::Blocked { id, state: q, mode: m, step: k })?;
            }
            Ok((xs, ms, qs, dev, exits))
        })
        .collect::<Result<_, SimError>>()?;
    let mut trace = FleetTrace {
        tau,
        states: Vec::with_capacity(n),
        modes: Vec::with_capacity(n),
        abstract_states: Vec::with_capacity(n),
        deviations: vec![0.0; horizon + 1],
        domain_exits: 0,
    };
    for (xs, ms, qs, dev, exits) in per {
        for (d, v) in trace.deviations.iter_mut().zip(dev) {
            *d = d.max(v);
        }
        trace.states.push(xs);
        trace.modes.push(ms);
        trace.abstract_states.push(qs);
        trace.domain_exits += exits;
    }
    Ok(trace)
}

/// Joint continuous constraint: one optional set per class and a bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousConstraint {
    pub name: String,
    pub sets: Vec<Option<ContinuousCountingSet>>,
    pub bound: f64,
}

/// Counts `sum_n 1_X(x_n(k tau), mu_n(k))` per sample over all classes.
pub fn verify_continuous(traces: &[&FleetTrace], constraints: &[ContinuousConstraint]) -> Result<DiscreteReport, SimError> {
    if constraints.iter().any(|c| c.sets.len() != traces.len()) {
        return Err(SimError::Shape("constraint class count mismatch".into()));
    }
    let horizon = traces.iter().map(|t| t.horizon()).min().unwrap_or(0);
    let counts: Vec<Vec<f64>> = (0..horizon)
        .into_par_iter()
        .map(|k| {
            constraints
                .iter()
                .map(|c| {
                    traces
                        .iter()
                        .zip(&c.sets)
                        .filter_map(|(t, s)| s.as_ref().map(|s| (t, s)))
                        .map(|(t, s)| (0..t.n_subsystems()).filter(|&n| s.contains(&t.states[n][k], t.modes[n][k])).count() as f64)
                        .sum()
                })
                .collect()
        })
        .collect();
    Ok(report_from_counts(counts, constraints.iter().map(|c| c.bound).collect()))
}

/// Occupancy of `axis` over the bins `[edges[b], edges[b+1])` per sample; values outside fall in the edge bins.
pub fn density_histogram(traces: &[&FleetTrace], axis: usize, edges: &[f64]) -> Result<Vec<Vec<usize>>, SimError> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(SimError::Bins);
    }
    let nb = edges.len() - 1;
    let samples = traces.iter().map(|t| t.horizon() + 1).min().unwrap_or(0);
    let mut out = vec![vec![0; nb]; samples];
    for t in traces {
        for xs in &t.states {
            for (k, row) in out.iter_mut().enumerate() {
                let v = xs[k][axis];
                let b = edges.partition_point(|e| *e <= v).saturating_sub(1).min(nb - 1);
                row[b] += 1;
            }
        }
    }
    Ok(out)
}

/// `step,bin_lo,bin_hi,count`.
pub fn write_density_csv(mut out: impl Write, hist: &[Vec<usize>], edges: &[f64]) -> Result<(), SimError> {
    writeln!(out, "step,bin_lo,bin_hi,count")?;
    for (k, row) in hist.iter().enumerate() {
        for (b, c) in row.iter().enumerate() {
            writeln!(out, "{k},{},{},{c}", edges[b], edges[b + 1])?;
        }
    }
    Ok(())
}

/// `step,max_deviation`.
pub fn write_deviations_csv(mut out: impl Write, deviations: &[f64]) -> Result<(), SimError> {
    writeln!(out, "step,max_deviation")?;
    for (k, d) in deviations.iter().enumerate() {
        writeln!(out, "{k},{d}")?;
    }
    Ok(())
}
