//! Continuous-time switched subsystem family.
//!
//! Every mode is a sparse multivariate polynomial vector field together with
//! the certificates the abstraction needs: a sup-norm Lipschitz constant `K`,
//! an exponential incremental-stability bound `beta(r, t) = M r exp(-lambda t)`
//! and an additive disturbance bound `delta_bar`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of RK4 substeps used for one call to [`Mode::flow`].
pub const RK4_SUBSTEPS: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("disturbance {norm} exceeds the bound {bound} of mode `{mode}`")]
    DisturbanceBound { mode: String, norm: f64, bound: f64 },
    #[error("integration failure in mode `{mode}`: non-finite state after t = {time}")]
    Integration { mode: String, time: f64 },
    #[error("invalid mode `{mode}`: {reason}")]
    InvalidMode { mode: String, reason: String },
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// One monomial `coeff * prod_k x_k^exps[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coeff: f64,
    pub exps: Vec<u32>,
}

/// Sparse polynomial in `n_x` variables.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial {
    pub terms: Vec<Term>,
}

impl Polynomial {
    pub fn new(terms: Vec<Term>) -> Self {
        Self { terms }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Convenience constructor from `(coeff, exponents)` pairs.
    pub fn from_pairs(pairs: &[(f64, &[u32])]) -> Self {
        Self {
            terms: pairs
                .iter()
                .map(|(c, e)| Term { coeff: *c, exps: e.to_vec() })
                .collect(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.exps
                    .iter()
                    .zip(x)
                    .fold(t.coeff, |acc, (&e, &xi)| acc * xi.powi(e as i32))
            })
            .sum()
    }

    /// Partial derivative with respect to coordinate `k`.
    pub fn derivative(&self, k: usize) -> Polynomial {
        let terms = self
            .terms
            .iter()
            .filter(|t| t.exps.get(k).copied().unwrap_or(0) > 0)
            .map(|t| {
                let mut exps = t.exps.clone();
                let e = exps[k];
                exps[k] = e - 1;
                Term { coeff: t.coeff * e as f64, exps }
            })
            .collect();
        Polynomial { terms }
    }

    fn max_arity(&self) -> usize {
        self.terms.iter().map(|t| t.exps.len()).max().unwrap_or(0)
    }
}

/// A single dynamical mode `x' = f(x) + d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub name: String,
    /// One polynomial per state coordinate.
    pub field: Vec<Polynomial>,
    /// Sup-norm Lipschitz constant `K` on the domain.
    #[serde(rename = "K")]
    pub lipschitz: f64,
    /// Gain `M` of the exponential KL certificate.
    #[serde(rename = "M")]
    pub kl_gain: f64,
    /// Rate `lambda` of the exponential KL certificate.
    #[serde(rename = "lambda")]
    pub kl_rate: f64,
    pub delta_bar: f64,
}

impl Mode {
    pub fn new(
        name: impl Into<String>,
        field: Vec<Polynomial>,
        lipschitz: f64,
        kl_gain: f64,
        kl_rate: f64,
        delta_bar: f64,
    ) -> Result<Self, ModelError> {
        let mode = Self { name: name.into(), field, lipschitz, kl_gain, kl_rate, delta_bar };
        mode.validate()?;
        Ok(mode)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |reason: &str| ModelError::InvalidMode { mode: self.name.clone(), reason: reason.into() };
        if self.field.is_empty() {
            return Err(bad("empty vector field"));
        }
        if self.field.iter().any(|p| p.max_arity() > self.field.len()) {
            return Err(bad("monomial exponent tuple longer than the state dimension"));
        }
        if !(self.lipschitz > 0.0) {
            return Err(bad("Lipschitz constant K must be positive"));
        }
        if !(self.kl_rate > 0.0) {
            return Err(bad("KL rate lambda must be positive"));
        }
        if !(self.kl_gain >= 1.0) {
            return Err(bad("KL gain M must be at least 1"));
        }
        if !(self.delta_bar >= 0.0) {
            return Err(bad("disturbance bound must be nonnegative"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.field.len()
    }

    /// Evaluates `f(x) + d`.
    pub fn eval_field(&self, x: &[f64], d: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_args(x, d)?;
        Ok(self.eval_unchecked(x, d))
    }

    fn check_args(&self, x: &[f64], d: &[f64]) -> Result<(), ModelError> {
        let n = self.dim();
        if x.len() != n {
            return Err(ModelError::Dimension { expected: n, got: x.len() });
        }
        if d.len() != n {
            return Err(ModelError::Dimension { expected: n, got: d.len() });
        }
        let norm = sup_norm(d);
        // small slack so that a disturbance drawn exactly at the bound passes
        if norm > self.delta_bar * (1.0 + 1e-12) + 1e-15 {
            return Err(ModelError::DisturbanceBound { mode: self.name.clone(), norm, bound: self.delta_bar });
        }
        Ok(())
    }

    fn eval_unchecked(&self, x: &[f64], d: &[f64]) -> Vec<f64> {
        self.field.iter().zip(d).map(|(p, di)| p.eval(x) + di).collect()
    }

    /// RK4 approximation of the flow over `tau` with a constant disturbance.
    pub fn flow(&self, x: &[f64], tau: f64, d: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_args(x, d)?;
        if !(tau > 0.0) {
            return Err(ModelError::InvalidArgument(format!("flow time must be positive, got {tau}")));
        }
        let h = tau / RK4_SUBSTEPS as f64;
        let n = self.dim();
        let mut state = x.to_vec();
        let mut tmp = vec![0.0; n];
        for step in 0..RK4_SUBSTEPS {
            let k1 = self.eval_unchecked(&state, d);
            axpy(&state, &k1, 0.5 * h, &mut tmp);
            let k2 = self.eval_unchecked(&tmp, d);
            axpy(&state, &k2, 0.5 * h, &mut tmp);
            let k3 = self.eval_unchecked(&tmp, d);
            axpy(&state, &k3, h, &mut tmp);
            let k4 = self.eval_unchecked(&tmp, d);
            for i in 0..n {
                state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if state.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::Integration { mode: self.name.clone(), time: (step + 1) as f64 * h });
            }
        }
        Ok(state)
    }

    /// Nominal flow (zero disturbance).
    pub fn nominal_flow(&self, x: &[f64], tau: f64) -> Result<Vec<f64>, ModelError> {
        let zero = vec![0.0; self.dim()];
        self.flow(x, tau, &zero)
    }

    /// Induced sup-norm of the Jacobian at `x` (maximum absolute row sum).
    pub fn jacobian_norm(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        self.field
            .iter()
            .map(|p| (0..n).map(|k| p.derivative(k).eval(x).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Value of the KL certificate `M r exp(-lambda t)`.
    pub fn kl_bound(&self, r: f64, t: f64) -> f64 {
        self.kl_gain * r * (-self.kl_rate * t).exp()
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Domain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, ModelError> {
        let d = Self { lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.lo.len() != self.hi.len() || self.lo.is_empty() {
            return Err(ModelError::InvalidDomain("bound vectors must be nonempty and of equal length".into()));
        }
        for (k, (l, h)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(ModelError::InvalidDomain(format!("axis {k}: need finite lo < hi, got [{l}, {h}]")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    /// Sup-norm distance from `x` to the box (0 inside).
    pub fn excess(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| (l - v).max(v - h).max(0.0))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchedModel {
    pub modes: Vec<Mode>,
    pub domain: Domain,
}

impl SwitchedModel {
    pub fn new(modes: Vec<Mode>, domain: Domain) -> Result<Self, ModelError> {
        let m = Self { modes, domain };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.modes.is_empty() {
            return Err(ModelError::InvalidArgument("a switched model needs at least one mode".into()));
        }
        self.domain.validate()?;
        let n = self.domain.dim();
        for m in &self.modes {
            m.validate()?;
            if m.dim() != n {
                return Err(ModelError::Dimension { expected: n, got: m.dim() });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }
}

/// Sampled lower bound on the sup-norm Lipschitz constant of a mode over a box.
///
/// The Jacobian's induced infinity norm is evaluated on a regular grid with
/// `samples` points per axis (endpoints included). A warning is logged when
/// the estimate exceeds the declared constant.
pub fn lipschitz_estimate(mode: &Mode, domain: &Domain, samples: usize) -> Result<f64, ModelError> {
    domain.validate()?;
    if samples < 2 {
        return Err(ModelError::InvalidArgument("lipschitz_estimate needs at least 2 samples per axis".into()));
    }
    if mode.dim() != domain.dim() {
        return Err(ModelError::Dimension { expected: domain.dim(), got: mode.dim() });
    }
    let n = domain.dim();
    let mut idx = vec![0usize; n];
    let mut x = vec![0.0; n];
    let mut best = 0.0f64;
    loop {
        for k in 0..n {
            let t = idx[k] as f64 / (samples - 1) as f64;
            x[k] = domain.lo[k] + t * (domain.hi[k] - domain.lo[k]);
        }
        best = best.max(mode.jacobian_norm(&x));
        let mut k = 0;
        loop {
            if k == n {
                if best > mode.lipschitz * (1.0 + 1e-9) {
                    log::warn!(
                        "mode `{}`: sampled Lipschitz estimate {best} exceeds declared K = {}",
                        mode.name,
                        mode.lipschitz
                    );
                }
                return Ok(best);
            }
            idx[k] += 1;
            if idx[k] < samples {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

fn axpy(x: &[f64], k: &[f64], a: f64, out: &mut [f64]) {
    for i in 0..x.len() {
        out[i] = x[i] + a * k[i];
    }
}
