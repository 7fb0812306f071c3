//! Benchmark objectives, the noisy zeroth-order oracle and regret accounting.

use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::domain::{stream_rng, BoxDomain};
use crate::error::{Error, Result};
use crate::model::{sigmoid, SigmoidNet};

/// Where an objective's optimum value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Closed form.
    Analytic,
    /// Computed by a convergent numerical procedure.
    Numerical,
    /// Declared by the user.
    Declared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub value: f64,
    pub argmax: Option<Vec<f64>>,
    pub provenance: Provenance,
}

type EvalFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A black-box function on a box, to be maximized.
#[derive(Clone)]
pub struct Objective {
    name: String,
    domain: BoxDomain,
    optimum: Option<Optimum>,
    eval: Arc<EvalFn>,
    /// Surrogate parameters that reproduce this objective exactly, with the hidden width.
    realizing_params: Option<(usize, Vec<f64>)>,
}

impl fmt::Debug for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Objective")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("optimum", &self.optimum)
            .finish_non_exhaustive()
    }
}

impl Objective {
    pub fn custom(
        name: impl Into<String>,
        domain: BoxDomain,
        optimum: Option<Optimum>,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            domain,
            optimum,
            eval: Arc::new(eval),
            realizing_params: None,
        }
    }

    /// Network objective: the sigmoid surrogate of hidden width 5 with every parameter set to 1,
    /// i.e. `5 sigmoid(sum_i x_i + 1) + 1`, on `[-5, 5]^dim`.
    pub fn f1(dim: usize) -> Result<Self> {
        let hidden = SigmoidNet::DEFAULT_HIDDEN;
        let domain = BoxDomain::cube(dim, -5.0, 5.0)?;
        // monotone in sum(x), so the all-upper vertex is optimal
        let value = f1_value(&vec![5.0; dim]);
        Ok(Self {
            name: "f1".into(),
            domain,
            optimum: Some(Optimum {
                value,
                argmax: Some(vec![5.0; dim]),
                provenance: Provenance::Analytic,
            }),
            eval: Arc::new(f1_value),
            realizing_params: Some((hidden, vec![1.0; SigmoidNet::param_count(dim, hidden)])),
        })
    }

    /// Negated Styblinski–Tang, `-1/2 sum_i (x_i^4 - 16 x_i^2 + 5 x_i)`, on `[-5, 5]^dim`.
    pub fn f2(dim: usize) -> Result<Self> {
        let domain = BoxDomain::cube(dim, -5.0, 5.0)?;
        let x_opt = styblinski_tang_argmax();
        Ok(Self::custom(
            "f2",
            domain,
            Some(Optimum {
                value: dim as f64 * styblinski_tang_term(x_opt),
                argmax: Some(vec![x_opt; dim]),
                provenance: Provenance::Numerical,
            }),
            f2_value,
        ))
    }

    /// Negated Rastrigin, `-10 dim + sum_i (10 cos(2 pi x_i) - x_i^2)`, on `[-5, 5]^dim`.
    pub fn f3(dim: usize) -> Result<Self> {
        let domain = BoxDomain::cube(dim, -5.0, 5.0)?;
        Ok(Self::custom(
            "f3",
            domain,
            Some(Optimum {
                value: 0.0,
                argmax: Some(vec![0.0; dim]),
                provenance: Provenance::Analytic,
            }),
            f3_value,
        ))
    }

    /// Built-in objective by name (`f1`, `f2`, `f3`).
    pub fn by_name(name: &str, dim: usize) -> Result<Self> {
        match name {
            "f1" => Self::f1(dim),
            "f2" => Self::f2(dim),
            "f3" => Self::f3(dim),
            other => Err(Error::Config(format!("unknown objective {other:?}"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn optimum(&self) -> Option<&Optimum> {
        self.optimum.as_ref()
    }

    pub fn realizing_params(&self) -> Option<(usize, &[f64])> {
        self.realizing_params
            .as_ref()
            .map(|(h, w)| (*h, w.as_slice()))
    }

    pub fn with_realizing_params(mut self, hidden: usize, params: Vec<f64>) -> Self {
        self.realizing_params = Some((hidden, params));
        self
    }

    /// `f(x)`; `x` must lie in the domain.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.domain.check_contains(x)?;
        Ok((self.eval)(x))
    }

    pub(crate) fn eval_in_domain(&self, x: &[f64]) -> f64 {
        debug_assert!(self.domain.contains(x));
        (self.eval)(x)
    }
}

fn f1_value(x: &[f64]) -> f64 {
    5.0 * sigmoid(x.iter().sum::<f64>() + 1.0) + 1.0
}

fn styblinski_tang_term(x: f64) -> f64 {
    -0.5 * (x.powi(4) - 16.0 * x * x + 5.0 * x)
}

/// Global maximizer of the one-dimensional Styblinski–Tang term on `[-5, 5]`.
fn styblinski_tang_argmax() -> f64 {
    // stationary points solve 4x^3 - 32x + 5 = 0; the maximizer is the negative root
    let mut x = -2.9;
    for _ in 0..50 {
        let g = 4.0 * x * x * x - 32.0 * x + 5.0;
        let h = 12.0 * x * x - 32.0;
        x -= g / h;
    }
    x
}

fn f2_value(x: &[f64]) -> f64 {
    x.iter().map(|&v| styblinski_tang_term(v)).sum()
}

fn f3_value(x: &[f64]) -> f64 {
    -10.0 * x.len() as f64
        + x.iter()
            .map(|&v| 10.0 * (TAU * v).cos() - v * v)
            .sum::<f64>()
}

/// `y = f(x) + eta` with `eta ~ N(0, sigma^2)`.
#[derive(Debug, Clone)]
pub struct NoisyOracle {
    objective: Objective,
    sigma: f64,
    rng: ChaCha8Rng,
}

impl NoisyOracle {
    pub fn new(objective: Objective, sigma: f64, seed: u64, stream: u64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!(
                "noise scale must be >= 0, got {sigma}"
            )));
        }
        Ok(Self {
            objective,
            sigma,
            rng: stream_rng(seed, stream),
        })
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn observe(&mut self, x: &[f64]) -> Result<f64> {
        let f = self.objective.eval(x)?;
        if self.sigma == 0.0 {
            return Ok(f);
        }
        let eta: f64 = self.rng.sample(StandardNormal);
        Ok(f + self.sigma * eta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Exploration,
    Optimistic,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::Exploration => "I",
            Phase::Optimistic => "II",
        }
    }
}

/// Instantaneous regret `r_t = f* - f(x_t)` on noiseless values and its running sum.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretTrace {
    optimum: f64,
    instant: Vec<f64>,
    cumulative: Vec<f64>,
    phases: Vec<Phase>,
}

const REGRET_SLACK: f64 = 1e-9;

impl RegretTrace {
    pub fn new(optimum: f64) -> Self {
        Self {
            optimum,
            instant: Vec::new(),
            cumulative: Vec::new(),
            phases: Vec::new(),
        }
    }

    pub fn for_objective(objective: &Objective) -> Result<Self> {
        objective
            .optimum()
            .map(|o| Self::new(o.value))
            .ok_or_else(|| {
                Error::Config(format!(
                    "objective {} has no known optimum; regret is undefined",
                    objective.name()
                ))
            })
    }

    /// Appends the regret of a query whose noiseless value is `f_x`.
    pub fn record(&mut self, f_x: f64, phase: Phase) -> Result<f64> {
        let r = self.optimum - f_x;
        if r < -REGRET_SLACK || !r.is_finite() {
            return Err(Error::State(format!(
                "value {f_x} exceeds the declared optimum {}",
                self.optimum
            )));
        }
        let r = r.max(0.0);
        let total = self.cumulative.last().copied().unwrap_or(0.0) + r;
        self.instant.push(r);
        self.cumulative.push(total);
        self.phases.push(phase);
        Ok(r)
    }

    pub fn optimum(&self) -> f64 {
        self.optimum
    }

    pub fn len(&self) -> usize {
        self.instant.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instant.is_empty()
    }

    pub fn instant(&self) -> &[f64] {
        &self.instant
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}

/// Index of the largest observation; ties go to the earliest round.
pub fn select_output(observations: &[(Vec<f64>, f64)]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (_, y)) in observations.iter().enumerate() {
        if best.is_none_or(|(_, b)| *y > b) {
            best = Some((i, *y));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::invalid("cannot select an output from an empty history"))
}
