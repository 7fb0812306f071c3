//! Optimistic point selection: `argmax_x max_{w in Ball_t} f_x(w)`.
//!
//! `LinearizedUcb` maximizes the first-order model of `f_x(w)` over the ball, which has the
//! closed form `f_x(w_t) + sqrt(beta_t) ||grad_w f_x(w_t)||_{Sigma_t^{-1}}`. `Alternating`
//! alternates a derivative-free sweep in `x` with projected ascent in `w`.
//! Both search `x` with multistart adaptive coordinate random search, since `f` need not be
//! differentiable in `x`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::domain::{child_seed, stream_rng, BoxDomain, ParamVector};
use crate::engine::ConfidenceBall;
use crate::error::{check_dim, Error, Result};
use crate::model::SurrogateFamily;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcquisitionMode {
    LinearizedUcb,
    Alternating,
}

impl std::str::FromStr for AcquisitionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linearized_ucb" | "linearized-ucb" | "linearized" => Ok(Self::LinearizedUcb),
            "alternating" => Ok(Self::Alternating),
            other => Err(Error::Config(format!("unknown acquisition mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionConfig {
    pub mode: AcquisitionMode,
    pub outer_starts: usize,
    /// Coordinate sweeps in `x` per start.
    pub outer_iters: usize,
    /// Projected ascent steps in `w` per sweep (alternating mode).
    pub inner_iters: usize,
    /// Initial coordinate step as a fraction of the box width.
    pub x_step: f64,
    /// Ascent step in `w`, as a fraction of `sqrt(beta_t)`.
    pub w_step: f64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            mode: AcquisitionMode::LinearizedUcb,
            outer_starts: 32,
            outer_iters: 50,
            inner_iters: 5,
            x_step: 0.1,
            w_step: 0.125,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_starts == 0 || self.outer_iters == 0 || self.inner_iters == 0 {
            return Err(Error::invalid(
                "acquisition iteration counts must be at least 1",
            ));
        }
        if !(self.x_step > 0.0) || !(self.w_step > 0.0) {
            return Err(Error::invalid("acquisition step sizes must be positive"));
        }
        Ok(())
    }
}

/// Result of [`select_point`].
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub x: Vec<f64>,
    /// Parameter in the ball attaining `ucb` at `x`.
    pub w_used: ParamVector,
    pub ucb: f64,
    /// Acquisition value at each multistart initial point, in start order.
    pub start_scores: Vec<f64>,
}

/// `f_x(w_t) + sqrt(beta_t) ||grad f_x(w_t)||_{Sigma_t^{-1}}`.
pub fn ucb_value(model: &dyn SurrogateFamily, ball: &ConfidenceBall<'_>, x: &[f64]) -> Result<f64> {
    let center = ball.center();
    model.check_dims(center, x)?;
    let mut g = vec![0.0; model.param_dim()];
    Ok(linearized_ucb(model, ball, x, &mut g))
}

fn linearized_ucb(
    model: &dyn SurrogateFamily,
    ball: &ConfidenceBall<'_>,
    x: &[f64],
    grad: &mut [f64],
) -> f64 {
    let f = model.value_grad_into(ball.center(), x, grad);
    f + (ball.radius() * ball.shape().inv_quad(grad)).sqrt()
}

/// Radial projection onto the ball in the `Sigma_t` metric.
pub fn project_to_ball(ball: &ConfidenceBall<'_>, w: &[f64]) -> Result<ParamVector> {
    let q = ball.quad_form(w)?;
    if q <= ball.radius() {
        return ParamVector::new(w.to_vec());
    }
    let scale = (ball.radius() / q).sqrt() * (1.0 - 1e-12);
    let c = ball.center();
    ParamVector::new(
        w.iter()
            .zip(c.iter())
            .map(|(wi, ci)| ci + scale * (wi - ci))
            .collect(),
    )
}

/// Maximizer of the linearized model over the ball: `w_t + sqrt(beta) Sigma^{-1} g / ||g||_{Sigma^{-1}}`.
pub fn linearized_argmax(ball: &ConfidenceBall<'_>, g: &[f64]) -> Result<ParamVector> {
    let u_sq = ball.shape().inv_quad(g);
    if u_sq <= 0.0 {
        return Ok(ball.center().clone());
    }
    let dir = ball.shape().inv_apply(g);
    let scale = (ball.radius() / u_sq).sqrt();
    let w: Vec<f64> = ball
        .center()
        .iter()
        .zip(dir.iter())
        .map(|(c, d)| c + scale * d)
        .collect();
    project_to_ball(ball, &w)
}

/// Adaptive coordinate random search from `start`. Each sweep proposes a Gaussian move per
/// coordinate, clamped into the box; successes double that coordinate's step, failures halve it.
/// Only strict improvements are accepted.
pub fn coordinate_search<R: Rng + ?Sized>(
    objective: &mut dyn FnMut(&[f64]) -> f64,
    domain: &BoxDomain,
    start: Vec<f64>,
    sweeps: usize,
    step_fraction: f64,
    rng: &mut R,
) -> (Vec<f64>, f64) {
    let mut steps: Vec<f64> = (0..domain.dim())
        .map(|i| step_fraction * domain.width(i))
        .collect();
    let mut x = start;
    let mut best = objective(&x);
    for _ in 0..sweeps {
        best = sweep(objective, domain, &mut x, best, &mut steps, rng);
    }
    (x, best)
}

fn sweep<R: Rng + ?Sized>(
    objective: &mut dyn FnMut(&[f64]) -> f64,
    domain: &BoxDomain,
    x: &mut [f64],
    mut best: f64,
    steps: &mut [f64],
    rng: &mut R,
) -> f64 {
    for i in 0..x.len() {
        let width = domain.width(i);
        if width == 0.0 {
            continue;
        }
        let z: f64 = rng.sample(StandardNormal);
        let old = x[i];
        x[i] = (old + steps[i] * z).clamp(domain.lower()[i], domain.upper()[i]);
        let value = objective(x);
        if value > best {
            best = value;
            steps[i] = (steps[i] * 2.0).min(width);
        } else {
            x[i] = old;
            steps[i] = (steps[i] * 0.5).max(1e-12 * width);
        }
    }
    best
}

/// Multistart maximization of `objective` over `domain`. Ties keep the earliest start.
pub fn maximize_in_box(
    objective: &mut dyn FnMut(&[f64]) -> f64,
    domain: &BoxDomain,
    starts: usize,
    sweeps: usize,
    step_fraction: f64,
    seed: u64,
) -> (Vec<f64>, f64) {
    let mut start_rng = stream_rng(seed, 0);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for k in 0..starts.max(1) {
        let start = domain.sample(&mut start_rng);
        let mut rng = stream_rng(child_seed(seed, k as u64), 1);
        let (x, v) = coordinate_search(objective, domain, start, sweeps, step_fraction, &mut rng);
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((x, v));
        }
    }
    best.expect("at least one start")
}

/// Selects the next query point for the ball `Ball_t`.
pub fn select_point(
    model: &dyn SurrogateFamily,
    ball: &ConfidenceBall<'_>,
    domain: &BoxDomain,
    cfg: &AcquisitionConfig,
    seed: u64,
) -> Result<Selection> {
    cfg.validate()?;
    check_dim("domain", model.input_dim(), domain.dim())?;
    check_dim("ball centre", model.param_dim(), ball.center().len())?;
    match cfg.mode {
        AcquisitionMode::LinearizedUcb => select_linearized(model, ball, domain, cfg, seed),
        AcquisitionMode::Alternating => select_alternating(model, ball, domain, cfg, seed),
    }
}

fn select_linearized(
    model: &dyn SurrogateFamily,
    ball: &ConfidenceBall<'_>,
    domain: &BoxDomain,
    cfg: &AcquisitionConfig,
    seed: u64,
) -> Result<Selection> {
    let mut grad = vec![0.0; model.param_dim()];
    let mut objective = |x: &[f64]| linearized_ucb(model, ball, x, &mut grad);
    let mut start_rng = stream_rng(seed, 0);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut start_scores = Vec::with_capacity(cfg.outer_starts);
    for k in 0..cfg.outer_starts {
        let start = domain.sample(&mut start_rng);
        start_scores.push(objective(&start));
        let mut rng = stream_rng(child_seed(seed, k as u64), 1);
        let (x, v) = coordinate_search(
            &mut objective,
            domain,
            start,
            cfg.outer_iters,
            cfg.x_step,
            &mut rng,
        );
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((x, v));
        }
    }
    let (x, ucb) = best.expect("at least one start");
    if !ucb.is_finite() {
        return Err(Error::numerical("acquisition value is not finite", None));
    }
    let mut g = vec![0.0; model.param_dim()];
    model.value_grad_into(ball.center(), &x, &mut g);
    let w_used = linearized_argmax(ball, &g)?;
    Ok(Selection {
        x,
        w_used,
        ucb,
        start_scores,
    })
}

/// Projected normalized ascent on `w -> f_x(w)` inside the ball, keeping only improving steps.
fn ascend_in_ball(
    model: &dyn SurrogateFamily,
    ball: &ConfidenceBall<'_>,
    x: &[f64],
    mut w: Vec<f64>,
    mut value: f64,
    iters: usize,
    step: f64,
) -> Result<(Vec<f64>, f64)> {
    let mut grad = vec![0.0; w.len()];
    let mut step = step;
    for _ in 0..iters {
        model.value_grad_into(&w, x, &mut grad);
        let u_sq = ball.shape().inv_quad(&grad);
        if u_sq <= 0.0 {
            break;
        }
        let dir = ball.shape().inv_apply(&grad);
        let scale = step / u_sq.sqrt();
        let proposal: Vec<f64> = w
            .iter()
            .zip(dir.iter())
            .map(|(a, d)| a + scale * d)
            .collect();
        let proposal = project_to_ball(ball, &proposal)?.to_vec();
        let v = model.value_at(&proposal, x);
        if v > value {
            w = proposal;
            value = v;
        } else {
            step *= 0.5;
        }
    }
    Ok((w, value))
}

fn select_alternating(
    model: &dyn SurrogateFamily,
    ball: &ConfidenceBall<'_>,
    domain: &BoxDomain,
    cfg: &AcquisitionConfig,
    seed: u64,
) -> Result<Selection> {
    let w_step = cfg.w_step * ball.radius().sqrt();
    let mut start_rng = stream_rng(seed, 0);
    let mut best: Option<(Vec<f64>, Vec<f64>, f64)> = None;
    let mut start_scores = Vec::with_capacity(cfg.outer_starts);
    for k in 0..cfg.outer_starts {
        let mut x = domain.sample(&mut start_rng);
        let mut w = ball.center().to_vec();
        let mut value = model.value_at(&w, &x);
        start_scores.push(value);
        let mut rng = stream_rng(child_seed(seed, k as u64), 1);
        let mut steps: Vec<f64> = (0..domain.dim())
            .map(|i| cfg.x_step * domain.width(i))
            .collect();
        for _ in 0..cfg.outer_iters {
            let w_fixed = w.clone();
            let mut objective = |p: &[f64]| model.value_at(&w_fixed, p);
            value = sweep(&mut objective, domain, &mut x, value, &mut steps, &mut rng);
            (w, value) = ascend_in_ball(model, ball, &x, w, value, cfg.inner_iters, w_step)?;
        }
        if best.as_ref().is_none_or(|(_, _, b)| value > *b) {
            best = Some((x, w, value));
        }
    }
    let (x, w, ucb) = best.expect("at least one start");
    if !ucb.is_finite() {
        return Err(Error::numerical("acquisition value is not finite", None));
    }
    Ok(Selection {
        x,
        w_used: ParamVector::new(w)?,
        ucb,
        start_scores,
    })
}
