//! Uniform exploration and the regression oracle that produces the initial parameter estimate.

use rand::Rng;

use crate::domain::{child_seed, stream_rng, BoxDomain, ParamVector};
use crate::error::{check_dim, Error, Result};
use crate::model::SurrogateFamily;

#[derive(Debug, Clone, PartialEq)]
pub struct Phase1Config {
    pub gd_iters: usize,
    pub gd_step: f64,
    /// Learning rate is multiplied by `decay_factor` every `decay_every` iterations.
    pub decay_factor: f64,
    pub decay_every: usize,
    pub restarts: usize,
    pub clamp_to_box: bool,
}

impl Default for Phase1Config {
    fn default() -> Self {
        Self {
            gd_iters: 2000,
            gd_step: 0.3,
            decay_factor: 1.0,
            decay_every: 500,
            restarts: 3,
            clamp_to_box: false,
        }
    }
}

impl Phase1Config {
    pub fn validate(&self) -> Result<()> {
        if self.gd_iters == 0 {
            return Err(Error::invalid("gd_iters must be at least 1"));
        }
        if !(self.gd_step > 0.0) || !self.gd_step.is_finite() {
            return Err(Error::invalid("gd_step must be positive"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be at least 1"));
        }
        if !(self.decay_factor > 0.0) || self.decay_every == 0 {
            return Err(Error::invalid("decay schedule must be positive"));
        }
        Ok(())
    }

    fn step_at(&self, iter: usize) -> f64 {
        self.gd_step * self.decay_factor.powi((iter / self.decay_every) as i32)
    }
}

/// Observed pairs `(x_j, y_j)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
}

impl Dataset {
    pub fn new(xs: Vec<Vec<f64>>, ys: Vec<f64>) -> Result<Self> {
        check_dim("dataset targets", xs.len(), ys.len())?;
        if let Some(first) = xs.first() {
            for x in &xs {
                check_dim("dataset point", first.len(), x.len())?;
            }
        }
        if let Some(i) = ys.iter().position(|y| !y.is_finite()) {
            return Err(Error::invalid(format!("observation {i} is not finite")));
        }
        Ok(Self { xs, ys })
    }

    pub fn push(&mut self, x: Vec<f64>, y: f64) -> Result<()> {
        if let Some(first) = self.xs.first() {
            check_dim("dataset point", first.len(), x.len())?;
        }
        if !y.is_finite() {
            return Err(Error::invalid("observation is not finite"));
        }
        self.xs.push(x);
        self.ys.push(y);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn xs(&self) -> &[Vec<f64>] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.xs
            .iter()
            .map(Vec::as_slice)
            .zip(self.ys.iter().copied())
    }
}

/// `n` i.i.d. uniform points on `domain`, reproducible from `seed`.
pub fn sample_uniform(domain: &BoxDomain, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let mut rng = stream_rng(seed, 0);
    Ok((0..n).map(|_| domain.sample(&mut rng)).collect())
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub params: ParamVector,
    pub train_mse: f64,
    /// Index of the restart that produced `params`.
    pub restart: usize,
    /// Final training MSE of every restart, in order.
    pub restart_losses: Vec<f64>,
}

/// Approximate least-squares fit `argmin_w sum_j (f_w(x_j) - y_j)^2` by multistart gradient descent.
pub fn fit(
    model: &dyn SurrogateFamily,
    data: &Dataset,
    cfg: &Phase1Config,
    seed: u64,
) -> Result<ParamVector> {
    fit_detailed(model, data, cfg, seed).map(|r| r.params)
}

pub fn fit_detailed(
    model: &dyn SurrogateFamily,
    data: &Dataset,
    cfg: &Phase1Config,
    seed: u64,
) -> Result<FitReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("cannot fit an empty dataset"));
    }
    for x in data.xs() {
        check_dim("dataset point", model.input_dim(), x.len())?;
    }

    let mut best: Option<(usize, Vec<f64>, f64)> = None;
    let mut restart_losses = Vec::with_capacity(cfg.restarts);
    for r in 0..cfg.restarts {
        let mut rng = stream_rng(child_seed(seed, r as u64), 0);
        let init = model.param_box().sample(&mut rng);
        let (w, loss) = descend(model, data, cfg, init)?;
        restart_losses.push(loss);
        if best.as_ref().is_none_or(|(_, _, b)| loss < *b) {
            best = Some((r, w, loss));
        }
    }
    let (restart, w, train_mse) = best.expect("at least one restart");
    Ok(FitReport {
        params: ParamVector::new(w)?,
        train_mse,
        restart,
        restart_losses,
    })
}

/// Mean squared error of `w` on `data`.
pub fn training_mse(model: &dyn SurrogateFamily, w: &[f64], data: &Dataset) -> f64 {
    data.iter()
        .map(|(x, y)| (model.value_at(w, x) - y).powi(2))
        .sum::<f64>()
        / data.len() as f64
}

fn descend(
    model: &dyn SurrogateFamily,
    data: &Dataset,
    cfg: &Phase1Config,
    mut w: Vec<f64>,
) -> Result<(Vec<f64>, f64)> {
    let d_w = model.param_dim();
    let n = data.len() as f64;
    let mut grad = vec![0.0; d_w];
    let mut point_grad = vec![0.0; d_w];
    for iter in 0..cfg.gd_iters {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for (x, y) in data.iter() {
            let f = model.value_grad_into(&w, x, &mut point_grad);
            let resid = f - y;
            loss += resid * resid;
            for (g, pg) in grad.iter_mut().zip(&point_grad) {
                *g += resid * pg;
            }
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::numerical(
                "phase-1 gradient descent loss",
                Some(iter),
            ));
        }
        let step = cfg.step_at(iter) * 2.0 / n;
        for (wi, g) in w.iter_mut().zip(&grad) {
            *wi -= step * g;
        }
        if cfg.clamp_to_box {
            model.param_box().clamp_in_place(&mut w);
        }
    }
    let loss = training_mse(model, &w, data);
    if !loss.is_finite() || w.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(
            "phase-1 gradient descent loss",
            Some(cfg.gd_iters),
        ));
    }
    Ok((w, loss))
}

/// Monte-Carlo estimate of `L(w) = E_{x ~ U(domain)} (f_x(w) - f_x(w_star))^2`.
pub fn expected_loss(
    model: &dyn SurrogateFamily,
    w: &[f64],
    w_star: &[f64],
    domain: &BoxDomain,
    mc_samples: usize,
    seed: u64,
) -> Result<f64> {
    check_dim("parameter vector", model.param_dim(), w.len())?;
    check_dim(
        "reference parameter vector",
        model.param_dim(),
        w_star.len(),
    )?;
    check_dim("domain", model.input_dim(), domain.dim())?;
    if mc_samples == 0 {
        return Err(Error::invalid("mc_samples must be at least 1"));
    }
    let mut rng = stream_rng(seed, 0);
    let mut total = 0.0;
    for _ in 0..mc_samples {
        let x = domain.sample(&mut rng);
        total += (model.value_at(w, &x) - model.value_at(w_star, &x)).powi(2);
    }
    Ok(total / mc_samples as f64)
}

/// Dataset of `n` uniform points labelled by `label(x)` plus Gaussian noise of scale `sigma`.
pub fn labelled_sample(
    domain: &BoxDomain,
    n: usize,
    sigma: f64,
    seed: u64,
    label: impl Fn(&[f64]) -> f64,
) -> Result<Dataset> {
    let xs = sample_uniform(domain, n, seed)?;
    let mut rng = stream_rng(seed, 1);
    let ys = xs
        .iter()
        .map(|x| label(x) + sigma * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    Dataset::new(xs, ys)
}
