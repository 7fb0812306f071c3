//! Gaussian-process baselines with a Matérn 5/2 kernel and fixed hyperparameters.
//!
//! Inputs are rescaled to the unit cube of the search box before the kernel is applied, so the
//! length-scale is relative to the box.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::acquisition::coordinate_search;
use crate::domain::{child_seed, stream_rng, BoxDomain};
use crate::error::{check_dim, Error, Result};
use crate::phase1::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpAcquisition {
    Ucb,
    Ei,
    Pi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpConfig {
    /// Length-scale in unit-cube coordinates.
    pub length_scale: f64,
    pub signal_variance: f64,
    /// Observation noise variance, in the units of `y`.
    pub noise_variance: f64,
    /// Added to the kernel diagonal for conditioning.
    pub jitter: f64,
    pub acquisition: GpAcquisition,
    pub kappa: f64,
    /// Improvement margin for EI and PI.
    pub xi: f64,
    pub candidate_count: usize,
    pub refine_starts: usize,
    pub refine_sweeps: usize,
    /// Standardize `y` before fitting; the prior then reverts to the sample mean.
    pub normalize_y: bool,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            length_scale: 1.0,
            signal_variance: 1.0,
            noise_variance: 1e-6,
            jitter: 1e-10,
            acquisition: GpAcquisition::Ucb,
            kappa: 2.0,
            xi: 0.01,
            candidate_count: 1000,
            refine_starts: 5,
            refine_sweeps: 20,
            normalize_y: false,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_scale > 0.0)
            || !(self.signal_variance > 0.0)
            || !(self.noise_variance > 0.0)
        {
            return Err(Error::invalid(
                "length-scale, signal variance and noise variance must be positive",
            ));
        }
        if !(self.kappa >= 0.0) || !(self.jitter >= 0.0) || !(self.xi >= 0.0) {
            return Err(Error::invalid("kappa, jitter and xi must be non-negative"));
        }
        if self.candidate_count == 0 {
            return Err(Error::invalid("candidate_count must be at least 1"));
        }
        Ok(())
    }
}

/// Matérn 5/2 covariance at distance `r`.
pub fn matern52(r: f64, length_scale: f64, signal_variance: f64) -> f64 {
    let s = 5f64.sqrt() * r / length_scale;
    signal_variance * (1.0 + s + s * s / 3.0) * (-s).exp()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// A fitted GP posterior.
#[derive(Debug, Clone)]
pub struct GpModel {
    cfg: GpConfig,
    domain: BoxDomain,
    xs: Vec<Vec<f64>>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    y_mean: f64,
    y_scale: f64,
    best_y: f64,
}

impl GpModel {
    pub fn fit(data: &Dataset, cfg: &GpConfig, domain: &BoxDomain) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::invalid(
                "GP posterior needs at least one observation",
            ));
        }
        for x in data.xs() {
            check_dim("GP input", domain.dim(), x.len())?;
        }
        let n = data.len();
        let ys = data.ys();
        let (y_mean, y_scale) = if cfg.normalize_y {
            let mean = ys.iter().sum::<f64>() / n as f64;
            let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            (mean, if sd > 1e-12 { sd } else { 1.0 })
        } else {
            (0.0, 1.0)
        };
        let xs: Vec<Vec<f64>> = data.xs().iter().map(|x| domain.to_unit(x)).collect();
        let noise = cfg.noise_variance / (y_scale * y_scale) + cfg.jitter;
        let k = DMatrix::from_fn(n, n, |i, j| {
            let v = matern52(
                distance(&xs[i], &xs[j]),
                cfg.length_scale,
                cfg.signal_variance,
            );
            if i == j {
                v + noise
            } else {
                v
            }
        });
        let chol = k.cholesky().ok_or_else(|| {
            Error::numerical(
                "Cholesky of the GP kernel matrix failed; increase jitter or noise variance",
                None,
            )
        })?;
        let y = DVector::from_iterator(n, ys.iter().map(|y| (y - y_mean) / y_scale));
        let alpha = chol.solve(&y);
        let best_y = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            cfg: cfg.clone(),
            domain: domain.clone(),
            xs,
            chol,
            alpha,
            y_mean,
            y_scale,
            best_y,
        })
    }

    /// Posterior `(mean, variance)` at `x`, in the units of `y`.
    pub fn posterior(&self, x: &[f64]) -> Result<(f64, f64)> {
        check_dim("GP query", self.domain.dim(), x.len())?;
        Ok(self.posterior_unchecked(x))
    }

    fn posterior_unchecked(&self, x: &[f64]) -> (f64, f64) {
        let u = self.domain.to_unit(x);
        let kx = DVector::from_iterator(
            self.xs.len(),
            self.xs.iter().map(|xi| {
                matern52(
                    distance(xi, &u),
                    self.cfg.length_scale,
                    self.cfg.signal_variance,
                )
            }),
        );
        let mean = kx.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&kx)
            .expect("triangular factor is non-singular");
        let var = self.cfg.signal_variance - v.norm_squared();
        // round-off can push the variance slightly below zero
        debug_assert!(var >= -1e-12 * self.cfg.signal_variance.max(1.0) || var.is_nan());
        (
            self.y_mean + self.y_scale * mean,
            var.max(0.0) * self.y_scale * self.y_scale,
        )
    }

    pub fn best_observed(&self) -> f64 {
        self.best_y
    }

    /// Acquisition value at `x` (larger is better).
    pub fn acquisition(&self, x: &[f64]) -> f64 {
        let (mean, var) = self.posterior_unchecked(x);
        acquisition_value(
            self.cfg.acquisition,
            mean,
            var.sqrt(),
            self.best_y,
            &self.cfg,
        )
    }
}

fn acquisition_value(kind: GpAcquisition, mean: f64, sd: f64, best: f64, cfg: &GpConfig) -> f64 {
    match kind {
        GpAcquisition::Ucb => mean + cfg.kappa * sd,
        GpAcquisition::Ei => expected_improvement(mean, sd, best, cfg.xi),
        GpAcquisition::Pi => probability_of_improvement(mean, sd, best, cfg.xi),
    }
}

/// `E[max(f - best - xi, 0)]` for `f ~ N(mean, sd^2)`.
pub fn expected_improvement(mean: f64, sd: f64, best: f64, xi: f64) -> f64 {
    let imp = mean - best - xi;
    if sd <= 0.0 {
        return imp.max(0.0);
    }
    let z = imp / sd;
    let n = Normal::standard();
    (imp * n.cdf(z) + sd * n.pdf(z)).max(0.0)
}

/// `P[f > best + xi]` for `f ~ N(mean, sd^2)`.
pub fn probability_of_improvement(mean: f64, sd: f64, best: f64, xi: f64) -> f64 {
    let imp = mean - best - xi;
    if sd <= 0.0 {
        return if imp > 0.0 { 1.0 } else { 0.0 };
    }
    Normal::standard().cdf(imp / sd)
}

pub fn gp_posterior(
    data: &Dataset,
    cfg: &GpConfig,
    domain: &BoxDomain,
    x: &[f64],
) -> Result<(f64, f64)> {
    GpModel::fit(data, cfg, domain)?.posterior(x)
}

/// Next query: best of `candidate_count` uniform candidates, then coordinate-search refinement
/// of the top `refine_starts`.
pub fn gp_select(
    data: &Dataset,
    cfg: &GpConfig,
    domain: &BoxDomain,
    seed: u64,
) -> Result<Vec<f64>> {
    let gp = GpModel::fit(data, cfg, domain)?;
    let mut rng = stream_rng(seed, 0);
    let mut scored: Vec<(f64, Vec<f64>)> = (0..cfg.candidate_count)
        .map(|_| {
            let x = domain.sample(&mut rng);
            (gp.acquisition(&x), x)
        })
        .collect();
    // stable sort keeps candidate order among ties
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = scored[0].clone();
    let mut objective = |x: &[f64]| gp.acquisition(x);
    for (k, (_, start)) in scored.iter().take(cfg.refine_starts).enumerate() {
        let mut local = stream_rng(child_seed(seed, k as u64), 1);
        let (x, v) = coordinate_search(
            &mut objective,
            domain,
            start.clone(),
            cfg.refine_sweeps,
            0.05,
            &mut local,
        );
        if v > best.0 {
            best = (v, x);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_data(n: usize, seed: u64, domain: &BoxDomain) -> Dataset {
        let mut rng = stream_rng(seed, 0);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| domain.sample(&mut rng)).collect();
        let ys = xs
            .iter()
            .map(|x| (3.0 * x[0]).sin() + rng.random_range(-0.1..0.1))
            .collect();
        Dataset::new(xs, ys).unwrap()
    }

    #[test]
    fn interpolates_training_points() {
        let domain = BoxDomain::cube(1, 0.0, 1.0).unwrap();
        let data = Dataset::new(vec![vec![0.2], vec![0.7]], vec![1.5, -0.5]).unwrap();
        let cfg = GpConfig {
            noise_variance: 1e-12,
            length_scale: 0.3,
            ..GpConfig::default()
        };
        let (m, v) = gp_posterior(&data, &cfg, &domain, &[0.2]).unwrap();
        assert!((m - 1.5).abs() < 1e-6);
        assert!(v < 1e-6);
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let domain = BoxDomain::cube(1, 0.0, 1.0).unwrap();
        let data = Dataset::new(vec![vec![0.0], vec![0.01]], vec![2.0, 2.1]).unwrap();
        let cfg = GpConfig {
            length_scale: 0.02,
            signal_variance: 1.7,
            ..GpConfig::default()
        };
        let (m, v) = gp_posterior(&data, &cfg, &domain, &[1.0]).unwrap();
        assert!(m.abs() < 1e-6);
        assert!((v - 1.7).abs() < 1e-6);
    }

    #[test]
    fn matches_dense_inverse() {
        let domain = BoxDomain::cube(1, -2.0, 2.0).unwrap();
        let data = random_data(5, 3, &domain);
        let cfg = GpConfig {
            noise_variance: 1e-3,
            length_scale: 0.4,
            ..GpConfig::default()
        };
        let n = data.len();
        let u: Vec<f64> = data.xs().iter().map(|x| (x[0] + 2.0) / 4.0).collect();
        let k = DMatrix::from_fn(n, n, |i, j| {
            let mut v = matern52((u[i] - u[j]).abs(), 0.4, 1.0);
            if i == j {
                v += 1e-3 + cfg.jitter;
            }
            v
        });
        let kinv = k.try_inverse().unwrap();
        let y = DVector::from_column_slice(data.ys());
        for q in [-1.7, 0.0, 0.33, 1.9] {
            let uq = (q + 2.0) / 4.0;
            let kx =
                DVector::from_iterator(n, u.iter().map(|ui| matern52((ui - uq).abs(), 0.4, 1.0)));
            let mean = kx.dot(&(&kinv * &y));
            let var = 1.0 - kx.dot(&(&kinv * &kx));
            let (m, v) = gp_posterior(&data, &cfg, &domain, &[q]).unwrap();
            assert!((m - mean).abs() < 1e-8);
            assert!((v - var).abs() < 1e-8);
        }
    }

    #[test]
    fn extra_observation_never_increases_variance() {
        let domain = BoxDomain::cube(1, 0.0, 1.0).unwrap();
        let cfg = GpConfig {
            length_scale: 0.2,
            ..GpConfig::default()
        };
        for seed in 0..20 {
            let data = random_data(6, seed, &domain);
            let mut bigger = data.clone();
            let mut rng = stream_rng(seed, 9);
            bigger.push(vec![rng.random_range(0.0..1.0)], 0.3).unwrap();
            let small = GpModel::fit(&data, &cfg, &domain).unwrap();
            let large = GpModel::fit(&bigger, &cfg, &domain).unwrap();
            for k in 0..=50 {
                let x = [k as f64 / 50.0];
                let (_, v0) = small.posterior(&x).unwrap();
                let (_, v1) = large.posterior(&x).unwrap();
                assert!(v0 >= 0.0 && v1 >= 0.0);
                assert!(v1 <= v0 + 1e-9);
            }
        }
    }

    #[test]
    fn improvement_acquisitions_are_nonnegative() {
        for (m, s) in [(0.0, 1.0), (-5.0, 0.1), (3.0, 0.0), (-1.0, 0.0), (0.5, 2.0)] {
            assert!(expected_improvement(m, s, 1.0, 0.01) >= 0.0);
            let p = probability_of_improvement(m, s, 1.0, 0.01);
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn ei_vanishes_at_interpolated_best() {
        let domain = BoxDomain::cube(1, 0.0, 1.0).unwrap();
        let data =
            Dataset::new(vec![vec![0.1], vec![0.5], vec![0.9]], vec![0.0, 1.0, 0.2]).unwrap();
        let cfg = GpConfig {
            noise_variance: 1e-12,
            acquisition: GpAcquisition::Ei,
            length_scale: 0.3,
            ..GpConfig::default()
        };
        let gp = GpModel::fit(&data, &cfg, &domain).unwrap();
        assert!(gp.acquisition(&[0.5]) < 1e-12);
    }

    #[test]
    fn zero_kappa_ucb_maximizes_mean() {
        let domain = BoxDomain::cube(1, 0.0, 1.0).unwrap();
        let data = random_data(8, 4, &domain);
        let cfg = GpConfig {
            kappa: 0.0,
            length_scale: 0.3,
            noise_variance: 1e-4,
            ..GpConfig::default()
        };
        let gp = GpModel::fit(&data, &cfg, &domain).unwrap();
        let x = gp_select(&data, &cfg, &domain, 2).unwrap();
        let chosen = gp.posterior(&x).unwrap().0;
        for k in 0..=1000 {
            let m = gp.posterior(&[k as f64 / 1000.0]).unwrap().0;
            assert!(chosen >= m - 1e-4);
        }
    }

    #[test]
    fn gp_ucb_finds_quadratic_peak() {
        let domain = BoxDomain::cube(1, -5.0, 5.0).unwrap();
        let f = |x: &[f64]| -(x[0] - 1.0).powi(2);
        let cfg = GpConfig {
            normalize_y: true,
            ..GpConfig::default()
        };
        let mut rng = stream_rng(10, 0);
        let mut data = Dataset::default();
        for _ in 0..3 {
            let x = domain.sample(&mut rng);
            let y = f(&x);
            data.push(x, y).unwrap();
        }
        for round in 3..30 {
            let x = gp_select(&data, &cfg, &domain, round).unwrap();
            let y = f(&x);
            data.push(x, y).unwrap();
        }
        let best = crate::objectives::select_output(
            &data
                .iter()
                .map(|(x, y)| (x.to_vec(), y))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        assert!((data.xs()[best][0] - 1.0).abs() <= 0.05);
    }

    #[test]
    fn empty_data_rejected() {
        let domain = BoxDomain::cube(1, 0.0, 1.0).unwrap();
        assert!(gp_posterior(&Dataset::default(), &GpConfig::default(), &domain, &[0.5]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn posterior_variance_and_improvements_are_nonnegative(
            n in 1usize..15,
            seed in any::<u64>(),
            q in 0.0f64..1.0,
        ) {
            let domain = BoxDomain::cube(1, 0.0, 1.0).unwrap();
            let data = random_data(n, seed, &domain);
            let model = GpModel::fit(&data, &GpConfig::default(), &domain).unwrap();
            let (mean, var) = model.posterior(&[q]).unwrap();
            prop_assert!(var >= 0.0);
            let best = model.best_observed();
            prop_assert!(expected_improvement(mean, var.sqrt(), best, 0.01) >= 0.0);
            let pi = probability_of_improvement(mean, var.sqrt(), best, 0.01);
            prop_assert!((0.0..=1.0).contains(&pi));
        }
    }
}
