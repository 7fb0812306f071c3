//! Phase-II state: the gradient covariance, the closed-form centre of the
//! confidence ellipsoid, its radius schedule and invariant diagnostics.
//!
//! After `t` absorbed rounds the covariance is
//! `Sigma_t = lambda I + sum_i g_i g_i^T` with `g_i = grad_w f_{x_i}(w_i)`, and the
//! centre is
//! `w_t = Sigma_t^{-1} (sum_i g_i (g_i^T w_i + y_i - f_{x_i}(w_i)) + lambda w_0)`,
//! the minimizer of the linearized, `w_0`-regularized least-squares objective.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::domain::{BoxDomain, ParamVector};
use crate::error::{check_dim, Error, Result};

/// Number of Sherman–Morrison updates between dense re-inversions.
pub const DEFAULT_REFRESH_EVERY: usize = 64;

/// `Sigma_t`, its maintained inverse and log-determinant.
#[derive(Debug, Clone)]
pub struct CovarianceState {
    sigma: DMatrix<f64>,
    sigma_inv: DMatrix<f64>,
    log_det: f64,
    lambda: f64,
    t: usize,
    refresh_every: usize,
    u_sq: Vec<f64>,
}

impl CovarianceState {
    /// `Sigma_0 = lambda I`.
    pub fn new(d_w: usize, lambda: f64) -> Result<Self> {
        Self::with_refresh(d_w, lambda, DEFAULT_REFRESH_EVERY)
    }

    /// `refresh_every = 0` disables dense re-inversion.
    pub fn with_refresh(d_w: usize, lambda: f64, refresh_every: usize) -> Result<Self> {
        if d_w == 0 {
            return Err(Error::invalid("parameter dimension must be at least 1"));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!(
                "regularization lambda must be positive, got {lambda}"
            )));
        }
        Ok(Self {
            sigma: DMatrix::identity(d_w, d_w) * lambda,
            sigma_inv: DMatrix::identity(d_w, d_w) / lambda,
            log_det: d_w as f64 * lambda.ln(),
            lambda,
            t: 0,
            refresh_every,
            u_sq: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Number of absorbed rank-one updates.
    pub fn rounds(&self) -> usize {
        self.t
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn sigma_inv(&self) -> &DMatrix<f64> {
        &self.sigma_inv
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `u_i^2 = g_i^T Sigma_i^{-1} g_i` of every absorbed update, evaluated before that update.
    pub fn u_sq_history(&self) -> &[f64] {
        &self.u_sq
    }

    /// `Sigma <- Sigma + g g^T`. Returns `u^2 = g^T Sigma^{-1} g` computed before the update.
    pub fn rank_one_update(&mut self, g: &[f64]) -> Result<f64> {
        check_dim("gradient", self.dim(), g.len())?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("gradient has non-finite entries"));
        }
        let g = DVector::from_column_slice(g);
        let v = &self.sigma_inv * &g;
        let u_sq = g.dot(&v);
        if u_sq < -1e-12 || !u_sq.is_finite() {
            return Err(Error::numerical(
                format!("covariance inverse lost definiteness (u^2 = {u_sq})"),
                Some(self.t),
            ));
        }
        let u_sq = u_sq.max(0.0);
        self.sigma.ger(1.0, &g, &g, 1.0);
        self.sigma_inv.ger(-1.0 / (1.0 + u_sq), &v, &v, 1.0);
        self.log_det += u_sq.ln_1p();
        self.t += 1;
        self.u_sq.push(u_sq);
        if self.refresh_every > 0 && self.t.is_multiple_of(self.refresh_every) {
            self.refresh()?;
        }
        Ok(u_sq)
    }

    /// Replaces the maintained inverse with a Cholesky-based dense inverse of `Sigma`.
    pub fn refresh(&mut self) -> Result<()> {
        let chol = self.sigma.clone().cholesky().ok_or_else(|| {
            Error::numerical("Cholesky factorization of the covariance", Some(self.t))
        })?;
        let mut inv = chol.inverse();
        symmetrize(&mut inv);
        self.sigma_inv = inv;
        Ok(())
    }

    /// `log det Sigma` recomputed from a fresh Cholesky factorization.
    pub fn dense_log_det(&self) -> Result<f64> {
        let chol = self.sigma.clone().cholesky().ok_or_else(|| {
            Error::numerical("Cholesky factorization of the covariance", Some(self.t))
        })?;
        Ok(2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|d| d.ln())
                .sum::<f64>())
    }

    /// `max |(Sigma Sigma^{-1} - I)_{ij}|` for the maintained inverse.
    pub fn inverse_residual(&self) -> f64 {
        let n = self.dim();
        let prod = &self.sigma * &self.sigma_inv;
        (prod - DMatrix::<f64>::identity(n, n)).amax()
    }

    /// `g^T Sigma^{-1} g` with the maintained inverse.
    pub fn inv_quad(&self, g: &[f64]) -> f64 {
        let n = self.dim();
        let mut total = 0.0;
        for j in 0..n {
            let col = self.sigma_inv.column(j);
            let mut s = 0.0;
            for i in 0..n {
                s += col[i] * g[i];
            }
            total += s * g[j];
        }
        total.max(0.0)
    }

    /// `Sigma^{-1} g` with the maintained inverse.
    pub fn inv_apply(&self, g: &[f64]) -> DVector<f64> {
        &self.sigma_inv * DVector::from_column_slice(g)
    }

    /// `(a - b)^T Sigma (a - b)`.
    pub fn mahalanobis_sq(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        check_dim("first point", self.dim(), a.len())?;
        check_dim("second point", self.dim(), b.len())?;
        let diff = DVector::from_iterator(a.len(), a.iter().zip(b).map(|(x, y)| x - y));
        Ok((diff.dot(&(&self.sigma * &diff))).max(0.0))
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// One absorbed Phase-II round.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub x: Vec<f64>,
    pub y: f64,
    /// Centre estimate used when `x` was selected.
    pub w: ParamVector,
    /// `grad_w f_x(w)`.
    pub g: Vec<f64>,
    /// `f_x(w)`.
    pub f: f64,
}

impl ObservationRecord {
    fn validate(&self, d_w: usize) -> Result<()> {
        check_dim("record gradient", d_w, self.g.len())?;
        check_dim("record parameter", d_w, self.w.len())?;
        if !self.y.is_finite() || !self.f.is_finite() || self.g.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observation record has non-finite entries"));
        }
        Ok(())
    }

    /// `g (g^T w + y - f)`, the record's contribution to the normal equations.
    fn moment(&self) -> DVector<f64> {
        let g = DVector::from_column_slice(&self.g);
        let scale = g.dot(self.w.as_vector()) + self.y - self.f;
        g * scale
    }
}

/// Closed-form centre recomputed from the full history. `state` must have absorbed exactly the
/// gradients of `history`, in order.
pub fn solve_w_hat(
    history: &[ObservationRecord],
    state: &CovarianceState,
    w0: &ParamVector,
) -> Result<ParamVector> {
    if history.len() != state.rounds() {
        return Err(Error::State(format!(
            "history has {} records but covariance absorbed {} updates",
            history.len(),
            state.rounds()
        )));
    }
    check_dim("initial estimate", state.dim(), w0.len())?;
    let mut rhs = w0.as_vector() * state.lambda();
    for rec in history {
        rec.validate(state.dim())?;
        rhs += rec.moment();
    }
    ParamVector::from_vector(state.sigma_inv() * rhs)
}

/// Incrementally maintained Phase-II estimator.
#[derive(Debug, Clone)]
pub struct UcbEngine {
    state: CovarianceState,
    w0: ParamVector,
    moment_sum: DVector<f64>,
    history: Vec<ObservationRecord>,
    center: ParamVector,
    clamp: Option<BoxDomain>,
}

impl UcbEngine {
    pub fn new(w0: ParamVector, lambda: f64) -> Result<Self> {
        let state = CovarianceState::new(w0.len(), lambda)?;
        Ok(Self::from_state(state, w0))
    }

    pub fn from_state(state: CovarianceState, w0: ParamVector) -> Self {
        let d = w0.len();
        Self {
            state,
            center: w0.clone(),
            w0,
            moment_sum: DVector::zeros(d),
            history: Vec::new(),
            clamp: None,
        }
    }

    /// Clamp the reported centre into `param_box` (off by default).
    pub fn with_clamp(mut self, param_box: BoxDomain) -> Self {
        self.clamp = Some(param_box);
        self
    }

    pub fn state(&self) -> &CovarianceState {
        &self.state
    }

    pub fn history(&self) -> &[ObservationRecord] {
        &self.history
    }

    pub fn initial_estimate(&self) -> &ParamVector {
        &self.w0
    }

    /// Current centre `w_t`.
    pub fn center(&self) -> &ParamVector {
        &self.center
    }

    /// Absorbs one round and re-solves the centre. Returns `u^2` for the absorbed gradient.
    pub fn absorb(&mut self, record: ObservationRecord) -> Result<f64> {
        record.validate(self.state.dim())?;
        let u_sq = self.state.rank_one_update(&record.g)?;
        self.moment_sum += record.moment();
        self.history.push(record);
        self.center = self.solve_cached()?;
        Ok(u_sq)
    }

    /// Centre from the cached moment sum, `O(d_w^2)`.
    pub fn solve_cached(&self) -> Result<ParamVector> {
        let rhs = &self.moment_sum + self.w0.as_vector() * self.state.lambda();
        let mut w = self.state.sigma_inv() * rhs;
        if let Some(b) = &self.clamp {
            b.clamp_in_place(w.as_mut_slice());
        }
        ParamVector::from_vector(w)
    }

    /// Centre recomputed from the full history (test mode).
    pub fn solve_full(&self) -> Result<ParamVector> {
        let mut w = solve_w_hat(&self.history, &self.state, &self.w0)?;
        if let Some(b) = &self.clamp {
            let mut v = w.to_vec();
            b.clamp_in_place(&mut v);
            w = ParamVector::new(v)?;
        }
        Ok(w)
    }

    pub fn ball(&self, radius: f64) -> Result<ConfidenceBall<'_>> {
        ConfidenceBall::new(self.center.clone(), radius, &self.state)
    }
}

/// `{ w : ||w - center||^2_Sigma <= radius }`.
#[derive(Debug, Clone)]
pub struct ConfidenceBall<'a> {
    center: ParamVector,
    radius: f64,
    shape: &'a CovarianceState,
}

impl<'a> ConfidenceBall<'a> {
    pub fn new(center: ParamVector, radius: f64, shape: &'a CovarianceState) -> Result<Self> {
        check_dim("ball centre", shape.dim(), center.len())?;
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        Ok(Self {
            center,
            radius,
            shape,
        })
    }

    pub fn center(&self) -> &ParamVector {
        &self.center
    }

    /// Squared-Mahalanobis radius `beta_t`.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn shape(&self) -> &'a CovarianceState {
        self.shape
    }

    /// `||w - center||^2_Sigma`.
    pub fn quad_form(&self, w: &[f64]) -> Result<f64> {
        self.shape.mahalanobis_sq(w, &self.center)
    }

    pub fn contains(&self, w: &[f64]) -> Result<bool> {
        Ok(self.quad_form(w)? <= self.radius)
    }
}

/// Logarithmic factor of the radius schedule as a function of the round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogFactor {
    Unit,
    Constant(f64),
    /// `ln(1 + t C_g^2 / (d_w lambda)) + ln(1 / delta)`.
    Elliptical {
        c_g: f64,
        lambda: f64,
        delta: f64,
    },
}

impl LogFactor {
    fn validate(&self) -> Result<()> {
        match *self {
            LogFactor::Unit => Ok(()),
            LogFactor::Constant(c) if c > 0.0 && c.is_finite() => Ok(()),
            LogFactor::Elliptical { c_g, lambda, delta }
                if c_g > 0.0 && lambda > 0.0 && delta > 0.0 && delta < 1.0 =>
            {
                Ok(())
            }
            other => Err(Error::invalid(format!("invalid log factor {other:?}"))),
        }
    }

    pub fn value(&self, t: usize, d_w: usize) -> f64 {
        match *self {
            LogFactor::Unit => 1.0,
            LogFactor::Constant(c) => c,
            LogFactor::Elliptical { c_g, lambda, delta } => {
                (t as f64 * c_g * c_g / (d_w as f64 * lambda)).ln_1p() + (1.0 / delta).ln()
            }
        }
    }
}

/// Radius schedule
/// `beta_t = c (d_w sigma^2 i' + d_w F^2 i / mu + d_w^3 F^4 t i'' i^2 / (mu^2 T))`.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaSchedule {
    pub scale: f64,
    pub sigma_noise: f64,
    pub f_bound: f64,
    pub mu: f64,
    pub d_w: usize,
    pub horizon: usize,
    /// `(i, i', i'')`.
    pub log_factors: [LogFactor; 3],
}

impl BetaSchedule {
    pub fn new(
        scale: f64,
        sigma_noise: f64,
        geometry: &GeometryConstants,
        d_w: usize,
        horizon: usize,
    ) -> Result<Self> {
        let s = Self {
            scale,
            sigma_noise,
            f_bound: geometry.f_bound,
            mu: geometry.mu,
            d_w,
            horizon,
            log_factors: [LogFactor::Unit; 3],
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_log_factors(mut self, factors: [LogFactor; 3]) -> Result<Self> {
        self.log_factors = factors;
        self.validate()?;
        Ok(self)
    }

    pub fn with_scale(&self, scale: f64) -> Result<Self> {
        let s = Self {
            scale,
            ..self.clone()
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::invalid("beta scale must be positive"));
        }
        if !(self.sigma_noise >= 0.0) || !(self.f_bound > 0.0) || !(self.mu > 0.0) {
            return Err(Error::invalid(
                "beta schedule needs sigma >= 0, F > 0 and mu > 0",
            ));
        }
        if self.d_w == 0 || self.horizon == 0 {
            return Err(Error::invalid("beta schedule needs d_w >= 1 and T >= 1"));
        }
        self.log_factors.iter().try_for_each(LogFactor::validate)
    }

    /// `beta_t` for `1 <= t <= T`.
    pub fn beta(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.horizon {
            return Err(Error::invalid(format!(
                "round {t} outside 1..={}",
                self.horizon
            )));
        }
        let d = self.d_w as f64;
        let [iota, iota1, iota2] = self.log_factors.map(|f| f.value(t, self.d_w));
        let f2 = self.f_bound * self.f_bound;
        let noise = d * self.sigma_noise * self.sigma_noise * iota1;
        let bias = d * f2 * iota / self.mu;
        let drift = d.powi(3) * f2 * f2 * t as f64 * iota2 * iota * iota
            / (self.mu * self.mu * self.horizon as f64);
        Ok(self.scale * (noise + bias + drift))
    }
}

/// Geometric constants of the surrogate class. They feed the radius schedule and diagnostics
/// only.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryConstants {
    pub c_g: f64,
    pub c_h: f64,
    pub f_bound: f64,
    pub mu: f64,
    pub tau: f64,
    pub gamma: f64,
    pub zeta: f64,
}

impl Default for GeometryConstants {
    fn default() -> Self {
        Self {
            c_g: 1.0,
            c_h: 1.0,
            f_bound: 1.0,
            mu: 1.0,
            tau: 1.0,
            gamma: 1.0,
            zeta: 1.0,
        }
    }
}

impl GeometryConstants {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.c_g,
            self.c_h,
            self.f_bound,
            self.mu,
            self.tau,
            self.gamma,
            self.zeta,
        ];
        if all.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid(
                "geometry constants must be positive and finite",
            ));
        }
        if self.gamma > 2.0 {
            return Err(Error::invalid("gamma must lie in (0, 2]"));
        }
        Ok(())
    }
}

/// Checks of the determinant identity, the log-determinant bound and the elliptical-potential
/// bound on a covariance state and its history.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub rounds: usize,
    /// `d_w ln lambda + sum ln(1 + u_i^2)`.
    pub product_log_det: f64,
    /// Cholesky log-determinant of `Sigma_t`.
    pub dense_log_det: f64,
    /// `|dense - product| / max(|dense|, 1)`.
    pub det_identity_gap: f64,
    /// `|maintained - product| / max(|product|, 1)`.
    pub maintained_gap: f64,
    /// `d_w ln(1 + t C_g^2 / (d_w lambda))`.
    pub log_det_bound: f64,
    pub log_det_bound_holds: bool,
    /// `sum_i g_i^T Sigma_t^{-1} g_i`.
    pub sum_of_squares: f64,
    pub sum_of_squares_bound: f64,
    pub sum_of_squares_holds: bool,
    pub max_grad_norm: f64,
    /// The configured `C_g` is smaller than an observed gradient norm.
    pub c_g_stale: bool,
}

pub fn bound_diagnostics(
    state: &CovarianceState,
    history: &[ObservationRecord],
    c_g: f64,
) -> Result<BoundReport> {
    if history.len() != state.rounds() {
        return Err(Error::State(format!(
            "history has {} records but covariance absorbed {} updates",
            history.len(),
            state.rounds()
        )));
    }
    let d = state.dim() as f64;
    let lambda = state.lambda();
    let t = state.rounds() as f64;
    let product_log_det =
        d * lambda.ln() + state.u_sq_history().iter().map(|u| u.ln_1p()).sum::<f64>();
    let chol = state.sigma().clone().cholesky().ok_or_else(|| {
        Error::numerical(
            "Cholesky factorization of the covariance",
            Some(state.rounds()),
        )
    })?;
    let dense_log_det = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>();
    let det_identity_gap = (dense_log_det - product_log_det).abs() / dense_log_det.abs().max(1.0);
    let maintained_gap = (state.log_det() - product_log_det).abs() / product_log_det.abs().max(1.0);

    let log_det_bound = d * (t * c_g * c_g / (d * lambda)).ln_1p();
    let log_ratio = dense_log_det - d * lambda.ln();
    let slack = 1e-9 * log_det_bound.abs().max(1.0);
    let log_det_bound_holds = log_ratio <= log_det_bound + slack;

    let mut sum_of_squares = 0.0;
    let mut max_grad_norm = 0.0f64;
    for rec in history {
        let g = DVector::from_column_slice(&rec.g);
        max_grad_norm = max_grad_norm.max(g.norm());
        sum_of_squares += g.dot(&chol.solve(&g));
    }
    let sum_of_squares_bound = 2.0 * log_det_bound;
    let sum_of_squares_holds = sum_of_squares <= sum_of_squares_bound + slack;

    Ok(BoundReport {
        rounds: state.rounds(),
        product_log_det,
        dense_log_det,
        det_identity_gap,
        maintained_gap,
        log_det_bound,
        log_det_bound_holds,
        sum_of_squares,
        sum_of_squares_bound,
        sum_of_squares_holds,
        max_grad_norm,
        c_g_stale: max_grad_norm > c_g,
    })
}

/// One line of the per-round diagnostic log.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundDiagnostic {
    pub round: usize,
    pub u_sq: f64,
    pub beta: f64,
    pub log_det: f64,
    /// `||w_t - w*||^2_Sigma_t <= beta_t`, when the true parameter is known.
    pub feasible: Option<bool>,
    pub truth_quad_form: Option<f64>,
    /// `2 sqrt(beta_t) u_t + 2 beta_t C_h / lambda`.
    pub regret_bound: f64,
}

pub const DIAGNOSTICS_HEADER: &str =
    "round,u_sq,beta,log_det,feasible,truth_quad_form,regret_bound";

pub fn write_diagnostics_csv<W: Write>(out: &mut W, rows: &[RoundDiagnostic]) -> Result<()> {
    writeln!(out, "{DIAGNOSTICS_HEADER}")?;
    for r in rows {
        let feasible = match r.feasible {
            Some(true) => "1",
            Some(false) => "0",
            None => "",
        };
        let q = r.truth_quad_form.map(|q| q.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.round, r.u_sq, r.beta, r.log_det, feasible, q, r.regret_bound
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-scale..scale)).collect()
    }

    #[test]
    fn init_covariance() {
        let s = CovarianceState::new(3, 2.0).unwrap();
        assert!((s.log_det() - 3.0 * 2f64.ln()).abs() < 1e-15);
        assert_eq!(s.rounds(), 0);
        let s = CovarianceState::new(1, 1.0).unwrap();
        assert_eq!(s.sigma_inv()[(0, 0)], 1.0);
        assert!(CovarianceState::new(2, 0.0).is_err());
        assert!(CovarianceState::new(2, -1.0).is_err());
    }

    #[test]
    fn single_update_by_hand() {
        let mut s = CovarianceState::new(2, 1.0).unwrap();
        let u_sq = s.rank_one_update(&[1.0, 0.0]).unwrap();
        assert_eq!(u_sq, 1.0);
        assert_eq!(
            s.sigma(),
            &DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0])
        );
        assert!((s.log_det() - 2f64.ln()).abs() < 1e-15);
        assert!((s.sigma_inv()[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_update_only_advances_round() {
        let mut s = CovarianceState::new(3, 1.5).unwrap();
        let before = s.clone();
        assert_eq!(s.rank_one_update(&[0.0; 3]).unwrap(), 0.0);
        assert_eq!(s.rounds(), 1);
        assert_eq!(s.sigma(), before.sigma());
        assert_eq!(s.sigma_inv(), before.sigma_inv());
        assert_eq!(s.log_det(), before.log_det());
    }

    #[test]
    fn rejects_bad_gradients() {
        let mut s = CovarianceState::new(2, 1.0).unwrap();
        assert!(s.rank_one_update(&[f64::NAN, 0.0]).is_err());
        assert!(s.rank_one_update(&[1.0]).is_err());
    }

    #[test]
    fn sherman_morrison_tracks_dense_inverse() {
        let mut rng = stream_rng(21, 0);
        let mut s = CovarianceState::new(8, 0.5).unwrap();
        for _ in 0..100 {
            s.rank_one_update(&random_vec(&mut rng, 8, 2.0)).unwrap();
            let dense = s.sigma().clone().try_inverse().unwrap();
            assert!((dense - s.sigma_inv()).amax() <= 1e-6);
            assert!(s.inverse_residual() <= 1e-6);
        }
    }

    #[test]
    fn mahalanobis_cases() {
        let s = CovarianceState::new(2, 1.0).unwrap();
        assert_eq!(s.mahalanobis_sq(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(s.mahalanobis_sq(&[3.0, 4.0], &[0.0, 0.0]).unwrap(), 25.0);

        let mut rng = stream_rng(2, 0);
        let mut s = CovarianceState::new(5, 0.3).unwrap();
        for _ in 0..12 {
            s.rank_one_update(&random_vec(&mut rng, 5, 1.0)).unwrap();
        }
        let a = random_vec(&mut rng, 5, 1.0);
        let b = random_vec(&mut rng, 5, 1.0);
        let mut oracle = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                oracle += (a[i] - b[i]) * s.sigma()[(i, j)] * (a[j] - b[j]);
            }
        }
        let got = s.mahalanobis_sq(&a, &b).unwrap();
        assert!((got - oracle).abs() <= 1e-10 * oracle.abs());
    }

    #[test]
    fn empty_history_returns_initial_estimate() {
        let w0 = ParamVector::new(vec![0.25, -1.5, 3.0]).unwrap();
        let s = CovarianceState::new(3, 4.0).unwrap();
        let w = solve_w_hat(&[], &s, &w0).unwrap();
        assert_eq!(w, w0);
        let e = UcbEngine::new(w0.clone(), 4.0).unwrap();
        assert_eq!(e.solve_cached().unwrap(), w0);
    }

    #[test]
    fn one_record_by_hand() {
        let w0 = ParamVector::new(vec![0.0]).unwrap();
        let mut e = UcbEngine::new(w0.clone(), 1.0).unwrap();
        e.absorb(ObservationRecord {
            x: vec![0.0],
            y: 2.0,
            w: w0,
            g: vec![1.0],
            f: 0.0,
        })
        .unwrap();
        assert!((e.center()[0] - 1.0).abs() < 1e-15);
        assert!((e.solve_full().unwrap()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn history_state_mismatch_is_state_error() {
        let w0 = ParamVector::new(vec![0.0]).unwrap();
        let mut s = CovarianceState::new(1, 1.0).unwrap();
        s.rank_one_update(&[1.0]).unwrap();
        assert!(matches!(solve_w_hat(&[], &s, &w0), Err(Error::State(_))));
        assert!(matches!(
            bound_diagnostics(&s, &[], 1.0),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn beta_by_substitution() {
        let geo = GeometryConstants::default();
        let s = BetaSchedule::new(1.0, 1.0, &geo, 2, 10).unwrap();
        assert!((s.beta(10).unwrap() - 12.0).abs() < 1e-12);
        assert!(s.beta(3).unwrap() <= s.beta(4).unwrap());
        assert!(s.beta(0).is_err());
        assert!(s.beta(11).is_err());
        assert!(BetaSchedule::new(0.0, 1.0, &geo, 2, 10).is_err());
    }

    #[test]
    fn elliptical_log_factors_keep_monotonicity() {
        let geo = GeometryConstants::default();
        let f = LogFactor::Elliptical {
            c_g: 3.0,
            lambda: 2.0,
            delta: 0.05,
        };
        let s = BetaSchedule::new(0.5, 0.1, &geo, 4, 50)
            .unwrap()
            .with_log_factors([f; 3])
            .unwrap();
        for t in 1..50 {
            assert!(s.beta(t).unwrap() <= s.beta(t + 1).unwrap());
            assert!(s.beta(t).unwrap() > 0.0);
        }
        assert!(BetaSchedule::new(0.5, 0.1, &geo, 4, 50)
            .unwrap()
            .with_log_factors([LogFactor::Constant(-1.0); 3])
            .is_err());
    }

    #[test]
    fn geometry_constants_validated() {
        assert!(GeometryConstants::default().validate().is_ok());
        let bad = GeometryConstants {
            gamma: 2.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = GeometryConstants {
            mu: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn diagnostics_at_t0_are_vacuous() {
        let s = CovarianceState::new(4, 2.0).unwrap();
        let r = bound_diagnostics(&s, &[], 1.0).unwrap();
        assert!(r.det_identity_gap <= 1e-15);
        assert_eq!(r.maintained_gap, 0.0);
        assert!(r.log_det_bound_holds && r.sum_of_squares_holds);
    }

    #[test]
    fn stale_gradient_bound_is_flagged() {
        let w0 = ParamVector::filled(2, 0.0);
        let mut e = UcbEngine::new(w0.clone(), 1.0).unwrap();
        for _ in 0..3 {
            e.absorb(ObservationRecord {
                x: vec![],
                y: 0.0,
                w: w0.clone(),
                g: vec![1e3, 0.0],
                f: 0.0,
            })
            .unwrap();
        }
        let r = bound_diagnostics(e.state(), e.history(), 1.0).unwrap();
        assert!(r.c_g_stale);
        assert!(!r.log_det_bound_holds);
    }

    #[test]
    fn ball_membership_uses_quadratic_form() {
        let s = CovarianceState::new(2, 1.0).unwrap();
        let ball = ConfidenceBall::new(ParamVector::filled(2, 0.0), 25.0, &s).unwrap();
        assert!(ball.contains(&[3.0, 4.0]).unwrap());
        assert!(!ball.contains(&[3.0, 4.001]).unwrap());
        assert!(ConfidenceBall::new(ParamVector::filled(2, 0.0), 0.0, &s).is_err());
    }

    #[test]
    fn diagnostics_csv_layout() {
        let mut buf = Vec::new();
        write_diagnostics_csv(
            &mut buf,
            &[RoundDiagnostic {
                round: 1,
                u_sq: 0.5,
                beta: 2.0,
                log_det: 1.25,
                feasible: Some(true),
                truth_quad_form: Some(0.75),
                regret_bound: 3.0,
            }],
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            format!("{DIAGNOSTICS_HEADER}\n1,0.5,2,1.25,1,0.75,3\n")
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn updates_keep_identity_and_positive_definiteness(
            d in 1usize..9,
            count in 0usize..150,
            lambda in 0.05f64..5.0,
            seed in any::<u64>(),
        ) {
            let mut rng = stream_rng(seed, 0);
            let mut s = CovarianceState::new(d, lambda).unwrap();
            for _ in 0..count {
                let u_sq = s.rank_one_update(&random_vec(&mut rng, d, 2.0)).unwrap();
                prop_assert!(u_sq >= 0.0);
            }
            let product = d as f64 * lambda.ln()
                + s.u_sq_history().iter().map(|u| u.ln_1p()).sum::<f64>();
            prop_assert!((s.log_det() - product).abs() <= 1e-8 * s.log_det().abs() + 1e-12);
            prop_assert!(s.inverse_residual() <= 1e-6);
            prop_assert!(s.sigma().clone().cholesky().is_some());
        }

        #[test]
        fn beta_is_non_decreasing(
            scale in 0.01f64..10.0,
            sigma in 0.0f64..2.0,
            f_bound in 0.1f64..10.0,
            mu in 0.1f64..10.0,
            d_w in 1usize..80,
            horizon in 1usize..500,
        ) {
            let geo = GeometryConstants { f_bound, mu, ..GeometryConstants::default() };
            let sched = BetaSchedule::new(scale, sigma, &geo, d_w, horizon).unwrap();
            let mut prev = 0.0;
            for t in 1..=horizon {
                let b = sched.beta(t).unwrap();
                prop_assert!(b > 0.0 && b >= prev);
                prev = b;
            }
        }
    }
}
