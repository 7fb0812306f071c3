//! End-to-end runs of the optimizer and the baselines, repetition suites and CSV output.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::acquisition::{select_point, AcquisitionConfig};
use crate::domain::{child_seed, ParamVector, Stream};
use crate::engine::{
    bound_diagnostics, write_diagnostics_csv, BetaSchedule, BoundReport, GeometryConstants,
    ObservationRecord, RoundDiagnostic, UcbEngine,
};
use crate::error::{Error, Result};
use crate::gp::{gp_select, GpAcquisition, GpConfig};
use crate::model::{SigmoidNet, SurrogateFamily};
use crate::objectives::{select_output, NoisyOracle, Objective, Phase, RegretTrace};
use crate::phase1::{fit_detailed, sample_uniform, Dataset, Phase1Config};

/// Environment variable holding the number of worker threads for suites.
pub const WORKERS_ENV: &str = "GOUCB_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    GoUcb,
    GpUcb,
    GpEi,
    GpPi,
    Random,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::GoUcb => "go-ucb",
            Method::GpUcb => "gp-ucb",
            Method::GpEi => "gp-ei",
            Method::GpPi => "gp-pi",
            Method::Random => "random",
        }
    }

    fn index(self) -> u64 {
        match self {
            Method::GoUcb => 0,
            Method::GpUcb => 1,
            Method::GpEi => 2,
            Method::GpPi => 3,
            Method::Random => 4,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "go-ucb" => Ok(Method::GoUcb),
            "gp-ucb" => Ok(Method::GpUcb),
            "gp-ei" => Ok(Method::GpEi),
            "gp-pi" => Ok(Method::GpPi),
            "random" => Ok(Method::Random),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub objective: String,
    pub dim: usize,
    pub horizon: usize,
    /// Phase-I length; `None` means `floor(sqrt(T))`.
    pub n: Option<usize>,
    /// `lambda = lambda_scale * sqrt(T)`.
    pub lambda_scale: f64,
    pub beta_scale: f64,
    pub sigma: f64,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    pub hidden: usize,
    pub phase1: Phase1Config,
    pub acquisition: AcquisitionConfig,
    pub geometry: GeometryConstants,
    pub clamp_center: bool,
    pub gp: GpConfig,
    pub write_diagnostics: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::GoUcb,
            objective: "f1".into(),
            dim: 10,
            horizon: 400,
            n: None,
            lambda_scale: 1.0,
            beta_scale: 1.0,
            sigma: 0.1,
            seeds: vec![1, 2, 3, 4, 5],
            out: None,
            hidden: SigmoidNet::DEFAULT_HIDDEN,
            phase1: Phase1Config::default(),
            acquisition: AcquisitionConfig::default(),
            geometry: GeometryConstants::default(),
            clamp_center: false,
            gp: GpConfig::default(),
            write_diagnostics: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("T must be at least 1".into()));
        }
        if self.n == Some(0) {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.dim == 0 || self.hidden == 0 {
            return Err(Error::Config("dim and hidden must be at least 1".into()));
        }
        if !(self.lambda_scale > 0.0) || !(self.beta_scale > 0.0) || !(self.sigma >= 0.0) {
            return Err(Error::Config(
                "lambda_scale and beta_scale must be positive, sigma non-negative".into(),
            ));
        }
        self.phase1.validate()?;
        self.acquisition.validate()?;
        self.geometry.validate()?;
        self.gp.validate()
    }

    pub fn phase1_len(&self) -> usize {
        self.n
            .unwrap_or_else(|| (self.horizon as f64).sqrt().floor() as usize)
            .max(1)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda_scale * (self.horizon as f64).sqrt()
    }

    pub fn objective(&self) -> Result<Objective> {
        Objective::by_name(&self.objective, self.dim)
    }

    pub fn surrogate(&self) -> Result<SigmoidNet> {
        SigmoidNet::new(self.dim, self.hidden)
    }

    pub fn beta_schedule(&self, d_w: usize) -> Result<BetaSchedule> {
        BetaSchedule::new(
            self.beta_scale,
            self.sigma,
            &self.geometry,
            d_w,
            self.horizon,
        )
    }
}

/// Everything produced by one run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub trace: RegretTrace,
    /// All queries `(x, y)` in order, Phase I first.
    pub observations: Vec<(Vec<f64>, f64)>,
    /// Output rule applied to the optimistic phase (all rounds for baselines).
    pub x_hat: Vec<f64>,
    pub phase1_len: usize,
    pub initial_estimate: Option<ParamVector>,
    pub phase1_mse: Option<f64>,
    pub rounds: Vec<RoundDiagnostic>,
    pub bounds: Option<BoundReport>,
}

impl RunOutcome {
    /// Fraction of optimistic rounds whose ball contained the true parameter, if known.
    pub fn feasibility_rate(&self) -> Option<f64> {
        let flags: Vec<bool> = self.rounds.iter().filter_map(|r| r.feasible).collect();
        if flags.is_empty() {
            None
        } else {
            Some(flags.iter().filter(|f| **f).count() as f64 / flags.len() as f64)
        }
    }
}

fn stream_seed(seed: u64, method: Method, stream: Stream) -> u64 {
    child_seed(seed, method.index() * 16 + stream as u64)
}

pub fn run_one(cfg: &RunConfig, seed: u64) -> Result<RunOutcome> {
    let objective = cfg.objective()?;
    run_with_objective(cfg, &objective, seed)
}

/// Runs `cfg.method` on an explicit objective (built-in or user-registered).
pub fn run_with_objective(cfg: &RunConfig, objective: &Objective, seed: u64) -> Result<RunOutcome> {
    cfg.validate()?;
    if objective.domain().dim() != cfg.dim {
        return Err(Error::Config(format!(
            "objective {} has dimension {}, config says {}",
            objective.name(),
            objective.domain().dim(),
            cfg.dim
        )));
    }
    let mut trace = RegretTrace::for_objective(objective)?;
    let mut oracle = NoisyOracle::new(
        objective.clone(),
        cfg.sigma,
        stream_seed(seed, cfg.method, Stream::Noise),
        Stream::Noise as u64,
    )?;
    let n = cfg.phase1_len();
    let domain = objective.domain();

    // Phase I, shared by every method: uniform queries.
    let xs = sample_uniform(domain, n, stream_seed(seed, cfg.method, Stream::Sampling))?;
    let mut observations = Vec::with_capacity(n + cfg.horizon);
    for (j, x) in xs.into_iter().enumerate() {
        let y = oracle.observe(&x).map_err(|e| e.at_round(j + 1))?;
        trace.record(objective.eval_in_domain(&x), Phase::Exploration)?;
        observations.push((x, y));
    }

    let mut outcome = RunOutcome {
        seed,
        trace,
        observations,
        x_hat: Vec::new(),
        phase1_len: n,
        initial_estimate: None,
        phase1_mse: None,
        rounds: Vec::new(),
        bounds: None,
    };
    match cfg.method {
        Method::GoUcb => optimistic_phase(cfg, objective, &mut oracle, &mut outcome, seed)?,
        Method::GpUcb | Method::GpEi | Method::GpPi => {
            gp_phase(cfg, objective, &mut oracle, &mut outcome, seed)?
        }
        Method::Random => random_phase(cfg, objective, &mut oracle, &mut outcome, seed)?,
    }
    let tail = match cfg.method {
        Method::GoUcb => &outcome.observations[n..],
        _ => &outcome.observations[..],
    };
    let best = select_output(tail)?;
    outcome.x_hat = tail[best].0.clone();
    Ok(outcome)
}

fn optimistic_phase(
    cfg: &RunConfig,
    objective: &Objective,
    oracle: &mut NoisyOracle,
    out: &mut RunOutcome,
    seed: u64,
) -> Result<()> {
    let model = cfg.surrogate()?;
    let domain = objective.domain();
    let d_w = model.param_dim();
    let data = Dataset::new(
        out.observations.iter().map(|(x, _)| x.clone()).collect(),
        out.observations.iter().map(|(_, y)| *y).collect(),
    )?;
    let fit = fit_detailed(
        &model,
        &data,
        &cfg.phase1,
        stream_seed(seed, cfg.method, Stream::Fit),
    )?;
    let truth = objective
        .realizing_params()
        .filter(|(h, w)| *h == cfg.hidden && w.len() == d_w)
        .map(|(_, w)| w.to_vec());

    let lambda = cfg.lambda();
    let mut engine = UcbEngine::new(fit.params.clone(), lambda)?;
    if cfg.clamp_center {
        engine = engine.with_clamp(model.param_box().clone());
    }
    let schedule = cfg.beta_schedule(d_w)?;
    let acq_seed = stream_seed(seed, cfg.method, Stream::Acquisition);
    let mut grad = vec![0.0; d_w];

    for t in 1..=cfg.horizon {
        let round = out.phase1_len + t;
        let beta = schedule.beta(t)?;
        let ball = engine.ball(beta).map_err(|e| e.at_round(round))?;
        let truth_q = match &truth {
            Some(w) => Some(ball.quad_form(w)?),
            None => None,
        };
        let sel = select_point(
            &model,
            &ball,
            domain,
            &cfg.acquisition,
            child_seed(acq_seed, t as u64),
        )
        .map_err(|e| e.at_round(round))?;
        let y = oracle.observe(&sel.x).map_err(|e| e.at_round(round))?;
        out.trace
            .record(objective.eval_in_domain(&sel.x), Phase::Optimistic)
            .map_err(|e| e.at_round(round))?;

        let center = engine.center().clone();
        let f = model.value_grad_into(&center, &sel.x, &mut grad);
        let u_sq = engine
            .absorb(ObservationRecord {
                x: sel.x.clone(),
                y,
                w: center,
                g: grad.clone(),
                f,
            })
            .map_err(|e| e.at_round(round))?;
        out.rounds.push(RoundDiagnostic {
            round: t,
            u_sq,
            beta,
            log_det: engine.state().log_det(),
            feasible: truth_q.map(|q| q <= beta),
            truth_quad_form: truth_q,
            regret_bound: 2.0 * beta.sqrt() * u_sq.sqrt() + 2.0 * beta * cfg.geometry.c_h / lambda,
        });
        out.observations.push((sel.x, y));
    }

    let max_norm = engine
        .history()
        .iter()
        .map(|r| r.g.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    out.bounds = Some(bound_diagnostics(
        engine.state(),
        engine.history(),
        max_norm.max(f64::MIN_POSITIVE),
    )?);
    out.initial_estimate = Some(fit.params);
    out.phase1_mse = Some(fit.train_mse);
    Ok(())
}

fn gp_phase(
    cfg: &RunConfig,
    objective: &Objective,
    oracle: &mut NoisyOracle,
    out: &mut RunOutcome,
    seed: u64,
) -> Result<()> {
    let mut gp = cfg.gp.clone();
    gp.acquisition = match cfg.method {
        Method::GpEi => GpAcquisition::Ei,
        Method::GpPi => GpAcquisition::Pi,
        _ => GpAcquisition::Ucb,
    };
    gp.normalize_y = true;
    gp.noise_variance = (cfg.sigma * cfg.sigma).max(gp.noise_variance);
    let domain = objective.domain();
    let mut data = Dataset::new(
        out.observations.iter().map(|(x, _)| x.clone()).collect(),
        out.observations.iter().map(|(_, y)| *y).collect(),
    )?;
    let acq_seed = stream_seed(seed, cfg.method, Stream::Acquisition);
    for t in 1..=cfg.horizon {
        let round = out.phase1_len + t;
        let x = gp_select(&data, &gp, domain, child_seed(acq_seed, t as u64))
            .map_err(|e| e.at_round(round))?;
        let y = oracle.observe(&x).map_err(|e| e.at_round(round))?;
        out.trace
            .record(objective.eval_in_domain(&x), Phase::Optimistic)
            .map_err(|e| e.at_round(round))?;
        data.push(x.clone(), y)?;
        out.observations.push((x, y));
    }
    Ok(())
}

fn random_phase(
    cfg: &RunConfig,
    objective: &Objective,
    oracle: &mut NoisyOracle,
    out: &mut RunOutcome,
    seed: u64,
) -> Result<()> {
    let xs = sample_uniform(
        objective.domain(),
        cfg.horizon,
        stream_seed(seed, cfg.method, Stream::Acquisition),
    )?;
    for (t, x) in xs.into_iter().enumerate() {
        let round = out.phase1_len + t + 1;
        let y = oracle.observe(&x).map_err(|e| e.at_round(round))?;
        out.trace
            .record(objective.eval_in_domain(&x), Phase::Optimistic)
            .map_err(|e| e.at_round(round))?;
        out.observations.push((x, y));
    }
    Ok(())
}

/// Aggregate over repetitions.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub method: Method,
    pub objective: String,
    pub seeds: Vec<u64>,
    pub phase1_len: usize,
    /// Mean cumulative regret per round.
    pub mean: Vec<f64>,
    /// Wald half-width `1.96 sd / sqrt(k)` per round.
    pub half_width: Vec<f64>,
    pub outcomes: Vec<RunOutcome>,
    pub wall_seconds: f64,
}

impl RunSummary {
    pub fn final_mean(&self) -> f64 {
        self.mean.last().copied().unwrap_or(0.0)
    }

    pub fn final_half_width(&self) -> f64 {
        self.half_width.last().copied().unwrap_or(0.0)
    }

    /// Mean regret accumulated in the optimistic phase only.
    pub fn phase2_mean(&self) -> f64 {
        let base = if self.phase1_len > 0 {
            self.mean[self.phase1_len - 1]
        } else {
            0.0
        };
        self.final_mean() - base
    }
}

/// Mean and Wald half-width (sample standard deviation, `0` for a single value).
pub fn wald_interval(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, 1.96 * var.sqrt() / k.sqrt())
}

pub fn aggregate(cfg: &RunConfig, outcomes: Vec<RunOutcome>, wall_seconds: f64) -> RunSummary {
    let rounds = outcomes.iter().map(|o| o.trace.len()).min().unwrap_or(0);
    let (mean, half_width) = (0..rounds)
        .map(|t| {
            let vals: Vec<f64> = outcomes.iter().map(|o| o.trace.cumulative()[t]).collect();
            wald_interval(&vals)
        })
        .unzip();
    RunSummary {
        method: cfg.method,
        objective: cfg.objective.clone(),
        seeds: cfg.seeds.clone(),
        phase1_len: cfg.phase1_len(),
        mean,
        half_width,
        outcomes,
        wall_seconds,
    }
}

fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("{WORKERS_ENV} must be a positive integer")))?;
        builder = builder.num_threads(n.max(1));
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Runs every seed of `cfg` on `objective` in parallel; results are ordered by seed index.
pub fn run_seeds(cfg: &RunConfig, objective: &Objective) -> Result<Vec<RunOutcome>> {
    cfg.validate()?;
    let pool = worker_pool()?;
    pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                run_with_objective(cfg, objective, seed).map_err(|e| Error::Seed {
                    seed,
                    source: Box::new(e),
                })
            })
            .collect()
    })
}

/// Runs all seeds, aggregates them and writes CSV files when `cfg.out` is set.
pub fn run_suite(cfg: &RunConfig) -> Result<RunSummary> {
    let objective = cfg.objective()?;
    run_suite_with_objective(cfg, &objective)
}

pub fn run_suite_with_objective(cfg: &RunConfig, objective: &Objective) -> Result<RunSummary> {
    let start = Instant::now();
    let outcomes = run_seeds(cfg, objective)?;
    let summary = aggregate(cfg, outcomes, start.elapsed().as_secs_f64());
    if let Some(dir) = &cfg.out {
        write_suite(dir, cfg, &summary)?;
    }
    Ok(summary)
}

pub fn file_stem(cfg: &RunConfig) -> String {
    format!("{}_{}", cfg.method.name(), cfg.objective)
}

/// Writes `<stem>.csv` (per-round curve), `<stem>_summary.csv` and, if requested,
/// per-seed diagnostic logs.
pub fn write_suite(dir: &Path, cfg: &RunConfig, summary: &RunSummary) -> Result<()> {
    fs::create_dir_all(dir)?;
    let stem = file_stem(cfg);
    let mut curve = BufWriter::new(fs::File::create(dir.join(format!("{stem}.csv")))?);
    write_curve_csv(&mut curve, summary)?;
    curve.flush()?;

    let mut line = BufWriter::new(fs::File::create(dir.join(format!("{stem}_summary.csv")))?);
    write_summary_csv(&mut line, cfg, summary)?;
    line.flush()?;

    if cfg.write_diagnostics {
        for o in summary.outcomes.iter().filter(|o| !o.rounds.is_empty()) {
            let path = dir.join(format!("{stem}_seed{}_diagnostics.csv", o.seed));
            let mut w = BufWriter::new(fs::File::create(path)?);
            write_diagnostics_csv(&mut w, &o.rounds)?;
            w.flush()?;
        }
    }
    Ok(())
}

pub fn write_curve_csv<W: Write>(out: &mut W, summary: &RunSummary) -> Result<()> {
    write!(out, "round,mean_R,halfwidth")?;
    for s in &summary.seeds {
        write!(out, ",R_seed{s}")?;
    }
    writeln!(out)?;
    for t in 0..summary.mean.len() {
        write!(
            out,
            "{},{},{}",
            t + 1,
            summary.mean[t],
            summary.half_width[t]
        )?;
        for o in &summary.outcomes {
            write!(out, ",{}", o.trace.cumulative()[t])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub const SUMMARY_HEADER: &str =
    "method,objective,dim,T,n,seeds,final_mean_R,final_halfwidth,phase2_mean_R";

pub fn write_summary_csv<W: Write>(
    out: &mut W,
    cfg: &RunConfig,
    summary: &RunSummary,
) -> Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    let seeds: Vec<String> = summary.seeds.iter().map(u64::to_string).collect();
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{}",
        cfg.method.name(),
        cfg.objective,
        cfg.dim,
        cfg.horizon,
        summary.phase1_len,
        seeds.join(" "),
        summary.final_mean(),
        summary.final_half_width(),
        summary.phase2_mean()
    )?;
    Ok(())
}

/// Least-squares slope of `ln R_t` against `ln t` over rounds `from..=to` (1-based, rounds with
/// `R_t > 0` only).
pub fn loglog_slope(cumulative: &[f64], from: usize, to: usize) -> Option<f64> {
    let pts: Vec<(f64, f64)> = (from..=to.min(cumulative.len()))
        .filter(|&t| t >= 1 && cumulative[t - 1] > 0.0)
        .map(|t| ((t as f64).ln(), cumulative[t - 1].ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

/// Result of [`calibrate_beta_scale`].
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub scale: f64,
    /// Feasibility rate on the calibration seeds at `scale`.
    pub coverage: f64,
    pub iterations: usize,
}

/// Chooses the radius scale on a realizable objective (true parameters known) so that
/// `||w_t - w*||^2_Sigma_t <= beta_t` holds in at least `target` of the optimistic rounds of the
/// calibration seeds `cfg.seeds`.
///
/// The ball shape influences the queries, so the scale is found by fixed-point iteration:
/// each pass sets the scale to `margin` times the `quantile`-quantile of the required scales
/// observed at the current one, then only increases it until the target is met.
pub fn calibrate_beta_scale(
    cfg: &RunConfig,
    objective: &Objective,
    target: f64,
    quantile: f64,
    margin: f64,
) -> Result<Calibration> {
    if objective.realizing_params().is_none() {
        return Err(Error::Config(
            "beta calibration needs an objective with known true parameters".into(),
        ));
    }
    if !(0.0..=1.0).contains(&target) || !(0.0..=1.0).contains(&quantile) || !(margin >= 1.0) {
        return Err(Error::invalid(
            "calibration needs target, quantile in [0, 1] and margin >= 1",
        ));
    }
    let mut cfg = cfg.clone();
    cfg.method = Method::GoUcb;
    let mut scale = cfg.beta_scale;
    for iteration in 1..=12 {
        cfg.beta_scale = scale;
        let outcomes = run_seeds(&cfg, objective)?;
        let mut ratios: Vec<f64> = outcomes
            .iter()
            .flat_map(|o| o.rounds.iter())
            .filter_map(|r| r.truth_quad_form.map(|q| q / r.beta))
            .collect();
        if ratios.is_empty() {
            return Err(Error::State(
                "calibration runs produced no feasibility data".into(),
            ));
        }
        let coverage = ratios.iter().filter(|r| **r <= 1.0).count() as f64 / ratios.len() as f64;
        ratios.sort_by(f64::total_cmp);
        let idx = ((quantile * ratios.len() as f64).ceil() as usize).clamp(1, ratios.len()) - 1;
        let needed = scale * ratios[idx] * margin;
        if iteration > 1 && coverage >= target {
            return Ok(Calibration {
                scale,
                coverage,
                iterations: iteration,
            });
        }
        scale = if iteration == 1 {
            needed
        } else {
            needed.max(scale * 1.25)
        };
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::numerical(
                "beta calibration produced an invalid scale",
                None,
            ));
        }
    }
    Err(Error::State(
        "beta calibration did not converge in 12 passes".into(),
    ))
}

/// A realizable task: the sigmoid surrogate with all parameters equal to one, on `[-5, 5]^dim`.
pub fn realizable_objective(dim: usize) -> Result<Objective> {
    Objective::f1(dim)
}
