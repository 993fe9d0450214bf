//! Monte Carlo engine for prediction risks and LAN diagnostics.
//!
//! For each horizon `T` in a grid, paths are simulated exactly, the drift
//! is estimated on the full path and on the sub-path `[0, S]`, and the
//! per-replication losses are aggregated into:
//!
//! * the estimation risk `T * rho_T` of the plug-in forecast map, with the
//!   stationary law integrated out analytically,
//! * the prediction risk `T * R_T` at the same path's terminal state,
//!   preserving the estimator/terminal-state dependence,
//! * both auxiliary variants using the sub-path estimate,
//! * the normalized estimator covariance `T * E (theta_hat - theta)^x2`,
//! * score drift, estimator-gap, and score-normality diagnostics.
//!
//! Replications run in parallel; every reduction walks the results in
//! replication-index order, so reports are bit-identical for a given
//! `(config, master_seed)` regardless of worker-thread count.

use crate::error::{Error, Result};
use crate::estimate::{
    decoupled_from_stats, mle_newton, score_increment_sum, s_rule_t_minus_sqrt_t, SufficientStats,
    NEWTON_MAX_ITER, NEWTON_TOL,
};
use crate::model::{efficiency_bound, fisher_info, Horizon, Mat2, Theta, Vec2};
use crate::simulate::{simulate_exact, snap_to_node, PathGrid, RngStream};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::str::FromStr;

/// Point estimator used inside the Monte Carlo loops. `Oracle` substitutes
/// the true parameter (zero loss by construction) and exists for tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Newton,
    Decoupled,
    Oracle,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Newton => "newton",
            Estimator::Decoupled => "decoupled",
            Estimator::Oracle => "oracle",
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "newton" => Ok(Estimator::Newton),
            "decoupled" => Ok(Estimator::Decoupled),
            "oracle" => Ok(Estimator::Oracle),
            other => Err(Error::Config(format!(
                "unknown estimator '{other}' (expected newton, decoupled or oracle)"
            ))),
        }
    }
}

/// Rule fixing the auxiliary horizon `S` from `T` (before grid snapping).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SRule {
    /// `S = T - sqrt(T)`, the default.
    TMinusSqrtT,
    /// `S = T`; auxiliary quantities collapse onto the full-path ones.
    Identity,
}

impl SRule {
    pub fn s_of(self, t: f64) -> f64 {
        match self {
            SRule::TMinusSqrtT => s_rule_t_minus_sqrt_t(t),
            SRule::Identity => t,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SRule::TMinusSqrtT => "t_minus_sqrt_t",
            SRule::Identity => "identity",
        }
    }
}

impl FromStr for SRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t_minus_sqrt_t" => Ok(SRule::TMinusSqrtT),
            "identity" => Ok(SRule::Identity),
            other => Err(Error::Config(format!(
                "unknown s_rule '{other}' (expected t_minus_sqrt_t or identity)"
            ))),
        }
    }
}

/// Full description of a Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub theta: Theta,
    pub h: Horizon,
    pub t_grid: Vec<f64>,
    pub dt: f64,
    pub n_rep: usize,
    pub master_seed: u64,
    pub estimator: Estimator,
    pub s_rule: SRule,
    /// Worker-thread cap for the replication loops; 0 uses the global pool.
    pub threads: usize,
}

impl ExperimentConfig {
    /// The default experiment: `theta=(1,0.5)`, `h=1`, grid
    /// `{25,50,100,200}`, `dt=0.01`, 1000 replications, Newton estimator.
    pub fn default_config() -> Self {
        ExperimentConfig {
            theta: Theta::new(1.0, 0.5).expect("default theta is in-domain"),
            h: Horizon::new(1.0).expect("default horizon is positive"),
            t_grid: vec![25.0, 50.0, 100.0, 200.0],
            dt: 0.01,
            n_rep: 1000,
            master_seed: 1,
            estimator: Estimator::Newton,
            s_rule: SRule::TMinusSqrtT,
            threads: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_grid.is_empty() {
            return Err(Error::Config("T grid must not be empty".into()));
        }
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        for &t in &self.t_grid {
            if !t.is_finite() || t < 10.0 * self.dt {
                return Err(Error::Config(format!(
                    "every horizon must be at least 10*dt = {}, got T={t}",
                    10.0 * self.dt
                )));
            }
            PathGrid::for_horizon(t, self.dt)?;
        }
        if self.n_rep < 2 {
            return Err(Error::Config(format!("n_rep must be at least 2, got {}", self.n_rep)));
        }
        Ok(())
    }
}

/// A matrix-valued Monte Carlo estimate with entrywise standard errors.
/// `n_rep` counts attempted replications; `n_flagged` of them failed
/// estimation (non-convergence or boundary clamp) and were excluded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskEstimate {
    pub matrix: Mat2,
    pub se: Mat2,
    pub n_rep: usize,
    pub n_flagged: usize,
}

/// Everything measured at one horizon from one set of replications.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonBatch {
    /// Effective horizon (an exact grid multiple of `dt`).
    pub t: f64,
    /// Effective auxiliary horizon after snapping `s_rule(T)` down.
    pub s: f64,
    pub n_rep: usize,
    pub n_flagged: usize,
    /// `T * rho_T`: estimation risk of the forecast map.
    pub qer: RiskEstimate,
    /// `T * R_T`: prediction risk at the terminal state.
    pub qep: RiskEstimate,
    /// `T * rho_T^S` with the sub-path estimator.
    pub qer_aux: RiskEstimate,
    /// `T * R_T^S` with the sub-path estimator.
    pub qep_aux: RiskEstimate,
    /// `T * E (theta_hat - theta)^x2`.
    pub mle_var: RiskEstimate,
    /// `T * (per-replication QEP loss - QER loss)`; its standard error is
    /// the right scale for risk-equivalence comparisons on shared paths.
    pub risk_diff: RiskEstimate,
    /// `T * mean ||theta_hat_T - theta_hat_S||^2` and its standard error.
    pub theta_gap: f64,
    pub theta_gap_se: f64,
    /// `mean ||Delta_T - sqrt(T/S) Delta_S||^2`, its standard error, and
    /// the closed-form limit `[(S/T)(T/S-1)^2 + (1-S/T)] trace(Q^-1)`.
    pub drift_mc: f64,
    pub drift_se: f64,
    pub drift_analytic: f64,
    pub score_mean: Vec2,
    pub score_mean_se: Vec2,
    /// Centered empirical covariance of the normalized score `Delta_T`.
    pub score_cov: Mat2,
    pub score_skewness: Vec2,
    pub score_ex_kurtosis: Vec2,
}

struct EstimPart {
    qer: Mat2,
    qep: Mat2,
    qer_aux: Mat2,
    qep_aux: Mat2,
    var_loss: Mat2,
    diff: Mat2,
    gap_sq: f64,
}

struct RepRecord {
    estim: Option<EstimPart>,
    delta: Vec2,
    drift_sq: f64,
}

/// Master seed for the stream family of one `(T, dt)` batch, so batches at
/// different horizons or step sizes draw unrelated randomness under one
/// user-facing seed. Fixed function of the inputs; callers replaying a
/// single replication get the exact batch path back.
pub fn batch_stream_master(master_seed: u64, t: f64, dt: f64) -> u64 {
    RngStream::derive_master(master_seed, t.to_bits() ^ dt.to_bits().rotate_left(17))
}

fn with_pool<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(job());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(job))
}

fn point_estimate(estimator: Estimator, truth: Theta, st: &SufficientStats) -> Option<Theta> {
    match estimator {
        Estimator::Oracle => Some(truth),
        Estimator::Decoupled => match decoupled_from_stats(st) {
            Ok(fit) if !fit.clamped => Some(fit.theta),
            _ => None,
        },
        Estimator::Newton => {
            let init = decoupled_from_stats(st)
                .map(|fit| fit.theta)
                .unwrap_or_else(|_| Theta::new(1.0, 0.0).expect("fallback init is in-domain"));
            mle_newton(st, init, NEWTON_TOL, NEWTON_MAX_ITER).ok().map(|r| r.theta_hat)
        }
    }
}

fn run_rep(cfg: &ExperimentConfig, grid: PathGrid, m_s: usize, master: u64, rep: u64) -> RepRecord {
    let theta = cfg.theta;
    let h = cfg.h;
    let path = simulate_exact(theta, grid, RngStream::new(master, rep));
    let dt = grid.dt();
    let t_eff = grid.horizon();
    let s_eff = m_s as f64 * dt;

    let st_t = SufficientStats::from_states(dt, &path.states);
    let st_s = SufficientStats::from_states(dt, &path.states[..=m_s]);

    let sum_t = score_increment_sum(&path.states, &path.increments);
    let sum_s = score_increment_sum(&path.states[..m_s], &path.increments[..m_s]);
    let delta_t = sum_t.scale(-1.0 / t_eff.sqrt());
    let delta_s = sum_s.scale(-1.0 / s_eff.sqrt());
    let drift_sq = (delta_t - delta_s.scale((t_eff / s_eff).sqrt())).norm_sq();

    let exp_true = theta.matrix_fn(|l| (-h.value() * l).exp());
    let q_inv = fisher_info(theta);

    let estim = match (
        point_estimate(cfg.estimator, theta, &st_t),
        point_estimate(cfg.estimator, theta, &st_s),
    ) {
        (Some(hat_t), Some(hat_s)) => {
            let de_t = hat_t.matrix_fn(|l| (-h.value() * l).exp()) - exp_true;
            let de_s = hat_s.matrix_fn(|l| (-h.value() * l).exp()) - exp_true;
            let x_term = path.terminal();
            let qer = de_t.sandwich(q_inv).scale(0.5);
            let qep = (de_t * x_term).outer_sq();
            Some(EstimPart {
                qer,
                qep,
                qer_aux: de_s.sandwich(q_inv).scale(0.5),
                qep_aux: (de_s * x_term).outer_sq(),
                var_loss: (hat_t.as_vec() - theta.as_vec()).outer_sq(),
                diff: qep - qer,
                gap_sq: (hat_t.as_vec() - hat_s.as_vec()).norm_sq(),
            })
        }
        _ => None,
    };

    RepRecord { estim, delta: delta_t, drift_sq }
}

fn emap(m: Mat2, f: impl Fn(f64) -> f64) -> Mat2 {
    Mat2::new(f(m.a11), f(m.a12), f(m.a21), f(m.a22))
}

/// Mean and entrywise standard error of a per-replication matrix loss over
/// the unflagged replications, both scaled by `scale`.
fn mat_estimate(
    records: &[RepRecord],
    pick: impl Fn(&EstimPart) -> Mat2,
    scale: f64,
    n_rep: usize,
    n_flagged: usize,
) -> RiskEstimate {
    let mut mean = Mat2::zero();
    let mut n = 0usize;
    for r in records.iter().filter_map(|r| r.estim.as_ref()) {
        mean = mean + pick(r);
        n += 1;
    }
    if n == 0 {
        return RiskEstimate { matrix: Mat2::zero(), se: Mat2::zero(), n_rep, n_flagged };
    }
    mean = mean.scale(1.0 / n as f64);
    let mut var = Mat2::zero();
    for r in records.iter().filter_map(|r| r.estim.as_ref()) {
        let d = pick(r) - mean;
        var = var + emap(d, |x| x * x);
    }
    let denom = (n.max(2) - 1) as f64;
    let se = emap(var.scale(1.0 / denom), f64::sqrt).scale(1.0 / (n as f64).sqrt());
    RiskEstimate { matrix: mean.scale(scale), se: se.scale(scale), n_rep, n_flagged }
}

/// Mean and standard error of a scalar per-replication quantity.
fn scalar_estimate(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (n.max(2) - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Runs the full replication loop at one horizon and aggregates every
/// statistic. All public risk operations are projections of this batch.
pub fn run_batch(cfg: &ExperimentConfig, t: f64) -> Result<HorizonBatch> {
    cfg.validate()?;
    let grid = PathGrid::for_horizon(t, cfg.dt)?;
    let t_eff = grid.horizon();
    let s_raw = cfg.s_rule.s_of(t_eff);
    let m_s = snap_to_node(s_raw, cfg.dt).min(grid.n_steps());
    if m_s < 2 {
        return Err(Error::Grid(format!(
            "auxiliary horizon {s_raw} leaves fewer than 2 steps at dt={}",
            cfg.dt
        )));
    }
    let s_eff = m_s as f64 * cfg.dt;
    let master = batch_stream_master(cfg.master_seed, t, cfg.dt);

    let records: Vec<RepRecord> = with_pool(cfg.threads, || {
        (0..cfg.n_rep as u64)
            .into_par_iter()
            .map(|rep| run_rep(cfg, grid, m_s, master, rep))
            .collect()
    })?;

    let n_rep = records.len();
    let n_flagged = records.iter().filter(|r| r.estim.is_none()).count();

    let qer = mat_estimate(&records, |e| e.qer, t_eff, n_rep, n_flagged);
    let qep = mat_estimate(&records, |e| e.qep, t_eff, n_rep, n_flagged);
    let qer_aux = mat_estimate(&records, |e| e.qer_aux, t_eff, n_rep, n_flagged);
    let qep_aux = mat_estimate(&records, |e| e.qep_aux, t_eff, n_rep, n_flagged);
    let mle_var = mat_estimate(&records, |e| e.var_loss, t_eff, n_rep, n_flagged);
    let risk_diff = mat_estimate(&records, |e| e.diff, t_eff, n_rep, n_flagged);

    let gaps: Vec<f64> =
        records.iter().filter_map(|r| r.estim.as_ref()).map(|e| e.gap_sq).collect();
    let (gap_mean, gap_se) = scalar_estimate(&gaps);

    let drifts: Vec<f64> = records.iter().map(|r| r.drift_sq).collect();
    let (drift_mc, drift_se) = scalar_estimate(&drifts);
    let ratio = s_eff / t_eff;
    let drift_analytic = (ratio * (1.0 / ratio - 1.0) * (1.0 / ratio - 1.0) + (1.0 - ratio))
        * fisher_info(cfg.theta).trace();

    // Score moments over every replication (no estimator involved).
    let n = n_rep as f64;
    let mut mean = Vec2::ZERO;
    for r in &records {
        mean = mean + r.delta;
    }
    mean = mean.scale(1.0 / n);
    let (mut m2, mut m3, mut m4) = (Vec2::ZERO, Vec2::ZERO, Vec2::ZERO);
    let mut cross = 0.0;
    for r in &records {
        let d = r.delta - mean;
        m2 = m2 + Vec2::new(d.x * d.x, d.y * d.y);
        m3 = m3 + Vec2::new(d.x * d.x * d.x, d.y * d.y * d.y);
        m4 = m4 + Vec2::new(d.x * d.x * d.x * d.x, d.y * d.y * d.y * d.y);
        cross += d.x * d.y;
    }
    let score_cov = Mat2::new(m2.x, cross, cross, m2.y).scale(1.0 / (n - 1.0));
    m2 = m2.scale(1.0 / n);
    m3 = m3.scale(1.0 / n);
    m4 = m4.scale(1.0 / n);
    let score_skewness = Vec2::new(m3.x / m2.x.powf(1.5), m3.y / m2.y.powf(1.5));
    let score_ex_kurtosis = Vec2::new(m4.x / (m2.x * m2.x) - 3.0, m4.y / (m2.y * m2.y) - 3.0);
    let score_mean_se = Vec2::new((m2.x / n).sqrt(), (m2.y / n).sqrt());

    Ok(HorizonBatch {
        t: t_eff,
        s: s_eff,
        n_rep,
        n_flagged,
        qer,
        qep,
        qer_aux,
        qep_aux,
        mle_var,
        risk_diff,
        theta_gap: t_eff * gap_mean,
        theta_gap_se: t_eff * gap_se,
        drift_mc,
        drift_se,
        drift_analytic,
        score_mean: mean,
        score_mean_se,
        score_cov,
        score_skewness,
        score_ex_kurtosis,
    })
}

/// `T * rho_T`: Monte Carlo estimation risk of the plug-in forecast map,
/// with the stationary argument integrated out in closed form.
pub fn estimate_qer(cfg: &ExperimentConfig, t: f64) -> Result<RiskEstimate> {
    Ok(run_batch(cfg, t)?.qer)
}

/// `T * R_T`: Monte Carlo prediction risk at the terminal state of the
/// estimation path.
pub fn estimate_qep(cfg: &ExperimentConfig, t: f64) -> Result<RiskEstimate> {
    Ok(run_batch(cfg, t)?.qep)
}

/// `(T * rho_T^S, T * R_T^S)` using the sub-path estimator at `S`.
pub fn estimate_aux_risks(cfg: &ExperimentConfig, t: f64) -> Result<(RiskEstimate, RiskEstimate)> {
    let b = run_batch(cfg, t)?;
    Ok((b.qer_aux, b.qep_aux))
}

/// `T * E (theta_hat_T - theta)^x2`, to be compared with `Q(theta)`.
pub fn estimator_variance(cfg: &ExperimentConfig, t: f64) -> Result<RiskEstimate> {
    Ok(run_batch(cfg, t)?.mle_var)
}

/// Outcome of [`lan_drift_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftCheck {
    pub mc: f64,
    pub se: f64,
    pub analytic: f64,
}

/// Monte Carlo mean of `||Delta_T - sqrt(T/S) Delta_S||^2` against its
/// closed-form limit.
pub fn lan_drift_check(cfg: &ExperimentConfig, t: f64) -> Result<DriftCheck> {
    let b = run_batch(cfg, t)?;
    Ok(DriftCheck { mc: b.drift_mc, se: b.drift_se, analytic: b.drift_analytic })
}

/// Outcome of [`theta_gap_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapCheck {
    pub value: f64,
    pub se: f64,
}

/// `T * mean ||theta_hat_T - theta_hat_S||^2`.
pub fn theta_gap_check(cfg: &ExperimentConfig, t: f64) -> Result<GapCheck> {
    let b = run_batch(cfg, t)?;
    Ok(GapCheck { value: b.theta_gap, se: b.theta_gap_se })
}

/// Empirical distribution summary of the normalized score `Delta_T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreNormality {
    pub n_rep: usize,
    pub mean: Vec2,
    pub mean_se: Vec2,
    pub cov: Mat2,
    /// The asymptotic covariance `I(theta) = Q^-1`.
    pub target: Mat2,
    pub skewness: Vec2,
    pub ex_kurtosis: Vec2,
}

pub fn score_normality(cfg: &ExperimentConfig, t: f64) -> Result<ScoreNormality> {
    let b = run_batch(cfg, t)?;
    Ok(ScoreNormality {
        n_rep: b.n_rep,
        mean: b.score_mean,
        mean_se: b.score_mean_se,
        cov: b.score_cov,
        target: fisher_info(cfg.theta),
        skewness: b.score_skewness,
        ex_kurtosis: b.score_ex_kurtosis,
    })
}

/// Newton and decoupled estimates on identical paths at one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCheck {
    pub n_rep: usize,
    /// Replications where both estimators produced an estimate.
    pub n_compared: usize,
    /// Fraction of compared replications with
    /// `||theta_newton - theta_decoupled|| < tol`.
    pub frac_within: f64,
    pub tol: f64,
    pub qer_newton: RiskEstimate,
    pub qer_decoupled: RiskEstimate,
}

/// Runs both estimators on the same simulated paths and compares them
/// pointwise and through their estimation risks.
pub fn cross_validate(cfg: &ExperimentConfig, t: f64, tol: f64) -> Result<CrossCheck> {
    cfg.validate()?;
    let grid = PathGrid::for_horizon(t, cfg.dt)?;
    let t_eff = grid.horizon();
    let master = batch_stream_master(cfg.master_seed, t, cfg.dt);
    let h = cfg.h;
    let theta = cfg.theta;
    let exp_true = theta.matrix_fn(|l| (-h.value() * l).exp());
    let q_inv = fisher_info(theta);

    struct Pair {
        newton: Option<Mat2>,
        decoupled: Option<Mat2>,
        dist: Option<f64>,
    }

    let pairs: Vec<Pair> = with_pool(cfg.threads, || {
        (0..cfg.n_rep as u64)
            .into_par_iter()
            .map(|rep| {
                let path = simulate_exact(theta, grid, RngStream::new(master, rep));
                let st = SufficientStats::from_states(grid.dt(), &path.states);
                let hat_n = point_estimate(Estimator::Newton, theta, &st);
                let hat_d = point_estimate(Estimator::Decoupled, theta, &st);
                let loss = |hat: Theta| {
                    let de = hat.matrix_fn(|l| (-h.value() * l).exp()) - exp_true;
                    de.sandwich(q_inv).scale(0.5)
                };
                Pair {
                    newton: hat_n.map(loss),
                    decoupled: hat_d.map(loss),
                    dist: match (hat_n, hat_d) {
                        (Some(a), Some(b)) => Some((a.as_vec() - b.as_vec()).norm()),
                        _ => None,
                    },
                }
            })
            .collect()
    })?;

    let n_rep = pairs.len();
    let dists: Vec<f64> = pairs.iter().filter_map(|p| p.dist).collect();
    let n_compared = dists.len();
    let within = dists.iter().filter(|d| **d < tol).count();

    let summarize = |pick: fn(&Pair) -> Option<Mat2>| {
        let vals: Vec<Mat2> = pairs.iter().filter_map(pick).collect();
        let n = vals.len();
        let mut mean = Mat2::zero();
        for v in &vals {
            mean = mean + *v;
        }
        mean = mean.scale(1.0 / n.max(1) as f64);
        let mut var = Mat2::zero();
        for v in &vals {
            let d = *v - mean;
            var = var + emap(d, |x| x * x);
        }
        let se = emap(var.scale(1.0 / (n.max(2) - 1) as f64), f64::sqrt)
            .scale(1.0 / (n.max(1) as f64).sqrt());
        RiskEstimate {
            matrix: mean.scale(t_eff),
            se: se.scale(t_eff),
            n_rep,
            n_flagged: n_rep - n,
        }
    };

    Ok(CrossCheck {
        n_rep,
        n_compared,
        frac_within: within as f64 / n_compared.max(1) as f64,
        tol,
        qer_newton: summarize(|p| p.newton),
        qer_decoupled: summarize(|p| p.decoupled),
    })
}

/// Fourth-moment diagnostic `4 E (X1^4 + X2^4)` under the stationary law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentBound {
    /// Exact Gaussian value `6 alpha^2 / (alpha^2 - beta^2)^2`.
    pub gaussian_moment: f64,
    /// Doubled variant `12 alpha^2 / (alpha^2 - beta^2)^2`, reported for
    /// comparison but carrying no exactness claim.
    pub conservative_constant: f64,
    pub mc: f64,
    pub mc_se: f64,
    pub n_draws: usize,
}

/// Monte Carlo check of the stationary fourth-moment formula over
/// `n_draws` independent stationary draws.
pub fn delta_moment_bound(theta: Theta, n_draws: usize, master_seed: u64) -> MomentBound {
    let det = theta.alpha() * theta.alpha() - theta.beta() * theta.beta();
    let gaussian_moment = 6.0 * theta.alpha() * theta.alpha() / (det * det);
    let conservative_constant = 2.0 * gaussian_moment;

    let s = theta.spectral();
    let sd1 = (0.25 / s.lambda1).sqrt();
    let sd2 = (0.25 / s.lambda2).sqrt();
    let mut rng = RngStream::new(RngStream::derive_master(master_seed, 0x6d6f6d), 0).rng();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_draws {
        let y1 = sd1 * rng.sample::<f64, _>(StandardNormal);
        let y2 = sd2 * rng.sample::<f64, _>(StandardNormal);
        let (x1, x2) = (y1 + y2, y1 - y2);
        let v = 4.0 * (x1.powi(4) + x2.powi(4));
        sum += v;
        sum_sq += v * v;
    }
    let n = n_draws as f64;
    let mc = sum / n;
    let var = (sum_sq / n - mc * mc).max(0.0) * n / (n - 1.0);
    MomentBound {
        gaussian_moment,
        conservative_constant,
        mc,
        mc_se: (var / n).sqrt(),
        n_draws,
    }
}

/// One grid row of a convergence study.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub batch: HorizonBatch,
    /// The limit `h^2 exp(-2hQ)` both risks must approach.
    pub bound: Mat2,
    /// `||T rho_T - bound||_F / ||bound||_F`.
    pub frob_rel_qer: f64,
    /// `||T R_T - bound||_F / ||bound||_F`.
    pub frob_rel_qep: f64,
    /// `||T R_T - T rho_T||_F / ||bound||_F`, from the shared-path
    /// difference, with a matching noise scale.
    pub gap_qer_qep: f64,
    pub gap_qer_qep_se: f64,
}

/// Discretization check: the leading risks recomputed at `dt/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DtRefinement {
    pub t: f64,
    pub dt: f64,
    pub dt_half: f64,
    pub qer_coarse: RiskEstimate,
    pub qer_fine: RiskEstimate,
    pub qep_coarse: RiskEstimate,
    pub qep_fine: RiskEstimate,
}

impl DtRefinement {
    /// Frobenius distance between the two discretizations of `T rho_T`.
    pub fn qer_shift(&self) -> f64 {
        (self.qer_coarse.matrix - self.qer_fine.matrix).frob_norm()
    }

    /// Monte Carlo noise allowance: three combined standard errors.
    pub fn qer_noise(&self) -> f64 {
        3.0 * (self.qer_coarse.se.frob_norm() + self.qer_fine.se.frob_norm())
    }

    pub fn qep_shift(&self) -> f64 {
        (self.qep_coarse.matrix - self.qep_fine.matrix).frob_norm()
    }

    pub fn qep_noise(&self) -> f64 {
        3.0 * (self.qep_coarse.se.frob_norm() + self.qep_fine.se.frob_norm())
    }
}

/// Full T-grid study: every risk and diagnostic per horizon, plus the
/// dt-refinement leg at the largest horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub dt_check: DtRefinement,
}

pub fn convergence_study(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let mut grid = cfg.t_grid.clone();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite horizons"));

    let bound = efficiency_bound(cfg.theta, cfg.h);
    let bound_norm = bound.frob_norm();
    let mut rows = Vec::with_capacity(grid.len());
    for &t in &grid {
        let batch = run_batch(cfg, t)?;
        let frob_rel_qer = (batch.qer.matrix - bound).frob_norm() / bound_norm;
        let frob_rel_qep = (batch.qep.matrix - bound).frob_norm() / bound_norm;
        let gap_qer_qep = batch.risk_diff.matrix.frob_norm() / bound_norm;
        let gap_qer_qep_se = batch.risk_diff.se.frob_norm() / bound_norm;
        rows.push(ConvergenceRow {
            batch,
            bound,
            frob_rel_qer,
            frob_rel_qep,
            gap_qer_qep,
            gap_qer_qep_se,
        });
    }

    // Discretization leg at the largest horizon: the coarse run is the last
    // row's batch (same seeds), the fine run halves dt.
    let t_max = *grid.last().expect("validated nonempty grid");
    let fine_cfg = ExperimentConfig { dt: cfg.dt / 2.0, ..cfg.clone() };
    let fine = run_batch(&fine_cfg, t_max)?;
    let coarse = rows.last().expect("at least one row").batch.clone();
    let dt_check = DtRefinement {
        t: t_max,
        dt: cfg.dt,
        dt_half: fine_cfg.dt,
        qer_coarse: coarse.qer,
        qer_fine: fine.qer,
        qep_coarse: coarse.qep,
        qep_fine: fine.qep,
    };

    Ok(ConvergenceReport { rows, dt_check })
}
