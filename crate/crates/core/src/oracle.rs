//! Brute-force cross-check of the two-period solution.
//!
//! For every baseline on a uniform grid, the event-period payoff is averaged
//! over seeded shock draws (the same draws for every grid point). Each
//! baseline-period shock draw then picks its best grid baseline. The
//! event-period best response comes from the exact policy; a subsample is
//! re-maximised by exhaustive grid search and must agree.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{payoff_unchecked, plain_payoff, ConsumerParams, ProgramParams, UncertaintyModel};
use crate::stage_one::called_response;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub n_samples: usize,
    pub q_grid_step: f64,
    pub seed: u64,
    pub theta_prev_samples: usize,
    /// Batches used to estimate the Monte Carlo error of the argmax location.
    pub batches: usize,
    /// Shock draws per checked grid baseline that are re-maximised by grid search.
    pub inner_check_samples: usize,
    /// Every `inner_check_stride`-th grid baseline is checked.
    pub inner_check_stride: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            q_grid_step: 0.01,
            seed: 0,
            theta_prev_samples: 200,
            batches: 10,
            inner_check_samples: 16,
            inner_check_stride: 40,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self, cp: &ConsumerParams) -> Result<()> {
        if self.n_samples < 100 {
            return Err(Error::InvalidParams(format!("n_samples must be >= 100, got {}", self.n_samples)));
        }
        if !(self.q_grid_step > 0.0 && self.q_grid_step <= 0.1) {
            return Err(Error::InvalidParams(format!(
                "q_grid_step must be in (0, 0.1], got {}",
                self.q_grid_step
            )));
        }
        if self.theta_prev_samples < 2 || self.batches < 2 || self.batches > self.n_samples {
            return Err(Error::InvalidParams("need >= 2 theta_prev samples and 2..=n_samples batches".into()));
        }
        if self.inner_check_stride == 0 {
            return Err(Error::InvalidParams("inner_check_stride must be >= 1".into()));
        }
        grid_len(cp.q_max, self.q_grid_step).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub e_q_prev: f64,
    pub stderr_q_prev: f64,
    pub e_q_t: f64,
    pub stderr_q_t: f64,
    pub e_profit: f64,
    pub stderr_profit: f64,
    pub n_samples: usize,
    /// Shock draws whose best response was confirmed by grid search.
    pub inner_checks: usize,
}

/// Number of nodes of the grid `0, step, ..., q_max`; `q_max` must be a multiple of `step`.
pub(crate) fn grid_len(q_max: f64, step: f64) -> Result<usize> {
    let n = (q_max / step).round();
    if !(n >= 1.0) || (n * step - q_max).abs() > 1e-9 * q_max.max(1.0) {
        return Err(Error::InvalidParams(format!(
            "q_max={q_max} is not a multiple of grid step {step}"
        )));
    }
    Ok(n as usize + 1)
}

#[inline]
pub(crate) fn grid_node(i: usize, n: usize, step: f64, q_max: f64) -> f64 {
    if i + 1 == n {
        q_max
    } else {
        i as f64 * step
    }
}

fn draws(seed: u64, stream: u64, n: usize, um: &UncertaintyModel) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let dist = Uniform::new_inclusive(um.theta_lo, um.theta_hi);
    (0..n).map(|_| dist.sample(&mut rng)).collect()
}

#[inline]
fn response(b: f64, theta: f64, pp: &ProgramParams, cp: &ConsumerParams) -> (f64, f64) {
    let q = if pp.call == 1.0 {
        called_response(b, theta, pp.p2, cp).1
    } else {
        cp.ideal(theta).clamp(0.0, cp.q_max)
    };
    (q, payoff_unchecked(q, theta, b, pp.p2, pp.call, cp))
}

fn grid_max_payoff(b: f64, theta: f64, pp: &ProgramParams, cp: &ConsumerParams, n: usize, step: f64) -> f64 {
    (0..n)
        .map(|i| payoff_unchecked(grid_node(i, n, step, cp.q_max), theta, b, pp.p2, pp.call, cp))
        .fold(f64::NEG_INFINITY, f64::max)
}

struct GridStats {
    mean_u: f64,
    var_u: f64,
    mean_q: f64,
    var_q: f64,
    batch_u: Vec<f64>,
    checked: usize,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Index of the best value; near-ties go to the larger index.
fn argmax_last(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        let tol = 1e-12 * best.1.abs().max(1.0);
        if v >= best.1 - tol {
            best = (i, best.1.max(v));
        }
    }
    best.0
}

fn run(
    pp: &ProgramParams,
    cp: &ConsumerParams,
    um: &UncertaintyModel,
    cfg: &OracleConfig,
    stream_base: u64,
) -> Result<OracleResult> {
    let step = cfg.q_grid_step;
    let n_grid = grid_len(cp.q_max, step)?;
    let thetas = draws(cfg.seed, stream_base, cfg.n_samples, um);
    let thetas_prev = draws(cfg.seed, stream_base + 1, cfg.theta_prev_samples, um);
    let batch_len = cfg.n_samples / cfg.batches;
    let check_tol = cp.gamma * step * step / 2.0 + 1e-9;

    let stats: Vec<GridStats> = (0..n_grid)
        .into_par_iter()
        .map(|i| -> Result<GridStats> {
            let b = grid_node(i, n_grid, step, cp.q_max);
            let mut us = Vec::with_capacity(thetas.len());
            let mut qs = Vec::with_capacity(thetas.len());
            for &th in &thetas {
                let (q, u) = response(b, th, pp, cp);
                us.push(u);
                qs.push(q);
            }
            let mut checked = 0;
            if i % cfg.inner_check_stride == 0 || i + 1 == n_grid {
                for (&th, &u) in thetas.iter().zip(&us).take(cfg.inner_check_samples) {
                    let grid = grid_max_payoff(b, th, pp, cp, n_grid, step);
                    if u < grid - 1e-9 || grid < u - check_tol {
                        return Err(Error::InnerMaxMismatch { q_prev: b, theta: th, policy: u, grid });
                    }
                    checked += 1;
                }
            }
            let (mean_u, var_u) = mean_var(&us);
            let (mean_q, var_q) = mean_var(&qs);
            let batch_u = (0..cfg.batches)
                .map(|k| us[k * batch_len..(k + 1) * batch_len].iter().sum::<f64>() / batch_len as f64)
                .collect();
            Ok(GridStats { mean_u, var_u, mean_q, var_q, batch_u, checked })
        })
        .collect::<Result<_>>()?;

    let node = |i: usize| grid_node(i, n_grid, step, cp.q_max);
    let prev_payoff = |i: usize, tp: f64| plain_payoff(node(i), tp, cp);

    let mut picks = Vec::with_capacity(thetas_prev.len());
    let mut profits = Vec::with_capacity(thetas_prev.len());
    let mut loads = Vec::with_capacity(thetas_prev.len());
    let (mut var_u_t, mut var_q_t) = (0.0, 0.0);
    for &tp in &thetas_prev {
        let i = argmax_last((0..n_grid).map(|i| prev_payoff(i, tp) + stats[i].mean_u));
        picks.push(node(i));
        profits.push(prev_payoff(i, tp) + stats[i].mean_u);
        loads.push(stats[i].mean_q);
        var_u_t += stats[i].var_u;
        var_q_t += stats[i].var_q;
    }
    let n_prev = thetas_prev.len() as f64;
    let n = cfg.n_samples as f64;
    var_u_t /= n_prev;
    var_q_t /= n_prev;

    let batch_estimates: Vec<f64> = (0..cfg.batches)
        .map(|k| {
            thetas_prev
                .iter()
                .map(|&tp| node(argmax_last((0..n_grid).map(|i| prev_payoff(i, tp) + stats[i].batch_u[k]))))
                .sum::<f64>()
                / n_prev
        })
        .collect();

    let (e_q_prev, v_pick) = mean_var(&picks);
    let (_, v_batch) = mean_var(&batch_estimates);
    let (e_profit, v_profit) = mean_var(&profits);
    let (e_q_t, v_load) = mean_var(&loads);

    Ok(OracleResult {
        e_q_prev,
        stderr_q_prev: (v_pick / n_prev + v_batch / cfg.batches as f64).sqrt(),
        e_q_t,
        stderr_q_t: (v_load / n_prev + var_q_t / n).sqrt(),
        e_profit,
        stderr_profit: (v_profit / n_prev + var_u_t / n).sqrt(),
        n_samples: cfg.n_samples,
        inner_checks: stats.iter().map(|s| s.checked).sum(),
    })
}

/// Monte Carlo / grid-search estimate of the optimal two-period decisions.
///
/// Runs twice on independent streams of the same seed and fails if the two
/// expected profits disagree by more than five pooled standard errors.
pub fn oracle_solve(
    pp: &ProgramParams,
    cp: &ConsumerParams,
    um: &UncertaintyModel,
    cfg: &OracleConfig,
) -> Result<OracleResult> {
    pp.require_indicator()?;
    cfg.validate(cp)?;
    um.check_against(cp)?;
    let primary = run(pp, cp, um, cfg, 0)?;
    let replica = run(pp, cp, um, cfg, 2)?;
    let pooled = primary.stderr_profit.hypot(replica.stderr_profit);
    if (primary.e_profit - replica.e_profit).abs() > 5.0 * pooled + 1e-12 {
        return Err(Error::NonConvergence(format!(
            "expected profit {} vs {} (pooled stderr {pooled})",
            primary.e_profit, replica.e_profit
        )));
    }
    Ok(primary)
}

/// Sample mean and standard error of the event-period payoff at a fixed baseline.
pub fn oracle_expected_payoff(
    q_prev: f64,
    pp: &ProgramParams,
    cp: &ConsumerParams,
    um: &UncertaintyModel,
    cfg: &OracleConfig,
) -> Result<(f64, f64)> {
    pp.require_indicator()?;
    cfg.validate(cp)?;
    if !(q_prev >= 0.0 && q_prev <= cp.q_max) {
        return Err(Error::Domain(format!("q_prev must be in [0, {}], got {q_prev}", cp.q_max)));
    }
    let us: Vec<f64> = draws(cfg.seed, 0, cfg.n_samples, um)
        .into_iter()
        .map(|th| response(q_prev, th, pp, cp).1)
        .collect();
    let (m, v) = mean_var(&us);
    Ok((m, (v / us.len() as f64).sqrt()))
}
