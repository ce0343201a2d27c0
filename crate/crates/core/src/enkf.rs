//! Differentiable stochastic ensemble Kalman filter.
//!
//! Ensembles are `N×d` matrices with one member per row. Every operation is
//! recorded on the [`Tape`], so the accumulated log-likelihood can be
//! differentiated with respect to the transition, the noise levels and the
//! initial-state distribution.

use std::f64::consts::PI;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{normal_tensor, Rng};

/// Noise-free part of a state transition, evaluated for all members at once.
pub trait Transition {
    /// Standard normal GP draws consumed per member and step.
    fn gp_draws(&self) -> usize;

    /// Maps the `N×d` previous ensemble to the `N×d` transition means.
    fn propagate(&self, tape: &mut Tape, members: Var, gp_eps: Var) -> Result<Var>;
}

/// Transition given by a fixed function of the state (no trainable
/// parameters), e.g. the true system dynamics.
pub struct KnownDynamics<F: Fn(&Tensor) -> Tensor> {
    pub f: F,
}

impl<F: Fn(&Tensor) -> Tensor> Transition for KnownDynamics<F> {
    fn gp_draws(&self) -> usize {
        0
    }

    fn propagate(&self, tape: &mut Tape, members: Var, _gp_eps: Var) -> Result<Var> {
        let next = (self.f)(tape.value(members));
        Ok(tape.leaf(next))
    }
}

/// Draws for one filter step.
#[derive(Debug, Clone)]
pub struct StepNoise {
    /// `N×k` GP draws.
    pub gp: Tensor,
    /// `N×d_x` process-noise draws.
    pub process: Tensor,
    /// `N×d_y` observation-perturbation draws.
    pub obs: Tensor,
}

/// All standard normal draws one filter pass consumes.
#[derive(Debug, Clone)]
pub struct FilterNoise {
    /// `N×d_x` draws for the initial ensemble.
    pub initial: Tensor,
    pub steps: Vec<StepNoise>,
}

impl FilterNoise {
    pub fn draw(
        members: usize,
        state_dim: usize,
        obs_dim: usize,
        gp_draws: usize,
        steps: usize,
        filter_rng: &mut Rng,
        gp_rng: &mut Rng,
    ) -> Self {
        let initial = normal_tensor(filter_rng, members, state_dim);
        let steps = (0..steps)
            .map(|_| StepNoise {
                gp: normal_tensor(gp_rng, members, gp_draws),
                process: normal_tensor(filter_rng, members, state_dim),
                obs: normal_tensor(filter_rng, members, obs_dim),
            })
            .collect();
        FilterNoise { initial, steps }
    }

    pub fn members(&self) -> usize {
        self.initial.rows()
    }
}

/// Linear-Gaussian emission `y = C x + e`, `e ~ N(0, diag(exp(log_r)))`.
#[derive(Debug, Clone, Copy)]
pub struct Emission {
    /// `d_y×d_x`.
    pub c: Var,
    /// `1×d_y`.
    pub log_r: Var,
    /// Whether the per-step likelihood covariance includes `R`.
    pub include_r: bool,
}

/// Outputs of [`run_filter`].
#[derive(Debug, Clone)]
pub struct FilterRun {
    /// Filtered ensembles; entry 0 is the initial ensemble.
    pub filtered: Vec<Var>,
    /// Predicted (pre-update) ensembles for steps `1..=T`.
    pub predicted: Vec<Var>,
    pub step_logliks: Vec<Var>,
    /// Sum of the per-step log-likelihoods (a `1×1` node; a constant 0 when
    /// there are no observations).
    pub loglik: Var,
}

/// Initial ensemble `m₀ + ε L₀ᵀ` with `L₀` the lower triangle of `chol`.
pub fn initial_ensemble(tape: &mut Tape, mean: Var, chol: Var, eps: &Tensor) -> Var {
    let l = tape.tril(chol);
    let e = tape.leaf(eps.clone());
    let spread = tape.matmul_t(e, false, l, true);
    tape.add(spread, mean)
}

/// Predicted ensemble: transition mean plus `Q^{½} η`.
pub fn predict_ensemble(
    tape: &mut Tape,
    transition: &dyn Transition,
    members: Var,
    log_q: Var,
    noise: &StepNoise,
) -> Result<Var> {
    let eps = tape.leaf(noise.gp.clone());
    let mean = transition.propagate(tape, members, eps)?;
    let half = tape.scale(log_q, 0.5);
    let sd = tape.exp(half);
    let eta = tape.leaf(noise.process.clone());
    let scaled = tape.mul(eta, sd);
    let next = tape.add(mean, scaled);
    check_members(tape.value(next))?;
    Ok(next)
}

fn check_members(t: &Tensor) -> Result<()> {
    for r in 0..t.rows() {
        if t.row_slice(r).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("ensemble member {r} after transition")));
        }
    }
    Ok(())
}

/// Ensemble mean (`1×d`) and unbiased covariance (`d×d`).
pub fn empirical_moments(tape: &mut Tape, ens: Var) -> Result<(Var, Var)> {
    let [n, _] = tape.shape(ens);
    if n < 2 {
        return Err(Error::Contract(format!("empirical covariance needs at least 2 members, got {n}")));
    }
    let total = tape.sum_rows(ens);
    let mean = tape.scale(total, 1.0 / n as f64);
    let dev = tape.sub(ens, mean);
    let gram = tape.matmul_t(dev, true, dev, false);
    let cov = tape.scale(gram, 1.0 / (n - 1) as f64);
    Ok((mean, cov))
}

fn diag_from_log(tape: &mut Tape, log_diag: Var) -> Var {
    let [_, d] = tape.shape(log_diag);
    let r = tape.exp(log_diag);
    let eye = tape.leaf(Tensor::identity(d));
    tape.mul(eye, r)
}

/// `C P Cᵀ`, optionally plus `R`.
fn innovation_cov(tape: &mut Tape, p: Var, c: Var, log_r: Option<Var>) -> Var {
    let cp = tape.matmul(c, p);
    let cpc = tape.matmul_t(cp, false, c, true);
    match log_r {
        Some(lr) => {
            let r = diag_from_log(tape, lr);
            tape.add(cpc, r)
        }
        None => cpc,
    }
}

/// `G = P Cᵀ (C P Cᵀ + R)⁻¹`, via a Cholesky factorization.
pub fn kalman_gain(tape: &mut Tape, p: Var, c: Var, log_r: Var) -> Result<Var> {
    let s = innovation_cov(tape, p, c, Some(log_r));
    let l = tape.cholesky(s)?;
    let cp = tape.matmul(c, p);
    let half = tape.solve_lower(l, cp, false);
    let gt = tape.solve_lower(l, half, true);
    Ok(tape.transpose(gt))
}

/// Perturbed-observation update `x + G (y + R^{½} ε − C x)` for every member.
pub fn enkf_update(tape: &mut Tape, ens: Var, y: &[f64], gain: Var, c: Var, log_r: Var, eps: &Tensor) -> Var {
    let [dy, _] = tape.shape(c);
    assert_eq!(y.len(), dy, "enkf_update: observation has {} entries, C has {dy} rows", y.len());
    assert_eq!(eps.cols(), dy, "enkf_update: perturbation width");
    let yv = tape.leaf(Tensor::row(y));
    let half = tape.scale(log_r, 0.5);
    let sd = tape.exp(half);
    let e = tape.leaf(eps.clone());
    let pert = tape.mul(e, sd);
    let cx = tape.matmul_t(ens, false, c, true);
    let target = tape.add(pert, yv);
    let innov = tape.sub(target, cx);
    let shift = tape.matmul_t(innov, false, gain, true);
    tape.add(ens, shift)
}

/// `log N(y | C m, C P Cᵀ [+ R])`.
pub fn step_loglik(tape: &mut Tape, mean: Var, p: Var, c: Var, log_r: Var, y: &[f64], include_r: bool) -> Result<Var> {
    let s = innovation_cov(tape, p, c, include_r.then_some(log_r));
    let l = tape.cholesky(s)?;
    gaussian_loglik(tape, mean, c, l, y)
}

fn gaussian_loglik(tape: &mut Tape, mean: Var, c: Var, l: Var, y: &[f64]) -> Result<Var> {
    let dy = y.len();
    let yv = tape.leaf(Tensor::column(y));
    let pred = tape.matmul_t(c, false, mean, true);
    let resid = tape.sub(yv, pred);
    let white = tape.solve_lower(l, resid, false);
    let maha = tape.sum_squares(white);
    let logdet = tape.logdet_from_cholesky(l);
    let s = tape.add(maha, logdet);
    let half = tape.scale(s, -0.5);
    Ok(tape.offset(half, -0.5 * dy as f64 * (2.0 * PI).ln()))
}

/// One predict/update cycle. Returns `(predicted, filtered, loglik)`.
#[allow(clippy::too_many_arguments)]
pub fn filter_step(
    tape: &mut Tape,
    transition: &dyn Transition,
    emission: &Emission,
    log_q: Var,
    members: Var,
    y: &[f64],
    noise: &StepNoise,
) -> Result<(Var, Var, Var)> {
    let predicted = predict_ensemble(tape, transition, members, log_q, noise)?;
    let (mean, p) = empirical_moments(tape, predicted)?;
    let s = innovation_cov(tape, p, emission.c, Some(emission.log_r));
    let l = tape.cholesky(s)?;
    let cp = tape.matmul(emission.c, p);
    let half = tape.solve_lower(l, cp, false);
    let gt = tape.solve_lower(l, half, true);
    let gain = tape.transpose(gt);
    let ll = if emission.include_r {
        gaussian_loglik(tape, mean, emission.c, l, y)?
    } else {
        step_loglik(tape, mean, p, emission.c, emission.log_r, y, false)?
    };
    let updated = enkf_update(tape, predicted, y, gain, emission.c, emission.log_r, &noise.obs);
    Ok((predicted, updated, ll))
}

/// Filters `ys` (`T×d_y`, one observation per row) starting from the
/// given initial ensemble.
pub fn run_filter(
    tape: &mut Tape,
    transition: &dyn Transition,
    emission: &Emission,
    log_q: Var,
    initial: Var,
    ys: &Tensor,
    noise: &FilterNoise,
) -> Result<FilterRun> {
    let t_len = ys.rows();
    if noise.steps.len() < t_len {
        return Err(Error::Contract(format!(
            "filter noise covers {} steps, sequence has {t_len}",
            noise.steps.len()
        )));
    }
    let mut filtered = vec![initial];
    let mut predicted = Vec::with_capacity(t_len);
    let mut step_logliks = Vec::with_capacity(t_len);
    let mut total: Option<Var> = None;
    let mut current = initial;
    for t in 0..t_len {
        let (pred, upd, ll) = filter_step(tape, transition, emission, log_q, current, ys.row_slice(t), &noise.steps[t])
            .map_err(|e| e.at_step(t + 1))?;
        total = Some(match total {
            Some(acc) => tape.add(acc, ll),
            None => ll,
        });
        predicted.push(pred);
        filtered.push(upd);
        step_logliks.push(ll);
        current = upd;
    }
    let loglik = total.unwrap_or_else(|| tape.scalar(0.0));
    Ok(FilterRun {
        filtered,
        predicted,
        step_logliks,
        loglik,
    })
}

/// Propagates an ensemble `steps.len()` times without assimilating anything.
pub fn free_run(
    tape: &mut Tape,
    transition: &dyn Transition,
    log_q: Var,
    start: Var,
    steps: &[StepNoise],
) -> Result<Vec<Var>> {
    let mut out = Vec::with_capacity(steps.len());
    let mut current = start;
    for (t, noise) in steps.iter().enumerate() {
        current = predict_ensemble(tape, transition, current, log_q, noise).map_err(|e| e.at_step(t + 1))?;
        out.push(current);
    }
    Ok(out)
}
