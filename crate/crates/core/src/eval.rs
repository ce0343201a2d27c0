//! Post-training filtering and forecasting. Each step is evaluated on its
//! own short tape, so memory stays flat over long sequences.

use crate::autodiff::{Tape, Tensor};
use crate::enkf::{self, Emission, KnownDynamics, StepNoise, Transition};
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::SsmModel;
use crate::rng::{normal_tensor, stream, Rng, Stream};
use crate::systems::Dataset;

/// Dynamics to filter with: a trained model (mean network weights) or a
/// fixed transition with known noise levels.
pub enum Dynamics<'a> {
    Model(&'a SsmModel),
    Known {
        f: &'a dyn Fn(&Tensor) -> Tensor,
        c: Tensor,
        q: Vec<f64>,
        r: Vec<f64>,
        m0: Vec<f64>,
        /// Lower Cholesky factor of the initial covariance.
        l0: Tensor,
    },
}

impl Dynamics<'_> {
    fn dims(&self) -> (usize, usize, usize) {
        match self {
            Dynamics::Model(m) => (m.config.state_dim, m.config.obs_dim, m.gp_draws()),
            Dynamics::Known { c, .. } => (c.cols(), c.rows(), 0),
        }
    }

    pub fn emission(&self) -> Tensor {
        match self {
            Dynamics::Model(m) => m.emission().clone(),
            Dynamics::Known { c, .. } => c.clone(),
        }
    }

    /// Initial ensemble `m₀ + ε L₀ᵀ`.
    pub fn initial(&self, eps: &Tensor) -> Result<Tensor> {
        let (m0, l0) = match self {
            Dynamics::Model(m) => (m.param(crate::model::X0_MEAN)?.clone(), m.param(crate::model::X0_CHOL)?.tril()),
            Dynamics::Known { m0, l0, .. } => (Tensor::row(m0), l0.tril()),
        };
        let spread = crate::autodiff::tensor::gemm(eps, false, &l0, true)?;
        Ok(Tensor::from_fn(eps.rows(), eps.cols(), |r, c| spread.get(r, c) + m0.get(0, c)))
    }

    /// One transition and, when `y` is given, one update. Returns the new
    /// ensemble and the step log-likelihood (0 without an observation).
    pub fn step(&self, ens: &Tensor, y: Option<&[f64]>, noise: &StepNoise) -> Result<(Tensor, f64)> {
        let mut tape = Tape::new();
        let members = tape.leaf(ens.clone());
        let known;
        let bound;
        let (transition, emission, log_q): (&dyn Transition, Emission, _) = match self {
            Dynamics::Model(m) => {
                bound = m.bind(&mut tape, None)?;
                (&bound.transition, bound.emission, bound.log_q)
            }
            Dynamics::Known { f, c, q, r, .. } => {
                known = KnownDynamics { f: |x: &Tensor| f(x) };
                let c = tape.leaf(c.clone());
                let log_r = tape.leaf(Tensor::row(&r.iter().map(|v| v.ln()).collect::<Vec<_>>()));
                let log_q = tape.leaf(Tensor::row(&q.iter().map(|v| v.ln()).collect::<Vec<_>>()));
                (
                    &known,
                    Emission {
                        c,
                        log_r,
                        include_r: true,
                    },
                    log_q,
                )
            }
        };
        match y {
            Some(y) => {
                let (_, upd, ll) = enkf::filter_step(&mut tape, transition, &emission, log_q, members, y, noise)?;
                Ok((tape.value(upd).clone(), tape.item(ll)))
            }
            None => {
                let next = enkf::predict_ensemble(&mut tape, transition, members, log_q, noise)?;
                Ok((tape.value(next).clone(), 0.0))
            }
        }
    }

    fn draw_step(&self, n: usize, rng: &mut Rng) -> StepNoise {
        let (dx, dy, k) = self.dims();
        StepNoise {
            gp: normal_tensor(rng, n, k),
            process: normal_tensor(rng, n, dx),
            obs: normal_tensor(rng, n, dy),
        }
    }
}

/// Filtered ensembles over `ys`; entry 0 is the initial ensemble and entry
/// `t` follows assimilation of row `t − 1`.
#[derive(Debug, Clone)]
pub struct Filtered {
    pub ensembles: Vec<Tensor>,
    pub loglik: f64,
}

impl Filtered {
    /// Ensembles after each observation (drops the initial one).
    pub fn posterior(&self) -> &[Tensor] {
        &self.ensembles[1..]
    }
}

pub fn filter(dynamics: &Dynamics, ys: &Tensor, members: usize, seed: u64) -> Result<Filtered> {
    let (dx, _, _) = dynamics.dims();
    let mut rng = stream(seed, Stream::Eval);
    let mut ens = dynamics.initial(&normal_tensor(&mut rng, members, dx))?;
    let mut ensembles = Vec::with_capacity(ys.rows() + 1);
    ensembles.push(ens.clone());
    let mut loglik = 0.0;
    for t in 0..ys.rows() {
        let noise = dynamics.draw_step(members, &mut rng);
        let (next, ll) = dynamics.step(&ens, Some(ys.row_slice(t)), &noise).map_err(|e| e.at_step(t + 1))?;
        loglik += ll;
        ens = next;
        ensembles.push(ens.clone());
    }
    Ok(Filtered { ensembles, loglik })
}

/// Settings for the rolling-origin forecast.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastConfig {
    pub horizon: usize,
    pub stride: usize,
    pub members: usize,
    pub seed: u64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            horizon: 50,
            stride: 10,
            members: 200,
            seed: 0,
        }
    }
}

/// Rolling-origin multi-step forecast over the test split. From every
/// origin `τ = split, split + stride, …` the filtered ensemble is propagated
/// `horizon` steps without updates; the RMSE of `C · mean` against the
/// observations over the horizon is averaged across origins. Errors are in
/// the original scale when the dataset carries standardization statistics.
pub fn forecast(dynamics: &Dynamics, ds: &Dataset, cfg: &ForecastConfig) -> Result<f64> {
    let test_len = ds.len().saturating_sub(ds.split);
    if test_len < cfg.horizon + 1 {
        return Err(Error::Contract(format!(
            "test split has {test_len} rows, forecasting needs at least {}",
            cfg.horizon + 1
        )));
    }
    if cfg.stride == 0 {
        return Err(Error::Config("forecast stride must be positive".into()));
    }
    let filtered = filter(dynamics, &ds.ys, cfg.members, cfg.seed)?;
    let c = dynamics.emission();
    let mut rng = stream(cfg.seed.wrapping_add(1), Stream::Eval);
    let unscale = |m: &Tensor| match &ds.stats {
        Some(s) => s.invert(m),
        None => m.clone(),
    };
    let mut per_origin = Vec::new();
    let mut origin = ds.split;
    while origin + cfg.horizon <= ds.len() {
        let mut ens = filtered.ensembles[origin].clone();
        let mut pred = Tensor::zeros(cfg.horizon, c.rows());
        for h in 0..cfg.horizon {
            let noise = dynamics.draw_step(cfg.members, &mut rng);
            ens = dynamics.step(&ens, None, &noise)?.0;
            let m = ens.mean_rows();
            let y = crate::autodiff::tensor::gemm(&m, false, &c, true)?;
            for j in 0..c.rows() {
                pred.set(h, j, y.get(0, j));
            }
        }
        let truth = ds.ys.slice_rows(origin, origin + cfg.horizon);
        per_origin.push(metrics::rmse(&unscale(&pred), &unscale(&truth))?);
        origin += cfg.stride;
    }
    Ok(per_origin.iter().sum::<f64>() / per_origin.len() as f64)
}

/// Mean transition of a model trained on standardized data, mapped back to
/// the original scale: `σ f((x − μ)/σ) + μ` per dimension.
pub fn mean_transition_original(model: &SsmModel, ds: &Dataset, x: &Tensor) -> Result<Tensor> {
    match &ds.stats {
        Some(s) => Ok(s.invert(&model.mean_transition(&s.apply(x))?)),
        None => model.mean_transition(x),
    }
}
