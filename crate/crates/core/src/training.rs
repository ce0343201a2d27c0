//! ELBO assembly and the optimization loop.

use std::collections::BTreeMap;

use crate::autodiff::{Adam, StepOutcome, Tape, Tensor, Var};
use crate::enkf::{self, FilterNoise, FilterRun};
use crate::error::{Error, Result};
use crate::flows::WeightNoise;
use crate::gp;
use crate::model::{BoundModel, SsmModel};
use crate::rng::{stream, Rng, Stream};

/// One ELBO evaluation split into its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboReport {
    pub total: f64,
    pub loglik: f64,
    pub kl_u: f64,
    pub kl_w: f64,
    pub kl_x0: f64,
    pub iteration: usize,
}

impl ElboReport {
    /// `loglik − kl_u − kl_w − kl_x0`, evaluated left to right.
    pub fn recompose(&self) -> f64 {
        self.loglik - self.kl_u - self.kl_w - self.kl_x0
    }
}

/// Every random draw one ELBO evaluation consumes.
#[derive(Debug, Clone)]
pub struct EpochNoise {
    pub weights: Option<WeightNoise>,
    pub filter: FilterNoise,
}

/// Seeded generators for the per-iteration draws.
pub struct NoiseSource {
    filter: Rng,
    gp: Rng,
    weights: Rng,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        NoiseSource {
            filter: stream(seed, Stream::FilterNoise),
            gp: stream(seed, Stream::GpDraws),
            weights: stream(seed, Stream::WeightDraws),
        }
    }

    pub fn draw(&mut self, model: &SsmModel, members: usize, steps: usize) -> EpochNoise {
        let cfg = &model.config;
        EpochNoise {
            weights: model.draw_weight_noise(&mut self.weights),
            filter: FilterNoise::draw(
                members,
                cfg.state_dim,
                cfg.obs_dim,
                model.gp_draws(),
                steps,
                &mut self.filter,
                &mut self.gp,
            ),
        }
    }
}

/// `KL(N(m₀, L₀L₀ᵀ) ‖ N(0, I))` with `L₀` the lower triangle of `chol`.
pub fn kl_x0(tape: &mut Tape, mean: Var, chol: Var) -> Var {
    let [d, _] = tape.shape(chol);
    let l = tape.tril(chol);
    let tr = tape.sum_squares(l);
    let mm = tape.sum_squares(mean);
    let diag = tape.diag(l);
    let sq = tape.square(diag);
    let logs = tape.log(sq);
    let logdet = tape.sum(logs);
    let a = tape.add(tr, mm);
    let b = tape.sub(a, logdet);
    let c = tape.offset(b, -(d as f64));
    tape.scale(c, 0.5)
}

/// ELBO graph nodes. Absent KL terms are `None`.
pub struct ElboGraph {
    pub bound: BoundModel,
    pub run: FilterRun,
    pub total: Var,
    pub loglik: Var,
    pub kl_u: Option<Var>,
    pub kl_w: Option<Var>,
    pub kl_x0: Option<Var>,
}

/// Records the single-sample ELBO on `tape`. The neural variants carry no
/// inducing or initial-state KL; deterministic weights carry no weight KL.
pub fn build_elbo(tape: &mut Tape, model: &SsmModel, ys: &Tensor, noise: &EpochNoise) -> Result<ElboGraph> {
    let bound = model.bind(tape, noise.weights.as_ref())?;
    let initial = enkf::initial_ensemble(tape, bound.x0_mean, bound.x0_chol, &noise.filter.initial);
    let run = enkf::run_filter(
        tape,
        &bound.transition,
        &bound.emission,
        bound.log_q,
        initial,
        ys,
        &noise.filter,
    )?;
    let mut kl_u: Option<Var> = None;
    for g in &bound.gps {
        let k = gp::kl_inducing(tape, g);
        kl_u = Some(match kl_u {
            Some(acc) => tape.add(acc, k),
            None => k,
        });
    }
    let kl_w = match model.network() {
        Some(net) => net.kl(tape, &bound.vars, bound.log_psi)?,
        None => None,
    };
    let kl_x0 = (!model.config.variant.is_neural()).then(|| kl_x0(tape, bound.x0_mean, bound.x0_chol));
    let mut total = run.loglik;
    for term in [kl_u, kl_w, kl_x0].into_iter().flatten() {
        total = tape.sub(total, term);
    }
    Ok(ElboGraph {
        loglik: run.loglik,
        bound,
        run,
        total,
        kl_u,
        kl_w,
        kl_x0,
    })
}

fn report(tape: &Tape, g: &ElboGraph, iteration: usize) -> ElboReport {
    let v = |x: Option<Var>| x.map_or(0.0, |x| tape.item(x));
    ElboReport {
        total: tape.item(g.total),
        loglik: tape.item(g.loglik),
        kl_u: v(g.kl_u),
        kl_w: v(g.kl_w),
        kl_x0: v(g.kl_x0),
        iteration,
    }
}

pub fn elbo(model: &SsmModel, ys: &Tensor, noise: &EpochNoise) -> Result<ElboReport> {
    let mut tape = Tape::new();
    let g = build_elbo(&mut tape, model, ys, noise)?;
    Ok(report(&tape, &g, 0))
}

/// ELBO and its gradient with respect to every trainable parameter.
pub fn elbo_with_grads(model: &SsmModel, ys: &Tensor, noise: &EpochNoise) -> Result<(ElboReport, BTreeMap<String, Tensor>)> {
    let mut tape = Tape::new();
    let g = build_elbo(&mut tape, model, ys, noise)?;
    let rep = report(&tape, &g, 0);
    let grads = tape.backward(g.total)?;
    let out = model
        .trainable_names()
        .into_iter()
        .map(|k| {
            let gk = grads.wrt(g.bound.vars[&k]);
            (k, gk)
        })
        .collect();
    Ok((rep, out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub ensemble_size: usize,
    /// Epochs without smoothed-ELBO improvement before stopping; 0 disables
    /// early stopping.
    pub patience: usize,
    pub smoothing_window: usize,
    pub seed: u64,
    /// Progress is logged every this many epochs.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            learning_rate: 0.005,
            ensemble_size: 200,
            patience: 50,
            smoothing_window: 10,
            seed: 0,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size < 2 {
            return Err(Error::Config(format!("ensemble size must be at least 2, got {}", self.ensemble_size)));
        }
        if self.smoothing_window == 0 || !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("smoothing window must be positive and learning rate non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// One report per attempted epoch; skipped epochs hold NaN totals.
    pub trace: Vec<ElboReport>,
    /// Epoch whose parameters were restored.
    pub best_epoch: usize,
    pub best_smoothed: f64,
    pub stopped_early: bool,
    pub skipped: usize,
}

const MAX_CONSECUTIVE_SKIPS: usize = 3;

fn skippable(e: &Error) -> bool {
    match e {
        Error::NonFinite(_) | Error::Decomposition { .. } => true,
        Error::Filter { source, .. } => skippable(source),
        _ => false,
    }
}

/// Adam ascent on the ELBO. Keeps the parameters with the best
/// window-smoothed ELBO and restores them on return.
pub fn train(model: &mut SsmModel, ys: &Tensor, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut adam = Adam::new(cfg.learning_rate);
    let mut source = NoiseSource::new(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut recent: Vec<f64> = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0usize, model.params.clone());
    let mut since_best = 0;
    let mut consecutive = 0;
    let mut skipped = 0;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        let noise = source.draw(model, cfg.ensemble_size, ys.rows());
        let attempt = elbo_with_grads(model, ys, &noise);
        let (rep, grads) = match attempt {
            Ok((rep, grads)) if rep.total.is_finite() => (rep, grads),
            Ok(_) => (nan_report(epoch), BTreeMap::new()),
            Err(e) if skippable(&e) => {
                log::warn!("epoch {epoch}: {e}");
                (nan_report(epoch), BTreeMap::new())
            }
            Err(e) => return Err(e),
        };
        let rep = ElboReport { iteration: epoch, ..rep };
        trace.push(rep);

        let applied = rep.total.is_finite() && {
            let neg: BTreeMap<String, Tensor> = grads.into_iter().map(|(k, g)| (k, g.scale(-1.0))).collect();
            let snapshot = model.params.clone();
            let outcome = adam.step(&mut model.params, &neg);
            if outcome == StepOutcome::Applied {
                recent.push(rep.total);
                if recent.len() > cfg.smoothing_window {
                    recent.remove(0);
                }
                let smoothed = recent.iter().sum::<f64>() / recent.len() as f64;
                if smoothed > best.0 {
                    best = (smoothed, epoch, snapshot);
                    since_best = 0;
                } else {
                    since_best += 1;
                }
            }
            outcome == StepOutcome::Applied
        };

        if applied {
            consecutive = 0;
        } else {
            skipped += 1;
            consecutive += 1;
            if consecutive >= MAX_CONSECUTIVE_SKIPS {
                return Err(Error::TrainingAborted(format!(
                    "{consecutive} consecutive non-finite steps ending at epoch {epoch}"
                )));
            }
        }
        if cfg.log_every > 0 && epoch % cfg.log_every == 0 {
            log::info!(
                "epoch {epoch}: elbo {:.4} (loglik {:.4}, kl_u {:.4}, kl_w {:.4}, kl_x0 {:.4})",
                rep.total,
                rep.loglik,
                rep.kl_u,
                rep.kl_w,
                rep.kl_x0
            );
        }
        if cfg.patience > 0 && since_best >= cfg.patience {
            stopped_early = true;
            log::info!("early stop at epoch {epoch}, best smoothed elbo {:.4} at epoch {}", best.0, best.1);
            break;
        }
    }
    if best.0.is_finite() {
        model.params = best.2;
    }
    Ok(TrainOutcome {
        trace,
        best_epoch: best.1,
        best_smoothed: best.0,
        stopped_early,
        skipped,
    })
}

fn nan_report(iteration: usize) -> ElboReport {
    ElboReport {
        total: f64::NAN,
        loglik: f64::NAN,
        kl_u: f64::NAN,
        kl_w: f64::NAN,
        kl_x0: f64::NAN,
        iteration,
    }
}
