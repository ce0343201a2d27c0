//! End-to-end experiment runs: data, training, evaluation and artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::autodiff::Tensor;
use crate::checkpoint::Checkpoint;
use crate::config::{ConfigText, DataSource, Experiment};
use crate::error::{Error, Result};
use crate::eval::{self, Dynamics, Filtered};
use crate::metrics::{self, FilterMetrics};
use crate::model::SsmModel;
use crate::rng::{normal_tensor, stream, Stream};
use crate::systems::{self, kink_f, Dataset, SystemKind};
use crate::training::{self, ElboReport, TrainOutcome};

/// Environment variable naming the directory that holds run outputs.
pub const OUTPUT_ROOT_ENV: &str = "ETGPSSM_OUTPUT_ROOT";

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// Writes through a temporary sibling and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Raw data, the standardized copy used for training and a short
/// description for reports.
pub fn load_data(exp: &Experiment) -> Result<(Dataset, Dataset, String)> {
    let (raw, desc) = match &exp.data {
        DataSource::Synthetic(sys) => {
            let desc = match sys.kind {
                SystemKind::Kink => format!("kink(r_var={},q_var={},T={})", sys.r_var, sys.q_var, sys.steps),
                SystemKind::Lorenz96 => format!("lorenz96(d_x={},r_var={},T={})", sys.state_dim, sys.r_var, sys.steps),
            };
            (sys.simulate()?, desc)
        }
        DataSource::Csv { path, .. } => (systems::load_csv(path)?, path.display().to_string()),
    };
    let std = systems::split_standardize(&raw, exp.split)?;
    Ok((raw, std, desc))
}

/// A trained model together with its data.
pub struct Trained {
    pub raw: Dataset,
    pub data: Dataset,
    pub description: String,
    pub model: SsmModel,
    pub outcome: TrainOutcome,
}

pub fn fit(exp: &Experiment) -> Result<Trained> {
    let (raw, data, description) = load_data(exp)?;
    let mut cfg = exp.model.clone();
    cfg.obs_dim = data.obs_dim();
    let train_ys = data.train_ys();
    let variances: Vec<f64> = systems::Standardization::fit(&train_ys).std.iter().map(|s| s * s).collect();
    cfg = cfg.with_observation_variance(&variances);
    if let Some(known) = &exp.obs_var {
        let scale: Vec<f64> = match &data.stats {
            Some(s) => s.std.iter().map(|v| v * v).collect(),
            None => vec![1.0; cfg.obs_dim],
        };
        cfg.r_init = match known.len() {
            1 => scale.iter().map(|s| known[0] / s).collect(),
            n if n == cfg.obs_dim => known.iter().zip(&scale).map(|(k, s)| k / s).collect(),
            n => return Err(Error::Config(format!("{n} observation variances for {} outputs", cfg.obs_dim))),
        };
        cfg.learn_r = false;
    }
    let mut model = SsmModel::new(cfg, &mut stream(exp.seed, Stream::Init))?;
    let outcome = training::train(&mut model, &train_ys, &exp.train)?;
    Ok(Trained {
        raw,
        data,
        description,
        model,
        outcome,
    })
}

/// Post-training evaluation in the original data scale.
pub struct Evaluation {
    pub filtered: Filtered,
    /// Filtered ensembles mapped back to the original scale.
    pub ensembles: Vec<Tensor>,
    /// Against the true states, when they are known and observed directly.
    pub metrics: Option<FilterMetrics>,
    pub observation_rmse: Option<f64>,
    pub forecast_rmse: Option<f64>,
}

fn unscale_ensembles(data: &Dataset, ens: &[Tensor]) -> Vec<Tensor> {
    match &data.stats {
        Some(s) if ens.first().is_some_and(|e| e.cols() == s.mean.len()) => ens.iter().map(|e| s.invert(e)).collect(),
        _ => ens.to_vec(),
    }
}

pub fn evaluate(exp: &Experiment, t: &Trained) -> Result<Evaluation> {
    let dynamics = Dynamics::Model(&t.model);
    let members = exp.eval.forecast.members;
    let filtered = eval::filter(&dynamics, &t.data.ys, members, exp.seed)?;
    let ensembles = unscale_ensembles(&t.data, filtered.posterior());
    let direct = t
        .raw
        .states
        .as_ref()
        .filter(|s| s.cols() == t.raw.obs_dim() && s.cols() == t.model.config.state_dim);
    let (metrics, observation_rmse) = match direct {
        Some(states) => {
            let mut m = metrics::filter_metrics(&ensembles, states)?;
            if exp.eval.fair_crps {
                m.crps = metrics::crps(&ensembles, states, true)?;
            }
            (Some(m), Some(metrics::rmse(&t.raw.ys, states)?))
        }
        None => (None, None),
    };
    let forecast_rmse = if t.data.len() - t.data.split > exp.eval.forecast.horizon {
        Some(eval::forecast(&dynamics, &t.data, &exp.eval.forecast)?)
    } else {
        None
    };
    Ok(Evaluation {
        filtered,
        ensembles,
        metrics,
        observation_rmse,
        forecast_rmse,
    })
}

/// One row of the per-run metrics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub variant: String,
    pub dataset: String,
    pub seed: u64,
    pub rmse: f64,
    pub spread: f64,
    pub coverage: f64,
    pub crps: f64,
    pub forecast_rmse: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub variant: String,
    pub dataset: String,
    pub output_dir: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub skipped_steps: usize,
    pub config: String,
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub manifest: RunManifest,
    pub metrics: MetricsRow,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn csv_bytes<F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>>(f: F) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    f(&mut w).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

fn trace_csv(trace: &[ElboReport]) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record(["epoch", "elbo", "loglik", "kl_u", "kl_w", "kl_x0"])?;
        for r in trace {
            w.write_record([
                r.iteration.to_string(),
                r.total.to_string(),
                r.loglik.to_string(),
                r.kl_u.to_string(),
                r.kl_w.to_string(),
                r.kl_x0.to_string(),
            ])?;
        }
        Ok(())
    })
}

/// `t`, true state (when known), ensemble mean and 2.5 / 97.5 % quantiles
/// per dimension.
fn filtered_csv(ensembles: &[Tensor], states: Option<&Tensor>) -> Result<Vec<u8>> {
    let d = ensembles.first().map_or(0, |e| e.cols());
    let states = states.filter(|s| s.cols() == d);
    csv_bytes(|w| {
        let mut header = vec!["t".to_string()];
        for i in 0..d {
            if states.is_some() {
                header.push(format!("x_{i}"));
            }
            header.extend([format!("mean_{i}"), format!("q025_{i}"), format!("q975_{i}")]);
        }
        w.write_record(&header)?;
        for (t, e) in ensembles.iter().enumerate() {
            let mut row = vec![(t + 1).to_string()];
            let mean = e.mean_rows();
            for i in 0..d {
                if let Some(s) = states {
                    row.push(s.get(t, i).to_string());
                }
                let mut col: Vec<f64> = (0..e.rows()).map(|r| e.get(r, i)).collect();
                col.sort_by(f64::total_cmp);
                row.push(mean.get(0, i).to_string());
                row.push(metrics::quantile(&col, 0.025).to_string());
                row.push(metrics::quantile(&col, 0.975).to_string());
            }
            w.write_record(&row)?;
        }
        Ok(())
    })
}

/// Learned mean transition with a ±2σ band (function draws plus process
/// noise) on a grid, in the original scale, next to the true transition
/// when known. One-dimensional models only.
pub fn transition_grid(exp: &Experiment, t: &Trained, draws: usize) -> Result<Vec<(f64, Option<f64>, f64, f64, f64)>> {
    let (lo, hi, n) = exp.eval.grid;
    let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n.max(2) - 1) as f64).collect();
    let x = Tensor::column(&xs);
    let mean = eval::mean_transition_original(&t.model, &t.data, &x)?;
    let stats = t.data.stats.clone().unwrap_or(systems::Standardization {
        mean: vec![0.0],
        std: vec![1.0],
    });
    let xz = stats.apply(&x);
    let mut rng = stream(exp.seed, Stream::Eval);
    let mut sum = vec![0.0; n];
    let mut sumsq = vec![0.0; n];
    for _ in 0..draws {
        let mut tape = crate::autodiff::Tape::new();
        let bound = t.model.bind(&mut tape, None)?;
        let xv = tape.leaf(xz.clone());
        let eps = tape.leaf(normal_tensor(&mut rng, n, t.model.gp_draws()));
        use crate::enkf::Transition;
        let out = bound.transition.propagate(&mut tape, xv, eps)?;
        for (i, v) in tape.value(out).data().iter().enumerate() {
            sum[i] += v;
            sumsq[i] += v * v;
        }
    }
    let q = t.model.q_diag()[0];
    let true_f = matches!(&exp.data, DataSource::Synthetic(s) if s.kind == SystemKind::Kink);
    Ok(xs
        .iter()
        .enumerate()
        .map(|(i, &xi)| {
            let m = sum[i] / draws as f64;
            let var = (sumsq[i] / draws as f64 - m * m).max(0.0) + q;
            let sd = var.sqrt() * stats.std[0];
            let mu = mean.get(i, 0);
            (xi, true_f.then(|| kink_f(xi)), mu, mu - 2.0 * sd, mu + 2.0 * sd)
        })
        .collect())
}

/// Trains, evaluates and writes all artifacts to `out_dir`.
pub fn run(exp: &Experiment, out_dir: &Path) -> Result<RunResult> {
    let started = unix_now();
    let clock = Instant::now();
    std::fs::create_dir_all(out_dir)?;
    let trained = fit(exp)?;
    let ev = evaluate(exp, &trained)?;
    let wall = clock.elapsed().as_secs_f64();
    let hash = exp.config.hash();

    let m = ev.metrics.clone();
    let row = MetricsRow {
        variant: exp.model.variant.name().into(),
        dataset: trained.description.clone(),
        seed: exp.seed,
        rmse: m.as_ref().map_or(f64::NAN, |m| m.rmse),
        spread: m.as_ref().map_or(f64::NAN, |m| m.spread),
        coverage: m.as_ref().map_or(f64::NAN, |m| m.coverage),
        crps: m.as_ref().map_or(f64::NAN, |m| m.crps),
        forecast_rmse: ev.forecast_rmse.unwrap_or(f64::NAN),
        wall_time: wall,
    };

    let mut artifacts = BTreeMap::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<()> {
        atomic_write(&out_dir.join(name), &bytes)?;
        artifacts.insert(name.replace('.', "_"), name.to_string());
        Ok(())
    };
    put("checkpoint.json", Checkpoint::of(&trained.model, &hash).to_json()?.into_bytes())?;
    put("elbo_trace.csv", trace_csv(&trained.outcome.trace)?)?;
    put("metrics.csv", csv_bytes(|w| w.serialize(&row))?)?;
    let sidecar = serde_json::json!({
        "metrics": row,
        "filter_metrics": ev.metrics,
        "observation_rmse": ev.observation_rmse,
        "config_hash": hash,
        "config": exp.config.canonical(),
        "forecast": {"horizon": exp.eval.forecast.horizon, "stride": exp.eval.forecast.stride},
        "train_steps": trained.data.split,
    });
    put("metrics.json", serde_json::to_string_pretty(&sidecar)?.into_bytes())?;
    put("filtered.csv", filtered_csv(&ev.ensembles, trained.raw.states.as_ref())?)?;
    if trained.model.config.state_dim == 1 {
        let grid = transition_grid(exp, &trained, 256)?;
        put(
            "transition.csv",
            csv_bytes(|w| {
                w.write_record(["x", "true_f", "learned_mean", "lower", "upper"])?;
                for (x, f, m, lo, hi) in &grid {
                    let f = f.map_or(String::new(), |v| v.to_string());
                    w.write_record([x.to_string(), f, m.to_string(), lo.to_string(), hi.to_string()])?;
                }
                Ok(())
            })?,
        )?;
    }
    artifacts.insert("manifest_json".into(), "manifest.json".into());
    let manifest = RunManifest {
        config_hash: hash,
        seed: exp.seed,
        variant: exp.model.variant.name().into(),
        dataset: trained.description,
        output_dir: out_dir.display().to_string(),
        started_unix: started,
        finished_unix: unix_now(),
        epochs_run: trained.outcome.trace.len(),
        best_epoch: trained.outcome.best_epoch,
        stopped_early: trained.outcome.stopped_early,
        skipped_steps: trained.outcome.skipped,
        config: exp.config.canonical(),
        artifacts,
    };
    atomic_write(&out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(RunResult { manifest, metrics: row })
}

/// Outcome of a sweep.
#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub runs: usize,
    pub failures: Vec<(String, String)>,
    pub aggregate_path: PathBuf,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// Runs every grid point into its own subdirectory and aggregates the
/// metrics over seeds: one row per cell of the non-seed keys with mean and
/// standard deviation columns. Failed runs are recorded and skipped.
pub fn sweep(config: &ConfigText, out_dir: &Path) -> Result<SweepSummary> {
    std::fs::create_dir_all(out_dir)?;
    let points = config.expand_grid()?;
    let cell_keys: Vec<String> = config.grid.keys().filter(|k| *k != "run.seed").cloned().collect();
    let mut cells: BTreeMap<Vec<String>, Vec<MetricsRow>> = BTreeMap::new();
    let mut failures = Vec::new();
    for (i, (point, cfg)) in points.iter().enumerate() {
        let label = if point.is_empty() {
            format!("run_{i:03}")
        } else {
            let parts: Vec<String> = point.iter().map(|(k, v)| format!("{k}={v}")).collect();
            format!("run_{i:03}_{}", parts.join("_"))
        };
        let cell: Vec<String> = cell_keys
            .iter()
            .map(|k| cfg.get(k).unwrap_or("").to_string())
            .collect();
        let result = cfg.experiment().and_then(|exp| run(&exp, &out_dir.join(&label)));
        match result {
            Ok(r) => cells.entry(cell).or_default().push(r.metrics),
            Err(e) => {
                log::error!("{label}: {e}");
                cells.entry(cell).or_default();
                failures.push((label, e.to_string()));
            }
        }
    }
    let metric_names = ["rmse", "spread", "coverage", "crps", "forecast_rmse", "wall_time"];
    let bytes = csv_bytes(|w| {
        let mut header: Vec<String> = cell_keys.clone();
        header.push("runs".into());
        for m in metric_names {
            header.push(format!("{m}_mean"));
            header.push(format!("{m}_std"));
        }
        w.write_record(&header)?;
        for (cell, rows) in &cells {
            let mut rec = cell.clone();
            rec.push(rows.len().to_string());
            for m in metric_names {
                let vals: Vec<f64> = rows
                    .iter()
                    .map(|r| match m {
                        "rmse" => r.rmse,
                        "spread" => r.spread,
                        "coverage" => r.coverage,
                        "crps" => r.crps,
                        "forecast_rmse" => r.forecast_rmse,
                        _ => r.wall_time,
                    })
                    .collect();
                let (mu, sd) = mean_std(&vals);
                rec.push(mu.to_string());
                rec.push(sd.to_string());
            }
            w.write_record(&rec)?;
        }
        Ok(())
    })?;
    let aggregate_path = out_dir.join("aggregate.csv");
    atomic_write(&aggregate_path, &bytes)?;
    Ok(SweepSummary {
        runs: points.len(),
        failures,
        aggregate_path,
    })
}
