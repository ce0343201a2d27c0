//! Experiment configuration: `key = value` lines grouped under `[section]`
//! headers, `#` comments. Every key is addressed as `section.key`.
//!
//! ```text
//! [system]
//! kind = kink
//! r_var = 0.008
//!
//! [model]
//! variant = etgpssm-dnn
//!
//! [sweep]
//! system.r_var = 0.0008, 0.008, 0.08, 0.8
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::ForecastConfig;
use crate::flows::FlowKind;
use crate::model::{ModelConfig, Variant};
use crate::systems::{SyntheticSystem, SystemKind};
use crate::training::TrainConfig;

const KNOWN: &[(&str, &[&str])] = &[
    ("run", &["name", "seed", "output"]),
    (
        "system",
        &[
            "kind", "path", "d_x", "steps", "q_var", "r_var", "forcing", "dt", "burn_in", "split", "seed",
        ],
    ),
    (
        "model",
        &[
            "variant",
            "inducing",
            "hidden",
            "flow",
            "include_r",
            "learn_emission",
            "learn_prior_scale",
            "obs_var",
            "prior_variance",
            "q_init",
            "jitter",
        ],
    ),
    (
        "train",
        &["epochs", "learning_rate", "ensemble", "patience", "window", "log_every"],
    ),
    ("eval", &["members", "horizon", "stride", "fair_crps", "grid_min", "grid_max", "grid_points"]),
];

/// Flat, validated `section.key → value` map.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigText {
    pub values: BTreeMap<String, String>,
    /// `section.key → candidate values` from the `[sweep]` section.
    pub grid: BTreeMap<String, Vec<String>>,
}

fn known_key(key: &str) -> bool {
    let Some((section, name)) = key.split_once('.') else {
        return false;
    };
    KNOWN
        .iter()
        .any(|(s, keys)| *s == section && keys.contains(&name))
}

impl ConfigText {
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = ConfigText::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("");
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let column = line.len() - line.trim_start().len() + 1;
            let err = |column: usize, message: String| Error::ConfigParse {
                line: line_no,
                column,
                message,
            };
            if let Some(rest) = trimmed.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(column + trimmed.len(), "expected `]`".into()))?
                    .trim();
                if name != "sweep" && !KNOWN.iter().any(|(s, _)| *s == name) {
                    return Err(err(column + 1, format!("unknown section `{name}`")));
                }
                section = Some(name.to_string());
                continue;
            }
            let Some((k, v)) = trimmed.split_once('=') else {
                return Err(err(column, "expected `key = value`".into()));
            };
            let (k, v) = (k.trim(), v.trim());
            let section = section
                .as_deref()
                .ok_or_else(|| err(column, "key outside of a section".into()))?;
            if v.is_empty() {
                return Err(err(column + trimmed.find('=').unwrap_or(0) + 1, format!("empty value for `{k}`")));
            }
            if section == "sweep" {
                if !known_key(k) {
                    return Err(err(column, format!("unknown sweep key `{k}`")));
                }
                let vals: Vec<String> = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
                out.grid.insert(k.to_string(), vals);
            } else {
                let full = format!("{section}.{k}");
                if !known_key(&full) {
                    return Err(err(column, format!("unknown key `{k}` in [{section}]")));
                }
                out.values.insert(full, v.to_string());
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets `section.key = value` (command-line overrides).
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !known_key(key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Sorted `section.key=value` lines (the grid is not included).
    pub fn canonical(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("invalid value `{v}` for {key}"))),
        }
    }

    /// Cartesian product of the grid, each point applied on top of `self`.
    /// An empty grid gives `self` alone.
    pub fn expand_grid(&self) -> Result<Vec<(Vec<(String, String)>, ConfigText)>> {
        let mut points: Vec<Vec<(String, String)>> = vec![vec![]];
        for (k, vals) in &self.grid {
            if vals.is_empty() {
                return Err(Error::Config(format!("sweep key {k} has no values")));
            }
            points = points
                .into_iter()
                .flat_map(|p| {
                    vals.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push((k.clone(), v.clone()));
                        q
                    })
                })
                .collect();
        }
        points
            .into_iter()
            .map(|p| {
                let mut cfg = self.clone();
                cfg.grid.clear();
                for (k, v) in &p {
                    cfg.set(k, v.clone())?;
                }
                Ok((p, cfg))
            })
            .collect()
    }

    pub fn experiment(&self) -> Result<Experiment> {
        Experiment::from_config(self)
    }
}

/// Where the data come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSystem),
    Csv { path: PathBuf, state_dim: usize },
}

/// Post-training evaluation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub forecast: ForecastConfig,
    pub fair_crps: bool,
    /// Range and resolution of the plotted transition grid (1-d systems).
    pub grid: (f64, f64, usize),
}

/// Fully typed run description.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub name: String,
    pub seed: u64,
    pub output: Option<String>,
    pub data: DataSource,
    pub split: f64,
    pub model: ModelConfig,
    /// Known observation-noise variances in data units; fixes `R` when set.
    pub obs_var: Option<Vec<f64>>,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub config: ConfigText,
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{v}` for {key}"))),
    }
}

impl Experiment {
    pub fn from_config(c: &ConfigText) -> Result<Self> {
        let seed: u64 = c.parsed("run.seed", 0)?;
        let kind = c.get("system.kind").unwrap_or("kink");
        let data = match kind {
            "csv" => {
                let path = c
                    .get("system.path")
                    .ok_or_else(|| Error::Config("system.path is required for csv data".into()))?;
                DataSource::Csv {
                    path: PathBuf::from(path),
                    state_dim: c.parsed("system.d_x", 4)?,
                }
            }
            other => {
                let kind: SystemKind = other.parse()?;
                let mut sys = match kind {
                    SystemKind::Kink => SyntheticSystem::kink(0.008),
                    SystemKind::Lorenz96 => SyntheticSystem::lorenz96(20),
                };
                sys.state_dim = c.parsed("system.d_x", sys.state_dim)?;
                sys.steps = c.parsed("system.steps", sys.steps)?;
                sys.q_var = c.parsed("system.q_var", sys.q_var)?;
                sys.r_var = c.parsed("system.r_var", sys.r_var)?;
                sys.forcing = c.parsed("system.forcing", sys.forcing)?;
                sys.dt = c.parsed("system.dt", sys.dt)?;
                sys.burn_in = c.parsed("system.burn_in", sys.burn_in)?;
                sys.seed = c.parsed("system.seed", seed)?;
                if kind == SystemKind::Kink && sys.state_dim != 1 {
                    return Err(Error::Config("the kink system is one-dimensional".into()));
                }
                DataSource::Synthetic(sys)
            }
        };
        let default_split = if matches!(data, DataSource::Csv { .. }) { 0.5 } else { 1.0 };
        let split: f64 = c.parsed("system.split", default_split)?;

        let variant: Variant = c.get("model.variant").unwrap_or("etgpssm-dnn").parse()?;
        let (dx, dy) = match &data {
            DataSource::Synthetic(s) => (s.state_dim, s.state_dim),
            DataSource::Csv { state_dim, .. } => (*state_dim, 0),
        };
        let mut model = ModelConfig::new(variant, dx, dy.max(1));
        model.inducing = c.parsed("model.inducing", model.inducing)?;
        if let Some(h) = c.get("model.hidden") {
            model.hidden = h
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("invalid hidden sizes `{h}`")))?;
        }
        model.flow = match c.get("model.flow").unwrap_or("linear") {
            "linear" => FlowKind::Linear,
            "sal" | "sinh-arcsinh" => FlowKind::SinhArcsinh,
            f => return Err(Error::Config(format!("unknown flow `{f}`"))),
        };
        for (key, slot) in [
            ("model.include_r", &mut model.include_r),
            ("model.learn_emission", &mut model.learn_emission),
            ("model.learn_prior_scale", &mut model.learn_prior_scale),
        ] {
            if let Some(v) = c.get(key) {
                *slot = parse_bool(key, v)?;
            }
        }
        model.prior_variance = c.parsed("model.prior_variance", model.prior_variance)?;
        let obs_var = match c.get("model.obs_var") {
            None => None,
            Some(v) => Some(
                v.split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .ok()
                    .filter(|v| v.iter().all(|x| *x > 0.0))
                    .ok_or_else(|| Error::Config(format!("invalid observation variances `{v}`")))?,
            ),
        };
        model.q_init = c.parsed("model.q_init", model.q_init)?;
        model.gp_jitter = c.parsed("model.jitter", model.gp_jitter)?;

        let d = TrainConfig::default();
        let train = TrainConfig {
            epochs: c.parsed("train.epochs", d.epochs)?,
            learning_rate: c.parsed("train.learning_rate", d.learning_rate)?,
            ensemble_size: c.parsed("train.ensemble", d.ensemble_size)?,
            patience: c.parsed("train.patience", d.patience)?,
            smoothing_window: c.parsed("train.window", d.smoothing_window)?,
            seed,
            log_every: c.parsed("train.log_every", d.log_every)?,
        };
        train.validate()?;
        let fd = ForecastConfig::default();
        let eval = EvalConfig {
            forecast: ForecastConfig {
                horizon: c.parsed("eval.horizon", fd.horizon)?,
                stride: c.parsed("eval.stride", fd.stride)?,
                members: c.parsed("eval.members", train.ensemble_size)?,
                seed,
            },
            fair_crps: c.get("eval.fair_crps").map_or(Ok(false), |v| parse_bool("eval.fair_crps", v))?,
            grid: (
                c.parsed("eval.grid_min", -3.0)?,
                c.parsed("eval.grid_max", 1.5)?,
                c.parsed("eval.grid_points", 451)?,
            ),
        };
        Ok(Experiment {
            name: c
                .get("run.name")
                .map_or_else(|| format!("{kind}-{variant}-seed{seed}"), str::to_string),
            seed,
            output: c.get("run.output").map(str::to_string),
            data,
            split,
            model,
            obs_var,
            train,
            eval,
            config: c.clone(),
        })
    }
}
