//! Parameter counting and transition timing for the scaling comparison
//! between the shared-GP model and independent per-dimension GPs.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::autodiff::{Tape, Tensor};
use crate::enkf::{predict_ensemble, StepNoise};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, SsmModel, Variant, NET};
use crate::rng::{normal_tensor, stream, Stream};

/// Model families compared in the scaling study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Etgpssm,
    GpssmIndependent,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Etgpssm => "etgpssm",
            Family::GpssmIndependent => "gpssm-independent",
        }
    }

    pub fn variant(self) -> Variant {
        match self {
            Family::Etgpssm => Variant::EtgpssmDnn,
            Family::GpssmIndependent => Variant::GpssmIndependent,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "etgpssm" | "etgpssm-dnn" | "etgpssm-bnn" => Ok(Family::Etgpssm),
            "gpssm-independent" => Ok(Family::GpssmIndependent),
            _ => Err(Error::Config(format!("no parameter-count convention for `{s}`"))),
        }
    }
}

/// Kernel-side scalars per GP in the counting convention: signal variance,
/// one shared lengthscale and the process-noise level.
pub const KERNEL_SCALARS: u64 = 3;

/// Per-GP count `M d + 3 + M + M²`.
pub fn gp_term(dim: u64, inducing: u64) -> u64 {
    inducing * dim + KERNEL_SCALARS + inducing + inducing * inducing
}

/// `258 d + 8384`: the `d → 128 → 64 → 2d` flow network with biases.
pub fn network_term(dim: u64) -> u64 {
    258 * dim + 8384
}

/// Weights plus biases of a fully connected network.
pub fn layer_count(sizes: &[usize]) -> u64 {
    sizes.windows(2).map(|w| (w[0] * w[1] + w[1]) as u64).sum()
}

pub fn count_parameters(family: Family, dim: u64, inducing: u64) -> u64 {
    match family {
        Family::Etgpssm => gp_term(dim, inducing) + network_term(dim),
        Family::GpssmIndependent => inducing * dim * dim + (KERNEL_SCALARS + inducing + inducing * inducing) * dim,
    }
}

/// Trainable scalars of an instantiated model, grouped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamBreakdown {
    /// Inducing inputs, means and covariance factors over all GPs.
    pub gp_variational: u64,
    /// Signal variances and (ARD) lengthscales over all GPs.
    pub gp_kernel: u64,
    pub network: u64,
    /// Process and observation noise, initial state, prior scale, emission.
    pub other: u64,
    pub num_gps: u64,
}

impl ParamBreakdown {
    pub fn of(model: &SsmModel) -> Self {
        let mut b = ParamBreakdown {
            gp_variational: 0,
            gp_kernel: 0,
            network: 0,
            other: 0,
            num_gps: model.gp_prefixes().len() as u64,
        };
        for name in model.trainable_names() {
            let n = model.params[&name].len() as u64;
            let field = name.rsplit('.').next().unwrap_or("");
            if name.starts_with(&format!("{NET}.")) {
                b.network += n;
            } else if name.starts_with("gp") && matches!(field, "z" | "m" | "s_factor") {
                b.gp_variational += n;
            } else if name.starts_with("gp") {
                b.gp_kernel += n;
            } else {
                b.other += n;
            }
        }
        b
    }

    /// Total under the counting convention: each GP contributes exactly
    /// [`KERNEL_SCALARS`] kernel-side scalars.
    pub fn convention_total(&self) -> u64 {
        self.gp_variational + KERNEL_SCALARS * self.num_gps + self.network
    }
}

fn timing_model(family: Family, dim: usize, inducing: usize) -> Result<SsmModel> {
    let mut cfg = ModelConfig::new(family.variant(), dim, dim);
    cfg.inducing = inducing;
    SsmModel::new(cfg, &mut stream(0, Stream::Init))
}

/// Median wall time (seconds) of one ensemble transition: binding the model
/// (including the inducing-point factorizations) and propagating `members`
/// states one step. Three untimed warm-up runs precede the measurements.
pub fn time_transition(family: Family, dim: usize, inducing: usize, members: usize, repetitions: usize) -> Result<f64> {
    if repetitions == 0 {
        return Err(Error::Config("repetitions must be positive".into()));
    }
    let model = timing_model(family, dim, inducing)?;
    let mut rng = stream(0, Stream::Eval);
    let x = normal_tensor(&mut rng, members, dim);
    let noise = StepNoise {
        gp: normal_tensor(&mut rng, members, model.gp_draws()),
        process: normal_tensor(&mut rng, members, dim),
        obs: Tensor::zeros(members, dim),
    };
    let run = || -> Result<f64> {
        let start = Instant::now();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, None)?;
        let xv = tape.leaf(x.clone());
        let out = predict_ensemble(&mut tape, &bound.transition, xv, bound.log_q, &noise)?;
        std::hint::black_box(tape.value(out));
        Ok(start.elapsed().as_secs_f64())
    };
    for _ in 0..3 {
        run()?;
    }
    let mut times = (0..repetitions).map(|_| run()).collect::<Result<Vec<_>>>()?;
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub variant: String,
    pub d_x: usize,
    #[serde(rename = "M")]
    pub inducing: usize,
    pub param_count: u64,
    pub median_seconds: f64,
}

pub fn scaling_study(
    families: &[Family],
    dims: &[usize],
    inducing: usize,
    members: usize,
    repetitions: usize,
) -> Result<Vec<ScalingRow>> {
    let mut rows = Vec::new();
    for &family in families {
        for &d in dims {
            rows.push(ScalingRow {
                variant: family.name().into(),
                d_x: d,
                inducing,
                param_count: count_parameters(family, d as u64, inducing as u64),
                median_seconds: time_transition(family, d, inducing, members, repetitions)?,
            });
        }
    }
    Ok(rows)
}

pub fn write_scaling_csv(rows: &[ScalingRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_example() {
        assert_eq!(count_parameters(Family::Etgpssm, 100, 100), 54287);
    }

    #[test]
    fn network_term_matches_layers() {
        assert_eq!(network_term(1), 8642);
        for d in [1usize, 7, 100] {
            assert_eq!(network_term(d as u64), layer_count(&[d, 128, 64, 2 * d]));
        }
    }

    #[test]
    fn families_agree_in_one_dimension() {
        for m in [1, 20, 100] {
            assert_eq!(count_parameters(Family::GpssmIndependent, 1, m), gp_term(1, m));
        }
    }

    #[test]
    fn introspection_matches_convention() {
        for (family, d) in [(Family::Etgpssm, 3usize), (Family::GpssmIndependent, 2)] {
            let m = timing_model(family, d, 5).unwrap();
            let b = ParamBreakdown::of(&m);
            assert_eq!(b.convention_total(), count_parameters(family, d as u64, 5));
            assert_eq!(b.gp_kernel, b.num_gps * (1 + d as u64));
        }
    }

    #[test]
    fn single_repetition_is_positive() {
        let t = time_transition(Family::Etgpssm, 2, 4, 10, 1).unwrap();
        assert!(t.is_finite() && t > 0.0);
    }
}
