//! State-space model assembly: named parameter store, model variants and
//! the transitions they bind to a tape.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, Tensor, Var};
use crate::enkf::{Emission, Transition};
use crate::error::{Error, Result};
use crate::flows::{self, FlowKind, Mlp, MlpWeights, WeightMode, WeightNoise};
use crate::gp::{self, KernelVars, PreparedGp, SparseGp, SparseGpVars, DEFAULT_JITTER};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    EtgpssmDnn,
    EtgpssmBnn,
    GpssmIndependent,
    AdEnkfDnn,
    AdEnkfBnn,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::EtgpssmDnn,
        Variant::EtgpssmBnn,
        Variant::GpssmIndependent,
        Variant::AdEnkfDnn,
        Variant::AdEnkfBnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::EtgpssmDnn => "etgpssm-dnn",
            Variant::EtgpssmBnn => "etgpssm-bnn",
            Variant::GpssmIndependent => "gpssm-independent",
            Variant::AdEnkfDnn => "ad-enkf-dnn",
            Variant::AdEnkfBnn => "ad-enkf-bnn",
        }
    }

    pub fn weight_mode(self) -> WeightMode {
        match self {
            Variant::EtgpssmBnn | Variant::AdEnkfBnn => WeightMode::Bayesian,
            _ => WeightMode::Deterministic,
        }
    }

    pub fn is_etgp(self) -> bool {
        matches!(self, Variant::EtgpssmDnn | Variant::EtgpssmBnn)
    }

    pub fn is_neural(self) -> bool {
        matches!(self, Variant::AdEnkfDnn | Variant::AdEnkfBnn)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub state_dim: usize,
    pub obs_dim: usize,
    /// Inducing points per GP.
    pub inducing: usize,
    pub hidden: Vec<usize>,
    pub flow: FlowKind,
    /// Include `R` in the per-step likelihood covariance.
    pub include_r: bool,
    pub learn_emission: bool,
    /// When false `R` stays at `r_init`.
    pub learn_r: bool,
    pub learn_prior_scale: bool,
    /// Weight prior variance `ψ`.
    pub prior_variance: f64,
    /// Diagonal jitter on `K_ZZ`, relative to the signal variance.
    pub gp_jitter: f64,
    pub q_init: f64,
    /// Initial observation-noise variances, one per output.
    pub r_init: Vec<f64>,
}

impl ModelConfig {
    pub fn new(variant: Variant, state_dim: usize, obs_dim: usize) -> Self {
        ModelConfig {
            variant,
            state_dim,
            obs_dim,
            inducing: 20,
            hidden: vec![128, 64],
            flow: FlowKind::Linear,
            include_r: true,
            learn_emission: false,
            learn_r: true,
            learn_prior_scale: false,
            prior_variance: 1.0,
            gp_jitter: DEFAULT_JITTER,
            q_init: 0.1,
            r_init: vec![0.1; obs_dim],
        }
    }

    /// Sets `R` to a tenth of the per-output observation variance.
    pub fn with_observation_variance(mut self, variances: &[f64]) -> Self {
        self.r_init = variances.iter().map(|v| 0.1 * v.max(f64::MIN_POSITIVE)).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.state_dim == 0 || self.obs_dim == 0 {
            return fail("state and observation dimensions must be positive".into());
        }
        if self.obs_dim > self.state_dim && !self.learn_emission {
            return fail(format!(
                "fixed selector emission needs d_y <= d_x, got d_y = {}, d_x = {}",
                self.obs_dim, self.state_dim
            ));
        }
        if self.inducing == 0 && !self.variant.is_neural() {
            return fail("at least one inducing point is required".into());
        }
        if self.r_init.len() != self.obs_dim {
            return fail(format!("{} initial R entries for {} outputs", self.r_init.len(), self.obs_dim));
        }
        if !(self.q_init > 0.0) || self.r_init.iter().any(|r| !(*r > 0.0)) || !(self.prior_variance > 0.0) {
            return fail("noise and prior variances must be positive".into());
        }
        if self.variant.is_neural() && self.flow != FlowKind::Linear {
            return fail("flows apply to etgpssm variants only".into());
        }
        Ok(())
    }
}

pub const EMISSION: &str = "emission.c";
pub const LOG_Q: &str = "noise.log_q";
pub const LOG_R: &str = "noise.log_r";
pub const X0_MEAN: &str = "x0.mean";
pub const X0_CHOL: &str = "x0.chol";
pub const LOG_PSI: &str = "prior.log_psi";
pub const NET: &str = "net";

/// `[I | 0]`, observing the leading `d_y` state coordinates.
pub fn selector(obs_dim: usize, state_dim: usize) -> Tensor {
    Tensor::from_fn(obs_dim, state_dim, |r, c| if r == c { 1.0 } else { 0.0 })
}

/// Model parameters keyed by name.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmModel {
    pub config: ModelConfig,
    pub params: BTreeMap<String, Tensor>,
}

impl SsmModel {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (dx, dy) = (config.state_dim, config.obs_dim);
        let mut params = BTreeMap::new();
        for prefix in gp_prefixes(&config) {
            let gp = SparseGp::init(dx, config.inducing, rng)?;
            params.extend(gp.params(&prefix));
        }
        if let Some(net) = network(&config) {
            params.extend(net.init(rng));
        }
        params.insert(LOG_Q.into(), Tensor::filled(1, dx, config.q_init.ln()));
        let log_r: Vec<f64> = config.r_init.iter().map(|r| r.ln()).collect();
        params.insert(LOG_R.into(), Tensor::row(&log_r));
        params.insert(X0_MEAN.into(), Tensor::zeros(1, dx));
        params.insert(X0_CHOL.into(), Tensor::identity(dx));
        params.insert(EMISSION.into(), selector(dy, dx));
        params.insert(LOG_PSI.into(), Tensor::scalar(config.prior_variance.ln()));
        Ok(SsmModel { config, params })
    }

    pub fn network(&self) -> Option<Mlp> {
        network(&self.config)
    }

    pub fn gp_prefixes(&self) -> Vec<String> {
        gp_prefixes(&self.config)
    }

    pub fn gp(&self, prefix: &str) -> Result<SparseGp> {
        SparseGp::from_params(&self.params, prefix, self.config.gp_jitter)
    }

    /// GP draws consumed per member and step.
    pub fn gp_draws(&self) -> usize {
        self.gp_prefixes().len()
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        match name {
            EMISSION => self.config.learn_emission,
            LOG_R => self.config.learn_r,
            LOG_PSI => self.config.learn_prior_scale && self.config.variant.weight_mode() == WeightMode::Bayesian,
            _ => self.params.contains_key(name),
        }
    }

    pub fn trainable_names(&self) -> BTreeSet<String> {
        self.params.keys().filter(|k| self.is_trainable(k)).cloned().collect()
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.trainable_names().iter().map(|k| self.params[k].len()).sum()
    }

    pub fn param(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    /// Replaces a parameter, keeping its shape.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
        if slot.shape() != value.shape() {
            return Err(Error::shape(
                "set_param",
                format!("{name}: expected {:?}, got {:?}", slot.shape(), value.shape()),
            ));
        }
        *slot = value;
        Ok(())
    }

    pub fn q_diag(&self) -> Vec<f64> {
        self.params[LOG_Q].data().iter().map(|v| v.exp()).collect()
    }

    pub fn r_diag(&self) -> Vec<f64> {
        self.params[LOG_R].data().iter().map(|v| v.exp()).collect()
    }

    pub fn emission(&self) -> &Tensor {
        &self.params[EMISSION]
    }

    pub fn draw_weight_noise(&self, rng: &mut Rng) -> Option<WeightNoise> {
        match self.network() {
            Some(net) if net.mode == WeightMode::Bayesian => Some(net.draw_noise(rng)),
            _ => None,
        }
    }

    /// Binds every parameter as a leaf and assembles the transition.
    /// `weight_noise = None` uses the mean weights.
    pub fn bind(&self, tape: &mut Tape, weight_noise: Option<&WeightNoise>) -> Result<BoundModel> {
        let vars: BTreeMap<String, Var> = self.params.iter().map(|(k, v)| (k.clone(), tape.leaf(v.clone()))).collect();
        let mut gps = Vec::new();
        for prefix in self.gp_prefixes() {
            gps.push(gp::prepare(tape, gp_vars(&vars, &prefix, self.config.gp_jitter))?);
        }
        let net = match self.network() {
            Some(n) => Some(n.sample(tape, &vars, weight_noise)?),
            None => None,
        };
        let transition = match self.config.variant {
            Variant::EtgpssmDnn | Variant::EtgpssmBnn => BoundTransition::Etgp {
                gp: gps[0],
                net: net.expect("etgp network"),
                flow: self.config.flow,
            },
            Variant::GpssmIndependent => BoundTransition::IndependentGp { gps: gps.clone() },
            Variant::AdEnkfDnn | Variant::AdEnkfBnn => BoundTransition::Neural {
                net: net.expect("neural transition network"),
            },
        };
        let emission = Emission {
            c: vars[EMISSION],
            log_r: vars[LOG_R],
            include_r: self.config.include_r,
        };
        Ok(BoundModel {
            log_q: vars[LOG_Q],
            x0_mean: vars[X0_MEAN],
            x0_chol: vars[X0_CHOL],
            log_psi: vars[LOG_PSI],
            gps,
            transition,
            emission,
            vars,
        })
    }
}

fn network(config: &ModelConfig) -> Option<Mlp> {
    let dx = config.state_dim;
    let out = match config.variant {
        Variant::GpssmIndependent => return None,
        Variant::AdEnkfDnn | Variant::AdEnkfBnn => dx,
        Variant::EtgpssmDnn | Variant::EtgpssmBnn => dx * config.flow.params_per_dim(),
    };
    let mut sizes = vec![dx];
    sizes.extend(&config.hidden);
    sizes.push(out);
    Some(Mlp::new(NET, sizes, config.variant.weight_mode()))
}

fn gp_prefixes(config: &ModelConfig) -> Vec<String> {
    match config.variant {
        Variant::EtgpssmDnn | Variant::EtgpssmBnn => vec!["gp".into()],
        Variant::GpssmIndependent => (0..config.state_dim).map(|d| format!("gp{d}")).collect(),
        Variant::AdEnkfDnn | Variant::AdEnkfBnn => vec![],
    }
}

fn gp_vars(vars: &BTreeMap<String, Var>, prefix: &str, jitter: f64) -> SparseGpVars {
    let v = |k: &str| vars[&format!("{prefix}.{k}")];
    SparseGpVars {
        kernel: KernelVars {
            log_sf2: v("log_sf2"),
            log_ls: v("log_ls"),
        },
        z: v("z"),
        m: v("m"),
        s_factor: v("s_factor"),
        jitter,
    }
}

/// A model bound to one tape for one iteration.
pub struct BoundModel {
    pub vars: BTreeMap<String, Var>,
    pub gps: Vec<PreparedGp>,
    pub transition: BoundTransition,
    pub emission: Emission,
    pub log_q: Var,
    pub x0_mean: Var,
    pub x0_chol: Var,
    pub log_psi: Var,
}

pub enum BoundTransition {
    /// One shared GP warped per dimension by network-emitted flows.
    Etgp {
        gp: PreparedGp,
        net: MlpWeights,
        flow: FlowKind,
    },
    /// One GP per state dimension.
    IndependentGp { gps: Vec<PreparedGp> },
    /// Residual network `x + NN(x)`.
    Neural { net: MlpWeights },
}

/// Noise-free ETGP transition `flow_θ(x)(f̃(x))` for every row of `members`.
pub fn etgp_transition(
    tape: &mut Tape,
    gp: &PreparedGp,
    net: &MlpWeights,
    flow: FlowKind,
    members: Var,
    gp_eps: Var,
) -> Var {
    let f = gp::sample(tape, gp, members, gp_eps);
    let theta = flows::flow_params(tape, net, flow, members);
    flows::apply_flow(tape, flow, &theta, f)
}

/// Column `d` of every member's next state comes from GP `d` alone.
pub fn independent_gp_transition(tape: &mut Tape, gps: &[PreparedGp], members: Var, gp_eps: Var) -> Var {
    let cols: Vec<Var> = gps
        .iter()
        .enumerate()
        .map(|(d, g)| {
            let eps = tape.slice_cols(gp_eps, d, d + 1);
            gp::sample(tape, g, members, eps)
        })
        .collect();
    tape.concat_cols(&cols)
}

pub fn neural_transition(tape: &mut Tape, net: &MlpWeights, members: Var) -> Var {
    let delta = flows::mlp_forward(tape, net, members);
    tape.add(members, delta)
}

impl Transition for BoundTransition {
    fn gp_draws(&self) -> usize {
        match self {
            BoundTransition::Etgp { .. } => 1,
            BoundTransition::IndependentGp { gps } => gps.len(),
            BoundTransition::Neural { .. } => 0,
        }
    }

    fn propagate(&self, tape: &mut Tape, members: Var, gp_eps: Var) -> Result<Var> {
        let [n, _] = tape.shape(members);
        let [en, ek] = tape.shape(gp_eps);
        if self.gp_draws() > 0 && (en != n || ek != self.gp_draws()) {
            return Err(Error::shape(
                "propagate",
                format!("GP draws {en}x{ek} for {n} members needing {}", self.gp_draws()),
            ));
        }
        Ok(match self {
            BoundTransition::Etgp { gp, net, flow } => etgp_transition(tape, gp, net, *flow, members, gp_eps),
            BoundTransition::IndependentGp { gps } => independent_gp_transition(tape, gps, members, gp_eps),
            BoundTransition::Neural { net } => neural_transition(tape, net, members),
        })
    }
}

impl SsmModel {
    /// Mean transition at each row of `x` using the mean weights and the GP
    /// predictive mean; the flow is evaluated at the GP mean.
    pub fn mean_transition(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, None)?;
        let xv = tape.leaf(x.clone());
        let [n, _] = x.shape();
        let zeros = tape.leaf(Tensor::zeros(n, bound.transition.gp_draws()));
        let out = bound.transition.propagate(&mut tape, xv, zeros)?;
        Ok(tape.value(out).clone())
    }
}
