//! Elementwise flows applied to the shared GP value and the network that
//! emits their parameters from the previous state.

use std::collections::BTreeMap;

use rand::Rng as _;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{normal_tensor, Rng};

/// Initial `log σ_w` for Bayesian weights (a near-deterministic start).
pub const BAYES_LOG_STD_INIT: f64 = -5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlowKind {
    /// `α f̃ + β`.
    #[default]
    Linear,
    /// `α sinh(φ asinh(f̃) − γ) + β`.
    SinhArcsinh,
}

impl FlowKind {
    /// Flow parameters emitted per state dimension.
    pub fn params_per_dim(self) -> usize {
        match self {
            FlowKind::Linear => 2,
            FlowKind::SinhArcsinh => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightMode {
    #[default]
    Deterministic,
    /// Mean-field Gaussian posterior over every weight and bias.
    Bayesian,
}

/// Fully connected ReLU network stored as named parameters
/// `{prefix}.l{i}.w`, `{prefix}.l{i}.b` and, in Bayesian mode, the matching
/// `*_log_std` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub prefix: String,
    pub sizes: Vec<usize>,
    pub mode: WeightMode,
}

/// Weights of one network draw, bound to a tape.
#[derive(Debug, Clone)]
pub struct MlpWeights {
    pub layers: Vec<(Var, Var)>,
}

/// Weight-noise draws for one iteration, keyed like the parameters.
pub type WeightNoise = BTreeMap<String, Tensor>;

impl Mlp {
    pub fn new(prefix: &str, sizes: Vec<usize>, mode: WeightMode) -> Self {
        assert!(sizes.len() >= 2, "network needs input and output sizes");
        Mlp {
            prefix: prefix.to_string(),
            sizes,
            mode,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.l{layer}.w", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.l{layer}.b", self.prefix)
    }

    /// Names of the mean parameters, in layer order.
    pub fn mean_names(&self) -> Vec<String> {
        (0..self.num_layers())
            .flat_map(|l| [self.weight_name(l), self.bias_name(l)])
            .collect()
    }

    /// Number of scalars in one set of weights and biases.
    pub fn weight_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Fan-in scaled uniform initialization; `log σ_w` starts at
    /// [`BAYES_LOG_STD_INIT`] in Bayesian mode.
    pub fn init(&self, rng: &mut Rng) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for l in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = Tensor::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-bound..bound));
            let b = Tensor::from_fn(1, fan_out, |_, _| rng.gen_range(-bound..bound));
            out.push((self.weight_name(l), w));
            out.push((self.bias_name(l), b));
            if self.mode == WeightMode::Bayesian {
                out.push((format!("{}_log_std", self.weight_name(l)), Tensor::filled(fan_in, fan_out, BAYES_LOG_STD_INIT)));
                out.push((format!("{}_log_std", self.bias_name(l)), Tensor::filled(1, fan_out, BAYES_LOG_STD_INIT)));
            }
        }
        out
    }

    /// Standard normal draws for every weight (empty in deterministic mode).
    pub fn draw_noise(&self, rng: &mut Rng) -> WeightNoise {
        let mut out = WeightNoise::new();
        if self.mode == WeightMode::Deterministic {
            return out;
        }
        for l in 0..self.num_layers() {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            out.insert(self.weight_name(l), normal_tensor(rng, i, o));
            out.insert(self.bias_name(l), normal_tensor(rng, 1, o));
        }
        out
    }

    /// One weight draw `w = m_w + σ_w ε`; the point weights in deterministic
    /// mode or when `noise` is `None`.
    pub fn sample(&self, tape: &mut Tape, vars: &BTreeMap<String, Var>, noise: Option<&WeightNoise>) -> Result<MlpWeights> {
        let get = |name: &str| {
            vars.get(name)
                .copied()
                .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
        };
        let mut layers = Vec::with_capacity(self.num_layers());
        for l in 0..self.num_layers() {
            let mut pair = [get(&self.weight_name(l))?, get(&self.bias_name(l))?];
            if let (WeightMode::Bayesian, Some(noise)) = (self.mode, noise) {
                for (slot, name) in pair.iter_mut().zip([self.weight_name(l), self.bias_name(l)]) {
                    let log_std = get(&format!("{name}_log_std"))?;
                    let eps = noise
                        .get(&name)
                        .ok_or_else(|| Error::Contract(format!("no weight noise for {name}")))?;
                    let eps = tape.leaf(eps.clone());
                    let std = tape.exp(log_std);
                    let scaled = tape.mul(std, eps);
                    *slot = tape.add(*slot, scaled);
                }
            }
            layers.push((pair[0], pair[1]));
        }
        Ok(MlpWeights { layers })
    }

    /// `Σ KL(N(m, σ²) ‖ N(0, ψ))` over all weights; zero (and no graph) in
    /// deterministic mode.
    pub fn kl(&self, tape: &mut Tape, vars: &BTreeMap<String, Var>, log_psi: Var) -> Result<Option<Var>> {
        if self.mode == WeightMode::Deterministic {
            return Ok(None);
        }
        let mut total: Option<Var> = None;
        for name in self.mean_names() {
            let mean = vars[&name];
            let log_std = *vars
                .get(&format!("{name}_log_std"))
                .ok_or_else(|| Error::Config(format!("missing parameter {name}_log_std")))?;
            let term = kl_diag_gaussian(tape, mean, log_std, log_psi);
            total = Some(match total {
                Some(t) => tape.add(t, term),
                None => term,
            });
        }
        Ok(total)
    }
}

/// `Σ_i ½[(σ_i² + m_i²)/ψ − 1 − ln σ_i² + ln ψ]`.
pub fn kl_diag_gaussian(tape: &mut Tape, mean: Var, log_std: Var, log_psi: Var) -> Var {
    let [r, c] = tape.shape(mean);
    let n = (r * c) as f64;
    let two_log_std = tape.scale(log_std, 2.0);
    let var = tape.exp(two_log_std);
    let msq = tape.square(mean);
    let s = tape.add(var, msq);
    let s = tape.sum(s);
    let neg_psi = tape.neg(log_psi);
    let inv_psi = tape.exp(neg_psi);
    let a = tape.mul(s, inv_psi);
    let log_var_sum = tape.sum(two_log_std);
    let b = tape.sub(a, log_var_sum);
    let psi_term = tape.scale(log_psi, n);
    let c = tape.add(b, psi_term);
    let d = tape.offset(c, -n);
    tape.scale(d, 0.5)
}

/// Forward pass: ReLU on hidden layers, identity on the output.
pub fn mlp_forward(tape: &mut Tape, weights: &MlpWeights, x: Var) -> Var {
    let mut h = x;
    let last = weights.layers.len() - 1;
    for (i, &(w, b)) in weights.layers.iter().enumerate() {
        h = tape.affine(h, w, b);
        if i < last {
            h = tape.relu(h);
        }
    }
    h
}

/// Per-member flow parameters, each `N×d`.
#[derive(Debug, Clone, Copy)]
pub struct FlowParams {
    pub alpha: Var,
    pub beta: Var,
    /// SAL only.
    pub gamma: Option<Var>,
    /// SAL only; positive through softplus.
    pub phi: Option<Var>,
}

/// Evaluates the network at the previous states `x` (`N×d`) and splits the
/// head into flow parameters.
pub fn flow_params(tape: &mut Tape, weights: &MlpWeights, kind: FlowKind, x: Var) -> FlowParams {
    let out = mlp_forward(tape, weights, x);
    let [_, width] = tape.shape(out);
    let d = width / kind.params_per_dim();
    assert_eq!(d * kind.params_per_dim(), width, "flow head width {width} not a multiple");
    let alpha = tape.slice_cols(out, 0, d);
    let beta = tape.slice_cols(out, d, 2 * d);
    match kind {
        FlowKind::Linear => FlowParams {
            alpha,
            beta,
            gamma: None,
            phi: None,
        },
        FlowKind::SinhArcsinh => {
            let gamma = tape.slice_cols(out, 2 * d, 3 * d);
            let raw = tape.slice_cols(out, 3 * d, 4 * d);
            let phi = tape.softplus(raw);
            FlowParams {
                alpha,
                beta,
                gamma: Some(gamma),
                phi: Some(phi),
            }
        }
    }
}

/// `α ∘ f̃ + β` with `f̃` an `N×1` column broadcast across dimensions.
pub fn linear_flow(tape: &mut Tape, theta: &FlowParams, f: Var) -> Var {
    let scaled = tape.mul(theta.alpha, f);
    tape.add(scaled, theta.beta)
}

/// `α ∘ sinh(φ ∘ asinh(f̃) − γ) + β`.
pub fn sal_flow(tape: &mut Tape, theta: &FlowParams, f: Var) -> Var {
    let (gamma, phi) = (
        theta.gamma.expect("SAL flow needs γ"),
        theta.phi.expect("SAL flow needs φ"),
    );
    let u = tape.asinh(f);
    let pu = tape.mul(phi, u);
    let shifted = tape.sub(pu, gamma);
    let s = tape.sinh(shifted);
    let scaled = tape.mul(theta.alpha, s);
    tape.add(scaled, theta.beta)
}

pub fn apply_flow(tape: &mut Tape, kind: FlowKind, theta: &FlowParams, f: Var) -> Var {
    match kind {
        FlowKind::Linear => linear_flow(tape, theta, f),
        FlowKind::SinhArcsinh => sal_flow(tape, theta, f),
    }
}

/// Scalar forward maps and their inverses, used for bijectivity checks.
pub mod scalar {
    pub fn linear(alpha: f64, beta: f64, f: f64) -> f64 {
        alpha * f + beta
    }

    pub fn linear_inverse(alpha: f64, beta: f64, y: f64) -> f64 {
        (y - beta) / alpha
    }

    pub fn sal(alpha: f64, beta: f64, gamma: f64, phi: f64, f: f64) -> f64 {
        alpha * (phi * f.asinh() - gamma).sinh() + beta
    }

    pub fn sal_inverse(alpha: f64, beta: f64, gamma: f64, phi: f64, y: f64) -> f64 {
        ((((y - beta) / alpha).asinh() + gamma) / phi).sinh()
    }
}

/// Joint mean and covariance of the warped values at two inputs under a
/// linear flow with fixed parameters:
///
/// ```text
/// mean = (β_a; β_b)
/// Λ    = [ k_aa α_a α_aᵀ   k_ab α_a α_bᵀ ]
///        [ k_ab α_b α_aᵀ   k_bb α_b α_bᵀ ]
/// ```
pub fn etgp_joint_cov(
    alpha_a: &[f64],
    alpha_b: &[f64],
    beta_a: &[f64],
    beta_b: &[f64],
    k_aa: f64,
    k_ab: f64,
    k_bb: f64,
) -> (Vec<f64>, Tensor) {
    let d = alpha_a.len();
    assert!(alpha_b.len() == d && beta_a.len() == d && beta_b.len() == d, "etgp_joint_cov: dimension mismatch");
    let mean: Vec<f64> = beta_a.iter().chain(beta_b).copied().collect();
    let alpha: Vec<f64> = alpha_a.iter().chain(alpha_b).copied().collect();
    let cov = Tensor::from_fn(2 * d, 2 * d, |i, j| {
        let k = match (i < d, j < d) {
            (true, true) => k_aa,
            (false, false) => k_bb,
            _ => k_ab,
        };
        k * alpha[i] * alpha[j]
    });
    (mean, cov)
}
