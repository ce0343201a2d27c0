//! Squared-exponential kernel and the sparse variational GP over the shared
//! base function.
//!
//! With inducing inputs `Z`, `q(u) = N(m, S)` and `S = L_S L_Sᵀ`, the
//! marginal of the approximate posterior at a query point `x` is
//!
//! ```text
//! mean(x) = k_xZ K_ZZ⁻¹ m
//! var(x)  = k(x,x) − k_xZ K_ZZ⁻¹ [K_ZZ − S] K_ZZ⁻¹ k_Zx
//! ```
//!
//! [`PreparedGp`] factors `K_ZZ` once per graph and caches `K_ZZ⁻¹ m` and
//! `W = K_ZZ⁻¹ − K_ZZ⁻¹ S K_ZZ⁻¹`, so every further query costs two GEMMs.

use std::collections::BTreeMap;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{normal_tensor, Rng};

/// Jitter added to `K_ZZ`, relative to the signal variance.
pub const DEFAULT_JITTER: f64 = 1e-6;

/// Warning threshold for negative predictive variances before clamping.
pub const NEGATIVE_VARIANCE_WARN: f64 = -1e-8;

/// Log-parameterized ARD squared-exponential kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct SeKernel {
    pub log_signal_variance: f64,
    pub log_lengthscales: Vec<f64>,
}

impl SeKernel {
    /// Unit signal variance, unit lengthscales.
    pub fn unit(dim: usize) -> Self {
        SeKernel {
            log_signal_variance: 0.0,
            log_lengthscales: vec![0.0; dim],
        }
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_signal_variance.exp()
    }

    /// Dense Gram matrix between the rows of `x` and `x2`.
    pub fn gram(&self, x: &Tensor, x2: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let k = KernelVars::bind(&mut tape, self);
        let a = tape.leaf(x.clone());
        let b = tape.leaf(x2.clone());
        let g = kernel_matrix(&mut tape, k, a, b);
        tape.value(g).clone()
    }
}

/// Kernel hyperparameters bound to a tape: `log σ_f²` (`1×1`) and the log
/// lengthscales (`1×d`).
#[derive(Debug, Clone, Copy)]
pub struct KernelVars {
    pub log_sf2: Var,
    pub log_ls: Var,
}

impl KernelVars {
    pub fn bind(tape: &mut Tape, k: &SeKernel) -> Self {
        KernelVars {
            log_sf2: tape.scalar(k.log_signal_variance),
            log_ls: tape.leaf(Tensor::row(&k.log_lengthscales)),
        }
    }
}

/// `σ_f² exp(−½ Σ_d (x_d − x'_d)² / ℓ_d²)` for all row pairs.
pub fn kernel_matrix(tape: &mut Tape, k: KernelVars, x: Var, x2: Var) -> Var {
    let [_, d] = tape.shape(x);
    let [_, d2] = tape.shape(x2);
    let [_, dl] = tape.shape(k.log_ls);
    assert!(d == d2 && d == dl, "kernel_matrix: input widths {d}, {d2} and {dl} lengthscales");
    let neg_ls = tape.neg(k.log_ls);
    let inv_ls = tape.exp(neg_ls);
    let xs = tape.mul(x, inv_ls);
    let zs = tape.mul(x2, inv_ls);
    let xsq = tape.square(xs);
    let xn = tape.sum_cols(xsq);
    let zsq = tape.square(zs);
    let zn = tape.sum_cols(zsq);
    let zn_row = tape.transpose(zn);
    let cross = tape.matmul_t(xs, false, zs, true);
    let cross2 = tape.scale(cross, -2.0);
    let partial = tape.add(cross2, xn);
    let sq = tape.add(partial, zn_row);
    // Rounding can leave tiny negative distances on the diagonal.
    let sq = tape.relu(sq);
    let half = tape.scale(sq, -0.5);
    let shape = tape.exp(half);
    let sf2 = tape.exp(k.log_sf2);
    tape.mul(shape, sf2)
}

/// Plain-value sparse variational GP.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGp {
    pub kernel: SeKernel,
    /// Inducing inputs, `M×d`.
    pub z: Tensor,
    /// Variational mean, `M×1`.
    pub m: Tensor,
    /// Unconstrained square matrix whose lower triangle is the factor of `S`.
    pub s_factor: Tensor,
    pub jitter: f64,
}

impl SparseGp {
    /// Unit kernel, `Z` i.i.d. standard normal, `m = 0`, `S = I`.
    pub fn init(dim: usize, inducing: usize, rng: &mut Rng) -> Result<Self> {
        if inducing == 0 {
            return Err(Error::Config("sparse GP needs at least one inducing point".into()));
        }
        let z = normal_tensor(rng, inducing, dim);
        let gp = SparseGp {
            kernel: SeKernel::unit(dim),
            z,
            m: Tensor::zeros(inducing, 1),
            s_factor: Tensor::identity(inducing),
            jitter: DEFAULT_JITTER,
        };
        gp.check_distinct_inducing()?;
        Ok(gp)
    }

    pub fn num_inducing(&self) -> usize {
        self.z.rows()
    }

    pub fn dim(&self) -> usize {
        self.z.cols()
    }

    pub fn check_distinct_inducing(&self) -> Result<()> {
        let z = &self.z;
        for i in 0..z.rows() {
            for j in 0..i {
                if z.row_slice(i) == z.row_slice(j) {
                    return Err(Error::Contract(format!("inducing inputs {j} and {i} coincide")));
                }
            }
        }
        Ok(())
    }

    /// `S = L_S L_Sᵀ`.
    pub fn s(&self) -> Tensor {
        let l = self.s_factor.tril();
        l.matmul(&l.transpose()).expect("square factor")
    }

    pub fn params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.log_sf2"), Tensor::scalar(self.kernel.log_signal_variance)),
            (format!("{prefix}.log_ls"), Tensor::row(&self.kernel.log_lengthscales)),
            (format!("{prefix}.z"), self.z.clone()),
            (format!("{prefix}.m"), self.m.clone()),
            (format!("{prefix}.s_factor"), self.s_factor.clone()),
        ]
    }

    pub fn from_params(params: &BTreeMap<String, Tensor>, prefix: &str, jitter: f64) -> Result<Self> {
        let get = |k: &str| {
            params
                .get(&format!("{prefix}.{k}"))
                .cloned()
                .ok_or_else(|| Error::Config(format!("missing parameter {prefix}.{k}")))
        };
        Ok(SparseGp {
            kernel: SeKernel {
                log_signal_variance: get("log_sf2")?.item(),
                log_lengthscales: get("log_ls")?.into_vec(),
            },
            z: get("z")?,
            m: get("m")?,
            s_factor: get("s_factor")?,
            jitter,
        })
    }

    /// Leaves for every parameter on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> SparseGpVars {
        SparseGpVars {
            kernel: KernelVars::bind(tape, &self.kernel),
            z: tape.leaf(self.z.clone()),
            m: tape.leaf(self.m.clone()),
            s_factor: tape.leaf(self.s_factor.clone()),
            jitter: self.jitter,
        }
    }

    /// Marginal predictive mean and variance (both `n×1`) at the rows of `x`.
    pub fn predict(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let prep = prepare(&mut tape, vars)?;
        let xv = tape.leaf(x.clone());
        let (mean, var) = predict(&mut tape, &prep, xv);
        Ok((tape.value(mean).clone(), tape.value(var).clone()))
    }

    /// Joint predictive mean (`n×1`) and covariance (`n×n`).
    pub fn predict_joint(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let prep = prepare(&mut tape, vars)?;
        let xv = tape.leaf(x.clone());
        let (mean, cov) = predict_joint(&mut tape, &prep, xv);
        Ok((tape.value(mean).clone(), tape.value(cov).clone()))
    }

    pub fn kl(&self) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let prep = prepare(&mut tape, vars)?;
        let kl = kl_inducing(&mut tape, &prep);
        Ok(tape.item(kl))
    }

    /// `K_ZZ` including the jitter shift.
    pub fn kzz(&self) -> Tensor {
        let mut k = self.kernel.gram(&self.z, &self.z);
        let j = self.jitter * self.kernel.signal_variance();
        for i in 0..k.rows() {
            let v = k.get(i, i);
            k.set(i, i, v + j);
        }
        k
    }
}

/// Sparse GP parameters bound to a tape.
#[derive(Debug, Clone, Copy)]
pub struct SparseGpVars {
    pub kernel: KernelVars,
    pub z: Var,
    pub m: Var,
    pub s_factor: Var,
    pub jitter: f64,
}

/// Quantities shared by every prediction within one graph.
#[derive(Debug, Clone, Copy)]
pub struct PreparedGp {
    pub vars: SparseGpVars,
    /// Cholesky factor of `K_ZZ`.
    pub lz: Var,
    /// Lower factor of `S`.
    pub ls: Var,
    /// `L_Z⁻¹ L_S`.
    pub v: Var,
    /// `L_Z⁻¹ m`.
    pub lz_inv_m: Var,
    /// `K_ZZ⁻¹ m`, `M×1`.
    pub alpha: Var,
    /// `K_ZZ⁻¹ − K_ZZ⁻¹ S K_ZZ⁻¹`, `M×M`.
    pub w: Var,
}

pub fn prepare(tape: &mut Tape, vars: SparseGpVars) -> Result<PreparedGp> {
    let kzz = kernel_matrix(tape, vars.kernel, vars.z, vars.z);
    let [m, _] = tape.shape(kzz);
    let kzz = if vars.jitter > 0.0 {
        let eye = tape.leaf(Tensor::identity(m).scale(vars.jitter));
        let sf2 = tape.exp(vars.kernel.log_sf2);
        let shift = tape.mul(eye, sf2);
        tape.add(kzz, shift)
    } else {
        kzz
    };
    let lz = tape.cholesky(kzz)?;
    let ls = tape.tril(vars.s_factor);
    let v = tape.solve_lower(lz, ls, false);
    let lz_inv_m = tape.solve_lower(lz, vars.m, false);
    let alpha = tape.solve_lower(lz, lz_inv_m, true);
    let eye = tape.leaf(Tensor::identity(m));
    let lz_inv = tape.solve_lower(lz, eye, false);
    let kinv = tape.matmul_t(lz_inv, true, lz_inv, false);
    let u = tape.solve_lower(lz, v, true);
    let usu = tape.matmul_t(u, false, u, true);
    let w = tape.sub(kinv, usu);
    Ok(PreparedGp {
        vars,
        lz,
        ls,
        v,
        lz_inv_m,
        alpha,
        w,
    })
}

/// Marginal mean and variance at each row of `x`; the variance is clamped
/// at zero.
pub fn predict(tape: &mut Tape, gp: &PreparedGp, x: Var) -> (Var, Var) {
    let kxz = kernel_matrix(tape, gp.vars.kernel, x, gp.vars.z);
    let mean = tape.matmul(kxz, gp.alpha);
    let kw = tape.matmul(kxz, gp.w);
    let prod = tape.mul(kw, kxz);
    let reduction = tape.sum_cols(prod);
    let sf2 = tape.exp(gp.vars.kernel.log_sf2);
    let raw = tape.sub(sf2, reduction);
    let min = tape.value(raw).data().iter().cloned().fold(f64::INFINITY, f64::min);
    if min < NEGATIVE_VARIANCE_WARN {
        log::warn!("gp predictive variance {min:e} below zero before clamping");
    }
    let var = tape.relu(raw);
    (mean, var)
}

/// Joint mean and covariance over the rows of `x`.
pub fn predict_joint(tape: &mut Tape, gp: &PreparedGp, x: Var) -> (Var, Var) {
    let kxz = kernel_matrix(tape, gp.vars.kernel, x, gp.vars.z);
    let kxx = kernel_matrix(tape, gp.vars.kernel, x, x);
    let mean = tape.matmul(kxz, gp.alpha);
    let kw = tape.matmul(kxz, gp.w);
    let corr = tape.matmul_t(kw, false, kxz, true);
    let cov = tape.sub(kxx, corr);
    (mean, cov)
}

/// Reparameterized draw `mean(x) + sqrt(var(x)) · eps` with `eps` an `n×1`
/// standard normal column.
pub fn sample(tape: &mut Tape, gp: &PreparedGp, x: Var, eps: Var) -> Var {
    let (mean, var) = predict(tape, gp, x);
    let sd = tape.sqrt(var);
    let noise = tape.mul(sd, eps);
    tape.add(mean, noise)
}

/// `KL(N(m, S) ‖ N(0, K_ZZ))`.
pub fn kl_inducing(tape: &mut Tape, gp: &PreparedGp) -> Var {
    let [m, _] = tape.shape(gp.lz);
    let trace = tape.sum_squares(gp.v);
    let maha = tape.sum_squares(gp.lz_inv_m);
    let logdet_k = tape.logdet_from_cholesky(gp.lz);
    let ls_diag = tape.diag(gp.ls);
    let sq = tape.square(ls_diag);
    let log_sq = tape.log(sq);
    let logdet_s = tape.sum(log_sq);
    let a = tape.add(trace, maha);
    let b = tape.add(a, logdet_k);
    let c = tape.sub(b, logdet_s);
    let d = tape.offset(c, -(m as f64));
    tape.scale(d, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tensor::spd_inverse;
    use crate::rng::{stream, Stream};

    #[test]
    fn kernel_values() {
        let k = SeKernel::unit(2);
        let x = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let g = k.gram(&x, &x);
        assert_eq!(g.get(0, 0), 1.0);
        assert!((g.get(0, 1) - (-1f64).exp()).abs() < 1e-15);
        assert!((g.get(0, 1) - 0.367879).abs() < 1e-6);
        assert_eq!(g.get(0, 1), g.get(1, 0));
    }

    #[test]
    fn single_inducing_point_returns_q_u() {
        let gp = SparseGp {
            kernel: SeKernel::unit(1),
            z: Tensor::column(&[0.3]),
            m: Tensor::column(&[1.7]),
            s_factor: Tensor::scalar(0.6),
            jitter: 0.0,
        };
        let (mean, var) = gp.predict(&Tensor::column(&[0.3])).unwrap();
        assert!((mean.item() - 1.7).abs() < 1e-15);
        assert!((var.item() - 0.36).abs() < 1e-15);
    }

    #[test]
    fn prior_recovered_when_q_equals_p() {
        let mut rng = stream(3, Stream::Init);
        let mut gp = SparseGp::init(2, 4, &mut rng).unwrap();
        gp.jitter = 0.0;
        let (l, _) = crate::autodiff::tensor::cholesky_jittered(&gp.kzz()).unwrap();
        gp.s_factor = l;
        let x = normal_tensor(&mut rng, 5, 2);
        let (mean, var) = gp.predict(&x).unwrap();
        assert_eq!(mean.max_abs(), 0.0);
        for &v in var.data() {
            assert!((v - 1.0).abs() < 1e-9, "{v}");
        }
        assert!(gp.kl().unwrap().abs() < 1e-9);
    }

    #[test]
    fn matches_dense_inverse_oracle() {
        let mut rng = stream(11, Stream::Init);
        let mut gp = SparseGp::init(2, 3, &mut rng).unwrap();
        gp.kernel.log_lengthscales = vec![0.4, -0.2];
        gp.kernel.log_signal_variance = 0.3;
        gp.m = normal_tensor(&mut rng, 3, 1);
        gp.s_factor = normal_tensor(&mut rng, 3, 3).scale(0.3);
        let x = normal_tensor(&mut rng, 4, 2);
        let (mean, var) = gp.predict(&x).unwrap();

        // Dense re-derivation with an explicit inverse.
        let kzz = gp.kzz();
        let kinv = spd_inverse(&kzz).unwrap();
        let kxz = gp.kernel.gram(&x, &gp.z);
        let a = kxz.matmul(&kinv).unwrap();
        let mean_ref = a.matmul(&gp.m).unwrap();
        let inner = kzz.zip_map(&gp.s(), |k, s| k - s);
        let corr = a.matmul(&inner).unwrap().matmul(&a.transpose()).unwrap();
        for i in 0..4 {
            assert!((mean.get(i, 0) - mean_ref.get(i, 0)).abs() < 1e-8);
            let v = gp.kernel.signal_variance() - corr.get(i, i);
            assert!((var.get(i, 0) - v).abs() < 1e-8);
        }
    }

    #[test]
    fn one_dimensional_kl() {
        let gp = SparseGp {
            kernel: SeKernel::unit(1),
            z: Tensor::column(&[0.0]),
            m: Tensor::column(&[1.0]),
            s_factor: Tensor::scalar(1.0),
            jitter: 0.0,
        };
        assert!((gp.kl().unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn duplicate_inducing_inputs_rejected() {
        let mut rng = stream(1, Stream::Init);
        let mut gp = SparseGp::init(1, 3, &mut rng).unwrap();
        gp.z = Tensor::column(&[0.1, 0.5, 0.1]);
        assert!(gp.check_distinct_inducing().is_err());
    }
}
