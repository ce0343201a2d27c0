mod common;

use common::*;
use etgpssm::autodiff::tensor::{cholesky_jittered, solve_lower};
use etgpssm::autodiff::{Tape, Tensor};
use etgpssm::enkf::FilterNoise;
use etgpssm::eval::{self, Dynamics};
use etgpssm::gp::{self, SeKernel, SparseGp};
use etgpssm::metrics;
use etgpssm::model::{ModelConfig, SsmModel, Variant, LOG_Q, LOG_R, X0_CHOL, X0_MEAN};
use etgpssm::rng::{normal, normal_tensor, stream, Stream};
use etgpssm::systems::{kink_f, lorenz96_step, LinearGaussian, SyntheticSystem};
use etgpssm::training::{self, EpochNoise};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn cholesky_reconstructs(seed in any::<u64>(), n in 1usize..8) {
        let g = normal_tensor(&mut stream(seed, Stream::Init), n, n);
        let a = g.matmul(&g.transpose()).unwrap();
        let a = Tensor::from_fn(n, n, |i, j| a.get(i, j) + if i == j { 0.5 } else { 0.0 });
        let (l, jitter) = cholesky_jittered(&a).unwrap();
        prop_assert_eq!(jitter, 0.0);
        let back = l.matmul(&l.transpose()).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((back.get(i, j) - a.get(i, j)).abs() < 1e-10 * (1.0 + a.get(i, j).abs()));
                if j > i {
                    prop_assert_eq!(l.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn triangular_solve_round_trips(seed in any::<u64>(), n in 1usize..8, k in 1usize..4, transpose in any::<bool>()) {
        let mut rng = stream(seed, Stream::Init);
        let raw = normal_tensor(&mut rng, n, n);
        let l = Tensor::from_fn(n, n, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => 0.3 * raw.get(i, j),
            std::cmp::Ordering::Equal => 1.0 + raw.get(i, j).abs(),
            std::cmp::Ordering::Less => 0.0,
        });
        let b = normal_tensor(&mut rng, n, k);
        let x = solve_lower(&l, &b, transpose).unwrap();
        let op = if transpose { l.transpose() } else { l.clone() };
        let back = op.matmul(&x).unwrap();
        for i in 0..n {
            for j in 0..k {
                prop_assert!((back.get(i, j) - b.get(i, j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn metrics_ignore_member_order(seed in any::<u64>()) {
        let mut rng = stream(seed, Stream::Eval);
        let ens: Vec<Tensor> = (0..3).map(|_| normal_tensor(&mut rng, 9, 2)).collect();
        let truth = normal_tensor(&mut rng, 3, 2);
        let rev: Vec<Tensor> = ens
            .iter()
            .map(|e| Tensor::from_fn(e.rows(), e.cols(), |r, c| e.get(e.rows() - 1 - r, c)))
            .collect();
        let a = metrics::filter_metrics(&ens, &truth).unwrap();
        let b = metrics::filter_metrics(&rev, &truth).unwrap();
        prop_assert!((a.rmse - b.rmse).abs() < 1e-12);
        prop_assert!((a.spread - b.spread).abs() < 1e-12);
        prop_assert!((a.crps - b.crps).abs() < 1e-12);
        prop_assert!(a.crps >= 0.0);
        let mut last = 0.0;
        for level in [0.1, 0.5, 0.8, 0.95, 1.0] {
            let c = metrics::coverage(&ens, &truth, level).unwrap();
            prop_assert!(c >= last);
            last = c;
        }
    }
}

#[test]
fn kink_matches_second_implementation() {
    let mut worst = 0.0f64;
    for i in 0..10_000 {
        let x = -6.0 + 12.0 * i as f64 / 9_999.0;
        worst = worst.max((kink_f(x) - kink_reference(x)).abs());
    }
    assert!(worst < 1e-12, "max deviation {worst}");
    assert_eq!(kink_f(0.0), kink_reference(0.0));
}

#[test]
fn kink_observation_noise_has_requested_variance() {
    let mut sys = SyntheticSystem::kink(0.08);
    sys.steps = 10_000;
    let ds = sys.simulate().unwrap();
    let states = ds.states.unwrap();
    let resid: Vec<f64> = (0..ds.ys.rows()).map(|t| ds.ys.get(t, 0) - states.get(t, 0)).collect();
    let (_, sd) = mean_sd(&resid);
    assert!((sd * sd / 0.08 - 1.0).abs() < 0.05, "variance {}", sd * sd);
}

#[test]
fn lorenz_step_commutes_with_cyclic_shift() {
    let mut rng = stream(4, Stream::Data);
    let x: Vec<f64> = (0..9).map(|_| 8.0 + 3.0 * normal(&mut rng)).collect();
    let next = lorenz96_step(&x, 0.01, 8.0).unwrap();
    for s in 1..9 {
        let shifted: Vec<f64> = (0..9).map(|i| x[(i + s) % 9]).collect();
        let a = lorenz96_step(&shifted, 0.01, 8.0).unwrap();
        for i in 0..9 {
            assert!((a[i] - next[(i + s) % 9]).abs() < 1e-12);
        }
    }
}

#[test]
fn lorenz_step_matches_explicit_euler() {
    let x = [1.0, -2.0, 0.5, 3.0, -1.5];
    let (dt, f) = (0.05, 8.0);
    let d = x.len();
    let next = lorenz96_step(&x, dt, f).unwrap();
    for i in 0..d {
        let drift = (x[(i + 1) % d] - x[(i + d - 2) % d]) * x[(i + d - 1) % d] - x[i] + f;
        assert!((next[i] - (x[i] + dt * drift)).abs() < 1e-12);
    }
}

fn toy_gp() -> SparseGp {
    SparseGp {
        kernel: SeKernel {
            log_signal_variance: 0.8f64.ln(),
            log_lengthscales: vec![0.9f64.ln(), 1.4f64.ln()],
        },
        z: Tensor::from_rows(&[vec![-1.0, 0.2], vec![0.4, -0.6], vec![1.1, 0.9], vec![0.0, 1.5]]).unwrap(),
        m: Tensor::column(&[0.5, -0.3, 0.8, 0.1]),
        s_factor: Tensor::from_rows(&[
            vec![0.3, 0.0, 0.0, 0.0],
            vec![0.1, 0.4, 0.0, 0.0],
            vec![0.0, -0.1, 0.2, 0.0],
            vec![0.05, 0.0, 0.1, 0.3],
        ])
        .unwrap(),
        jitter: 1e-6,
    }
}

fn predictive_oracle(gp: &SparseGp, x: &[f64]) -> (f64, f64) {
    let sf2 = gp.kernel.signal_variance();
    let ls: Vec<f64> = gp.kernel.log_lengthscales.iter().map(|v| v.exp()).collect();
    let m = gp.z.rows();
    let zs: Vec<Vec<f64>> = (0..m).map(|i| gp.z.row_slice(i).to_vec()).collect();
    let kzz: Mat = (0..m)
        .map(|i| (0..m).map(|j| se_kernel(&zs[i], &zs[j], sf2, &ls) + if i == j { gp.jitter * sf2 } else { 0.0 }).collect())
        .collect();
    let kxz: Vec<f64> = zs.iter().map(|z| se_kernel(x, z, sf2, &ls)).collect();
    let (kinv, _) = inverse_det(&kzz);
    let a = mul_vec(&kinv, &kxz);
    let mean: f64 = a.iter().zip(gp.m.data()).map(|(p, q)| p * q).sum();
    let sl = to_mat(&gp.s_factor.tril());
    let s = mul(&sl, &t(&sl));
    let diff = sub(&kzz, &s);
    let quad: f64 = a.iter().zip(mul_vec(&diff, &a)).map(|(p, q)| p * q).sum();
    (mean, sf2 - quad)
}

#[test]
fn gp_predictive_matches_dense_oracle() {
    let gp = toy_gp();
    let xs = [[0.1, 0.2], [-2.0, 1.0], [0.4, -0.6]];
    let x = Tensor::from_rows(&xs.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
    let (mean, var) = gp.predict(&x).unwrap();
    for (i, row) in xs.iter().enumerate() {
        let (m, v) = predictive_oracle(&gp, row);
        assert!((mean.get(i, 0) - m).abs() < 1e-8, "mean {} vs {m}", mean.get(i, 0));
        assert!((var.get(i, 0) - v).abs() < 1e-8, "var {} vs {v}", var.get(i, 0));
    }
}

#[test]
fn gp_samples_match_predictive_moments() {
    let gp = toy_gp();
    let x = Tensor::row(&[0.3, 0.4]);
    let (m, v) = predictive_oracle(&gp, &[0.3, 0.4]);
    let n = 200_000;
    let eps = normal_tensor(&mut stream(2, Stream::GpDraws), n, 1);
    let xs = Tensor::from_fn(n, 2, |_, c| x.get(0, c));
    let mut tape = Tape::new();
    let vars = gp.bind(&mut tape);
    let prep = gp::prepare(&mut tape, vars).unwrap();
    let xv = tape.leaf(xs);
    let ev = tape.leaf(eps);
    let draws = gp::sample(&mut tape, &prep, xv, ev);
    let d = tape.value(draws).data().to_vec();
    let (mean, sd) = mean_sd(&d);
    let se = sd / (n as f64).sqrt();
    assert!((mean - m).abs() < 3.0 * se, "mean {mean} vs {m}");
    let var_se = v * (2.0 / n as f64).sqrt();
    assert!((sd * sd - v).abs() < 3.0 * var_se, "variance {} vs {v}", sd * sd);
}

#[test]
fn gp_kl_matches_dense_formula() {
    let gp = toy_gp();
    let k = to_mat(&gp.kzz());
    let sl = to_mat(&gp.s_factor.tril());
    let s = mul(&sl, &t(&sl));
    let (kinv, kdet) = inverse_det(&k);
    let (_, sdet) = inverse_det(&s);
    let m = gp.m.data();
    let tr: f64 = (0..4).map(|i| mul(&kinv, &s)[i][i]).sum();
    let maha: f64 = m.iter().zip(mul_vec(&kinv, m)).map(|(a, b)| a * b).sum();
    let oracle = 0.5 * (tr + maha - 4.0 + kdet.ln() - sdet.ln());
    assert!((gp.kl().unwrap() - oracle).abs() < 1e-8);
}

fn linear_system() -> (LinearGaussian, Mat, Mat) {
    let a = vec![vec![0.95, 0.1], vec![0.0, 0.9]];
    let c = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    (
        LinearGaussian {
            a: to_tensor(&a),
            c: to_tensor(&c),
            q: vec![0.2, 0.1],
            r: vec![0.3, 0.3],
            m0: vec![1.0, 0.0],
            p0: vec![1.0, 1.0],
        },
        a,
        c,
    )
}

#[test]
fn enkf_tracks_kalman_filter() {
    let (sys, a, c) = linear_system();
    let ds = sys.simulate(40, 3);
    let ys: Vec<Vec<f64>> = (0..40).map(|t| ds.ys.row_slice(t).to_vec()).collect();
    let (kf, ll) = kalman_filter(&a, &c, &diag(&sys.q), &diag(&sys.r), &sys.m0, &diag(&sys.p0), &ys);
    let f = |x: &Tensor| sys.transition(x);
    let dynamics = Dynamics::Known {
        f: &f,
        c: sys.c.clone(),
        q: sys.q.clone(),
        r: sys.r.clone(),
        m0: sys.m0.clone(),
        l0: Tensor::identity(2),
    };
    let run = eval::filter(&dynamics, &ds.ys, 20_000, 1).unwrap();
    for (e, k) in run.posterior().iter().zip(&kf) {
        let (m, p) = ensemble_moments(e);
        for i in 0..2 {
            assert!((m[i] - k.mean[i]).abs() < 0.03, "mean {m:?} vs {:?}", k.mean);
            for j in 0..2 {
                assert!((p[i][j] - k.cov[i][j]).abs() < 0.03, "cov {p:?} vs {:?}", k.cov);
            }
        }
    }
    assert!(((run.loglik - ll) / ll).abs() < 0.01, "evidence {} vs {ll}", run.loglik);
}

#[test]
fn zero_network_random_walk_evidence_matches_kalman() {
    let mut cfg = ModelConfig::new(Variant::AdEnkfDnn, 2, 2);
    cfg.hidden = vec![4];
    let mut model = SsmModel::new(cfg, &mut stream(0, Stream::Init)).unwrap();
    for name in model.params.keys().cloned().collect::<Vec<_>>() {
        if name.starts_with("net.") {
            let z = Tensor::zeros(model.params[&name].rows(), model.params[&name].cols());
            model.set_param(&name, z).unwrap();
        }
    }
    model.set_param(LOG_Q, Tensor::row(&[0.0, 0.0])).unwrap();
    model.set_param(LOG_R, Tensor::row(&[0.5f64.ln(), 0.5f64.ln()])).unwrap();
    model.set_param(X0_MEAN, Tensor::row(&[0.3, -0.2])).unwrap();
    model.set_param(X0_CHOL, Tensor::from_rows(&[vec![0.7, 0.0], vec![0.2, 0.6]]).unwrap()).unwrap();

    let rw = LinearGaussian {
        a: Tensor::identity(2),
        c: Tensor::identity(2),
        q: vec![1.0, 1.0],
        r: vec![0.5, 0.5],
        m0: vec![0.3, -0.2],
        p0: vec![0.49, 0.4],
    };
    let ds = rw.simulate(30, 6);
    let ys: Vec<Vec<f64>> = (0..30).map(|t| ds.ys.row_slice(t).to_vec()).collect();
    let l0 = vec![vec![0.7, 0.0], vec![0.2, 0.6]];
    let (_, kf_ll) = kalman_filter(&eye(2), &eye(2), &eye(2), &diag(&[0.5, 0.5]), &[0.3, -0.2], &mul(&l0, &t(&l0)), &ys);

    let n = 10_000;
    let mut filter_rng = stream(12, Stream::FilterNoise);
    let mut gp_rng = stream(12, Stream::GpDraws);
    let noise = EpochNoise {
        weights: None,
        filter: FilterNoise::draw(n, 2, 2, 0, 30, &mut filter_rng, &mut gp_rng),
    };
    let report = training::elbo(&model, &ds.ys, &noise).unwrap();
    assert_eq!(report.kl_u, 0.0);
    assert_eq!(report.kl_x0, 0.0);
    assert_eq!(report.kl_w, 0.0);
    assert!(((report.total - kf_ll) / kf_ll).abs() < 0.01, "objective {} vs {kf_ll}", report.total);
}
