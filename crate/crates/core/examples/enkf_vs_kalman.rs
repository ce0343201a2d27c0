//! Stochastic EnKF on a 2-D linear-Gaussian system: evidence for growing
//! ensembles next to an exact Kalman filter.
use etgpssm::eval::{filter, Dynamics};
use etgpssm::systems::LinearGaussian;
use etgpssm::Tensor;

fn kalman_loglik(sys: &LinearGaussian, ys: &Tensor) -> f64 {
    // Scalar-observation Kalman filter with a 2-D state.
    let a = &sys.a;
    let mut m = sys.m0.clone();
    let mut p = [[sys.p0[0], 0.0], [0.0, sys.p0[1]]];
    let mut ll = 0.0;
    for t in 0..ys.rows() {
        let mp = [a.get(0, 0) * m[0] + a.get(0, 1) * m[1], a.get(1, 0) * m[0] + a.get(1, 1) * m[1]];
        let mut pp = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        pp[i][j] += a.get(i, k) * p[k][l] * a.get(j, l);
                    }
                }
            }
            pp[i][i] += sys.q[i];
        }
        let c = [sys.c.get(0, 0), sys.c.get(0, 1)];
        let pc = [pp[0][0] * c[0] + pp[0][1] * c[1], pp[1][0] * c[0] + pp[1][1] * c[1]];
        let s = c[0] * pc[0] + c[1] * pc[1] + sys.r[0];
        let innov = ys.get(t, 0) - (c[0] * mp[0] + c[1] * mp[1]);
        ll += -0.5 * ((2.0 * std::f64::consts::PI * s).ln() + innov * innov / s);
        let gain = [pc[0] / s, pc[1] / s];
        m = vec![mp[0] + gain[0] * innov, mp[1] + gain[1] * innov];
        for i in 0..2 {
            for j in 0..2 {
                p[i][j] = pp[i][j] - gain[i] * pc[j];
            }
        }
    }
    ll
}

fn main() -> etgpssm::Result<()> {
    let sys = LinearGaussian {
        a: Tensor::from_rows(&[vec![0.9, 0.1], vec![-0.2, 0.8]])?,
        c: Tensor::from_rows(&[vec![1.0, 0.5]])?,
        q: vec![0.1, 0.05],
        r: vec![0.2],
        m0: vec![0.0, 0.0],
        p0: vec![1.0, 1.0],
    };
    let ds = sys.simulate(100, 1);
    let transition = |x: &Tensor| sys.transition(x);
    let dynamics = Dynamics::Known {
        f: &transition,
        c: sys.c.clone(),
        q: sys.q.clone(),
        r: sys.r.clone(),
        m0: sys.m0.clone(),
        l0: Tensor::identity(2),
    };
    println!("Kalman log-likelihood: {:.4}", kalman_loglik(&sys, &ds.ys));
    for members in [100, 1000, 10000] {
        let f = filter(&dynamics, &ds.ys, members, 0)?;
        println!("EnKF N={members:>5}: {:.4}", f.loglik);
    }
    Ok(())
}
