//! Filtering Lorenz-96 observations with the true dynamics, reporting RMSE,
//! spread, coverage and CRPS of the filtered ensembles.
use etgpssm::eval::{filter, Dynamics};
use etgpssm::metrics::filter_metrics;
use etgpssm::systems::{lorenz96_step, SyntheticSystem};
use etgpssm::Tensor;

fn main() -> etgpssm::Result<()> {
    let mut sys = SyntheticSystem::lorenz96(20);
    sys.steps = 200;
    let ds = sys.simulate()?;
    let states = ds.states.clone().expect("synthetic data carries states");
    let step = |x: &Tensor| {
        let rows: Vec<Vec<f64>> = (0..x.rows())
            .map(|r| lorenz96_step(x.row_slice(r), sys.dt, sys.forcing).expect("finite state"))
            .collect();
        Tensor::from_rows(&rows).expect("rectangular")
    };
    let d = sys.state_dim;
    let dynamics = Dynamics::Known {
        f: &step,
        c: Tensor::identity(d),
        q: vec![1e-2; d],
        r: vec![sys.r_var; d],
        m0: ds.ys.row_slice(0).to_vec(),
        l0: Tensor::identity(d).map(|v| v * sys.r_var.sqrt()),
    };
    for members in [20, 100] {
        let f = filter(&dynamics, &ds.ys, members, 0)?;
        let m = filter_metrics(f.posterior(), &states)?;
        println!(
            "N={members:>3} rmse {:.3} spread {:.3} coverage {:.3} crps {:.3}",
            m.rmse, m.spread, m.coverage, m.crps
        );
    }
    Ok(())
}
