//! Learn the kink transition from noisy observations and print the learned
//! function next to the truth. Usage: `cargo run --release --example kink -- [epochs]`.
use etgpssm::config::ConfigText;
use etgpssm::runner;

fn main() -> etgpssm::Result<()> {
    let epochs = std::env::args().nth(1).unwrap_or_else(|| "200".into());
    let mut cfg = ConfigText::parse("[system]\nkind = kink\nr_var = 0.008\n")?;
    cfg.set("train.epochs", epochs)?;
    cfg.set("eval.grid_points", "13")?;
    let exp = cfg.experiment()?;
    let trained = runner::fit(&exp)?;
    let ev = runner::evaluate(&exp, &trained)?;
    if let Some(m) = &ev.metrics {
        println!("filtered RMSE {:.4} (observations {:.4})", m.rmse, ev.observation_rmse.unwrap_or(f64::NAN));
    }
    println!("x,true_f,learned,lower,upper");
    for (x, f, m, lo, hi) in runner::transition_grid(&exp, &trained, 128)? {
        println!("{x:.2},{:.3},{m:.3},{lo:.3},{hi:.3}", f.unwrap_or(f64::NAN));
    }
    Ok(())
}
