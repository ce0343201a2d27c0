//! Residual-network baseline next to the shared-GP model on the same kink
//! data.
use etgpssm::config::ConfigText;
use etgpssm::runner;

fn main() -> etgpssm::Result<()> {
    for variant in ["ad-enkf-dnn", "etgpssm-dnn"] {
        let mut cfg = ConfigText::parse("[train]\nepochs = 100\nensemble = 64\n")?;
        cfg.set("model.variant", variant)?;
        let exp = cfg.experiment()?;
        let trained = runner::fit(&exp)?;
        let ev = runner::evaluate(&exp, &trained)?;
        let last = trained.outcome.trace.last().expect("at least one epoch");
        let rmse = ev.metrics.map_or(f64::NAN, |m| m.rmse);
        println!(
            "{variant:<12} elbo {:>9.2} kl_u {:>7.3} kl_x0 {:>6.3} filtered rmse {rmse:.4}",
            last.total, last.kl_u, last.kl_x0
        );
    }
    Ok(())
}
