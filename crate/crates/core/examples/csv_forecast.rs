//! Train on a CSV dataset and report the rolling-origin forecast RMSE on
//! its held-out half.
use etgpssm::config::ConfigText;
use etgpssm::runner;
use etgpssm::systems::SyntheticSystem;

fn main() -> etgpssm::Result<()> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("series.csv");
    let mut sys = SyntheticSystem::lorenz96(4);
    sys.steps = 240;
    sys.r_var = 0.25;
    sys.simulate()?.write_csv(&path)?;

    let mut cfg = ConfigText::parse("[system]\nkind = csv\n\n[train]\nepochs = 60\nensemble = 50\n")?;
    cfg.set("system.path", path.to_string_lossy())?;
    cfg.set("eval.horizon", "20")?;
    let exp = cfg.experiment()?;
    let trained = runner::fit(&exp)?;
    let ev = runner::evaluate(&exp, &trained)?;
    println!("{}", trained.description);
    println!("forecast RMSE: {:.4}", ev.forecast_rmse.unwrap_or(f64::NAN));
    Ok(())
}
