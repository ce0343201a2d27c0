//! Write a full run with the runner, then restore the checkpoint into a
//! fresh model and compare the learned transition.
use etgpssm::checkpoint::Checkpoint;
use etgpssm::config::ConfigText;
use etgpssm::model::SsmModel;
use etgpssm::rng::{stream, Stream};
use etgpssm::{runner, Tensor};

fn main() -> etgpssm::Result<()> {
    let out = tempfile::tempdir()?;
    let exp = ConfigText::parse("[train]\nepochs = 20\nensemble = 32\n\n[system]\nsteps = 100\n")?.experiment()?;
    let result = runner::run(&exp, out.path())?;
    println!("config hash {}", result.manifest.config_hash);
    for name in result.manifest.artifacts.values() {
        println!("  wrote {name}");
    }

    let trained = runner::fit(&exp)?;
    let ckpt = Checkpoint::load(&out.path().join("checkpoint.json"))?;
    let mut fresh = SsmModel::new(trained.model.config.clone(), &mut stream(99, Stream::Init))?;
    ckpt.restore(&mut fresh)?;
    let x = Tensor::column(&[-1.0, 0.0, 1.0]);
    let (a, b) = (trained.model.mean_transition(&x)?, fresh.mean_transition(&x)?);
    for i in 0..x.rows() {
        println!("f({:+.1}) trained {:.6} restored {:.6}", x.get(i, 0), a.get(i, 0), b.get(i, 0));
    }
    Ok(())
}
