//! Ensemble verification scores for a well-calibrated and an overconfident
//! forecast.
use etgpssm::metrics::filter_metrics;
use etgpssm::rng::{normal_tensor, stream, Stream};
use etgpssm::Tensor;

fn main() -> etgpssm::Result<()> {
    let mut rng = stream(3, Stream::Eval);
    let truth = normal_tensor(&mut rng, 200, 1);
    for (label, width) in [("calibrated", 1.0), ("overconfident", 0.3)] {
        let ensembles: Vec<Tensor> = (0..truth.rows())
            .map(|_| normal_tensor(&mut rng, 100, 1).map(|v| v * width))
            .collect();
        let m = filter_metrics(&ensembles, &truth)?;
        println!(
            "{label:<14} rmse {:.3} spread {:.3} coverage {:.3} crps {:.3}",
            m.rmse, m.spread, m.coverage, m.crps
        );
    }
    Ok(())
}
