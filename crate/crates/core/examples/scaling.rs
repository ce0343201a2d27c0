//! Parameter counts and transition timings for the shared-GP model against
//! one GP per dimension.
use etgpssm::baselines::{scaling_study, Family};

fn main() -> etgpssm::Result<()> {
    let rows = scaling_study(&[Family::Etgpssm, Family::GpssmIndependent], &[2, 5, 10, 20], 50, 100, 7)?;
    println!("{:<18} {:>4} {:>10} {:>12}", "variant", "d_x", "params", "median ms");
    for r in rows {
        println!("{:<18} {:>4} {:>10} {:>12.3}", r.variant, r.d_x, r.param_count, r.median_seconds * 1e3);
    }
    Ok(())
}
