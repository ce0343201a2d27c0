//! Joint covariance of a linear flow applied to a shared GP, showing the
//! input-dependent scaling of the output correlation.
use etgpssm::flows::etgp_joint_cov;

fn main() {
    let k = |a: f64, b: f64| (-0.5 * (a - b) * (a - b)).exp();
    let (xa, xb) = (0.0, 0.5);
    for (alpha_a, alpha_b) in [(vec![1.0, 1.0], vec![1.0, 1.0]), (vec![2.0, 0.5], vec![1.0, -1.0])] {
        let (_, cov) = etgp_joint_cov(
            &alpha_a,
            &alpha_b,
            &[0.0, 0.0],
            &[0.0, 0.0],
            k(xa, xa),
            k(xa, xb),
            k(xb, xb),
        );
        println!("alpha(xa)={alpha_a:?} alpha(xb)={alpha_b:?}");
        for r in 0..cov.rows() {
            let row: Vec<String> = (0..cov.cols()).map(|c| format!("{:+.4}", cov.get(r, c))).collect();
            println!("  {}", row.join(" "));
        }
    }
}
