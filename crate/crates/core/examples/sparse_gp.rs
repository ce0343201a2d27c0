//! Sparse GP prediction and inducing KL for a one-dimensional SE kernel.
use etgpssm::gp::SparseGp;
use etgpssm::rng::{stream, Stream};
use etgpssm::Tensor;

fn main() -> etgpssm::Result<()> {
    let mut gp = SparseGp::init(1, 8, &mut stream(0, Stream::Init))?;
    gp.z = Tensor::from_fn(8, 1, |i, _| -3.0 + 6.0 * i as f64 / 7.0);
    gp.m = Tensor::from_fn(8, 1, |i, _| gp.z.get(i, 0).sin());
    gp.s_factor = Tensor::identity(8).map(|v| 0.1 * v);
    let xs = Tensor::column(&[-2.0, -1.0, 0.0, 1.0, 2.0]);
    let (mean, var) = gp.predict(&xs)?;
    println!("x,mean,var");
    for i in 0..xs.rows() {
        println!("{},{:.4},{:.4}", xs.get(i, 0), mean.get(i, 0), var.get(i, 0));
    }
    println!("KL[q(u) || p(u)] = {:.4}", gp.kl()?);
    Ok(())
}
