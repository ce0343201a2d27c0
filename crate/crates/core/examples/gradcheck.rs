//! Reverse-mode gradients of a small GP-style objective checked against
//! central differences.
use etgpssm::autodiff::finite_difference_check;
use etgpssm::rng::{normal_tensor, stream, Stream};
use etgpssm::Tensor;

fn main() -> etgpssm::Result<()> {
    let mut rng = stream(7, Stream::Init);
    let a = normal_tensor(&mut rng, 4, 4);
    let b = normal_tensor(&mut rng, 4, 2);
    // log det(A Aᵀ + 2I) + ‖L⁻¹ B‖²
    let err = finite_difference_check(
        |tape, x| {
            let g = tape.matmul_t(x, false, x, true);
            let eye = tape.leaf(Tensor::identity(4));
            let eye = tape.scale(eye, 2.0);
            let k = tape.add(g, eye);
            let l = tape.cholesky(k)?;
            let logdet = tape.logdet_from_cholesky(l);
            let rhs = tape.leaf(b.clone());
            let v = tape.solve_lower(l, rhs, false);
            let quad = tape.sum_squares(v);
            Ok(tape.add(logdet, quad))
        },
        &a,
        1e-6,
    )?;
    println!("max relative error vs central differences: {err:.3e}");
    Ok(())
}
