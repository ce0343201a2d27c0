//! Dense numerics with reverse-mode differentiation and the Adam optimizer.

pub mod adam;
pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, StepOutcome};
pub use gradcheck::{check_params, finite_difference_check, relative_error};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Helpers composed from tape primitives.
impl Tape {
    /// `log det(A)` from the Cholesky factor `L` of `A`.
    pub fn logdet_from_cholesky(&mut self, l: Var) -> Var {
        let d = self.diag(l);
        let ld = self.log(d);
        let s = self.sum(ld);
        self.scale(s, 2.0)
    }

    /// Squared Frobenius norm.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let sq = self.square(a);
        self.sum(sq)
    }
}
