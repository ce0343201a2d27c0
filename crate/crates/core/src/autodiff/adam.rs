use std::collections::BTreeMap;

use super::tensor::Tensor;

/// Adam optimizer state for a named set of parameters. Minimizes; to ascend
/// an objective pass the gradient of its negation.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(0.005)
    }
}

/// Outcome of a single [`Adam::step`] call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Some gradient entry was NaN or infinite; nothing was changed.
    SkippedNonFinite,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected update to every parameter that has a
    /// gradient. Parameters without an entry in `grads` are left alone.
    pub fn step(&mut self, params: &mut BTreeMap<String, Tensor>, grads: &BTreeMap<String, Tensor>) -> StepOutcome {
        if grads.values().any(|g| !g.all_finite()) {
            log::warn!("adam: non-finite gradient, step {} skipped", self.step + 1);
            return StepOutcome::SkippedNonFinite;
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, value) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            assert_eq!(g.shape(), value.shape(), "adam: gradient shape mismatch for {name}");
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
            for (((p, &gi), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        StepOutcome::Applied
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("p".to_string(), Tensor::scalar(value))])
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(0.005);
        let mut params = single(0.0);
        adam.step(&mut params, &single(1.0));
        assert!((params["p"].item() + 0.005).abs() < 1e-6);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn two_steps() {
        let mut adam = Adam::new(0.005);
        let mut params = single(0.0);
        adam.step(&mut params, &single(1.0));
        adam.step(&mut params, &single(1.0));
        assert_eq!(adam.step_count(), 2);
        assert!((params["p"].item() + 0.010).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut adam = Adam::new(0.005);
        let mut params = single(3.0);
        for _ in 0..5 {
            adam.step(&mut params, &single(0.0));
        }
        assert_eq!(params["p"].item(), 3.0);
    }

    #[test]
    fn non_finite_gradient_skips() {
        let mut adam = Adam::new(0.005);
        let mut params = single(1.0);
        assert_eq!(adam.step(&mut params, &single(f64::NAN)), StepOutcome::SkippedNonFinite);
        assert_eq!(params["p"].item(), 1.0);
        assert_eq!(adam.step_count(), 0);
    }
}
