//! Central finite-difference oracle for checking tape gradients.

use std::collections::BTreeMap;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative error used throughout: `|ad − fd| / (|fd| + 1e-8)`.
pub fn relative_error(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / (fd.abs() + 1e-8)
}

/// Maximum relative error between the reverse-mode gradient of `f` at
/// `point` and a central-difference estimate with step `h`.
pub fn finite_difference_check<F>(f: F, point: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let params = BTreeMap::from([(String::new(), point.clone())]);
    check_params(|tape, vars| f(tape, vars[""]), &params, None, h)
}

/// Multi-parameter variant: `f` receives one leaf per named parameter.
/// When `only` is given, finite differences are taken for those names only
/// (the remaining parameters are still passed to `f`).
pub fn check_params<F>(f: F, params: &BTreeMap<String, Tensor>, only: Option<&[&str]>, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var>,
{
    let eval = |values: &BTreeMap<String, Tensor>| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: BTreeMap<String, Var> = values.iter().map(|(k, v)| (k.clone(), tape.leaf(v.clone()))).collect();
        let root = f(&mut tape, &vars)?;
        let value = tape.item(root);
        if !value.is_finite() {
            return Err(Error::NonFinite("finite-difference oracle: function value".into()));
        }
        Ok(value)
    };

    let mut tape = Tape::new();
    let vars: BTreeMap<String, Var> = params.iter().map(|(k, v)| (k.clone(), tape.leaf(v.clone()))).collect();
    let root = f(&mut tape, &vars)?;
    if !tape.item(root).is_finite() {
        return Err(Error::NonFinite("finite-difference oracle: function value".into()));
    }
    let grads = tape.backward(root)?;

    let mut worst: f64 = 0.0;
    let mut shifted = params.clone();
    for (name, value) in params {
        if let Some(names) = only {
            if !names.contains(&name.as_str()) {
                continue;
            }
        }
        let ad = grads.wrt(vars[name]);
        for k in 0..value.len() {
            let orig = value.data()[k];
            shifted.get_mut(name).unwrap().data_mut()[k] = orig + h;
            let up = eval(&shifted)?;
            shifted.get_mut(name).unwrap().data_mut()[k] = orig - h;
            let down = eval(&shifted)?;
            shifted.get_mut(name).unwrap().data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(ad.data()[k], fd));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let p = Tensor::column(&[0.3, -1.7, 2.2]);
        let err = finite_difference_check(
            |t, x| {
                let s = t.square(x);
                let s = t.sum(s);
                Ok(t.scale(s, 0.5))
            },
            &p,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn constant_function() {
        let p = Tensor::column(&[1.0, 2.0]);
        let err = finite_difference_check(
            |t, x| {
                let z = t.scale(x, 0.0);
                let s = t.sum(z);
                Ok(t.offset(s, 4.0))
            },
            &p,
            DEFAULT_STEP,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_finite_value_is_reported() {
        let p = Tensor::column(&[-1.0]);
        let r = finite_difference_check(
            |t, x| {
                let l = t.log(x);
                Ok(t.sum(l))
            },
            &p,
            DEFAULT_STEP,
        );
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
