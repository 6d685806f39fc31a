//! Central finite-difference verification of analytic gradients.

use super::{Scalar, Tape, Tensor, Var};
use crate::error::Result;

/// Maximum relative error between analytic gradients and central differences
/// `(f(x+ε) − f(x−ε)) / 2ε` over every coordinate of every input.
///
/// `build` must construct a scalar loss from the given leaves (compose with
/// `sum` otherwise). Run this with `T = f64`: at ε around `1e-3`, single
/// precision loses the difference to cancellation.
pub fn finite_difference_check<T, F>(inputs: &[Tensor<T>], epsilon: T, build: F) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor<T>]| -> Result<(T, Vec<Vec<T>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        let value = tape.value(loss).item();
        tape.backward(loss)?;
        let grads = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();
        Ok((value, grads))
    };

    let (_, analytic) = eval(inputs)?;

    let floor = T::from_f64(1e-8);
    let two = T::from_f64(2.0);
    let mut worst = T::zero();
    let mut perturbed: Vec<Tensor<T>> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        for ci in 0..input.numel() {
            let base = input.data()[ci];
            perturbed[ti].data_mut()[ci] = base + epsilon;
            let (plus, _) = eval(&perturbed)?;
            perturbed[ti].data_mut()[ci] = base - epsilon;
            let (minus, _) = eval(&perturbed)?;
            perturbed[ti].data_mut()[ci] = base;

            let numeric = (plus - minus) / (two * epsilon);
            let a = analytic[ti][ci];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
