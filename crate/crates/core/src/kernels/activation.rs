use crate::error::{dim_err, Result};
use crate::tensor::{Real, Tensor};

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

pub fn relu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    input.zip_map(grad_out, |x, g| if x > T::zero() { g } else { T::zero() })
}

pub fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Softmax over channels at every `(n, h, w)` position.
pub fn softmax<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for p in 0..s.plane() {
            let at = |c: usize| (n * s.c + c) * s.plane() + p;
            let max = (0..s.c).map(|c| input.data()[at(c)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for c in 0..s.c {
                let e = (input.data()[at(c)] - max).exp();
                out.data_mut()[at(c)] = e;
                total = total + e;
            }
            for c in 0..s.c {
                let i = at(c);
                out.data_mut()[i] = out.data()[i] / total;
            }
        }
    }
    out
}

/// Log-softmax of one logit row.
pub fn log_softmax_row<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    logits.iter().map(|&v| v - lse).collect()
}

/// Adjoint of `softmax` given its output.
pub fn softmax_backward<T: Real>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let s = output.shape();
    if grad_out.shape() != s {
        return Err(dim_err!("softmax grad_out shape mismatch"));
    }
    let mut gi = Tensor::zeros(s);
    for n in 0..s.n {
        for p in 0..s.plane() {
            let at = |c: usize| (n * s.c + c) * s.plane() + p;
            let dot: T = (0..s.c).map(|c| output.data()[at(c)] * grad_out.data()[at(c)]).sum();
            for c in 0..s.c {
                let i = at(c);
                gi.data_mut()[i] = output.data()[i] * (grad_out.data()[i] - dot);
            }
        }
    }
    Ok(gi)
}
