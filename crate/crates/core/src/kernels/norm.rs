//! Per-channel batch normalization.

use crate::error::{dim_err, Result};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with the batch statistics.
    Train,
    /// Affine map from the running statistics.
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormStats<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
}

impl<T: Real> NormStats<T> {
    pub fn identity(channels: usize) -> Self {
        NormStats {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: T::of(DEFAULT_EPS),
        }
    }
}

#[derive(Clone, Debug)]
pub struct NormOutput<T> {
    pub output: Tensor<T>,
    /// Statistics actually used for normalization.
    pub mean: Vec<T>,
    /// Biased variance of the batch (train) or running variance (eval).
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
}

pub fn batch_norm<T: Real>(input: &Tensor<T>, stats: &NormStats<T>, mode: NormMode) -> Result<NormOutput<T>> {
    let s = input.shape();
    for (name, v) in [
        ("gamma", &stats.gamma),
        ("beta", &stats.beta),
        ("running_mean", &stats.running_mean),
        ("running_var", &stats.running_var),
    ] {
        if v.len() != s.c {
            return Err(dim_err!("batch norm {name} has {} entries for {} channels", v.len(), s.c));
        }
    }
    let (mean, var) = match mode {
        NormMode::Eval => (stats.running_mean.clone(), stats.running_var.clone()),
        NormMode::Train => {
            let m = T::of((s.n * s.plane()) as f64);
            let mut mean = vec![T::zero(); s.c];
            let mut var = vec![T::zero(); s.c];
            for c in 0..s.c {
                let mu = (0..s.n).map(|n| input.plane(n, c).iter().copied().sum::<T>()).sum::<T>() / m;
                let v = (0..s.n)
                    .map(|n| input.plane(n, c).iter().map(|&x| (x - mu) * (x - mu)).sum::<T>())
                    .sum::<T>()
                    / m;
                mean[c] = mu;
                var[c] = v;
            }
            (mean, var)
        }
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + stats.eps).sqrt()).collect();
    let output = Tensor::from_fn(s, |n, c, h, w| {
        (input.at(n, c, h, w) - mean[c]) * inv_std[c] * stats.gamma[c] + stats.beta[c]
    });
    Ok(NormOutput { output, mean, var, inv_std })
}

pub struct NormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub fn batch_norm_backward<T: Real>(
    input: &Tensor<T>,
    gamma: &[T],
    mean: &[T],
    inv_std: &[T],
    mode: NormMode,
    grad_out: &Tensor<T>,
) -> Result<NormGrads<T>> {
    let s = input.shape();
    if grad_out.shape() != s {
        return Err(dim_err!("batch norm grad_out shape {} != {s}", grad_out.shape()));
    }
    let m = T::of((s.n * s.plane()) as f64);
    let mut gi = Tensor::zeros(s);
    let mut gg = vec![T::zero(); s.c];
    let mut gb = vec![T::zero(); s.c];
    for c in 0..s.c {
        let xhat = |x: T| (x - mean[c]) * inv_std[c];
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for n in 0..s.n {
            for (&x, &dy) in input.plane(n, c).iter().zip(grad_out.plane(n, c)) {
                sum_dy = sum_dy + dy;
                sum_dy_xhat = sum_dy_xhat + dy * xhat(x);
            }
        }
        gg[c] = sum_dy_xhat;
        gb[c] = sum_dy;
        let scale = gamma[c] * inv_std[c];
        for n in 0..s.n {
            for i in 0..s.plane() {
                let idx = (n * s.c + c) * s.plane() + i;
                let dy = grad_out.data()[idx];
                gi.data_mut()[idx] = match mode {
                    NormMode::Eval => dy * scale,
                    NormMode::Train => {
                        let xh = xhat(input.data()[idx]);
                        scale * (dy - sum_dy / m - xh * sum_dy_xhat / m)
                    }
                };
            }
        }
    }
    Ok(NormGrads { input: gi, gamma: gg, beta: gb })
}
