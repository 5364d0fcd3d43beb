use crate::error::{dim_err, Result};
use crate::tensor::{Real, Tensor};

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, |x, y| x + y)
}

/// Gathers channels: output channel `i` is input channel `perm[i]`.
pub fn channel_permute<T: Real>(input: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let s = input.shape();
    if perm.len() != s.c {
        return Err(dim_err!("permutation of length {} for {} channels", perm.len(), s.c));
    }
    let mut out = Tensor::zeros(s);
    let p = s.plane();
    for n in 0..s.n {
        for (i, &src) in perm.iter().enumerate() {
            let dst = (n * s.c + i) * p;
            out.data_mut()[dst..dst + p].copy_from_slice(input.plane(n, src));
        }
    }
    Ok(out)
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}
