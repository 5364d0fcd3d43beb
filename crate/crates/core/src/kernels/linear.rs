//! Fully connected layer over flattened items: `(N, C·H·W) -> (N, out)`.

use crate::error::{dim_err, Result};
use crate::probe;
use crate::tensor::{Real, Shape, Tensor};

/// `weight` has shape `(out, in, 1, 1)`; `bias` has length `out`.
pub fn fully_connected<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
) -> Result<Tensor<T>> {
    let is = input.shape();
    let ws = weight.shape();
    let in_f = is.item();
    if ws.c * ws.h * ws.w != in_f {
        return Err(dim_err!(
            "fully connected expects {} input features, got {in_f}",
            ws.c * ws.h * ws.w
        ));
    }
    let out_f = ws.n;
    if let Some(b) = bias {
        if b.len() != out_f {
            return Err(dim_err!("bias length {} != out features {out_f}", b.len()));
        }
    }
    let w = weight.data();
    let mut out = Vec::with_capacity(is.n * out_f);
    for n in 0..is.n {
        let x = input.item(n);
        for o in 0..out_f {
            let row = &w[o * in_f..(o + 1) * in_f];
            let dot: T = row.iter().zip(x).map(|(&a, &b)| a * b).sum();
            out.push(bias.map_or(dot, |b| dot + b[o]));
        }
    }
    probe::record((is.n * in_f * out_f) as u64);
    Tensor::from_vec(Shape::vector(is.n, out_f), out)
}

pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

pub fn fully_connected_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let is = input.shape();
    let ws = weight.shape();
    let in_f = is.item();
    let out_f = ws.n;
    if grad_out.shape() != Shape::vector(is.n, out_f) {
        return Err(dim_err!("fc grad_out shape {} mismatch", grad_out.shape()));
    }
    let w = weight.data();
    let mut gi = vec![T::zero(); is.numel()];
    let mut gw = vec![T::zero(); ws.numel()];
    let mut gb = vec![T::zero(); out_f];
    for n in 0..is.n {
        let x = input.item(n);
        let go = grad_out.item(n);
        let gin = &mut gi[n * in_f..(n + 1) * in_f];
        for o in 0..out_f {
            let g = go[o];
            gb[o] = gb[o] + g;
            let row = &w[o * in_f..(o + 1) * in_f];
            let grow = &mut gw[o * in_f..(o + 1) * in_f];
            for i in 0..in_f {
                gin[i] = gin[i] + g * row[i];
                grow[i] = grow[i] + g * x[i];
            }
        }
    }
    Ok(LinearGrads {
        input: Tensor::from_vec(is, gi)?,
        weight: Tensor::from_vec(ws, gw)?,
        bias: gb,
    })
}
