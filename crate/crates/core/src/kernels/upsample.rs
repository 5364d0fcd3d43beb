//! Bilinear x2 upsampling with half-pixel centers (`align_corners = false`).

use crate::error::{dim_err, Result};
use crate::tensor::{Real, Tensor};

/// For each output index: the two source indices and their weights.
fn taps(in_len: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..in_len * 2)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let frac = src - i0 as f64;
            (i0, i1, 1.0 - frac, frac)
        })
        .collect()
}

pub fn bilinear_upsample_x2<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let ty = taps(s.h);
    let tx = taps(s.w);
    Tensor::from_fn(s.with_hw(s.h * 2, s.w * 2), |n, c, oy, ox| {
        let (y0, y1, wy0, wy1) = ty[oy];
        let (x0, x1, wx0, wx1) = tx[ox];
        let p = input.plane(n, c);
        let v = |y: usize, x: usize| p[y * s.w + x].f64();
        T::of(wy0 * (wx0 * v(y0, x0) + wx1 * v(y0, x1)) + wy1 * (wx0 * v(y1, x0) + wx1 * v(y1, x1)))
    })
}

pub fn bilinear_upsample_x2_backward<T: Real>(input_shape: crate::Shape, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input_shape;
    if grad_out.shape() != s.with_hw(s.h * 2, s.w * 2) {
        return Err(dim_err!("upsample grad_out shape {} mismatch", grad_out.shape()));
    }
    let ty = taps(s.h);
    let tx = taps(s.w);
    let mut gi = Tensor::<T>::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let go = grad_out.plane(n, c);
            let base = (n * s.c + c) * s.plane();
            for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                    let g = go[oy * s.w * 2 + ox];
                    let d = gi.data_mut();
                    for (y, wy) in [(y0, wy0), (y1, wy1)] {
                        for (x, wx) in [(x0, wx0), (x1, wx1)] {
                            let i = base + y * s.w + x;
                            d[i] = d[i] + g * T::of(wy * wx);
                        }
                    }
                }
            }
        }
    }
    Ok(gi)
}
