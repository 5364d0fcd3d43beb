//! Direct grouped 2-D convolution with zero padding.
//!
//! Weights are laid out `(out_channels, in_channels_per_group, kh, kw)`.
//! Output channel `o` belongs to group `o / (out_channels / groups)` and reads
//! only that group's input channels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, dim_err, Result};
use crate::probe;
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvGeom {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl ConvGeom {
    pub fn new(kh: usize, kw: usize) -> Self {
        ConvGeom {
            kernel: (kh, kw),
            stride: (1, 1),
            padding: (0, 0),
            groups: 1,
        }
    }

    pub fn pointwise(groups: usize) -> Self {
        Self::new(1, 1).groups(groups)
    }

    /// Kernel with `k/2` padding on each axis.
    pub fn same(kh: usize, kw: usize) -> Self {
        Self::new(kh, kw).padding(kh / 2, kw / 2)
    }

    pub fn stride(mut self, sh: usize, sw: usize) -> Self {
        self.stride = (sh, sw);
        self
    }

    pub fn padding(mut self, ph: usize, pw: usize) -> Self {
        self.padding = (ph, pw);
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn validate(&self, in_c: usize, out_c: usize) -> Result<()> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        if kh == 0 || kw == 0 {
            return Err(config_err!("kernel dims must be >= 1"));
        }
        if sh == 0 || sw == 0 {
            return Err(config_err!("strides must be >= 1"));
        }
        if self.groups == 0 {
            return Err(config_err!("groups must be >= 1"));
        }
        if !in_c.is_multiple_of(self.groups) {
            return Err(config_err!(
                "groups {} do not divide input channels {in_c}",
                self.groups
            ));
        }
        if !out_c.is_multiple_of(self.groups) {
            return Err(config_err!(
                "groups {} do not divide output channels {out_c}",
                self.groups
            ));
        }
        Ok(())
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(dim_err!(
                "spatial {h}x{w} with padding ({ph},{pw}) is smaller than kernel {kh}x{kw}"
            ));
        }
        Ok(((h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1))
    }

    pub fn weight_shape(&self, in_c: usize, out_c: usize) -> Shape {
        Shape::new(out_c, in_c / self.groups, self.kernel.0, self.kernel.1)
    }
}

/// Weights of one convolution layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeights<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Vec<T>>,
    pub geom: ConvGeom,
}

impl<T: Real> ConvWeights<T> {
    pub fn new(weight: Tensor<T>, bias: Option<Vec<T>>, geom: ConvGeom) -> Result<Self> {
        let ws = weight.shape();
        if (ws.h, ws.w) != geom.kernel {
            return Err(dim_err!(
                "weight spatial dims {}x{} disagree with kernel {:?}",
                ws.h,
                ws.w,
                geom.kernel
            ));
        }
        geom.validate(ws.c * geom.groups, ws.n)?;
        if let Some(b) = &bias {
            if b.len() != ws.n {
                return Err(dim_err!("bias length {} != out channels {}", b.len(), ws.n));
            }
        }
        Ok(ConvWeights { weight, bias, geom })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn in_channels_per_group(&self) -> usize {
        self.weight.shape().c
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels_per_group() * self.geom.groups
    }
}

/// Output positions `o` in `[lo, hi)` for which tap `k` lands inside the input:
/// `0 <= o*s + k - p < len`.
#[inline]
fn tap_range(k: usize, p: usize, s: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
    if len + p <= k {
        return (0, 0);
    }
    let hi = ((len - 1 + p - k) / s + 1).min(out_len);
    (lo.min(hi), hi)
}

fn check_input<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, geom: &ConvGeom) -> Result<()> {
    let ws = weight.shape();
    geom.validate(ws.c * geom.groups, ws.n)?;
    if (ws.h, ws.w) != geom.kernel {
        return Err(dim_err!(
            "weight spatial dims {}x{} disagree with kernel {:?}",
            ws.h,
            ws.w,
            geom.kernel
        ));
    }
    let c = input.shape().c;
    if c != ws.c * geom.groups {
        return Err(dim_err!(
            "input has {c} channels, conv expects {} ({} groups x {})",
            ws.c * geom.groups,
            geom.groups,
            ws.c
        ));
    }
    Ok(())
}

pub fn conv2d<T: Real>(input: &Tensor<T>, w: &ConvWeights<T>) -> Result<Tensor<T>> {
    conv2d_forward(input, &w.weight, w.bias.as_deref(), &w.geom)
}

/// Depthwise convolution: `groups == C`, one input channel per group, and an
/// integer channel multiplier `t = out_channels / C`.
pub fn depthwise_conv2d<T: Real>(input: &Tensor<T>, w: &ConvWeights<T>) -> Result<Tensor<T>> {
    let c = input.shape().c;
    if w.geom.groups != c || w.in_channels_per_group() != 1 {
        return Err(config_err!(
            "depthwise conv needs groups == channels ({c}) and one input channel per group, got groups={} in/group={}",
            w.geom.groups,
            w.in_channels_per_group()
        ));
    }
    conv2d(input, w)
}

pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
    geom: &ConvGeom,
) -> Result<Tensor<T>> {
    check_input(input, weight, geom)?;
    let is = input.shape();
    let ws = weight.shape();
    let (ho, wo) = geom.output_hw(is.h, is.w)?;
    let (kh, kw) = geom.kernel;
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.padding;
    let oc = ws.n;
    let ipg = ws.c;
    let opg = oc / geom.groups;
    let out_shape = Shape::new(is.n, oc, ho, wo);
    let mut out = vec![T::zero(); out_shape.numel()];
    let wdata = weight.data();

    let macs: u64 = out
        .par_chunks_mut(ho * wo)
        .enumerate()
        .map(|(idx, plane)| {
            let b = idx / oc;
            let o = idx % oc;
            let g = o / opg;
            if let Some(bias) = bias {
                plane.fill(bias[o]);
            }
            let mut macs = 0u64;
            for icg in 0..ipg {
                let src = input.plane(b, g * ipg + icg);
                for ky in 0..kh {
                    let (oy0, oy1) = tap_range(ky, ph, sh, is.h, ho);
                    for kx in 0..kw {
                        // Padded taps multiply zeros; they count as executed.
                        macs += (ho * wo) as u64;
                        let wv = wdata[((o * ipg + icg) * kh + ky) * kw + kx];
                        let (ox0, ox1) = tap_range(kx, pw, sw, is.w, wo);
                        for oy in oy0..oy1 {
                            let iy = oy * sh + ky - ph;
                            let row = &src[iy * is.w..(iy + 1) * is.w];
                            let orow = &mut plane[oy * wo..(oy + 1) * wo];
                            for (ox, acc) in orow.iter_mut().enumerate().take(ox1).skip(ox0) {
                                *acc = *acc + wv * row[ox * sw + kx - pw];
                            }
                        }
                    }
                }
            }
            macs
        })
        .sum();
    probe::record(macs);
    Tensor::from_vec(out_shape, out)
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Vec<T>>,
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    geom: &ConvGeom,
    grad_out: &Tensor<T>,
    with_bias: bool,
) -> Result<ConvGrads<T>> {
    check_input(input, weight, geom)?;
    let is = input.shape();
    let ws = weight.shape();
    let (ho, wo) = geom.output_hw(is.h, is.w)?;
    let gs = grad_out.shape();
    if gs != Shape::new(is.n, ws.n, ho, wo) {
        return Err(dim_err!(
            "conv grad_out shape {gs} != expected {}",
            Shape::new(is.n, ws.n, ho, wo)
        ));
    }
    let (kh, kw) = geom.kernel;
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.padding;
    let oc = ws.n;
    let ipg = ws.c;
    let opg = oc / geom.groups;
    let wdata = weight.data();

    // d/dW: one task per output channel, fixed accumulation order.
    let mut gw = vec![T::zero(); ws.numel()];
    gw.par_chunks_mut(ipg * kh * kw)
        .enumerate()
        .for_each(|(o, wchunk)| {
            let g = o / opg;
            for b in 0..is.n {
                let go = grad_out.plane(b, o);
                for icg in 0..ipg {
                    let src = input.plane(b, g * ipg + icg);
                    for ky in 0..kh {
                        let (oy0, oy1) = tap_range(ky, ph, sh, is.h, ho);
                        for kx in 0..kw {
                            let (ox0, ox1) = tap_range(kx, pw, sw, is.w, wo);
                            let mut acc = T::zero();
                            for oy in oy0..oy1 {
                                let iy = oy * sh + ky - ph;
                                let row = &src[iy * is.w..(iy + 1) * is.w];
                                let grow = &go[oy * wo..(oy + 1) * wo];
                                for ox in ox0..ox1 {
                                    acc = acc + grow[ox] * row[ox * sw + kx - pw];
                                }
                            }
                            let slot = &mut wchunk[(icg * kh + ky) * kw + kx];
                            *slot = *slot + acc;
                        }
                    }
                }
            }
        });

    // d/dx: one task per input plane; only the owning group's outputs touch it.
    let mut gi = vec![T::zero(); is.numel()];
    gi.par_chunks_mut(is.h * is.w)
        .enumerate()
        .for_each(|(idx, plane)| {
            let b = idx / is.c;
            let c = idx % is.c;
            let g = c / ipg;
            let icg = c % ipg;
            for o in g * opg..(g + 1) * opg {
                let go = grad_out.plane(b, o);
                for ky in 0..kh {
                    let (oy0, oy1) = tap_range(ky, ph, sh, is.h, ho);
                    for kx in 0..kw {
                        let wv = wdata[((o * ipg + icg) * kh + ky) * kw + kx];
                        let (ox0, ox1) = tap_range(kx, pw, sw, is.w, wo);
                        for oy in oy0..oy1 {
                            let iy = oy * sh + ky - ph;
                            let grow = &go[oy * wo..(oy + 1) * wo];
                            let irow = &mut plane[iy * is.w..(iy + 1) * is.w];
                            for ox in ox0..ox1 {
                                let ix = ox * sw + kx - pw;
                                irow[ix] = irow[ix] + wv * grow[ox];
                            }
                        }
                    }
                }
            }
        });

    let bias = with_bias.then(|| {
        (0..oc)
            .map(|o| {
                (0..is.n)
                    .map(|b| grad_out.plane(b, o).iter().copied().sum::<T>())
                    .sum()
            })
            .collect()
    });

    Ok(ConvGrads {
        input: Tensor::from_vec(is, gi)?,
        weight: Tensor::from_vec(ws, gw)?,
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Channel-space matmul: y[:, o] = Σ_c W[o, c] x[:, c] at every pixel.
    fn dense_pointwise(x: &Tensor<f32>, w: &[Vec<f32>]) -> Tensor<f32> {
        let s = x.shape();
        Tensor::from_fn(s.with_c(w.len()), |n, o, h, ww| {
            (0..s.c).map(|c| w[o][c] * x.at(n, c, h, ww)).sum()
        })
    }

    #[test]
    fn identity_pointwise_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f32>::randn(Shape::new(2, 5, 3, 4), 1.0, &mut rng);
        let w = Tensor::from_fn(Shape::new(5, 5, 1, 1), |o, c, _, _| {
            if o == c {
                1.0
            } else {
                0.0
            }
        });
        let cw = ConvWeights::new(w, None, ConvGeom::pointwise(1)).unwrap();
        assert_eq!(conv2d(&x, &cw).unwrap(), x);
    }

    #[test]
    fn grouped_pointwise_equals_block_diagonal_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f32>::randn(Shape::new(1, 4, 2, 2), 1.0, &mut rng);
        let w = Tensor::<f32>::randn(Shape::new(4, 2, 1, 1), 1.0, &mut rng);
        let mut dense = vec![vec![0.0f32; 4]; 4];
        for o in 0..4 {
            let g = o / 2;
            for icg in 0..2 {
                dense[o][g * 2 + icg] = w.at(o, icg, 0, 0);
            }
        }
        let cw = ConvWeights::new(w, None, ConvGeom::pointwise(2)).unwrap();
        let y = conv2d(&x, &cw).unwrap();
        assert!(y.max_abs_diff(&dense_pointwise(&x, &dense)) < 1e-5);
    }

    #[test]
    fn stem_vertical_conv_shape_and_cost() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 3, 224, 224));
        let geom = ConvGeom::new(3, 1).stride(2, 1).padding(1, 0);
        let w = Tensor::zeros(geom.weight_shape(3, 4));
        let cw = ConvWeights::new(w, None, geom).unwrap();
        let (y, macs) = probe::count_macs(|| conv2d(&x, &cw).unwrap());
        assert_eq!(y.shape(), Shape::new(1, 4, 112, 224));
        assert_eq!(macs, 903_168);
    }

    #[test]
    fn depthwise_requires_groups_equal_channels() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 4, 5, 5));
        let geom = ConvGeom::same(3, 3).groups(2);
        let cw = ConvWeights::new(Tensor::zeros(geom.weight_shape(4, 4)), None, geom).unwrap();
        assert!(depthwise_conv2d(&x, &cw).is_err());
    }

    #[test]
    fn depthwise_multiplier_expands_channels() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 16, 8, 8));
        let geom = ConvGeom::same(3, 3).groups(16);
        let cw = ConvWeights::new(Tensor::zeros(geom.weight_shape(16, 64)), None, geom).unwrap();
        assert_eq!(depthwise_conv2d(&x, &cw).unwrap().shape().c, 64);
    }

    #[test]
    fn depthwise_unit_1x1_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f32>::randn(Shape::new(1, 6, 4, 4), 1.0, &mut rng);
        let geom = ConvGeom::pointwise(6);
        let cw = ConvWeights::new(Tensor::full(geom.weight_shape(6, 6), 1.0), None, geom).unwrap();
        assert_eq!(depthwise_conv2d(&x, &cw).unwrap(), x);
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 3, 4, 4));
        let geom = ConvGeom::pointwise(1);
        let w = Tensor::zeros(geom.weight_shape(4, 4));
        assert!(conv2d_forward(&x, &w, None, &geom).is_err());
        let geom = ConvGeom::pointwise(2);
        assert!(geom.validate(3, 4).is_err());
        let big = ConvGeom::new(7, 7);
        assert!(big.output_hw(4, 4).is_err());
    }

    #[test]
    fn tap_range_matches_brute_force() {
        for k in 0..5 {
            for p in 0..3 {
                for s in 1..4 {
                    for len in 1usize..9 {
                        let out_len = (len + 2 * p).saturating_sub(4) / s + 1;
                        let (lo, hi) = tap_range(k, p, s, len, out_len);
                        for o in 0..out_len {
                            let pos = (o * s + k) as isize - p as isize;
                            let inside = pos >= 0 && (pos as usize) < len;
                            assert_eq!(inside, o >= lo && o < hi, "k{k} p{p} s{s} len{len} o{o}");
                        }
                    }
                }
            }
        }
    }
}
