//! Micro-Factorized convolutions.
//!
//! A pointwise `C_out×C_in` weight is replaced by `P·Φ·Qᵀ`: a squeezing group
//! conv `Q` (G1 groups, `C_in → C_mid`), a channel shuffle `Φ`, and an
//! expanding group conv `P` (G2 groups, `C_mid → C_out`). A `k×k` depthwise
//! kernel is replaced by a `k×1` kernel followed by a `1×k` kernel.

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::error::{config_err, dim_err, Result};
use crate::kernels::{channel_permute, conv2d_forward, ConvGeom};
use crate::tensor::{Real, Shape, Tensor};

/// `λ·√(C/R)`, the group count that balances channel count and connectivity.
pub fn adaptive_group_count(c: usize, r: usize, lambda: f64) -> Result<f64> {
    if c == 0 || r == 0 {
        return Err(config_err!("channels and ratio must be positive"));
    }
    if !c.is_multiple_of(r) {
        return Err(config_err!("reduction ratio {r} does not divide {c} channels"));
    }
    Ok(lambda * ((c / r) as f64).sqrt())
}

/// Integer split `G1·G2 = C_mid` with `G1 | C_in`, `G2 | C_out`, minimizing
/// `|G1 − G2|`; ties go to the smaller `G1`.
pub fn relax_group_pair(c_in: usize, c_mid: usize, c_out: usize) -> Result<(usize, usize)> {
    if c_in == 0 || c_mid == 0 || c_out == 0 {
        return Err(config_err!("channel counts must be positive"));
    }
    (1..=c_mid)
        .filter(|g1| c_mid.is_multiple_of(*g1))
        .map(|g1| (g1, c_mid / g1))
        .filter(|&(g1, g2)| c_in.is_multiple_of(g1) && c_out.is_multiple_of(g2))
        .min_by_key(|&(g1, g2)| (g1.abs_diff(g2), g1))
        .ok_or_else(|| config_err!("no group pair for C_in={c_in}, C_mid={c_mid}, C_out={c_out}"))
}

/// Gather permutation `out[i] = in[π(i)]` with `π(i) = (i mod G)·(C/G) + ⌊i/G⌋`.
pub fn channel_shuffle_perm(c_mid: usize, g1: usize) -> Result<Vec<usize>> {
    if g1 == 0 || !c_mid.is_multiple_of(g1) {
        return Err(config_err!("shuffle groups {g1} do not divide {c_mid} channels"));
    }
    let per = c_mid / g1;
    Ok((0..c_mid).map(|i| (i % g1) * per + i / g1).collect())
}

fn is_permutation(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    p.iter().all(|&v| v < p.len() && !std::mem::replace(&mut seen[v], true))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointwiseFactorization<T> {
    pub c_in: usize,
    pub c_mid: usize,
    pub c_out: usize,
    pub g1: usize,
    pub g2: usize,
    /// Q: `(C_mid, C_in/G1, 1, 1)`.
    pub squeeze: Tensor<T>,
    /// Φ as a gather permutation over `C_mid`.
    pub shuffle: Vec<usize>,
    /// P: `(C_out, C_mid/G2, 1, 1)`.
    pub expand: Tensor<T>,
}

impl<T: Real> PointwiseFactorization<T> {
    pub fn new(
        c_in: usize,
        c_mid: usize,
        c_out: usize,
        (g1, g2): (usize, usize),
        squeeze: Tensor<T>,
        expand: Tensor<T>,
    ) -> Result<Self> {
        ConvGeom::pointwise(g1).validate(c_in, c_mid)?;
        ConvGeom::pointwise(g2).validate(c_mid, c_out)?;
        if squeeze.shape() != ConvGeom::pointwise(g1).weight_shape(c_in, c_mid) {
            return Err(dim_err!("squeeze weight has shape {}", squeeze.shape()));
        }
        if expand.shape() != ConvGeom::pointwise(g2).weight_shape(c_mid, c_out) {
            return Err(dim_err!("expand weight has shape {}", expand.shape()));
        }
        Ok(PointwiseFactorization {
            c_in,
            c_mid,
            c_out,
            g1,
            g2,
            squeeze,
            shuffle: channel_shuffle_perm(c_mid, g1)?,
            expand,
        })
    }

    pub fn random(
        c_in: usize,
        c_mid: usize,
        c_out: usize,
        groups: (usize, usize),
        rng: &mut impl Rng,
    ) -> Result<Self> {
        ConvGeom::pointwise(groups.0).validate(c_in, c_mid)?;
        ConvGeom::pointwise(groups.1).validate(c_mid, c_out)?;
        let q = Tensor::randn(ConvGeom::pointwise(groups.0).weight_shape(c_in, c_mid), 1.0, rng);
        let p = Tensor::randn(ConvGeom::pointwise(groups.1).weight_shape(c_mid, c_out), 1.0, rng);
        Self::new(c_in, c_mid, c_out, groups, q, p)
    }

    /// Replaces the shuffle with an arbitrary bijection.
    pub fn with_shuffle(mut self, perm: Vec<usize>) -> Result<Self> {
        if perm.len() != self.c_mid || !is_permutation(&perm) {
            return Err(config_err!("shuffle is not a permutation of {} channels", self.c_mid));
        }
        self.shuffle = perm;
        Ok(self)
    }

    /// `C_in / C_mid`.
    pub fn reduction(&self) -> f64 {
        self.c_in as f64 / self.c_mid as f64
    }

    /// MAdds per output position: `C_in·C_mid/G1 + C_mid·C_out/G2`.
    pub fn madds_per_position(&self) -> u64 {
        (self.c_in * self.c_mid / self.g1 + self.c_mid * self.c_out / self.g2) as u64
    }

    pub fn params(&self) -> u64 {
        (self.squeeze.len() + self.expand.len()) as u64
    }
}

pub fn mf_pointwise_forward<T: Real>(x: &Tensor<T>, f: &PointwiseFactorization<T>) -> Result<Tensor<T>> {
    if x.shape().c != f.c_in {
        return Err(dim_err!("input has {} channels, factorization expects {}", x.shape().c, f.c_in));
    }
    let mid = conv2d_forward(x, &f.squeeze, None, &ConvGeom::pointwise(f.g1))?;
    let mid = channel_permute(&mid, &f.shuffle)?;
    conv2d_forward(&mid, &f.expand, None, &ConvGeom::pointwise(f.g2))
}

/// Dense matrix of a grouped 1×1 weight, `out × in`.
pub fn grouped_dense(weight: &Tensor<impl Real>, groups: usize) -> DMatrix<f64> {
    let s = weight.shape();
    let (out, per_in) = (s.n, s.c);
    let per_out = out / groups;
    let mut m = DMatrix::zeros(out, per_in * groups);
    for o in 0..out {
        let g = o / per_out;
        for ic in 0..per_in {
            m[(o, g * per_in + ic)] = weight.at(o, ic, 0, 0).f64();
        }
    }
    m
}

/// Gather permutation as a matrix: `(Φ·x)[i] = x[perm[i]]`.
pub fn permutation_matrix(perm: &[usize]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(perm.len(), perm.len());
    for (i, &src) in perm.iter().enumerate() {
        m[(i, src)] = 1.0;
    }
    m
}

/// `P·Φ·Qᵀ` as an explicit `C_out×C_in` matrix.
pub fn compose_dense<T: Real>(f: &PointwiseFactorization<T>) -> DMatrix<f64> {
    compose_dense_with(f, &DMatrix::identity(f.c_mid, f.c_mid))
}

/// `P·Φ·M·Qᵀ`: composition with an extra `C_mid×C_mid` channel mix applied
/// right after the squeeze conv (where the block's middle activation sits).
pub fn compose_dense_with<T: Real>(f: &PointwiseFactorization<T>, middle: &DMatrix<f64>) -> DMatrix<f64> {
    let q = grouped_dense(&f.squeeze, f.g1);
    let p = grouped_dense(&f.expand, f.g2);
    p * permutation_matrix(&f.shuffle) * middle * q
}

/// Numerical rank of each block of a `G2×G1` grid over `w`
/// (rows split into output groups, columns into input groups).
pub fn block_rank_map(w: &DMatrix<f64>, g1: usize, g2: usize) -> Result<Vec<Vec<usize>>> {
    let (rows, cols) = w.shape();
    if g1 == 0 || g2 == 0 || rows % g2 != 0 || cols % g1 != 0 {
        return Err(config_err!("{rows}×{cols} matrix does not split into a {g2}×{g1} grid"));
    }
    let (bh, bw) = (rows / g2, cols / g1);
    Ok((0..g2)
        .map(|p| {
            (0..g1)
                .map(|q| numerical_rank(&w.view((p * bh, q * bw), (bh, bw)).into_owned()))
                .collect()
        })
        .collect())
}

/// Count of singular values above `1e-6·σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > 1e-6 * max).count()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthwiseFactorization<T> {
    pub k: usize,
    pub channels: usize,
    pub multiplier: usize,
    pub stride: usize,
    /// `(C·t, 1, k, 1)`
    pub vertical: Tensor<T>,
    /// `(C·t, 1, 1, k)`
    pub horizontal: Tensor<T>,
}

impl<T: Real> DepthwiseFactorization<T> {
    pub fn new(
        k: usize,
        channels: usize,
        multiplier: usize,
        stride: usize,
        vertical: Tensor<T>,
        horizontal: Tensor<T>,
    ) -> Result<Self> {
        if k == 0 || channels == 0 || multiplier == 0 || stride == 0 {
            return Err(config_err!("depthwise factorization needs positive k, channels, t, stride"));
        }
        let out = channels * multiplier;
        if vertical.shape() != Shape::new(out, 1, k, 1) || horizontal.shape() != Shape::new(out, 1, 1, k) {
            return Err(dim_err!(
                "depthwise kernels {} / {} do not match k={k}, C·t={out}",
                vertical.shape(),
                horizontal.shape()
            ));
        }
        Ok(DepthwiseFactorization { k, channels, multiplier, stride, vertical, horizontal })
    }

    pub fn random(k: usize, channels: usize, multiplier: usize, stride: usize, rng: &mut impl Rng) -> Result<Self> {
        let out = channels * multiplier;
        let v = Tensor::randn(Shape::new(out, 1, k, 1), 1.0, rng);
        let h = Tensor::randn(Shape::new(out, 1, 1, k), 1.0, rng);
        Self::new(k, channels, multiplier, stride, v, h)
    }

    pub fn out_channels(&self) -> usize {
        self.channels * self.multiplier
    }

    pub fn vertical_geom(&self) -> ConvGeom {
        ConvGeom::new(self.k, 1)
            .stride(self.stride, 1)
            .padding(self.k / 2, 0)
            .groups(self.channels)
    }

    pub fn horizontal_geom(&self) -> ConvGeom {
        ConvGeom::new(1, self.k)
            .stride(1, self.stride)
            .padding(0, self.k / 2)
            .groups(self.out_channels())
    }

    /// MAdds on an `h×w` input.
    pub fn madds(&self, h: usize, w: usize) -> Result<u64> {
        let (ho, wi) = self.vertical_geom().output_hw(h, w)?;
        let (ho2, wo) = self.horizontal_geom().output_hw(ho, wi)?;
        let c = self.out_channels() as u64;
        Ok((ho * wi) as u64 * self.k as u64 * c + (ho2 * wo) as u64 * self.k as u64 * c)
    }
}

pub fn mf_depthwise_forward<T: Real>(x: &Tensor<T>, d: &DepthwiseFactorization<T>) -> Result<Tensor<T>> {
    if x.shape().c != d.channels {
        return Err(dim_err!("input has {} channels, factorization expects {}", x.shape().c, d.channels));
    }
    let v = conv2d_forward(x, &d.vertical, None, &d.vertical_geom())?;
    conv2d_forward(&v, &d.horizontal, None, &d.horizontal_geom())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TradeoffPoint {
    pub g: f64,
    /// Channel count affordable at budget `o`.
    pub c: f64,
    /// Connections per output node.
    pub e: f64,
    pub o: f64,
    pub r: f64,
    /// True at the crossing `C == E`.
    pub intercept: bool,
}

/// `G*` where `√(O·R·G/2) == O/(2G)`, i.e. `G³ = O/(2R)`.
pub fn tradeoff_intercept(o: f64, r: f64) -> f64 {
    (o / (2.0 * r)).cbrt()
}

pub fn tradeoff_point(o: f64, r: f64, g: f64) -> TradeoffPoint {
    let c = (o * r * g / 2.0).sqrt();
    let e = o / (2.0 * g);
    TradeoffPoint {
        g,
        c,
        e,
        o,
        r,
        intercept: (c - e).abs() <= 1e-9 * c.max(e),
    }
}

/// `C` and `E` for each `G`, with the intercept `G*` inserted in order.
pub fn tradeoff_curve(o: f64, r: f64, gs: &[f64]) -> Vec<TradeoffPoint> {
    let star = tradeoff_intercept(o, r);
    let mut pts: Vec<TradeoffPoint> = gs.iter().map(|&g| tradeoff_point(o, r, g)).collect();
    if !pts.iter().any(|p| p.intercept) {
        pts.push(TradeoffPoint { intercept: true, ..tradeoff_point(o, r, star) });
    }
    pts.sort_by(|a, b| a.g.total_cmp(&b.g));
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::invert_permutation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adaptive_groups() {
        assert_eq!(adaptive_group_count(18, 2, 1.0).unwrap(), 3.0);
        assert_eq!(adaptive_group_count(4, 4, 1.0).unwrap(), 1.0);
        assert!((adaptive_group_count(288, 6, 1.0).unwrap() - 48f64.sqrt()).abs() < 1e-12);
        assert!(adaptive_group_count(10, 3, 1.0).is_err());
    }

    #[test]
    fn relaxed_pairs() {
        assert_eq!(relax_group_pair(64, 24, 144).unwrap(), (4, 6));
        assert_eq!(relax_group_pair(9, 9, 9).unwrap(), (3, 3));
        assert_eq!(relax_group_pair(192, 48, 192).unwrap(), (6, 8));
        assert_eq!(relax_group_pair(7, 5, 11).unwrap_err().kind(), "config");
    }

    #[test]
    fn shuffle_examples() {
        assert_eq!(channel_shuffle_perm(6, 3).unwrap(), vec![0, 2, 4, 1, 3, 5]);
        assert_eq!(channel_shuffle_perm(5, 1).unwrap(), vec![0, 1, 2, 3, 4]);
        let p = channel_shuffle_perm(12, 4).unwrap();
        assert_eq!(invert_permutation(&p), channel_shuffle_perm(12, 3).unwrap());
        assert!(channel_shuffle_perm(6, 4).is_err());
    }

    #[test]
    fn identity_factors_are_identity() {
        let g = 3;
        let c = 9;
        let eye = |c: usize, g: usize| {
            let per = c / g;
            Tensor::<f64>::from_fn(Shape::new(c, per, 1, 1), |o, i, _, _| if o % per == i { 1.0 } else { 0.0 })
        };
        let f = PointwiseFactorization::new(c, c, c, (g, g), eye(c, g), eye(c, g))
            .unwrap()
            .with_shuffle((0..c).collect())
            .unwrap();
        assert_eq!(compose_dense(&f), DMatrix::identity(c, c));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::randn(Shape::new(2, c, 3, 3), 1.0, &mut rng);
        assert_eq!(mf_pointwise_forward(&x, &f).unwrap(), x);
    }

    #[test]
    fn every_output_reaches_every_input_once() {
        let ones = |s: Shape| Tensor::<f64>::full(s, 1.0);
        let f = PointwiseFactorization::new(
            18,
            9,
            18,
            (3, 3),
            ones(ConvGeom::pointwise(3).weight_shape(18, 9)),
            ones(ConvGeom::pointwise(3).weight_shape(9, 18)),
        )
        .unwrap();
        assert_eq!(compose_dense(&f), DMatrix::from_element(18, 18, 1.0));
        assert_eq!(f.madds_per_position(), 108);
    }

    #[test]
    fn zero_matrix_has_rank_zero_blocks() {
        let w = DMatrix::zeros(6, 6);
        assert_eq!(block_rank_map(&w, 3, 3).unwrap(), vec![vec![0; 3]; 3]);
        assert!(block_rank_map(&w, 4, 3).is_err());
    }

    #[test]
    fn separable_kernel_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = DepthwiseFactorization::<f32>::random(5, 64, 1, 1, &mut rng).unwrap();
        assert_eq!(d.madds(14, 14).unwrap(), 125_440);
    }

    #[test]
    fn tradeoff_examples() {
        let p = tradeoff_point(324.0, 2.0, 3.0);
        assert!((p.c - 972f64.sqrt()).abs() < 1e-12);
        assert_eq!(p.e, 54.0);
        assert_eq!(tradeoff_point(324.0, 2.0, 1.0).e, 162.0);
        let curve = tradeoff_curve(324.0, 2.0, &[1.0, 2.0, 3.0, 8.0]);
        let star = curve.iter().find(|p| p.intercept).unwrap();
        assert!((star.c - star.e).abs() < 1e-9);
        assert!((star.g - (star.c / 2.0).sqrt()).abs() < 1e-9);
    }
}
