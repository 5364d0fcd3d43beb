//! Dynamic Shift-Max activation.
//!
//! Channels are split into `G` groups; `group_shift` rotates the channel axis
//! by whole groups. The activation takes, per channel, the maximum over `K`
//! branches of a `J`-term fusion of the channel with its group shifts:
//!
//! ```text
//! y[i] = max_k  Σ_{j<J}  a[k][i][j](x) · x[(i + j·C/G) mod C]
//! ```
//!
//! The coefficients come from a squeeze-style hyper-function on the pooled
//! input and are bounded around a base value `θ`:
//! `a = θ + γ·(2·sigmoid(z) − 1)`, `z = fc2(relu(fc1(avgpool(x))))`.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{config_err, dim_err, Result};
use crate::kernels::{fully_connected, global_avg_pool, relu, sigmoid};
use crate::tensor::{Real, Shape, Tensor};

/// Default fusion terms (J).
pub const DEFAULT_FUSIONS: usize = 2;
/// Default max branches (K).
pub const DEFAULT_BRANCHES: usize = 2;
/// Default hyper-function squeeze ratio for the architecture zoo.
pub const DEFAULT_REDUCTION: usize = 16;
/// Default coefficient residual range γ.
pub const DEFAULT_RANGE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftMaxConfig {
    pub channels: usize,
    pub groups: usize,
    /// J: number of group shifts fused per branch.
    pub fusions: usize,
    /// K: number of branches in the max.
    pub branches: usize,
    /// r: hyper-function squeeze ratio.
    pub reduction: usize,
    /// θ, indexed by [`ShiftMaxConfig::coeff_index`].
    pub theta: Vec<f64>,
    /// γ: half-width of the coefficient range around θ.
    pub range: f64,
}

impl ShiftMaxConfig {
    /// Config with the default base coefficients: θ[k=0][i][j=0] = 1, all
    /// others 0, so that `K = 2` starts out ReLU-like.
    pub fn new(channels: usize, groups: usize, fusions: usize, branches: usize) -> Result<Self> {
        let mut cfg = ShiftMaxConfig {
            channels,
            groups,
            fusions,
            branches,
            reduction: DEFAULT_REDUCTION,
            theta: Vec::new(),
            range: DEFAULT_RANGE,
        };
        cfg.validate_dims()?;
        cfg.theta = vec![0.0; cfg.coeff_count()];
        for i in 0..channels {
            let idx = cfg.coeff_index(0, i, 0);
            cfg.theta[idx] = 1.0;
        }
        Ok(cfg)
    }

    pub fn with_reduction(mut self, r: usize) -> Self {
        self.reduction = r;
        self
    }

    pub fn with_range(mut self, range: f64) -> Self {
        self.range = range;
        self
    }

    pub fn with_theta(mut self, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != self.coeff_count() {
            return Err(config_err!(
                "theta has {} entries, expected C·J·K = {}",
                theta.len(),
                self.coeff_count()
            ));
        }
        self.theta = theta;
        Ok(self)
    }

    fn validate_dims(&self) -> Result<()> {
        if self.channels == 0 || self.groups == 0 {
            return Err(config_err!("shift-max needs channels and groups >= 1"));
        }
        if !self.channels.is_multiple_of(self.groups) {
            return Err(config_err!(
                "shift-max groups {} do not divide channels {}",
                self.groups,
                self.channels
            ));
        }
        if self.fusions == 0 || self.fusions > self.groups {
            return Err(config_err!(
                "shift-max needs 1 <= J <= G, got J={} G={}",
                self.fusions,
                self.groups
            ));
        }
        if self.branches == 0 {
            return Err(config_err!("shift-max needs K >= 1"));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_dims()?;
        if self.reduction == 0 {
            return Err(config_err!("hyper-function reduction must be >= 1"));
        }
        if self.theta.len() != self.coeff_count() {
            return Err(config_err!("theta length mismatch"));
        }
        Ok(())
    }

    /// C·J·K.
    pub fn coeff_count(&self) -> usize {
        self.channels * self.fusions * self.branches
    }

    #[inline]
    pub fn coeff_index(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.channels + i) * self.fusions + j
    }

    /// Hidden width of the hyper-function, `C / r` (at least 1).
    pub fn squeeze(&self) -> usize {
        (self.channels / self.reduction).max(1)
    }

    pub fn group_size(&self) -> usize {
        self.channels / self.groups
    }
}

/// Source channel of output channel `i` after shifting by `j` groups.
#[inline]
pub fn shift_source(i: usize, j: usize, channels: usize, groups: usize) -> usize {
    (i + j * (channels / groups)) % channels
}

/// Circular shift of the channel axis by `j` whole groups.
pub fn group_shift<T: Real>(x: &Tensor<T>, j: usize, groups: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if groups == 0 || !s.c.is_multiple_of(groups) {
        return Err(config_err!("groups {groups} do not divide channels {}", s.c));
    }
    let perm: Vec<usize> = (0..s.c).map(|i| shift_source(i, j, s.c, groups)).collect();
    crate::kernels::channel_permute(x, &perm)
}

/// Weights of the coefficient generator: `C → C/r → C·J·K`.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperFunction<T> {
    /// `(C/r, C, 1, 1)`
    pub fc1_weight: Tensor<T>,
    pub fc1_bias: Vec<T>,
    /// `(C·J·K, C/r, 1, 1)`
    pub fc2_weight: Tensor<T>,
    pub fc2_bias: Vec<T>,
}

impl<T: Real> HyperFunction<T> {
    pub fn zeros(cfg: &ShiftMaxConfig) -> Self {
        let s = cfg.squeeze();
        HyperFunction {
            fc1_weight: Tensor::zeros(Shape::new(s, cfg.channels, 1, 1)),
            fc1_bias: vec![T::zero(); s],
            fc2_weight: Tensor::zeros(Shape::new(cfg.coeff_count(), s, 1, 1)),
            fc2_bias: vec![T::zero(); cfg.coeff_count()],
        }
    }

    pub fn random(cfg: &ShiftMaxConfig, std: f64, rng: &mut impl Rng) -> Self {
        let s = cfg.squeeze();
        HyperFunction {
            fc1_weight: Tensor::randn(Shape::new(s, cfg.channels, 1, 1), std, rng),
            fc1_bias: Tensor::<T>::randn(Shape::vector(1, s), std, rng).into_vec(),
            fc2_weight: Tensor::randn(Shape::new(cfg.coeff_count(), s, 1, 1), std, rng),
            fc2_bias: Tensor::<T>::randn(Shape::vector(1, cfg.coeff_count()), std, rng).into_vec(),
        }
    }

    pub fn check(&self, cfg: &ShiftMaxConfig) -> Result<()> {
        let s = cfg.squeeze();
        if self.fc1_weight.shape() != Shape::new(s, cfg.channels, 1, 1)
            || self.fc2_weight.shape() != Shape::new(cfg.coeff_count(), s, 1, 1)
            || self.fc1_bias.len() != s
            || self.fc2_bias.len() != cfg.coeff_count()
        {
            return Err(dim_err!("hyper-function weights do not match config"));
        }
        Ok(())
    }
}

/// `θ + γ·(2·sigmoid(z) − 1)` elementwise over an `(N, C·J·K, 1, 1)` tensor.
pub fn coeff_map<T: Real>(z: &Tensor<T>, theta: &[f64], range: f64) -> Result<Tensor<T>> {
    let s = z.shape();
    if s.item() != theta.len() {
        return Err(dim_err!("coefficient logits have {} entries per item, theta {}", s.item(), theta.len()));
    }
    let two = T::of(2.0);
    let gamma = T::of(range);
    let per = s.item();
    let data = z
        .data()
        .iter()
        .enumerate()
        .map(|(idx, &v)| T::of(theta[idx % per]) + gamma * (two * sigmoid(v) - T::one()))
        .collect();
    Tensor::from_vec(s, data)
}

/// Input-dependent coefficients `a[k][i][j]` per batch item, shape `(N, C·J·K, 1, 1)`.
pub fn hyper_coeffs<T: Real>(x: &Tensor<T>, h: &HyperFunction<T>, cfg: &ShiftMaxConfig) -> Result<Tensor<T>> {
    cfg.validate()?;
    h.check(cfg)?;
    if x.shape().c != cfg.channels {
        return Err(dim_err!("shift-max input has {} channels, config {}", x.shape().c, cfg.channels));
    }
    let pooled = global_avg_pool(x);
    let hidden = relu(&fully_connected(&pooled, &h.fc1_weight, Some(&h.fc1_bias))?);
    let z = fully_connected(&hidden, &h.fc2_weight, Some(&h.fc2_bias))?;
    coeff_map(&z, &cfg.theta, cfg.range)
}

/// Applies the max-of-fusions with explicit coefficients.
///
/// Returns the output and, per `(n, i, position)`, the winning branch
/// (lowest index on ties).
pub fn shift_max_apply<T: Real>(
    x: &Tensor<T>,
    coeffs: &Tensor<T>,
    cfg: &ShiftMaxConfig,
) -> Result<(Tensor<T>, Vec<u8>)> {
    let s = x.shape();
    check_apply(s, coeffs.shape(), cfg)?;
    let (c, g, jn, kn) = (cfg.channels, cfg.groups, cfg.fusions, cfg.branches);
    let p = s.plane();
    let mut out = Tensor::zeros(s);
    let mut argmax = vec![0u8; s.numel()];
    let mut branch = vec![T::zero(); p];
    for n in 0..s.n {
        let a = coeffs.item(n);
        for i in 0..c {
            let base = (n * c + i) * p;
            for k in 0..kn {
                branch.fill(T::zero());
                for j in 0..jn {
                    let coef = a[cfg.coeff_index(k, i, j)];
                    let src = x.plane(n, shift_source(i, j, c, g));
                    for (acc, &v) in branch.iter_mut().zip(src) {
                        *acc = *acc + coef * v;
                    }
                }
                let o = &mut out.data_mut()[base..base + p];
                if k == 0 {
                    o.copy_from_slice(&branch);
                } else {
                    for (q, (slot, &v)) in o.iter_mut().zip(&branch).enumerate() {
                        if v > *slot {
                            *slot = v;
                            argmax[base + q] = k as u8;
                        }
                    }
                }
            }
        }
    }
    Ok((out, argmax))
}

fn check_apply(s: Shape, cs: Shape, cfg: &ShiftMaxConfig) -> Result<()> {
    cfg.validate()?;
    if s.c != cfg.channels {
        return Err(dim_err!("shift-max input has {} channels, config {}", s.c, cfg.channels));
    }
    if cs != Shape::vector(s.n, cfg.coeff_count()) {
        return Err(dim_err!(
            "coefficients shape {cs}, expected {}",
            Shape::vector(s.n, cfg.coeff_count())
        ));
    }
    if cfg.branches > u8::MAX as usize + 1 {
        return Err(config_err!("at most 256 branches supported"));
    }
    Ok(())
}

pub struct ShiftMaxGrads<T> {
    pub input: Tensor<T>,
    pub coeffs: Tensor<T>,
}

pub fn shift_max_apply_backward<T: Real>(
    x: &Tensor<T>,
    coeffs: &Tensor<T>,
    argmax: &[u8],
    cfg: &ShiftMaxConfig,
    grad_out: &Tensor<T>,
) -> Result<ShiftMaxGrads<T>> {
    let s = x.shape();
    check_apply(s, coeffs.shape(), cfg)?;
    if grad_out.shape() != s || argmax.len() != s.numel() {
        return Err(dim_err!("shift-max grad_out shape mismatch"));
    }
    let (c, g, jn) = (cfg.channels, cfg.groups, cfg.fusions);
    let p = s.plane();
    let mut gx = Tensor::zeros(s);
    let mut ga = Tensor::zeros(coeffs.shape());
    let per = cfg.coeff_count();
    for n in 0..s.n {
        for i in 0..c {
            let base = (n * c + i) * p;
            let gy = &grad_out.data()[base..base + p];
            let win = &argmax[base..base + p];
            for j in 0..jn {
                let src_c = shift_source(i, j, c, g);
                let src = x.plane(n, src_c);
                let src_base = (n * c + src_c) * p;
                for q in 0..p {
                    let k = win[q] as usize;
                    let ai = n * per + cfg.coeff_index(k, i, j);
                    let coef = coeffs.data()[ai];
                    let gxd = gx.data_mut();
                    gxd[src_base + q] = gxd[src_base + q] + coef * gy[q];
                    let gad = ga.data_mut();
                    gad[ai] = gad[ai] + src[q] * gy[q];
                }
            }
        }
    }
    Ok(ShiftMaxGrads { input: gx, coeffs: ga })
}

/// Full dynamic Shift-Max: hyper-function coefficients, then the max of fusions.
pub fn dynamic_shift_max<T: Real>(x: &Tensor<T>, h: &HyperFunction<T>, cfg: &ShiftMaxConfig) -> Result<Tensor<T>> {
    let a = hyper_coeffs(x, h, cfg)?;
    Ok(shift_max_apply(x, &a, cfg)?.0)
}

/// Static group shift `y[i] = a[i][0]·x[i] + a[i][1]·x[(i + C/G) mod C]`.
pub fn static_group_shift<T: Real>(x: &Tensor<T>, coeffs: &[[T; 2]], groups: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if groups == 0 || !s.c.is_multiple_of(groups) {
        return Err(config_err!("groups {groups} do not divide channels {}", s.c));
    }
    if coeffs.len() != s.c {
        return Err(dim_err!("static shift needs {} coefficient pairs, got {}", s.c, coeffs.len()));
    }
    Ok(Tensor::from_fn(s, |n, i, h, w| {
        let [a0, a1] = coeffs[i];
        a0 * x.at(n, i, h, w) + a1 * x.at(n, shift_source(i, 1, s.c, groups), h, w)
    }))
}

/// The static group shift as a `C×C` channel-mixing matrix.
pub fn static_shift_matrix(coeffs: &[[f64; 2]], groups: usize) -> DMatrix<f64> {
    let c = coeffs.len();
    let mut m = DMatrix::zeros(c, c);
    for (i, &[a0, a1]) in coeffs.iter().enumerate() {
        m[(i, i)] += a0;
        m[(i, shift_source(i, 1, c, groups))] += a1;
    }
    m
}

/// Cost of one Shift-Max layer on an `H×W` map: pooling adds `H·W·C`,
/// coefficient generation `C·C/r + (C/r)·C·J·K`, application `H·W·C·J·K`.
pub fn shift_max_cost(cfg: &ShiftMaxConfig, h: usize, w: usize) -> u64 {
    let parts = shift_max_cost_parts(cfg, h, w);
    parts.pool + parts.generate + parts.apply
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShiftMaxCost {
    pub pool: u64,
    pub generate: u64,
    pub apply: u64,
}

pub fn shift_max_cost_parts(cfg: &ShiftMaxConfig, h: usize, w: usize) -> ShiftMaxCost {
    let (c, s) = (cfg.channels as u64, cfg.squeeze() as u64);
    let jk = (cfg.fusions * cfg.branches) as u64;
    let hw = (h * w) as u64;
    ShiftMaxCost {
        pool: hw * c,
        generate: c * s + s * c * jk,
        apply: hw * c * jk,
    }
}

/// Trainable parameters of the hyper-function (weights and biases).
pub fn shift_max_params(cfg: &ShiftMaxConfig) -> u64 {
    let (c, s, cjk) = (cfg.channels as u64, cfg.squeeze() as u64, cfg.coeff_count() as u64);
    c * s + s + s * cjk + cjk
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(c: usize, g: usize, j: usize, k: usize) -> ShiftMaxConfig {
        ShiftMaxConfig::new(c, g, j, k).unwrap()
    }

    #[test]
    fn group_shift_index_map() {
        let x = Tensor::<f32>::from_fn(Shape::new(1, 6, 1, 1), |_, c, _, _| c as f32);
        let y = group_shift(&x, 1, 3).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0, 4.0, 5.0, 0.0, 1.0]);
        assert_eq!(group_shift(&x, 0, 3).unwrap(), x);
        assert_eq!(group_shift(&x, 3, 3).unwrap(), x);
    }

    #[test]
    fn config_validation() {
        assert!(ShiftMaxConfig::new(6, 4, 2, 2).is_err());
        assert!(ShiftMaxConfig::new(6, 2, 3, 2).is_err());
        assert!(ShiftMaxConfig::new(6, 2, 2, 0).is_err());
        assert!(ShiftMaxConfig::new(6, 3, 2, 2).is_ok());
    }

    #[test]
    fn zero_hyper_weights_give_theta() {
        let c = cfg(8, 4, 2, 2);
        let h = HyperFunction::<f64>::zeros(&c);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::randn(Shape::new(3, 8, 2, 2), 1.0, &mut rng);
        let a = hyper_coeffs(&x, &h, &c).unwrap();
        for n in 0..3 {
            assert_eq!(a.item(n), c.theta.as_slice());
        }
    }

    #[test]
    fn coefficients_stay_in_range() {
        let c = cfg(8, 4, 2, 2).with_range(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = HyperFunction::<f64>::random(&c, 3.0, &mut rng);
        let x = Tensor::randn(Shape::new(4, 8, 3, 3), 5.0, &mut rng);
        let a = hyper_coeffs(&x, &h, &c).unwrap();
        for n in 0..4 {
            for (v, t) in a.item(n).iter().zip(&c.theta) {
                assert!(*v >= t - 0.3 && *v <= t + 0.3);
            }
        }
    }

    #[test]
    fn identity_and_relu_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::randn(Shape::new(2, 4, 3, 3), 1.0, &mut rng);

        let id = cfg(4, 2, 1, 1);
        let ones = Tensor::full(Shape::vector(2, 4), 1.0);
        assert_eq!(shift_max_apply(&x, &ones, &id).unwrap().0, x);

        let r = cfg(4, 2, 1, 2);
        let mut a = Tensor::zeros(Shape::vector(2, 8));
        for n in 0..2 {
            for i in 0..4 {
                a.set(n, r.coeff_index(0, i, 0), 0, 0, 1.0);
            }
        }
        assert_eq!(shift_max_apply(&x, &a, &r).unwrap().0, relu(&x));
    }

    #[test]
    fn ties_pick_lowest_branch() {
        let c = cfg(2, 1, 1, 3);
        let x = Tensor::<f64>::full(Shape::new(1, 2, 1, 1), 1.0);
        let a = Tensor::full(Shape::vector(1, 6), 0.5);
        let (_, win) = shift_max_apply(&x, &a, &c).unwrap();
        assert_eq!(win, vec![0, 0]);
    }

    #[test]
    fn cost_matches_hand_arithmetic() {
        let c = cfg(64, 4, 2, 2).with_reduction(4);
        let parts = shift_max_cost_parts(&c, 14, 14);
        assert_eq!(parts.pool, 12_544);
        assert_eq!(parts.generate, 1_024 + 4_096);
        assert_eq!(parts.apply, 50_176);
        assert_eq!(shift_max_cost(&c, 14, 14), 67_840);
    }

    #[test]
    fn static_shift_matrix_is_diagonal_plus_shifted_diagonal() {
        let coeffs: Vec<[f64; 2]> = (0..6).map(|i| [1.0 + i as f64, 10.0 + i as f64]).collect();
        let m = static_shift_matrix(&coeffs, 3);
        for i in 0..6 {
            for j in 0..6 {
                let expected = if j == i {
                    coeffs[i][0]
                } else if j == (i + 2) % 6 {
                    coeffs[i][1]
                } else {
                    0.0
                };
                assert_eq!(m[(i, j)], expected);
            }
        }
    }
}
