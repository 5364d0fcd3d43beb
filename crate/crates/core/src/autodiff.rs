//! Reverse-mode differentiation over a recorded op tape.
//!
//! Every op evaluates eagerly and appends a node holding its value plus what
//! the adjoint needs. [`Tape::backward`] walks the nodes in reverse from a
//! scalar loss.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{dim_err, Result};
use crate::kernels::{
    self, batch_norm_backward, bilinear_upsample_x2, bilinear_upsample_x2_backward, channel_permute,
    conv2d_backward, conv2d_forward, fully_connected, fully_connected_backward, global_avg_pool,
    global_avg_pool_backward, invert_permutation, log_softmax_row, relu, relu_backward, sigmoid,
    ConvGeom, NormMode, NormStats,
};
use crate::shiftmax::{coeff_map, shift_max_apply, shift_max_apply_backward, ShiftMaxConfig};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Constant,
    Conv { x: Var, w: Var, geom: ConvGeom },
    Linear { x: Var, w: Var, b: Option<Var> },
    BatchNorm { x: Var, gamma: Var, beta: Var, mode: NormMode, mean: Vec<T>, inv_std: Vec<T> },
    Relu { x: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, alpha: T },
    Mask { x: Var, mask: Tensor<T> },
    AvgPool { x: Var },
    Permute { x: Var, perm: Vec<usize> },
    Upsample { x: Var },
    CoeffMap { z: Var, range: T },
    ShiftMax { x: Var, a: Var, cfg: Box<ShiftMaxConfig>, argmax: Vec<u8> },
    SoftTargetCe { logits: Var, targets: Tensor<T> },
    Mse { x: Var, target: Tensor<T> },
    WeightedSum { x: Var, weights: Tensor<T> },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Batch statistics produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased batch variance.
    pub var: Vec<T>,
}

#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn vector_of<T: Real>(v: Vec<T>) -> Tensor<T> {
    let c = v.len();
    Tensor::from_vec(Shape::vector(1, c), v).expect("non-empty vector")
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input (parameter or probed input).
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Input that receives no gradient (data, detached teacher outputs).
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Constant)
    }

    pub fn conv(&mut self, x: Var, w: Var, geom: ConvGeom) -> Result<Var> {
        let y = conv2d_forward(self.value(x), self.value(w), None, &geom)?;
        Ok(self.push(y, Op::Conv { x, w, geom }))
    }

    /// Fully connected layer; `b` is a `(1, out, 1, 1)` tensor.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = fully_connected(self.value(x), self.value(w), b.map(|b| self.value(b).data()))?;
        Ok(self.push(y, Op::Linear { x, w, b }))
    }

    /// Batch norm with `(1, C, 1, 1)` affine parameters. Train mode also
    /// returns the batch statistics for running-average updates.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
        mode: NormMode,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let stats = NormStats {
            gamma: self.value(gamma).data().to_vec(),
            beta: self.value(beta).data().to_vec(),
            running_mean: running_mean.to_vec(),
            running_var: running_var.to_vec(),
            eps,
        };
        let out = kernels::batch_norm(self.value(x), &stats, mode)?;
        let batch = (mode == NormMode::Train).then(|| BatchStats { mean: out.mean.clone(), var: out.var });
        let v = self.push(
            out.output,
            Op::BatchNorm { x, gamma, beta, mode, mean: out.mean, inv_std: out.inv_std },
        );
        Ok((v, batch))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = relu(self.value(x));
        self.push(y, Op::Relu { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = kernels::add(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Add { a, b }))
    }

    pub fn scale(&mut self, x: Var, alpha: T) -> Var {
        let y = self.value(x).scale(alpha);
        self.push(y, Op::Scale { x, alpha })
    }

    /// Elementwise product with a fixed tensor (dropout masks).
    pub fn mask(&mut self, x: Var, mask: Tensor<T>) -> Result<Var> {
        let y = self.value(x).zip_map(&mask, |a, m| a * m)?;
        Ok(self.push(y, Op::Mask { x, mask }))
    }

    pub fn avg_pool(&mut self, x: Var) -> Var {
        let y = global_avg_pool(self.value(x));
        self.push(y, Op::AvgPool { x })
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let y = channel_permute(self.value(x), perm)?;
        Ok(self.push(y, Op::Permute { x, perm: perm.to_vec() }))
    }

    pub fn upsample(&mut self, x: Var) -> Var {
        let y = bilinear_upsample_x2(self.value(x));
        self.push(y, Op::Upsample { x })
    }

    /// `θ + γ·(2·sigmoid(z) − 1)` with `θ` per coefficient.
    pub fn coeff_map(&mut self, z: Var, theta: &[f64], range: f64) -> Result<Var> {
        let y = coeff_map(self.value(z), theta, range)?;
        Ok(self.push(y, Op::CoeffMap { z, range: T::of(range) }))
    }

    /// Max over branches of coefficient-weighted group shifts.
    pub fn shift_max(&mut self, x: Var, a: Var, cfg: &ShiftMaxConfig) -> Result<Var> {
        let (y, argmax) = shift_max_apply(self.value(x), self.value(a), cfg)?;
        Ok(self.push(y, Op::ShiftMax { x, a, cfg: Box::new(cfg.clone()), argmax }))
    }

    /// Batch mean of `−Σ_k t_k · log softmax(logits)_k` for rows of `targets`
    /// summing to one.
    pub fn soft_target_ce(&mut self, logits: Var, targets: Tensor<T>) -> Result<Var> {
        let ls = self.value(logits).shape();
        if targets.shape() != ls || ls.plane() != 1 {
            return Err(dim_err!("targets {} do not match logits {ls}", targets.shape()));
        }
        let x = self.value(logits);
        let mut total = T::zero();
        for n in 0..ls.n {
            let lp = log_softmax_row(x.item(n));
            total = total - lp.iter().zip(targets.item(n)).map(|(&l, &t)| t * l).sum::<T>();
        }
        let v = Tensor::full(Shape::scalar(), total / T::of(ls.n as f64));
        Ok(self.push(v, Op::SoftTargetCe { logits, targets }))
    }

    /// Mean squared error against a fixed target.
    pub fn mse(&mut self, x: Var, target: Tensor<T>) -> Result<Var> {
        let d = self.value(x).zip_map(&target, |a, b| (a - b) * (a - b))?;
        let v = Tensor::full(Shape::scalar(), d.sum() / T::of(d.len() as f64));
        Ok(self.push(v, Op::Mse { x, target }))
    }

    /// `Σ weights ⊙ x`.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        let s = self.value(x).zip_map(&weights, |a, b| a * b)?.sum();
        Ok(self.push(Tensor::full(Shape::scalar(), s), Op::WeightedSum { x, weights }))
    }

    /// Hash of every piecewise branch taken (ReLU signs, Shift-Max winners).
    /// Two evaluations with equal signatures lie on the same linear piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { x } => {
                    for v in self.value(*x).data() {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Op::ShiftMax { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Smallest distance of any kink input to its breakpoint: ReLU inputs
    /// from zero and Shift-Max winners from the runner-up branch.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Relu { x } => {
                    for v in self.value(*x).data() {
                        margin = margin.min(v.f64().abs());
                    }
                }
                Op::ShiftMax { x, a, cfg, .. } if cfg.branches > 1 => {
                    margin = margin.min(shift_max_margin(self.value(*x), self.value(*a), cfg));
                }
                _ => {}
            }
        }
        margin
    }

    /// Gradients of the scalar `loss` with respect to every recorded node.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        if self.value(loss).len() != 1 {
            return Err(dim_err!("backward needs a scalar loss, got {}", self.value(loss).shape()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Grads { grads })
    }

    fn propagate(&self, op: &Op<T>, out: &Tensor<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut acc = |v: Var, t: Tensor<T>| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match op {
            Op::Leaf | Op::Constant => {}
            Op::Conv { x, w, geom } => {
                let cg = conv2d_backward(self.value(*x), self.value(*w), geom, g, false)?;
                if self.wants(*x) {
                    acc(*x, cg.input);
                }
                acc(*w, cg.weight);
            }
            Op::Linear { x, w, b } => {
                let lg = fully_connected_backward(self.value(*x), self.value(*w), g)?;
                if self.wants(*x) {
                    acc(*x, lg.input);
                }
                acc(*w, lg.weight);
                if let Some(b) = b {
                    acc(*b, vector_of(lg.bias));
                }
            }
            Op::BatchNorm { x, gamma, beta, mode, mean, inv_std } => {
                let ng = batch_norm_backward(self.value(*x), self.value(*gamma).data(), mean, inv_std, *mode, g)?;
                if self.wants(*x) {
                    acc(*x, ng.input);
                }
                acc(*gamma, vector_of(ng.gamma));
                acc(*beta, vector_of(ng.beta));
            }
            Op::Relu { x } => acc(*x, relu_backward(self.value(*x), g)?),
            Op::Add { a, b } => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Scale { x, alpha } => acc(*x, g.scale(*alpha)),
            Op::Mask { x, mask } => acc(*x, g.zip_map(mask, |a, m| a * m)?),
            Op::AvgPool { x } => acc(*x, global_avg_pool_backward(self.value(*x).shape(), g)?),
            Op::Permute { x, perm } => acc(*x, channel_permute(g, &invert_permutation(perm))?),
            Op::Upsample { x } => acc(*x, bilinear_upsample_x2_backward(self.value(*x).shape(), g)?),
            Op::CoeffMap { z, range } => {
                let two = T::of(2.0);
                let dz = self.value(*z).zip_map(g, |zv, gv| {
                    let s = sigmoid(zv);
                    gv * *range * two * s * (T::one() - s)
                })?;
                acc(*z, dz);
            }
            Op::ShiftMax { x, a, cfg, argmax } => {
                let sg = shift_max_apply_backward(self.value(*x), self.value(*a), argmax, cfg, g)?;
                acc(*x, sg.input);
                acc(*a, sg.coeffs);
            }
            Op::SoftTargetCe { logits, targets } => {
                let x = self.value(*logits);
                let s = x.shape();
                let scale = g.data()[0] / T::of(s.n as f64);
                let mut d = Vec::with_capacity(s.numel());
                for n in 0..s.n {
                    let t = targets.item(n);
                    let mass: T = t.iter().copied().sum();
                    for (l, &tv) in log_softmax_row(x.item(n)).into_iter().zip(t) {
                        d.push((l.exp() * mass - tv) * scale);
                    }
                }
                acc(*logits, Tensor::from_vec(s, d)?);
            }
            Op::Mse { x, target } => {
                let k = g.data()[0] * T::of(2.0) / T::of(target.len() as f64);
                acc(*x, self.value(*x).zip_map(target, |a, b| (a - b) * k)?);
            }
            Op::WeightedSum { x, weights } => acc(*x, weights.scale(g.data()[0])),
        }
        debug_assert_eq!(out.shape(), g.shape());
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Constant)
    }
}

fn shift_max_margin<T: Real>(x: &Tensor<T>, a: &Tensor<T>, cfg: &ShiftMaxConfig) -> f64 {
    let s = x.shape();
    let (c, g) = (cfg.channels, cfg.groups);
    let mut margin = f64::INFINITY;
    for n in 0..s.n {
        let coeffs = a.item(n);
        for i in 0..c {
            for q in 0..s.plane() {
                let mut vals: Vec<f64> = (0..cfg.branches)
                    .map(|k| {
                        (0..cfg.fusions)
                            .map(|j| {
                                let src = crate::shiftmax::shift_source(i, j, c, g);
                                coeffs[cfg.coeff_index(k, i, j)].f64() * x.plane(n, src)[q].f64()
                            })
                            .sum()
                    })
                    .collect();
                vals.sort_by(|a, b| b.total_cmp(a));
                margin = margin.min(vals[0] - vals[1]);
            }
        }
    }
    margin
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_sum_gradient_is_ones_on_positive_inputs() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(Shape::new(2, 3, 2, 2), 0.7));
        let y = tape.relu(x);
        let loss = tape.weighted_sum(y, Tensor::full(Shape::new(2, 3, 2, 2), 1.0)).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn backward_needs_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(Shape::new(1, 2, 1, 1), 1.0));
        assert_eq!(tape.backward(x).err().unwrap().kind(), "dimension");
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln_k() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(Shape::vector(1, 4)));
        let mut t = Tensor::zeros(Shape::vector(1, 4));
        t.set(0, 2, 0, 0, 1.0);
        let l = tape.soft_target_ce(x, t).unwrap();
        assert!((tape.value(l).data()[0] - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::randn(Shape::new(1, 2, 2, 2), 1.0, &mut rng));
        let y = tape.add(x, x).unwrap();
        let loss = tape.weighted_sum(y, Tensor::full(Shape::new(1, 2, 2, 2), 1.0)).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 2.0));
    }
}
