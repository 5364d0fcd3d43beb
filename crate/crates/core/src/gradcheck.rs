//! Central finite-difference checks of tape gradients.
//!
//! A [`Graph`] is built once per precision. The checked loss is a fixed random
//! projection `Σ r ⊙ y` of the graph output. Numerical derivatives always come
//! from the `f64` build; the analytic side runs in the requested precision.
//! The numeric side is a Richardson-extrapolated central difference,
//! `(4·D(h/2) − D(h))/3`, accurate to `O(h⁴)`. Coordinates whose perturbation
//! crosses a kink (ReLU sign or Shift-Max winner change) are skipped.
//!
//! Errors are relative per leaf. A leaf's denominator is floored at
//! [`SCALE_FLOOR`] times the largest numeric gradient of the whole graph, so a
//! leaf whose true gradient is structurally zero (a norm shift feeding a
//! batch-statistics norm) is judged by its absolute error at the graph's scale.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::{ConvGeom, NormMode};
use crate::shiftmax::ShiftMaxConfig;
use crate::tensor::{Real, Shape, Tensor};

pub trait Graph {
    /// Initial values of the differentiable leaves.
    fn leaves(&self) -> Vec<Tensor<f64>>;

    /// Records the computation on `tape` and returns its output.
    fn build<T: Real>(&self, tape: &mut Tape<T>, leaves: &[Var]) -> Result<Var>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    /// Pass threshold on the max relative error.
    pub fn tolerance(self) -> f64 {
        match self {
            Precision::Single => 1e-3,
            Precision::Double => 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub precision: Precision,
    pub step: f64,
    /// Coordinates sampled per leaf; `None` checks all.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl CheckOptions {
    pub fn new(precision: Precision) -> Self {
        CheckOptions { precision, step: 1e-4, max_coords: None, seed: 0 }
    }

    pub fn max_coords(mut self, n: usize) -> Self {
        self.max_coords = Some(n);
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradReport {
    /// Largest per-leaf `‖a − n‖∞ / max(‖n‖∞, SCALE_FLOOR·scale)`.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because a perturbation crossed a kink.
    pub skipped: usize,
    pub precision: Precision,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < self.precision.tolerance()
    }
}

const EPS: f64 = 1e-8;

/// Fraction of the graph's gradient scale below which a leaf is compared absolutely.
pub const SCALE_FLOOR: f64 = 1e-3;

fn record<T: Real, G: Graph>(g: &G, leaves: &[Tensor<f64>], proj: &Tensor<f64>) -> Result<(Tape<T>, Vec<Var>, Var)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.cast())).collect();
    let y = g.build(&mut tape, &vars)?;
    let loss = tape.weighted_sum(y, proj.cast())?;
    Ok((tape, vars, loss))
}

fn output_shape<G: Graph>(g: &G, leaves: &[Tensor<f64>]) -> Result<Shape> {
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = g.build(&mut tape, &vars)?;
    Ok(tape.value(y).shape())
}

fn analytic<T: Real, G: Graph>(g: &G, leaves: &[Tensor<f64>], proj: &Tensor<f64>) -> Result<(Vec<Tensor<f64>>, u64)> {
    let (tape, vars, loss) = record::<T, G>(g, leaves, proj)?;
    let grads = tape.backward(loss)?;
    let out = vars
        .iter()
        .zip(leaves)
        .map(|(&v, l)| grads.get(v).map(|t| t.cast()).unwrap_or_else(|| Tensor::zeros(l.shape())))
        .collect();
    Ok((out, tape.kink_signature()))
}

pub fn check_gradients<G: Graph>(g: &G, opts: CheckOptions) -> Result<GradReport> {
    let leaves = g.leaves();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let proj = Tensor::<f64>::randn(output_shape(g, &leaves)?, 1.0, &mut rng);

    let (base_tape, _, _) = record::<f64, G>(g, &leaves, &proj)?;
    let base_sig = base_tape.kink_signature();
    let (analytic, sig) = match opts.precision {
        Precision::Double => analytic::<f64, G>(g, &leaves, &proj)?,
        Precision::Single => analytic::<f32, G>(g, &leaves, &proj)?,
    };
    if sig != base_sig {
        return Err(Error::Unsupported(
            "single-precision forward takes a different kink branch; pick inputs away from ties".into(),
        ));
    }

    let (mut checked, mut skipped) = (0, 0);
    // (max |a − n|, max |n|) per leaf.
    let mut per_leaf = Vec::with_capacity(leaves.len());
    for (li, leaf) in leaves.iter().enumerate() {
        let coords: Vec<usize> = match opts.max_coords {
            Some(m) if m < leaf.len() => sample(&mut rng, leaf.len(), m).into_vec(),
            _ => (0..leaf.len()).collect(),
        };
        let mut diff: f64 = 0.0;
        let mut norm: f64 = 0.0;
        'coords: for idx in coords {
            let eval = |delta: f64| -> Result<(f64, u64)> {
                let mut moved = leaves.clone();
                moved[li].data_mut()[idx] += delta;
                let (tape, _, loss) = record::<f64, G>(g, &moved, &proj)?;
                Ok((tape.value(loss).data()[0], tape.kink_signature()))
            };
            let mut central = [0.0; 2];
            for (slot, h) in [opts.step, opts.step / 2.0].into_iter().enumerate() {
                let (up, s_up) = eval(h)?;
                let (down, s_down) = eval(-h)?;
                if s_up != base_sig || s_down != base_sig {
                    skipped += 1;
                    continue 'coords;
                }
                central[slot] = (up - down) / (2.0 * h);
            }
            let numeric = (4.0 * central[1] - central[0]) / 3.0;
            diff = diff.max((analytic[li].data()[idx] - numeric).abs());
            norm = norm.max(numeric.abs());
            checked += 1;
        }
        per_leaf.push((diff, norm));
    }
    let scale = per_leaf.iter().map(|&(_, n)| n).fold(0.0, f64::max);
    let floor = (SCALE_FLOOR * scale).max(EPS);
    let max_rel = per_leaf.iter().map(|&(d, n)| d / n.max(floor)).fold(0.0, f64::max);
    Ok(GradReport { max_rel_error: max_rel, checked, skipped, precision: opts.precision })
}

/// Single-op graphs covering every differentiable tape op.
#[derive(Clone, Debug)]
pub enum OpCase {
    Conv { input: Shape, out_c: usize, geom: ConvGeom },
    Linear { input: Shape, out: usize },
    BatchNorm { input: Shape, mode: NormMode },
    Relu { input: Shape },
    Add { input: Shape },
    Scale { input: Shape },
    Mask { input: Shape },
    AvgPool { input: Shape },
    Permute { input: Shape },
    Upsample { input: Shape },
    CoeffMap { cfg: ShiftMaxConfig, n: usize },
    ShiftMax { cfg: ShiftMaxConfig, input: Shape },
    SoftTargetCe { input: Shape },
    Mse { input: Shape },
}

impl OpCase {
    pub fn name(&self) -> String {
        match self {
            OpCase::Conv { geom, .. } => format!(
                "conv{}x{}/s{}x{}/g{}",
                geom.kernel.0, geom.kernel.1, geom.stride.0, geom.stride.1, geom.groups
            ),
            OpCase::Linear { .. } => "linear".into(),
            OpCase::BatchNorm { mode, .. } => format!("batch_norm/{}", if *mode == NormMode::Train { "train" } else { "eval" }),
            OpCase::Relu { .. } => "relu".into(),
            OpCase::Add { .. } => "add".into(),
            OpCase::Scale { .. } => "scale".into(),
            OpCase::Mask { .. } => "mask".into(),
            OpCase::AvgPool { .. } => "avg_pool".into(),
            OpCase::Permute { .. } => "permute".into(),
            OpCase::Upsample { .. } => "upsample".into(),
            OpCase::CoeffMap { .. } => "coeff_map".into(),
            OpCase::ShiftMax { cfg, .. } => format!("shift_max/J{}K{}", cfg.fusions, cfg.branches),
            OpCase::SoftTargetCe { .. } => "soft_target_ce".into(),
            OpCase::Mse { .. } => "mse".into(),
        }
    }

    /// The standard catalog on small shapes.
    pub fn catalog() -> Vec<OpCase> {
        let s = Shape::new(2, 4, 5, 4);
        vec![
            OpCase::Conv { input: Shape::new(2, 3, 4, 4), out_c: 5, geom: ConvGeom::pointwise(1) },
            OpCase::Conv { input: Shape::new(2, 4, 5, 6), out_c: 6, geom: ConvGeom::same(3, 3).stride(2, 2).groups(2) },
            OpCase::Conv { input: Shape::new(1, 3, 5, 5), out_c: 6, geom: ConvGeom::new(3, 1).stride(2, 1).padding(1, 0).groups(3) },
            OpCase::Conv { input: Shape::new(1, 6, 5, 5), out_c: 6, geom: ConvGeom::new(1, 3).stride(1, 2).padding(0, 1).groups(6) },
            OpCase::Linear { input: Shape::new(3, 4, 2, 2), out: 5 },
            OpCase::BatchNorm { input: s, mode: NormMode::Train },
            OpCase::BatchNorm { input: s, mode: NormMode::Eval },
            OpCase::Relu { input: s },
            OpCase::Add { input: s },
            OpCase::Scale { input: s },
            OpCase::Mask { input: s },
            OpCase::AvgPool { input: s },
            OpCase::Permute { input: Shape::new(2, 6, 2, 3) },
            OpCase::Upsample { input: Shape::new(1, 2, 3, 4) },
            OpCase::CoeffMap { cfg: ShiftMaxConfig::new(4, 2, 2, 2).expect("valid"), n: 2 },
            OpCase::ShiftMax { cfg: ShiftMaxConfig::new(8, 4, 2, 2).expect("valid"), input: Shape::new(2, 8, 3, 3) },
            OpCase::ShiftMax { cfg: ShiftMaxConfig::new(6, 3, 3, 3).expect("valid"), input: Shape::new(1, 6, 2, 2) },
            OpCase::SoftTargetCe { input: Shape::vector(3, 5) },
            OpCase::Mse { input: s },
        ]
    }

    fn seed(&self) -> u64 {
        self.name().bytes().fold(17u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64))
    }
}

/// Gaussian values pushed at least `margin` away from zero.
fn off_zero(shape: Shape, margin: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::<f64>::randn(shape, 1.0, rng).map(|v| if v.abs() < margin { v.signum() * margin + v } else { v })
}

fn softmax_rows(t: &Tensor<f64>) -> Tensor<f64> {
    crate::kernels::softmax(t)
}

impl Graph for OpCase {
    fn leaves(&self) -> Vec<Tensor<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed());
        let r = &mut rng;
        match self {
            OpCase::Conv { input, out_c, geom } => vec![
                Tensor::randn(*input, 1.0, r),
                Tensor::randn(geom.weight_shape(input.c, *out_c), 0.5, r),
            ],
            OpCase::Linear { input, out } => vec![
                Tensor::randn(*input, 1.0, r),
                Tensor::randn(Shape::new(*out, input.item(), 1, 1), 0.5, r),
                Tensor::randn(Shape::vector(1, *out), 0.5, r),
            ],
            OpCase::BatchNorm { input, .. } => vec![
                Tensor::randn(*input, 1.0, r),
                Tensor::uniform(Shape::vector(1, input.c), 0.5, 1.5, r),
                Tensor::randn(Shape::vector(1, input.c), 0.5, r),
            ],
            OpCase::Relu { input } => vec![off_zero(*input, 0.05, r)],
            OpCase::Add { input } => vec![Tensor::randn(*input, 1.0, r), Tensor::randn(*input, 1.0, r)],
            OpCase::Scale { input } | OpCase::Mask { input } | OpCase::AvgPool { input } | OpCase::Permute { input } | OpCase::Upsample { input } | OpCase::Mse { input } => {
                vec![Tensor::randn(*input, 1.0, r)]
            }
            OpCase::CoeffMap { cfg, n } => vec![Tensor::randn(Shape::vector(*n, cfg.coeff_count()), 1.5, r)],
            OpCase::ShiftMax { cfg, input } => vec![
                Tensor::randn(*input, 1.0, r),
                Tensor::randn(Shape::vector(input.n, cfg.coeff_count()), 1.0, r),
            ],
            OpCase::SoftTargetCe { input } => vec![Tensor::randn(*input, 1.0, r)],
        }
    }

    fn build<T: Real>(&self, tape: &mut Tape<T>, v: &[Var]) -> Result<Var> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed() ^ 0x5eed);
        match self {
            OpCase::Conv { geom, .. } => tape.conv(v[0], v[1], *geom),
            OpCase::Linear { .. } => tape.linear(v[0], v[1], Some(v[2])),
            OpCase::BatchNorm { input, mode } => {
                let mean: Vec<T> = (0..input.c).map(|c| T::of(0.1 * c as f64)).collect();
                let var: Vec<T> = (0..input.c).map(|c| T::of(1.0 + 0.2 * c as f64)).collect();
                Ok(tape.batch_norm(v[0], v[1], v[2], &mean, &var, T::of(1e-5), *mode)?.0)
            }
            OpCase::Relu { .. } => Ok(tape.relu(v[0])),
            OpCase::Add { .. } => tape.add(v[0], v[1]),
            OpCase::Scale { .. } => Ok(tape.scale(v[0], T::of(-1.75))),
            OpCase::Mask { input } => {
                let m = Tensor::<f64>::uniform(*input, 0.0, 1.0, &mut rng).map(|u| if u < 0.3 { 0.0 } else { 1.0 / 0.7 });
                tape.mask(v[0], m.cast())
            }
            OpCase::AvgPool { .. } => Ok(tape.avg_pool(v[0])),
            OpCase::Permute { input } => {
                let perm = crate::factorized::channel_shuffle_perm(input.c, 2)?;
                tape.permute(v[0], &perm)
            }
            OpCase::Upsample { .. } => Ok(tape.upsample(v[0])),
            OpCase::CoeffMap { cfg, .. } => tape.coeff_map(v[0], &cfg.theta, cfg.range),
            OpCase::ShiftMax { cfg, .. } => tape.shift_max(v[0], v[1], cfg),
            OpCase::SoftTargetCe { input } => {
                let t = softmax_rows(&Tensor::randn(*input, 2.0, &mut rng));
                tape.soft_target_ce(v[0], t.cast())
            }
            OpCase::Mse { input } => tape.mse(v[0], Tensor::<f64>::randn(*input, 1.0, &mut rng).cast()),
        }
    }
}
