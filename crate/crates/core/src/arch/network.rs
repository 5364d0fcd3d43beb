//! Layer graph and parameters built from an [`ArchSpec`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spec::{ActivationKind, ArchSpec, BlockKind, ClassifierSpec, Plan, ResolvedBlock, StemSpec, Task};
use crate::autodiff::{BatchStats, Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::factorized::channel_shuffle_perm;
use crate::kernels::norm::DEFAULT_EPS;
use crate::kernels::{softmax, ConvGeom, NormMode};
use crate::shiftmax::ShiftMaxConfig;
use crate::tensor::{Real, Shape, Tensor};

/// Micro-Factorized network or its unfactorized mutual-learning partner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Micro,
    /// Dense 1×1 convs instead of group-adaptive ones (no shuffle) and full
    /// `k×k` depthwise kernels instead of `k×1`/`1×k` pairs. Same widths.
    FullRank,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamRole {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamRole::RunningMean | ParamRole::RunningVar)
    }

    /// Weight decay applies to conv/FC weights only.
    pub fn decays(self) -> bool {
        self == ParamRole::Weight
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub role: ParamRole,
    pub value: Tensor<T>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, role: ParamRole, value: Tensor<T>) -> ParamId {
        self.params.push(Param { name: name.into(), role, value });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> u64 {
        self.params.iter().filter(|p| p.role.trainable()).map(|p| p.value.len() as u64).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), role: p.role, value: p.value.cast() })
                .collect(),
        }
    }
}

/// Forward-pass state: the tape, bound parameter variables, mode and the
/// batch statistics collected in training mode.
pub struct Forward<'a, T: Real> {
    pub tape: &'a mut Tape<T>,
    params: &'a ParamStore<T>,
    vars: Vec<Option<Var>>,
    train: bool,
    rng: ChaCha8Rng,
    pub bn_updates: Vec<NormUpdate<T>>,
}

#[derive(Clone, Debug)]
pub struct NormUpdate<T> {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: BatchStats<T>,
    /// Elements per channel the statistics were taken over.
    pub count: usize,
}

impl<'a, T: Real> Forward<'a, T> {
    /// Binds every trainable parameter as a tape leaf.
    pub fn bind(tape: &'a mut Tape<T>, params: &'a ParamStore<T>, train: bool, seed: u64) -> Self {
        let vars = params
            .params
            .iter()
            .map(|p| p.role.trainable().then(|| tape.leaf(p.value.clone())))
            .collect();
        Forward { tape, params, vars, train, rng: ChaCha8Rng::seed_from_u64(seed), bn_updates: Vec::new() }
    }

    /// Uses caller-provided variables for the trainable parameters, in store order.
    pub fn with_vars(tape: &'a mut Tape<T>, params: &'a ParamStore<T>, trainable: &[Var], train: bool) -> Result<Self> {
        let mut it = trainable.iter();
        let vars: Vec<Option<Var>> = params
            .params
            .iter()
            .map(|p| if p.role.trainable() { it.next().copied() } else { None })
            .collect();
        if vars.iter().zip(&params.params).any(|(v, p)| p.role.trainable() && v.is_none()) || it.next().is_some() {
            return Err(dim_err!("trainable variable count does not match the parameter store"));
        }
        Ok(Forward { tape, params, vars, train, rng: ChaCha8Rng::seed_from_u64(0), bn_updates: Vec::new() })
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0].expect("trainable parameter is bound")
    }

    /// Tape variable of each trainable parameter, in store order.
    pub fn bound(&self) -> Vec<(ParamId, Var)> {
        self.vars.iter().enumerate().filter_map(|(i, v)| v.map(|v| (ParamId(i), v))).collect()
    }

    pub fn training(&self) -> bool {
        self.train
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub weight: ParamId,
    pub geom: ConvGeom,
    pub in_c: usize,
    pub out_c: usize,
}

impl Conv {
    fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, in_c: usize, out_c: usize, geom: ConvGeom) -> Result<Self> {
        geom.validate(in_c, out_c)?;
        let shape = geom.weight_shape(in_c, out_c);
        let fan_in = (shape.c * shape.h * shape.w) as f64;
        let w = Tensor::randn(shape, (2.0 / fan_in).sqrt(), &mut b.rng);
        let weight = b.store.add(format!("{name}.weight"), ParamRole::Weight, w);
        Ok(Conv { weight, geom, in_c, out_c })
    }

    fn forward<T: Real>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let w = f.var(self.weight);
        f.tape.conv(x, w, self.geom)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
    pub channels: usize,
}

impl Norm {
    fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, c: usize) -> Self {
        let v = Shape::vector(1, c);
        Norm {
            gamma: b.store.add(format!("{name}.gamma"), ParamRole::Gamma, Tensor::full(v, T::one())),
            beta: b.store.add(format!("{name}.beta"), ParamRole::Beta, Tensor::zeros(v)),
            mean: b.store.add(format!("{name}.running_mean"), ParamRole::RunningMean, Tensor::zeros(v)),
            var: b.store.add(format!("{name}.running_var"), ParamRole::RunningVar, Tensor::full(v, T::one())),
            channels: c,
        }
    }

    fn forward<T: Real>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let (g, b) = (f.var(self.gamma), f.var(self.beta));
        let mode = if f.train { NormMode::Train } else { NormMode::Eval };
        let count = {
            let s = f.tape.value(x).shape();
            s.n * s.plane()
        };
        let params = f.params;
        let (y, stats) = f.tape.batch_norm(
            x,
            g,
            b,
            params.get(self.mean).data(),
            params.get(self.var).data(),
            T::of(DEFAULT_EPS),
            mode,
        )?;
        if let Some(stats) = stats {
            f.bn_updates.push(NormUpdate { mean: self.mean, var: self.var, stats, count });
        }
        Ok(y)
    }
}

/// Convolution followed by batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBn {
    pub conv: Conv,
    pub norm: Norm,
}

impl ConvBn {
    fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, in_c: usize, out_c: usize, geom: ConvGeom) -> Result<Self> {
        Ok(ConvBn { conv: Conv::new(b, name, in_c, out_c, geom)?, norm: Norm::new(b, &format!("{name}.bn"), out_c) })
    }

    fn forward<T: Real>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(f, x)?;
        self.norm.forward(f, y)
    }
}

/// Dynamic Shift-Max with its hyper-function weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftMaxUnit {
    pub cfg: ShiftMaxConfig,
    pub fc1_weight: ParamId,
    pub fc1_bias: ParamId,
    pub fc2_weight: ParamId,
    pub fc2_bias: ParamId,
}

impl ShiftMaxUnit {
    fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, cfg: ShiftMaxConfig) -> Self {
        let (c, s, out) = (cfg.channels, cfg.squeeze(), cfg.coeff_count());
        let w1 = Tensor::randn(Shape::new(s, c, 1, 1), (2.0 / c as f64).sqrt(), &mut b.rng);
        let w2 = Tensor::randn(Shape::new(out, s, 1, 1), 0.1 / (s as f64).sqrt(), &mut b.rng);
        ShiftMaxUnit {
            fc1_weight: b.store.add(format!("{name}.fc1.weight"), ParamRole::Weight, w1),
            fc1_bias: b.store.add(format!("{name}.fc1.bias"), ParamRole::Bias, Tensor::zeros(Shape::vector(1, s))),
            fc2_weight: b.store.add(format!("{name}.fc2.weight"), ParamRole::Weight, w2),
            fc2_bias: b.store.add(format!("{name}.fc2.bias"), ParamRole::Bias, Tensor::zeros(Shape::vector(1, out))),
            cfg,
        }
    }

    fn forward<T: Real>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let pooled = f.tape.avg_pool(x);
        let (w1, b1, w2, b2) = (f.var(self.fc1_weight), f.var(self.fc1_bias), f.var(self.fc2_weight), f.var(self.fc2_bias));
        let h = f.tape.linear(pooled, w1, Some(b1))?;
        let h = f.tape.relu(h);
        let z = f.tape.linear(h, w2, Some(b2))?;
        let a = f.tape.coeff_map(z, &self.cfg.theta, self.cfg.range)?;
        f.tape.shift_max(x, a, &self.cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Act {
    Relu,
    ShiftMax(ShiftMaxUnit),
}

impl Act {
    fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, kind: ActivationKind, channels: usize, groups: usize) -> Result<Self> {
        Ok(match kind {
            ActivationKind::Relu => Act::Relu,
            ActivationKind::ShiftMax => Act::ShiftMax(ShiftMaxUnit::new(b, name, b.spec.shift_max.config(channels, groups)?)),
        })
    }

    fn forward<T: Real>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        match self {
            Act::Relu => Ok(f.tape.relu(x)),
            Act::ShiftMax(u) => u.forward(f, x),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DwStage {
    /// `k×1` (stride `(s,1)`, expanding by t) then `1×k` (stride `(1,s)`), each with norm.
    Factorized { vertical: ConvBn, horizontal: ConvBn },
    /// Plain `k×k` depthwise conv with multiplier t.
    Full(ConvBn),
}

impl DwStage {
    fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, k: usize, in_c: usize, t: usize, stride: usize) -> Result<Self> {
        let out = in_c * t;
        Ok(match b.variant {
            Variant::Micro => DwStage::Factorized {
                vertical: ConvBn::new(
                    b,
                    &format!("{name}.v"),
                    in_c,
                    out,
                    ConvGeom::new(k, 1).stride(stride, 1).padding(k / 2, 0).groups(in_c),
                )?,
                horizontal: ConvBn::new(
                    b,
                    &format!("{name}.h"),
                    out,
                    out,
                    ConvGeom::new(1, k).stride(1, stride).padding(0, k / 2).groups(out),
                )?,
            },
            Variant::FullRank => DwStage::Full(ConvBn::new(
                b,
                name,
                in_c,
                out,
                ConvGeom::same(k, k).stride(stride, stride).groups(in_c),
            )?),
        })
    }

    fn forward<T: Real>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        match self {
            DwStage::Factorized { vertical, horizontal } => {
                let y = vertical.forward(f, x)?;
                horizontal.forward(f, y)
            }
            DwStage::Full(c) => c.forward(f, x),
        }
    }

    pub fn convs(&self) -> Vec<&ConvBn> {
        match self {
            DwStage::Factorized { vertical, horizontal } => vec![vertical, horizontal],
            DwStage::Full(c) => vec![c],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stem {
    pub spec: StemSpec,
    pub vertical: ConvBn,
    pub horizontal: ConvBn,
}

impl Stem {
    fn forward<T: Real>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let y = self.vertical.forward(f, x)?;
        let y = self.horizontal.forward(f, y)?;
        Ok(f.tape.relu(y))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MicroBlock {
    pub plan: ResolvedBlock,
    pub dw: DwStage,
    pub a1: Act,
    pub squeeze: ConvBn,
    pub a2: Act,
    /// Shuffle before the expanding conv (Micro-B and Micro-C of the micro variant).
    pub shuffle: Option<Vec<usize>>,
    pub expand: Option<(ConvBn, Act)>,
}

impl MicroBlock {
    pub fn forward<T: Real>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let y = self.dw.forward(f, x)?;
        let mut y = self.a1.forward(f, y)?;
        if self.plan.spec.upsample {
            y = f.tape.upsample(y);
        }
        let y = self.squeeze.forward(f, y)?;
        let mut y = self.a2.forward(f, y)?;
        if let Some((expand, a3)) = &self.expand {
            if let Some(perm) = &self.shuffle {
                y = f.tape.permute(y, perm)?;
            }
            let z = expand.forward(f, y)?;
            y = a3.forward(f, z)?;
        }
        if self.plan.skip {
            y = f.tape.add(y, x)?;
        }
        Ok(y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub in_c: usize,
    pub hidden: usize,
    pub classes: usize,
    pub dropout: f64,
    pub fc1_weight: ParamId,
    pub fc1_bias: ParamId,
    pub fc2_weight: ParamId,
    pub fc2_bias: ParamId,
}

impl Classifier {
    /// Logits; softmax is applied by [`Network::predict`].
    fn forward<T: Real>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let pooled = f.tape.avg_pool(x);
        let (w1, b1, w2, b2) = (f.var(self.fc1_weight), f.var(self.fc1_bias), f.var(self.fc2_weight), f.var(self.fc2_bias));
        let h = f.tape.linear(pooled, w1, Some(b1))?;
        let mut h = f.tape.relu(h);
        if f.train && self.dropout > 0.0 {
            let shape = f.tape.value(h).shape();
            let keep = 1.0 - self.dropout;
            let mask = Tensor::from_fn(shape, |_, _, _, _| {
                if f.rng.random::<f64>() < keep {
                    T::of(1.0 / keep)
                } else {
                    T::zero()
                }
            });
            h = f.tape.mask(h, mask)?;
        }
        f.tape.linear(h, w2, Some(b2))
    }

    /// `C·hidden + hidden + hidden·classes + classes`.
    pub fn param_count(&self) -> u64 {
        (self.in_c * self.hidden + self.hidden + self.hidden * self.classes + self.classes) as u64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Stem(Stem),
    Block(MicroBlock),
    /// Spatial-attention slot of the keypoint head; identity pass-through.
    Attention { channels: usize },
    Classifier(Classifier),
    /// `1×1` conv to keypoint heatmaps, no norm or bias.
    Heatmap(Conv),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedLayer {
    pub name: String,
    pub layer: Layer,
}

struct Builder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
    variant: Variant,
    spec: &'a ArchSpec,
}

pub fn build_stem<T: Real>(spec: &ArchSpec, variant: Variant, store: &mut ParamStore<T>, seed: u64) -> Result<Stem> {
    let mut b = Builder { store, rng: ChaCha8Rng::seed_from_u64(seed), variant, spec };
    stem(&mut b)
}

fn stem<T: Real>(b: &mut Builder<'_, T>) -> Result<Stem> {
    let s = b.spec.stem.clone();
    let vertical = ConvBn::new(b, "stem.v", 3, s.c_r, ConvGeom::new(3, 1).stride(2, 1).padding(1, 0))?;
    let horizontal = ConvBn::new(
        b,
        "stem.h",
        s.c_r,
        s.c,
        ConvGeom::new(1, 3).stride(1, 2).padding(0, 1).groups(s.groups[1]),
    )?;
    Ok(Stem { spec: s, vertical, horizontal })
}

/// Builds one Micro-Block from a resolved row; the block kind decides the wiring.
pub fn build_block<T: Real>(
    spec: &ArchSpec,
    plan: &ResolvedBlock,
    variant: Variant,
    store: &mut ParamStore<T>,
    seed: u64,
) -> Result<MicroBlock> {
    let mut b = Builder { store, rng: ChaCha8Rng::seed_from_u64(seed), variant, spec };
    block(&mut b, plan, &format!("block{}", plan.index))
}

pub fn build_micro_a<T: Real>(spec: &ArchSpec, plan: &ResolvedBlock, variant: Variant, store: &mut ParamStore<T>, seed: u64) -> Result<MicroBlock> {
    expect_kind(plan, BlockKind::MicroA)?;
    build_block(spec, plan, variant, store, seed)
}

pub fn build_micro_b<T: Real>(spec: &ArchSpec, plan: &ResolvedBlock, variant: Variant, store: &mut ParamStore<T>, seed: u64) -> Result<MicroBlock> {
    expect_kind(plan, BlockKind::MicroB)?;
    build_block(spec, plan, variant, store, seed)
}

pub fn build_micro_c<T: Real>(spec: &ArchSpec, plan: &ResolvedBlock, variant: Variant, store: &mut ParamStore<T>, seed: u64) -> Result<MicroBlock> {
    expect_kind(plan, BlockKind::MicroC)?;
    build_block(spec, plan, variant, store, seed)
}

fn expect_kind(plan: &ResolvedBlock, kind: BlockKind) -> Result<()> {
    if plan.spec.kind != kind {
        return Err(Error::Config(format!("expected a {} row, got {}", kind.label(), plan.label())));
    }
    Ok(())
}

fn block<T: Real>(b: &mut Builder<'_, T>, p: &ResolvedBlock, name: &str) -> Result<MicroBlock> {
    let act = p.spec.activation;
    let micro = b.variant == Variant::Micro;
    let groups = |g: usize| if micro { g } else { 1 };
    let dw = DwStage::new(b, &format!("{name}.dw"), p.spec.k, p.in_c, p.expansion, p.spec.stride)?;
    let a1 = Act::new(b, &format!("{name}.a1"), act, p.dw_c, p.g1)?;
    let g1 = groups(p.g1);
    let squeeze = ConvBn::new(b, &format!("{name}.squeeze"), p.dw_c, p.mid_c, ConvGeom::pointwise(g1))?;
    let a2 = Act::new(b, &format!("{name}.a2"), act, p.mid_c, p.g1)?;
    let (shuffle, expand) = match p.g2 {
        None => (None, None),
        Some(g2) => {
            let shuffle = (b.variant == Variant::Micro).then(|| channel_shuffle_perm(p.mid_c, p.g1)).transpose()?;
            let conv = ConvBn::new(b, &format!("{name}.expand"), p.mid_c, p.out_c, ConvGeom::pointwise(groups(g2)))?;
            let a3 = Act::new(b, &format!("{name}.a3"), act, p.out_c, g2)?;
            (shuffle, Some((conv, a3)))
        }
    };
    Ok(MicroBlock { plan: p.clone(), dw, a1, squeeze, a2, shuffle, expand })
}

pub fn build_classifier<T: Real>(
    store: &mut ParamStore<T>,
    in_c: usize,
    spec: &ClassifierSpec,
    rng: &mut impl Rng,
) -> Classifier {
    let (h, k) = (spec.hidden, spec.classes);
    let w1 = Tensor::randn(Shape::new(h, in_c, 1, 1), (2.0 / in_c as f64).sqrt(), rng);
    let w2 = Tensor::randn(Shape::new(k, h, 1, 1), (1.0 / h as f64).sqrt(), rng);
    Classifier {
        in_c,
        hidden: h,
        classes: k,
        dropout: spec.dropout,
        fc1_weight: store.add("classifier.fc1.weight", ParamRole::Weight, w1),
        fc1_bias: store.add("classifier.fc1.bias", ParamRole::Bias, Tensor::zeros(Shape::vector(1, h))),
        fc2_weight: store.add("classifier.fc2.weight", ParamRole::Weight, w2),
        fc2_bias: store.add("classifier.fc2.bias", ParamRole::Bias, Tensor::zeros(Shape::vector(1, k))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    spec: ArchSpec,
    variant: Variant,
    plan: Plan,
    layers: Vec<NamedLayer>,
    params: ParamStore<T>,
}

impl<T: Real> Network<T> {
    pub fn new(spec: &ArchSpec, variant: Variant, seed: u64) -> Result<Self> {
        let plan = spec.validate()?;
        let mut store = ParamStore::new();
        let mut b = Builder { store: &mut store, rng: ChaCha8Rng::seed_from_u64(seed), variant, spec };
        let mut layers = vec![NamedLayer { name: "stem".into(), layer: Layer::Stem(stem(&mut b)?) }];
        for p in &plan.blocks {
            let name = format!("block{}", p.index);
            layers.push(NamedLayer { layer: Layer::Block(block(&mut b, p, &name)?), name: name.clone() });
            if p.spec.attention {
                layers.push(NamedLayer { name: format!("{name}.attention"), layer: Layer::Attention { channels: p.out_c } });
            }
        }
        match (&spec.classifier, &spec.heatmap) {
            (Some(c), _) => {
                let cls = build_classifier(b.store, plan.out_c(), c, &mut b.rng);
                layers.push(NamedLayer { name: "classifier".into(), layer: Layer::Classifier(cls) });
            }
            (None, Some(h)) => {
                let conv = Conv::new(&mut b, "heatmap", plan.out_c(), h.keypoints, ConvGeom::pointwise(1))?;
                layers.push(NamedLayer { name: "heatmap".into(), layer: Layer::Heatmap(conv) });
            }
            (None, None) => unreachable!("validated"),
        }
        Ok(Network { spec: spec.clone(), variant, plan, layers, params: store })
    }

    /// Builds a built-in architecture by name.
    pub fn builtin(name: &str, seed: u64) -> Result<Self> {
        Self::new(&ArchSpec::builtin(name)?, Variant::Micro, seed)
    }

    /// Rebuilds the layer graph for `spec` around existing parameters.
    pub fn with_params(spec: &ArchSpec, variant: Variant, params: ParamStore<T>) -> Result<Self> {
        let mut net = Self::new(spec, variant, 0)?;
        if net.params.len() != params.len()
            || net.params.iter().zip(params.iter()).any(|((_, a), (_, b))| a.name != b.name || a.value.shape() != b.value.shape())
        {
            return Err(dim_err!("parameters do not match architecture {}", spec.name));
        }
        net.params = params;
        Ok(net)
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn layers(&self) -> &[NamedLayer] {
        &self.layers
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn task(&self) -> Task {
        self.spec.task()
    }

    pub fn input_shape(&self, n: usize) -> Shape {
        Shape::new(n, 3, self.plan.input.0, self.plan.input.1)
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            variant: self.variant,
            plan: self.plan.clone(),
            layers: self.layers.clone(),
            params: self.params.cast(),
        }
    }

    /// Records the forward pass; returns logits `(N, classes, 1, 1)` or
    /// heatmaps `(N, keypoints, H/4, W/4)`.
    pub fn forward(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let s = f.tape.value(x).shape();
        if s.c != 3 || (s.h, s.w) != self.plan.input {
            return Err(dim_err!(
                "{} expects input (N, 3, {}, {}), got {s}",
                self.spec.name,
                self.plan.input.0,
                self.plan.input.1
            ));
        }
        let mut y = x;
        for l in &self.layers {
            y = match &l.layer {
                Layer::Stem(s) => s.forward(f, y)?,
                Layer::Block(b) => b.forward(f, y)?,
                Layer::Attention { .. } => y,
                Layer::Classifier(c) => c.forward(f, y)?,
                Layer::Heatmap(c) => c.forward(f, y)?,
            };
        }
        Ok(y)
    }

    /// Inference-mode forward pass.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let mut f = Forward::bind(&mut tape, &self.params, false, 0);
        let xv = f.tape.constant(x.clone());
        let y = self.forward(&mut f, xv)?;
        Ok(tape.value(y).clone())
    }

    /// Class probabilities for classifiers, heatmaps for keypoint models.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        Ok(match self.task() {
            Task::Classification => softmax(&y),
            Task::Keypoints => y,
        })
    }

    /// Folds training-mode batch statistics into the running averages.
    pub fn apply_norm_updates(&mut self, updates: &[NormUpdate<T>], momentum: f64) {
        let m = T::of(momentum);
        for u in updates {
            let unbias = if u.count > 1 { T::of(u.count as f64 / (u.count - 1) as f64) } else { T::one() };
            for (r, &v) in self.params.get_mut(u.mean).data_mut().iter_mut().zip(&u.stats.mean) {
                *r = (T::one() - m) * *r + m * v;
            }
            for (r, &v) in self.params.get_mut(u.var).data_mut().iter_mut().zip(&u.stats.var) {
                *r = (T::one() - m) * *r + m * v * unbias;
            }
        }
    }
}
