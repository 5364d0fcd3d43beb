//! Toy-scale trainer: SGD with momentum, cosine decay, weight decay, label
//! smoothing and mutual learning against a full-rank partner.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{ArchSpec, Forward, Network, ParamId, ParamStore, Task, Variant};
use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::error::{config_err, dim_err, Error, Result};
use crate::kernels::{log_softmax_row, softmax};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    /// Co-train a full-rank partner and add its KL term to the student loss.
    pub mutual: bool,
    /// Weight β of the KL term.
    pub beta: f64,
    pub temperature: f64,
    /// Partner also learns from the (detached) student.
    pub symmetric: bool,
    /// Running-statistics momentum of batch norm.
    pub bn_momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            lr0: 0.05,
            momentum: 0.9,
            weight_decay: 3e-5,
            label_smoothing: 0.1,
            mutual: false,
            beta: 1.0,
            temperature: 1.0,
            symmetric: false,
            bn_momentum: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [self.momentum, self.weight_decay, self.label_smoothing, self.beta, self.bn_momentum];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(config_err!("training hyperparameters must be finite and nonnegative"));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(config_err!("lr0 must be positive, got {}", self.lr0));
        }
        if self.label_smoothing >= 1.0 {
            return Err(config_err!("label smoothing must lie in [0, 1)"));
        }
        if self.temperature <= 0.0 || self.bn_momentum > 1.0 {
            return Err(config_err!("temperature must be positive and bn momentum at most 1"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(config_err!("epochs and batch size must be positive"));
        }
        Ok(())
    }
}

/// `lr0·(1 + cos(π·step/total))/2`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    lr0 * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0
}

/// One-hot rows mixed with the uniform distribution: `(1−ε)·e_y + ε/K`.
pub fn smoothed_targets<T: Real>(labels: &[usize], classes: usize, eps: f64) -> Tensor<T> {
    let off = eps / classes as f64;
    Tensor::from_fn(Shape::vector(labels.len(), classes), |n, c, _, _| {
        T::of(if c == labels[n] { 1.0 - eps + off } else { off })
    })
}

/// Cross-entropy of one logit row against the ε-smoothed one-hot target.
pub fn smoothed_ce(logits: &[f64], label: usize, eps: f64) -> f64 {
    let k = logits.len() as f64;
    let lp = log_softmax_row(logits);
    -lp.iter().enumerate().map(|(c, l)| l * if c == label { 1.0 - eps + eps / k } else { eps / k }).sum::<f64>()
}

/// Batch mean of `KL(softmax(p/T) ‖ softmax(q/T))` over rows of `(N, K, 1, 1)` logits.
pub fn kl_divergence<T: Real>(p_logits: &Tensor<T>, q_logits: &Tensor<T>, temperature: f64) -> Result<f64> {
    let s = p_logits.shape();
    if q_logits.shape() != s || s.plane() != 1 {
        return Err(dim_err!("KL needs matching logits, got {s} and {}", q_logits.shape()));
    }
    let mut total = 0.0;
    for n in 0..s.n {
        let lp = log_softmax_row(&p_logits.item(n).iter().map(|v| v.to_f64().unwrap_or(f64::NAN) / temperature).collect::<Vec<_>>());
        let lq = log_softmax_row(&q_logits.item(n).iter().map(|v| v.to_f64().unwrap_or(f64::NAN) / temperature).collect::<Vec<_>>());
        total += lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum::<f64>();
    }
    Ok(total / s.n as f64)
}

/// Index of the largest logit of each row.
pub fn argmax_rows<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    (0..logits.shape().n)
        .map(|n| {
            let row = logits.item(n);
            (0..row.len()).fold(0, |best, i| if row[i] > row[best] { i } else { best })
        })
        .collect()
}

/// Momentum SGD; decay applies to conv/FC weights only and is scaled by the
/// learning rate together with the gradient.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: Vec<Option<Vec<f32>>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd { momentum, weight_decay, buffers: Vec::new() }
    }

    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &[(ParamId, Tensor<f32>)], lr: f64) {
        if self.buffers.len() < params.len() {
            self.buffers.resize(params.len(), None);
        }
        let (mu, lr) = (self.momentum as f32, lr as f32);
        for (id, g) in grads {
            let wd = if params.param(*id).role.decays() { self.weight_decay as f32 } else { 0.0 };
            let w = params.get_mut(*id).data_mut();
            let buf = self.buffers[id.index()].get_or_insert_with(|| vec![0.0; w.len()]);
            for ((wi, bi), gi) in w.iter_mut().zip(buf.iter_mut()).zip(g.data()) {
                *bi = mu * *bi + gi + wd * *wi;
                *wi -= lr * *bi;
            }
        }
    }
}

/// Supervision for one batch.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Labels(Vec<usize>),
    Heatmaps(Tensor<f32>),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StepStats {
    /// Optimized objective.
    pub loss: f64,
    /// Smoothed cross-entropy (classification) or MSE (heatmaps).
    pub ce: f64,
    pub correct: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct MutualLosses {
    pub student: StepStats,
    pub partner: StepStats,
    /// `KL(partner ‖ student)` at temperature T.
    pub kl: f64,
}

struct Recorded {
    tape: Tape<f32>,
    out: crate::autodiff::Var,
    bound: Vec<(ParamId, crate::autodiff::Var)>,
    updates: Vec<crate::arch::NormUpdate<f32>>,
}

fn record(net: &Network<f32>, x: &Tensor<f32>, seed: u64) -> Result<Recorded> {
    let mut tape = Tape::new();
    let (out, bound, updates) = {
        let mut f = Forward::bind(&mut tape, net.params(), true, seed);
        let xv = f.tape.constant(x.clone());
        let y = net.forward(&mut f, xv)?;
        (y, f.bound(), std::mem::take(&mut f.bn_updates))
    };
    Ok(Recorded { tape, out, bound, updates })
}

/// Adds the task loss (and an optional distillation term towards `teacher`)
/// to the recording, backpropagates and updates `net`.
fn finish(
    net: &mut Network<f32>,
    sgd: &mut Sgd,
    mut r: Recorded,
    targets: &Targets,
    teacher: Option<&Tensor<f32>>,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<(StepStats, f64)> {
    let out = r.tape.value(r.out).clone();
    let (mut loss, ce, correct) = match targets {
        Targets::Labels(labels) => {
            let s = out.shape();
            if s.plane() != 1 || labels.len() != s.n {
                return Err(dim_err!("{} labels for logits {s}", labels.len()));
            }
            let t = smoothed_targets(labels, s.c, cfg.label_smoothing);
            let l = r.tape.soft_target_ce(r.out, t)?;
            let correct = argmax_rows(&out).iter().zip(labels).filter(|(a, b)| a == b).count();
            (l, r.tape.value(l).data()[0] as f64, correct)
        }
        Targets::Heatmaps(t) => {
            let l = r.tape.mse(r.out, t.clone())?;
            (l, r.tape.value(l).data()[0] as f64, 0)
        }
    };
    let mut kl = 0.0;
    if let Some(teacher) = teacher {
        let temp = cfg.temperature;
        kl = kl_divergence(teacher, &out, temp)?;
        let p = softmax(&teacher.map(|v| v / temp as f32));
        let z = if temp == 1.0 { r.out } else { r.tape.scale(r.out, (1.0 / temp) as f32) };
        let cross = r.tape.soft_target_ce(z, p)?;
        let term = r.tape.scale(cross, (cfg.beta * temp * temp) as f32);
        loss = r.tape.add(loss, term)?;
    }
    let value = ce + cfg.beta * cfg.temperature * cfg.temperature * kl * teacher.map_or(0.0, |_| 1.0);
    let mut grads = r.tape.backward(loss)?;
    let list: Vec<(ParamId, Tensor<f32>)> = r
        .bound
        .iter()
        .map(|&(id, v)| (id, grads.take(v).unwrap_or_else(|| Tensor::zeros(net.params().get(id).shape()))))
        .collect();
    sgd.step(net.params_mut(), &list, lr);
    net.apply_norm_updates(&r.updates, cfg.bn_momentum);
    Ok((StepStats { loss: value, ce, correct }, kl))
}

/// One SGD step on a single network.
pub fn train_step(net: &mut Network<f32>, sgd: &mut Sgd, x: &Tensor<f32>, targets: &Targets, cfg: &TrainConfig, lr: f64, seed: u64) -> Result<StepStats> {
    let r = record(net, x, seed)?;
    Ok(finish(net, sgd, r, targets, None, cfg, lr)?.0)
}

/// Student loss `CE + β·KL(partner_detached ‖ student)`; partner loss is its own
/// CE (plus the mirrored KL term when `cfg.symmetric`). Both take one SGD step.
#[allow(clippy::too_many_arguments)]
pub fn mutual_learn_step(
    student: &mut Network<f32>,
    partner: &mut Network<f32>,
    sgd_student: &mut Sgd,
    sgd_partner: &mut Sgd,
    x: &Tensor<f32>,
    labels: &[usize],
    cfg: &TrainConfig,
    lr: f64,
    seed: u64,
) -> Result<MutualLosses> {
    let rs = record(student, x, seed)?;
    let rp = record(partner, x, seed.wrapping_add(1))?;
    let (zs, zp) = (rs.tape.value(rs.out).clone(), rp.tape.value(rp.out).clone());
    if zs.shape() != zp.shape() {
        return Err(dim_err!("student logits {} vs partner logits {}", zs.shape(), zp.shape()));
    }
    let targets = Targets::Labels(labels.to_vec());
    let (s, kl) = finish(student, sgd_student, rs, &targets, Some(&zp), cfg, lr)?;
    let (p, _) = finish(partner, sgd_partner, rp, &targets, cfg.symmetric.then_some(&zs), cfg, lr)?;
    Ok(MutualLosses { student: s, partner: p, kl })
}

/// Per-epoch metrics; one JSON object per line in the metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    /// Mean optimized student loss.
    pub loss: f64,
    /// Mean smoothed student cross-entropy.
    pub ce: f64,
    /// Running accuracy over the epoch's training-mode batches.
    pub train_accuracy: f64,
    /// Inference-mode accuracy over the full training set after the epoch.
    pub eval_accuracy: f64,
    /// Inference-mode plain cross-entropy over the training set.
    pub eval_ce: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_kl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partner_ce: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partner_eval_accuracy: Option<f64>,
}

pub struct TrainOutcome {
    pub student: Network<f32>,
    pub partner: Option<Network<f32>>,
    pub log: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn final_record(&self) -> &EpochRecord {
        self.log.last().expect("at least one epoch")
    }
}

/// Writes records as line-delimited JSON.
pub fn write_log(w: &mut impl Write, log: &[EpochRecord]) -> Result<()> {
    for r in log {
        writeln!(w, "{}", serde_json::to_string(r).expect("record serializes"))?;
    }
    Ok(())
}

/// Inference-mode `(mean CE, accuracy)` over a dataset.
pub fn evaluate(net: &Network<f32>, data: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (mut ce, mut correct) = (0.0, 0usize);
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = data.batch(chunk);
        let z = net.infer(&x)?;
        for (n, &label) in y.iter().enumerate() {
            let row: Vec<f64> = z.item(n).iter().map(|&v| v as f64).collect();
            ce += smoothed_ce(&row, label, 0.0);
        }
        correct += argmax_rows(&z).iter().zip(&y).filter(|(a, b)| a == b).count();
    }
    Ok((ce / data.len() as f64, correct as f64 / data.len() as f64))
}

fn step_seed(seed: u64, step: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(step as u64)
}

fn check_finite(v: f64, epoch: usize, step: usize, lr: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { epoch, step, detail: format!("{what} = {v} at lr {lr:.6}") })
    }
}

/// Trains a classifier from `spec` on `data`; deterministic given `cfg.seed`.
pub fn train_toy(spec: &ArchSpec, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let student = Network::new(spec, Variant::Micro, cfg.seed)?;
    let partner = if cfg.mutual { Some(Network::new(spec, Variant::FullRank, cfg.seed.wrapping_add(0x5eed))?) } else { None };
    train_networks(student, partner, data, cfg)
}

/// Trains existing networks (the partner only when given).
pub fn train_networks(mut student: Network<f32>, mut partner: Option<Network<f32>>, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset("no training samples".into()));
    }
    if student.task() != Task::Classification {
        return Err(Error::Unsupported("toy training covers classification models".into()));
    }
    if data.resolution() != student.plan().input {
        return Err(dim_err!("dataset is {:?}, {} expects {:?}", data.resolution(), student.spec().name, student.plan().input));
    }
    let classes = student.spec().classifier.as_ref().map_or(0, |c| c.classes);
    if classes != data.classes {
        return Err(dim_err!("dataset has {} classes, {} predicts {classes}", data.classes, student.spec().name));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let steps_per_epoch = data.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut sgd_s = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut sgd_p = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut ce, mut correct) = (0.0, 0.0, 0usize);
        let (mut kl_sum, mut kl_min, mut pce) = (0.0, f64::INFINITY, 0.0);
        let mut lr = cfg.lr0;
        for chunk in order.chunks(cfg.batch_size) {
            lr = cosine_lr(step, total, cfg.lr0);
            let (x, y) = data.batch(chunk);
            let seed = step_seed(cfg.seed, step);
            let stats = match partner.as_mut() {
                Some(p) => {
                    let m = mutual_learn_step(&mut student, p, &mut sgd_s, &mut sgd_p, &x, &y, cfg, lr, seed)?;
                    check_finite(m.partner.loss, epoch, step, lr, "partner loss")?;
                    kl_sum += m.kl;
                    kl_min = kl_min.min(m.kl);
                    pce += m.partner.ce;
                    m.student
                }
                None => train_step(&mut student, &mut sgd_s, &x, &Targets::Labels(y), cfg, lr, seed)?,
            };
            check_finite(stats.loss, epoch, step, lr, "student loss")?;
            loss += stats.loss;
            ce += stats.ce;
            correct += stats.correct;
            step += 1;
        }
        let (eval_ce, eval_accuracy) = evaluate(&student, data, cfg.batch_size)?;
        let steps = steps_per_epoch as f64;
        let partner_eval_accuracy = match &partner {
            Some(p) => Some(evaluate(p, data, cfg.batch_size)?.1),
            None => None,
        };
        log.push(EpochRecord {
            epoch,
            lr,
            loss: loss / steps,
            ce: ce / steps,
            train_accuracy: correct as f64 / data.len() as f64,
            eval_accuracy,
            eval_ce,
            kl: partner.as_ref().map(|_| kl_sum / steps),
            min_kl: partner.as_ref().map(|_| kl_min),
            partner_ce: partner.as_ref().map(|_| pce / steps),
            partner_eval_accuracy,
        });
    }
    Ok(TrainOutcome { student, partner, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{linearly_separable, synthetic_blobs};

    #[test]
    fn cosine_schedule_points() {
        assert_eq!(cosine_lr(0, 100, 0.4), 0.4);
        assert!(cosine_lr(100, 100, 0.4).abs() < 1e-15);
        assert!((cosine_lr(50, 100, 0.4) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn ce_of_uniform_logits_is_log_k() {
        assert!((smoothed_ce(&[0.0; 4], 2, 0.0) - 4f64.ln()).abs() < 1e-12);
        assert!((smoothed_ce(&[0.3; 4], 1, 0.1) - 4f64.ln()).abs() < 1e-12);
        let z = [1.0, -2.0, 0.5];
        let plain = -log_softmax_row(&z)[0];
        assert!((smoothed_ce(&z, 0, 0.0) - plain).abs() < 1e-12);
    }

    #[test]
    fn smoothed_ce_gradient_matches_differences() {
        let z = vec![0.3, -1.2, 2.0, 0.1];
        let (label, eps) = (2, 0.1);
        let mut tape = Tape::<f64>::new();
        let v = tape.leaf(Tensor::from_vec(Shape::vector(1, 4), z.clone()).unwrap());
        let l = tape.soft_target_ce(v, smoothed_targets(&[label], 4, eps)).unwrap();
        assert!((tape.value(l).data()[0] - smoothed_ce(&z, label, eps)).abs() < 1e-12);
        let g = tape.backward(l).unwrap();
        let g = g.get(v).unwrap();
        let h = 1e-4;
        for i in 0..4 {
            let (mut a, mut b) = (z.clone(), z.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (smoothed_ce(&a, label, eps) - smoothed_ce(&b, label, eps)) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() / fd.abs().max(1e-8) < 1e-6, "{i}");
        }
    }

    #[test]
    fn kl_is_zero_for_identical_and_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let p = Tensor::<f32>::randn(Shape::vector(3, 5), 2.0, &mut rng);
            let q = Tensor::<f32>::randn(Shape::vector(3, 5), 2.0, &mut rng);
            assert_eq!(kl_divergence(&p, &p, 1.0).unwrap(), 0.0);
            assert!(kl_divergence(&p, &q, 1.0).unwrap() >= 0.0);
        }
    }

    #[test]
    fn zero_lr_step_changes_nothing() {
        let mut net = Network::<f32>::builtin("M0-narrow", 1).unwrap();
        let data = synthetic_blobs(10, 1, 32, 32, 0).unwrap();
        let before: Vec<_> = net.params().iter().filter(|(_, p)| p.role.trainable()).map(|(_, p)| p.value.clone()).collect();
        let (x, y) = data.batch(&[0, 1, 2, 3]);
        let mut sgd = Sgd::new(0.9, 0.1);
        train_step(&mut net, &mut sgd, &x, &Targets::Labels(y), &TrainConfig::default(), 0.0, 0).unwrap();
        let after: Vec<_> = net.params().iter().filter(|(_, p)| p.role.trainable()).map(|(_, p)| p.value.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn separable_loss_halves_in_200_steps() {
        let mut spec = ArchSpec::builtin("M0-narrow").unwrap().with_input(16, 16);
        spec.classifier.as_mut().unwrap().classes = 2;
        let data = linearly_separable(64, 16, 16, 3).unwrap();
        let cfg = TrainConfig { batch_size: 16, label_smoothing: 0.0, mutual: true, ..TrainConfig::default() };
        let mut student = Network::new(&spec, Variant::Micro, 0).unwrap();
        let mut partner = Network::new(&spec, Variant::FullRank, 1).unwrap();
        let (mut ss, mut sp) = (Sgd::new(0.9, 3e-5), Sgd::new(0.9, 3e-5));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut losses = Vec::new();
        for step in 0..200 {
            if step % 4 == 0 {
                order.shuffle(&mut rng);
            }
            let (x, y) = data.batch(&order[(step % 4) * 16..(step % 4 + 1) * 16]);
            let m = mutual_learn_step(&mut student, &mut partner, &mut ss, &mut sp, &x, &y, &cfg, cosine_lr(step, 200, 0.05), step as u64).unwrap();
            assert!(m.kl >= 0.0);
            losses.push(m.student.loss);
        }
        let first = losses[..8].iter().sum::<f64>() / 8.0;
        let last = losses[192..].iter().sum::<f64>() / 8.0;
        assert!(last <= 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn rejects_bad_config_and_mismatched_data() {
        assert!(TrainConfig { lr0: 0.0, ..TrainConfig::default() }.validate().is_err());
        let spec = ArchSpec::builtin("M0-narrow").unwrap();
        let data = synthetic_blobs(3, 2, 32, 32, 0).unwrap();
        assert!(matches!(train_toy(&spec, &data, &TrainConfig::default()), Err(Error::Dimension(_))));
    }

    #[test]
    fn exploding_lr_reports_non_finite() {
        let spec = ArchSpec::builtin("M0-narrow").unwrap();
        let data = synthetic_blobs(10, 2, 32, 32, 0).unwrap();
        let cfg = TrainConfig { epochs: 3, lr0: 1e30, batch_size: 10, ..TrainConfig::default() };
        assert!(matches!(train_toy(&spec, &data, &cfg), Err(Error::NonFinite { .. })));
    }
}
