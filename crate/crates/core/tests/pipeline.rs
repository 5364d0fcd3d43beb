use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use micronet::arch::{ArchSpec, Network, Task, Variant, PUBLISHED_NAMES};
use micronet::bundle::{load_network, save_network};
use micronet::data::synthetic_blobs;
use micronet::train::{train_step, train_toy, Sgd, Targets, TrainConfig};
use micronet::{Shape, Tensor};

#[test]
fn train_save_load_infer_is_bitwise() {
    let spec = ArchSpec::builtin("M0-narrow").unwrap();
    let data = synthetic_blobs(10, 4, 32, 32, 5).unwrap();
    let cfg = TrainConfig { epochs: 2, batch_size: 8, seed: 5, ..TrainConfig::default() };
    let out = train_toy(&spec, &data, &cfg).unwrap();
    let x = data.batch(&(0..10).collect::<Vec<_>>()).0;
    let want = out.student.infer(&x).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    save_network(&out.student, &path).unwrap();
    let got = load_network(&path).unwrap().infer(&x).unwrap();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&got), bits(&want));
}

/// One SGD step of every published architecture, both variants, at reduced
/// resolution; the loss stays finite and the weights move.
#[test]
fn every_published_arch_takes_a_training_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for name in PUBLISHED_NAMES {
        let base = ArchSpec::builtin(name).unwrap();
        let (h, w) = match base.task() {
            Task::Classification => (32, 32),
            Task::Keypoints => (128, 96),
        };
        let spec = base.with_input(h, w);
        for variant in [Variant::Micro, Variant::FullRank] {
            let mut net = Network::<f32>::new(&spec, variant, 1).unwrap();
            let x = Tensor::<f32>::randn(net.input_shape(2), 1.0, &mut rng);
            let targets = match net.task() {
                Task::Classification => Targets::Labels(vec![3, 7]),
                Task::Keypoints => {
                    let y = net.infer(&x).unwrap().shape();
                    assert_eq!((y.c, y.h, y.w), (17, h / 4, w / 4), "{name}");
                    Targets::Heatmaps(Tensor::randn(Shape::new(2, y.c, y.h, y.w), 0.1, &mut rng))
                }
            };
            let before = net.params().iter().map(|(_, p)| p.value.clone()).collect::<Vec<_>>();
            let cfg = TrainConfig::default();
            let mut sgd = Sgd::new(cfg.momentum, cfg.weight_decay);
            let stats = train_step(&mut net, &mut sgd, &x, &targets, &cfg, 0.01, 9).unwrap();
            assert!(stats.loss.is_finite(), "{name} {variant:?}");
            let moved = net.params().iter().zip(&before).any(|((_, p), b)| p.value.max_abs_diff(b) > 0.0);
            assert!(moved, "{name} {variant:?}: no weight changed");
        }
    }
}
