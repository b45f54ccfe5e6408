use cascade_core::config::KvConfig;
use cascade_core::data::{Dataset, Standardizer};
use cascade_core::net::InputShape;
use cascade_core::train::{lr_schedule, train, train_on, Adam, DataBundle, Sgd, TrainConfig};
use cascade_core::{Error, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn kv(pairs: &[&str]) -> KvConfig {
    let mut kv = KvConfig::new();
    for p in pairs {
        kv.assign(p).unwrap();
    }
    kv
}

fn tiny(extra: &[&str]) -> TrainConfig {
    let mut base = vec![
        "side=8",
        "per_class=12",
        "test_per_class=2",
        "width=8",
        "blocks=2",
        "epochs=2",
        "batch_size=16",
    ];
    base.extend_from_slice(extra);
    TrainConfig::from_kv(&kv(&base)).unwrap()
}

#[test]
fn nesterov_two_steps_by_hand() {
    let (mu, wd, lr) = (0.9, 0.1, 0.5);
    let mut opt = Sgd::<f64>::new(mu, wd, true, vec![true]);
    let mut p = vec![Tensor::from_vec(vec![1.0])];
    let g1 = 0.2;
    opt.step(&mut p, &[Tensor::from_vec(vec![g1])], lr).unwrap();
    // d = g + wd p, v = mu v + d, p -= lr (d + mu v)
    let d1 = g1 + wd * 1.0;
    let v1 = d1;
    let p1 = 1.0 - lr * (d1 + mu * v1);
    assert!((p[0].data()[0] - p1).abs() < 1e-15);
    let g2 = -0.3;
    opt.step(&mut p, &[Tensor::from_vec(vec![g2])], lr).unwrap();
    let d2 = g2 + wd * p1;
    let v2 = mu * v1 + d2;
    let p2 = p1 - lr * (d2 + mu * v2);
    assert!((p[0].data()[0] - p2).abs() < 1e-15);
}

#[test]
fn decay_mask_spares_unmarked_parameters() {
    let mut opt = Sgd::<f64>::new(0.0, 0.5, false, vec![true, false]);
    let mut p = vec![Tensor::from_vec(vec![2.0]), Tensor::from_vec(vec![2.0])];
    let zero = [Tensor::from_vec(vec![0.0]), Tensor::from_vec(vec![0.0])];
    opt.step(&mut p, &zero, 0.1).unwrap();
    assert!((p[0].data()[0] - 1.9).abs() < 1e-15);
    assert_eq!(p[1].data()[0], 2.0);
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut opt = Adam::<f64>::new(0.0, vec![false]);
    let mut p = vec![Tensor::from_vec(vec![1.0, -1.0])];
    opt.step(&mut p, &[Tensor::from_vec(vec![0.3, -2.0])], 0.01)
        .unwrap();
    // Bias correction makes the first update lr * g / |g|.
    assert!((p[0].data()[0] - 0.99).abs() < 1e-9);
    assert!((p[0].data()[1] + 0.99).abs() < 1e-9);
}

proptest! {
    #[test]
    fn weight_decay_alone_shrinks_norm(
        lr in 0.01f64..0.1, wd in 1e-4f64..5e-3, mu in 0.0f64..0.9, seed in 0u64..100,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut p = vec![Tensor::from_vec(init)];
        let zero = [Tensor::from_vec(vec![0.0; 6])];
        let mut opt = Sgd::<f64>::new(mu, wd, true, vec![true]);
        let norm = |t: &Tensor<f64>| t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut prev = norm(&p[0]);
        for _ in 0..50 {
            opt.step(&mut p, &zero, lr).unwrap();
            let now = norm(&p[0]);
            prop_assert!(now <= prev + 1e-15);
            prev = now;
        }
    }
}

#[test]
fn schedule_steps_down() {
    assert_eq!(lr_schedule(0, 0.1, 0.2, 5), 0.1);
    assert_eq!(lr_schedule(4, 0.1, 0.2, 5), 0.1);
    assert!((lr_schedule(5, 0.1, 0.2, 5) - 0.02).abs() < 1e-15);
    assert!((lr_schedule(19, 0.1, 0.2, 5) - 0.1 * 0.2f64.powi(3)).abs() < 1e-15);
}

fn separable_bundle() -> DataBundle {
    let shape = InputShape {
        channels: 1,
        height: 2,
        width: 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut make = |n: usize| {
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = i % 2;
            let centre = if y == 0 { -1.0 } else { 1.0 };
            pixels.extend((0..6).map(|_| centre + rng.random_range(-0.4..0.4)));
            labels.push(y);
        }
        Dataset::new(shape, 2, pixels, labels).unwrap()
    };
    let (train, val) = (make(200), make(60));
    let standardizer = Standardizer::fit(&train);
    DataBundle {
        train,
        val,
        test: None,
        standardizer,
    }
}

#[test]
fn separable_two_class_problem_is_learned() {
    let cfg = TrainConfig::from_kv(&kv(&[
        "classes=2",
        "superclasses=1",
        "width=8",
        "blocks=2",
        "epochs=5",
        "batch_size=20",
    ]))
    .unwrap();
    let out = train_on::<f64>(&cfg, &separable_bundle()).unwrap();
    let last: Vec<_> = out
        .metrics
        .iter()
        .filter(|r| r.epoch == 5 && r.split.to_string() == "val" && r.t == cfg.horizon)
        .collect();
    assert_eq!(last.len(), 1);
    assert!(last[0].accuracy > 0.95, "accuracy {}", last[0].accuracy);
}

#[test]
fn same_seed_same_run() {
    let cfg = tiny(&[
        "seed=3",
        "crop=true",
        "flip=true",
        "cutout=true",
        "train_noise=perlin",
    ]);
    let a = train::<f32>(&cfg).unwrap();
    let b = train::<f32>(&cfg).unwrap();
    assert_eq!(a.metrics_csv(), b.metrics_csv());
    assert_eq!(
        a.checkpoint.to_json().unwrap(),
        b.checkpoint.to_json().unwrap()
    );
    let c = train::<f32>(&tiny(&[
        "seed=4",
        "crop=true",
        "flip=true",
        "cutout=true",
        "train_noise=perlin",
    ]))
    .unwrap();
    assert_ne!(
        a.checkpoint.to_json().unwrap(),
        c.checkpoint.to_json().unwrap()
    );
}

#[test]
fn same_seed_same_run_across_pool_sizes() {
    let cfg = tiny(&["seed=1"]);
    let a = train::<f32>(&cfg).unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap();
    let b = pool.install(|| train::<f32>(&cfg).unwrap());
    assert_eq!(a.metrics_csv(), b.metrics_csv());
}

#[test]
fn training_noise_changes_the_run() {
    let plain = train::<f32>(&tiny(&[])).unwrap();
    let noisy = train::<f32>(&tiny(&["train_noise=occlusion", "train_noise_prob=1"])).unwrap();
    assert_ne!(plain.metrics_csv(), noisy.metrics_csv());
    assert_eq!(noisy.checkpoint.config["train_noise"], "occlusion");
}

#[test]
fn metrics_cover_every_epoch_step_and_split() {
    let cfg = tiny(&["epochs=3"]);
    let out = train::<f32>(&cfg).unwrap();
    assert_eq!(out.metrics.len(), 3 * cfg.horizon * 2);
    let csv = out.metrics_csv();
    assert!(csv.starts_with("epoch,t,split,accuracy,loss\n"));
    assert_eq!(csv.lines().count(), 1 + out.metrics.len());
    assert!(out
        .metrics
        .iter()
        .all(|r| (0.0..=1.0).contains(&r.accuracy) && r.loss.is_finite()));
}

#[test]
fn resolved_config_round_trips() {
    let cfg = tiny(&[
        "kernel=ews",
        "alpha=0.7",
        "lambda=0.5",
        "loss=ce",
        "head=multi",
        "max_shift=1",
        "train_noise=translation",
    ]);
    let again = TrainConfig::from_kv(&cfg.to_kv()).unwrap();
    assert_eq!(again, cfg);
}

#[test]
fn checkpoint_carries_training_standardizer() {
    let cfg = tiny(&[]);
    let data = cfg.data.load().unwrap();
    let out = train_on::<f32>(&cfg, &data).unwrap();
    assert_eq!(
        out.checkpoint.standardizer.as_ref(),
        Some(&data.standardizer)
    );
    assert_eq!(out.checkpoint.config["seed"], "0");
}

#[test]
fn split_is_class_balanced() {
    let data = tiny(&["per_class=20", "val_fraction=0.1"])
        .data
        .load()
        .unwrap();
    assert!(data.val.class_counts().iter().all(|&c| c == 2));
    assert!(data.train.class_counts().iter().all(|&c| c == 18));
}

#[test]
fn bad_configs_name_their_key() {
    let cases: [(&[&str], &str); 8] = [
        (&["batch_size=1"], "batch_size"),
        (&["arch=transformer"], "arch"),
        (&["lambda=2"], "lambda"),
        (&["rollout=serial", "T=2"], "T"),
        (&["rollout=serial_per_frame"], "rollout"),
        (&["train_noise=smudge"], "train_noise"),
        (&["train_noise_prob=1.5"], "train_noise_prob"),
        (&["epochs=ten"], "epochs"),
    ];
    for (pairs, key) in cases {
        match TrainConfig::from_kv(&kv(pairs)) {
            Err(Error::Config { key: k, .. }) => assert_eq!(k, key, "{pairs:?}"),
            other => panic!("{pairs:?}: expected a config error, got {other:?}"),
        }
    }
}

#[test]
fn missing_dataset_file_is_reported() {
    let cfg = TrainConfig::from_kv(&kv(&[
        "dataset=idx",
        "data_path=/nonexistent/images.idx",
        "label_path=/nonexistent/labels.idx",
    ]))
    .unwrap();
    let err = train::<f32>(&cfg).unwrap_err();
    assert!(err.to_string().contains("nonexistent"), "{err}");
}

#[test]
fn divergence_stops_with_non_finite_loss() {
    let cfg = tiny(&["lr=1e30", "momentum=0"]);
    match train::<f32>(&cfg) {
        Err(Error::NonFiniteLoss {
            epoch,
            batch,
            value,
        }) => {
            assert!(epoch >= 1 && batch >= 1);
            assert!(!value.is_finite());
        }
        other => panic!(
            "expected divergence, got {:?}",
            other.map(|o| o.metrics.len())
        ),
    }
}
