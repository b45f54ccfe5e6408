use cascade_core::metacog::*;
use cascade_core::net::InstanceTrace;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Scores drawn from a small grid so that ties are common.
fn random_case(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<bool>) {
    loop {
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..8) as f64 / 4.0)
            .collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            return (scores, labels);
        }
    }
}

fn auroc_pairwise(s: &[f64], l: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if l[i] && !l[j] {
                pairs += 1.0;
                if s[i] > s[j] {
                    wins += 1.0;
                } else if s[i] == s[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Sweep every candidate threshold from the top down and stop at the
/// first whose true positive rate reaches the target.
fn fpr_sweep(s: &[f64], l: &[bool], target: f64) -> f64 {
    let mut cands: Vec<f64> = s.to_vec();
    cands.sort_by(|a, b| b.total_cmp(a));
    cands.dedup();
    let pos = l.iter().filter(|&&x| x).count() as f64;
    let neg = l.len() as f64 - pos;
    for tau in cands {
        let tp = s.iter().zip(l).filter(|(&v, &y)| y && v >= tau).count() as f64;
        if tp / pos >= target - 1e-12 {
            return s.iter().zip(l).filter(|(&v, &y)| !y && v >= tau).count() as f64 / neg;
        }
    }
    1.0
}

#[test]
fn auroc_matches_pairwise_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let n = rng.random_range(2..25);
        let (s, l) = random_case(&mut rng, n);
        assert!((auroc(&s, &l).unwrap() - auroc_pairwise(&s, &l)).abs() < 1e-12);
    }
}

#[test]
fn fpr_matches_threshold_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let n = rng.random_range(2..30);
        let (s, l) = random_case(&mut rng, n);
        for target in [0.5, 0.8, 0.95, 1.0] {
            assert!(
                (fpr_at_tpr(&s, &l, target).unwrap() - fpr_sweep(&s, &l, target)).abs() < 1e-12
            );
        }
    }
}

#[test]
fn twenty_point_case() {
    // Positives 1..=20 step 1, negatives interleaved half a step lower.
    let mut s = Vec::new();
    let mut l = Vec::new();
    for i in 1..=10 {
        s.push(i as f64);
        l.push(true);
        s.push(i as f64 - 0.5);
        l.push(false);
    }
    // 95% of 10 positives needs all 10, so tau = 1 and 9 of 10 negatives pass.
    assert!((fpr_at_tpr(&s, &l, 0.95).unwrap() - 0.9).abs() < 1e-12);
    assert!((fpr_at_tpr(&s, &l, 0.5).unwrap() - 0.4).abs() < 1e-12);
    assert!((auroc(&s, &l).unwrap() - 0.55).abs() < 1e-12);
}

#[test]
fn identical_scores_pass_the_target_fraction() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 4000;
    let s: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let l: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let f = fpr_at_tpr(&s, &l, 0.95).unwrap();
    assert!((f - 0.95).abs() < 0.02, "{f}");
    assert!((auroc(&s, &l).unwrap() - 0.5).abs() < 0.03);
}

proptest! {
    #[test]
    fn auroc_invariant_under_increasing_maps(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, l) = random_case(&mut rng, 15);
        let mapped: Vec<f64> = s.iter().map(|v| (2.0 * v).exp() - 3.0).collect();
        prop_assert!((auroc(&s, &l).unwrap() - auroc(&mapped, &l).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn auroc_of_negated_scores_complements(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, l) = random_case(&mut rng, 12);
        let s: Vec<f64> = (0..12).map(|i| i as f64 + rng.random::<f64>() * 0.5).collect();
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((auroc(&s, &l).unwrap() + auroc(&neg, &l).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fpr_does_not_grow_as_target_drops(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, l) = random_case(&mut rng, 20);
        let mut prev = f64::INFINITY;
        for k in (1..=20).rev() {
            let f = fpr_at_tpr(&s, &l, k as f64 / 20.0).unwrap();
            prop_assert!(f <= prev);
            prev = f;
        }
    }
}

fn known_trace() -> InstanceTrace {
    InstanceTrace::from_logits(vec![
        vec![0.0, 1.0, -1.0],
        vec![2.0, 0.5, 0.25],
        vec![-0.5, 3.0, 1.5],
    ])
    .unwrap()
}

#[test]
fn logits_all_steps_reassemble() {
    let tr = known_trace();
    let f = build_trace_features(&tr, Representation::Logits, Scope::All);
    assert_eq!(f.values.len(), 9);
    let rebuilt: Vec<Vec<f64>> = f.values.chunks(3).map(<[f64]>::to_vec).collect();
    assert_eq!(rebuilt, tr.logits);
    let last = build_trace_features(&tr, Representation::Logits, Scope::Final);
    assert_eq!(last.values, tr.logits[2]);
}

#[test]
fn uniform_trace_entropy_is_log_classes() {
    let tr = InstanceTrace::from_probs(vec![vec![0.25; 4]; 5]).unwrap();
    let f = build_trace_features(&tr, Representation::Entropy, Scope::All);
    assert_eq!(f.values.len(), 5);
    assert!(f.values.iter().all(|v| (v - 4f64.ln()).abs() < 1e-12));
    let msp = build_trace_features(&tr, Representation::Msp, Scope::Final);
    assert_eq!(msp.values, vec![0.25]);
}

#[test]
fn feature_lengths_follow_representation() {
    let tr = known_trace();
    for kind in Representation::ALL {
        for scope in Scope::ALL {
            let steps = if scope == Scope::All { 3 } else { 1 };
            let f = build_trace_features(&tr, kind, scope);
            assert_eq!(f.values.len(), steps * kind.width(3), "{kind}/{scope}");
        }
    }
}

#[test]
fn feature_matrix_csv_reloads() {
    let traces = vec![known_trace(); 3];
    let m = FeatureMatrix::from_traces(&traces, Representation::Softmax, Scope::All).unwrap();
    assert_eq!(FeatureMatrix::from_csv(&m.to_csv()).unwrap(), m);
}

fn quick() -> MetaCogConfig {
    MetaCogConfig {
        hidden: 32,
        epochs: 40,
        batch_size: 32,
        ..MetaCogConfig::default()
    }
}

#[test]
fn indistinguishable_sets_score_near_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut draw = |n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..3).map(|_| normal.sample(&mut rng)).collect())
            .collect()
    };
    let (a, b, c, d) = (draw(300), draw(300), draw(1000), draw(1000));
    let model = train_metacog::<f64>(&a, &b, &quick()).unwrap();
    let mut scores = model.predict(&c).unwrap();
    scores.extend(model.predict(&d).unwrap());
    assert!(scores.iter().all(|&p| p > 0.0 && p < 1.0));
    let labels: Vec<bool> = (0..2000).map(|i| i < 1000).collect();
    let a = auroc(&scores, &labels).unwrap();
    assert!((a - 0.5).abs() < 0.05, "auroc {a}");
}

#[test]
fn detector_training_is_deterministic() {
    let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * i) as f64]).collect();
    let (a, b) = rows.split_at(10);
    let m1 = train_metacog::<f32>(a, b, &quick()).unwrap();
    let m2 = train_metacog::<f32>(a, b, &quick()).unwrap();
    assert_eq!(m1, m2);
    let other = MetaCogConfig { seed: 1, ..quick() };
    assert_ne!(m1, train_metacog::<f32>(a, b, &other).unwrap());
}

#[test]
fn detector_rejects_ragged_or_empty_input() {
    assert!(train_metacog::<f64>(&[vec![1.0]], &[], &quick()).is_err());
    assert!(train_metacog::<f64>(&[vec![1.0]], &[vec![1.0, 2.0]], &quick()).is_err());
    let bad = MetaCogConfig {
        keep_prob: 0.0,
        ..quick()
    };
    assert!(train_metacog::<f64>(&[vec![1.0]], &[vec![2.0]], &bad).is_err());
}

#[test]
fn report_json_lists_each_pair() {
    let mk = |shift: f64| -> Vec<InstanceTrace> {
        (0..30)
            .map(|i| {
                let v = shift + (i % 7) as f64 * 0.1;
                InstanceTrace::from_logits(vec![vec![v, 0.0], vec![2.0 * v, 0.0]]).unwrap()
            })
            .collect()
    };
    let (a, b) = (mk(1.0), mk(-1.0));
    let split = OodSplit {
        in_train: &a,
        ood_train: &b,
        in_test: &a,
        ood_test: &b,
    };
    let r = metacog_report::<f64>(
        split,
        &[Representation::Msp, Representation::Logits],
        &Scope::ALL,
        &quick(),
    )
    .unwrap();
    assert_eq!(r.len(), 4);
    // Two-class MSP is symmetric in the logit sign, so only logits separate.
    assert!(r
        .iter()
        .filter(|m| m.representation == Representation::Logits)
        .all(|m| m.auroc > 0.99));
    let json = metrics_json(&r).unwrap();
    assert!(json.contains("\"representation\": \"msp\"") && json.contains("\"fpr_at_95tpr\""));
    let back: Vec<MetaCogMetrics> = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);
}
