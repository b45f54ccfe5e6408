use cascade_core::autodiff::{ConvGeom, Reduction, Tape, Var};
use cascade_core::net::{Forward, NormCtx};
use cascade_core::td::{sequence_loss, LossKind, TargetMode};
use cascade_core::{Network, NetworkSpec, TemporalKernel, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Checks every input coordinate of `f` against central differences.
fn check<F>(inputs: Vec<Tensor<f64>>, f: F)
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Var<'t, f64>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&tape, &vars);
    let grads = tape.grad(out, &vars).unwrap();
    let eval = |xs: &[Tensor<f64>]| {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&tape, &vars);
        let v = out.value().item().unwrap();
        v
    };
    let h = 1e-5;
    for (k, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[j] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[j] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let analytic = grads[k].data()[j];
            assert!(
                rel_err(analytic, numeric) < 1e-6,
                "input {k} coord {j}: analytic {analytic} numeric {numeric}"
            );
        }
    }
}

/// Reduces a tensor-valued op to a scalar with fixed random weights.
fn project<'t>(tape: &'t Tape<f64>, v: Var<'t, f64>, seed: u64) -> Var<'t, f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(rand_tensor(&v.shape(), &mut rng));
    tape.sum(tape.mul(v, w).unwrap())
}

#[test]
fn analytic_examples() {
    let tape = Tape::new();
    let x = tape.param(Tensor::scalar(3.0));
    let y = tape.mul(x, x).unwrap();
    assert_eq!(tape.grad(y, &[x]).unwrap()[0].item(), Some(6.0));

    let tape = Tape::new();
    let (a, b) = (
        tape.param(Tensor::scalar(2.0)),
        tape.param(Tensor::scalar(5.0)),
    );
    let g = tape.grad(tape.mul(a, b).unwrap(), &[a, b]).unwrap();
    assert_eq!((g[0].item(), g[1].item()), (Some(5.0), Some(2.0)));
}

#[test]
fn stop_gradient_contributes_nothing() {
    let tape = Tape::new();
    let x = tape.param(Tensor::scalar(3.0));
    let y = tape.mul(tape.stop_gradient(x), x).unwrap();
    assert_eq!(tape.grad(y, &[x]).unwrap()[0].item(), Some(3.0));

    let tape = Tape::new();
    let x = tape.param(Tensor::scalar(3.0));
    let y = tape.stop_gradient(x);
    assert_eq!(tape.grad(y, &[x]).unwrap()[0].item(), Some(0.0));
}

#[test]
fn grad_requires_scalar_output() {
    let tape = Tape::new();
    let x = tape.param(Tensor::from_vec(vec![1.0, 2.0]));
    assert!(tape.grad(x, &[x]).is_err());
}

#[test]
fn gradient_accumulates_over_paths() {
    check(vec![Tensor::from_vec(vec![0.7, -1.3])], |t, v| {
        let a = t.mul(v[0], v[0]).unwrap();
        let b = t.add(a, t.scale(v[0], 3.0)).unwrap();
        t.sum(t.mul(b, v[0]).unwrap())
    });
}

#[test]
fn elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&[3, 4], &mut rng);
    let b = rand_tensor(&[3, 4], &mut rng);
    check(vec![a.clone(), b.clone()], |t, v| {
        project(t, t.add(v[0], v[1]).unwrap(), 1)
    });
    check(vec![a.clone(), b.clone()], |t, v| {
        project(t, t.mul(v[0], v[1]).unwrap(), 2)
    });
    check(vec![a.clone()], |t, v| project(t, t.scale(v[0], -2.5), 3));
    check(vec![a.clone()], |t, v| project(t, t.relu(v[0]), 4));
    check(vec![a.clone()], |t, v| t.mean(v[0]));
    check(vec![a.clone(), rand_tensor(&[4], &mut rng)], |t, v| {
        project(t, t.add_bias(v[0], v[1]).unwrap(), 5)
    });
    check(vec![a], |t, v| project(t, t.softmax(v[0]), 6));
}

#[test]
fn matmul_grad() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_tensor(&[3, 5], &mut rng);
    let b = rand_tensor(&[5, 2], &mut rng);
    check(vec![a, b], |t, v| {
        project(t, t.matmul(v[0], v[1]).unwrap(), 7)
    });
}

fn naive_conv(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (h, wd, k) = (g.height as isize, g.width as isize, g.kernel as isize);
    let r = k / 2;
    let mut out = vec![0.0; g.out_channels * g.height * g.width];
    for o in 0..g.out_channels {
        for y in 0..h {
            for xx in 0..wd {
                let mut acc = 0.0;
                for i in 0..g.in_channels {
                    for dy in 0..k {
                        for dx in 0..k {
                            let (sy, sx) = (y + dy - r, xx + dx - r);
                            if sy < 0 || sx < 0 || sy >= h || sx >= wd {
                                continue;
                            }
                            let xi = (i as isize * h + sy) * wd + sx;
                            let wi = ((o * g.in_channels + i) as isize * k + dy) * k + dx;
                            acc += x[xi as usize] * w[wi as usize];
                        }
                    }
                }
                out[((o as isize * h + y) * wd + xx) as usize] = acc;
            }
        }
    }
    out
}

#[test]
fn conv2d_value_and_grad() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = ConvGeom {
        in_channels: 2,
        out_channels: 3,
        height: 4,
        width: 5,
        kernel: 3,
    };
    let x = rand_tensor(&[2, 40], &mut rng);
    let w = rand_tensor(&[3, 2, 3, 3], &mut rng);
    let tape = Tape::new();
    let y = tape
        .conv2d(tape.constant(x.clone()), tape.constant(w.clone()), g)
        .unwrap();
    for r in 0..2 {
        let want = naive_conv(x.row(r), w.data(), &g);
        for (a, b) in y.value().row(r).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    check(vec![x, w], move |t, v| {
        project(t, t.conv2d(v[0], v[1], g).unwrap(), 8)
    });
}

#[test]
fn normalization_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&[5, 6], &mut rng);
    let gamma = rand_tensor(&[3], &mut rng);
    let beta = rand_tensor(&[3], &mut rng);
    check(vec![x.clone(), gamma.clone(), beta.clone()], |t, v| {
        project(t, t.batch_norm(v[0], v[1], v[2], 1e-5).unwrap().0, 9)
    });
    let mean = vec![0.1, -0.2, 0.3];
    let var = vec![0.5, 1.5, 2.0];
    check(vec![x.clone(), gamma, beta], move |t, v| {
        project(
            t,
            t.norm_eval(v[0], v[1], v[2], &mean, &var, 1e-5).unwrap(),
            10,
        )
    });
    check(vec![x], |t, v| {
        project(t, t.channel_mean(v[0], 3).unwrap(), 11)
    });
}

#[test]
fn cross_entropy_value_and_grads() {
    let tape = Tape::new();
    let z = tape.param(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
    let y = tape.constant(Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap());
    let h = tape.softmax_cross_entropy(z, y, Reduction::Sum).unwrap();
    assert!((h.value().item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);

    // Matched distributions: zero logit gradient.
    let logits = Tensor::new(vec![1, 4], vec![0.3, -1.2, 2.0, 0.1]).unwrap();
    let tape = Tape::new();
    let z = tape.param(logits.clone());
    let y = tape.constant(cascade_core::tensor::softmax_rows(&logits));
    let g = tape
        .grad(
            tape.softmax_cross_entropy(z, y, Reduction::Sum).unwrap(),
            &[z],
        )
        .unwrap();
    assert!(g[0].data().iter().all(|v: &f64| v.abs() < 1e-15));

    // Direct formula with C = 5.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let logits = rand_tensor(&[1, 5], &mut rng);
    let raw: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let target: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let tape = Tape::new();
    let h = tape
        .softmax_cross_entropy(
            tape.constant(logits.clone()),
            tape.constant(Tensor::new(vec![1, 5], target.clone()).unwrap()),
            Reduction::Sum,
        )
        .unwrap();
    let m = logits.data().iter().cloned().fold(f64::MIN, f64::max);
    let lse = m + logits
        .data()
        .iter()
        .map(|z| (z - m).exp())
        .sum::<f64>()
        .ln();
    let direct: f64 = target
        .iter()
        .zip(logits.data())
        .map(|(y, z)| -y * (z - lse))
        .sum();
    assert!((h.value().item().unwrap() - direct).abs() < 1e-12);

    let t = Tensor::new(vec![1, 5], target).unwrap();
    check(vec![logits.clone()], move |tp, v| {
        tp.softmax_cross_entropy(v[0], tp.constant(t.clone()), Reduction::Mean)
            .unwrap()
    });
}

#[test]
fn cross_entropy_rejects_invalid_targets() {
    let tape = Tape::new();
    let z = tape.constant(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
    let bad = tape.constant(Tensor::new(vec![1, 2], vec![0.7, 0.7]).unwrap());
    assert!(tape.softmax_cross_entropy(z, bad, Reduction::Sum).is_err());
    let neg = tape.constant(Tensor::new(vec![1, 2], vec![1.5, -0.5]).unwrap());
    assert!(tape.softmax_cross_entropy(z, neg, Reduction::Sum).is_err());
    let short = tape.constant(Tensor::new(vec![1, 3], vec![1.0, 0.0, 0.0]).unwrap());
    assert!(tape
        .softmax_cross_entropy(z, short, Reduction::Sum)
        .is_err());
}

#[test]
fn sigmoid_bce_grad() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let z = rand_tensor(&[6, 1], &mut rng);
    check(vec![z], |t, v| {
        t.sigmoid_bce(v[0], &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0])
            .unwrap()
    });
}

#[test]
fn softmax_is_shift_invariant_distribution() {
    let z = vec![1000.0, 1001.0, 999.5];
    let p = cascade_core::tensor::softmax(&z);
    let q = cascade_core::tensor::softmax(&z.iter().map(|v| v - 1000.0).collect::<Vec<_>>());
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for (a, b) in p.iter().zip(&q) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn residual_setup() -> (Network<f64>, Tensor<f64>, [usize; 4]) {
    let spec = NetworkSpec::mlp(6, 5, 2, 3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut net = Network::<f64>::init(spec, &mut rng).unwrap();
    for p in net.params.iter_mut() {
        if p.shape().len() == 1 {
            p.data_mut()
                .iter_mut()
                .for_each(|v| *v += rng.random_range(-0.2..0.2));
        }
    }
    let x = rand_tensor(&[4, 6], &mut rng);
    (net, x, [0, 2, 1, 2])
}

/// Per-step logits of a recorded OSD rollout with training-mode normalization.
fn rollout_logits<'t>(
    tape: &'t Tape<f64>,
    net: &Network<f64>,
    vars: &[Var<'t, f64>],
    x: &Tensor<f64>,
) -> Vec<Var<'t, f64>> {
    let backend = tape;
    let fwd = Forward::new(&backend, &net.spec, vars).unwrap();
    let mut stats = net.norm.clone();
    let inputs = vec![tape.constant(x.clone()); net.spec.horizon];
    fwd.cascaded(
        &mut NormCtx::Train(&mut stats),
        &inputs,
        &TemporalKernel::OneStepDelay,
    )
    .unwrap()
    .into_iter()
    .map(|s| s.logits)
    .collect()
}

fn fd_check_params<F>(net: &Network<f64>, analytic: &[Tensor<f64>], loss: F)
where
    F: Fn(&[Tensor<f64>]) -> f64,
{
    let h = 1e-5;
    let mut checked = 0;
    for k in 0..net.params.len() {
        for j in 0..net.params[k].len() {
            let mut p = net.params.clone();
            p[k].data_mut()[j] += h;
            let up = loss(&p);
            p[k].data_mut()[j] -= 2.0 * h;
            let down = loss(&p);
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[k].data()[j];
            assert!(
                rel_err(a, numeric) < 1e-6,
                "param {k}[{j}]: analytic {a} numeric {numeric}"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, net.num_scalars());
}

/// Every parameter of a two-block residual network, summed cross-entropy
/// over all steps of a one-step-delay rollout.
#[test]
fn residual_network_matches_finite_differences() {
    let (net, x, labels) = residual_setup();
    let loss = |params: &[Tensor<f64>]| -> (f64, Vec<Tensor<f64>>) {
        let tape = Tape::new();
        let vars: Vec<_> = params.iter().map(|p| tape.param(p.clone())).collect();
        let logits = rollout_logits(&tape, &net, &vars, &x);
        // lambda = 1 makes every target the label, so the loss has no
        // stop-gradient inside and finite differences see the full function.
        let l = sequence_loss(
            &tape,
            &logits,
            &labels,
            LossKind::Td,
            1.0,
            TargetMode::StopGradient,
        )
        .unwrap();
        let g = tape.grad(l, &vars).unwrap();
        let v = l.value().item().unwrap();
        (v, g)
    };
    let (_, grads) = loss(&net.params);
    fd_check_params(&net, &grads, |p| loss(p).0);
}

/// With bootstrapped targets, the gradient is that of the loss with the
/// targets frozen at their current values.
#[test]
fn td_gradient_matches_frozen_target_differences() {
    let (net, x, labels) = residual_setup();
    let lambda = 0.5;
    let tape = Tape::new();
    let vars: Vec<_> = net.params.iter().map(|p| tape.param(p.clone())).collect();
    let logits = rollout_logits(&tape, &net, &vars, &x);
    let frozen: Vec<Tensor<f64>> = {
        let probs: Vec<Vec<Vec<f64>>> = (0..4)
            .map(|r| {
                logits
                    .iter()
                    .map(|z| cascade_core::tensor::softmax(z.value().row(r)))
                    .collect()
            })
            .collect();
        let per_instance: Vec<Vec<Vec<f64>>> = probs
            .iter()
            .zip(&labels)
            .map(|(p, &l)| {
                let mut y = vec![0.0; 3];
                y[l] = 1.0;
                let cfg = cascade_core::td::TdConfig::new(lambda, 4).unwrap();
                cascade_core::td::td_targets(p, &y, &cfg).unwrap()
            })
            .collect();
        (0..4)
            .map(|t| {
                Tensor::from_rows(
                    &per_instance
                        .iter()
                        .map(|y| y[t].clone())
                        .collect::<Vec<_>>(),
                )
                .unwrap()
            })
            .collect()
    };
    let l = sequence_loss(
        &tape,
        &logits,
        &labels,
        LossKind::Td,
        lambda,
        TargetMode::StopGradient,
    )
    .unwrap();
    let grads = tape.grad(l, &vars).unwrap();
    let frozen_loss = |params: &[Tensor<f64>]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<_> = params.iter().map(|p| tape.param(p.clone())).collect();
        let logits = rollout_logits(&tape, &net, &vars, &x);
        let mut total = 0.0;
        for (z, y) in logits.iter().zip(&frozen) {
            let h = tape
                .softmax_cross_entropy(*z, tape.constant(y.clone()), Reduction::Mean)
                .unwrap();
            total += h.value().item().unwrap();
        }
        total
    };
    fd_check_params(&net, &grads, frozen_loss);
}
