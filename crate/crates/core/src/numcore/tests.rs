use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Per-element reference convolution with zero padding.
fn naive_conv(x: &Tensor, k: &Tensor, b: Option<&Tensor>) -> Tensor {
    let (cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let mut out = vec![0.0; cout * h * w];
    for co in 0..cout {
        for y in 0..h {
            for xx in 0..w {
                let mut s = b.map_or(0.0, |b| b.data()[co]);
                for ci in 0..cin {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = y as isize + ky as isize - (kh / 2) as isize;
                            let ix = xx as isize + kx as isize - (kw / 2) as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            s += k.data()[((co * cin + ci) * kh + ky) * kw + kx]
                                * x.data()[(ci * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(co * h + y) * w + xx] = s;
            }
        }
    }
    Tensor::new(vec![cout, h, w], out).unwrap()
}

#[test]
fn identity_kernel_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_tensor(&mut rng, &[1, 7, 9], 1.0);
    let mut k = Tensor::zeros(&[1, 1, 3, 3]);
    k.data_mut()[4] = 1.0;
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let kv = tape.constant(k);
    let y = tape.conv2d(xv, kv, None).unwrap();
    assert_eq!(tape.value(y).unwrap(), &x);
}

#[test]
fn square_value_and_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(3.0));
    let y = tape.mul(x, x).unwrap();
    assert_eq!(tape.value(y).unwrap().item(), 9.0);
    let g = tape.backward(y).unwrap();
    assert_eq!(g.wrt(x).unwrap().item(), 6.0);
}

#[test]
fn constant_loss_has_zero_gradients() {
    let mut tape = Tape::new();
    let p = tape.param(Tensor::full(&[2, 2], 0.3));
    let c = tape.constant(Tensor::full(&[2, 2], 1.5));
    let loss = tape.sum(c).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.wrt(p).unwrap(), Tensor::zeros(&[2, 2]));
}

#[test]
fn conv_stack_matches_elementwise_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_tensor(&mut rng, &[2, 8, 8], 1.0);
    let k1 = random_tensor(&mut rng, &[4, 2, 3, 3], 0.5);
    let b1 = random_tensor(&mut rng, &[4], 0.1);
    let k2 = random_tensor(&mut rng, &[4, 4, 3, 3], 0.5);
    let b2 = random_tensor(&mut rng, &[4], 0.1);
    let k3 = random_tensor(&mut rng, &[1, 4, 3, 3], 0.5);

    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars: Vec<Var> = [&k1, &b1, &k2, &b2, &k3].iter().map(|t| tape.param((*t).clone())).collect();
    let h = tape.conv2d(xv, vars[0], Some(vars[1])).unwrap();
    let h = tape.leaky_relu(h, 0.2).unwrap();
    let h = tape.conv2d(h, vars[2], Some(vars[3])).unwrap();
    let h = tape.leaky_relu(h, 0.2).unwrap();
    let y = tape.conv2d(h, vars[4], None).unwrap();

    let lrelu = |t: &Tensor| t.map(|v| if v > 0.0 { v } else { 0.2 * v });
    let r = lrelu(&naive_conv(&x, &k1, Some(&b1)));
    let r = lrelu(&naive_conv(&r, &k2, Some(&b2)));
    let r = naive_conv(&r, &k3, None);
    assert!(tape.value(y).unwrap().max_abs_diff(&r) < 1e-12);
}

#[test]
fn forward_is_pure() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_tensor(&mut rng, &[3, 6, 5], 1.0);
    let k = random_tensor(&mut rng, &[2, 3, 3, 3], 1.0);
    let run = || {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let kv = tape.constant(k.clone());
        let y = tape.conv2d(xv, kv, None).unwrap();
        let y = tape.sigmoid(y).unwrap();
        tape.value(y).unwrap().clone()
    };
    assert_eq!(run().data(), run().data());
}

#[test]
fn shape_errors_name_the_primitive() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[3, 2]));
    match tape.add(a, b) {
        Err(NumError::Shape { op, .. }) => assert_eq!(op, "add"),
        other => panic!("unexpected {other:?}"),
    }
    let x = tape.constant(Tensor::zeros(&[2, 4, 4]));
    let k = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
    assert!(matches!(tape.conv2d(x, k, None), Err(NumError::Shape { op: "conv2d", .. })));
}

#[test]
fn backward_rejects_foreign_and_non_scalar() {
    let mut t1 = Tape::new();
    let mut t2 = Tape::new();
    let a = t1.param(Tensor::scalar(1.0));
    let _ = t2.param(Tensor::scalar(1.0));
    assert_eq!(t2.backward(a).unwrap_err(), NumError::ForeignVar);
    let v = t1.param(Tensor::zeros(&[2]));
    assert!(matches!(t1.backward(v), Err(NumError::NotScalar { .. })));
}

#[test]
fn tensor_rejects_bad_construction() {
    assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    assert!(matches!(Tensor::new(vec![1], vec![f64::NAN]), Err(NumError::NonFinite { .. })));
}

#[test]
fn backward_visits_each_reachable_node_once() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::full(&[3], 0.5));
    let a = tape.mul(x, x).unwrap();
    let b = tape.add(a, x).unwrap();
    let c = tape.sum(b).unwrap();
    let g = tape.backward(c).unwrap();
    // mul, add, sum
    assert_eq!(g.visited(), 3);
    for v in g.wrt(x).unwrap().data() {
        assert!((v - 2.0).abs() < 1e-15);
    }
}

/// Central-difference directional derivative vs. the tape's gradient, for a
/// scalar function built from one primitive applied to random inputs.
fn check_primitive(build: impl Fn(&mut Tape, &[Var]) -> Var, shapes: &[&[usize]], seed: u64, positive: bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor> = shapes
        .iter()
        .map(|s| {
            let t = random_tensor(&mut rng, s, 1.0);
            if positive {
                t.map(|v| v.abs() + 0.5)
            } else {
                t
            }
        })
        .collect();
    // random projection so every output element contributes
    let eval = |ins: &[Tensor]| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.param(t.clone())).collect();
        let out = build(&mut tape, &vars);
        let shape = tape.value(out).unwrap().shape().to_vec();
        let mut prng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let proj = random_tensor(&mut prng, &shape, 1.0);
        let pv = tape.constant(proj);
        let prod = tape.mul(out, pv).unwrap();
        let loss = tape.sum(prod).unwrap();
        let value = tape.value(loss).unwrap().item();
        let g = tape.backward(loss).unwrap();
        (value, vars.iter().map(|&v| g.wrt(v).unwrap()).collect())
    };
    let (_, grads) = eval(&inputs);
    let mut drng = ChaCha8Rng::seed_from_u64(seed ^ 0xdef);
    let dirs: Vec<Tensor> = inputs.iter().map(|t| random_tensor(&mut drng, t.shape(), 1.0)).collect();
    let h = 1e-5;
    let shifted = |s: f64| -> Vec<Tensor> {
        inputs.iter().zip(&dirs).map(|(t, d)| t.zip_map(d, |a, b| a + s * b).unwrap()).collect()
    };
    let fd = (eval(&shifted(h)).0 - eval(&shifted(-h)).0) / (2.0 * h);
    let analytic: f64 =
        grads.iter().zip(&dirs).map(|(g, d)| g.data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>()).sum();
    let rel = (fd - analytic).abs() / analytic.abs().max(1e-8);
    assert!(rel < 1e-4, "fd {fd} vs analytic {analytic} (rel {rel})");
}

#[test]
fn primitive_jvps_match_finite_differences() {
    for seed in 0..5 {
        check_primitive(
            |t, v| t.conv2d(v[0], v[1], Some(v[2])).unwrap(),
            &[&[2, 5, 6], &[3, 2, 3, 3], &[3]],
            seed,
            false,
        );
        check_primitive(|t, v| t.conv2d(v[0], v[1], None).unwrap(), &[&[4, 1, 1], &[3, 4, 1, 1]], seed, false);
        check_primitive(|t, v| t.channel_bias(v[0], v[1]).unwrap(), &[&[3, 4, 4], &[3]], seed, false);
        check_primitive(|t, v| t.add(v[0], v[1]).unwrap(), &[&[5], &[5]], seed, false);
        check_primitive(|t, v| t.sub(v[0], v[1]).unwrap(), &[&[5], &[5]], seed, false);
        check_primitive(|t, v| t.mul(v[0], v[1]).unwrap(), &[&[5], &[5]], seed, false);
        check_primitive(|t, v| t.scale(v[0], -2.5).unwrap(), &[&[5]], seed, false);
        check_primitive(|t, v| t.leaky_relu(v[0], 0.2).unwrap(), &[&[7]], seed, false);
        check_primitive(|t, v| t.abs(v[0]).unwrap(), &[&[7]], seed, false);
        check_primitive(|t, v| t.sigmoid(v[0]).unwrap(), &[&[7]], seed, false);
        check_primitive(|t, v| t.log(v[0]).unwrap(), &[&[7]], seed, true);
        check_primitive(|t, v| t.log_sigmoid(v[0]).unwrap(), &[&[7]], seed, false);
        check_primitive(|t, v| t.sum(v[0]).unwrap(), &[&[2, 3]], seed, false);
        check_primitive(|t, v| t.mean(v[0]).unwrap(), &[&[2, 3]], seed, false);
        check_primitive(|t, v| t.squared_error(v[0], v[1]).unwrap(), &[&[2, 3], &[2, 3]], seed, false);
    }
}

#[test]
fn log_sigmoid_is_stable_at_extremes() {
    assert!((log_sigmoid(0.0) + std::f64::consts::LN_2).abs() < 1e-15);
    assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-12);
    assert!(log_sigmoid(800.0).abs() < 1e-300);
    assert!((sigmoid(-800.0)).abs() < 1e-300);
}

#[test]
fn adamw_zero_grad_no_decay_is_identity() {
    let params0 = vec![Tensor::new(vec![3], vec![0.1, -2.0, 5.0]).unwrap()];
    let mut params = params0.clone();
    let cfg = AdamWConfig { lr: 1e-2, weight_decay: 0.0, ..Default::default() };
    let mut opt = AdamW::new(cfg, &params);
    for _ in 0..3 {
        opt.step(&mut params, &[Tensor::zeros(&[3])], &["w".into()]).unwrap();
    }
    assert_eq!(params, params0);
    assert_eq!(opt.step, 3);
}

#[test]
fn adamw_first_step_moves_by_learning_rate() {
    // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps) ≈ lr·sign(g).
    let mut params = vec![Tensor::new(vec![2], vec![1.0, 1.0]).unwrap()];
    let lr = 1e-3;
    let mut opt = AdamW::new(AdamWConfig { lr, ..Default::default() }, &params);
    let g = Tensor::new(vec![2], vec![0.7, -3.0]).unwrap();
    opt.step(&mut params, &[g], &["w".into()]).unwrap();
    let expected = [1.0 - lr * 0.7 / (0.7 + 1e-8), 1.0 + lr * 3.0 / (3.0 + 1e-8)];
    for (p, e) in params[0].data().iter().zip(expected) {
        assert!((p - e).abs() < 1e-15);
    }
}

#[test]
fn adamw_decay_scales_parameters() {
    let mut params = vec![Tensor::new(vec![2], vec![2.0, -0.5]).unwrap()];
    let (lr, wd) = (0.1, 0.01);
    let mut opt = AdamW::new(AdamWConfig { lr, weight_decay: wd, ..Default::default() }, &params);
    opt.step(&mut params, &[Tensor::zeros(&[2])], &["w".into()]).unwrap();
    assert_eq!(params[0].data(), &[2.0 * (1.0 - lr * wd), -0.5 * (1.0 - lr * wd)]);
}

#[test]
fn adamw_names_the_bad_block() {
    let mut params = vec![Tensor::zeros(&[1]), Tensor::zeros(&[2])];
    let mut opt = AdamW::new(AdamWConfig::default(), &params);
    let grads = vec![Tensor::zeros(&[1]), Tensor::from_parts(vec![2], vec![0.0, f64::INFINITY])];
    let err = opt.step(&mut params, &grads, &["a".into(), "b".into()]).unwrap_err();
    assert_eq!(err, NumError::NonFiniteGradient { block: "b".into() });
    assert_eq!(opt.step, 0);
}
