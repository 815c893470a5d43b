use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reprog::host::{init_random, DESK_CONV, TINY_CONV};
use reprog::nn::{
    backward, backward_to_input, decode_model, encode_model, forward, forward_batch, load_model, save_model, softmax,
    softmax_rows, HostModel, Layer, LayerSpec, Provenance,
};
use reprog::{Error, Tensor};

/// Straight loop-nest evaluation of a model in f64, one image at a time.
fn naive_forward(model: &HostModel<f64>, x: &[f64]) -> Vec<f64> {
    let [n, _, c] = model.input_shape();
    let mut shape = vec![n, n, c];
    let mut act = x.to_vec();
    for layer in model.layers() {
        match *layer.spec() {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let (h, w) = (shape[0], shape[1]);
                let oh = (h + 2 * padding - kernel) / stride + 1;
                let ow = (w + 2 * padding - kernel) / stride + 1;
                let wt = layer.weight().unwrap().data();
                let b = layer.bias().unwrap().data();
                let mut out = vec![0.0; oh * ow * out_channels];
                for oy in 0..oh {
                    for ox in 0..ow {
                        for co in 0..out_channels {
                            let mut s = b[co];
                            for ky in 0..kernel {
                                for kx in 0..kernel {
                                    let iy = (oy * stride + ky) as isize - padding as isize;
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    for ci in 0..in_channels {
                                        let v = act[(iy as usize * w + ix as usize) * in_channels + ci];
                                        s += v * wt[((ky * kernel + kx) * in_channels + ci) * out_channels + co];
                                    }
                                }
                            }
                            out[(oy * ow + ox) * out_channels + co] = s;
                        }
                    }
                }
                act = out;
                shape = vec![oh, ow, out_channels];
            }
            LayerSpec::Relu => act.iter_mut().for_each(|v| *v = v.max(0.0)),
            LayerSpec::Maxpool { size, stride } => {
                let (h, w, ch) = (shape[0], shape[1], shape[2]);
                let oh = (h - size) / stride + 1;
                let ow = (w - size) / stride + 1;
                let mut out = vec![f64::NEG_INFINITY; oh * ow * ch];
                for oy in 0..oh {
                    for ox in 0..ow {
                        for k in 0..ch {
                            for dy in 0..size {
                                for dx in 0..size {
                                    let v = act[((oy * stride + dy) * w + ox * stride + dx) * ch + k];
                                    let o = &mut out[(oy * ow + ox) * ch + k];
                                    *o = o.max(v);
                                }
                            }
                        }
                    }
                }
                act = out;
                shape = vec![oh, ow, ch];
            }
            LayerSpec::Flatten => shape = vec![act.len()],
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                let wt = layer.weight().unwrap().data();
                let b = layer.bias().unwrap().data();
                act = (0..out_features)
                    .map(|o| b[o] + (0..in_features).map(|i| wt[o * in_features + i] * act[i]).sum::<f64>())
                    .collect();
                shape = vec![out_features];
            }
        }
    }
    act
}

fn random_input(shape: [usize; 3], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0f32..1.0))
}

/// Model with seeded random parameters for an arbitrary layer list.
fn seeded_model(input: [usize; 3], specs: Vec<LayerSpec>, seed: u64) -> HostModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = specs
        .into_iter()
        .map(|spec| {
            let params = spec.param_shapes().map(|(ws, bs)| {
                let scale = (1.0 / spec.fan_in().unwrap() as f32).sqrt();
                (
                    Tensor::from_fn(ws, |_| rng.random_range(-1.0f32..1.0) * scale * 1.7),
                    Tensor::from_fn(bs, |_| rng.random_range(-0.1f32..0.1)),
                )
            });
            Layer::new(spec, params).unwrap()
        })
        .collect();
    HostModel::new("test", input, layers, Provenance::Random).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn conv_dense_matches_loop_nest() {
    let model = seeded_model(
        [6, 6, 3],
        vec![
            LayerSpec::conv3x3(3, 4),
            LayerSpec::Flatten,
            LayerSpec::dense(6 * 6 * 4, 10),
        ],
        5,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let x = random_input([6, 6, 3], &mut rng);
        let (logits, _) = forward(&model, &x).unwrap();
        let x64: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
        let expected = naive_forward(&model.cast(), &x64);
        for (a, e) in logits.data().iter().zip(&expected) {
            assert!(rel(*a as f64, *e) < 1e-5, "{a} vs {e}");
        }
    }
}

#[test]
fn registered_architectures_match_loop_nest() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (arch, seed) in [(TINY_CONV, 3), (DESK_CONV, 4)] {
        let model = init_random(arch, seed).unwrap();
        let x = random_input(model.input_shape(), &mut rng);
        let (logits, _) = forward(&model, &x).unwrap();
        let x64: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
        let expected = naive_forward(&model.cast(), &x64);
        let scale = expected.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, e) in logits.data().iter().zip(&expected) {
            assert!((*a as f64 - e).abs() <= 1e-5 * scale.max(1.0), "{arch}: {a} vs {e}");
        }
    }
}

#[test]
fn strided_unpadded_conv_matches_loop_nest() {
    let model = seeded_model(
        [9, 9, 3],
        vec![
            LayerSpec::Conv2d {
                in_channels: 3,
                out_channels: 5,
                kernel: 3,
                stride: 2,
                padding: 0,
            },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::dense(4 * 4 * 5, 12),
        ],
        9,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_input([9, 9, 3], &mut rng);
    let (logits, _) = forward(&model, &x).unwrap();
    assert_eq!(logits.len(), 12);
    let x64: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let expected = naive_forward(&model.cast(), &x64);
    for (a, e) in logits.data().iter().zip(&expected) {
        assert!(rel(*a as f64, *e) < 1e-5);
    }
}

#[test]
fn one_by_one_identity_conv_copies_input() {
    let mut w = Tensor::zeros(vec![1, 1, 3, 3]);
    for c in 0..3 {
        w.data_mut()[c * 3 + c] = 1.0;
    }
    let conv = Layer::new(
        LayerSpec::Conv2d {
            in_channels: 3,
            out_channels: 3,
            kernel: 1,
            stride: 1,
            padding: 0,
        },
        Some((w, Tensor::zeros(vec![3]))),
    )
    .unwrap();
    let layers = vec![
        conv,
        Layer::new(LayerSpec::Flatten, None).unwrap(),
        Layer::zeroed(LayerSpec::dense(4 * 4 * 3, 10)).unwrap(),
    ];
    let model = HostModel::new("id", [4, 4, 3], layers, Provenance::Random).unwrap();
    let x = random_input([4, 4, 3], &mut ChaCha8Rng::seed_from_u64(4));
    let (_, trace) = forward(&model, &x).unwrap();
    assert_eq!(trace.activation(1), x.data());
}

#[test]
fn relu_of_negative_input_is_zero() {
    let layers = vec![
        Layer::new(LayerSpec::Relu, None).unwrap(),
        Layer::new(LayerSpec::Flatten, None).unwrap(),
        Layer::zeroed(LayerSpec::dense(2 * 2 * 3, 10)).unwrap(),
    ];
    let model = HostModel::new("relu", [2, 2, 3], layers, Provenance::Random).unwrap();
    let (_, trace) = forward(&model, &Tensor::full(vec![2, 2, 3], -0.5)).unwrap();
    assert!(trace.activation(1).iter().all(|&v| v == 0.0));
}

#[test]
fn softmax_cases() {
    let uniform = softmax(&Tensor::<f32>::full(vec![10], 3.0));
    assert!(uniform.data().iter().all(|&p| (p - 0.1).abs() < 1e-7));

    let huge = softmax(&Tensor::<f32>::new(vec![2], vec![1000.0, 0.0]).unwrap());
    assert!(huge.is_finite());
    assert!((huge.data()[0] - 1.0).abs() < 1e-7 && huge.data()[1] < 1e-30);

    let small = softmax(&Tensor::<f64>::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
    for (p, v) in small.data().iter().zip([1.0f64, 2.0, 3.0]) {
        assert!((p - v.exp() / z).abs() < 1e-9);
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let logits = Tensor::<f32>::from_fn(vec![7, 10], |_| rng.random_range(-30.0..30.0));
    let probs = softmax_rows(&logits);
    for row in probs.data().chunks(10) {
        assert!(row.iter().all(|&p| p >= 0.0));
        assert!((row.iter().map(|&p| p as f64).sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn zero_dlogits_give_zero_input_gradient() {
    let model = init_random(TINY_CONV, 1).unwrap();
    let x = random_input(model.input_shape(), &mut ChaCha8Rng::seed_from_u64(5));
    let (_, trace) = forward(&model, &x).unwrap();
    let dx = backward_to_input(&model, &trace, &Tensor::zeros(vec![10])).unwrap();
    assert_eq!(dx.shape(), &[12, 12, 3]);
    assert!(dx.data().iter().all(|&v| v == 0.0));
}

#[test]
fn dense_backward_is_the_adjoint() {
    // Small integers keep every product and sum exact in f32.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = Tensor::from_fn(vec![10, 12], |_| rng.random_range(-4i32..=4) as f32);
    let layers = vec![
        Layer::new(LayerSpec::Flatten, None).unwrap(),
        Layer::new(LayerSpec::dense(12, 10), Some((a.clone(), Tensor::zeros(vec![10])))).unwrap(),
    ];
    let model = HostModel::new("lin", [2, 2, 3], layers, Provenance::Random).unwrap();
    let x = random_input([2, 2, 3], &mut rng);
    let g = Tensor::from_fn(vec![10], |_| rng.random_range(-3i32..=3) as f32);
    let (_, trace) = forward(&model, &x).unwrap();
    let dx = backward_to_input(&model, &trace, &g).unwrap();
    for i in 0..12 {
        let expected: f32 = (0..10).map(|o| a.data()[o * 12 + i] * g.data()[o]).sum();
        assert_eq!(dx.data()[i], expected);
    }
}

/// Central differences of `sum(logits * g)` against the analytic input
/// gradient, skipping coordinates whose perturbation crosses a kink.
fn input_fd_check(model: &HostModel<f64>, seed: u64, coordinates: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::<f64>::from_fn(model.input_shape().to_vec(), |_| rng.random_range(-1.0..1.0));
    let g = Tensor::<f64>::from_fn(vec![model.num_labels()], |_| rng.random_range(-1.0..1.0));
    let (_, trace) = forward(model, &x).unwrap();
    let base = trace.activation_pattern(model);
    let dx = backward_to_input(model, &trace, &g).unwrap();
    let h = 1e-3;
    let eval = |xp: &Tensor<f64>| {
        let (logits, trace) = forward(model, xp).unwrap();
        let v: f64 = logits.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        (v, trace.activation_pattern(model))
    };
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut tried = 0;
    while checked < coordinates {
        tried += 1;
        assert!(tried < 20 * coordinates, "too many kinks");
        let c = rng.random_range(0..x.len());
        let mut xp = x.clone();
        xp.data_mut()[c] += h;
        let mut xm = x.clone();
        xm.data_mut()[c] -= h;
        let ((fp, pp), (fm, pm)) = (eval(&xp), eval(&xm));
        if pp != base || pm != base {
            continue;
        }
        worst = worst.max(rel(dx.data()[c], (fp - fm) / (2.0 * h)));
        checked += 1;
    }
    worst
}

#[test]
fn input_gradient_matches_finite_differences() {
    for seed in [11, 22, 33] {
        let model: HostModel<f64> = init_random(TINY_CONV, seed).unwrap().cast();
        let worst = input_fd_check(&model, seed, 100);
        assert!(worst < 1e-4, "seed {seed}: {worst}");
    }
}

#[test]
fn strided_conv_gradient_matches_finite_differences() {
    let model: HostModel<f64> = seeded_model(
        [9, 9, 3],
        vec![
            LayerSpec::Conv2d {
                in_channels: 3,
                out_channels: 4,
                kernel: 3,
                stride: 2,
                padding: 1,
            },
            LayerSpec::Relu,
            LayerSpec::Maxpool { size: 2, stride: 1 },
            LayerSpec::Flatten,
            LayerSpec::dense(4 * 4 * 4, 10),
        ],
        12,
    )
    .cast();
    assert!(input_fd_check(&model, 7, 100) < 1e-4);
}

#[test]
fn maxpool_tie_routes_gradient_to_first_maximum() {
    let layers = vec![
        Layer::new(LayerSpec::maxpool2(), None).unwrap(),
        Layer::new(LayerSpec::Flatten, None).unwrap(),
        Layer::new(
            LayerSpec::dense(3, 10),
            Some((Tensor::full(vec![10, 3], 1.0), Tensor::zeros(vec![10]))),
        )
        .unwrap(),
    ];
    let model = HostModel::new("pool", [2, 2, 3], layers, Provenance::Random).unwrap();
    // Channel 0: all four equal. Channel 1: tie between (0,1) and (1,0).
    // Channel 2: unique maximum at (1,1).
    let x = Tensor::new(
        vec![2, 2, 3],
        vec![0.5, 0.0, 0.1, 0.5, 0.7, 0.2, 0.5, 0.7, 0.3, 0.5, 0.1, 0.9],
    )
    .unwrap();
    let (_, trace) = forward(&model, &x).unwrap();
    let dx = backward_to_input(&model, &trace, &Tensor::full(vec![10], 0.1)).unwrap();
    let d = dx.data();
    let at = |y: usize, xx: usize, c: usize| -> f32 { d[(y * 2 + xx) * 3 + c] };
    assert!((at(0, 0, 0) - 1.0).abs() < 1e-6);
    assert_eq!([at(0, 1, 0), at(1, 0, 0), at(1, 1, 0)], [0.0; 3]);
    assert!((at(0, 1, 1) - 1.0).abs() < 1e-6);
    assert_eq!([at(0, 0, 1), at(1, 0, 1), at(1, 1, 1)], [0.0; 3]);
    assert!((at(1, 1, 2) - 1.0).abs() < 1e-6);
}

#[test]
fn runtime_shapes_follow_shape_algebra() {
    for arch in [DESK_CONV, TINY_CONV] {
        let model = init_random(arch, 0).unwrap();
        let mut shape = vec![2];
        shape.extend(model.input_shape());
        let x = Tensor::from_fn(shape, |i| ((i % 13) as f32 - 6.0) / 6.0);
        let (logits, trace) = forward_batch(&model, &x).unwrap();
        let shapes = model.activation_shapes();
        assert_eq!(shapes.len(), model.layers().len() + 1);
        for (i, s) in shapes.iter().enumerate() {
            assert_eq!(
                trace.activation(i).len(),
                2 * s.iter().product::<usize>(),
                "{arch} layer {i}"
            );
        }
        assert_eq!(logits.shape(), &[2, model.num_labels()]);
    }
}

#[test]
fn forward_is_bitwise_deterministic() {
    let a = init_random(DESK_CONV, 3).unwrap();
    let b = init_random(DESK_CONV, 3).unwrap();
    assert_eq!(a, b);
    let x = random_input(a.input_shape(), &mut ChaCha8Rng::seed_from_u64(9));
    let (la, _) = forward(&a, &x).unwrap();
    let (lb, _) = forward(&b, &x).unwrap();
    let (lc, _) = forward(&a, &x).unwrap();
    assert_eq!(la.data(), lb.data());
    assert_eq!(la.data(), lc.data());
}

#[test]
fn batched_and_single_forward_agree() {
    let model = init_random(TINY_CONV, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let xs: Vec<Tensor> = (0..3).map(|_| random_input(model.input_shape(), &mut rng)).collect();
    let mut data = Vec::new();
    for x in &xs {
        data.extend_from_slice(x.data());
    }
    let (batched, _) = forward_batch(&model, &Tensor::new(vec![3, 12, 12, 3], data).unwrap()).unwrap();
    for (i, x) in xs.iter().enumerate() {
        let (single, _) = forward(&model, x).unwrap();
        for (a, b) in single.data().iter().zip(batched.outer(i)) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
        }
    }
}

#[test]
fn wrong_input_shape_names_the_layer() {
    let model = init_random(TINY_CONV, 0).unwrap();
    let err = forward(&model, &Tensor::zeros(vec![10, 10, 3])).unwrap_err();
    assert!(
        matches!(
            err,
            Error::LayerShape {
                layer: 0,
                kind: "conv2d",
                ..
            }
        ),
        "{err}"
    );
    assert!(err.to_string().contains("layer 0"));
}

#[test]
fn trace_from_another_model_is_rejected() {
    let a = init_random(TINY_CONV, 0).unwrap();
    let b = init_random(TINY_CONV, 0).unwrap();
    let (_, trace) = forward(&a, &Tensor::zeros(vec![12, 12, 3])).unwrap();
    assert!(matches!(
        backward(&b, &trace, &Tensor::zeros(vec![10]), false),
        Err(Error::StaleTrace { .. })
    ));
}

#[test]
fn model_container_round_trips_bit_exactly() {
    let mut model = init_random(DESK_CONV, 21).unwrap();
    model.metadata.held_out_accuracy = Some(0.625);
    let bytes = encode_model(&model).unwrap();
    assert_eq!(&bytes[..4], b"ARPM");
    let back = decode_model(&bytes).unwrap();
    assert_eq!(back, model);
    for (p, q) in model.parameters().zip(back.parameters()) {
        let pb: Vec<u32> = p.data().iter().map(|v| v.to_bits()).collect();
        let qb: Vec<u32> = q.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(pb, qb);
    }
    assert_eq!(encode_model(&back).unwrap(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.arpm");
    save_model(&model, &path).unwrap();
    assert_eq!(load_model(&path).unwrap(), model);
}

#[test]
fn damaged_model_containers_are_rejected() {
    let bytes = encode_model(&init_random(TINY_CONV, 1).unwrap()).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_model(&bad), Err(Error::BadMagic { .. })));
    assert!(decode_model(&bytes[..bytes.len() - 4]).is_err());
    let mut versioned = bytes.clone();
    versioned[4] = 99;
    assert!(matches!(decode_model(&versioned), Err(Error::Version { .. })));
}
