use erecon_nn::finite_diff::check_network;
use erecon_nn::{Activation, LayerSpec, Mode, OptimizerState, Padding, Sequential, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn check(name: &str, specs: Vec<LayerSpec>, input_shape: &[usize], mode: Mode, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Sequential::<f64>::from_specs(name, &specs, &mut rng).unwrap();
    // Larger weights than the 0.02 init keep the probe loss well conditioned.
    for p in net.params_mut() {
        if p.value.shape().len() > 1 {
            p.value = Tensor::randn(p.value.shape(), 0.5, &mut rng);
        }
    }
    let x = Tensor::randn(input_shape, 1.0, &mut rng);
    let out_shape = {
        let mut probe_net = net.clone();
        probe_net.forward(&x, mode).unwrap().shape().to_vec()
    };
    let probe = Tensor::randn(&out_shape, 1.0, &mut rng);
    let report = check_network(&net, &x, &probe, mode, STEP).unwrap();
    assert!(
        report.max_error() < TOL,
        "{name} {input_shape:?}: {:?}",
        report.entries
    );
}

const SHAPES: [[usize; 4]; 3] = [[2, 2, 5, 5], [3, 3, 4, 6], [2, 1, 8, 8]];

#[test]
fn conv_gradients() {
    for (i, s) in SHAPES.iter().enumerate() {
        for (stride, k) in [(1, 3), (2, 4)] {
            check(
                "conv",
                vec![LayerSpec::Conv {
                    in_depth: s[1],
                    out_depth: 3,
                    kernel: (k, k),
                    stride,
                    padding: Padding::Same,
                }],
                s,
                Mode::Train,
                10 + i as u64,
            );
        }
    }
}

#[test]
fn upsample_conv_gradients() {
    for (i, s) in SHAPES.iter().enumerate() {
        check("up", vec![LayerSpec::upsample_conv(s[1], 2, 4, 2)], s, Mode::Train, 20 + i as u64);
    }
}

#[test]
fn fully_connected_gradients() {
    for (i, s) in [[2, 5], [4, 3], [1, 7]].iter().enumerate() {
        check("fc", vec![LayerSpec::fully_connected(s[1], 4)], s, Mode::Train, 30 + i as u64);
    }
}

#[test]
fn batch_norm_gradients() {
    for (i, s) in SHAPES.iter().enumerate() {
        check("bn", vec![LayerSpec::batch_norm(s[1])], s, Mode::Train, 40 + i as u64);
        check("bn-eval", vec![LayerSpec::batch_norm(s[1])], s, Mode::Eval, 45 + i as u64);
    }
    check("bn-flat", vec![LayerSpec::batch_norm(3)], &[4, 3], Mode::Train, 49);
}

#[test]
fn dropout_gradients() {
    for (i, s) in SHAPES.iter().enumerate() {
        check("drop", vec![LayerSpec::dropout(0.5)], s, Mode::Train, 50 + i as u64);
    }
}

#[test]
fn activation_gradients() {
    for act in [
        Activation::Relu,
        Activation::LeakyRelu(0.2),
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::TanhUnit,
    ] {
        for (i, s) in SHAPES.iter().enumerate() {
            check("act", vec![LayerSpec::Activation(act)], s, Mode::Train, 60 + i as u64);
        }
    }
}

#[test]
fn small_conv_net_gradients() {
    let specs = vec![
        LayerSpec::conv(3, 4, 4, 2),
        LayerSpec::batch_norm(4),
        LayerSpec::Activation(Activation::LeakyRelu(0.2)),
        LayerSpec::upsample_conv(4, 2, 3, 2),
        LayerSpec::dropout(0.5),
        LayerSpec::Activation(Activation::Tanh),
        LayerSpec::Reshape(vec![2 * 8 * 8]),
        LayerSpec::fully_connected(128, 3),
    ];
    check("net", specs, &[2, 3, 8, 8], Mode::Train, 70);
}

#[test]
fn fixed_seed_training_is_bitwise_reproducible() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut net = Sequential::<f64>::from_specs(
            "det",
            &[
                LayerSpec::conv(1, 4, 4, 2),
                LayerSpec::batch_norm(4),
                LayerSpec::Activation(Activation::LeakyRelu(0.2)),
                LayerSpec::dropout(0.5),
                LayerSpec::Reshape(vec![4 * 4 * 4]),
                LayerSpec::fully_connected(64, 1),
            ],
            &mut rng,
        )
        .unwrap();
        let mut opt = OptimizerState::adam(1e-3);
        let x = Tensor::randn(&[4, 1, 8, 8], 1.0, &mut rng);
        for _ in 0..5 {
            net.zero_grad();
            let y = net.forward(&x, Mode::Train).unwrap();
            let g = y.map(|v| 2.0 * v);
            net.backward(&g).unwrap();
            opt.step_params(net.params_mut()).unwrap();
        }
        erecon_nn::weights::encode(&net)
    };
    assert_eq!(run(), run());
}
