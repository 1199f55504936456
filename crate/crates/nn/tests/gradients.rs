//! Reverse-mode gradients against central finite differences.

use ptnn::{backward, loss, LayerSpec, LossConfig, ParameterSet, Sequential, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn sample_loss(net: &Sequential, params: &ParameterSet, x: &Tensor, label: usize, cfg: &LossConfig) -> f64 {
    let probs = net.forward(params, x).unwrap();
    loss(probs.values(), label, params, cfg).unwrap()
}

/// Max relative error between analytic and central-difference gradients over
/// every scalar of every trainable tensor.
fn check(net: &Sequential, input_shape: Vec<usize>, seed: u64, lambda: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParameterSet::new();
    net.init_params(&mut params, &mut rng).unwrap();
    // non-zero biases so every path is exercised
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for n in &names {
        for v in params.get_mut(n).unwrap().tensor.values_mut() {
            if *v == 0.0 {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }
    let n: usize = input_shape.iter().product();
    let x = Tensor::new(input_shape, (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
    let label = rng.random_range(0..3);
    let cfg = LossConfig::new(lambda, 3).unwrap();
    let (_, grads) = backward(net, &params, &x, label, &cfg).unwrap();

    let mut worst = 0.0f64;
    for name in &names {
        let len = params.tensor(name).unwrap().len();
        for i in 0..len {
            let orig = params.tensor(name).unwrap().values()[i];
            params.get_mut(name).unwrap().tensor.values_mut()[i] = orig + STEP;
            let up = sample_loss(net, &params, &x, label, &cfg);
            params.get_mut(name).unwrap().tensor.values_mut()[i] = orig - STEP;
            let down = sample_loss(net, &params, &x, label, &cfg);
            params.get_mut(name).unwrap().tensor.values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let analytic = grads.get(name).unwrap()[i];
            let e = rel_err(analytic, numeric);
            // relu kinks make tiny absolute values unreliable in both directions
            if e > worst && (analytic - numeric).abs() > 1e-9 {
                worst = e;
            }
        }
    }
    worst
}

#[test]
fn dense_tanh_network_matches_finite_differences() {
    let net = Sequential::new(
        "m",
        vec![
            LayerSpec::Dense { inputs: 6, outputs: 5 },
            LayerSpec::Tanh,
            LayerSpec::Dense { inputs: 5, outputs: 3 },
            LayerSpec::Softmax,
        ],
    )
    .unwrap();
    for seed in 0..5 {
        let e = check(&net, vec![6], seed, 0.01);
        assert!(e < 1e-4, "seed {seed}: rel err {e}");
    }
}

#[test]
fn conv_relu_flatten_network_matches_finite_differences() {
    let net = Sequential::new(
        "c",
        vec![
            LayerSpec::Conv1d {
                in_channels: 2,
                out_channels: 3,
                kernel: 3,
                stride: 2,
            },
            LayerSpec::Relu,
            LayerSpec::Conv1d {
                in_channels: 3,
                out_channels: 2,
                kernel: 2,
                stride: 1,
            },
            LayerSpec::Tanh,
            LayerSpec::Flatten,
            LayerSpec::Dense { inputs: 6, outputs: 3 },
            LayerSpec::Softmax,
        ],
    )
    .unwrap();
    for seed in 10..15 {
        let e = check(&net, vec![2, 9], seed, 0.0);
        assert!(e < 1e-4, "seed {seed}: rel err {e}");
    }
}

#[test]
fn frozen_tensor_receives_zero_gradient() {
    let net = Sequential::new(
        "m",
        vec![
            LayerSpec::Dense { inputs: 3, outputs: 4 },
            LayerSpec::Relu,
            LayerSpec::Dense { inputs: 4, outputs: 3 },
            LayerSpec::Softmax,
        ],
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut params = ParameterSet::new();
    net.init_params(&mut params, &mut rng).unwrap();
    params.set_trainable("m.0.weight", false).unwrap();
    let cfg = LossConfig::new(0.5, 3).unwrap();
    let (_, grads) = backward(&net, &params, &Tensor::vector(vec![0.4, -1.0, 2.0]), 1, &cfg).unwrap();
    assert!(grads.get("m.0.weight").unwrap().iter().all(|g| *g == 0.0));
    assert!(grads.get("m.2.weight").unwrap().iter().any(|g| *g != 0.0));
}

#[test]
fn duplicated_batch_doubles_summed_gradient() {
    let net = Sequential::new(
        "m",
        vec![
            LayerSpec::Dense { inputs: 2, outputs: 3 },
            LayerSpec::Softmax,
        ],
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut params = ParameterSet::new();
    net.init_params(&mut params, &mut rng).unwrap();
    let cfg = LossConfig::new(0.0, 3).unwrap();
    let batch = [(Tensor::vector(vec![0.1, 0.9]), 0), (Tensor::vector(vec![-1.0, 0.3]), 2)];

    let mut once = params.zero_gradients();
    for (x, y) in &batch {
        once.add_assign(&backward(&net, &params, x, *y, &cfg).unwrap().1).unwrap();
    }
    let mut twice = params.zero_gradients();
    for (x, y) in batch.iter().chain(batch.iter()) {
        twice.add_assign(&backward(&net, &params, x, *y, &cfg).unwrap().1).unwrap();
    }
    for (name, g1) in once.iter() {
        for (a, b) in g1.iter().zip(twice.get(name).unwrap()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn forward_is_bit_identical_across_calls() {
    let net = Sequential::new(
        "m",
        vec![
            LayerSpec::Conv1d {
                in_channels: 1,
                out_channels: 2,
                kernel: 2,
                stride: 1,
            },
            LayerSpec::Flatten,
            LayerSpec::Dense { inputs: 8, outputs: 3 },
            LayerSpec::Softmax,
        ],
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut params = ParameterSet::new();
    net.init_params(&mut params, &mut rng).unwrap();
    let x = Tensor::new(vec![1, 5], vec![0.3, 0.1, -0.2, 0.8, 1.0]).unwrap();
    let a = net.forward(&params, &x).unwrap();
    let b = net.forward(&params, &x).unwrap();
    assert_eq!(
        a.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}
