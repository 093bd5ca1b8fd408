#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use taad::data::TimeSeriesDataset;
use taad::nn::{block, BnMode, Layer, LayerSpec, Network};
use taad::simulator::{generate_fleet, FleetConfig, FleetManifest};

pub fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// A random stack of 2 or 3 blocks, the first with batch normalization,
/// of at most 200 parameters.
pub fn random_network(seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let depth = rng.random_range(2..=3);
        let mut widths = vec![rng.random_range(2..=5)];
        for _ in 0..depth {
            widths.push(rng.random_range(2..=6));
        }
        let mut specs: Vec<LayerSpec> = Vec::new();
        for i in 0..depth {
            let last = i + 1 == depth;
            let bn = i == 0 || rng.random_bool(0.5);
            specs.extend(block(widths[i], widths[i + 1], bn && !last, !last));
        }
        let net = Network::new(specs, rng.random()).expect("valid chain");
        if net.param_count() <= 200 {
            return net;
        }
    }
}

pub struct GradCheck {
    /// Largest relative error over the checked entries.
    pub worst: f64,
    pub checked: usize,
    /// Entries whose step flips a ReLU, where the difference quotient is
    /// not a derivative.
    pub skipped: usize,
}

/// Central-difference check (step h = 1e-4) of `d sum(out * g) / d (params, input)`
/// with batch normalization in training mode.
///
/// Parameters are jittered first: freshly initialized biases are exactly zero,
/// which puts rows with an all-zero input right on a ReLU kink.
///
/// A batch where more than a tenth of the entries straddle a kink sits on one
/// and is redrawn.
pub fn gradient_check(net: &mut Network, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in net.params_mut() {
        for v in p.iter_mut() {
            *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    for _ in 0..50 {
        let res = check_batch(net, &mut rng);
        if res.skipped * 10 <= res.checked {
            return res;
        }
    }
    panic!("no batch away from ReLU kinks in 50 draws");
}

fn check_batch(net: &mut Network, rng: &mut ChaCha8Rng) -> GradCheck {
    let x = normal_matrix(8, net.input_dim(), rng);
    let g = normal_matrix(8, net.output_dim(), rng);
    let probe = |net: &Network, x: &Array2<f64>| -> (f64, Vec<bool>) {
        let (out, pattern) = relu_pattern(net, x);
        ((&out * &g).sum(), pattern)
    };

    let (_, trace) = net
        .forward_traced(x.view(), BnMode::Train)
        .expect("forward");
    let mut tape = net.zero_tape();
    let dx = net
        .backward_traced(&trace, &g, &mut tape)
        .expect("backward");
    let (_, base) = probe(net, &x);

    let eps = 1e-4;
    // the floor keeps roundoff on structurally zero gradients (a bias feeding a
    // batchnorm) from counting as a relative error
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-4);
    let mut res = GradCheck {
        worst: 0.0,
        checked: 0,
        skipped: 0,
    };
    // fourth-order central stencil: with the plain two-point quotient a
    // near-degenerate batchnorm column leaves O(h^2) truncation error above 1e-4
    let mut record = |analytic: f64, probes: [(f64, Vec<bool>); 4]| {
        if probes.iter().any(|(_, p)| *p != base) {
            res.skipped += 1;
            return;
        }
        let [p1, m1, p2, m2] = probes.map(|(v, _)| v);
        let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps);
        res.checked += 1;
        res.worst = res.worst.max(rel(analytic, numeric));
    };
    const STEPS: [f64; 4] = [1.0, -1.0, 2.0, -2.0];
    for (t, buf) in tape.buffers.iter().enumerate() {
        for (i, &analytic) in buf.iter().enumerate() {
            let orig = net.params()[t][i];
            let probes = STEPS.map(|k| {
                net.params_mut()[t][i] = orig + k * eps;
                probe(net, &x)
            });
            net.params_mut()[t][i] = orig;
            record(analytic, probes);
        }
    }
    for idx in ndarray::indices_of(&x) {
        let probes = STEPS.map(|k| {
            let mut xp = x.clone();
            xp[idx] += k * eps;
            probe(net, &xp)
        });
        record(dx[idx], probes);
    }
    res
}

/// Training-mode output and the on/off state of every ReLU unit, computed
/// layer by layer on a copy so the network's running statistics stay put.
fn relu_pattern(net: &Network, x: &Array2<f64>) -> (Array2<f64>, Vec<bool>) {
    let mut a = x.clone();
    let mut pattern = Vec::new();
    for layer in net.layers() {
        a = match layer {
            Layer::Dense(d) => d.forward(a.view()).expect("dense"),
            Layer::BatchNorm(bn) => bn.clone().forward(a.view(), BnMode::Train).expect("bn"),
            Layer::Relu => {
                pattern.extend(a.iter().map(|v| *v > 0.0));
                a.mapv(|v| v.max(0.0))
            }
        };
    }
    (a, pattern)
}

/// Simulated datasets in manifest order.
pub fn simulate(cfg: &FleetConfig) -> (FleetManifest, Vec<TimeSeriesDataset>) {
    let (m, units) = generate_fleet(cfg).expect("fleet simulates");
    (m, units.into_iter().map(|u| u.data).collect())
}
