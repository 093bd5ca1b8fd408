//! Fits a small dense + batch-normalization network to a nonlinear target
//! with Adam, then compares the eval-mode output (running statistics) with
//! the adapt-mode output (statistics of the batch itself).
//!
//! cargo run --release --example nn_basics

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taad::nn::{block, mse_grad, mse_loss, AdamConfig, AdamState, BnMode, Network};

fn main() -> taad::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Array2::from_shape_simple_fn((512, 2), || rng.random_range(-1.0..1.0));
    let y = x
        .map_axis(Axis(1), |r| (3.0_f64 * r[0]).sin() * r[1])
        .insert_axis(Axis(1));

    let mut specs = block(2, 16, true, true);
    specs.extend(block(16, 1, false, false));
    let mut net = Network::new(specs, 1)?;
    let mut opt = AdamState::new(
        &net,
        AdamConfig {
            learning_rate: 1e-2,
            ..AdamConfig::default()
        },
    );

    for epoch in 1..=300 {
        let pred = net.forward(x.view(), BnMode::Train)?;
        let tape = net.backward(&mse_grad(pred.view(), y.view())?)?;
        opt.step(&mut net, &tape)?;
        if epoch % 50 == 0 {
            println!(
                "epoch {epoch:>3}  mse {:.5}",
                mse_loss(pred.view(), y.view())?
            );
        }
    }
    let eval = net.forward_eval(x.view())?;
    let adapt = net.clone().forward(x.view(), BnMode::Adapt)?;
    println!(
        "eval mse {:.5}, max |eval - adapt| {:.2e}",
        mse_loss(eval.view(), y.view())?,
        (&eval - &adapt)
            .mapv(f64::abs)
            .fold(0.0_f64, |a, b| a.max(*b))
    );
    Ok(())
}
