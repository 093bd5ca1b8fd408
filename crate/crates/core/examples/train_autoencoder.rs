//! Trains the source autoencoder on a simulated unit and prints the loss
//! curve and the per-channel reconstruction error on held-out rows.
//!
//! cargo run --release --example train_autoencoder

use ndarray::Axis;
use taad::config::RunConfig;
use taad::pipeline::{prepare, train_source};
use taad::simulator::{default_fleet, generate_fleet};

fn main() -> taad::Result<()> {
    let cfg = RunConfig::default().resolved();
    let (manifest, units) = generate_fleet(&default_fleet(cfg.seed))?;
    let unit = manifest.source()?;
    let data = &units[0].data;

    let (ckpt, log) = train_source(data, unit, &cfg)?;
    for e in &log.epochs {
        println!(
            "epoch {:>3}  train {:.3e}  val {:.3e}",
            e.epoch, e.train_loss, e.val_loss
        );
    }
    println!("kept epoch {}", log.best_epoch);

    let p = prepare(data, &unit.split, &ckpt.scaler)?;
    let rec = ckpt.ae.reconstruct_eval(p.validation.view())?;
    let err = (&p.validation - &rec)
        .mapv(f64::abs)
        .mean_axis(Axis(0))
        .expect("rows");
    for (name, e) in data.schema.model_columns().iter().zip(err.iter()) {
        println!("{name:<32} {e:.4}");
    }
    Ok(())
}
