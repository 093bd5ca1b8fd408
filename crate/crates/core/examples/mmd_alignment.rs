//! Fine-tunes the source autoencoder with the latent discrepancy penalty and
//! shows how far the source and target codes move together.
//!
//! cargo run --release --example mmd_alignment

use taad::adaptation::{latent_mmd, mmd_finetune, resolve_bandwidth};
use taad::config::RunConfig;
use taad::pipeline::{prepare, train_source};
use taad::simulator::{default_fleet, generate_fleet};

fn main() -> taad::Result<()> {
    let cfg = RunConfig::default().resolved();
    let (manifest, units) = generate_fleet(&default_fleet(cfg.seed))?;
    let su = manifest.source()?;
    let (source, _) = train_source(&units[0].data, su, &cfg)?;
    let sp = prepare(&units[0].data, &su.split, &source.scaler)?;

    for (i, tu) in manifest.units.iter().enumerate().skip(1) {
        let tp = prepare(&units[i].data, &tu.split, &source.scaler)?;
        let sigma = resolve_bandwidth(&source.ae, sp.train.view(), tp.train.view(), &cfg.mmd, 1)?;
        let before = latent_mmd(
            &source.ae,
            sp.train.view(),
            tp.train.view(),
            sigma,
            &cfg.mmd,
            2,
        )?;
        let out = mmd_finetune(
            source.ae.clone(),
            sp.train.view(),
            tp.train.view(),
            tp.validation.view(),
            &cfg.mmd,
            &cfg.adapt,
        )?;
        let after = latent_mmd(
            &out.ae,
            sp.train.view(),
            tp.train.view(),
            out.sigma,
            &cfg.mmd,
            2,
        )?;
        println!(
            "{:<4} sigma {:.3}  latent MMD^2 {:.4} -> {:.4}  ({} epochs)",
            tu.id,
            sigma,
            before,
            after,
            out.log.epochs.len()
        );
    }
    Ok(())
}
