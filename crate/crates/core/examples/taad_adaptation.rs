//! Adapts the source model to one cross-station unit with the control-driven
//! correction and compares it with the unadapted model on that unit.
//!
//! cargo run --release --example taad_adaptation -- A-A

use taad::adaptation::Variant;
use taad::config::RunConfig;
use taad::pipeline::{adapt_variant, detect_unit, train_source};
use taad::simulator::{default_fleet, generate_fleet};

fn main() -> taad::Result<()> {
    let id = std::env::args().nth(1).unwrap_or_else(|| "A-A".into());
    let cfg = RunConfig::default().resolved();
    let (manifest, units) = generate_fleet(&default_fleet(cfg.seed))?;
    let data: Vec<_> = units.into_iter().map(|u| u.data).collect();
    let su = manifest.source()?;
    let (source, _) = train_source(&data[0], su, &cfg)?;

    let i = manifest
        .units
        .iter()
        .position(|u| u.id == id)
        .ok_or_else(|| taad::Error::config(format!("no unit `{id}` in the default fleet")))?;
    let tu = &manifest.units[i];
    for v in [Variant::Baseline, Variant::Taad] {
        let (ckpt, log) = adapt_variant(&source, v, &data[i], tu, None, &cfg)?;
        if let Some(log) = log {
            println!(
                "{v}: correction trained for {} epochs, kept {}",
                log.epochs.len(),
                log.best_epoch
            );
        }
        let (series, base) = detect_unit(&ckpt, &data[i], tu, &cfg)?;
        let flagged: Vec<String> = series
            .days
            .iter()
            .filter(|d| d.flagged)
            .map(|d| d.date.to_string())
            .collect();
        println!(
            "{v}: threshold {:.3}, {} of {} days flagged",
            base.threshold()?,
            flagged.len(),
            series.days.len()
        );
        if flagged.len() <= 30 {
            println!("  {}", flagged.join(" "));
        }
    }
    for f in &tu.faults {
        println!("fault {} reported {}", f.kind, f.reported().date_naive());
    }
    Ok(())
}
