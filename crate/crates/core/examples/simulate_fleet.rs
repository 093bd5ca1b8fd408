//! Writes the default synthetic fleet to a directory, then reads one unit
//! back through the CSV loader and splits it the way training does.
//!
//! cargo run --release --example simulate_fleet -- /tmp/fleet 7

use std::path::PathBuf;

use taad::data::{make_splits, TimeSeriesDataset};
use taad::simulator::{default_fleet, simulate_fleet};

fn main() -> taad::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "fleet".into()));
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);

    let manifest = simulate_fleet(&default_fleet(seed), &dir)?;
    for u in &manifest.units {
        let faults: Vec<String> = u
            .faults
            .iter()
            .map(|f| format!("{} reported {}", f.kind, f.reported().date_naive()))
            .collect();
        println!(
            "{:<4} {:<14} {:<10} {}",
            u.id,
            u.relation.to_string(),
            u.file,
            faults.join(", ")
        );
    }

    let unit = manifest
        .targets()
        .next()
        .expect("default fleet has targets");
    let raw = TimeSeriesDataset::load_csv(&dir.join(&unit.file), &manifest.schema)?;
    let (clean, dropped) = raw.drop_missing();
    let splits = make_splits(&clean, &unit.split)?;
    println!(
        "\n{}: {} rows, {} dropped for missing values, train {} / validation {} rows",
        unit.id,
        raw.len(),
        dropped,
        splits.train.len(),
        splits.validation.len()
    );
    Ok(())
}
