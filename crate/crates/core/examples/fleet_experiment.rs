//! Runs the whole comparison in memory on freshly simulated fleets and prints
//! the report for each seed.
//!
//! cargo run --release --example fleet_experiment -- 1 2 3

use std::time::Instant;

use taad::config::RunConfig;
use taad::pipeline::run_experiment;
use taad::simulator::{default_fleet, generate_fleet};

fn main() -> taad::Result<()> {
    env_logger::init();
    let seeds: Vec<u64> = std::env::args()
        .skip(1)
        .filter_map(|s| s.parse().ok())
        .collect();
    let seeds = if seeds.is_empty() { vec![7] } else { seeds };
    for seed in seeds {
        let t0 = Instant::now();
        let cfg = RunConfig {
            seed,
            ..RunConfig::default()
        }
        .resolved();
        let (manifest, units) = generate_fleet(&default_fleet(seed))?;
        let data: Vec<_> = units.into_iter().map(|u| u.data).collect();
        let exp = run_experiment(&cfg, &manifest, &data)?;
        println!(
            "seed {seed}  ({:.1}s, source epochs {})",
            t0.elapsed().as_secs_f64(),
            exp.source_log.epochs.len()
        );
        print!("{}", exp.report.render_text());
    }
    Ok(())
}
