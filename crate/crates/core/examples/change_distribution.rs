//! How much usage changes from one sampling period to the next, and how the
//! distribution widens as the period grows.
//!
//! `cargo run --example change_distribution -- [trace_dir]`

use std::path::PathBuf;

use clustertrace::ingest::{BundlePaths, Diagnostics, Layouts};
use clustertrace::model::MICROS_PER_SECOND;
use clustertrace::utilization::{change_distribution, ChangeConfig, Pooling};
use clustertrace::{Resource, TraceBundle};

fn main() -> clustertrace::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/sample"));
    let bundle = TraceBundle::load(&BundlePaths::from_dir(&dir)?, &Layouts::default(), &mut Diagnostics::default())?;

    println!("{:>8} {:>8} {:>8} {:>8} {:>8}", "period", "pooling", "q50", "q90", "q99");
    for period_s in [300, 900, 3600] {
        for pooling in [Pooling::Machine, Pooling::Task] {
            let config = ChangeConfig {
                period: period_s * MICROS_PER_SECOND,
                pooling,
                // skip periods where tasks start or stop
                exclude_churn: true,
                ..ChangeConfig::default()
            };
            let d = change_distribution(&bundle.usage, Resource::Cpu, &config)?;
            println!(
                "{:>7}s {:>8} {:>8.3} {:>8.3} {:>8.3}",
                period_s,
                format!("{pooling:?}").to_lowercase(),
                d.quantile(0.5),
                d.quantile(0.9),
                d.quantile(0.99)
            );
        }
    }
    Ok(())
}
