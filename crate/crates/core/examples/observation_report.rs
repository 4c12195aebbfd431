//! The summary statistics report: curve linearity, resubmission lumps,
//! submission/scheduling gaps, queue trends and duration statistics.
//!
//! `cargo run --example observation_report -- [trace_dir]`

use std::path::PathBuf;

use clustertrace::aggregate::{observation_report, scan, ReportConfig};
use clustertrace::ingest::{BundlePaths, Diagnostics, Layouts};
use clustertrace::model::MICROS_PER_SECOND;
use clustertrace::TraceBundle;

fn main() -> clustertrace::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/sample"));
    let bundle = TraceBundle::load(&BundlePaths::from_dir(&dir)?, &Layouts::default(), &mut Diagnostics::default())?;

    let report = observation_report(&scan(&bundle.task_events)?, &ReportConfig::default())?;
    println!("new-submission CDF R^2: {:?}", report.obs1.r2);
    println!("completion CDF R^2:     {:?}", report.obs2.r2);
    for lump in &report.obs3.lumps {
        println!(
            "resubmission lump centred at {:.2} h, excess share {:.3}",
            lump.center as f64 / (3600 * MICROS_PER_SECOND) as f64,
            lump.excess
        );
    }
    println!("largest submission/scheduling gap: {:?}", report.obs4.max_gap);
    println!("pending trend per hour: {:?}", report.obs7.terminal_slope_per_hour);
    println!("running trend per hour: {:?}", report.obs8.terminal_slope_per_hour);
    let d = &report.obs10;
    println!(
        "{} of {} tasks completed; finished spans under 30 min: {:?}",
        d.completed_tasks, d.distinct_tasks, d.fraction_under_30_min
    );
    println!("{}", serde_json::to_string_pretty(&report.meta)?);
    Ok(())
}
