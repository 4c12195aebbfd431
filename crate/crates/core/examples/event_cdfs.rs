//! Event CDFs over trace time, their weighted forms, and the pending and
//! running task counts.
//!
//! `cargo run --example event_cdfs -- [trace_dir]`

use std::path::PathBuf;

use clustertrace::aggregate::{event_cdfs, queue_series, running_series, scan, weighted_cdfs, Cdf};
use clustertrace::ingest::{BundlePaths, Diagnostics, Layouts};
use clustertrace::model::MICROS_PER_SECOND;
use clustertrace::TraceBundle;

fn hours(t: u64) -> f64 {
    t as f64 / (3600 * MICROS_PER_SECOND) as f64
}

fn describe(name: &str, cdf: &Cdf) {
    let half = cdf.points.iter().find(|p| p.f >= 0.5);
    let end = cdf.points.last().map_or(0.0, |p| p.f);
    match half {
        Some(p) => println!("{name:>15}: {:>6} events, half by {:.2} h, endpoint {end:.3}", cdf.total, hours(p.x)),
        None => println!("{name:>15}: no events"),
    }
}

fn main() -> clustertrace::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/sample"));
    let bundle = TraceBundle::load(&BundlePaths::from_dir(&dir)?, &Layouts::default(), &mut Diagnostics::default())?;

    let s = scan(&bundle.task_events)?;
    let cdfs = event_cdfs(&s.timeline);
    describe("new submission", &cdfs.new_submission);
    describe("submission", &cdfs.submission);
    describe("scheduling", &cdfs.scheduling);
    describe("completion", &cdfs.completion);

    let w = weighted_cdfs(&cdfs)?;
    println!(
        "weights against new submissions: submission {:.3}, scheduling {:.3}, completion {:.3}",
        w.submission_weight, w.scheduling_weight, w.completion_weight
    );

    let queue = queue_series(&s.timeline);
    let running = running_series(&s.timeline);
    let peak = |pts: &[clustertrace::aggregate::SeriesPoint]| pts.iter().map(|p| p.value).fold(0.0, f64::max);
    println!(
        "pending peak {} (final {}), running peak {} (final {})",
        peak(&queue.points),
        queue.last_value().unwrap_or(0.0),
        peak(&running.points),
        running.last_value().unwrap_or(0.0)
    );
    Ok(())
}
