//! Cluster utilization split by priority tier, against allocation and
//! capacity.
//!
//! `cargo run --example tier_utilization -- [trace_dir] [period_s]`

use std::path::PathBuf;

use clustertrace::ingest::{BundlePaths, Diagnostics, Layouts};
use clustertrace::model::{TierBands, MICROS_PER_SECOND};
use clustertrace::utilization::{task_attributes, UsageView};
use clustertrace::{Resource, TraceBundle};

fn main() -> clustertrace::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/sample"));
    let period_s: u64 = args.next().and_then(|p| p.parse().ok()).unwrap_or(300);
    let bundle = TraceBundle::load(&BundlePaths::from_dir(&dir)?, &Layouts::default(), &mut Diagnostics::default())?;

    let attributes = task_attributes(&bundle.task_events);
    let view = UsageView {
        usage: &bundle.usage,
        attributes: &attributes,
        bands: TierBands::default(),
        capacity: (bundle.machine_capacity.cpu, bundle.machine_capacity.memory),
    };
    for resource in [Resource::Cpu, Resource::Memory] {
        let b = view.tier_breakdown(resource, period_s * MICROS_PER_SECOND)?;
        let total = b.cluster.integral();
        println!("{} (capacity {:.2}):", resource.name(), b.cluster.capacity);
        for tier in &b.tiers {
            let share = if total > 0.0 { tier.integral() / total } else { 0.0 };
            println!("  {:>14?} {:5.1}% of usage", tier.scope, 100.0 * share);
        }
        let peak = b.cluster.points.iter().map(|p| p.value).fold(0.0, f64::max);
        println!("  peak cluster usage {peak:.3}");
    }
    Ok(())
}
