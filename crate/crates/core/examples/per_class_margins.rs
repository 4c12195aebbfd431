//! Separate usage-change distributions for short-lived and long-running
//! tasks, and a margin policy that uses one margin per class.
//!
//! `cargo run --example per_class_margins -- [trace_dir] [threshold_s]`

use std::path::PathBuf;

use clustertrace::ingest::{BundlePaths, Diagnostics, Layouts};
use clustertrace::model::MICROS_PER_SECOND;
use clustertrace::sim::{per_class_distributions, simulate, ClassDistribution, MarginSource, Policy, PolicyVariant};
use clustertrace::utilization::{ChangeConfig, ChangeMode, Pooling};
use clustertrace::{Resource, TraceBundle};

fn show(d: &ClassDistribution) {
    match &d.distribution {
        Some(dist) => println!("  {:?}: {} tasks, q90 change {:.3}", d.class, d.tasks, dist.quantile(0.9)),
        None => println!("  {:?}: {} tasks, too little data", d.class, d.tasks),
    }
}

fn main() -> clustertrace::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/sample"));
    let threshold_s: f64 = args.next().and_then(|t| t.parse().ok()).unwrap_or(1800.0);
    let bundle = TraceBundle::load(&BundlePaths::from_dir(&dir)?, &Layouts::default(), &mut Diagnostics::default())?;

    let config = ChangeConfig {
        pooling: Pooling::Task,
        ..ChangeConfig::default()
    };
    let threshold = (threshold_s * MICROS_PER_SECOND as f64) as u64;
    for resource in [Resource::Cpu, Resource::Memory] {
        let d = per_class_distributions(&bundle, threshold, resource, &config)?;
        println!("{} at a {threshold_s} s threshold:", resource.name());
        show(&d.short_lived);
        show(&d.long_running);
    }

    let per_class = Policy::new(PolicyVariant::ChangeQuantileMargin {
        quantile: 0.9,
        floor_fraction: 0.0,
        source: MarginSource::Measured {
            pooling: Pooling::Task,
            exclude_churn: false,
            mode: ChangeMode::Relative,
            per_class: true,
            class_threshold_s: threshold_s,
        },
    });
    for policy in [Policy::change_quantile(0.9), per_class] {
        let r = simulate(&bundle, &policy)?.report;
        println!(
            "{}\n  reclaimed {:.0}, violation rate cpu {:.3} / memory {:.3}",
            r.policy,
            r.total_reclaimed(),
            r.violation_rate.cpu,
            r.violation_rate.memory
        );
    }
    Ok(())
}
