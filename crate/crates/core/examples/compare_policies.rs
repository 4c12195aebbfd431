//! Replay the trace under several reservation policies and compare the
//! capacity each reclaims against the violations it causes.
//!
//! `cargo run --example compare_policies -- [trace_dir] [policy.toml ...]`

use std::path::PathBuf;

use clustertrace::ingest::{BundlePaths, Diagnostics, Layouts};
use clustertrace::sim::{compare_policies, Policy, SimOptions};
use clustertrace::TraceBundle;

fn main() -> clustertrace::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/sample"));
    let mut policies = Vec::new();
    for path in args {
        let text = std::fs::read_to_string(&path).map_err(|e| clustertrace::Error::io(&path, e))?;
        policies.extend(Policy::list_from_toml(&text)?);
    }
    if policies.is_empty() {
        policies = vec![
            Policy::request_static(),
            Policy::borg_decay(),
            Policy::change_quantile(0.9).with_period(900.0),
            Policy::change_quantile(0.9),
            Policy::change_quantile(0.99),
        ];
    }
    let bundle = TraceBundle::load(&BundlePaths::from_dir(&dir)?, &Layouts::default(), &mut Diagnostics::default())?;

    for r in compare_policies(&bundle, &policies, SimOptions::default())? {
        println!("{}", r.policy);
        println!(
            "  reclaimed cpu {:.0} / memory {:.0}; violation rate cpu {:.3} / memory {:.3}; evictions {}",
            r.reclaimed.cpu, r.reclaimed.memory, r.violation_rate.cpu, r.violation_rate.memory, r.evictions_triggered
        );
        for w in &r.warnings {
            println!("  warning: {w}");
        }
    }
    Ok(())
}
