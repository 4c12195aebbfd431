//! Rebuild per-task lifecycles, list transition violations and count how
//! tasks left the pending queue and the running set.
//!
//! `cargo run --example validate_lifecycles -- [trace_dir]`

use std::collections::BTreeMap;
use std::path::PathBuf;

use clustertrace::ingest::{BundlePaths, Diagnostics, Layouts};
use clustertrace::lifecycle::{build_lifecycles, classify_terminals};
use clustertrace::TraceBundle;

fn main() -> clustertrace::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/sample"));
    let mut diagnostics = Diagnostics::default();
    let bundle = TraceBundle::load(&BundlePaths::from_dir(&dir)?, &Layouts::default(), &mut diagnostics)?;

    let lifecycles = build_lifecycles(bundle.task_events);
    let mut terminals: BTreeMap<String, usize> = BTreeMap::new();
    let mut violations = 0;
    for life in &lifecycles {
        for v in &life.violations {
            violations += 1;
            if violations <= 5 {
                println!("violation: {:?} event {} at {}: {:?} from {:?}", life.key, v.index, v.time, v.kind, v.from);
            }
        }
        for t in classify_terminals(life).into_iter().flatten() {
            *terminals.entry(t.name().to_string()).or_default() += 1;
        }
    }
    let spans: usize = lifecycles.iter().map(|l| l.spans.len()).sum();
    let live = lifecycles.iter().flat_map(|l| &l.spans).filter(|s| s.live).count();
    println!("{} tasks, {spans} spans ({live} live), {violations} violations, {} parse errors", lifecycles.len(), diagnostics.len());
    for (name, n) in terminals {
        println!("{name:>18} {n}");
    }
    Ok(())
}
