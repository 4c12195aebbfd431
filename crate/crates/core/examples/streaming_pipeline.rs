//! The bounded-memory path the CLI uses on large traces: stream rows from
//! disk, sort through spill files, then scan or group per task.
//!
//! `cargo run --example streaming_pipeline -- [trace_dir] [memory_budget]`

use std::path::PathBuf;

use clustertrace::aggregate::Scanner;
use clustertrace::ingest::{stream_task_events, BundlePaths, Diagnostics, ExternalSorter, KeyGrouper, TaskEventLayout};
use clustertrace::Lifecycle;

fn main() -> clustertrace::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/sample"));
    let budget: usize = args.next().and_then(|b| b.parse().ok()).unwrap_or(200);
    let paths = BundlePaths::from_dir(&dir)?;
    let layout = TaskEventLayout::default();

    let mut diagnostics = Diagnostics::default();
    let mut sorter = ExternalSorter::new(budget);
    for event in stream_task_events(&paths.task_events, &layout, &mut diagnostics) {
        sorter.push(event?)?;
    }
    println!("sorted with {} spilled runs", sorter.spilled_runs());

    // one pass for the time-ordered statistics ...
    let mut scanner = Scanner::new();
    let mut grouper = KeyGrouper::new(budget, 16);
    for event in sorter.finish()? {
        let event = event?;
        scanner.push(&event)?;
        grouper.push(event)?;
    }
    let scan = scanner.finish();
    println!("{} events, {} tasks completed, {} violations", scan.events, scan.completed_tasks, scan.violations);

    // ... and a per-task pass over the grouped events
    let spilled = grouper.is_spilled();
    let mut invalid = 0;
    let mut tasks = 0;
    for group in grouper.finish()? {
        let (key, events) = group?;
        tasks += 1;
        if !Lifecycle::new(key, events).is_valid() {
            invalid += 1;
        }
    }
    println!("{tasks} tasks grouped (spilled: {spilled}), {invalid} with violations");
    println!("{} parse errors", diagnostics.len());
    Ok(())
}
