//! Generate a synthetic trace from a TOML config and write it as a trace
//! directory.
//!
//! `cargo run --example synth_trace -- [config.toml] [out_dir]`

use std::path::PathBuf;

use clustertrace::{generate_synthetic, SynthConfig};

fn main() -> clustertrace::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = match args.next() {
        Some(path) => SynthConfig::from_toml(&std::fs::read_to_string(&path).map_err(|e| clustertrace::Error::io(&path, e))?)?,
        None => SynthConfig::from_toml(include_str!("../data/sample.toml"))?,
    };
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("clustertrace-synth"));

    let trace = generate_synthetic(&config)?;
    let files = trace.bundle.write_dir(&out)?;
    println!(
        "{} events, {} usage samples, {} machines",
        trace.bundle.task_events.len(),
        trace.bundle.usage.len(),
        trace.bundle.machines.len()
    );
    println!("{} planned spans, {} finished", trace.truth.spans.len(), trace.truth.completions);
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
