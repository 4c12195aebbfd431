//! Trace input: clusterdata CSV readers (plain or gzip), the sort stage, a
//! bounded-memory grouping stage, and a seeded synthetic trace generator.

pub mod codec;
pub mod group;
pub mod sort;
pub mod synth;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EventKind, Micros, TaskEvent, TaskKey, MICROS_PER_SECOND};

pub use codec::{Layouts, MachineEventLayout, TaskEventLayout, UsageLayout};
pub use group::{GroupedEvents, KeyGrouper};
pub use sort::{sort_events, ExternalSorter, SortedEvents};
pub use synth::{generate_synthetic, SynthConfig, SyntheticTrace};

/// Usage windows in the trace never exceed the 300 s sampling period.
pub const MAX_USAGE_WINDOW: Micros = 300 * MICROS_PER_SECOND;

/// Mean resource usage of one task over one measurement window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageSample {
    pub window_start: Micros,
    pub window_end: Micros,
    pub key: TaskKey,
    pub machine_id: u64,
    pub cpu_usage: f64,
    pub mem_usage: f64,
}

impl UsageSample {
    pub fn usage(&self, resource: crate::model::Resource) -> f64 {
        match resource {
            crate::model::Resource::Cpu => self.cpu_usage,
            crate::model::Resource::Memory => self.mem_usage,
        }
    }

    pub fn window(&self) -> Micros {
        self.window_end - self.window_start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Machine {
    pub id: u64,
    pub cpu: f64,
    pub memory: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Capacity {
    pub cpu: f64,
    pub memory: f64,
}

/// Everything the analyses consume: task events, usage samples and machine
/// capacities, each sorted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceBundle {
    pub task_events: Vec<TaskEvent>,
    pub usage: Vec<UsageSample>,
    pub machines: Vec<Machine>,
    pub machine_capacity: Capacity,
}

impl TraceBundle {
    /// Assembles a bundle, sorting every table and totalling capacity.
    pub fn new(task_events: Vec<TaskEvent>, mut usage: Vec<UsageSample>, mut machines: Vec<Machine>) -> Self {
        let task_events = sort_events(task_events);
        sort_usage(&mut usage);
        machines.sort_by_key(|m| m.id);
        machines.dedup_by_key(|m| m.id);
        let machine_capacity = Capacity {
            cpu: machines.iter().map(|m| m.cpu).sum(),
            memory: machines.iter().map(|m| m.memory).sum(),
        };
        TraceBundle {
            task_events,
            usage,
            machines,
            machine_capacity,
        }
    }

    /// Time of the last event or usage window end.
    pub fn trace_end(&self) -> Micros {
        let events = self.task_events.last().map(|e| e.time).unwrap_or(0);
        let usage = self.usage.iter().map(|u| u.window_end).max().unwrap_or(0);
        events.max(usage)
    }

    pub fn load(paths: &BundlePaths, layouts: &Layouts, diagnostics: &mut Diagnostics) -> Result<Self> {
        let events = read_files(&paths.task_events, diagnostics, |r| {
            codec::read_task_events(r, &layouts.task_events)
        })?;
        let usage = read_files(&paths.usage, diagnostics, |r| codec::read_usage(r, &layouts.task_usage))?;
        let machine_rows = read_files(&paths.machine_events, diagnostics, |r| {
            codec::read_machine_events(r, &layouts.machine_events)
        })?;
        Ok(TraceBundle::new(events, usage, latest_machines(machine_rows)))
    }

    /// Writes the bundle as `task_events.csv`, `task_usage.csv` and
    /// `machine_events.csv` under `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let events = dir.join("task_events.csv");
        let usage = dir.join("task_usage.csv");
        let machines = dir.join("machine_events.csv");
        codec::write_task_events(create(&events)?, &self.task_events)?;
        codec::write_usage(create(&usage)?, &self.usage)?;
        codec::write_machines(create(&machines)?, &self.machines)?;
        Ok(vec![events, usage, machines])
    }
}

pub fn sort_usage(usage: &mut [UsageSample]) {
    usage.sort_by(|a, b| {
        (a.window_start, a.machine_id, a.key, a.window_end).cmp(&(b.window_start, b.machine_id, b.key, b.window_end))
    });
}

/// Final capacity per machine: the latest add/update row wins.
fn latest_machines(mut rows: Vec<Option<(u64, Machine)>>) -> Vec<Machine> {
    let mut rows: Vec<(u64, Machine)> = rows.drain(..).flatten().collect();
    rows.sort_by_key(|(t, m)| (m.id, *t));
    let mut out: Vec<Machine> = Vec::new();
    for (_, m) in rows {
        match out.last_mut() {
            Some(last) if last.id == m.id => *last = m,
            _ => out.push(m),
        }
    }
    out
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Opens `path`, transparently decompressing gzip input (detected by magic
/// bytes, not by extension).
pub fn open_input(path: &Path) -> Result<Box<dyn Read + Send>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::with_capacity(1 << 16, file);
    let head = reader.fill_buf().map_err(|e| Error::io(path, e))?;
    if head.starts_with(&[0x1f, 0x8b]) {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(reader))))
    } else {
        Ok(Box::new(reader))
    }
}

/// Reads every file (in parallel when a rayon pool is installed) and
/// concatenates rows in path order. Row errors become diagnostics.
fn read_files<T, I, F>(paths: &[PathBuf], diagnostics: &mut Diagnostics, open: F) -> Result<Vec<T>>
where
    T: Send,
    I: Iterator<Item = Result<T>>,
    F: Fn(Box<dyn Read + Send>) -> I + Sync,
{
    let parts: Vec<Result<(Vec<T>, Diagnostics)>> = paths
        .par_iter()
        .map(|path| {
            let mut diag = Diagnostics::default();
            let mut rows = Vec::new();
            for row in open(open_input(path)?) {
                match row {
                    Ok(v) => rows.push(v),
                    Err(Error::Parse { line, message }) => diag.push(path.display().to_string(), line, message),
                    Err(e) => return Err(e),
                }
            }
            Ok((rows, diag))
        })
        .collect();
    let mut out = Vec::new();
    for part in parts {
        let (rows, diag) = part?;
        out.extend(rows);
        diagnostics.extend(diag);
    }
    Ok(out)
}

/// Streams task events from `paths` in order, recording row errors.
pub fn stream_task_events<'a>(
    paths: &'a [PathBuf],
    layout: &'a TaskEventLayout,
    diagnostics: &'a mut Diagnostics,
) -> impl Iterator<Item = Result<TaskEvent>> + 'a {
    paths
        .iter()
        .flat_map(move |path| -> Box<dyn Iterator<Item = (PathBuf, Result<TaskEvent>)>> {
            match open_input(path) {
                Ok(r) => {
                    let p = path.clone();
                    Box::new(codec::read_task_events(r, layout).map(move |row| (p.clone(), row)))
                }
                Err(e) => Box::new(std::iter::once((path.clone(), Err(e)))),
            }
        })
        .filter_map(move |(path, row)| match row {
            Ok(e) => Some(Ok(e)),
            Err(Error::Parse { line, message }) => {
                diagnostics.push(path.display().to_string(), line, message);
                None
            }
            Err(e) => Some(Err(e)),
        })
}

/// Input files for each table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundlePaths {
    pub task_events: Vec<PathBuf>,
    pub usage: Vec<PathBuf>,
    pub machine_events: Vec<PathBuf>,
}

impl BundlePaths {
    /// Resolves the tables under `dir`. Each table is either a single file
    /// (`task_events.csv` / `task_events.csv.gz`) or a directory of shards
    /// (`task_events/part-*.csv.gz`) read in name order. The usage table is
    /// `task_usage`.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory")));
        }
        Ok(BundlePaths {
            task_events: table_files(dir, "task_events")?,
            usage: table_files(dir, "task_usage")?,
            machine_events: table_files(dir, "machine_events")?,
        })
    }

    pub fn all(&self) -> impl Iterator<Item = &PathBuf> {
        self.task_events
            .iter()
            .chain(self.usage.iter())
            .chain(self.machine_events.iter())
    }
}

fn is_table_file(name: &str) -> bool {
    name.ends_with(".csv") || name.ends_with(".csv.gz")
}

fn table_files(dir: &Path, table: &str) -> Result<Vec<PathBuf>> {
    let shard_dir = dir.join(table);
    if shard_dir.is_dir() {
        let mut files = Vec::new();
        for entry in std::fs::read_dir(&shard_dir).map_err(|e| Error::io(&shard_dir, e))? {
            let path = entry.map_err(|e| Error::io(&shard_dir, e))?.path();
            if path.is_file() && path.file_name().and_then(|n| n.to_str()).is_some_and(is_table_file) {
                files.push(path);
            }
        }
        files.sort();
        return Ok(files);
    }
    Ok(["csv", "csv.gz"]
        .iter()
        .map(|ext| dir.join(format!("{table}.{ext}")))
        .filter(|p| p.is_file())
        .take(1)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub source: String,
    pub line: u64,
    pub message: String,
}

/// Row-level problems found while reading, in input order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub entries: Vec<Diagnostic>,
}

impl Diagnostics {
    pub fn push(&mut self, source: impl Into<String>, line: u64, message: impl Into<String>) {
        self.entries.push(Diagnostic {
            source: source.into(),
            line,
            message: message.into(),
        });
    }

    pub fn extend(&mut self, other: Diagnostics) {
        self.entries.extend(other.entries);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One `source:line: message` line per entry.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for d in &self.entries {
            out.push_str(&format!("{}:{}: {}\n", d.source, d.line, d.message));
        }
        out
    }
}

/// Stream adapter that gives tasks already alive at trace start a plausible
/// history.
///
/// When a key's first event carries the missing-info flag and is not a
/// submit, implied events are inserted at the same timestamp: a submit, plus
/// a schedule when the event implies the task was running (finish,
/// update_running, or any terminal carrying a machine id).
pub struct SnapshotSeeder<I> {
    inner: I,
    seen: HashSet<TaskKey>,
    pending: Vec<TaskEvent>,
    affected: u64,
}

impl<I: Iterator<Item = TaskEvent>> SnapshotSeeder<I> {
    pub fn new(inner: I) -> Self {
        SnapshotSeeder {
            inner,
            seen: HashSet::new(),
            pending: Vec::new(),
            affected: 0,
        }
    }

    /// Number of tasks that received implied events so far.
    pub fn affected(&self) -> u64 {
        self.affected
    }
}

impl<I: Iterator<Item = TaskEvent>> Iterator for SnapshotSeeder<I> {
    type Item = TaskEvent;

    fn next(&mut self) -> Option<TaskEvent> {
        if let Some(e) = self.pending.pop() {
            return Some(e);
        }
        let event = self.inner.next()?;
        if !self.seen.insert(event.key) || event.missing_info.is_none() || event.kind == EventKind::Submit {
            return Some(event);
        }
        let running = match event.kind {
            EventKind::Schedule | EventKind::UpdatePending => false,
            EventKind::Finish | EventKind::UpdateRunning => true,
            _ => event.machine_id.is_some(),
        };
        self.affected += 1;
        let implied = |kind| TaskEvent {
            kind,
            ..event.clone()
        };
        // popped in reverse
        self.pending.push(event.clone());
        if running {
            self.pending.push(implied(EventKind::Schedule));
        }
        Some(implied(EventKind::Submit))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MissingInfo;

    #[test]
    fn gzip_and_plain_inputs_read_identically() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let text = "0,,1,0,,0,u,0,0,,,,\n5,,1,0,,1,u,0,0,,,,\n";
        std::fs::write(dir.path().join("a.csv"), text).unwrap();
        let mut gz = GzEncoder::new(Vec::new(), flate2::Compression::default());
        gz.write_all(text.as_bytes()).unwrap();
        std::fs::write(dir.path().join("b.csv.gz"), gz.finish().unwrap()).unwrap();
        let read = |name: &str| -> Vec<TaskEvent> {
            codec::read_task_events(open_input(&dir.path().join(name)).unwrap(), &TaskEventLayout::default())
                .map(|r| r.unwrap())
                .collect()
        };
        assert_eq!(read("a.csv"), read("b.csv.gz"));
        assert_eq!(read("a.csv").len(), 2);
    }

    #[test]
    fn bundle_dir_round_trip_with_shards() {
        let dir = tempfile::tempdir().unwrap();
        let events = vec![
            TaskEvent::new(0, TaskKey::new(1, 0), EventKind::Submit),
            TaskEvent::new(3, TaskKey::new(1, 0), EventKind::Schedule).with_machine(4),
        ];
        let bundle = TraceBundle::new(
            events,
            vec![UsageSample {
                window_start: 0,
                window_end: 10,
                key: TaskKey::new(1, 0),
                machine_id: 4,
                cpu_usage: 0.5,
                mem_usage: 0.25,
            }],
            vec![Machine { id: 4, cpu: 1.0, memory: 0.5 }],
        );
        bundle.write_dir(dir.path()).unwrap();
        let paths = BundlePaths::from_dir(dir.path()).unwrap();
        let mut diag = Diagnostics::default();
        let loaded = TraceBundle::load(&paths, &Layouts::default(), &mut diag).unwrap();
        assert!(diag.is_empty());
        assert_eq!(loaded, bundle);
        assert_eq!(loaded.machine_capacity, Capacity { cpu: 1.0, memory: 0.5 });

        let shards = dir.path().join("task_events");
        std::fs::create_dir(&shards).unwrap();
        std::fs::write(shards.join("part-00001.csv"), "9,,2,0,,0,u,0,0,,,,\n").unwrap();
        std::fs::write(shards.join("part-00000.csv"), "bad row\n1,,2,0,,0,u,0,0,,,,\n").unwrap();
        let paths = BundlePaths::from_dir(dir.path()).unwrap();
        assert_eq!(paths.task_events.len(), 2);
        let loaded = TraceBundle::load(&paths, &Layouts::default(), &mut diag).unwrap();
        assert_eq!(loaded.task_events.len(), 2);
        assert_eq!(diag.len(), 1);
        assert!(diag.render().contains("part-00000.csv:1:"));
    }

    #[test]
    fn snapshot_seeding_inserts_implied_history() {
        let mut e = TaskEvent::new(0, TaskKey::new(1, 0), EventKind::Finish);
        e.missing_info = Some(MissingInfo::SnapshotButNoTransition);
        let plain = TaskEvent::new(0, TaskKey::new(2, 0), EventKind::Finish);
        let mut seeder = SnapshotSeeder::new(vec![e, plain].into_iter());
        let kinds: Vec<_> = seeder.by_ref().map(|e| (e.key.job_id, e.kind)).collect();
        assert_eq!(
            kinds,
            vec![
                (1, EventKind::Submit),
                (1, EventKind::Schedule),
                (1, EventKind::Finish),
                (2, EventKind::Finish)
            ]
        );
        assert_eq!(seeder.affected(), 1);
    }
}
