//! The sort stage. Events are ordered by time, then task key, then the
//! kind tie rank (see [`EventKind::tie_rank`](crate::model::EventKind::tie_rank)).
//! Equal sort keys keep their input order.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;

use tempfile::TempDir;

use crate::error::{Error, Result};
use crate::model::TaskEvent;

use super::codec::{self, CsvRows, TaskEventLayout, TaskEventWriter};

pub fn sort_events(mut events: Vec<TaskEvent>) -> Vec<TaskEvent> {
    events.sort_by_key(TaskEvent::sort_key);
    events
}

/// Sorts an event stream of any size using at most `budget` buffered events.
///
/// Full buffers are sorted and spilled as run files (v2 task_events CSV) into
/// a temporary directory, then k-way merged. Inputs that fit the budget never
/// touch disk.
pub struct ExternalSorter {
    budget: usize,
    buffer: Vec<TaskEvent>,
    runs: Vec<PathBuf>,
    dir: Option<TempDir>,
    total: u64,
}

impl ExternalSorter {
    pub fn new(budget: usize) -> Self {
        ExternalSorter {
            budget: budget.max(1),
            buffer: Vec::new(),
            runs: Vec::new(),
            dir: None,
            total: 0,
        }
    }

    pub fn push(&mut self, event: TaskEvent) -> Result<()> {
        self.buffer.push(event);
        self.total += 1;
        if self.buffer.len() >= self.budget {
            self.spill()?;
        }
        Ok(())
    }

    /// Number of run files written so far.
    pub fn spilled_runs(&self) -> usize {
        self.runs.len()
    }

    fn spill(&mut self) -> Result<()> {
        if self.dir.is_none() {
            self.dir = Some(tempfile::Builder::new().prefix("clustertrace-sort").tempdir()?);
        }
        let dir = self.dir.as_ref().expect("spill dir");
        let path = dir.path().join(format!("run-{:05}.csv", self.runs.len()));
        let mut buffer = std::mem::take(&mut self.buffer);
        buffer.sort_by_key(TaskEvent::sort_key);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = TaskEventWriter::new(BufWriter::new(file));
        for e in &buffer {
            w.write(e)?;
        }
        w.into_inner()?;
        self.runs.push(path);
        Ok(())
    }

    pub fn finish(mut self) -> Result<SortedEvents> {
        if self.runs.is_empty() {
            let events = sort_events(std::mem::take(&mut self.buffer));
            return Ok(SortedEvents {
                total: self.total,
                spilled_runs: 0,
                inner: Inner::Memory(events.into_iter()),
            });
        }
        if !self.buffer.is_empty() {
            self.spill()?;
        }
        let mut readers = Vec::with_capacity(self.runs.len());
        for path in &self.runs {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            readers.push(codec::read_task_events(BufReader::new(file), &TaskEventLayout::default()));
        }
        let mut heap = BinaryHeap::new();
        for (run, reader) in readers.iter_mut().enumerate() {
            if let Some(e) = reader.next() {
                let e = e?;
                heap.push(Reverse(HeapItem { key: e.sort_key(), run, event: e }));
            }
        }
        Ok(SortedEvents {
            total: self.total,
            spilled_runs: self.runs.len(),
            inner: Inner::Merge {
                readers,
                heap,
                _dir: self.dir.take(),
            },
        })
    }
}

struct HeapItem {
    key: (u64, crate::model::TaskKey, u8),
    run: usize,
    event: TaskEvent,
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        (self.key, self.run) == (other.key, other.run)
    }
}
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    // run index breaks ties so equal keys come out in input order
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.key, self.run).cmp(&(other.key, other.run))
    }
}

type RunReader = CsvRows<BufReader<File>, TaskEvent>;

enum Inner {
    Memory(std::vec::IntoIter<TaskEvent>),
    Merge {
        readers: Vec<RunReader>,
        heap: BinaryHeap<Reverse<HeapItem>>,
        _dir: Option<TempDir>,
    },
}

/// Output of [`ExternalSorter::finish`].
pub struct SortedEvents {
    total: u64,
    spilled_runs: usize,
    inner: Inner,
}

impl SortedEvents {
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn spilled_runs(&self) -> usize {
        self.spilled_runs
    }
}

impl Iterator for SortedEvents {
    type Item = Result<TaskEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        match &mut self.inner {
            Inner::Memory(it) => it.next().map(Ok),
            Inner::Merge { readers, heap, .. } => {
                let Reverse(top) = heap.pop()?;
                match readers[top.run].next() {
                    Some(Ok(e)) => heap.push(Reverse(HeapItem {
                        key: e.sort_key(),
                        run: top.run,
                        event: e,
                    })),
                    Some(Err(e)) => return Some(Err(e)),
                    None => {}
                }
                Some(Ok(top.event))
            }
        }
    }
}
