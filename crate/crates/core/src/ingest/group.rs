//! Per-task grouping with a memory budget.
//!
//! Events are buffered until the budget is exceeded. At that point the
//! grouper switches to partitioned spill mode:
//!
//! * partition boundaries are chosen from the distinct keys in the buffer
//!   (evenly spaced in key order), so every partition covers a contiguous
//!   key range;
//! * every event is appended to `part-NNNN.csv` in a temporary directory,
//!   using the v2 task_events layout, in arrival order.
//!
//! Groups are yielded in key order in both modes. Within a key, events keep
//! their arrival order, so sorted input produces time-ordered groups.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;

use tempfile::TempDir;

use crate::error::{Error, Result};
use crate::model::{TaskEvent, TaskKey};

use super::codec::{self, TaskEventLayout, TaskEventWriter};

pub struct KeyGrouper {
    budget: usize,
    partitions: usize,
    buffer: Vec<TaskEvent>,
    spill: Option<Spill>,
}

struct Spill {
    dir: TempDir,
    boundaries: Vec<TaskKey>,
    writers: Vec<TaskEventWriter<BufWriter<File>>>,
    paths: Vec<PathBuf>,
}

impl Spill {
    fn partition_of(&self, key: &TaskKey) -> usize {
        self.boundaries.partition_point(|b| b <= key)
    }
}

impl KeyGrouper {
    /// `budget` is the number of events held in memory before spilling;
    /// `partitions` is the number of on-disk partitions used after that.
    pub fn new(budget: usize, partitions: usize) -> Self {
        KeyGrouper {
            budget: budget.max(1),
            partitions: partitions.max(1),
            buffer: Vec::new(),
            spill: None,
        }
    }

    pub fn is_spilled(&self) -> bool {
        self.spill.is_some()
    }

    pub fn push(&mut self, event: TaskEvent) -> Result<()> {
        if let Some(spill) = &mut self.spill {
            let p = spill.partition_of(&event.key);
            return spill.writers[p].write(&event);
        }
        self.buffer.push(event);
        if self.buffer.len() > self.budget {
            self.start_spill()?;
        }
        Ok(())
    }

    fn start_spill(&mut self) -> Result<()> {
        let mut keys: Vec<TaskKey> = self.buffer.iter().map(|e| e.key).collect();
        keys.sort_unstable();
        keys.dedup();
        let parts = self.partitions.min(keys.len()).max(1);
        let boundaries: Vec<TaskKey> = (1..parts).map(|i| keys[i * keys.len() / parts]).collect();
        let dir = tempfile::Builder::new().prefix("clustertrace-group").tempdir()?;
        let mut writers = Vec::new();
        let mut paths = Vec::new();
        for i in 0..=boundaries.len() {
            let path = dir.path().join(format!("part-{i:04}.csv"));
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            writers.push(TaskEventWriter::new(BufWriter::new(file)));
            paths.push(path);
        }
        let mut spill = Spill {
            dir,
            boundaries,
            writers,
            paths,
        };
        for event in self.buffer.drain(..) {
            let p = spill.partition_of(&event.key);
            spill.writers[p].write(&event)?;
        }
        self.buffer = Vec::new();
        self.spill = Some(spill);
        Ok(())
    }

    pub fn finish(self) -> Result<GroupedEvents> {
        match self.spill {
            None => Ok(GroupedEvents {
                current: group_sorted(self.buffer).into_iter(),
                remaining: Vec::new(),
                _dir: None,
            }),
            Some(spill) => {
                for w in spill.writers {
                    w.into_inner()?;
                }
                let mut remaining = spill.paths;
                remaining.reverse();
                Ok(GroupedEvents {
                    current: Vec::new().into_iter(),
                    remaining,
                    _dir: Some(spill.dir),
                })
            }
        }
    }
}

fn group_sorted(mut events: Vec<TaskEvent>) -> Vec<(TaskKey, Vec<TaskEvent>)> {
    events.sort_by_key(|e| e.key);
    let mut groups: Vec<(TaskKey, Vec<TaskEvent>)> = Vec::new();
    for e in events {
        match groups.last_mut() {
            Some((k, g)) if *k == e.key => g.push(e),
            _ => groups.push((e.key, vec![e])),
        }
    }
    groups
}

/// Groups in key order; reads one spilled partition at a time.
pub struct GroupedEvents {
    current: std::vec::IntoIter<(TaskKey, Vec<TaskEvent>)>,
    remaining: Vec<PathBuf>,
    _dir: Option<TempDir>,
}

impl GroupedEvents {
    fn load(path: &PathBuf) -> Result<Vec<(TaskKey, Vec<TaskEvent>)>> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let events = codec::read_task_events(BufReader::new(file), &TaskEventLayout::default())
            .collect::<Result<Vec<_>>>()?;
        Ok(group_sorted(events))
    }
}

impl Iterator for GroupedEvents {
    type Item = Result<(TaskKey, Vec<TaskEvent>)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(group) = self.current.next() {
                return Some(Ok(group));
            }
            let path = self.remaining.pop()?;
            match Self::load(&path) {
                Ok(groups) => self.current = groups.into_iter(),
                Err(e) => return Some(Err(e)),
            }
        }
    }
}
