//! Column layouts and CSV readers/writers for the clusterdata tables.
//!
//! Files carry no header row. The defaults match the v2 layouts:
//!
//! * task_events: time, missing info, job id, task index, machine id, event
//!   type, user, scheduling class, priority, cpu request, memory request,
//!   disk request, different-machine constraint (13 columns)
//! * task_usage: start, end, job id, task index, machine id, mean cpu rate,
//!   canonical memory usage, and 13 further columns we pass over (20 columns)
//! * machine_events: time, machine id, event type, platform id, cpus, memory
//!   (6 columns)

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EventKind, MissingInfo, TaskEvent, TaskKey};

use super::{Machine, UsageSample, MAX_USAGE_WINDOW};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskEventLayout {
    pub columns: usize,
    pub time: usize,
    pub missing_info: Option<usize>,
    pub job_id: usize,
    pub task_index: usize,
    pub machine_id: Option<usize>,
    pub event_type: usize,
    pub user: Option<usize>,
    pub scheduling_class: usize,
    pub priority: usize,
    pub cpu_request: Option<usize>,
    pub mem_request: Option<usize>,
    pub disk_request: Option<usize>,
    pub different_machine: Option<usize>,
}

impl Default for TaskEventLayout {
    fn default() -> Self {
        TaskEventLayout {
            columns: 13,
            time: 0,
            missing_info: Some(1),
            job_id: 2,
            task_index: 3,
            machine_id: Some(4),
            event_type: 5,
            user: Some(6),
            scheduling_class: 7,
            priority: 8,
            cpu_request: Some(9),
            mem_request: Some(10),
            disk_request: Some(11),
            different_machine: Some(12),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UsageLayout {
    pub columns: usize,
    pub start: usize,
    pub end: usize,
    pub job_id: usize,
    pub task_index: usize,
    pub machine_id: usize,
    pub cpu: usize,
    pub memory: usize,
}

impl Default for UsageLayout {
    fn default() -> Self {
        UsageLayout {
            columns: 20,
            start: 0,
            end: 1,
            job_id: 2,
            task_index: 3,
            machine_id: 4,
            cpu: 5,
            memory: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MachineEventLayout {
    pub columns: usize,
    pub time: usize,
    pub machine_id: usize,
    pub event_type: usize,
    pub cpu: usize,
    pub memory: usize,
}

impl Default for MachineEventLayout {
    fn default() -> Self {
        MachineEventLayout {
            columns: 6,
            time: 0,
            machine_id: 1,
            event_type: 2,
            cpu: 4,
            memory: 5,
        }
    }
}

/// The column-map file: a TOML document with optional `[task_events]`,
/// `[task_usage]` and `[machine_events]` tables. Omitted tables or fields keep
/// the v2 defaults.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Layouts {
    pub task_events: TaskEventLayout,
    pub task_usage: UsageLayout,
    pub machine_events: MachineEventLayout,
}

impl Layouts {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("column map: {e}")))
    }
}

fn csv_reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(source)
}

fn csv_writer<W: Write>(sink: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(sink)
}

/// Splits csv errors into fatal stream errors and row-level parse errors.
fn classify_csv_error(err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.kind() {
        csv::ErrorKind::Io(_) => Error::Csv(err),
        _ => Error::Parse {
            line,
            message: err.to_string(),
        },
    }
}

struct Row<'a> {
    record: &'a csv::StringRecord,
    line: u64,
}

impl<'a> Row<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            message: message.into(),
        }
    }

    fn raw(&self, col: usize) -> &'a str {
        self.record.get(col).unwrap_or("").trim()
    }

    fn required<T: std::str::FromStr>(&self, col: usize, name: &str) -> Result<T> {
        let raw = self.raw(col);
        if raw.is_empty() {
            return Err(self.err(format!("missing required field {name}")));
        }
        raw.parse()
            .map_err(|_| self.err(format!("non-numeric {name} {raw:?}")))
    }

    fn optional<T: std::str::FromStr>(&self, col: Option<usize>, name: &str) -> Result<Option<T>> {
        let Some(col) = col else { return Ok(None) };
        let raw = self.raw(col);
        if raw.is_empty() {
            return Ok(None);
        }
        raw.parse()
            .map(Some)
            .map_err(|_| self.err(format!("non-numeric {name} {raw:?}")))
    }

    fn check_columns(&self, expected: usize) -> Result<()> {
        if self.record.len() != expected {
            return Err(self.err(format!(
                "expected {expected} columns, found {}",
                self.record.len()
            )));
        }
        Ok(())
    }
}

/// Parses a timestamp column. The trace stores integers, but floats with an
/// integral value are accepted too.
fn parse_time(row: &Row<'_>, col: usize, name: &str) -> Result<u64> {
    let raw = row.raw(col);
    if raw.is_empty() {
        return Err(row.err(format!("missing required field {name}")));
    }
    if let Ok(v) = raw.parse::<u64>() {
        return Ok(v);
    }
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 && v.fract() == 0.0 => Ok(v as u64),
        _ => Err(row.err(format!("non-numeric {name} {raw:?}"))),
    }
}

pub fn parse_task_event(record: &csv::StringRecord, line: u64, layout: &TaskEventLayout) -> Result<TaskEvent> {
    let row = Row { record, line };
    row.check_columns(layout.columns)?;
    let time = parse_time(&row, layout.time, "time")?;
    let missing_info = match row.optional::<u8>(layout.missing_info, "missing info")? {
        None => None,
        Some(code) => Some(
            MissingInfo::from_code(code).ok_or_else(|| row.err(format!("unknown missing-info code {code}")))?,
        ),
    };
    let job_id = row.required(layout.job_id, "job id")?;
    let task_index = row.required(layout.task_index, "task index")?;
    let machine_id = row.optional(layout.machine_id, "machine id")?;
    let code: u8 = row.required(layout.event_type, "event type")?;
    let kind = EventKind::from_code(code).ok_or_else(|| row.err("unknown event kind"))?;
    let user = layout
        .user
        .map(|c| row.raw(c))
        .filter(|s| !s.is_empty())
        .map(str::to_owned);
    let scheduling_class = row.required(layout.scheduling_class, "scheduling class")?;
    let priority = row.required(layout.priority, "priority")?;
    let different_machine = match row.optional::<u8>(layout.different_machine, "different-machine constraint")? {
        None => None,
        Some(0) => Some(false),
        Some(1) => Some(true),
        Some(v) => return Err(row.err(format!("different-machine constraint {v} is not 0 or 1"))),
    };
    let event = TaskEvent {
        time,
        missing_info,
        key: TaskKey::new(job_id, task_index),
        machine_id,
        kind,
        user,
        scheduling_class,
        priority,
        cpu_request: row.optional(layout.cpu_request, "cpu request")?,
        mem_request: row.optional(layout.mem_request, "memory request")?,
        disk_request: row.optional(layout.disk_request, "disk request")?,
        different_machine,
    };
    event.validate().map_err(|e| row.err(e.to_string()))?;
    Ok(event)
}

pub fn parse_usage(record: &csv::StringRecord, line: u64, layout: &UsageLayout) -> Result<UsageSample> {
    let row = Row { record, line };
    row.check_columns(layout.columns)?;
    let window_start = parse_time(&row, layout.start, "start time")?;
    let window_end = parse_time(&row, layout.end, "end time")?;
    if window_end < window_start {
        return Err(row.err("usage window ends before it starts"));
    }
    if window_end - window_start > MAX_USAGE_WINDOW {
        return Err(row.err("usage window longer than 300 s"));
    }
    let cpu_usage: f64 = row.required(layout.cpu, "cpu usage")?;
    let mem_usage: f64 = row.required(layout.memory, "memory usage")?;
    if !(cpu_usage.is_finite() && cpu_usage >= 0.0 && mem_usage.is_finite() && mem_usage >= 0.0) {
        return Err(row.err("usage must be a non-negative number"));
    }
    Ok(UsageSample {
        window_start,
        window_end,
        key: TaskKey::new(row.required(layout.job_id, "job id")?, row.required(layout.task_index, "task index")?),
        machine_id: row.required(layout.machine_id, "machine id")?,
        cpu_usage,
        mem_usage,
    })
}

/// Machine event row. Returns `None` for rows that carry no capacity
/// (removals, or adds with blank capacity columns).
pub fn parse_machine_event(
    record: &csv::StringRecord,
    line: u64,
    layout: &MachineEventLayout,
) -> Result<Option<(u64, Machine)>> {
    let row = Row { record, line };
    row.check_columns(layout.columns)?;
    let time = parse_time(&row, layout.time, "time")?;
    let id: u64 = row.required(layout.machine_id, "machine id")?;
    let event: u8 = row.required(layout.event_type, "event type")?;
    if event == 1 {
        return Ok(None);
    }
    let cpu: Option<f64> = row.optional(Some(layout.cpu), "cpu capacity")?;
    let memory: Option<f64> = row.optional(Some(layout.memory), "memory capacity")?;
    Ok(match (cpu, memory) {
        (Some(cpu), Some(memory)) => Some((time, Machine { id, cpu, memory })),
        _ => None,
    })
}

type RowParser<T> = Box<dyn FnMut(&csv::StringRecord, u64) -> Result<T> + Send>;

/// Streaming reader. Row-level problems come out as [`Error::Parse`] and the
/// iterator continues; any other error is fatal and ends the stream.
pub struct CsvRows<R: Read, T> {
    records: csv::StringRecordsIntoIter<R>,
    parse: RowParser<T>,
    done: bool,
}

impl<R: Read, T> Iterator for CsvRows<R, T> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.records.next()? {
            Ok(record) => {
                let line = record.position().map(|p| p.line()).unwrap_or(0);
                Some((self.parse)(&record, line))
            }
            Err(e) => {
                let e = classify_csv_error(e);
                if !matches!(e, Error::Parse { .. }) {
                    self.done = true;
                }
                Some(Err(e))
            }
        }
    }
}

pub fn read_task_events<R: Read>(source: R, layout: &TaskEventLayout) -> CsvRows<R, TaskEvent> {
    let layout = layout.clone();
    CsvRows {
        records: csv_reader(source).into_records(),
        parse: Box::new(move |r, line| parse_task_event(r, line, &layout)),
        done: false,
    }
}

pub fn read_usage<R: Read>(source: R, layout: &UsageLayout) -> CsvRows<R, UsageSample> {
    let layout = layout.clone();
    CsvRows {
        records: csv_reader(source).into_records(),
        parse: Box::new(move |r, line| parse_usage(r, line, &layout)),
        done: false,
    }
}

pub fn read_machine_events<R: Read>(source: R, layout: &MachineEventLayout) -> CsvRows<R, Option<(u64, Machine)>> {
    let layout = layout.clone();
    CsvRows {
        records: csv_reader(source).into_records(),
        parse: Box::new(move |r, line| parse_machine_event(r, line, &layout)),
        done: false,
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Fields of `event` in the v2 column order.
pub fn task_event_fields(event: &TaskEvent) -> [String; 13] {
    [
        event.time.to_string(),
        opt(event.missing_info.map(MissingInfo::code)),
        event.key.job_id.to_string(),
        event.key.task_index.to_string(),
        opt(event.machine_id),
        event.kind.code().to_string(),
        event.user.clone().unwrap_or_default(),
        event.scheduling_class.to_string(),
        event.priority.to_string(),
        opt(event.cpu_request),
        opt(event.mem_request),
        opt(event.disk_request),
        opt(event.different_machine.map(u8::from)),
    ]
}

pub struct TaskEventWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TaskEventWriter<W> {
    pub fn new(sink: W) -> Self {
        TaskEventWriter { inner: csv_writer(sink) }
    }

    pub fn write(&mut self, event: &TaskEvent) -> Result<()> {
        self.inner.write_record(task_event_fields(event))?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner
            .into_inner()
            .map_err(|e| Error::Stream(e.into_error()))
    }
}

pub fn write_task_events<W: Write>(sink: W, events: &[TaskEvent]) -> Result<W> {
    let mut w = TaskEventWriter::new(sink);
    for e in events {
        w.write(e)?;
    }
    w.into_inner()
}

pub fn write_usage<W: Write>(sink: W, usage: &[UsageSample]) -> Result<W> {
    let mut w = csv_writer(sink);
    let mut fields = vec![String::new(); 20];
    for u in usage {
        fields[0] = u.window_start.to_string();
        fields[1] = u.window_end.to_string();
        fields[2] = u.key.job_id.to_string();
        fields[3] = u.key.task_index.to_string();
        fields[4] = u.machine_id.to_string();
        fields[5] = u.cpu_usage.to_string();
        fields[6] = u.mem_usage.to_string();
        w.write_record(&fields)?;
    }
    w.into_inner().map_err(|e| Error::Stream(e.into_error()))
}

pub fn write_machines<W: Write>(sink: W, machines: &[Machine]) -> Result<W> {
    let mut w = csv_writer(sink);
    for m in machines {
        w.write_record([
            "0".to_string(),
            m.id.to_string(),
            "0".to_string(),
            String::new(),
            m.cpu.to_string(),
            m.memory.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Stream(e.into_error()))
}
