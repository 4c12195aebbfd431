//! Per-task lifecycles: grouping, update collapsing, transition validation,
//! terminal classification and span extraction.
//!
//! All of it is driven by [`Tracker`], an incremental per-task state machine.
//! Feeding a task's events to a tracker in order yields, for each event,
//! whether the transition was legal, how a terminal event is classified, and
//! any span the event closed. The streaming aggregates use the same tracker,
//! so lifecycle exports and series always agree.
//!
//! A terminal event is classified by the state it leaves. Because update
//! events are self-loops, that state is determined by the update-collapsed
//! predecessor: pending after a submit, running after a schedule.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{step_state, EventKind, Micros, TaskEvent, TaskKey, TaskState, TerminalClassification};

/// One submit-to-terminal episode of a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleSpan {
    pub submit_time: Micros,
    pub schedule_time: Option<Micros>,
    /// Absent while the span is live.
    pub end_time: Option<Micros>,
    pub terminal: Option<TerminalClassification>,
    /// Still open at the end of the observed trace (right-censored).
    pub live: bool,
}

impl ScheduleSpan {
    fn open(submit_time: Micros) -> Self {
        ScheduleSpan {
            submit_time,
            schedule_time: None,
            end_time: None,
            terminal: None,
            live: true,
        }
    }

    pub fn scheduling_time(&self) -> Option<Micros> {
        self.schedule_time.map(|s| s - self.submit_time)
    }

    /// Schedule to terminal, whatever the terminal kind.
    pub fn execution_time(&self) -> Option<Micros> {
        match (self.schedule_time, self.end_time) {
            (Some(s), Some(e)) => Some(e - s),
            _ => None,
        }
    }

    pub fn finished(&self) -> bool {
        self.terminal == Some(TerminalClassification::Finish)
    }

    /// Time spent scheduled, counting a live running span up to `until`.
    pub fn observed_run_time(&self, until: Micros) -> Micros {
        match (self.schedule_time, self.end_time) {
            (Some(s), Some(e)) => e - s,
            (Some(s), None) => until.saturating_sub(s),
            _ => 0,
        }
    }
}

/// Total time a task spent scheduled over its spans. Shared by the utilization
/// class split and the synthetic generator's class assignment.
pub fn task_run_time(spans: &[ScheduleSpan], until: Micros) -> Micros {
    spans.iter().map(|s| s.observed_run_time(until)).sum()
}

/// An event that the transition graph does not allow from the current state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Position in the task's raw event list.
    pub index: usize,
    pub time: Micros,
    /// `None` for a task with no accepted events yet.
    pub from: Option<TaskState>,
    pub kind: EventKind,
}

/// What one event did to a [`Tracker`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub from: Option<TaskState>,
    /// `None` when the event was illegal; the tracker's state is unchanged.
    pub to: Option<TaskState>,
    pub terminal: Option<TerminalClassification>,
    pub closed: Option<ScheduleSpan>,
}

impl Step {
    pub fn is_violation(&self) -> bool {
        self.to.is_none()
    }
}

/// Incremental state machine for a single task.
#[derive(Debug, Clone, Default)]
pub struct Tracker {
    state: Option<TaskState>,
    open: Option<ScheduleSpan>,
}

impl Tracker {
    pub fn state(&self) -> Option<TaskState> {
        self.state
    }

    pub fn step(&mut self, event: &TaskEvent) -> Step {
        let from = self.state;
        let Some(to) = step_state(from, event.kind) else {
            return Step {
                from,
                to: None,
                terminal: None,
                closed: None,
            };
        };
        let mut terminal = None;
        let mut closed = None;
        match event.kind {
            EventKind::Submit => self.open = Some(ScheduleSpan::open(event.time)),
            EventKind::Schedule => {
                if let Some(span) = &mut self.open {
                    span.schedule_time = Some(event.time);
                }
            }
            kind if kind.is_terminal() => {
                terminal = from.and_then(|s| TerminalClassification::of(s, kind));
                if let Some(mut span) = self.open.take() {
                    span.end_time = Some(event.time);
                    span.terminal = terminal;
                    span.live = false;
                    closed = Some(span);
                }
            }
            _ => {}
        }
        self.state = Some(to);
        Step {
            from,
            to: Some(to),
            terminal,
            closed,
        }
    }

    /// The span still open, if any.
    pub fn live_span(&self) -> Option<ScheduleSpan> {
        self.open
    }
}

/// A task's events with everything derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lifecycle {
    pub key: TaskKey,
    pub events: Vec<TaskEvent>,
    /// `events` without update kinds. Empty until [`collapse_updates`] runs.
    pub collapsed: Vec<TaskEvent>,
    pub violations: Vec<Violation>,
    pub spans: Vec<ScheduleSpan>,
}

impl Lifecycle {
    /// Builds a fully derived lifecycle from one task's time-ordered events.
    pub fn new(key: TaskKey, events: Vec<TaskEvent>) -> Self {
        let mut tracker = Tracker::default();
        let mut violations = Vec::new();
        let mut spans = Vec::new();
        for (index, e) in events.iter().enumerate() {
            let step = tracker.step(e);
            if step.is_violation() {
                violations.push(Violation {
                    index,
                    time: e.time,
                    from: step.from,
                    kind: e.kind,
                });
            }
            spans.extend(step.closed);
        }
        spans.extend(tracker.live_span());
        collapse_updates(Lifecycle {
            key,
            events,
            collapsed: Vec::new(),
            violations,
            spans,
        })
    }

    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Groups a sorted event stream into one lifecycle per key, in key order.
/// Lifecycles are derived in parallel; the result does not depend on the
/// number of workers.
pub fn build_lifecycles(events: impl IntoIterator<Item = TaskEvent>) -> Vec<Lifecycle> {
    let mut groups: BTreeMap<TaskKey, Vec<TaskEvent>> = BTreeMap::new();
    for e in events {
        groups.entry(e.key).or_default().push(e);
    }
    groups
        .into_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(key, events)| Lifecycle::new(key, events))
        .collect()
}

/// Fills `collapsed` with the non-update events, in order. Idempotent.
pub fn collapse_updates(mut life: Lifecycle) -> Lifecycle {
    life.collapsed = life.events.iter().filter(|e| !e.kind.is_update()).cloned().collect();
    life
}

/// One entry per terminal-kind event in `collapsed`, classified by the state
/// its collapsed predecessor left the task in. Entries are `None` where the
/// event was not a legal transition (for example a terminal with no submit
/// before it); such events also appear in `violations`.
pub fn classify_terminals(life: &Lifecycle) -> Vec<Option<TerminalClassification>> {
    let mut tracker = Tracker::default();
    let mut out = Vec::new();
    for e in &life.collapsed {
        let step = tracker.step(e);
        if e.kind.is_terminal() {
            out.push(step.terminal);
        }
    }
    out
}

/// Spans observed up to `trace_end`. Events after it are ignored, so spans
/// open at that instant are reported live with no end and no duration.
/// Illegal events are skipped.
pub fn extract_spans(life: &Lifecycle, trace_end: Micros) -> Vec<ScheduleSpan> {
    let mut tracker = Tracker::default();
    let mut spans = Vec::new();
    for e in life.collapsed.iter().take_while(|e| e.time <= trace_end) {
        spans.extend(tracker.step(e).closed);
    }
    spans.extend(tracker.live_span());
    spans
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub const VIOLATION_HEADER: [&str; 6] = ["job_id", "task_index", "event_index", "time", "from_state", "kind"];

pub const SPAN_HEADER: [&str; 7] = [
    "job_id",
    "task_index",
    "submit_time",
    "schedule_time",
    "end_time",
    "terminal",
    "live",
];

/// One CSV record per violation, matching [`VIOLATION_HEADER`]. A task
/// with no accepted events has from_state `new`.
pub fn violation_records(life: &Lifecycle) -> impl Iterator<Item = [String; 6]> + '_ {
    life.violations.iter().map(|v| {
        [
            life.key.job_id.to_string(),
            life.key.task_index.to_string(),
            v.index.to_string(),
            v.time.to_string(),
            v.from.map(|s| s.name()).unwrap_or("new").to_string(),
            v.kind.name().to_string(),
        ]
    })
}

/// CSV record for a span, matching [`SPAN_HEADER`].
pub fn span_record(key: TaskKey, s: &ScheduleSpan) -> [String; 7] {
    [
        key.job_id.to_string(),
        key.task_index.to_string(),
        s.submit_time.to_string(),
        opt(s.schedule_time),
        opt(s.end_time),
        s.terminal.map(|t| t.name()).unwrap_or_default().to_string(),
        s.live.to_string(),
    ]
}

/// Writes violations as CSV with [`VIOLATION_HEADER`].
pub fn write_violations<'a, W: Write>(out: W, lifecycles: impl IntoIterator<Item = &'a Lifecycle>) -> Result<W> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(VIOLATION_HEADER)?;
    for life in lifecycles {
        for r in violation_records(life) {
            w.write_record(&r)?;
        }
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

/// Writes spans as CSV with [`SPAN_HEADER`].
pub fn write_spans<'a, W: Write>(
    out: W,
    spans: impl IntoIterator<Item = (TaskKey, &'a ScheduleSpan)>,
) -> Result<W> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SPAN_HEADER)?;
    for (key, s) in spans {
        w.write_record(span_record(key, s))?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}
