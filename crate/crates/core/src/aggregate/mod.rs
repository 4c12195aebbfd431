//! Event-level aggregates: per-timestamp event counts, the four event CDFs
//! and their weighted variants, queue and running series, duration moving
//! averages and the execution-time CDF.
//!
//! Everything derives from one pass over the sorted event stream
//! ([`Scanner`]). The scanner keeps one [`Tracker`] per task, so counts of
//! schedules, completions and queue/running changes only include legal
//! transitions, while the submission counts include every submit row.

mod output;
mod report;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifecycle::{ScheduleSpan, Tracker};
use crate::model::{EventKind, Micros, TaskEvent, TaskKey, MICROS_PER_SECOND};

pub use output::{write_cdf_csv, write_series_csv, write_json, CurveMeta};
pub use report::{
    detect_lumps, linear_fit_r2, observation_report, terminal_slope, Lump, LumpConfig, ObservationReport,
    ReportConfig,
};

/// Default moving-average window: one hour.
pub const DEFAULT_MA_WINDOW: Micros = 3600 * MICROS_PER_SECOND;

/// A point of a step CDF: the fraction of mass at or below `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub x: Micros,
    pub f: f64,
}

/// A step CDF with one point per distinct x carrying mass. An empty CDF has
/// no points and `total == 0`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Cdf {
    pub points: Vec<CdfPoint>,
    /// Number of samples behind the curve.
    pub total: u64,
}

impl Cdf {
    /// Builds a CDF from `(x, count)` pairs sorted by x.
    pub fn from_counts(counts: impl IntoIterator<Item = (Micros, u64)>) -> Cdf {
        let counts: Vec<(Micros, u64)> = counts.into_iter().filter(|&(_, c)| c > 0).collect();
        let total: u64 = counts.iter().map(|&(_, c)| c).sum();
        let mut acc = 0u64;
        let points = counts
            .into_iter()
            .map(|(x, c)| {
                acc += c;
                CdfPoint {
                    x,
                    f: acc as f64 / total as f64,
                }
            })
            .collect();
        Cdf { points, total }
    }

    /// Builds a CDF from unsorted samples.
    pub fn from_samples(mut samples: Vec<Micros>) -> Cdf {
        samples.sort_unstable();
        let mut counts: Vec<(Micros, u64)> = Vec::new();
        for x in samples {
            match counts.last_mut() {
                Some((last, c)) if *last == x => *c += 1,
                _ => counts.push((x, 1)),
            }
        }
        Cdf::from_counts(counts)
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// F(x): fraction of mass at or below `x`.
    pub fn at(&self, x: Micros) -> f64 {
        let i = self.points.partition_point(|p| p.x <= x);
        if i == 0 {
            0.0
        } else {
            self.points[i - 1].f
        }
    }

    /// The same curve with every f multiplied by `weight`.
    pub fn scaled(&self, weight: f64) -> Cdf {
        Cdf {
            points: self
                .points
                .iter()
                .map(|p| CdfPoint {
                    x: p.x,
                    f: p.f * weight,
                })
                .collect(),
            total: self.total,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub time: Micros,
    pub value: f64,
}

/// A step series: each value holds until the next point.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub points: Vec<SeriesPoint>,
    /// Set when some value went negative, which only happens when
    /// transitions were rejected or events were missing.
    pub negative: bool,
}

impl Series {
    /// Value in effect at `t` (zero before the first point).
    pub fn at(&self, t: Micros) -> f64 {
        let i = self.points.partition_point(|p| p.time <= t);
        if i == 0 {
            0.0
        } else {
            self.points[i - 1].value
        }
    }

    pub fn last_value(&self) -> Option<f64> {
        self.points.last().map(|p| p.value)
    }
}

/// Signed per-timestamp changes of the pending queue and the running set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaPoint {
    pub time: Micros,
    pub queue_change: i64,
    pub running_change: i64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventTotals {
    pub new_submissions: u64,
    pub completions: u64,
    pub submissions: u64,
    pub schedules: u64,
}

/// Event counts at one timestamp.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelinePoint {
    pub time: Micros,
    /// First submit row of a key.
    pub new_submissions: u64,
    /// Every submit row.
    pub submissions: u64,
    /// Every schedule row.
    pub schedules: u64,
    /// Every finish row.
    pub completions: u64,
    /// Queue and running changes count legal transitions only.
    pub queue_change: i64,
    pub running_change: i64,
    pub violations: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub points: Vec<TimelinePoint>,
}

impl Timeline {
    pub fn totals(&self) -> EventTotals {
        let mut t = EventTotals::default();
        for p in &self.points {
            t.new_submissions += p.new_submissions;
            t.completions += p.completions;
            t.submissions += p.submissions;
            t.schedules += p.schedules;
        }
        t
    }

    pub fn deltas(&self) -> Vec<DeltaPoint> {
        self.points
            .iter()
            .map(|p| DeltaPoint {
                time: p.time,
                queue_change: p.queue_change,
                running_change: p.running_change,
            })
            .collect()
    }

    pub fn start(&self) -> Option<Micros> {
        self.points.first().map(|p| p.time)
    }

    pub fn end(&self) -> Option<Micros> {
        self.points.last().map(|p| p.time)
    }
}

#[derive(Default)]
struct KeyState {
    tracker: Tracker,
    submitted: bool,
    finished: bool,
}

/// Single pass over a sorted event stream.
#[derive(Default)]
pub struct Scanner {
    keys: HashMap<TaskKey, KeyState>,
    points: Vec<TimelinePoint>,
    spans: Vec<(TaskKey, ScheduleSpan)>,
    events: u64,
    violations: u64,
}

impl Scanner {
    pub fn new() -> Self {
        Scanner::default()
    }

    /// Accounts one event. Events must arrive in non-decreasing time order.
    pub fn push(&mut self, e: &TaskEvent) -> Result<()> {
        if let Some(last) = self.points.last() {
            if e.time < last.time {
                return Err(Error::InvalidInput(format!(
                    "event at {} after event at {}: input is not sorted",
                    e.time, last.time
                )));
            }
        }
        if self.points.last().is_none_or(|p| p.time != e.time) {
            self.points.push(TimelinePoint {
                time: e.time,
                ..TimelinePoint::default()
            });
        }
        let point = self.points.last_mut().expect("point for this timestamp");
        self.events += 1;
        let key = self.keys.entry(e.key).or_default();
        // CDF counts are raw rows, violations included
        match e.kind {
            EventKind::Submit => {
                point.submissions += 1;
                point.new_submissions += u64::from(!key.submitted);
                key.submitted = true;
            }
            EventKind::Schedule => point.schedules += 1,
            EventKind::Finish => {
                point.completions += 1;
                key.finished = true;
            }
            _ => {}
        }
        let step = key.tracker.step(e);
        if step.is_violation() {
            point.violations += 1;
            self.violations += 1;
            return Ok(());
        }
        match e.kind {
            EventKind::Submit => point.queue_change += 1,
            EventKind::Schedule => {
                point.queue_change -= 1;
                point.running_change += 1;
            }
            _ => {}
        }
        if let Some(t) = step.terminal {
            if t.leaves_queue() {
                point.queue_change -= 1;
            } else {
                point.running_change -= 1;
            }
        }
        if let Some(span) = step.closed {
            self.spans.push((e.key, span));
        }
        Ok(())
    }

    pub fn finish(self) -> Scan {
        let mut live: Vec<(TaskKey, ScheduleSpan)> = self
            .keys
            .iter()
            .filter_map(|(k, s)| s.tracker.live_span().map(|span| (*k, span)))
            .collect();
        live.sort_by_key(|(k, s)| (*k, s.submit_time));
        let mut spans = self.spans;
        spans.extend(live);
        Scan {
            distinct_tasks: self.keys.len() as u64,
            completed_tasks: self.keys.values().filter(|s| s.finished).count() as u64,
            events: self.events,
            violations: self.violations,
            timeline: Timeline { points: self.points },
            spans,
        }
    }
}

/// Result of a [`Scanner`] pass.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scan {
    pub timeline: Timeline,
    /// Closed spans in end order, then live spans in key order.
    pub spans: Vec<(TaskKey, ScheduleSpan)>,
    pub distinct_tasks: u64,
    /// Tasks with at least one finish event.
    pub completed_tasks: u64,
    pub events: u64,
    pub violations: u64,
}

pub fn scan<'a>(events: impl IntoIterator<Item = &'a TaskEvent>) -> Result<Scan> {
    let mut s = Scanner::new();
    for e in events {
        s.push(e)?;
    }
    Ok(s.finish())
}

/// The four event CDFs over trace time, each normalized by its own total.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventCdfs {
    pub new_submission: Cdf,
    pub completion: Cdf,
    pub submission: Cdf,
    pub scheduling: Cdf,
    pub totals: EventTotals,
}

pub fn event_cdfs(timeline: &Timeline) -> EventCdfs {
    let pick = |f: fn(&TimelinePoint) -> u64| Cdf::from_counts(timeline.points.iter().map(|p| (p.time, f(p))));
    EventCdfs {
        new_submission: pick(|p| p.new_submissions),
        completion: pick(|p| p.completions),
        submission: pick(|p| p.submissions),
        scheduling: pick(|p| p.schedules),
        totals: timeline.totals(),
    }
}

/// Completion, submission and scheduling CDFs scaled by their totals
/// relative to new submissions. The new-submission CDF is the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedCdfs {
    pub completion: Cdf,
    pub submission: Cdf,
    pub scheduling: Cdf,
    pub completion_weight: f64,
    pub submission_weight: f64,
    pub scheduling_weight: f64,
}

pub fn weighted_cdfs(cdfs: &EventCdfs) -> Result<WeightedCdfs> {
    let t = cdfs.totals;
    if t.new_submissions == 0 {
        return Err(Error::UndefinedWeight("no new submissions to weigh against".into()));
    }
    let base = t.new_submissions as f64;
    let (cw, sw, kw) = (t.completions as f64 / base, t.submissions as f64 / base, t.schedules as f64 / base);
    Ok(WeightedCdfs {
        completion: cdfs.completion.scaled(cw),
        submission: cdfs.submission.scaled(sw),
        scheduling: cdfs.scheduling.scaled(kw),
        completion_weight: cw,
        submission_weight: sw,
        scheduling_weight: kw,
    })
}

fn prefix_series(timeline: &Timeline, change: fn(&TimelinePoint) -> i64) -> Series {
    let mut acc = 0i64;
    let mut series = Series::default();
    let n = timeline.points.len();
    for (i, p) in timeline.points.iter().enumerate() {
        let d = change(p);
        acc += d;
        series.negative |= acc < 0;
        if d != 0 || i == 0 || i + 1 == n {
            series.points.push(SeriesPoint {
                time: p.time,
                value: acc as f64,
            });
        }
    }
    series
}

/// Number of pending tasks: the prefix sum of the queue change, with points
/// where it changes plus the first and last timestamps.
pub fn queue_series(timeline: &Timeline) -> Series {
    prefix_series(timeline, |p| p.queue_change)
}

/// Number of running tasks, built like [`queue_series`].
pub fn running_series(timeline: &Timeline) -> Series {
    prefix_series(timeline, |p| p.running_change)
}

/// Mean duration of the samples in `(t - window, t]`, at each distinct
/// sample time `t`. Samples are `(time, duration)` and are sorted here.
pub fn moving_average(samples: &[(Micros, Micros)], window: Micros) -> Result<Vec<SeriesPoint>> {
    if window == 0 {
        return Err(Error::Config("moving-average window must be positive".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let mut out = Vec::new();
    let mut lo = 0usize;
    let mut sum: u128 = 0;
    let mut i = 0usize;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            sum += u128::from(sorted[i].1);
            i += 1;
        }
        while lo < i && sorted[lo].0 + window <= t {
            sum -= u128::from(sorted[lo].1);
            lo += 1;
        }
        out.push(SeriesPoint {
            time: t,
            value: sum as f64 / (i - lo) as f64,
        });
    }
    Ok(out)
}

/// `(end_time, execution_time)` for closed spans that were scheduled.
pub fn execution_samples<'a>(spans: impl IntoIterator<Item = &'a ScheduleSpan>) -> Vec<(Micros, Micros)> {
    spans
        .into_iter()
        .filter_map(|s| Some((s.end_time?, s.execution_time()?)))
        .collect()
}

/// `(schedule_time, scheduling_time)` for spans that were scheduled.
pub fn scheduling_samples<'a>(spans: impl IntoIterator<Item = &'a ScheduleSpan>) -> Vec<(Micros, Micros)> {
    spans
        .into_iter()
        .filter_map(|s| Some((s.schedule_time?, s.scheduling_time()?)))
        .collect()
}

/// CDF of span execution times. `finished_only` keeps spans that ended in
/// finish. Live spans never contribute.
pub fn exec_time_cdf<'a>(spans: impl IntoIterator<Item = &'a ScheduleSpan>, finished_only: bool) -> Cdf {
    let samples = spans
        .into_iter()
        .filter(|s| !finished_only || s.finished())
        .filter_map(|s| s.execution_time())
        .collect();
    Cdf::from_samples(samples)
}

/// Samples a step series on a regular grid over `[start, end]`.
pub fn densify(series: &Series, start: Micros, end: Micros, step: Micros) -> Result<Vec<SeriesPoint>> {
    if step == 0 {
        return Err(Error::Config("densify step must be positive".into()));
    }
    let mut out = Vec::new();
    let mut t = start;
    while t <= end {
        out.push(SeriesPoint {
            time: t,
            value: series.at(t),
        });
        t = match t.checked_add(step) {
            Some(n) => n,
            None => break,
        };
    }
    Ok(out)
}
