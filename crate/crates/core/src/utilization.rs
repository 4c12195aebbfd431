//! Usage and allocation time series and the distribution of usage changes
//! between consecutive sampling periods.
//!
//! A period value is time-weighted: each sample contributes its usage times
//! the overlap of its window with the period, divided by the period length.
//! A task present for half a period at 0.4 CPU therefore adds 0.2 to the
//! cluster value of that period.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{Cdf, SeriesPoint};
use crate::error::{Error, Result};
use crate::ingest::UsageSample;
use crate::lifecycle::ScheduleSpan;
use crate::model::{Micros, PriorityTier, Resource, TaskEvent, TaskKey, TierBands, MICROS_PER_SECOND};

/// Sampling periods below this are flagged: shorter tasks are too rare for
/// finer sampling to pay off.
pub const MIN_USEFUL_PERIOD: Micros = 8 * MICROS_PER_SECOND;

/// Denominator floor for relative changes, in request units.
pub const CHANGE_EPSILON: f64 = 1e-6;

/// Latest known priority and requests of a task.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskInfo {
    pub priority: u8,
    pub cpu_request: Option<f64>,
    pub mem_request: Option<f64>,
}

impl TaskInfo {
    pub fn request(&self, resource: Resource) -> Option<f64> {
        match resource {
            Resource::Cpu => self.cpu_request,
            Resource::Memory => self.mem_request,
        }
    }
}

pub type TaskAttributes = HashMap<TaskKey, TaskInfo>;

/// Priority and requests per task, taken from the last event that carries
/// them. A missing request never overwrites a known one.
pub fn task_attributes<'a>(events: impl IntoIterator<Item = &'a TaskEvent>) -> TaskAttributes {
    let mut out = TaskAttributes::new();
    for e in events {
        let info = out.entry(e.key).or_default();
        info.priority = e.priority;
        if e.cpu_request.is_some() {
            info.cpu_request = e.cpu_request;
        }
        if e.mem_request.is_some() {
            info.mem_request = e.mem_request;
        }
    }
    out
}

/// Which tasks a series covers. `Unattributed` holds tasks with no task
/// events, so the tier partition always adds up to the cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Cluster,
    Machine(u64),
    Tier(PriorityTier),
    Unattributed,
}

/// Tier partition used for cluster totals, in summation order.
const PARTITION: [Scope; 4] = [
    Scope::Tier(PriorityTier::Production),
    Scope::Tier(PriorityTier::Middle),
    Scope::Tier(PriorityTier::Gratis),
    Scope::Unattributed,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilSeries {
    pub period: Micros,
    pub resource: Resource,
    pub scope: Scope,
    /// One point per period from trace start; `time` is the period start.
    pub points: Vec<SeriesPoint>,
    /// Total cluster capacity for the resource.
    pub capacity: f64,
    pub warnings: Vec<String>,
}

impl UtilSeries {
    /// Time integral of the series, in request-unit microseconds.
    pub fn integral(&self) -> f64 {
        self.points.iter().map(|p| p.value).sum::<f64>() * self.period as f64
    }
}

/// Splits `[start, end)` into `(period index, overlap)` pieces.
fn split(start: Micros, end: Micros, period: Micros) -> impl Iterator<Item = (usize, Micros)> {
    let first = start / period;
    let last = if end > start { (end - 1) / period } else { first };
    (first..=last).filter_map(move |k| {
        let lo = start.max(k * period);
        let hi = end.min((k + 1) * period);
        (hi > lo).then_some((k as usize, hi - lo))
    })
}

/// Longest sample window; no series can be finer than this.
pub fn native_resolution(usage: &[UsageSample]) -> Micros {
    usage.iter().map(UsageSample::window).max().unwrap_or(0)
}

fn check_period(usage: &[UsageSample], period: Micros) -> Result<Vec<String>> {
    if period == 0 {
        return Err(Error::Config("period must be positive".into()));
    }
    let native = native_resolution(usage);
    if period < native {
        return Err(Error::Resolution(format!(
            "period {} s is finer than the {} s sample windows",
            period as f64 / MICROS_PER_SECOND as f64,
            native as f64 / MICROS_PER_SECOND as f64
        )));
    }
    let mut warnings = Vec::new();
    if period < MIN_USEFUL_PERIOD {
        let w = format!(
            "period {} s is below the 8 s minimum useful sampling period",
            period as f64 / MICROS_PER_SECOND as f64
        );
        log::warn!("{w}");
        warnings.push(w);
    }
    Ok(warnings)
}

/// Usage samples plus what is needed to scope them.
#[derive(Debug, Clone, Copy)]
pub struct UsageView<'a> {
    pub usage: &'a [UsageSample],
    pub attributes: &'a TaskAttributes,
    pub bands: TierBands,
    /// Total cluster capacity as (cpu, memory).
    pub capacity: (f64, f64),
}

impl<'a> UsageView<'a> {
    fn scope_of(&self, key: &TaskKey) -> Scope {
        match self.attributes.get(key) {
            Some(info) => Scope::Tier(self.bands.tier_of(info.priority).unwrap_or(PriorityTier::Middle)),
            None => Scope::Unattributed,
        }
    }

    fn capacity_of(&self, resource: Resource) -> f64 {
        match resource {
            Resource::Cpu => self.capacity.0,
            Resource::Memory => self.capacity.1,
        }
    }

    fn periods(&self, period: Micros) -> usize {
        self.usage
            .iter()
            .map(|s| (s.window_end.max(s.window_start + 1) - 1) / period + 1)
            .max()
            .unwrap_or(0) as usize
    }

    fn accumulate(&self, resource: Resource, period: Micros, keep: impl Fn(&UsageSample) -> bool) -> Vec<f64> {
        let mut acc = vec![0.0; self.periods(period)];
        for s in self.usage.iter().filter(|s| keep(s)) {
            let u = s.usage(resource);
            for (k, overlap) in split(s.window_start, s.window_end, period) {
                acc[k] += u * overlap as f64;
            }
        }
        acc.iter_mut().for_each(|v| *v /= period as f64);
        acc
    }

    fn series(&self, scope: Scope, resource: Resource, period: Micros, values: Vec<f64>, warnings: Vec<String>) -> UtilSeries {
        UtilSeries {
            period,
            resource,
            scope,
            points: values
                .into_iter()
                .enumerate()
                .map(|(k, value)| SeriesPoint {
                    time: k as Micros * period,
                    value,
                })
                .collect(),
            capacity: self.capacity_of(resource),
            warnings,
        }
    }

    /// Usage series at `period`. The cluster series is the sum of the tier
    /// partition, so tier series always add up to it exactly.
    pub fn util_series(&self, scope: Scope, resource: Resource, period: Micros) -> Result<UtilSeries> {
        let warnings = check_period(self.usage, period)?;
        let values = match scope {
            Scope::Cluster => {
                let parts: Vec<Vec<f64>> = PARTITION
                    .iter()
                    .map(|&p| self.accumulate(resource, period, |s| self.scope_of(&s.key) == p))
                    .collect();
                sum_parts(&parts, self.periods(period))
            }
            Scope::Machine(id) => self.accumulate(resource, period, |s| s.machine_id == id),
            scope => self.accumulate(resource, period, |s| self.scope_of(&s.key) == scope),
        };
        Ok(self.series(scope, resource, period, values, warnings))
    }

    /// Same as [`util_series`](Self::util_series), for periods finer than
    /// the analysis default. Periods below 8 s are allowed with a warning;
    /// periods finer than the data are a resolution error.
    pub fn resample(&self, scope: Scope, resource: Resource, finer_period: Micros) -> Result<UtilSeries> {
        self.util_series(scope, resource, finer_period)
    }

    /// Production, middle, gratis and unattributed series plus their sum.
    pub fn tier_breakdown(&self, resource: Resource, period: Micros) -> Result<TierBreakdown> {
        let tiers = PARTITION
            .iter()
            .map(|&s| self.util_series(s, resource, period))
            .collect::<Result<Vec<_>>>()?;
        let cluster = self.util_series(Scope::Cluster, resource, period)?;
        Ok(TierBreakdown { tiers, cluster })
    }

    /// Sum of requests of running tasks per period. Live spans run to
    /// `trace_end`. Tasks without a request for `resource` contribute zero.
    pub fn allocation_series(
        &self,
        spans: &[(TaskKey, ScheduleSpan)],
        scope: Scope,
        resource: Resource,
        period: Micros,
        trace_end: Micros,
    ) -> Result<UtilSeries> {
        if period == 0 {
            return Err(Error::Config("period must be positive".into()));
        }
        if let Scope::Machine(_) = scope {
            return Err(Error::Config("allocation series have no machine scope".into()));
        }
        let periods = spans
            .iter()
            .filter_map(|(_, s)| s.schedule_time.map(|st| s.end_time.unwrap_or(trace_end).max(st + 1)))
            .map(|end| (end - 1) / period + 1)
            .max()
            .unwrap_or(0) as usize;
        let part = |p: Scope| {
            let mut acc = vec![0.0; periods];
            for (key, s) in spans {
                if self.scope_of(key) != p {
                    continue;
                }
                let (Some(start), Some(req)) = (
                    s.schedule_time,
                    self.attributes.get(key).and_then(|i| i.request(resource)),
                ) else {
                    continue;
                };
                for (k, overlap) in split(start, s.end_time.unwrap_or(trace_end), period) {
                    acc[k] += req * overlap as f64;
                }
            }
            acc.iter_mut().for_each(|v| *v /= period as f64);
            acc
        };
        let values = match scope {
            Scope::Cluster => sum_parts(&PARTITION.map(part), periods),
            s => part(s),
        };
        Ok(self.series(scope, resource, period, values, Vec::new()))
    }
}

fn sum_parts(parts: &[Vec<f64>], n: usize) -> Vec<f64> {
    (0..n).map(|k| parts.iter().map(|p| p[k]).sum()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierBreakdown {
    /// Production, middle, gratis, unattributed.
    pub tiers: Vec<UtilSeries>,
    pub cluster: UtilSeries,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeMode {
    /// `|u1 - u0| / max(u0, epsilon)`.
    Relative,
    /// `|u1 - u0|` in request units.
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Changes of each machine's summed usage.
    Machine,
    /// Changes of each task's mean usage over the part of the period it ran.
    Task,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChangeConfig {
    pub period: Micros,
    pub mode: ChangeMode,
    pub pooling: Pooling,
    /// Drop period pairs where a task starts or stops: for machines, the
    /// task set differs or some task covers only part of a period; for
    /// tasks, either period is only partly covered.
    pub exclude_churn: bool,
}

impl Default for ChangeConfig {
    fn default() -> Self {
        ChangeConfig {
            period: 300 * MICROS_PER_SECOND,
            mode: ChangeMode::Relative,
            pooling: Pooling::Machine,
            exclude_churn: false,
        }
    }
}

impl ChangeConfig {
    pub fn change(&self, prev: f64, next: f64) -> f64 {
        let d = (next - prev).abs();
        match self.mode {
            ChangeMode::Absolute => d,
            ChangeMode::Relative => {
                if d == 0.0 {
                    0.0
                } else {
                    d / prev.max(CHANGE_EPSILON)
                }
            }
        }
    }
}

/// Pooled change samples with their CDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeDistribution {
    pub resource: Resource,
    pub config: ChangeConfig,
    /// Ordered by unit (machine id or task key), then time.
    pub samples: Vec<f64>,
    /// `(change, cumulative fraction)` at each distinct change.
    pub cdf: Vec<(f64, f64)>,
    sorted: Vec<f64>,
}

impl ChangeDistribution {
    pub fn from_samples(resource: Resource, config: ChangeConfig, samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InsufficientData(
                "need at least two consecutive periods to measure a change".into(),
            ));
        }
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mut cdf: Vec<(f64, f64)> = Vec::new();
        for (i, &x) in sorted.iter().enumerate() {
            let f = (i + 1) as f64 / n;
            match cdf.last_mut() {
                Some(last) if last.0 == x => last.1 = f,
                _ => cdf.push((x, f)),
            }
        }
        Ok(ChangeDistribution {
            resource,
            config,
            samples,
            cdf,
            sorted,
        })
    }

    /// Smallest change `x` with `F(x) >= q`.
    pub fn quantile(&self, q: f64) -> f64 {
        let n = self.sorted.len();
        let rank = (q.clamp(0.0, 1.0) * n as f64).ceil() as usize;
        self.sorted[rank.clamp(1, n) - 1]
    }

    /// F(x): fraction of changes at or below `x`.
    pub fn fraction_at_or_below(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&s| s <= x) as f64 / self.sorted.len() as f64
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Quantiles at 0.5, 0.9, 0.95 and 0.99.
    pub fn quantile_table(&self) -> BTreeMap<String, f64> {
        [0.5, 0.9, 0.95, 0.99]
            .iter()
            .map(|&q| (q.to_string(), self.quantile(q)))
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<W> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["change", "fraction"])?;
        for (x, f) in &self.cdf {
            w.write_record([x.to_string(), f.to_string()])?;
        }
        w.into_inner().map_err(|e| e.into_error().into())
    }

    /// Step CDF view over micro-units, for plotting with the other curves.
    pub fn as_cdf(&self) -> Cdf {
        Cdf::from_samples(self.sorted.iter().map(|x| (x * 1e6).round() as Micros).collect())
    }
}

#[derive(Default)]
struct PeriodAcc {
    weighted: f64,
    covered: Micros,
    tasks: Vec<(TaskKey, Micros)>,
}

/// Per-period values of one unit: `(period index, value, churn flag)`.
fn unit_periods(samples: &[&UsageSample], resource: Resource, config: &ChangeConfig) -> Vec<(usize, f64, bool)> {
    let p = config.period;
    let mut periods: BTreeMap<usize, PeriodAcc> = BTreeMap::new();
    for s in samples {
        let u = s.usage(resource);
        for (k, overlap) in split(s.window_start, s.window_end, p) {
            let acc = periods.entry(k).or_default();
            acc.weighted += u * overlap as f64;
            acc.covered += overlap;
            acc.tasks.push((s.key, overlap));
        }
    }
    let mut out = Vec::with_capacity(periods.len());
    for (k, mut acc) in periods {
        acc.tasks.sort_unstable();
        let mut merged: Vec<(TaskKey, Micros)> = Vec::new();
        for (key, c) in acc.tasks {
            match merged.last_mut() {
                Some(last) if last.0 == key => last.1 += c,
                _ => merged.push((key, c)),
            }
        }
        let partial = merged.iter().any(|&(_, c)| c < p);
        let value = match config.pooling {
            Pooling::Machine => acc.weighted / p as f64,
            Pooling::Task => acc.weighted / acc.covered as f64,
        };
        out.push((k, value, partial));
    }
    out
}

fn task_set_signature(samples: &[&UsageSample], period: Micros) -> BTreeMap<usize, Vec<TaskKey>> {
    let mut sets: BTreeMap<usize, Vec<TaskKey>> = BTreeMap::new();
    for s in samples {
        for (k, _) in split(s.window_start, s.window_end, period) {
            sets.entry(k).or_default().push(s.key);
        }
    }
    for v in sets.values_mut() {
        v.sort_unstable();
        v.dedup();
    }
    sets
}

fn unit_changes(samples: &[&UsageSample], resource: Resource, config: &ChangeConfig) -> Vec<f64> {
    let periods = unit_periods(samples, resource, config);
    let sets = match (config.pooling, config.exclude_churn) {
        (Pooling::Machine, true) => Some(task_set_signature(samples, config.period)),
        _ => None,
    };
    let mut out = Vec::new();
    match config.pooling {
        Pooling::Task => {
            for w in periods.windows(2) {
                let ((k0, u0, partial0), (k1, u1, partial1)) = (w[0], w[1]);
                if k1 != k0 + 1 || (config.exclude_churn && (partial0 || partial1)) {
                    continue;
                }
                out.push(config.change(u0, u1));
            }
        }
        Pooling::Machine => {
            // idle periods inside the machine's active range count as zero
            let (Some(first), Some(last)) = (periods.first(), periods.last()) else {
                return out;
            };
            let mut dense = vec![(0.0, false); last.0 - first.0 + 1];
            for &(k, v, partial) in &periods {
                dense[k - first.0] = (v, partial);
            }
            for i in 1..dense.len() {
                let (u0, partial0) = dense[i - 1];
                let (u1, partial1) = dense[i];
                if let Some(sets) = &sets {
                    let k = first.0 + i;
                    let churn = partial0 || partial1 || sets.get(&(k - 1)) != sets.get(&k);
                    if churn {
                        continue;
                    }
                }
                out.push(config.change(u0, u1));
            }
        }
    }
    out
}

/// Pools period-to-period changes over machines or tasks. Units are
/// processed in parallel and merged in unit order. Only samples accepted by
/// `keep` are used.
pub fn change_distribution_filtered(
    usage: &[UsageSample],
    resource: Resource,
    config: &ChangeConfig,
    keep: impl Fn(&UsageSample) -> bool + Sync,
) -> Result<ChangeDistribution> {
    let units = group_units(usage, config.pooling, &keep);
    check_period(usage, config.period)?;
    let parts: Vec<Vec<f64>> = units
        .par_iter()
        .map(|(_, samples)| unit_changes(samples, resource, config))
        .collect();
    ChangeDistribution::from_samples(resource, *config, parts.concat())
}

pub fn change_distribution(usage: &[UsageSample], resource: Resource, config: &ChangeConfig) -> Result<ChangeDistribution> {
    change_distribution_filtered(usage, resource, config, |_| true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Unit {
    Machine(u64),
    Task(TaskKey),
}

fn group_units<'a>(
    usage: &'a [UsageSample],
    pooling: Pooling,
    keep: &(impl Fn(&UsageSample) -> bool + Sync),
) -> Vec<(Unit, Vec<&'a UsageSample>)> {
    let mut units: BTreeMap<Unit, Vec<&UsageSample>> = BTreeMap::new();
    for s in usage.iter().filter(|s| keep(s)) {
        let unit = match pooling {
            Pooling::Machine => Unit::Machine(s.machine_id),
            Pooling::Task => Unit::Task(s.key),
        };
        units.entry(unit).or_default().push(s);
    }
    units.into_iter().collect()
}

/// One distribution per machine (or task), for units with at least one
/// change.
pub fn per_unit_distributions(
    usage: &[UsageSample],
    resource: Resource,
    config: &ChangeConfig,
) -> Result<BTreeMap<Unit, ChangeDistribution>> {
    check_period(usage, config.period)?;
    let units = group_units(usage, config.pooling, &|_| true);
    let parts: Vec<(Unit, Vec<f64>)> = units
        .par_iter()
        .map(|(u, samples)| (*u, unit_changes(samples, resource, config)))
        .collect();
    parts
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(u, v)| Ok((u, ChangeDistribution::from_samples(resource, *config, v)?)))
        .collect()
}
