//! Trace-driven replay of reservation policies.
//!
//! Usage is cut into periods of the policy's sampling length. For each task
//! and period the replay knows the task's mean usage over the time it ran in
//! that period. The reservation for period k is decided from periods up to
//! k-1 only; the first period of a run (or the first after a gap) is a cold
//! start and reserves the full request.
//!
//! Reclaimed capacity counts `(request - reservation)` over the seconds the
//! task ran. A violation is a task-period where usage exceeds the
//! reservation.
//!
//! Evictions model what reclamation would cost. The capacity a policy frees
//! is assumed to be handed to other work, so a machine's demand in a period
//! is the sum of requests plus every task's overflow above its reservation.
//! When that exceeds the machine's capacity (or the sum of requests, if the
//! trace already overcommits the machine), non-production tasks are evicted
//! in order: lowest tier, lowest priority, largest overflow, then task key.
//! Evictions are counted only; the replay itself is not altered.

mod classes;
mod policy;

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{TraceBundle, UsageSample};
use crate::model::{Micros, PriorityTier, Resource, TaskKey, TierBands, MICROS_PER_SECOND};
use crate::utilization::{
    change_distribution_filtered, native_resolution, task_attributes, ChangeConfig, ChangeMode, TaskAttributes,
    MIN_USEFUL_PERIOD,
};

pub use classes::{per_class_distributions, task_classes, ClassDistribution, ClassDistributions, TaskClass};
pub use policy::{reserve, MarginSource, Policy, PolicyVariant, ReserveRule};

/// A value per resource.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerResource<T> {
    pub cpu: T,
    pub memory: T,
}

impl<T: Copy> PerResource<T> {
    pub fn get(&self, r: Resource) -> T {
        match r {
            Resource::Cpu => self.cpu,
            Resource::Memory => self.memory,
        }
    }

    fn set(&mut self, r: Resource, v: T) {
        match r {
            Resource::Cpu => self.cpu = v,
            Resource::Memory => self.memory = v,
        }
    }
}

/// Relative slack before usage counts as exceeding a reservation. Period
/// means are weighted sums, so usage capped at the request can land a few
/// ulps above it.
pub const VIOLATION_TOLERANCE: f64 = 1e-9;

/// One task's usage within one period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskPeriod {
    pub index: u64,
    /// Mean usage over the covered part of the period.
    pub usage: PerResource<f64>,
    pub covered: Micros,
    /// Machine of the last sample in the period.
    pub machine_id: u64,
}

/// Weighted cpu and memory sums, covered time and last machine.
type PeriodAcc = (f64, f64, Micros, u64);

/// Per-task period usage at `period`, in key order.
pub fn task_periods(usage: &[UsageSample], period: Micros) -> BTreeMap<TaskKey, Vec<TaskPeriod>> {
    let mut by_task: BTreeMap<TaskKey, BTreeMap<u64, PeriodAcc>> = BTreeMap::new();
    for s in usage {
        let periods = by_task.entry(s.key).or_default();
        let last = if s.window_end > s.window_start {
            (s.window_end - 1) / period
        } else {
            s.window_start / period
        };
        for k in s.window_start / period..=last {
            let lo = s.window_start.max(k * period);
            let hi = s.window_end.min((k + 1) * period);
            if hi <= lo {
                continue;
            }
            let w = (hi - lo) as f64;
            let acc = periods.entry(k).or_insert((0.0, 0.0, 0, s.machine_id));
            acc.0 += s.cpu_usage * w;
            acc.1 += s.mem_usage * w;
            acc.2 += hi - lo;
            acc.3 = s.machine_id;
        }
    }
    by_task
        .into_iter()
        .map(|(key, periods)| {
            let list = periods
                .into_iter()
                .map(|(index, (cpu, mem, covered, machine_id))| TaskPeriod {
                    index,
                    usage: PerResource {
                        cpu: cpu / covered as f64,
                        memory: mem / covered as f64,
                    },
                    covered,
                    machine_id,
                })
                .collect();
            (key, list)
        })
        .collect()
}

/// Margin values the replay uses, after measuring the trace if needed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedMargins {
    pub mode: ChangeMode,
    pub pooled: PerResource<f64>,
    /// Short-lived and long-running margins when configured per class.
    pub by_class: Option<BTreeMap<TaskClass, PerResource<f64>>>,
    pub class_threshold: Option<Micros>,
    pub samples: PerResource<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TierStats {
    pub task_periods: u64,
    pub reclaimed: PerResource<f64>,
    pub violations: PerResource<u64>,
    pub evictions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: String,
    pub config: Policy,
    pub sampling_period: Micros,
    pub margins: Option<ResolvedMargins>,
    pub tasks: u64,
    /// Tasks with usage but no CPU or memory request.
    pub skipped_tasks: u64,
    pub task_periods: u64,
    pub cold_starts: u64,
    /// Integral of `request - reservation`, in request-unit seconds.
    pub reclaimed: PerResource<f64>,
    pub violations: PerResource<u64>,
    pub violation_rate: PerResource<f64>,
    /// Task-periods violating on either resource.
    pub any_violations: u64,
    pub evictions_triggered: u64,
    /// Machine-periods still over capacity after evicting every
    /// non-production task.
    pub unresolved_overloads: u64,
    pub per_tier: BTreeMap<PriorityTier, TierStats>,
    pub warnings: Vec<String>,
}

impl SimReport {
    pub fn total_reclaimed(&self) -> f64 {
        self.reclaimed.cpu + self.reclaimed.memory
    }
}

/// Cluster totals per period, normalized by the period length.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SimSeriesPoint {
    pub time: Micros,
    pub used: PerResource<f64>,
    pub reserved: PerResource<f64>,
    pub requested: PerResource<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimSeries {
    pub period: Micros,
    pub points: Vec<SimSeriesPoint>,
}

impl SimSeries {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<W> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "time",
            "cpu_used",
            "cpu_reserved",
            "cpu_requested",
            "memory_used",
            "memory_reserved",
            "memory_requested",
        ])?;
        for p in &self.points {
            w.write_record([
                p.time.to_string(),
                p.used.cpu.to_string(),
                p.reserved.cpu.to_string(),
                p.requested.cpu.to_string(),
                p.used.memory.to_string(),
                p.reserved.memory.to_string(),
                p.requested.memory.to_string(),
            ])?;
        }
        w.into_inner().map_err(|e| e.into_error().into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutput {
    pub report: SimReport,
    pub series: SimSeries,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub bands: TierBands,
}

/// Replay state shared by every policy over one bundle.
pub struct Replay<'a> {
    bundle: &'a TraceBundle,
    attributes: TaskAttributes,
    capacities: HashMap<u64, PerResource<f64>>,
    classes: Option<BTreeMap<TaskKey, TaskClass>>,
    options: SimOptions,
    periods: HashMap<Micros, BTreeMap<TaskKey, Vec<TaskPeriod>>>,
}

/// One task-period outcome, kept for the machine-level pass.
#[derive(Debug, Clone, Copy)]
struct Record {
    machine_id: u64,
    index: u64,
    key: TaskKey,
    tier: PriorityTier,
    priority: u8,
    request: PerResource<f64>,
    overflow: PerResource<f64>,
}

impl<'a> Replay<'a> {
    pub fn new(bundle: &'a TraceBundle, options: SimOptions) -> Self {
        Replay {
            bundle,
            attributes: task_attributes(&bundle.task_events),
            capacities: bundle
                .machines
                .iter()
                .map(|m| {
                    (
                        m.id,
                        PerResource {
                            cpu: m.cpu,
                            memory: m.memory,
                        },
                    )
                })
                .collect(),
            classes: None,
            options,
            periods: HashMap::new(),
        }
    }

    fn periods(&mut self, period: Micros) -> &BTreeMap<TaskKey, Vec<TaskPeriod>> {
        let usage = &self.bundle.usage;
        self.periods.entry(period).or_insert_with(|| task_periods(usage, period))
    }

    fn resolve(&mut self, policy: &Policy) -> Result<Option<ResolvedMargins>> {
        let PolicyVariant::ChangeQuantileMargin { quantile, source, .. } = &policy.variant else {
            return Ok(None);
        };
        match source {
            MarginSource::Fixed { cpu, memory, mode } => Ok(Some(ResolvedMargins {
                mode: *mode,
                pooled: PerResource {
                    cpu: *cpu,
                    memory: *memory,
                },
                by_class: None,
                class_threshold: None,
                samples: PerResource::default(),
            })),
            MarginSource::Measured {
                pooling,
                exclude_churn,
                mode,
                per_class,
                class_threshold_s,
            } => {
                let config = ChangeConfig {
                    period: policy.period(),
                    mode: *mode,
                    pooling: *pooling,
                    exclude_churn: *exclude_churn,
                };
                let usage = &self.bundle.usage;
                let mut pooled = PerResource::default();
                let mut samples = PerResource::default();
                for r in Resource::ALL {
                    let d = change_distribution_filtered(usage, r, &config, |_| true)?;
                    pooled.set(r, d.quantile(*quantile));
                    samples.set(r, d.len());
                }
                let mut by_class = None;
                let mut class_threshold = None;
                if *per_class {
                    let threshold = (class_threshold_s * MICROS_PER_SECOND as f64).round() as Micros;
                    let classes = task_classes(self.bundle, threshold);
                    let mut margins = BTreeMap::new();
                    for class in [TaskClass::ShortLived, TaskClass::LongRunning] {
                        let mut m = pooled;
                        for r in Resource::ALL {
                            let keep = |s: &UsageSample| classes.get(&s.key) == Some(&class);
                            // a class without changes falls back to the pooled margin
                            if let Ok(d) = change_distribution_filtered(usage, r, &config, keep) {
                                m.set(r, d.quantile(*quantile));
                            }
                        }
                        margins.insert(class, m);
                    }
                    by_class = Some(margins);
                    class_threshold = Some(threshold);
                    self.classes = Some(classes);
                }
                Ok(Some(ResolvedMargins {
                    mode: *mode,
                    pooled,
                    by_class,
                    class_threshold,
                    samples,
                }))
            }
        }
    }

    fn rule(&self, policy: &Policy, margins: Option<&ResolvedMargins>, key: &TaskKey, r: Resource) -> ReserveRule {
        match &policy.variant {
            PolicyVariant::RequestStatic => ReserveRule::Static,
            PolicyVariant::BorgDecay {
                decay_rate,
                margin_fraction,
            } => ReserveRule::Decay {
                rate: *decay_rate,
                margin: *margin_fraction,
            },
            PolicyVariant::ChangeQuantileMargin { floor_fraction, .. } => {
                let m = margins.expect("margins resolved for change-quantile policies");
                let per_class = m.by_class.as_ref().and_then(|by| {
                    let class = self.classes.as_ref()?.get(key)?;
                    by.get(class)
                });
                ReserveRule::Margin {
                    change: per_class.unwrap_or(&m.pooled).get(r),
                    mode: m.mode,
                    floor: *floor_fraction,
                }
            }
        }
    }

    pub fn simulate(&mut self, policy: &Policy) -> Result<SimOutput> {
        policy.validate()?;
        let period = policy.period();
        let native = native_resolution(&self.bundle.usage);
        if period < native {
            return Err(Error::Resolution(format!(
                "sampling period {} s is finer than the {} s usage windows",
                policy.sampling_period_s,
                native as f64 / MICROS_PER_SECOND as f64
            )));
        }
        let mut warnings = Vec::new();
        if period < MIN_USEFUL_PERIOD {
            let w = format!("sampling period {} s is below 8 s", policy.sampling_period_s);
            log::warn!("{w}");
            warnings.push(w);
        }
        let margins = self.resolve(policy)?;
        self.periods(period);
        let periods = &self.periods[&period];

        // per-task replay, in parallel, merged in key order
        let tasks: Vec<(&TaskKey, &Vec<TaskPeriod>)> = periods.iter().collect();
        let outcomes: Vec<Option<TaskOutcome>> = tasks
            .par_iter()
            .map(|(key, list)| self.replay_task(policy, margins.as_ref(), key, list, period))
            .collect();

        let mut report = SimReport {
            policy: policy.describe(),
            config: policy.clone(),
            sampling_period: period,
            margins: margins.clone(),
            tasks: 0,
            skipped_tasks: 0,
            task_periods: 0,
            cold_starts: 0,
            reclaimed: PerResource::default(),
            violations: PerResource::default(),
            violation_rate: PerResource::default(),
            any_violations: 0,
            evictions_triggered: 0,
            unresolved_overloads: 0,
            per_tier: BTreeMap::new(),
            warnings,
        };
        let n_periods = periods
            .values()
            .filter_map(|l| l.last())
            .map(|p| p.index + 1)
            .max()
            .unwrap_or(0) as usize;
        let mut series = SimSeries {
            period,
            points: (0..n_periods)
                .map(|k| SimSeriesPoint {
                    time: k as Micros * period,
                    ..SimSeriesPoint::default()
                })
                .collect(),
        };
        let mut records = Vec::new();
        for outcome in outcomes {
            let Some(o) = outcome else {
                report.skipped_tasks += 1;
                continue;
            };
            report.tasks += 1;
            report.task_periods += o.stats.task_periods;
            report.cold_starts += o.cold_starts;
            report.any_violations += o.any_violations;
            for r in Resource::ALL {
                report.reclaimed.set(r, report.reclaimed.get(r) + o.stats.reclaimed.get(r));
                report.violations.set(r, report.violations.get(r) + o.stats.violations.get(r));
            }
            let tier = report.per_tier.entry(o.tier).or_default();
            tier.task_periods += o.stats.task_periods;
            for r in Resource::ALL {
                tier.reclaimed.set(r, tier.reclaimed.get(r) + o.stats.reclaimed.get(r));
                tier.violations.set(r, tier.violations.get(r) + o.stats.violations.get(r));
            }
            for (k, p) in o.series {
                let point = &mut series.points[k as usize];
                for r in Resource::ALL {
                    point.used.set(r, point.used.get(r) + p.used.get(r));
                    point.reserved.set(r, point.reserved.get(r) + p.reserved.get(r));
                    point.requested.set(r, point.requested.get(r) + p.requested.get(r));
                }
            }
            records.extend(o.records);
        }
        for r in Resource::ALL {
            let rate = if report.task_periods > 0 {
                report.violations.get(r) as f64 / report.task_periods as f64
            } else {
                0.0
            };
            report.violation_rate.set(r, rate);
        }
        let (evictions, unresolved) = self.evict(records);
        report.unresolved_overloads = unresolved;
        for (tier, n) in evictions {
            report.evictions_triggered += n;
            report.per_tier.entry(tier).or_default().evictions += n;
        }
        Ok(SimOutput { report, series })
    }

    fn replay_task(
        &self,
        policy: &Policy,
        margins: Option<&ResolvedMargins>,
        key: &TaskKey,
        list: &[TaskPeriod],
        period: Micros,
    ) -> Option<TaskOutcome> {
        let info = self.attributes.get(key)?;
        let request = PerResource {
            cpu: info.cpu_request?,
            memory: info.mem_request?,
        };
        let tier = self.options.bands.tier_of(info.priority).ok()?;
        let rules = PerResource {
            cpu: self.rule(policy, margins, key, Resource::Cpu),
            memory: self.rule(policy, margins, key, Resource::Memory),
        };
        let mut out = TaskOutcome {
            tier,
            stats: TierStats::default(),
            cold_starts: 0,
            any_violations: 0,
            series: Vec::with_capacity(list.len()),
            records: Vec::with_capacity(list.len()),
        };
        let mut prev: Option<(u64, PerResource<f64>, PerResource<f64>)> = None;
        for p in list {
            let history = prev.filter(|(k, _, _)| k + 1 == p.index);
            if history.is_none() {
                out.cold_starts += 1;
            }
            let mut reservation = PerResource::default();
            let mut overflow = PerResource::default();
            let mut any = false;
            let secs = p.covered as f64 / MICROS_PER_SECOND as f64;
            let frac = p.covered as f64 / period as f64;
            let mut point = SimSeriesPoint::default();
            for r in Resource::ALL {
                let res = reserve(
                    &rules.get(r),
                    history.map(|h| h.1.get(r)),
                    history.map(|h| h.2.get(r)),
                    Some(request.get(r)),
                )
                .expect("request present");
                reservation.set(r, res);
                let u = p.usage.get(r);
                if u > res * (1.0 + VIOLATION_TOLERANCE) {
                    any = true;
                    out.stats.violations.set(r, out.stats.violations.get(r) + 1);
                    overflow.set(r, u - res);
                }
                let gain = (request.get(r) - res).max(0.0) * secs;
                out.stats.reclaimed.set(r, out.stats.reclaimed.get(r) + gain);
                point.used.set(r, u * frac);
                point.reserved.set(r, res * frac);
                point.requested.set(r, request.get(r) * frac);
            }
            out.any_violations += u64::from(any);
            out.stats.task_periods += 1;
            out.series.push((p.index, point));
            out.records.push(Record {
                machine_id: p.machine_id,
                index: p.index,
                key: *key,
                tier,
                priority: info.priority,
                request,
                overflow,
            });
            prev = Some((p.index, p.usage, reservation));
        }
        Some(out)
    }

    /// Machine-level eviction pass. Returns evictions per tier and the
    /// number of machine-periods that stayed overloaded.
    fn evict(&self, mut records: Vec<Record>) -> (BTreeMap<PriorityTier, u64>, u64) {
        records.sort_by_key(|r| (r.machine_id, r.index, r.key));
        let mut groups: Vec<&[Record]> = Vec::new();
        let mut start = 0;
        for i in 1..=records.len() {
            if i == records.len() || (records[i].machine_id, records[i].index) != (records[start].machine_id, records[start].index) {
                if i > start {
                    groups.push(&records[start..i]);
                }
                start = i;
            }
        }
        let results: Vec<(Vec<PriorityTier>, bool)> = groups
            .par_iter()
            .map(|g| {
                let cap = self.capacities.get(&g[0].machine_id).copied().unwrap_or(PerResource {
                    cpu: 1.0,
                    memory: 1.0,
                });
                machine_period_evictions(g, cap)
            })
            .collect();
        let mut by_tier = BTreeMap::new();
        let mut unresolved = 0;
        for (evicted, over) in results {
            for t in evicted {
                *by_tier.entry(t).or_insert(0) += 1;
            }
            unresolved += u64::from(over);
        }
        (by_tier, unresolved)
    }
}

#[derive(Debug)]
struct TaskOutcome {
    tier: PriorityTier,
    stats: TierStats,
    cold_starts: u64,
    any_violations: u64,
    series: Vec<(u64, SimSeriesPoint)>,
    records: Vec<Record>,
}

/// Evictions needed on one machine in one period.
fn machine_period_evictions(group: &[Record], capacity: PerResource<f64>) -> (Vec<PriorityTier>, bool) {
    let mut demand = PerResource::<f64>::default();
    let mut limit = PerResource::<f64>::default();
    for r in Resource::ALL {
        let requested: f64 = group.iter().map(|x| x.request.get(r)).sum();
        let overflow: f64 = group.iter().map(|x| x.overflow.get(r)).sum();
        demand.set(r, requested + overflow);
        limit.set(r, capacity.get(r).max(requested));
    }
    let over = |d: &PerResource<f64>| Resource::ALL.iter().any(|&r| d.get(r) > limit.get(r) + 1e-12);
    if !over(&demand) {
        return (Vec::new(), false);
    }
    let mut candidates: Vec<&Record> = group.iter().filter(|x| x.tier != PriorityTier::Production).collect();
    candidates.sort_by(|a, b| {
        a.tier
            .cmp(&b.tier)
            .then(a.priority.cmp(&b.priority))
            .then((b.overflow.cpu + b.overflow.memory).total_cmp(&(a.overflow.cpu + a.overflow.memory)))
            .then(a.key.cmp(&b.key))
    });
    let mut evicted = Vec::new();
    for c in candidates {
        if !over(&demand) {
            break;
        }
        for r in Resource::ALL {
            demand.set(r, demand.get(r) - c.request.get(r) - c.overflow.get(r));
        }
        evicted.push(c.tier);
    }
    let still = over(&demand);
    (evicted, still)
}

/// Replays one policy.
pub fn simulate(bundle: &TraceBundle, policy: &Policy) -> Result<SimOutput> {
    Replay::new(bundle, SimOptions::default()).simulate(policy)
}

/// One report per policy over the same replay, sorted by total reclaimed
/// capacity (largest first; ties keep input order).
pub fn compare_policies(bundle: &TraceBundle, policies: &[Policy], options: SimOptions) -> Result<Vec<SimReport>> {
    if policies.is_empty() {
        return Err(Error::Policy("no policies to compare".into()));
    }
    let mut replay = Replay::new(bundle, options);
    let mut reports = Vec::with_capacity(policies.len());
    for p in policies {
        reports.push(replay.simulate(p)?.report);
    }
    reports.sort_by(|a, b| b.total_reclaimed().total_cmp(&a.total_reclaimed()));
    Ok(reports)
}
