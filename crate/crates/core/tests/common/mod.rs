//! Independent oracles shared by the integration and acceptance tests.
//!
//! Nothing here calls the library's state machine, sorting, aggregation or
//! replay code; the transition table and tie order are restated literally.

#![allow(dead_code)]
// the transition table is kept literal, one code per column
#![allow(clippy::manual_range_patterns)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use clustertrace::ingest::{TraceBundle, UsageSample};
use clustertrace::model::{EventKind, Micros, TaskEvent, TaskKey};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum St {
    Pending,
    Running,
    Dead,
}

/// Event code as written in the trace.
pub fn code(kind: EventKind) -> u8 {
    EventKind::ALL.iter().position(|&k| k == kind).expect("known kind") as u8
}

/// The corrected transition table, by event code. `None` means illegal.
pub fn next_state(from: Option<St>, code: u8) -> Option<St> {
    use St::*;
    match (from, code) {
        (None, 0) => Some(Pending),
        (Some(Dead), 0) => Some(Pending),
        (Some(Pending), 1) => Some(Running),
        (Some(Pending), 2 | 3 | 5 | 6) => Some(Dead),
        (Some(Pending), 7) => Some(Pending),
        (Some(Running), 2 | 3 | 4 | 5 | 6) => Some(Dead),
        (Some(Running), 8) => Some(Running),
        _ => None,
    }
}

/// Equal-timestamp order: submit, schedule, updates, then terminals.
pub fn rank(code: u8) -> u8 {
    [0, 1, 4, 5, 6, 7, 8, 2, 3][code as usize]
}

pub fn oracle_sort(events: &[TaskEvent]) -> Vec<TaskEvent> {
    let mut v = events.to_vec();
    v.sort_by_key(|e| (e.time, e.key.job_id, e.key.task_index, rank(code(e.kind))));
    v
}

/// Counts after all events at each distinct timestamp.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Recount {
    pub times: Vec<Micros>,
    pub queue: Vec<i64>,
    pub running: Vec<i64>,
    /// Cumulative counts per timestamp.
    pub new_submissions: Vec<u64>,
    pub submissions: Vec<u64>,
    pub schedules: Vec<u64>,
    pub completions: Vec<u64>,
    /// Legal transitions, for conservation checks.
    pub legal_submits: u64,
    pub legal_schedules: u64,
    pub finishes: u64,
    pub p_class: u64,
    pub r_class: u64,
    pub evict_pending: u64,
    pub evict_running: u64,
    pub violations: u64,
}

/// Replays the trace and recounts every task's state at every timestamp by
/// walking the whole state map.
pub fn recount(events: &[TaskEvent]) -> Recount {
    let sorted = oracle_sort(events);
    let mut state: HashMap<TaskKey, Option<St>> = HashMap::new();
    let mut seen_submit: BTreeSet<TaskKey> = BTreeSet::new();
    let mut out = Recount::default();
    let (mut new_sub, mut sub, mut sched, mut done) = (0u64, 0u64, 0u64, 0u64);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].time;
        while i < sorted.len() && sorted[i].time == t {
            let e = &sorted[i];
            let c = code(e.kind);
            let cur = state.get(&e.key).copied().flatten();
            if c == 0 {
                sub += 1;
                if seen_submit.insert(e.key) {
                    new_sub += 1;
                }
            }
            if c == 1 {
                sched += 1;
            }
            if c == 4 {
                done += 1;
            }
            match next_state(cur, c) {
                Some(next) => {
                    match (cur, c) {
                        (_, 0) => out.legal_submits += 1,
                        (_, 1) => out.legal_schedules += 1,
                        (_, 4) => out.finishes += 1,
                        (Some(St::Pending), 2) => out.evict_pending += 1,
                        (Some(St::Running), 2) => out.evict_running += 1,
                        (Some(St::Pending), 3 | 5 | 6) => out.p_class += 1,
                        (Some(St::Running), 3 | 5 | 6) => out.r_class += 1,
                        _ => {}
                    }
                    state.insert(e.key, Some(next));
                }
                None => {
                    out.violations += 1;
                    state.entry(e.key).or_insert(None);
                }
            }
            i += 1;
        }
        out.times.push(t);
        out.queue.push(state.values().filter(|s| **s == Some(St::Pending)).count() as i64);
        out.running.push(state.values().filter(|s| **s == Some(St::Running)).count() as i64);
        out.new_submissions.push(new_sub);
        out.submissions.push(sub);
        out.schedules.push(sched);
        out.completions.push(done);
    }
    out
}

/// Value of a cumulative count as a CDF fraction, computed the obvious way.
pub fn fraction(cum: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        cum as f64 / total as f64
    }
}

/// A random trace of up to `max_events` events: mostly legal walks with
/// injected illegal kinds and frequent equal timestamps, shuffled.
pub fn random_trace(seed: u64, max_events: usize) -> Vec<TaskEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_events);
    let tasks = rng.random_range(1..=400u64).min(n as u64);
    let illegal = rng.random_range(0.0..0.2);
    let mut state: HashMap<TaskKey, Option<St>> = HashMap::new();
    let mut t: Micros = rng.random_range(0..1_000_000);
    let mut events = Vec::with_capacity(n);
    for _ in 0..n {
        if rng.random_bool(0.6) {
            t += rng.random_range(1..5_000_000);
        }
        let key = TaskKey::new(rng.random_range(0..tasks.div_ceil(3).max(1)), rng.random_range(0..3u32));
        let cur = state.get(&key).copied().flatten();
        let c = if rng.random_bool(illegal) {
            rng.random_range(0..9u8)
        } else {
            let legal: Vec<u8> = (0..9).filter(|&c| next_state(cur, c).is_some()).collect();
            legal[rng.random_range(0..legal.len())]
        };
        if let Some(next) = next_state(cur, c) {
            state.insert(key, Some(next));
        }
        events.push(TaskEvent::new(t, key, EventKind::ALL[c as usize]));
    }
    // shuffle so the library's sort has work to do
    for i in (1..events.len()).rev() {
        let j = rng.random_range(0..=i);
        events.swap(i, j);
    }
    events
}

/// Reservation rule restated for the oracle.
#[derive(Debug, Clone, Copy)]
pub enum OracleRule {
    Static,
    Decay { rate: f64, margin: f64 },
    /// Relative change margin per resource (cpu, memory).
    Margin { cpu: f64, memory: f64, floor: f64 },
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct OracleReport {
    pub tasks: u64,
    pub skipped: u64,
    pub task_periods: u64,
    pub cold_starts: u64,
    pub reclaimed: [f64; 2],
    pub violations: [u64; 2],
    pub evictions: u64,
}

/// Per-task requests and priority: the last event carrying each.
pub fn oracle_attributes(events: &[TaskEvent]) -> HashMap<TaskKey, (u8, Option<f64>, Option<f64>)> {
    let mut out: HashMap<TaskKey, (u8, Option<f64>, Option<f64>)> = HashMap::new();
    for e in oracle_sort(events) {
        let a = out.entry(e.key).or_default();
        a.0 = e.priority;
        if e.cpu_request.is_some() {
            a.1 = e.cpu_request;
        }
        if e.mem_request.is_some() {
            a.2 = e.mem_request;
        }
    }
    out
}

/// Per task and period: (cpu, memory, covered, machine of the last
/// overlapping sample).
pub type PeriodMeans = BTreeMap<TaskKey, BTreeMap<u64, (f64, f64, Micros, u64)>>;

/// Mean usage of each task in each period it has data, integrating every
/// sample against every period it overlaps.
pub fn period_means(usage: &[UsageSample], period: Micros) -> PeriodMeans {
    let mut out = PeriodMeans::new();
    let horizon = usage.iter().map(|s| s.window_end).max().unwrap_or(0) / period + 1;
    for s in usage {
        for k in 0..horizon {
            let lo = s.window_start.max(k * period);
            let hi = s.window_end.min((k + 1) * period);
            if hi <= lo {
                continue;
            }
            let w = (hi - lo) as f64;
            let acc = out.entry(s.key).or_default().entry(k).or_insert((0.0, 0.0, 0, s.machine_id));
            acc.0 += s.cpu_usage * w;
            acc.1 += s.mem_usage * w;
            acc.2 += hi - lo;
            acc.3 = s.machine_id;
        }
    }
    for periods in out.values_mut() {
        for v in periods.values_mut() {
            v.0 /= v.2 as f64;
            v.1 /= v.2 as f64;
        }
    }
    out
}

/// Type-1 quantile of pooled per-task relative changes between
/// consecutive periods.
pub fn task_change_quantile(usage: &[UsageSample], period: Micros, q: f64) -> [f64; 2] {
    let means = period_means(usage, period);
    let mut changes = [Vec::new(), Vec::new()];
    for periods in means.values() {
        for (k, v) in periods {
            if let Some(next) = periods.get(&(k + 1)) {
                changes[0].push((next.0 - v.0).abs() / v.0.max(1e-6));
                changes[1].push((next.1 - v.1).abs() / v.1.max(1e-6));
            }
        }
    }
    changes.map(|mut c| {
        c.sort_by(f64::total_cmp);
        let idx = ((q * c.len() as f64).ceil() as usize).clamp(1, c.len()) - 1;
        c[idx]
    })
}

/// Straight-line replay of one policy: every task, every period, then
/// every machine-period.
pub fn oracle_simulate(bundle: &TraceBundle, rule: OracleRule, period: Micros, gratis_max: u8) -> OracleReport {
    let attrs = oracle_attributes(&bundle.task_events);
    let means = period_means(&bundle.usage, period);
    let mut report = OracleReport::default();
    // (machine, period) -> [(tier, priority, key, request, overflow)]
    type Entry = (u8, u8, TaskKey, [f64; 2], [f64; 2]);
    let mut machines: BTreeMap<(u64, u64), Vec<Entry>> = BTreeMap::new();
    for (key, periods) in &means {
        let Some(&(priority, Some(cpu_req), Some(mem_req))) = attrs.get(key) else {
            report.skipped += 1;
            continue;
        };
        report.tasks += 1;
        let tier = if priority >= 9 {
            2
        } else if priority <= gratis_max {
            0
        } else {
            1
        };
        let req = [cpu_req, mem_req];
        let mut prev: Option<(u64, [f64; 2], [f64; 2])> = None;
        for (&k, &(cpu, mem, covered, machine)) in periods {
            let u = [cpu, mem];
            let hist = prev.filter(|p| p.0 + 1 == k);
            if hist.is_none() {
                report.cold_starts += 1;
            }
            let mut res = [0.0; 2];
            let mut over = [0.0; 2];
            for r in 0..2 {
                res[r] = match (hist, rule) {
                    (None, _) | (_, OracleRule::Static) => req[r],
                    (Some((_, lu, lr)), OracleRule::Decay { rate, margin }) => {
                        let target = lu[r] * (1.0 + margin);
                        target.max(lr[r] - rate * (lr[r] - target))
                    }
                    (Some((_, lu, _)), OracleRule::Margin { cpu, memory, floor }) => {
                        let m = if r == 0 { cpu } else { memory };
                        (lu[r] * (1.0 + m)).max(lu[r] * (1.0 + floor))
                    }
                }
                .min(req[r]);
                if u[r] > res[r] * (1.0 + 1e-9) {
                    report.violations[r] += 1;
                    over[r] = u[r] - res[r];
                }
                report.reclaimed[r] += (req[r] - res[r]).max(0.0) * covered as f64 / 1e6;
            }
            report.task_periods += 1;
            machines.entry((machine, k)).or_default().push((tier, priority, *key, req, over));
            prev = Some((k, u, res));
        }
    }
    let caps: HashMap<u64, [f64; 2]> = bundle.machines.iter().map(|m| (m.id, [m.cpu, m.memory])).collect();
    for ((machine, _), mut group) in machines {
        let cap = caps.get(&machine).copied().unwrap_or([1.0, 1.0]);
        let mut demand = [0.0; 2];
        let mut limit = [0.0; 2];
        for r in 0..2 {
            let requested: f64 = group.iter().map(|g| g.3[r]).sum();
            demand[r] = requested + group.iter().map(|g| g.4[r]).sum::<f64>();
            limit[r] = cap[r].max(requested);
        }
        let over = |d: &[f64; 2]| (0..2).any(|r| d[r] > limit[r] + 1e-12);
        group.retain(|g| g.0 != 2);
        group.sort_by(|a, b| {
            (a.0, a.1)
                .cmp(&(b.0, b.1))
                .then((b.4[0] + b.4[1]).total_cmp(&(a.4[0] + a.4[1])))
                .then(a.2.cmp(&b.2))
        });
        for g in group {
            if !over(&demand) {
                break;
            }
            for (r, d) in demand.iter_mut().enumerate() {
                *d -= g.3[r] + g.4[r];
            }
            report.evictions += 1;
        }
    }
    report
}

/// Relative closeness for float totals summed in different orders.
pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}
