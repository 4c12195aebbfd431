//! Seeded synthetic traces for desk-scale testing.
//!
//! The generator builds task lifecycles that obey the trace's transition
//! graph by construction, then renders them as task events and per-window
//! usage samples. Its knobs target the qualitative shape of the real trace:
//! a constant new-submission rate, resubmission bursts, a duration mixture
//! where most tasks are short, a small production tier, and usage that
//! drifts by bounded multiplicative steps.
//!
//! Identical configs (including `seed`) produce identical bundles.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    EventKind, Micros, TaskEvent, TaskKey, TerminalClassification, MICROS_PER_SECOND, PRODUCTION_MIN_PRIORITY,
};

use super::{Machine, TraceBundle, UsageSample, MAX_USAGE_WINDOW};

fn secs(s: f64) -> Micros {
    (s * MICROS_PER_SECOND as f64).round().max(0.0) as Micros
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationShape {
    LogUniform,
    Uniform,
}

/// One component of the execution-time mixture, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DurationComponent {
    pub weight: f64,
    pub min_s: f64,
    pub max_s: f64,
    #[serde(default = "default_shape")]
    pub shape: DurationShape,
}

fn default_shape() -> DurationShape {
    DurationShape::LogUniform
}

impl DurationComponent {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.max_s <= self.min_s {
            return self.min_s;
        }
        match self.shape {
            DurationShape::Uniform => rng.random_range(self.min_s..self.max_s),
            DurationShape::LogUniform => {
                let (a, b) = (self.min_s.ln(), self.max_s.ln());
                rng.random_range(a..b).exp()
            }
        }
    }
}

/// A cluster of resubmissions around `center_s`, spread uniformly over
/// `width_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurstSpec {
    pub center_s: f64,
    pub width_s: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UsageModel {
    pub enabled: bool,
    /// Length of each usage window; at most 300 s.
    pub resolution_s: f64,
    /// Base usage as a fraction of request, drawn uniformly per task.
    pub utilization_min: f64,
    pub utilization_max: f64,
    /// Per-window persistence of the log-usage deviation (1 = random walk).
    pub persistence: f64,
    /// Ordinary steps are uniform in `[-step_bound, step_bound]` (log scale).
    pub step_bound: f64,
    /// Probability that a step is a spike instead.
    pub spike_prob: f64,
    /// Spikes are upward steps uniform in `[step_bound, spike_max]`.
    pub spike_max: f64,
    /// Clamp usage at the task's request.
    pub cap_at_request: bool,
    /// Step scale for tasks whose total run time is below
    /// `class_threshold_s` (short-lived) and at or above it (long-running).
    pub short_volatility: f64,
    pub long_volatility: f64,
    pub class_threshold_s: f64,
    /// When set, production usage and requests are rescaled so that the
    /// production tier accounts for this share of total usage.
    pub production_usage_share: Option<f64>,
}

impl Default for UsageModel {
    fn default() -> Self {
        UsageModel {
            enabled: true,
            resolution_s: 300.0,
            utilization_min: 0.3,
            utilization_max: 0.7,
            persistence: 0.95,
            step_bound: 0.08,
            spike_prob: 0.03,
            spike_max: 0.5,
            cap_at_request: true,
            short_volatility: 1.0,
            long_volatility: 1.0,
            class_threshold_s: 300.0,
            production_usage_share: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub task_count: usize,
    pub tasks_per_job: usize,
    /// New submissions arrive at a constant rate over `[0, duration_s)`.
    /// Lifecycles may run past it; the trace ends at the last event.
    pub duration_s: f64,
    pub machine_count: usize,
    pub machine_cpu: f64,
    pub machine_memory: f64,
    pub production_fraction: f64,
    pub gratis_fraction: f64,
    pub cpu_request_min: f64,
    pub cpu_request_max: f64,
    pub mem_request_min: f64,
    pub mem_request_max: f64,
    pub mean_scheduling_delay_s: f64,
    /// Probability that a pending span dies before being scheduled.
    pub pending_death_prob: f64,
    /// Probability that a running span ends in finish.
    pub finish_prob: f64,
    /// Probability that a task killed, failed, evicted or lost is resubmitted.
    pub resubmit_prob: f64,
    pub resubmit_delay_s: f64,
    pub max_resubmits: usize,
    /// Mean number of update events per span phase.
    pub update_rate: f64,
    pub execution: Vec<DurationComponent>,
    pub bursts: Vec<BurstSpec>,
    pub usage: UsageModel,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            task_count: 1000,
            tasks_per_job: 10,
            duration_s: 86_400.0,
            machine_count: 50,
            machine_cpu: 1.0,
            machine_memory: 1.0,
            production_fraction: 0.06,
            gratis_fraction: 0.25,
            cpu_request_min: 0.005,
            cpu_request_max: 0.05,
            mem_request_min: 0.005,
            mem_request_max: 0.05,
            mean_scheduling_delay_s: 5.0,
            pending_death_prob: 0.02,
            finish_prob: 0.8,
            resubmit_prob: 0.5,
            resubmit_delay_s: 30.0,
            max_resubmits: 5,
            update_rate: 0.2,
            execution: vec![
                DurationComponent {
                    weight: 0.8,
                    min_s: 8.0,
                    max_s: 1800.0,
                    shape: DurationShape::LogUniform,
                },
                DurationComponent {
                    weight: 0.2,
                    min_s: 1800.0,
                    max_s: 86_400.0,
                    shape: DurationShape::LogUniform,
                },
            ],
            bursts: Vec::new(),
            usage: UsageModel::default(),
        }
    }
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SynthConfig = toml::from_str(text).map_err(|e| Error::Config(format!("synth config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let probs = [
            ("production_fraction", self.production_fraction),
            ("gratis_fraction", self.gratis_fraction),
            ("pending_death_prob", self.pending_death_prob),
            ("finish_prob", self.finish_prob),
            ("resubmit_prob", self.resubmit_prob),
            ("usage.spike_prob", self.usage.spike_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if self.production_fraction + self.gratis_fraction > 1.0 {
            return bad("production_fraction + gratis_fraction exceeds 1".into());
        }
        let non_negative = [
            ("duration_s", self.duration_s),
            ("machine_cpu", self.machine_cpu),
            ("machine_memory", self.machine_memory),
            ("cpu_request_min", self.cpu_request_min),
            ("mem_request_min", self.mem_request_min),
            ("mean_scheduling_delay_s", self.mean_scheduling_delay_s),
            ("resubmit_delay_s", self.resubmit_delay_s),
            ("update_rate", self.update_rate),
            ("usage.step_bound", self.usage.step_bound),
            ("usage.short_volatility", self.usage.short_volatility),
            ("usage.long_volatility", self.usage.long_volatility),
            ("usage.class_threshold_s", self.usage.class_threshold_s),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} = {v} must be a non-negative number"));
            }
        }
        if self.cpu_request_max < self.cpu_request_min || self.mem_request_max < self.mem_request_min {
            return bad("request max below min".into());
        }
        if self.task_count > 0 {
            if self.duration_s <= 0.0 {
                return bad("duration_s must be positive".into());
            }
            if self.machine_count == 0 || self.tasks_per_job == 0 {
                return bad("machine_count and tasks_per_job must be positive".into());
            }
            if self.execution.is_empty() || self.execution.iter().all(|c| c.weight <= 0.0) {
                return bad("execution mixture needs a positive weight".into());
            }
        }
        for c in &self.execution {
            if !(c.weight >= 0.0 && c.min_s > 0.0 && c.max_s >= c.min_s) {
                return bad(format!("invalid execution component {c:?}"));
            }
        }
        for b in &self.bursts {
            let lo = b.center_s - b.width_s / 2.0;
            let hi = b.center_s + b.width_s / 2.0;
            if b.width_s < 0.0 || lo < 0.0 || hi > self.duration_s {
                return bad(format!(
                    "burst at {}s (width {}s) lies outside the trace duration {}s",
                    b.center_s, b.width_s, self.duration_s
                ));
            }
        }
        let u = &self.usage;
        if u.enabled {
            if !(u.resolution_s > 0.0 && secs(u.resolution_s) <= MAX_USAGE_WINDOW) {
                return bad(format!("usage.resolution_s = {} must be in (0, 300]", u.resolution_s));
            }
            if !(0.0 < u.utilization_min && u.utilization_min <= u.utilization_max) {
                return bad("usage utilization range invalid".into());
            }
            if !(0.0..=1.0).contains(&u.persistence) {
                return bad("usage.persistence must be in [0, 1]".into());
            }
            if u.spike_max < u.step_bound {
                return bad("usage.spike_max below usage.step_bound".into());
            }
            if let Some(s) = u.production_usage_share {
                if !(0.0 < s && s < 1.0) {
                    return bad("usage.production_usage_share must be in (0, 1)".into());
                }
            }
        }
        Ok(())
    }
}

/// One span of a generated lifecycle, as the generator planned it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSpan {
    pub key: TaskKey,
    pub submit: Micros,
    pub schedule: Option<Micros>,
    pub end: Micros,
    pub terminal: TerminalClassification,
    pub machine_id: u64,
}

/// Generator bookkeeping, used as ground truth in tests.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub spans: Vec<TruthSpan>,
    /// Number of spans ending in finish.
    pub completions: u64,
    /// Resubmissions placed by each configured burst.
    pub burst_resubmissions: Vec<usize>,
    /// Scale applied to production usage and requests (1 when unused).
    pub production_scale: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct SyntheticTrace {
    pub bundle: TraceBundle,
    pub truth: SynthTruth,
}

struct TaskPlan {
    key: TaskKey,
    priority: u8,
    scheduling_class: u8,
    cpu_request: f64,
    mem_request: f64,
    duration: Micros,
    spans: Vec<PlannedSpan>,
}

struct PlannedSpan {
    submit: Micros,
    pending_updates: Vec<Micros>,
    schedule: Option<Micros>,
    running_updates: Vec<Micros>,
    end: Micros,
    end_kind: EventKind,
    machine_id: u64,
}

impl PlannedSpan {
    fn terminal(&self) -> TerminalClassification {
        let state = if self.schedule.is_some() {
            crate::model::TaskState::Running
        } else {
            crate::model::TaskState::Pending
        };
        TerminalClassification::of(state, self.end_kind).expect("planned terminal is legal")
    }
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
    delay: Option<Exp<f64>>,
}

const DEATH_KINDS: [EventKind; 4] = [EventKind::Evict, EventKind::Fail, EventKind::Kill, EventKind::Lost];

impl Generator<'_> {
    fn scheduling_delay(&mut self) -> Micros {
        match self.delay {
            Some(exp) => secs(exp.sample(&mut self.rng)),
            None => 0,
        }
    }

    fn duration(&mut self) -> Micros {
        let total: f64 = self.cfg.execution.iter().map(|c| c.weight).sum();
        let mut pick = self.rng.random_range(0.0..total);
        let mut chosen = &self.cfg.execution[self.cfg.execution.len() - 1];
        for c in &self.cfg.execution {
            if pick < c.weight {
                chosen = c;
                break;
            }
            pick -= c.weight;
        }
        secs(chosen.sample(&mut self.rng)).max(1)
    }

    fn priority(&mut self) -> u8 {
        let u: f64 = self.rng.random();
        if u < self.cfg.production_fraction {
            self.rng.random_range(PRODUCTION_MIN_PRIORITY..=11)
        } else if u < self.cfg.production_fraction + self.cfg.gratis_fraction {
            self.rng.random_range(0..=1)
        } else {
            self.rng.random_range(2..=8)
        }
    }

    /// Update timestamps strictly inside `(from, to)`.
    fn updates(&mut self, from: Micros, to: Micros) -> Vec<Micros> {
        if to <= from + 1 || self.cfg.update_rate <= 0.0 {
            return Vec::new();
        }
        let mut out = Vec::new();
        // geometric count with the configured mean
        let p_more = self.cfg.update_rate / (1.0 + self.cfg.update_rate);
        while self.rng.random::<f64>() < p_more && out.len() < 16 {
            out.push(self.rng.random_range(from + 1..to));
        }
        out.sort_unstable();
        out
    }

    fn machine(&mut self) -> u64 {
        self.rng.random_range(1..=self.cfg.machine_count as u64)
    }

    /// A span starting with a submit at `submit`. Returns the span and
    /// whether the task should be resubmitted after it.
    fn span(&mut self, submit: Micros, duration: Micros, force_finish: bool) -> (PlannedSpan, bool) {
        let machine_id = self.machine();
        let delay = self.scheduling_delay();
        if !force_finish && self.rng.random::<f64>() < self.cfg.pending_death_prob {
            let end = submit + delay.max(1);
            let end_kind = DEATH_KINDS[self.rng.random_range(0..4)];
            let pending_updates = self.updates(submit, end);
            let resubmit = self.rng.random::<f64>() < self.cfg.resubmit_prob;
            let span = PlannedSpan {
                submit,
                pending_updates,
                schedule: None,
                running_updates: Vec::new(),
                end,
                end_kind,
                machine_id,
            };
            return (span, resubmit);
        }
        let schedule = submit + delay;
        let pending_updates = self.updates(submit, schedule);
        let (end, end_kind, resubmit) = if force_finish || self.rng.random::<f64>() < self.cfg.finish_prob {
            (schedule + duration, EventKind::Finish, false)
        } else {
            let cut = (duration as f64 * self.rng.random::<f64>()) as Micros;
            let kind = DEATH_KINDS[self.rng.random_range(0..4)];
            (schedule + cut, kind, self.rng.random::<f64>() < self.cfg.resubmit_prob)
        };
        let running_updates = self.updates(schedule, end);
        let span = PlannedSpan {
            submit,
            pending_updates,
            schedule: Some(schedule),
            running_updates,
            end,
            end_kind,
            machine_id,
        };
        (span, resubmit)
    }

    fn task(&mut self, index: usize) -> TaskPlan {
        let key = TaskKey::new(
            1_000 + (index / self.cfg.tasks_per_job) as u64,
            (index % self.cfg.tasks_per_job) as u32,
        );
        let submit = self.rng.random_range(0..secs(self.cfg.duration_s).max(1));
        let priority = self.priority();
        let scheduling_class = self.rng.random_range(0..=3);
        let cpu_request = draw(&mut self.rng, self.cfg.cpu_request_min, self.cfg.cpu_request_max);
        let mem_request = draw(&mut self.rng, self.cfg.mem_request_min, self.cfg.mem_request_max);
        let duration = self.duration();
        let mut spans = Vec::new();
        let mut t = submit;
        loop {
            let (span, resubmit) = self.span(t, duration, false);
            t = span.end + secs(self.cfg.resubmit_delay_s).max(1);
            spans.push(span);
            if !resubmit || spans.len() > self.cfg.max_resubmits {
                break;
            }
        }
        TaskPlan {
            key,
            priority,
            scheduling_class,
            cpu_request,
            mem_request,
            duration,
            spans,
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<SyntheticTrace> {
    config.validate()?;
    let machines: Vec<Machine> = (1..=config.machine_count as u64)
        .map(|id| Machine {
            id,
            cpu: config.machine_cpu,
            memory: config.machine_memory,
        })
        .collect();
    if config.task_count == 0 {
        return Ok(SyntheticTrace {
            bundle: TraceBundle::new(Vec::new(), Vec::new(), Vec::new()),
            truth: SynthTruth {
                burst_resubmissions: vec![0; config.bursts.len()],
                production_scale: [1.0, 1.0],
                ..SynthTruth::default()
            },
        });
    }
    let delay = if config.mean_scheduling_delay_s > 0.0 {
        Some(Exp::new(1.0 / config.mean_scheduling_delay_s).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let mut g = Generator {
        cfg: config,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        delay,
    };
    let mut tasks: Vec<TaskPlan> = (0..config.task_count).map(|i| g.task(i)).collect();
    let burst_resubmissions = place_bursts(&mut g, &mut tasks)?;

    let mut usage = Vec::new();
    let mut scale = [1.0, 1.0];
    if config.usage.enabled {
        usage = generate_usage(&mut g, &tasks);
        if let Some(share) = config.usage.production_usage_share {
            scale = rescale_production(&mut tasks, &mut usage, share);
        }
    }

    let mut events = Vec::new();
    let mut truth = SynthTruth {
        burst_resubmissions,
        production_scale: scale,
        ..SynthTruth::default()
    };
    for task in &tasks {
        let base = |time, kind| TaskEvent {
            time,
            missing_info: None,
            key: task.key,
            machine_id: None,
            kind,
            user: None,
            scheduling_class: task.scheduling_class,
            priority: task.priority,
            cpu_request: Some(task.cpu_request),
            mem_request: Some(task.mem_request),
            disk_request: None,
            different_machine: None,
        };
        for span in &task.spans {
            events.push(base(span.submit, EventKind::Submit));
            events.extend(span.pending_updates.iter().map(|&t| base(t, EventKind::UpdatePending)));
            if let Some(s) = span.schedule {
                let on_machine = |e: TaskEvent| TaskEvent {
                    machine_id: Some(span.machine_id),
                    ..e
                };
                events.push(on_machine(base(s, EventKind::Schedule)));
                events.extend(
                    span.running_updates
                        .iter()
                        .map(|&t| on_machine(base(t, EventKind::UpdateRunning))),
                );
                events.push(on_machine(base(span.end, span.end_kind)));
            } else {
                events.push(base(span.end, span.end_kind));
            }
            let terminal = span.terminal();
            truth.completions += u64::from(terminal == TerminalClassification::Finish);
            truth.spans.push(TruthSpan {
                key: task.key,
                submit: span.submit,
                schedule: span.schedule,
                end: span.end,
                terminal,
                machine_id: span.machine_id,
            });
        }
    }
    truth.spans.sort_by_key(|s| (s.key, s.submit));
    Ok(SyntheticTrace {
        bundle: TraceBundle::new(events, usage, machines),
        truth,
    })
}

/// Appends a finishing span at each burst resubmission time to a task that is
/// dead by then and has no later activity.
fn place_bursts(g: &mut Generator<'_>, tasks: &mut [TaskPlan]) -> Result<Vec<usize>> {
    let mut times: Vec<(Micros, usize)> = Vec::new();
    for (b, burst) in g.cfg.bursts.iter().enumerate() {
        for _ in 0..burst.count {
            let offset = if burst.width_s > 0.0 {
                g.rng.random_range(-burst.width_s / 2.0..burst.width_s / 2.0)
            } else {
                0.0
            };
            times.push((secs(burst.center_s + offset), b));
        }
    }
    times.sort_unstable();
    let mut placed = vec![0; g.cfg.bursts.len()];
    // candidates ordered by the end of their last span
    let mut by_end: BTreeMap<(Micros, usize), ()> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| ((t.spans.last().expect("span").end, i), ()))
        .collect();
    for (t, b) in times {
        let eligible: Vec<(Micros, usize)> = by_end.range(..(t, 0)).map(|(k, _)| *k).collect();
        if eligible.is_empty() {
            return Err(Error::Config(format!(
                "no dead task available for a burst resubmission at {}s",
                t as f64 / MICROS_PER_SECOND as f64
            )));
        }
        let pick = eligible[g.rng.random_range(0..eligible.len())];
        by_end.remove(&pick);
        let task = &mut tasks[pick.1];
        let (span, _) = g.span(t, task.duration, true);
        by_end.insert((span.end, pick.1), ());
        task.spans.push(span);
        placed[b] += 1;
    }
    Ok(placed)
}

/// Total time a task spent scheduled, summed over its spans.
fn run_time(task: &TaskPlan) -> Micros {
    task.spans
        .iter()
        .filter_map(|s| s.schedule.map(|sched| s.end - sched))
        .sum()
}

fn generate_usage(g: &mut Generator<'_>, tasks: &[TaskPlan]) -> Vec<UsageSample> {
    let model = &g.cfg.usage;
    let step = secs(model.resolution_s).max(1);
    let threshold = secs(model.class_threshold_s);
    let mut out = Vec::new();
    for task in tasks {
        let volatility = if run_time(task) < threshold {
            model.short_volatility
        } else {
            model.long_volatility
        };
        let base_cpu = task.cpu_request * draw(&mut g.rng, model.utilization_min, model.utilization_max);
        let base_mem = task.mem_request * draw(&mut g.rng, model.utilization_min, model.utilization_max);
        for span in &task.spans {
            let Some(start) = span.schedule else { continue };
            let mut x_cpu = 0.0;
            let mut x_mem = 0.0;
            let mut k = start / step;
            while k * step < span.end {
                let lo = (k * step).max(start);
                let hi = ((k + 1) * step).min(span.end);
                if hi > lo {
                    let cpu = level(base_cpu, x_cpu, task.cpu_request, model.cap_at_request);
                    let mem = level(base_mem, x_mem, task.mem_request, model.cap_at_request);
                    out.push(UsageSample {
                        window_start: lo,
                        window_end: hi,
                        key: task.key,
                        machine_id: span.machine_id,
                        cpu_usage: cpu,
                        mem_usage: mem,
                    });
                    x_cpu = model.persistence * x_cpu + shock(&mut g.rng, model, volatility);
                    x_mem = model.persistence * x_mem + shock(&mut g.rng, model, volatility);
                }
                k += 1;
            }
        }
    }
    out
}

fn level(base: f64, deviation: f64, request: f64, cap: bool) -> f64 {
    let u = base * deviation.exp();
    if cap {
        u.min(request)
    } else {
        u
    }
}

fn shock(rng: &mut ChaCha8Rng, model: &UsageModel, volatility: f64) -> f64 {
    let bound = model.step_bound * volatility;
    if rng.random::<f64>() < model.spike_prob {
        let hi = model.spike_max * volatility;
        if hi > bound {
            rng.random_range(bound..hi)
        } else {
            bound
        }
    } else if bound > 0.0 {
        rng.random_range(-bound..bound)
    } else {
        0.0
    }
}

fn rescale_production(tasks: &mut [TaskPlan], usage: &mut [UsageSample], share: f64) -> [f64; 2] {
    let production: std::collections::HashSet<TaskKey> = tasks
        .iter()
        .filter(|t| t.priority >= PRODUCTION_MIN_PRIORITY)
        .map(|t| t.key)
        .collect();
    let mut sums = [[0.0f64; 2]; 2];
    for u in usage.iter() {
        let p = usize::from(production.contains(&u.key));
        let w = u.window() as f64;
        sums[p][0] += u.cpu_usage * w;
        sums[p][1] += u.mem_usage * w;
    }
    let mut scale = [1.0, 1.0];
    for r in 0..2 {
        if sums[1][r] > 0.0 && sums[0][r] > 0.0 {
            scale[r] = share / (1.0 - share) * sums[0][r] / sums[1][r];
        }
    }
    for u in usage.iter_mut().filter(|u| production.contains(&u.key)) {
        u.cpu_usage *= scale[0];
        u.mem_usage *= scale[1];
    }
    for t in tasks.iter_mut().filter(|t| production.contains(&t.key)) {
        t.cpu_request *= scale[0];
        t.mem_request *= scale[1];
    }
    scale
}
