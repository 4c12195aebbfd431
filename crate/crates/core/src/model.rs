//! Domain types shared by every stage of the pipeline, and the task state
//! machine observed in the trace.
//!
//! A task is in one of three states (pending, running, dead). The transition
//! relation implemented here is the one the trace actually exhibits, which
//! differs from the documented graph in two ways: a pending task can be
//! evicted, and a pending task can never receive a second submit.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Microseconds since trace start.
pub type Micros = u64;

pub const MICROS_PER_SECOND: u64 = 1_000_000;

/// Unique task identity: job id plus the task's index within the job.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskKey {
    pub job_id: u64,
    pub task_index: u32,
}

impl TaskKey {
    pub fn new(job_id: u64, task_index: u32) -> Self {
        TaskKey { job_id, task_index }
    }
}

impl fmt::Display for TaskKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.job_id, self.task_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Submit,
    Schedule,
    Evict,
    Fail,
    Finish,
    Kill,
    Lost,
    UpdatePending,
    UpdateRunning,
}

impl EventKind {
    pub const ALL: [EventKind; 9] = [
        EventKind::Submit,
        EventKind::Schedule,
        EventKind::Evict,
        EventKind::Fail,
        EventKind::Finish,
        EventKind::Kill,
        EventKind::Lost,
        EventKind::UpdatePending,
        EventKind::UpdateRunning,
    ];

    /// Numeric event code used by the clusterdata files.
    pub fn code(self) -> u8 {
        match self {
            EventKind::Submit => 0,
            EventKind::Schedule => 1,
            EventKind::Evict => 2,
            EventKind::Fail => 3,
            EventKind::Finish => 4,
            EventKind::Kill => 5,
            EventKind::Lost => 6,
            EventKind::UpdatePending => 7,
            EventKind::UpdateRunning => 8,
        }
    }

    pub fn from_code(code: u8) -> Option<EventKind> {
        EventKind::ALL.get(code as usize).copied()
    }

    /// Rank used to break ties between events with equal timestamps.
    ///
    /// Submit < Schedule < UpdatePending < UpdateRunning < Evict < Fail <
    /// Finish < Kill < Lost, so that a legal lifecycle stays legal after
    /// sorting.
    pub fn tie_rank(self) -> u8 {
        match self {
            EventKind::Submit => 0,
            EventKind::Schedule => 1,
            EventKind::UpdatePending => 2,
            EventKind::UpdateRunning => 3,
            EventKind::Evict => 4,
            EventKind::Fail => 5,
            EventKind::Finish => 6,
            EventKind::Kill => 7,
            EventKind::Lost => 8,
        }
    }

    pub fn is_update(self) -> bool {
        matches!(self, EventKind::UpdatePending | EventKind::UpdateRunning)
    }

    /// Events that move a task into the dead state.
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            EventKind::Evict | EventKind::Fail | EventKind::Finish | EventKind::Kill | EventKind::Lost
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            EventKind::Submit => "submit",
            EventKind::Schedule => "schedule",
            EventKind::Evict => "evict",
            EventKind::Fail => "fail",
            EventKind::Finish => "finish",
            EventKind::Kill => "kill",
            EventKind::Lost => "lost",
            EventKind::UpdatePending => "update_pending",
            EventKind::UpdateRunning => "update_running",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskState {
    Pending,
    Running,
    Dead,
}

impl TaskState {
    pub const ALL: [TaskState; 3] = [TaskState::Pending, TaskState::Running, TaskState::Dead];

    pub fn name(self) -> &'static str {
        match self {
            TaskState::Pending => "pending",
            TaskState::Running => "running",
            TaskState::Dead => "dead",
        }
    }
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Successor state for `(from, kind)`, or `None` when the trace's transition
/// graph has no such edge.
///
/// Update events are self-loops: `UpdatePending` only while pending and
/// `UpdateRunning` only while running.
pub fn legal_transition(from: TaskState, kind: EventKind) -> Option<TaskState> {
    use EventKind::*;
    use TaskState::*;
    match (from, kind) {
        (Pending, Schedule) => Some(Running),
        (Pending, Fail | Kill | Lost | Evict) => Some(Dead),
        (Pending, UpdatePending) => Some(Pending),
        (Running, Finish | Evict | Fail | Kill | Lost) => Some(Dead),
        (Running, UpdateRunning) => Some(Running),
        (Dead, Submit) => Some(Pending),
        _ => None,
    }
}

/// Transition for a task that may not have been seen yet. A fresh task
/// (`None`) can only enter the pending state via `Submit`.
pub fn step_state(from: Option<TaskState>, kind: EventKind) -> Option<TaskState> {
    match from {
        None if kind == EventKind::Submit => Some(TaskState::Pending),
        None => None,
        Some(state) => legal_transition(state, kind),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PriorityTier {
    Gratis,
    Middle,
    Production,
}

impl PriorityTier {
    pub const ALL: [PriorityTier; 3] = [PriorityTier::Production, PriorityTier::Middle, PriorityTier::Gratis];

    pub fn name(self) -> &'static str {
        match self {
            PriorityTier::Production => "production",
            PriorityTier::Middle => "middle",
            PriorityTier::Gratis => "gratis",
        }
    }
}

impl fmt::Display for PriorityTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const MAX_PRIORITY: u8 = 11;
pub const PRODUCTION_MIN_PRIORITY: u8 = 9;

/// Priority band boundaries. Production always starts at 9; the top of the
/// gratis band is configurable and defaults to 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierBands {
    pub gratis_max: u8,
}

impl Default for TierBands {
    fn default() -> Self {
        TierBands { gratis_max: 1 }
    }
}

impl TierBands {
    pub fn new(gratis_max: u8) -> Result<Self> {
        if gratis_max >= PRODUCTION_MIN_PRIORITY {
            return Err(Error::Config(format!(
                "gratis band top {gratis_max} overlaps the production band"
            )));
        }
        Ok(TierBands { gratis_max })
    }

    pub fn tier_of(&self, priority: u8) -> Result<PriorityTier> {
        if priority > MAX_PRIORITY {
            return Err(Error::InvalidInput(format!("priority {priority} outside 0..=11")));
        }
        Ok(if priority >= PRODUCTION_MIN_PRIORITY {
            PriorityTier::Production
        } else if priority <= self.gratis_max {
            PriorityTier::Gratis
        } else {
            PriorityTier::Middle
        })
    }
}

/// Tier of `priority` under the default bands.
pub fn tier_of(priority: u8) -> Result<PriorityTier> {
    TierBands::default().tier_of(priority)
}

/// How a dead-making event is counted, keyed by the (update-collapsed)
/// event that preceded it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TerminalClassification {
    PFail,
    PKill,
    PLost,
    RFail,
    RKill,
    RLost,
    Finish,
    EvictFromPending,
    EvictFromRunning,
}

impl TerminalClassification {
    /// Classification of terminal `kind` observed while in `state`.
    pub fn of(state: TaskState, kind: EventKind) -> Option<TerminalClassification> {
        use EventKind::*;
        use TerminalClassification as T;
        match (state, kind) {
            (TaskState::Pending, Fail) => Some(T::PFail),
            (TaskState::Pending, Kill) => Some(T::PKill),
            (TaskState::Pending, Lost) => Some(T::PLost),
            (TaskState::Pending, Evict) => Some(T::EvictFromPending),
            (TaskState::Running, Fail) => Some(T::RFail),
            (TaskState::Running, Kill) => Some(T::RKill),
            (TaskState::Running, Lost) => Some(T::RLost),
            (TaskState::Running, Finish) => Some(T::Finish),
            (TaskState::Running, Evict) => Some(T::EvictFromRunning),
            _ => None,
        }
    }

    /// True when the terminal removes a task from the pending queue.
    pub fn leaves_queue(self) -> bool {
        matches!(
            self,
            TerminalClassification::PFail
                | TerminalClassification::PKill
                | TerminalClassification::PLost
                | TerminalClassification::EvictFromPending
        )
    }

    /// True when the terminal removes a task from the running set.
    pub fn leaves_running(self) -> bool {
        !self.leaves_queue()
    }

    pub fn name(self) -> &'static str {
        match self {
            TerminalClassification::PFail => "pFail",
            TerminalClassification::PKill => "pKill",
            TerminalClassification::PLost => "pLost",
            TerminalClassification::RFail => "rFail",
            TerminalClassification::RKill => "rKill",
            TerminalClassification::RLost => "rLost",
            TerminalClassification::Finish => "finish",
            TerminalClassification::EvictFromPending => "evictFromPending",
            TerminalClassification::EvictFromRunning => "evictFromRunning",
        }
    }
}

impl fmt::Display for TerminalClassification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The trace's missing-info flag: set on records synthesized from
/// snapshots rather than observed transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MissingInfo {
    SnapshotButNoTransition,
    NoSnapshotOrTransition,
    ExistsButNoCreation,
}

impl MissingInfo {
    pub fn code(self) -> u8 {
        match self {
            MissingInfo::SnapshotButNoTransition => 0,
            MissingInfo::NoSnapshotOrTransition => 1,
            MissingInfo::ExistsButNoCreation => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<MissingInfo> {
        match code {
            0 => Some(MissingInfo::SnapshotButNoTransition),
            1 => Some(MissingInfo::NoSnapshotOrTransition),
            2 => Some(MissingInfo::ExistsButNoCreation),
            _ => None,
        }
    }
}

/// One row of the task events table.
///
/// Requests are fractions of the largest machine's capacity. `user`,
/// `disk_request` and `different_machine` are carried through unchanged so
/// rows survive a parse/write round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEvent {
    pub time: Micros,
    pub missing_info: Option<MissingInfo>,
    pub key: TaskKey,
    pub machine_id: Option<u64>,
    pub kind: EventKind,
    pub user: Option<String>,
    pub scheduling_class: u8,
    pub priority: u8,
    pub cpu_request: Option<f64>,
    pub mem_request: Option<f64>,
    pub disk_request: Option<f64>,
    pub different_machine: Option<bool>,
}

impl TaskEvent {
    /// Minimal event; optional columns absent.
    pub fn new(time: Micros, key: TaskKey, kind: EventKind) -> Self {
        TaskEvent {
            time,
            missing_info: None,
            key,
            machine_id: None,
            kind,
            user: None,
            scheduling_class: 0,
            priority: 0,
            cpu_request: None,
            mem_request: None,
            disk_request: None,
            different_machine: None,
        }
    }

    pub fn with_priority(mut self, priority: u8) -> Self {
        self.priority = priority;
        self
    }

    pub fn with_requests(mut self, cpu: f64, mem: f64) -> Self {
        self.cpu_request = Some(cpu);
        self.mem_request = Some(mem);
        self
    }

    pub fn with_machine(mut self, machine_id: u64) -> Self {
        self.machine_id = Some(machine_id);
        self
    }

    /// Total order used by the sort stage: time, then key, then tie rank.
    pub fn sort_key(&self) -> (Micros, TaskKey, u8) {
        (self.time, self.key, self.kind.tie_rank())
    }

    pub fn validate(&self) -> Result<()> {
        if self.priority > MAX_PRIORITY {
            return Err(Error::InvalidInput(format!("priority {} outside 0..=11", self.priority)));
        }
        if self.scheduling_class > 3 {
            return Err(Error::InvalidInput(format!(
                "scheduling class {} outside 0..=3",
                self.scheduling_class
            )));
        }
        for (name, value) in [
            ("cpu request", self.cpu_request),
            ("memory request", self.mem_request),
            ("disk request", self.disk_request),
        ] {
            if let Some(v) = value {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidInput(format!("{name} {v} is not a non-negative number")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Resource {
    Cpu,
    Memory,
}

impl Resource {
    pub const ALL: [Resource; 2] = [Resource::Cpu, Resource::Memory];

    pub fn name(self) -> &'static str {
        match self {
            Resource::Cpu => "cpu",
            Resource::Memory => "memory",
        }
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
