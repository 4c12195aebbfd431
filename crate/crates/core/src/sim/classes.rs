//! Short-lived versus long-running tasks and their change distributions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::aggregate::scan;
use crate::error::{Error, Result};
use crate::ingest::TraceBundle;
use crate::lifecycle::{task_run_time, ScheduleSpan};
use crate::model::{Micros, Resource, TaskKey};
use crate::utilization::{change_distribution_filtered, ChangeConfig, ChangeDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskClass {
    ShortLived,
    LongRunning,
}

impl TaskClass {
    /// Class of a task that ran for `run_time` in total.
    pub fn of(run_time: Micros, threshold: Micros) -> TaskClass {
        if run_time < threshold {
            TaskClass::ShortLived
        } else {
            TaskClass::LongRunning
        }
    }
}

/// Class of every task with events, by total run time over its spans. Spans
/// still running at the end of the trace count up to that point.
pub fn task_classes(bundle: &TraceBundle, threshold: Micros) -> BTreeMap<TaskKey, TaskClass> {
    let end = bundle.trace_end();
    let mut spans: BTreeMap<TaskKey, Vec<ScheduleSpan>> = BTreeMap::new();
    // the bundle is sorted, so the scan cannot fail
    if let Ok(s) = scan(&bundle.task_events) {
        for (key, span) in s.spans {
            spans.entry(key).or_default().push(span);
        }
        for key in bundle.task_events.iter().map(|e| e.key) {
            spans.entry(key).or_default();
        }
    }
    spans
        .into_iter()
        .map(|(key, list)| (key, TaskClass::of(task_run_time(&list, end), threshold)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub class: TaskClass,
    pub tasks: usize,
    /// Absent when the class has fewer than two consecutive periods of data.
    pub distribution: Option<ChangeDistribution>,
    pub insufficient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistributions {
    pub threshold: Micros,
    pub resource: Resource,
    pub short_lived: ClassDistribution,
    pub long_running: ClassDistribution,
}

/// Change distributions computed separately for short-lived and
/// long-running tasks.
pub fn per_class_distributions(
    bundle: &TraceBundle,
    threshold: Micros,
    resource: Resource,
    config: &ChangeConfig,
) -> Result<ClassDistributions> {
    let classes = task_classes(bundle, threshold);
    let one = |class: TaskClass| -> Result<ClassDistribution> {
        let tasks = classes.values().filter(|&&c| c == class).count();
        let keep = |s: &crate::ingest::UsageSample| classes.get(&s.key) == Some(&class);
        match change_distribution_filtered(&bundle.usage, resource, config, keep) {
            Ok(d) => Ok(ClassDistribution {
                class,
                tasks,
                distribution: Some(d),
                insufficient: false,
            }),
            Err(Error::InsufficientData(_)) => Ok(ClassDistribution {
                class,
                tasks,
                distribution: None,
                insufficient: true,
            }),
            Err(e) => Err(e),
        }
    };
    Ok(ClassDistributions {
        threshold,
        resource,
        short_lived: one(TaskClass::ShortLived)?,
        long_running: one(TaskClass::LongRunning)?,
    })
}
