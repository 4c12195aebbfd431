//! Codec round trips, sort order and generator determinism.

mod common;

use std::collections::HashMap;

use clustertrace::ingest::codec::{read_task_events, read_usage, write_task_events, write_usage};
use clustertrace::ingest::{sort_events, ExternalSorter, TaskEventLayout, UsageLayout, UsageSample};
use clustertrace::model::{EventKind, MissingInfo, TaskEvent, TaskKey};
use clustertrace::{generate_synthetic, SynthConfig};
use proptest::prelude::*;

use common::{code, oracle_sort, random_trace, rank};

fn request() -> impl Strategy<Value = Option<f64>> {
    prop_oneof![Just(None), (0.0f64..1.0).prop_map(Some), Just(Some(0.0)), Just(Some(1.0))]
}

prop_compose! {
    fn task_event()(
        time in 0u64..1u64 << 50,
        missing in prop_oneof![Just(None), Just(Some(MissingInfo::SnapshotButNoTransition)), Just(Some(MissingInfo::NoSnapshotOrTransition)), Just(Some(MissingInfo::ExistsButNoCreation))],
        job in any::<u64>().prop_map(|j| j >> 1),
        index in any::<u32>(),
        machine in proptest::option::of(any::<u64>().prop_map(|m| m >> 1)),
        kind in 0u8..9,
        user in proptest::option::of("[A-Za-z0-9+/=]{1,44}"),
        class in 0u8..4,
        priority in 0u8..12,
        cpu in request(),
        mem in request(),
        disk in request(),
        different in proptest::option::of(any::<bool>()),
    ) -> TaskEvent {
        TaskEvent {
            time,
            missing_info: missing,
            key: TaskKey::new(job, index),
            machine_id: machine,
            kind: EventKind::from_code(kind).unwrap(),
            user,
            scheduling_class: class,
            priority,
            cpu_request: cpu,
            mem_request: mem,
            disk_request: disk,
            different_machine: different,
        }
    }
}

prop_compose! {
    fn usage_sample()(
        start in 0u64..1u64 << 40,
        len in 1u64..=300_000_000,
        job in 0u64..1 << 40,
        index in any::<u32>(),
        machine in 0u64..1 << 40,
        cpu in 0.0f64..2.0,
        mem in 0.0f64..2.0,
    ) -> UsageSample {
        UsageSample {
            window_start: start,
            window_end: start + len,
            key: TaskKey::new(job, index),
            machine_id: machine,
            cpu_usage: cpu,
            mem_usage: mem,
        }
    }
}

proptest! {
    #[test]
    fn task_events_round_trip(events in proptest::collection::vec(task_event(), 0..50)) {
        let bytes = write_task_events(Vec::new(), &events).unwrap();
        let back: Vec<TaskEvent> = read_task_events(bytes.as_slice(), &TaskEventLayout::default())
            .collect::<Result<_, _>>()
            .unwrap();
        prop_assert_eq!(back, events);
    }

    #[test]
    fn usage_round_trip(usage in proptest::collection::vec(usage_sample(), 0..50)) {
        let bytes = write_usage(Vec::new(), &usage).unwrap();
        let back: Vec<UsageSample> = read_usage(bytes.as_slice(), &UsageLayout::default())
            .collect::<Result<_, _>>()
            .unwrap();
        prop_assert_eq!(back, usage);
    }

    #[test]
    fn sort_is_a_deterministic_permutation(seed in any::<u64>()) {
        let events = random_trace(seed, 3000);
        let sorted = sort_events(events.clone());
        prop_assert_eq!(&sorted, &sort_events(events.clone()));
        prop_assert_eq!(&sorted, &oracle_sort(&events));
        let mut count: HashMap<String, i64> = HashMap::new();
        for e in &events {
            *count.entry(format!("{e:?}")).or_default() += 1;
        }
        for e in &sorted {
            *count.entry(format!("{e:?}")).or_default() -= 1;
        }
        prop_assert!(count.values().all(|&c| c == 0));
        let order = |e: &TaskEvent| (e.time, e.key, rank(code(e.kind)));
        prop_assert!(sorted.windows(2).all(|w| order(&w[0]) <= order(&w[1])));
    }
}

#[test]
fn external_sort_with_spills_matches_oracle() {
    let events = random_trace(99, 20_000);
    let mut sorter = ExternalSorter::new(1000);
    for e in events.iter().cloned() {
        sorter.push(e).unwrap();
    }
    let sorted = sorter.finish().unwrap();
    assert!(sorted.spilled_runs() > 1);
    let got: Vec<TaskEvent> = sorted.map(Result::unwrap).collect();
    assert_eq!(got, oracle_sort(&events));
}

#[test]
fn same_seed_gives_byte_identical_tables() {
    let config = SynthConfig::from_toml(include_str!("../data/sample.toml")).unwrap();
    let a = generate_synthetic(&config).unwrap().bundle;
    let b = generate_synthetic(&config).unwrap().bundle;
    assert_eq!(
        write_task_events(Vec::new(), &a.task_events).unwrap(),
        write_task_events(Vec::new(), &b.task_events).unwrap()
    );
    assert_eq!(write_usage(Vec::new(), &a.usage).unwrap(), write_usage(Vec::new(), &b.usage).unwrap());
    let other = generate_synthetic(&SynthConfig { seed: 43, ..config }).unwrap().bundle;
    assert_ne!(other.task_events, a.task_events);
}

#[test]
fn bundled_sample_matches_its_generator_config() {
    let config = SynthConfig::from_toml(include_str!("../data/sample.toml")).unwrap();
    let generated = generate_synthetic(&config).unwrap().bundle;
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/sample");
    let text = std::fs::read(dir.join("task_events.csv")).unwrap();
    let events: Vec<TaskEvent> = read_task_events(text.as_slice(), &TaskEventLayout::default())
        .collect::<Result<_, _>>()
        .unwrap();
    assert_eq!(events, generated.task_events);
}
