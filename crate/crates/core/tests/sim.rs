//! The replay simulator against a straight-line oracle, plus the ordering
//! and coverage properties of change-quantile margins.

mod common;

use clustertrace::ingest::synth::{DurationComponent, DurationShape};
use clustertrace::model::{Micros, MICROS_PER_SECOND};
use clustertrace::sim::{compare_policies, simulate, MarginSource, Policy, PolicyVariant, Replay, SimOptions, SimReport};
use clustertrace::utilization::ChangeMode;
use clustertrace::{generate_synthetic, SynthConfig, TraceBundle};

use common::{close, oracle_attributes, oracle_simulate, task_change_quantile, OracleReport, OracleRule};

const S: Micros = MICROS_PER_SECOND;

fn sample_bundle() -> TraceBundle {
    generate_synthetic(&SynthConfig::from_toml(include_str!("../data/sample.toml")).unwrap())
        .unwrap()
        .bundle
}

/// A small, crowded cluster so that overflow forces evictions.
fn crowded(seed: u64) -> TraceBundle {
    let mut c = SynthConfig {
        seed,
        task_count: 300,
        duration_s: 14_400.0,
        machine_count: 2,
        machine_cpu: 0.5,
        machine_memory: 0.5,
        cpu_request_min: 0.02,
        cpu_request_max: 0.1,
        mem_request_min: 0.02,
        mem_request_max: 0.1,
        ..SynthConfig::default()
    };
    c.usage.utilization_min = 0.5;
    c.usage.utilization_max = 0.9;
    c.usage.spike_prob = 0.1;
    generate_synthetic(&c).unwrap().bundle
}

fn assert_matches_oracle(name: &str, got: &SimReport, want: &OracleReport) {
    assert_eq!(got.tasks, want.tasks, "{name}: tasks");
    assert_eq!(got.skipped_tasks, want.skipped, "{name}: skipped");
    assert_eq!(got.task_periods, want.task_periods, "{name}: task periods");
    assert_eq!(got.cold_starts, want.cold_starts, "{name}: cold starts");
    assert_eq!([got.violations.cpu, got.violations.memory], want.violations, "{name}: violations");
    assert!(close(got.reclaimed.cpu, want.reclaimed[0], 1e-9), "{name}: cpu {} vs {}", got.reclaimed.cpu, want.reclaimed[0]);
    assert!(close(got.reclaimed.memory, want.reclaimed[1], 1e-9), "{name}: memory {} vs {}", got.reclaimed.memory, want.reclaimed[1]);
    assert_eq!(got.evictions_triggered, want.evictions, "{name}: evictions");
}

fn fixed_margin(cpu: f64, memory: f64) -> Policy {
    Policy::new(PolicyVariant::ChangeQuantileMargin {
        quantile: 0.9,
        floor_fraction: 0.0,
        source: MarginSource::Fixed {
            cpu,
            memory,
            mode: ChangeMode::Relative,
        },
    })
}

#[test]
fn static_decay_and_fixed_margin_match_the_oracle() {
    for bundle in [sample_bundle(), crowded(1), crowded(2)] {
        for period_s in [300.0, 600.0] {
            let period = (period_s as Micros) * S;
            let cases = [
                ("static", Policy::request_static(), OracleRule::Static),
                ("decay", Policy::borg_decay(), OracleRule::Decay { rate: 0.1, margin: 0.15 }),
                ("margin", fixed_margin(0.1, 0.05), OracleRule::Margin { cpu: 0.1, memory: 0.05, floor: 0.0 }),
            ];
            for (name, policy, rule) in cases {
                let got = simulate(&bundle, &policy.with_period(period_s)).unwrap().report;
                let want = oracle_simulate(&bundle, rule, period, 1);
                assert_matches_oracle(name, &got, &want);
            }
        }
    }
}

#[test]
fn crowded_cluster_evicts() {
    let b = crowded(1);
    let got = simulate(&b, &fixed_margin(0.0, 0.0)).unwrap().report;
    assert!(got.evictions_triggered > 0);
}

#[test]
fn measured_margin_matches_oracle_quantiles() {
    let bundle = sample_bundle();
    for period_s in [300.0, 900.0] {
        let period = (period_s as Micros) * S;
        let got = simulate(&bundle, &Policy::change_quantile(0.9).with_period(period_s)).unwrap().report;
        let [cpu, memory] = task_change_quantile(&bundle.usage, period, 0.9);
        let m = got.margins.as_ref().unwrap();
        assert!(close(m.pooled.cpu, cpu, 1e-12), "{} vs {cpu}", m.pooled.cpu);
        assert!(close(m.pooled.memory, memory, 1e-12), "{} vs {memory}", m.pooled.memory);
        let want = oracle_simulate(&bundle, OracleRule::Margin { cpu, memory, floor: 0.0 }, period, 1);
        assert_matches_oracle("measured", &got, &want);
    }
}

#[test]
fn request_static_never_reclaims_or_violates_when_usage_fits() {
    let bundle = sample_bundle();
    let attrs = oracle_attributes(&bundle.task_events);
    assert!(bundle.usage.iter().all(|u| {
        let (_, cpu, mem) = attrs[&u.key];
        u.cpu_usage <= cpu.unwrap() && u.mem_usage <= mem.unwrap()
    }));
    let r = simulate(&bundle, &Policy::request_static()).unwrap().report;
    assert_eq!(r.reclaimed.cpu, 0.0);
    assert_eq!(r.reclaimed.memory, 0.0);
    assert_eq!(r.any_violations, 0);
    assert_eq!(r.evictions_triggered, 0);
}

#[test]
fn larger_margins_reserve_more_and_violate_less() {
    let bundle = crowded(3);
    let mut replay = Replay::new(&bundle, SimOptions::default());
    let mut last: Option<SimReport> = None;
    for m in [0.0, 0.05, 0.1, 0.2, 0.4, 0.8] {
        let r = replay.simulate(&fixed_margin(m, m)).unwrap().report;
        assert!(r.reclaimed.cpu >= 0.0 && r.reclaimed.memory >= 0.0);
        if let Some(prev) = &last {
            assert!(r.reclaimed.cpu <= prev.reclaimed.cpu + 1e-9);
            assert!(r.reclaimed.memory <= prev.reclaimed.memory + 1e-9);
            assert!(r.violations.cpu <= prev.violations.cpu);
            assert!(r.violations.memory <= prev.violations.memory);
        }
        last = Some(r);
    }
}

/// Long tasks whose usage follows a stationary random walk.
fn stationary(seed: u64) -> SynthConfig {
    let mut c = SynthConfig {
        seed,
        task_count: 300,
        duration_s: 21_600.0,
        machine_count: 200,
        ..SynthConfig::default()
    };
    c.execution = vec![DurationComponent {
        weight: 1.0,
        min_s: 7200.0,
        max_s: 14_400.0,
        shape: DurationShape::Uniform,
    }];
    c.resubmit_prob = 0.0;
    c.finish_prob = 1.0;
    c.usage.persistence = 1.0;
    c.usage.utilization_min = 0.2;
    c.usage.utilization_max = 0.4;
    c
}

#[test]
fn measured_quantile_covers_its_share_of_periods() {
    for seed in 0..5 {
        let bundle = generate_synthetic(&stationary(seed)).unwrap().bundle;
        let r = simulate(&bundle, &Policy::change_quantile(0.9)).unwrap().report;
        for rate in [r.violation_rate.cpu, r.violation_rate.memory] {
            assert!(rate <= 0.10 + 0.02, "seed {seed}: violation rate {rate}");
        }
    }
}

#[test]
fn margin_beats_static_on_spiky_load_but_violates() {
    let mut c = stationary(9);
    c.usage.spike_prob = 0.1;
    let bundle = generate_synthetic(&c).unwrap().bundle;
    let reports = compare_policies(&bundle, &[Policy::request_static(), Policy::change_quantile(0.9)], SimOptions::default()).unwrap();
    let is_static = |r: &&SimReport| r.config.variant == PolicyVariant::RequestStatic;
    let fixed = reports.iter().find(is_static).unwrap();
    let margin = reports.iter().find(|r| !is_static(r)).unwrap();
    assert!(margin.total_reclaimed() > fixed.total_reclaimed());
    assert!(margin.any_violations > 0);
    assert_eq!(reports[0].policy, margin.policy);
}

#[test]
fn single_policy_comparison_equals_simulate() {
    let bundle = sample_bundle();
    let p = Policy::change_quantile(0.9);
    let rows = compare_policies(&bundle, std::slice::from_ref(&p), SimOptions::default()).unwrap();
    assert_eq!(rows, vec![simulate(&bundle, &p).unwrap().report]);
}
