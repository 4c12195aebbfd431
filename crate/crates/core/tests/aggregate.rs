//! Event CDFs, queue and running series and duration statistics against
//! brute-force recounts.

mod common;

use clustertrace::aggregate::{
    detect_lumps, event_cdfs, exec_time_cdf, moving_average, queue_series, running_series, scan, weighted_cdfs, Cdf,
    LumpConfig,
};
use clustertrace::model::{Micros, MICROS_PER_SECOND};
use clustertrace::{generate_synthetic, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{fraction, recount};

fn events_only(seed: u64, tasks: usize) -> SynthConfig {
    let mut c = SynthConfig {
        seed,
        task_count: tasks,
        ..SynthConfig::default()
    };
    c.usage.enabled = false;
    c
}

fn assert_cdf_matches(name: &str, cdf: &Cdf, times: &[Micros], cum: &[u64]) {
    let total = *cum.last().unwrap_or(&0);
    for (&t, &c) in times.iter().zip(cum) {
        let want = fraction(c, total);
        assert!((cdf.at(t) - want).abs() <= 1e-12, "{name} at {t}: {} vs {want}", cdf.at(t));
    }
    if total > 0 {
        assert_eq!(cdf.points.last().unwrap().f, 1.0, "{name} endpoint");
    }
}

#[test]
fn synthetic_cdfs_equal_brute_force_counting() {
    for seed in 0..3 {
        let t = generate_synthetic(&events_only(seed, 500)).unwrap();
        let events = &t.bundle.task_events;
        let oracle = recount(events);
        let cdfs = event_cdfs(&scan(events).unwrap().timeline);
        assert_cdf_matches("new_submission", &cdfs.new_submission, &oracle.times, &oracle.new_submissions);
        assert_cdf_matches("submission", &cdfs.submission, &oracle.times, &oracle.submissions);
        assert_cdf_matches("scheduling", &cdfs.scheduling, &oracle.times, &oracle.schedules);
        assert_cdf_matches("completion", &cdfs.completion, &oracle.times, &oracle.completions);
    }
}

#[test]
fn series_equal_state_recount_at_every_timestamp() {
    let mut config = events_only(4, 3000);
    config.update_rate = 0.5;
    let t = generate_synthetic(&config).unwrap();
    let events = &t.bundle.task_events;
    assert!(events.len() >= 10_000, "{} events", events.len());
    let oracle = recount(events);
    let s = scan(events).unwrap();
    let queue = queue_series(&s.timeline);
    let running = running_series(&s.timeline);
    assert!(!queue.negative && !running.negative);
    for (i, &time) in oracle.times.iter().enumerate() {
        assert_eq!(queue.at(time), oracle.queue[i] as f64, "queue at {time}");
        assert_eq!(running.at(time), oracle.running[i] as f64, "running at {time}");
    }
    assert!(queue.points.iter().chain(&running.points).all(|p| p.value >= 0.0));
}

#[test]
fn weighted_endpoints_equal_direct_tallies() {
    let t = generate_synthetic(&events_only(5, 2000)).unwrap();
    let events = &t.bundle.task_events;
    let oracle = recount(events);
    let cdfs = event_cdfs(&scan(events).unwrap().timeline);
    let w = weighted_cdfs(&cdfs).unwrap();
    let base = *oracle.new_submissions.last().unwrap() as f64;
    let end = |c: &Cdf| c.points.last().unwrap().f;
    assert!((end(&w.submission) - *oracle.submissions.last().unwrap() as f64 / base).abs() < 1e-12);
    assert!((end(&w.scheduling) - *oracle.schedules.last().unwrap() as f64 / base).abs() < 1e-12);
    assert!((end(&w.completion) - *oracle.completions.last().unwrap() as f64 / base).abs() < 1e-12);
    assert_eq!(*oracle.completions.last().unwrap(), t.truth.completions);
}

#[test]
fn moving_average_equals_naive_window_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let n = rng.random_range(1..400);
        let samples: Vec<(Micros, Micros)> = (0..n)
            .map(|_| (rng.random_range(0..10_000), rng.random_range(0..1_000_000)))
            .collect();
        let window = rng.random_range(1..3_000);
        let got = moving_average(&samples, window).unwrap();
        let mut times: Vec<Micros> = samples.iter().map(|s| s.0).collect();
        times.sort();
        times.dedup();
        assert_eq!(got.len(), times.len());
        for (p, &t) in got.iter().zip(&times) {
            let inside: Vec<f64> = samples
                .iter()
                .filter(|s| s.0 <= t && t - s.0 < window)
                .map(|s| s.1 as f64)
                .collect();
            let want = inside.iter().sum::<f64>() / inside.len() as f64;
            assert_eq!(p.time, t);
            assert!((p.value - want).abs() <= 1e-9 * want.max(1.0), "{} vs {want}", p.value);
        }
    }
}

#[test]
fn eighty_percent_of_executions_under_thirty_minutes() {
    let mut config = events_only(6, 100_000);
    config.duration_s = 30.0 * 86_400.0;
    let t = generate_synthetic(&config).unwrap();
    let s = scan(&t.bundle.task_events).unwrap();
    let cdf = exec_time_cdf(s.spans.iter().map(|(_, span)| span), false);
    let f = cdf.at(1800 * MICROS_PER_SECOND);
    assert!((0.78..=0.82).contains(&f), "F(30 min) = {f}");
}

#[test]
fn no_resubmissions_means_identical_curves_and_no_lumps() {
    let mut config = events_only(7, 3000);
    config.resubmit_prob = 0.0;
    let t = generate_synthetic(&config).unwrap();
    let cdfs = event_cdfs(&scan(&t.bundle.task_events).unwrap().timeline);
    assert_eq!(cdfs.submission, cdfs.new_submission);
    let lumps = detect_lumps(&cdfs.new_submission, &cdfs.submission, &LumpConfig::default()).unwrap();
    assert!(lumps.is_empty());
}
