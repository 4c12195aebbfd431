//! One checkable statistic per observation about the trace's event curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Micros, MICROS_PER_SECOND};

use super::{
    event_cdfs, exec_time_cdf, execution_samples, moving_average, queue_series, running_series, scheduling_samples,
    weighted_cdfs, Cdf, Scan, Series, SeriesPoint, DEFAULT_MA_WINDOW,
};

const GRID: usize = 1000;
const HOUR: f64 = 3600.0 * MICROS_PER_SECOND as f64;

/// How resubmission lumps are found: submission and new-submission CDF
/// increments are binned by `period`; a bin whose submission share exceeds
/// its new-submission share by more than `threshold` is excess, and
/// contiguous excess bins form one lump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LumpConfig {
    pub period: Micros,
    pub threshold: f64,
}

impl Default for LumpConfig {
    fn default() -> Self {
        LumpConfig {
            period: 3600 * MICROS_PER_SECOND,
            threshold: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lump {
    pub start: Micros,
    pub end: Micros,
    /// Excess-weighted mean of the bin midpoints.
    pub center: Micros,
    /// Total excess share across the lump's bins.
    pub excess: f64,
}

fn binned_increments(cdf: &Cdf, period: Micros, bins: usize) -> Vec<f64> {
    let mut out = vec![0.0; bins];
    let mut prev = 0.0;
    for p in &cdf.points {
        let b = ((p.x / period) as usize).min(bins - 1);
        out[b] += p.f - prev;
        prev = p.f;
    }
    out
}

pub fn detect_lumps(new_submission: &Cdf, submission: &Cdf, config: &LumpConfig) -> Result<Vec<Lump>> {
    if config.period == 0 {
        return Err(Error::Config("lump period must be positive".into()));
    }
    let end = new_submission
        .points
        .last()
        .map(|p| p.x)
        .max(submission.points.last().map(|p| p.x));
    let Some(end) = end else { return Ok(Vec::new()) };
    let bins = (end / config.period) as usize + 1;
    let s = binned_increments(submission, config.period, bins);
    let n = binned_increments(new_submission, config.period, bins);
    let mut lumps = Vec::new();
    let mut current: Option<(usize, usize, f64, f64)> = None;
    for b in 0..=bins {
        let excess = if b < bins { s[b] - n[b] } else { 0.0 };
        if excess > config.threshold {
            let mid = (b as f64 + 0.5) * config.period as f64;
            let c = current.get_or_insert((b, b, 0.0, 0.0));
            c.1 = b;
            c.2 += excess;
            c.3 += excess * mid;
        } else if let Some((first, last, mass, moment)) = current.take() {
            lumps.push(Lump {
                start: first as Micros * config.period,
                end: (last as Micros + 1) * config.period,
                center: (moment / mass).round() as Micros,
                excess: mass,
            });
        }
    }
    Ok(lumps)
}

fn grid(lo: Micros, hi: Micros) -> impl Iterator<Item = Micros> {
    let span = (hi - lo) as f64;
    (0..GRID).map(move |i| lo + (span * i as f64 / (GRID - 1) as f64).round() as Micros)
}

fn fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let r2 = if syy > 0.0 && sxx > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}

/// R² of a least-squares line through the CDF, sampled on a regular grid
/// over its own support. `None` when the support is a single point.
pub fn linear_fit_r2(cdf: &Cdf) -> Option<f64> {
    let (lo, hi) = (cdf.points.first()?.x, cdf.points.last()?.x);
    if hi <= lo {
        return None;
    }
    let xs: Vec<Micros> = grid(lo, hi).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| cdf.at(x)).collect();
    let xs: Vec<f64> = xs.iter().map(|&x| x as f64).collect();
    Some(fit(&xs, &ys).2)
}

/// Least-squares slope (per hour) of the series over the last
/// `tail_fraction` of `[start, end]`.
pub fn terminal_slope(series: &Series, start: Micros, end: Micros, tail_fraction: f64) -> Option<f64> {
    if end <= start || series.points.is_empty() {
        return None;
    }
    let lo = end - ((end - start) as f64 * tail_fraction.clamp(0.0, 1.0)) as Micros;
    if lo >= end {
        return None;
    }
    let xs: Vec<Micros> = grid(lo, end).collect();
    let ys: Vec<f64> = xs.iter().map(|&t| series.at(t)).collect();
    let xs: Vec<f64> = xs.iter().map(|&x| x as f64 / HOUR).collect();
    Some(fit(&xs, &ys).0)
}

/// Largest `a(x) - b(x)` over all step points, with its location.
fn max_gap(a: &Cdf, b: &Cdf) -> Option<(f64, Micros)> {
    let mut best: Option<(f64, Micros)> = None;
    for x in a.points.iter().chain(&b.points).map(|p| p.x) {
        let gap = a.at(x) - b.at(x);
        if best.is_none_or(|(g, bx)| gap > g || (gap == g && x < bx)) {
            best = Some((gap, x));
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub lumps: LumpConfig,
    pub ma_window: Micros,
    /// Share of the trace, at its end, over which terminal slopes are fit.
    pub tail_fraction: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            lumps: LumpConfig::default(),
            ma_window: DEFAULT_MA_WINDOW,
            tail_fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityStat {
    pub r2: Option<f64>,
    pub events: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LumpStat {
    pub count: usize,
    pub lumps: Vec<Lump>,
    pub period: Micros,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStat {
    /// Largest submission minus scheduling value.
    pub max_gap: Option<f64>,
    pub at: Option<Micros>,
    /// Gap at the last timestamp.
    pub final_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendStat {
    /// Tasks per hour over the tail of the trace.
    pub terminal_slope_per_hour: Option<f64>,
    pub final_value: Option<f64>,
    pub negative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovingStat {
    pub points: usize,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationStat {
    pub min_execution: Option<Micros>,
    pub max_execution: Option<Micros>,
    pub completed_tasks: u64,
    pub distinct_tasks: u64,
    pub first_submissions: u64,
    pub sub_second_completions: u64,
    /// Finished spans only.
    pub fraction_under_5_min: Option<f64>,
    pub fraction_under_30_min: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub ma_window: Micros,
    pub tail_fraction: f64,
    pub events: u64,
    pub violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationReport {
    /// Linearity of the new-submission CDF.
    pub obs1: LinearityStat,
    /// Linearity of the completion CDF.
    pub obs2: LinearityStat,
    /// Resubmission lumps.
    pub obs3: LumpStat,
    /// Submission vs scheduling, unweighted CDFs.
    pub obs4: GapStat,
    /// Pending plus running tasks.
    pub obs5: TrendStat,
    /// Submission vs scheduling, weighted CDFs.
    pub obs6: GapStat,
    /// Pending tasks.
    pub obs7: TrendStat,
    /// Running tasks.
    pub obs8: TrendStat,
    /// Execution-time and scheduling-time moving averages.
    pub obs9: [MovingStat; 2],
    pub obs10: DurationStat,
    pub meta: ReportMeta,
}

fn moving_stat(points: &[SeriesPoint]) -> MovingStat {
    let n = points.len();
    if n == 0 {
        return MovingStat {
            points: 0,
            mean: None,
            variance: None,
        };
    }
    let mean = points.iter().map(|p| p.value).sum::<f64>() / n as f64;
    let var = points.iter().map(|p| (p.value - mean).powi(2)).sum::<f64>() / n as f64;
    MovingStat {
        points: n,
        mean: Some(mean),
        variance: Some(var),
    }
}

fn gap_stat(a: &Cdf, b: &Cdf, end: Option<Micros>) -> GapStat {
    let m = max_gap(a, b);
    GapStat {
        max_gap: m.map(|g| g.0),
        at: m.map(|g| g.1),
        final_gap: end.map(|t| a.at(t) - b.at(t)),
    }
}

fn trend(series: &Series, start: Option<Micros>, end: Option<Micros>, tail: f64) -> TrendStat {
    TrendStat {
        terminal_slope_per_hour: start.zip(end).and_then(|(s, e)| terminal_slope(series, s, e, tail)),
        final_value: series.last_value(),
        negative: series.negative,
    }
}

pub fn observation_report(scan: &Scan, config: &ReportConfig) -> Result<ObservationReport> {
    let cdfs = event_cdfs(&scan.timeline);
    let (start, end) = (scan.timeline.start(), scan.timeline.end());
    let tail = config.tail_fraction;
    let queue = queue_series(&scan.timeline);
    let running = running_series(&scan.timeline);
    let mut unfinished = Series::default();
    for p in &scan.timeline.points {
        let v = queue.at(p.time) + running.at(p.time);
        if unfinished.last_value() != Some(v) {
            unfinished.points.push(SeriesPoint { time: p.time, value: v });
        }
        unfinished.negative |= v < 0.0;
    }
    let obs6 = match weighted_cdfs(&cdfs) {
        Ok(w) => gap_stat(&w.submission, &w.scheduling, end),
        Err(_) => GapStat {
            max_gap: None,
            at: None,
            final_gap: None,
        },
    };
    let spans: Vec<_> = scan.spans.iter().map(|(_, s)| *s).collect();
    let exec_ma = moving_average(&execution_samples(&spans), config.ma_window)?;
    let sched_ma = moving_average(&scheduling_samples(&spans), config.ma_window)?;
    let finished = exec_time_cdf(&spans, true);
    let all_exec: Vec<Micros> = spans.iter().filter_map(|s| s.execution_time()).collect();
    let fraction = |x: Micros| (!finished.is_empty()).then(|| finished.at(x));
    let lumps = detect_lumps(&cdfs.new_submission, &cdfs.submission, &config.lumps)?;
    Ok(ObservationReport {
        obs1: LinearityStat {
            r2: linear_fit_r2(&cdfs.new_submission),
            events: cdfs.totals.new_submissions,
        },
        obs2: LinearityStat {
            r2: linear_fit_r2(&cdfs.completion),
            events: cdfs.totals.completions,
        },
        obs3: LumpStat {
            count: lumps.len(),
            lumps,
            period: config.lumps.period,
            threshold: config.lumps.threshold,
        },
        obs4: gap_stat(&cdfs.submission, &cdfs.scheduling, end),
        obs5: trend(&unfinished, start, end, tail),
        obs6,
        obs7: trend(&queue, start, end, tail),
        obs8: trend(&running, start, end, tail),
        obs9: [moving_stat(&exec_ma), moving_stat(&sched_ma)],
        obs10: DurationStat {
            min_execution: all_exec.iter().copied().min(),
            max_execution: all_exec.iter().copied().max(),
            completed_tasks: scan.completed_tasks,
            distinct_tasks: scan.distinct_tasks,
            first_submissions: cdfs.totals.new_submissions,
            sub_second_completions: spans
                .iter()
                .filter(|s| s.finished() && s.execution_time().is_some_and(|d| d < MICROS_PER_SECOND))
                .count() as u64,
            fraction_under_5_min: fraction(300 * MICROS_PER_SECOND),
            fraction_under_30_min: fraction(1800 * MICROS_PER_SECOND),
        },
        meta: ReportMeta {
            ma_window: config.ma_window,
            tail_fraction: tail,
            events: scan.events,
            violations: scan.violations,
        },
    })
}
