//! Reported per-run metrics, cross-repetition aggregation with Student-t
//! confidence intervals, and the CSV schema both output files share.

use crate::qdisc::DisciplineKind;
use crate::sim::SimTime;
use crate::world::RunRecord;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Application-payload delivery rate in bits per second.
///
/// Zero bytes yield zero; a positive byte count over a zero-length span is a
/// fault (it cannot happen in a healthy run and would divide by zero).
pub fn goodput(bytes: u64, t_first: SimTime, t_last: SimTime) -> f64 {
    if bytes == 0 {
        return 0.0;
    }
    assert!(
        t_last > t_first,
        "goodput of {bytes} bytes over an empty interval"
    );
    bytes as f64 * 8.0 / (t_last - t_first).as_secs_f64()
}

/// Time-weighted average of a right-continuous step series: each value holds
/// from its timestamp to the next (the last until `end`).
pub fn time_average(series: &[(SimTime, f64)], end: SimTime) -> f64 {
    assert!(!series.is_empty(), "time average of an empty series");
    assert!(end >= series.last().unwrap().0, "end precedes the series");
    let mut integral = 0.0;
    for (k, &(at, value)) in series.iter().enumerate() {
        let until = series.get(k + 1).map_or(end, |&(next, _)| next);
        integral += value * (until - at).as_secs_f64();
    }
    let span = (end - series[0].0).as_secs_f64();
    assert!(span > 0.0, "time average over an empty span");
    integral / span
}

/// One run's reported values, in final units. `None` marks a metric that is
/// absent for this run (queue statistics under DropTail, or a path that saw
/// no RTT samples) and renders as an empty CSV cell.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub goodput_bps_total: f64,
    pub goodput_bps_a: f64,
    pub goodput_bps_b: f64,
    pub rtt_ms_a: Option<f64>,
    pub rtt_ms_b: Option<f64>,
    pub drops: u64,
    /// Split of `drops` for diagnostics (not part of the CSV schema).
    pub drops_admission: u64,
    pub drops_law: u64,
    pub avg_qlen_pkts: Option<f64>,
    pub avg_sojourn_ms: Option<f64>,
    pub duration_s: f64,
    pub seed: u64,
}

impl RunMetrics {
    /// Derive the reported values from a run's raw record. Queue statistics
    /// are reported only for the disciplines whose control law uses them;
    /// the passive tail-drop queue leaves those cells empty.
    ///
    /// Per-path goodputs are each path's bytes over the connection's shared
    /// delivery window (first to last data arrival on either path). A shared
    /// denominator is what lets the two rates add up to the connection total
    /// and keeps that total below the bottleneck rate; windows taken per
    /// path would overlap in time and their sum would be unphysical.
    pub fn from_record(kind: DisciplineKind, rec: &RunRecord, seed: u64) -> Self {
        let first = rec.path_delivery.iter().filter_map(|d| d.1).min();
        let last = rec.path_delivery.iter().filter_map(|d| d.2).max();
        let window = first.zip(last);
        let per_path = |i: usize| -> f64 {
            let bytes = rec.path_delivery[i].0;
            window.map_or(0.0, |(f, l)| goodput(bytes, f, l))
        };
        let goodput_bps_a = per_path(0);
        let goodput_bps_b = per_path(1);
        let rtt_ms = |i: usize| -> Option<f64> {
            (rec.rtt_count[i] > 0).then(|| rec.rtt_sum_ns[i] as f64 / rec.rtt_count[i] as f64 / 1e6)
        };
        let codel_family = kind != DisciplineKind::DropTail;
        let avg_qlen_pkts =
            codel_family.then(|| rec.qlen_integral as f64 / rec.done_at.as_nanos() as f64);
        let avg_sojourn_ms = (codel_family && rec.sojourn_count > 0)
            .then(|| rec.sojourn_sum_ns as f64 / rec.sojourn_count as f64 / 1e6);
        RunMetrics {
            goodput_bps_total: goodput_bps_a + goodput_bps_b,
            goodput_bps_a,
            goodput_bps_b,
            rtt_ms_a: rtt_ms(0),
            rtt_ms_b: rtt_ms(1),
            drops: rec.drops_total(),
            drops_admission: rec.drops_admission,
            drops_law: rec.drops_law,
            avg_qlen_pkts,
            avg_sojourn_ms,
            duration_s: rec.done_at.as_secs_f64(),
            seed,
        }
    }
}

/// Names of the aggregated metric columns, in output order.
pub const METRIC_NAMES: [&str; 9] = [
    "goodput_bps_total",
    "goodput_bps_a",
    "goodput_bps_b",
    "rtt_ms_a",
    "rtt_ms_b",
    "drops",
    "avg_qlen_pkts",
    "avg_sojourn_ms",
    "duration_s",
];

/// The metric values of one run, aligned with [`METRIC_NAMES`].
pub fn metric_values(m: &RunMetrics) -> [Option<f64>; 9] {
    [
        Some(m.goodput_bps_total),
        Some(m.goodput_bps_a),
        Some(m.goodput_bps_b),
        m.rtt_ms_a,
        m.rtt_ms_b,
        Some(m.drops as f64),
        m.avg_qlen_pkts,
        m.avg_sojourn_ms,
        Some(m.duration_s),
    ]
}

/// Mean with a 95% confidence half-width (absent below two samples).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ci {
    pub mean: f64,
    pub half_width: Option<f64>,
}

/// Two-sided 97.5% Student-t quantile for `df` degrees of freedom.
fn t975(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64)
        .expect("valid t distribution")
        .inverse_cdf(0.975)
}

/// Mean and 95% CI half-width (`t_{0.975,n-1} * s / sqrt(n)`) of a sample.
///
/// Values are sorted before summation so the result is bit-identical under
/// any permutation of the input.
pub fn mean_ci(values: &[f64]) -> Option<Ci> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return Some(Ci {
            mean,
            half_width: None,
        });
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let half_width = t975(n - 1) * var.sqrt() / (n as f64).sqrt();
    Some(Ci {
        mean,
        half_width: Some(half_width),
    })
}

/// Aggregate a cell's repetitions metric-by-metric; a metric absent in every
/// run stays absent.
pub fn aggregate(rows: &[RunMetrics]) -> [Option<Ci>; 9] {
    let mut out = [None; 9];
    for (k, slot) in out.iter_mut().enumerate() {
        let values: Vec<f64> = rows.iter().filter_map(|m| metric_values(m)[k]).collect();
        *slot = mean_ci(&values);
    }
    out
}

/// Plain decimal rendering: Rust's shortest round-trip `Display` for f64,
/// which never uses scientific notation or digit grouping.
fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn runs_csv_header() -> String {
    "scenario,qdisc,cc,delay_a_ms,rep,seed,goodput_bps_total,goodput_bps_a,goodput_bps_b,\
     rtt_ms_a,rtt_ms_b,drops,avg_qlen_pkts,avg_sojourn_ms,duration_s"
        .to_string()
}

#[allow(clippy::too_many_arguments)]
pub fn runs_csv_row(
    scenario: &str,
    qdisc: DisciplineKind,
    cc: crate::mptcp::CcAlgorithm,
    delay_a_ms: f64,
    rep: u32,
    m: &RunMetrics,
) -> String {
    format!(
        "{scenario},{qdisc},{cc},{},{rep},{},{},{},{},{},{},{},{},{},{}",
        num(delay_a_ms),
        m.seed,
        num(m.goodput_bps_total),
        num(m.goodput_bps_a),
        num(m.goodput_bps_b),
        opt(m.rtt_ms_a),
        opt(m.rtt_ms_b),
        m.drops,
        opt(m.avg_qlen_pkts),
        opt(m.avg_sojourn_ms),
        num(m.duration_s),
    )
}

pub fn aggregate_csv_header() -> String {
    let mut cols = vec![
        "scenario".to_string(),
        "qdisc".to_string(),
        "cc".to_string(),
        "delay_a_ms".to_string(),
        "reps".to_string(),
    ];
    for name in METRIC_NAMES {
        cols.push(format!("{name}_mean"));
        cols.push(format!("{name}_ci95"));
    }
    cols.join(",")
}

pub fn aggregate_csv_row(
    scenario: &str,
    qdisc: DisciplineKind,
    cc: crate::mptcp::CcAlgorithm,
    delay_a_ms: f64,
    reps: usize,
    agg: &[Option<Ci>; 9],
) -> String {
    let mut cols = vec![
        scenario.to_string(),
        qdisc.to_string(),
        cc.to_string(),
        num(delay_a_ms),
        reps.to_string(),
    ];
    for ci in agg {
        match ci {
            Some(ci) => {
                cols.push(num(ci.mean));
                cols.push(opt(ci.half_width));
            }
            None => {
                cols.push(String::new());
                cols.push(String::new());
            }
        }
    }
    cols.join(",")
}
