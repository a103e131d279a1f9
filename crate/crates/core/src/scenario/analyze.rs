//! Post-run trace analysis.
//!
//! Reads back the latency trace and summary a run wrote, recomputes every
//! derived quantity from the raw timestamps, and refuses data that
//! disagrees with itself — a stored end-to-end figure that doesn't match
//! its own timestamps, a summary aggregate that doesn't match the records
//! it claims to summarize. What survives the cross-check is reduced to a
//! per-component latency breakdown with nearest-rank percentiles.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::scenario::config::ScenarioError;
use crate::scenario::runner::{LatencyRecord, RunSummary, LATENCY_HEADER};

/// Five-number-ish summary of one latency component, in microseconds.
/// Percentiles are nearest-rank, so every reported value is an observed
/// sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
}

/// Nearest-rank percentile over an ascending-sorted slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample set");
    assert!((0.0..=100.0).contains(&p));
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.max(1) - 1]
}

impl DistStats {
    fn from_samples(mut samples: Vec<f64>) -> DistStats {
        samples.sort_by(|a, b| a.total_cmp(b));
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        DistStats {
            min: samples[0],
            max: *samples.last().expect("non-empty"),
            mean,
            p50: percentile(&samples, 50.0),
            p90: percentile(&samples, 90.0),
            p99: percentile(&samples, 99.0),
        }
    }
}

/// Where each round's time went, per the trace's own timestamps. The four
/// stage components sum (with the actuation grant) to the end-to-end
/// figure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComponentBreakdown {
    pub e2e_us: DistStats,
    /// Sensing plus waiting for the robot's transmit slot.
    pub sense_to_tx_us: DistStats,
    /// Uplink air time until the edge holds the full scan.
    pub uplink_us: DistStats,
    /// Edge-side compute: filter step, planning, and the vote.
    pub compute_us: DistStats,
    /// Waiting for the voter's slot plus command air time.
    pub downlink_us: DistStats,
}

/// The cross-checked result of reading a run back.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub scenario: String,
    pub seed: u64,
    pub rounds_analyzed: usize,
    pub bound_us: f64,
    pub bound_violations: u64,
    /// Worst observed end-to-end over the bound — how much of the analytic
    /// budget the run actually used.
    pub bound_utilization: Option<f64>,
    pub breakdown: Option<ComponentBreakdown>,
    pub summary: RunSummary,
}

fn trace_err(file: &str, line: usize, detail: impl Into<String>) -> ScenarioError {
    ScenarioError::Trace {
        file: file.to_string(),
        line,
        detail: detail.into(),
    }
}

fn field<T: std::str::FromStr>(
    raw: &str,
    name: &str,
    file: &str,
    line: usize,
) -> Result<T, ScenarioError>
where
    T::Err: std::fmt::Display,
{
    raw.parse()
        .map_err(|e| trace_err(file, line, format!("field {name}: {e}")))
}

/// Parse a latency trace back into records. `file` only labels errors;
/// lines are numbered from 1 with the header on line 1.
pub fn parse_latency_csv(text: &str, file: &str) -> Result<Vec<LatencyRecord>, ScenarioError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == LATENCY_HEADER => {}
        Some((_, h)) => {
            return Err(trace_err(file, 1, format!("unexpected header {h:?}")));
        }
        None => return Err(trace_err(file, 1, "empty trace")),
    }
    let mut records = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        if raw.is_empty() {
            continue;
        }
        let cols: Vec<&str> = raw.split(',').collect();
        if cols.len() != 9 {
            return Err(trace_err(
                file,
                line,
                format!("expected 9 fields, found {}", cols.len()),
            ));
        }
        let within_bound = match cols[8] {
            "0" => false,
            "1" => true,
            other => {
                return Err(trace_err(
                    file,
                    line,
                    format!("field within_bound: expected 0 or 1, found {other:?}"),
                ));
            }
        };
        records.push(LatencyRecord {
            round: field(cols[0], "round", file, line)?,
            t_sense_start_us: field(cols[1], "t_sense_start_us", file, line)?,
            t_tx_start_us: field(cols[2], "t_tx_start_us", file, line)?,
            t_rx_edge_us: field(cols[3], "t_rx_edge_us", file, line)?,
            t_compute_done_us: field(cols[4], "t_compute_done_us", file, line)?,
            t_cmd_rx_robot_us: field(cols[5], "t_cmd_rx_robot_us", file, line)?,
            e2e_us: field(cols[6], "e2e_us", file, line)?,
            bound_us: field(cols[7], "bound_us", file, line)?,
            within_bound,
        });
    }
    Ok(records)
}

/// Recompute everything derivable and compare against what was stored.
/// The error names the first offending record (by its 1-based trace line)
/// or summary field.
pub fn verify_run(records: &[LatencyRecord], summary: &RunSummary) -> Result<(), ScenarioError> {
    const LAT: &str = "latency.csv";
    const SUM: &str = "summary.json";
    for (i, r) in records.iter().enumerate() {
        let line = i + 2; // data starts under the header
        let ts = [
            r.t_sense_start_us,
            r.t_tx_start_us,
            r.t_rx_edge_us,
            r.t_compute_done_us,
            r.t_cmd_rx_robot_us,
        ];
        if ts.windows(2).any(|w| w[0] > w[1]) {
            return Err(trace_err(
                LAT,
                line,
                format!("round {}: timestamps are not non-decreasing", r.round),
            ));
        }
        let e2e = (r.t_cmd_rx_robot_us - r.t_sense_start_us) + summary.actuation_grant_us;
        if e2e != r.e2e_us {
            return Err(trace_err(
                LAT,
                line,
                format!(
                    "round {}: stored e2e {} != {} recomputed from timestamps",
                    r.round, r.e2e_us, e2e
                ),
            ));
        }
        if r.within_bound != ((r.e2e_us as f64) <= r.bound_us) {
            return Err(trace_err(
                LAT,
                line,
                format!("round {}: within_bound contradicts e2e vs bound", r.round),
            ));
        }
        if r.bound_us != summary.bound_us {
            return Err(trace_err(
                LAT,
                line,
                format!(
                    "round {}: bound {} differs from the summary's {}",
                    r.round, r.bound_us, summary.bound_us
                ),
            ));
        }
    }

    let check = |ok: bool, detail: String| {
        if ok {
            Ok(())
        } else {
            Err(trace_err(SUM, 1, detail))
        }
    };
    check(
        summary.rounds_completed as usize == records.len(),
        format!(
            "rounds_completed {} but the trace holds {} records",
            summary.rounds_completed,
            records.len()
        ),
    )?;
    let max = records.iter().map(|r| r.e2e_us).max();
    check(
        summary.max_e2e_us == max,
        format!(
            "max_e2e_us {:?} != {max:?} from the trace",
            summary.max_e2e_us
        ),
    )?;
    let mean = if records.is_empty() {
        None
    } else {
        Some(records.iter().map(|r| r.e2e_us).sum::<u64>() as f64 / records.len() as f64)
    };
    check(
        summary.mean_e2e_us == mean,
        format!(
            "mean_e2e_us {:?} != {mean:?} from the trace",
            summary.mean_e2e_us
        ),
    )?;
    let violations = records.iter().filter(|r| !r.within_bound).count() as u64;
    check(
        summary.bound_violations == violations,
        format!(
            "bound_violations {} != {violations} from the trace",
            summary.bound_violations
        ),
    )?;
    Ok(())
}

/// Cross-check the records against the summary, then reduce them to the
/// component breakdown.
pub fn analyze_run(
    records: &[LatencyRecord],
    summary: &RunSummary,
) -> Result<AnalysisReport, ScenarioError> {
    verify_run(records, summary)?;
    let breakdown = if records.is_empty() {
        None
    } else {
        let col =
            |f: fn(&LatencyRecord) -> f64| DistStats::from_samples(records.iter().map(f).collect());
        Some(ComponentBreakdown {
            e2e_us: col(|r| r.e2e_us as f64),
            sense_to_tx_us: col(|r| (r.t_tx_start_us - r.t_sense_start_us) as f64),
            uplink_us: col(|r| (r.t_rx_edge_us - r.t_tx_start_us) as f64),
            compute_us: col(|r| (r.t_compute_done_us - r.t_rx_edge_us) as f64),
            downlink_us: col(|r| (r.t_cmd_rx_robot_us - r.t_compute_done_us) as f64),
        })
    };
    Ok(AnalysisReport {
        scenario: summary.scenario.clone(),
        seed: summary.seed,
        rounds_analyzed: records.len(),
        bound_us: summary.bound_us,
        bound_violations: summary.bound_violations,
        bound_utilization: breakdown.map(|b| b.e2e_us.max / summary.bound_us),
        breakdown,
        summary: summary.clone(),
    })
}

/// Analyze a run directory as written by
/// [`TraceSet::write_to_dir`](crate::scenario::runner::TraceSet::write_to_dir).
pub fn analyze_dir(dir: &Path) -> Result<AnalysisReport, ScenarioError> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read_to_string(&path).map_err(|source| ScenarioError::Io { path, source })
    };
    let summary: RunSummary = serde_json::from_str(&read("summary.json")?)?;
    let records = parse_latency_csv(&read("latency.csv")?, "latency.csv")?;
    analyze_run(&records, &summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::config::{LoadedScenario, ScenarioConfig};
    use crate::scenario::runner::run_scenario;
    use crate::scenario::testutil::{tiny_config_json, tiny_grid};
    use crate::simkern::WorkerPool;

    fn small_run() -> crate::scenario::runner::RunOutput {
        let mut config = ScenarioConfig::from_json(&tiny_config_json()).unwrap();
        config.rounds = 2;
        let scenario = LoadedScenario::from_parts(config, tiny_grid()).unwrap();
        run_scenario(&scenario, 5, &WorkerPool::new(2)).unwrap()
    }

    #[test]
    fn trace_roundtrips_and_verifies() {
        let out = small_run();
        let parsed = parse_latency_csv(&out.traces.latency, "latency.csv").unwrap();
        assert_eq!(parsed, out.records);
        let report = analyze_run(&parsed, &out.summary).unwrap();
        assert_eq!(report.rounds_analyzed, 2);
        assert_eq!(report.bound_violations, 0);
        let b = report.breakdown.unwrap();
        // Components plus the grant partition the end-to-end time.
        let grant = out.summary.actuation_grant_us as f64;
        let parts =
            b.sense_to_tx_us.mean + b.uplink_us.mean + b.compute_us.mean + b.downlink_us.mean;
        assert!((parts + grant - b.e2e_us.mean).abs() < 1e-6);
        assert!(report.bound_utilization.unwrap() < 1.0);
    }

    #[test]
    fn write_and_analyze_dir_agree_with_memory() {
        let out = small_run();
        let dir = tempfile::tempdir().unwrap();
        out.traces.write_to_dir(dir.path(), &out.summary).unwrap();
        let report = analyze_dir(dir.path()).unwrap();
        assert_eq!(report.summary, out.summary);
        assert_eq!(report.rounds_analyzed, out.records.len());
    }

    #[test]
    fn malformed_line_is_named_precisely() {
        let out = small_run();
        let mut text = out.traces.latency.clone();
        text.push_str("not,a,valid,row\n");
        let bad_line = text.lines().count();
        match parse_latency_csv(&text, "latency.csv") {
            Err(ScenarioError::Trace { file, line, detail }) => {
                assert_eq!(file, "latency.csv");
                assert_eq!(line, bad_line);
                assert!(detail.contains("expected 9 fields"), "{detail}");
            }
            other => panic!("expected a trace error, got {other:?}"),
        }
    }

    #[test]
    fn tampered_e2e_is_rejected() {
        let out = small_run();
        let mut records = out.records.clone();
        records[1].e2e_us += 1;
        match verify_run(&records, &out.summary) {
            Err(ScenarioError::Trace { file, line, detail }) => {
                assert_eq!(file, "latency.csv");
                assert_eq!(line, 3);
                assert!(detail.contains("stored e2e"), "{detail}");
            }
            other => panic!("expected a trace error, got {other:?}"),
        }
    }

    #[test]
    fn tampered_summary_is_rejected() {
        let out = small_run();
        let mut summary = out.summary.clone();
        summary.max_e2e_us = summary.max_e2e_us.map(|m| m + 1);
        assert!(matches!(
            verify_run(&out.records, &summary),
            Err(ScenarioError::Trace { file, .. }) if file == "summary.json"
        ));
    }

    #[test]
    fn nearest_rank_percentiles_are_observed_samples() {
        let sorted: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile(&sorted, 50.0), 5.0);
        assert_eq!(percentile(&sorted, 90.0), 9.0);
        assert_eq!(percentile(&sorted, 99.0), 10.0);
        assert_eq!(percentile(&sorted, 0.0), 1.0);
        assert_eq!(percentile(&sorted, 100.0), 10.0);
    }
}
