//! Contention sweep over the execution-time model.
//!
//! Tabulates predicted execution time across core allocations and
//! co-runner counts for one workload, so the speedup/slowdown surface the
//! placement and admission decisions rest on can be inspected (and
//! plotted) directly.

use serde::Serialize;

use crate::rmo::{exec_time_us, ContainerSpec};

pub const SWEEP_HEADER: &str = "cores,instances,exec_time_us";

/// One cell of the sweep: the workload granted `cores`, sharing its node
/// with `instances - 1` co-runners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub cores: u32,
    pub instances: u32,
    pub exec_time_us: f64,
}

/// Evaluate the model over `1..=max_cores` × `1..=max_instances`.
pub fn contention_sweep(
    spec: &ContainerSpec,
    max_cores: u32,
    max_instances: u32,
    alpha: f64,
) -> Vec<SweepPoint> {
    let mut points = Vec::with_capacity((max_cores * max_instances) as usize);
    for cores in 1..=max_cores {
        for instances in 1..=max_instances {
            points.push(SweepPoint {
                cores,
                instances,
                exec_time_us: exec_time_us(spec, cores, instances - 1, alpha),
            });
        }
    }
    points
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!(
            "{},{},{:.3}\n",
            p.cores, p.instances, p.exec_time_us
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rmo::ContainerKind;

    fn spec() -> ContainerSpec {
        ContainerSpec {
            name: "mcl".into(),
            kind: ContainerKind::Critical,
            cores_demand: 2,
            bw_demand: 2,
            base_exec_time_us: 50_000.0,
            parallel_fraction: 0.8,
            period_us: 1_300_000,
            replicas: 3,
        }
    }

    #[test]
    fn more_co_runners_never_speed_things_up() {
        let points = contention_sweep(&spec(), 4, 4, 0.15);
        for w in points.chunks(4) {
            for pair in w.windows(2) {
                assert!(pair[1].exec_time_us >= pair[0].exec_time_us);
            }
        }
    }

    #[test]
    fn more_cores_help_a_parallel_workload() {
        let points = contention_sweep(&spec(), 4, 1, 0.15);
        for pair in points.windows(2) {
            assert!(pair[1].exec_time_us < pair[0].exec_time_us);
        }
    }

    #[test]
    fn csv_shape_matches_the_grid() {
        let points = contention_sweep(&spec(), 3, 2, 0.15);
        let csv = sweep_csv(&points);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(SWEEP_HEADER));
        assert_eq!(lines.count(), 6);
    }
}
