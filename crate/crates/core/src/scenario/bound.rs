//! Analytic end-to-end latency budget.
//!
//! The budget decomposes the sensing-to-actuation path into seven additive
//! components, each a worst case over everything the admitted configuration
//! allows. Every simulated round is checked against `total_us`; a run in
//! which any round exceeds it falsifies the model.
//!
//! Why each wait term is `cycle + guard`: a sender that just missed its slot
//! waits at most one full cycle (measured on its own clock) for the next
//! one, and the guard absorbs everything that separates that local wait from
//! true time — clock error after sync, plus the leading sync frame the slot
//! owner transmits before its data burst, plus the sub-microsecond ceiling
//! applied when a delivery is scheduled. Guard sizing (2·max clock error +
//! 10 µs) dominates those contributions, so the composition stays sound.

use serde::{Deserialize, Serialize};

use crate::planner::MoveCommand;
use crate::rmo::exec_time_us;
use crate::scenario::config::{LoadedScenario, ScenarioError};
use crate::simkern::SimTime;
use crate::ttwifi::{burst_tx_bound, frame_tx_time};
use crate::worldmodel::{measurement_duration, sensor_payload_bytes};

/// Worst-case budget for one control round, in microseconds. `total_us` is
/// the sum of the components by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct E2eBudget {
    /// Full sensor measurement window.
    pub sense_us: f64,
    /// Just-missed uplink slot: one cycle plus the guard allowance.
    pub uplink_wait_us: f64,
    /// Sensor burst on air, fragmentation and interframe spaces included.
    pub uplink_tx_us: f64,
    /// Slowest admitted replica plus the voting overhead.
    pub compute_us: f64,
    /// Just-missed downlink slot.
    pub downlink_wait_us: f64,
    /// Command burst on air (all time-domain copies).
    pub downlink_tx_us: f64,
    /// Robot-side latency from command receipt to motor action.
    pub actuation_grant_us: f64,
    pub total_us: f64,
}

impl E2eBudget {
    /// The compute component alone, as the voter's decision deadline.
    pub fn compute_budget_us(&self) -> SimTime {
        self.compute_us.ceil() as SimTime
    }
}

/// Worst co-runner count any replica of the localization container can see
/// under a rule-abiding placement. The budget must hold under admission-time
/// assumptions — and re-placement after a node failure may pack instances
/// differently than the initial layout — so this asks what the node
/// capacities *admit*, not what the initial placement happens to choose:
/// the largest set of instances (one per container, per anti-affinity) that
/// fits on any single node together with a localization replica.
///
/// Enumeration is exponential in the container count, which scenario files
/// keep in the single digits.
pub fn worst_admitted_co_runners(scenario: &LoadedScenario) -> Result<u32, ScenarioError> {
    let cfg = &scenario.config;
    let mcl_index = cfg
        .containers
        .iter()
        .position(|c| c.name == cfg.mcl_container)
        .ok_or_else(|| {
            ScenarioError::Invalid(format!(
                "mcl_container {:?} is not among the declared containers",
                cfg.mcl_container
            ))
        })?;
    let n = cfg.containers.len();
    let mut worst = 0u32;
    for node in &cfg.edge_nodes {
        for mask in 0u32..(1 << n) {
            if mask & (1 << mcl_index) == 0 {
                continue;
            }
            let (mut crit, mut soft, mut bw, mut count) = (0u32, 0u32, 0u32, 0u32);
            for (i, spec) in cfg.containers.iter().enumerate() {
                if mask & (1 << i) == 0 {
                    continue;
                }
                match spec.kind {
                    crate::rmo::ContainerKind::Critical => crit += spec.cores_demand,
                    crate::rmo::ContainerKind::BestEffort => soft += spec.cores_demand,
                }
                bw += spec.bw_demand;
                count += 1;
            }
            let fits = crit <= node.critical_cores
                && soft <= node.total_cores - node.critical_cores
                && bw <= node.memory_bw_units;
            if fits {
                worst = worst.max(count - 1);
            }
        }
    }
    Ok(worst)
}

/// Compose the end-to-end budget from the scenario's own parameters. The
/// placement is recomputed here so the compute term reflects exactly what
/// admission promised.
pub fn e2e_bound(scenario: &LoadedScenario) -> Result<E2eBudget, ScenarioError> {
    let cfg = &scenario.config;
    let sense_us = measurement_duration(cfg.robot.lidar_samples, cfg.robot.ms_per_sample) as f64;

    let wait_us = (cfg.tdma.cycle_length_us + cfg.tdma.guard_time_us) as f64;

    let payload = sensor_payload_bytes(cfg.robot.lidar_samples);
    let uplink_tx_us = burst_tx_bound(payload, &cfg.radio);

    let mcl = cfg.mcl_spec()?;
    let co_runners = worst_admitted_co_runners(scenario)?;
    let compute_us = exec_time_us(mcl, mcl.cores_demand, co_runners, cfg.contention_alpha)
        + cfg.vote_overhead_us as f64;

    let downlink_tx_us = cfg.command_copies as f64
        * frame_tx_time(
            MoveCommand::WIRE_BYTES,
            cfg.radio.overhead_bytes,
            &cfg.radio,
        );

    let actuation_grant_us = cfg.robot.actuation_grant_us as f64;

    let total_us = sense_us
        + wait_us
        + uplink_tx_us
        + compute_us
        + wait_us
        + downlink_tx_us
        + actuation_grant_us;
    Ok(E2eBudget {
        sense_us,
        uplink_wait_us: wait_us,
        uplink_tx_us,
        compute_us,
        downlink_wait_us: wait_us,
        downlink_tx_us,
        actuation_grant_us,
        total_us,
    })
}
