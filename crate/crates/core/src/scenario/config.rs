//! Scenario file schema, loading, and validation.
//!
//! A scenario is one JSON document describing the whole experiment: the map,
//! the robot, the radio and TDMA schedule, the edge fleet and its container
//! workloads, the localization filter, and an optional fault plan. Loading
//! resolves the map file relative to the scenario file and validates every
//! cross-reference, so a `LoadedScenario` is runnable as-is.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mcl::{MclConfig, MclError};
use crate::planner::{astar, DriveLimits, PlanError};
use crate::rmo::{ContainerKind, ContainerSpec, RmoError};
use crate::robot::{default_taskset, response_times, TaskSpec};
use crate::simkern::{NodeId, SimTime};
use crate::ttwifi::{frame_tx_time, RadioConfig, TdmaSchedule, TtError};
use crate::worldmodel::{sensor_payload_bytes, MotionNoise, OccupancyGrid, Pose, WorldError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("scenario JSON line {line}, column {column}: {detail}")]
    Parse {
        line: usize,
        column: usize,
        detail: String,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Radio(#[from] TtError),
    #[error(transparent)]
    Placement(#[from] RmoError),
    #[error(transparent)]
    Mcl(#[from] MclError),
    #[error("{file} line {line}: {detail}")]
    Trace {
        file: String,
        line: usize,
        detail: String,
    },
}

impl From<serde_json::Error> for ScenarioError {
    fn from(e: serde_json::Error) -> Self {
        ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            detail: e.to_string(),
        }
    }
}

fn invalid(msg: impl fmt::Display) -> ScenarioError {
    ScenarioError::Invalid(msg.to_string())
}

/// Robot-side parameters: sensing geometry, kinematics, the fixed-priority
/// task set, and the fail-safe timeout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotParams {
    #[serde(default)]
    pub node_id: NodeId,
    pub start_pose: Pose,
    /// Navigation target as a (row, col) grid cell.
    pub goal_cell: (usize, usize),
    #[serde(default = "default_lidar_samples")]
    pub lidar_samples: u32,
    #[serde(default = "default_ms_per_sample")]
    pub ms_per_sample: f64,
    /// σ of the Gaussian range noise on the physical sensor, in meters.
    #[serde(default = "default_sensor_sigma_m")]
    pub sensor_sigma_m: f64,
    #[serde(default = "default_max_range_m")]
    pub max_range_m: f64,
    /// Noise applied when a command is physically actuated (the filter's
    /// process-noise model lives in `mcl.motion_noise` and may differ).
    #[serde(default)]
    pub actuation_noise: MotionNoise,
    #[serde(default)]
    pub drive: DriveLimits,
    /// Robot half-width for the pre-actuation corridor check, in meters.
    #[serde(default = "default_half_width_m")]
    pub half_width_m: f64,
    #[serde(default = "default_safety_margin_m")]
    pub safety_margin_m: f64,
    /// Fail-safe window while awaiting a command. Defaults to twice the
    /// analytic end-to-end bound, tolerating one fully lost TDMA round.
    #[serde(default)]
    pub comm_timeout_us: Option<SimTime>,
    /// Robot-side latency from command receipt to motor action.
    #[serde(default = "default_actuation_grant_us")]
    pub actuation_grant_us: SimTime,
    /// Fixed-priority task set for schedulability analysis; the Table-I
    /// default applies when absent.
    #[serde(default)]
    pub taskset: Option<Vec<TaskSpec>>,
}

fn default_lidar_samples() -> u32 {
    366
}
fn default_ms_per_sample() -> f64 {
    0.5
}
fn default_sensor_sigma_m() -> f64 {
    0.05
}
fn default_max_range_m() -> f64 {
    12.0
}
fn default_half_width_m() -> f64 {
    0.2
}
fn default_safety_margin_m() -> f64 {
    0.15
}
fn default_actuation_grant_us() -> SimTime {
    1_000
}

/// Clock-error model and sync discipline shared by all nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClockParams {
    /// Initial offsets are drawn uniformly from ±this.
    pub max_initial_offset_us: i64,
    /// Drift rates are drawn uniformly from ±this.
    pub drift_ppm_max: f64,
    /// FTA trim parameter: the k largest and k smallest offset estimates
    /// are discarded each correction round.
    pub sync_trim_k: usize,
    /// Payload of the per-slot sync frame.
    pub sync_payload_bytes: u64,
}

impl Default for ClockParams {
    fn default() -> Self {
        ClockParams {
            max_initial_offset_us: 10,
            drift_ppm_max: 40.0,
            sync_trim_k: 1,
            sync_payload_bytes: 16,
        }
    }
}

/// Static description of one edge node's capacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeNodeParams {
    pub id: NodeId,
    pub total_cores: u32,
    pub critical_cores: u32,
    pub memory_bw_units: u32,
}

/// Staggered-restart schedule; absent means rejuvenation is off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RejuvenationParams {
    pub period_us: SimTime,
    pub stagger_us: SimTime,
    pub restart_us: SimTime,
}

/// One entry of the fault plan: at `at_us` true time, the fault takes
/// effect and stays in effect for the rest of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub at_us: SimTime,
    #[serde(flatten)]
    pub kind: FaultKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultKind {
    /// Crash-fault the node's virtualization layer: the node falls silent,
    /// its slot goes unused, and every hosted replica stops reporting.
    CrashNode { node: NodeId },
    /// The node starts transmitting junk bursts into other nodes' slots —
    /// the fault the slot-enforcement gate exists to contain.
    Babble { node: NodeId },
    /// The replica's output becomes arbitrary: its voted command is
    /// deterministically perturbed so it never matches an honest one.
    CorruptReplica { container: String, replica: u32 },
    /// Step the node's clock by `offset_us` (sync disturbance; the FTA
    /// correction pulls the node back over subsequent cycles).
    ClockOffset { node: NodeId, offset_us: i64 },
    /// Multiply execution times of every container on the node by `factor`
    /// (a rogue co-runner saturating shared resources). Sustained budget
    /// overruns get the node fenced and its work re-placed.
    SlowNode { node: NodeId, factor: f64 },
}

impl FaultKind {
    pub fn name(&self) -> &'static str {
        match self {
            FaultKind::CrashNode { .. } => "crash_node",
            FaultKind::Babble { .. } => "babble",
            FaultKind::CorruptReplica { .. } => "corrupt_replica",
            FaultKind::ClockOffset { .. } => "clock_offset",
            FaultKind::SlowNode { .. } => "slow_node",
        }
    }
}

/// The complete experiment description. See `scenarios/default.json` for a
/// worked example of every field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// Occupancy-grid map, resolved relative to the scenario file.
    pub map_file: PathBuf,
    #[serde(default = "default_rounds")]
    pub rounds: u64,
    /// Root seed; every stochastic consumer derives its own stream from it.
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub robot: RobotParams,
    #[serde(default)]
    pub radio: RadioConfig,
    pub tdma: TdmaSchedule,
    /// Slot-enforcement gate on every transmitter.
    #[serde(default = "default_true")]
    pub enforcement: bool,
    #[serde(default)]
    pub clock: ClockParams,
    pub edge_nodes: Vec<EdgeNodeParams>,
    pub containers: Vec<ContainerSpec>,
    /// Which container runs the localization pipeline (must be critical).
    #[serde(default = "default_mcl_container")]
    pub mcl_container: String,
    /// Per-co-runner execution-time inflation.
    #[serde(default = "default_contention_alpha")]
    pub contention_alpha: f64,
    #[serde(default)]
    pub mcl: MclConfig,
    /// Charged between the majority decision and the command being ready.
    #[serde(default = "default_vote_overhead_us")]
    pub vote_overhead_us: SimTime,
    /// Time-domain redundancy: copies of the command frame per downlink.
    #[serde(default = "default_command_copies")]
    pub command_copies: u32,
    /// A crashed node's work is re-placed this long after the crash.
    #[serde(default = "default_reorchestration_budget_us")]
    pub reorchestration_budget_us: SimTime,
    #[serde(default)]
    pub rejuvenation: Option<RejuvenationParams>,
    #[serde(default)]
    pub fault_plan: Vec<FaultEvent>,
    /// Sync frames appear in the network trace only when set (they dominate
    /// row counts at one frame per node per cycle).
    #[serde(default)]
    pub trace_sync_frames: bool,
    /// Published uplink-bound figure to diff against; the `bound` command
    /// prints the residual when present.
    #[serde(default)]
    pub uplink_bound_reference_us: Option<f64>,
    /// Hard cap on simulated time, guarding against a stalled loop.
    #[serde(default = "default_max_sim_us")]
    pub max_sim_us: SimTime,
}

fn default_name() -> String {
    "scenario".to_string()
}
fn default_rounds() -> u64 {
    30
}
fn default_seed() -> u64 {
    1
}
fn default_true() -> bool {
    true
}
fn default_mcl_container() -> String {
    "mcl".to_string()
}
fn default_contention_alpha() -> f64 {
    0.15
}
fn default_vote_overhead_us() -> SimTime {
    500
}
fn default_command_copies() -> u32 {
    1
}
fn default_reorchestration_budget_us() -> SimTime {
    2_000_000
}
fn default_max_sim_us() -> SimTime {
    600_000_000
}

impl ScenarioConfig {
    /// Parse a scenario document without touching the filesystem; the map
    /// must be supplied separately (see [`LoadedScenario::from_parts`]).
    pub fn from_json(text: &str) -> Result<ScenarioConfig, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    /// The container spec driving the localization pipeline.
    pub fn mcl_spec(&self) -> Result<&ContainerSpec, ScenarioError> {
        self.containers
            .iter()
            .find(|c| c.name == self.mcl_container)
            .ok_or_else(|| {
                invalid(format!(
                    "mcl_container {:?} is not among the declared containers",
                    self.mcl_container
                ))
            })
    }

    /// All participant node ids in schedule order: robot first, then edges.
    pub fn participant_ids(&self) -> Vec<NodeId> {
        let mut ids = vec![self.robot.node_id];
        ids.extend(self.edge_nodes.iter().map(|n| n.id));
        ids
    }

    /// Resolved fixed-priority task set (configured or Table-I default).
    pub fn taskset(&self) -> Vec<TaskSpec> {
        self.robot.taskset.clone().unwrap_or_else(default_taskset)
    }
}

/// A validated scenario plus its parsed map, ready to run.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub config: ScenarioConfig,
    pub grid: OccupancyGrid,
}

impl LoadedScenario {
    /// Read and validate a scenario file; `map_file` resolves relative to
    /// the scenario file's own directory.
    pub fn load(path: &Path) -> Result<LoadedScenario, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config = ScenarioConfig::from_json(&text)?;
        let map_path = if config.map_file.is_absolute() {
            config.map_file.clone()
        } else {
            path.parent()
                .unwrap_or(Path::new("."))
                .join(&config.map_file)
        };
        let map_text = std::fs::read_to_string(&map_path).map_err(|source| ScenarioError::Io {
            path: map_path.clone(),
            source,
        })?;
        let grid = OccupancyGrid::from_map_str(&map_text)?;
        LoadedScenario::from_parts(config, grid)
    }

    /// Validate an in-memory config against an in-memory map (the non-file
    /// entry point used by tests and the C API).
    pub fn from_parts(
        config: ScenarioConfig,
        grid: OccupancyGrid,
    ) -> Result<LoadedScenario, ScenarioError> {
        let loaded = LoadedScenario { config, grid };
        loaded.validate()?;
        Ok(loaded)
    }

    /// Every structural and cross-reference invariant a run relies on.
    /// Anything caught here would otherwise surface mid-run as a panic or,
    /// worse, a silently meaningless result.
    fn validate(&self) -> Result<(), ScenarioError> {
        let cfg = &self.config;
        cfg.radio.validate()?;
        cfg.tdma.validate()?;

        if cfg.rounds == 0 {
            return Err(invalid("rounds must be at least 1"));
        }

        // Node identities: unique, and every participant owns a slot (a
        // slotless node could neither send data nor keep its clock synced).
        let ids = cfg.participant_ids();
        let mut seen = std::collections::BTreeSet::new();
        for id in &ids {
            if !seen.insert(*id) {
                return Err(invalid(format!("node id {id} declared twice")));
            }
        }
        for slot in &cfg.tdma.slots {
            if !seen.contains(&slot.owner) {
                return Err(invalid(format!(
                    "slot owner {} is not a declared node",
                    slot.owner
                )));
            }
        }
        for id in &ids {
            if !cfg.tdma.slots.iter().any(|s| s.owner == *id) {
                return Err(invalid(format!("node {id} owns no TDMA slot")));
            }
        }

        for node in &cfg.edge_nodes {
            if node.critical_cores >= node.total_cores {
                return Err(invalid(format!(
                    "edge node {}: critical_cores {} must leave at least one \
                     best-effort core of {}",
                    node.id, node.critical_cores, node.total_cores
                )));
            }
        }

        // Containers and the localization workload.
        let mut names = std::collections::BTreeSet::new();
        for c in &cfg.containers {
            if !names.insert(c.name.as_str()) {
                return Err(invalid(format!("container {:?} declared twice", c.name)));
            }
            if c.replicas == 0 || c.cores_demand == 0 {
                return Err(invalid(format!(
                    "container {:?}: replicas and cores_demand must be positive",
                    c.name
                )));
            }
            if !(0.0..=1.0).contains(&c.parallel_fraction) {
                return Err(invalid(format!(
                    "container {:?}: parallel_fraction {} outside [0, 1]",
                    c.name, c.parallel_fraction
                )));
            }
            if !c.base_exec_time_us.is_finite() || c.base_exec_time_us <= 0.0 {
                return Err(invalid(format!(
                    "container {:?}: base_exec_time_us must be positive",
                    c.name
                )));
            }
        }
        let mcl_spec = cfg.mcl_spec()?;
        if mcl_spec.kind != ContainerKind::Critical {
            return Err(invalid(format!(
                "mcl_container {:?} must be a critical container",
                cfg.mcl_container
            )));
        }

        if cfg.contention_alpha < 0.0 {
            return Err(invalid("contention_alpha must be non-negative"));
        }
        if cfg.command_copies == 0 {
            return Err(invalid("command_copies must be at least 1"));
        }

        // Sensor model: the physical unit serves 354..=366 samples.
        if !(354..=366).contains(&cfg.robot.lidar_samples) {
            return Err(invalid(format!(
                "lidar_samples {} outside the sensor's 354..=366 range",
                cfg.robot.lidar_samples
            )));
        }
        if !cfg.robot.ms_per_sample.is_finite() || cfg.robot.ms_per_sample <= 0.0 {
            return Err(invalid("ms_per_sample must be positive"));
        }
        if !cfg.robot.max_range_m.is_finite() || cfg.robot.max_range_m <= 0.0 {
            return Err(invalid("max_range_m must be positive"));
        }

        // Filter parameters.
        if cfg.mcl.particle_count == 0 {
            return Err(invalid("mcl.particle_count must be positive"));
        }
        if cfg.mcl.beam_decimation == 0 {
            return Err(invalid("mcl.beam_decimation must be positive"));
        }
        if !(0.0..=1.0).contains(&cfg.mcl.injection_fraction) {
            return Err(invalid("mcl.injection_fraction outside [0, 1]"));
        }

        // Clock model vs guard: initial offsets beyond what the guard
        // absorbs would make honest nodes violate their own slots.
        if cfg.clock.max_initial_offset_us < 0 {
            return Err(invalid("max_initial_offset_us must be non-negative"));
        }
        // Hard floor is twice the offset bound (two misaligned clocks can
        // disagree by that much); the +10 µs drift slack in the recommended
        // default is advice, not a validity requirement, so an idealized
        // zero-error configuration may run with a zero guard.
        let needed_guard = 2 * cfg.clock.max_initial_offset_us as u64;
        if cfg.tdma.guard_time_us < needed_guard {
            return Err(invalid(format!(
                "guard_time_us {} cannot absorb ±{} µs initial clock error \
                 (needs at least {})",
                cfg.tdma.guard_time_us, cfg.clock.max_initial_offset_us, needed_guard
            )));
        }
        if 2 * cfg.clock.sync_trim_k + 1 > ids.len() {
            return Err(invalid(format!(
                "sync_trim_k {} needs at least {} participants, have {}",
                cfg.clock.sync_trim_k,
                2 * cfg.clock.sync_trim_k + 1,
                ids.len()
            )));
        }

        // Worst-case burst per owner must fit its slot, or the enforcement
        // gate would suppress honest traffic every round.
        let sync_tx = frame_tx_time(
            cfg.clock.sync_payload_bytes,
            cfg.radio.overhead_bytes,
            &cfg.radio,
        );
        let payload = sensor_payload_bytes(cfg.robot.lidar_samples);
        let uplink_tx = crate::ttwifi::burst_tx_bound(payload, &cfg.radio);
        let cmd_tx = cfg.command_copies as f64
            * frame_tx_time(
                crate::planner::MoveCommand::WIRE_BYTES,
                cfg.radio.overhead_bytes,
                &cfg.radio,
            );
        for slot in &cfg.tdma.slots {
            let worst = if slot.owner == cfg.robot.node_id {
                sync_tx + uplink_tx
            } else {
                sync_tx + cmd_tx
            };
            // Senders pad their start into the slot (true-time containment
            // under clock error); the same margin is kept at the tail, and
            // the ceiling between sync and data bursts costs at most one
            // extra microsecond.
            let margin = (2 * cfg.tdma.tx_pad_us()) as f64 + 1.0;
            if worst + margin > slot.length_us as f64 {
                return Err(invalid(format!(
                    "slot of node {} is {} µs but its worst burst needs {:.2} µs \
                     plus {:.0} µs of containment margin",
                    slot.owner, slot.length_us, worst, margin
                )));
            }
        }
        // Map cross-references.
        let (sr, sc) = self
            .grid
            .cell_of(cfg.robot.start_pose.x, cfg.robot.start_pose.y);
        if self.grid.is_occupied(sr, sc) {
            return Err(invalid(format!(
                "start pose ({}, {}) lies in an occupied or out-of-bounds cell",
                cfg.robot.start_pose.x, cfg.robot.start_pose.y
            )));
        }
        let (gr, gc) = cfg.robot.goal_cell;
        if self.grid.is_occupied(gr as i64, gc as i64) {
            return Err(invalid(format!(
                "goal cell ({gr}, {gc}) is occupied or out of bounds"
            )));
        }
        match astar(&self.grid, (sr as usize, sc as usize), (gr, gc)) {
            Ok(_) => {}
            Err(PlanError::NoPath) => {
                return Err(invalid("goal cell is unreachable from the start pose"))
            }
            Err(e) => return Err(invalid(format!("planning check failed: {e}"))),
        }

        // Fault-plan targets must resolve.
        for fault in &cfg.fault_plan {
            match &fault.kind {
                FaultKind::CrashNode { node }
                | FaultKind::Babble { node }
                | FaultKind::ClockOffset { node, .. }
                | FaultKind::SlowNode { node, .. } => {
                    if !cfg.edge_nodes.iter().any(|n| n.id == *node) {
                        return Err(invalid(format!(
                            "{} fault targets unknown edge node {node}",
                            fault.kind.name()
                        )));
                    }
                }
                FaultKind::CorruptReplica { container, replica } => {
                    let Some(spec) = cfg.containers.iter().find(|c| &c.name == container) else {
                        return Err(invalid(format!(
                            "corrupt_replica fault targets unknown container {container:?}"
                        )));
                    };
                    if *replica >= spec.replicas {
                        return Err(invalid(format!(
                            "corrupt_replica fault targets replica {replica} of \
                             {container:?}, which has {} replicas",
                            spec.replicas
                        )));
                    }
                }
            }
            if let FaultKind::SlowNode { factor, .. } = fault.kind {
                if !factor.is_finite() || factor < 1.0 {
                    return Err(invalid("slow_node factor must be at least 1"));
                }
            }
        }

        // The task set must be schedulable, or the robot model's timing
        // assumptions are void before the first round.
        let tasks = cfg.taskset();
        for (task, r) in tasks.iter().zip(response_times(&tasks)) {
            match r {
                Some(r) if r <= task.period_us => {}
                _ => {
                    return Err(invalid(format!(
                        "task {:?} is unschedulable under the configured set",
                        task.name
                    )))
                }
            }
        }

        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::scenario::testutil::{tiny_config_json, tiny_grid};

    fn tiny() -> LoadedScenario {
        let config = ScenarioConfig::from_json(&tiny_config_json()).unwrap();
        LoadedScenario::from_parts(config, tiny_grid()).unwrap()
    }

    #[test]
    fn tiny_scenario_validates() {
        let s = tiny();
        assert_eq!(s.config.rounds, 30, "default applies");
        assert_eq!(s.config.robot.lidar_samples, 366);
        assert!(s.config.enforcement);
        assert_eq!(s.config.participant_ids(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn unknown_field_is_a_parse_error() {
        let text = tiny_config_json().replace("\"rounds\"", "\"rognds\"");
        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        doc["not_a_field"] = serde_json::json!(1);
        let err = ScenarioConfig::from_json(&doc.to_string()).unwrap_err();
        match err {
            ScenarioError::Parse { detail, .. } => {
                assert!(detail.contains("not_a_field"), "got: {detail}")
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn parse_error_names_line_and_column() {
        let err = ScenarioConfig::from_json("{\n  \"map_file\": 12,\n}").unwrap_err();
        match err {
            ScenarioError::Parse { line, .. } => assert!(line >= 2, "line {line}"),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn slot_owner_must_be_declared() {
        let text = tiny_config_json().replace("{\"owner\": 4,", "{\"owner\": 9,");
        let config = ScenarioConfig::from_json(&text).unwrap();
        let err = LoadedScenario::from_parts(config, tiny_grid()).unwrap_err();
        assert!(err.to_string().contains("slot owner 9"), "got: {err}");
    }

    #[test]
    fn every_node_needs_a_slot() {
        let mut config = ScenarioConfig::from_json(&tiny_config_json()).unwrap();
        config.tdma.slots[4].owner = 1; // node 4 now slotless
        let err = LoadedScenario::from_parts(config, tiny_grid()).unwrap_err();
        assert!(err.to_string().contains("owns no TDMA slot"), "got: {err}");
    }

    #[test]
    fn guard_must_absorb_initial_clock_error() {
        let mut config = ScenarioConfig::from_json(&tiny_config_json()).unwrap();
        config.clock.max_initial_offset_us = 200;
        let err = LoadedScenario::from_parts(config, tiny_grid()).unwrap_err();
        assert!(err.to_string().contains("guard_time_us"), "got: {err}");
    }

    #[test]
    fn occupied_start_cell_rejected() {
        let mut config = ScenarioConfig::from_json(&tiny_config_json()).unwrap();
        config.robot.start_pose = Pose::new(3.5, 3.5, 0.0);
        let err = LoadedScenario::from_parts(config, tiny_grid()).unwrap_err();
        assert!(err.to_string().contains("start pose"), "got: {err}");
    }

    #[test]
    fn unreachable_goal_rejected() {
        let mut grid = tiny_grid();
        // Wall the goal corner off completely.
        for i in 4..8 {
            grid.set_occupied(5, i, true);
            grid.set_occupied(i, 5, true);
        }
        let config = ScenarioConfig::from_json(&tiny_config_json()).unwrap();
        let err = LoadedScenario::from_parts(config, grid).unwrap_err();
        assert!(err.to_string().contains("unreachable"), "got: {err}");
    }

    #[test]
    fn fault_targets_must_resolve() {
        let mut config = ScenarioConfig::from_json(&tiny_config_json()).unwrap();
        config.fault_plan.push(FaultEvent {
            at_us: 1_000,
            kind: FaultKind::CrashNode { node: 99 },
        });
        let err = LoadedScenario::from_parts(config.clone(), tiny_grid()).unwrap_err();
        assert!(
            err.to_string().contains("unknown edge node 99"),
            "got: {err}"
        );

        config.fault_plan[0].kind = FaultKind::CorruptReplica {
            container: "mcl".into(),
            replica: 7,
        };
        let err = LoadedScenario::from_parts(config, tiny_grid()).unwrap_err();
        assert!(err.to_string().contains("replica 7"), "got: {err}");
    }

    #[test]
    fn fault_kind_round_trips_through_json() {
        let fault = FaultEvent {
            at_us: 3_000_000,
            kind: FaultKind::SlowNode {
                node: 2,
                factor: 2.5,
            },
        };
        let text = serde_json::to_string(&fault).unwrap();
        assert!(text.contains("\"kind\":\"slow_node\""), "got: {text}");
        let back: FaultEvent = serde_json::from_str(&text).unwrap();
        assert_eq!(back, fault);
    }

    #[test]
    fn mcl_container_must_exist_and_be_critical() {
        let mut config = ScenarioConfig::from_json(&tiny_config_json()).unwrap();
        config.mcl_container = "ghost".into();
        let err = LoadedScenario::from_parts(config, tiny_grid()).unwrap_err();
        assert!(err.to_string().contains("ghost"), "got: {err}");

        let text =
            tiny_config_json().replace("\"kind\": \"critical\"", "\"kind\": \"best-effort\"");
        let config = ScenarioConfig::from_json(&text).unwrap();
        let err = LoadedScenario::from_parts(config, tiny_grid()).unwrap_err();
        assert!(err.to_string().contains("critical"), "got: {err}");
    }

    #[test]
    fn load_resolves_map_relative_to_scenario_file() {
        let dir = std::env::temp_dir().join(format!("ttedge-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let map_path = dir.join("m.map");
        std::fs::write(&map_path, tiny_grid().to_map_string()).unwrap();
        let scen_path = dir.join("s.json");
        let text = tiny_config_json().replace("unused.map", "m.map");
        std::fs::write(&scen_path, text).unwrap();

        let loaded = LoadedScenario::load(&scen_path).unwrap();
        assert_eq!(loaded.grid.width(), 8);
        std::fs::remove_dir_all(&dir).ok();
    }
}
