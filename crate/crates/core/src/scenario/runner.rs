//! Closed-loop experiment runner.
//!
//! One seeded execution of the full pipeline — sense, uplink over the TDMA
//! medium, replicated localization and planning on the edge fleet, majority
//! vote, downlink, actuation — driven entirely by the event kernel, with the
//! scenario's fault plan injected along the way and every externally visible
//! step captured in four trace files plus a summary.
//!
//! Structure worth knowing before reading the handlers:
//!
//! - **Transmissions happen only at slot events.** Every participant wakes
//!   at each of its own slots, sends a one-frame time-sync burst, and — if
//!   its outbox holds data — follows up with a single data burst scheduled
//!   right after the sync burst clears the air. Senders start
//!   [`tx_pad_us`] into the slot so true-time containment holds under
//!   bounded clock error (the medium enforces containment with no
//!   tolerance).
//! - **Clock sync is in-band.** Receivers difference each sync frame's
//!   arrival against the schedule-implied phase and fold the estimates with
//!   the trimmed-mean agreement function once per cycle at their own slot.
//!   Everyone participates, robot included; no oracle time is consulted.
//! - **Replica groups share state.** Healthy replicas are bit-identical by
//!   construction (same inputs, same seeds), so the group's particle filter
//!   advances once per round and every live replica reports the result
//!   after its host-specific compute delay. Replica faults are modeled
//!   where they become observable — at the vote boundary — by perturbing
//!   the faulty replica's reported command. A replica restored by
//!   re-orchestration or rejuvenation copies the group state, which this
//!   representation makes a no-op.
//! - **Every round ends exactly one of two ways**: a voted command is
//!   actuated, or the fail-safe halts the robot. A watchdog timeout armed
//!   at scan completion covers even the wedged-before-awaiting corner (an
//!   uplink suppressed by the slot gate), so no round is ever left in
//!   limbo.
//!
//! [`tx_pad_us`]: crate::ttwifi::TdmaSchedule::tx_pad_us

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::mcl::{init_particles, mcl_step, ParticleSet};
use crate::planner::{astar, obstacle_check, path_to_command, MoveCommand};
use crate::rmo::{
    exec_time_us, lrm_place, quantize_command, rejuvenation_events, reorchestrate, vote, EdgeNode,
    InstanceId, NodeStatus, OverrunTracker, Placement, RejuvEvent, RejuvPhase, VoteOutcome,
};
use crate::robot::{CommandDisposition, RobotMode, RobotState};
use crate::scenario::bound::{e2e_bound, worst_admitted_co_runners, E2eBudget};
use crate::scenario::config::{FaultKind, LoadedScenario, ScenarioConfig, ScenarioError};
use crate::simkern::{
    derive_stream, round_half_up, EventPayload, Kernel, NodeClock, NodeId, SimTime, WorkerPool,
};
use crate::ttwifi::{
    estimate_offset, fragment, frame_tx_time, fta_sync, BurstReceipt, Deduplicator, Frame,
    FrameContent, Medium, TransmitResult, BROADCAST,
};
use crate::worldmodel::{
    generate_scan, measurement_duration, sensor_payload_bytes, LidarScan, OccupancyGrid,
    OdometryReading, Pose,
};

/// Per-round timing ledger. Timestamps are true simulation time and
/// non-decreasing in field order; `e2e_us` runs from the start of the
/// sensing window to the moment actuation takes effect (command receipt
/// plus the configured grant), and `within_bound` compares it against the
/// analytic budget for the same configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyRecord {
    pub round: u64,
    pub t_sense_start_us: SimTime,
    pub t_tx_start_us: SimTime,
    pub t_rx_edge_us: SimTime,
    pub t_compute_done_us: SimTime,
    pub t_cmd_rx_robot_us: SimTime,
    pub e2e_us: u64,
    pub bound_us: f64,
    pub within_bound: bool,
}

pub const LATENCY_HEADER: &str = "round,t_sense_start_us,t_tx_start_us,t_rx_edge_us,\
t_compute_done_us,t_cmd_rx_robot_us,e2e_us,bound_us,within_bound";

impl LatencyRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.3},{}",
            self.round,
            self.t_sense_start_us,
            self.t_tx_start_us,
            self.t_rx_edge_us,
            self.t_compute_done_us,
            self.t_cmd_rx_robot_us,
            self.e2e_us,
            self.bound_us,
            self.within_bound as u8
        )
    }
}

/// Aggregate outcome of a run, also serialized as `summary.json` next to
/// the traces. Everything here is derivable from the traces; the summary
/// exists so results can be checked without re-parsing CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub rounds_requested: u64,
    /// Rounds that ran to a verdict — actuation or fail-safe halt.
    pub rounds_attempted: u64,
    /// Rounds that ended in an actuated command.
    pub rounds_completed: u64,
    pub bound_us: f64,
    pub actuation_grant_us: SimTime,
    pub max_e2e_us: Option<u64>,
    pub mean_e2e_us: Option<f64>,
    pub bound_violations: u64,
    pub collisions: u64,
    pub slot_violations: u64,
    pub quorum_failures: u64,
    pub halts: u64,
    pub reorchestrations: u64,
    /// Actuated commands that differ (after vote quantization) from the
    /// decided vote — the run-level fault-masking check. Nonzero is a
    /// failure of the replication scheme.
    pub incorrect_actuations: u64,
    pub commands_actuated: u64,
    /// Distance between the group estimate and the true pose at scan time,
    /// one entry per round in which the group computed (quorum or not).
    pub loc_error_by_round_m: Vec<f64>,
    pub loc_error_final_m: Option<f64>,
    pub loc_error_max_m: Option<f64>,
    /// The particle population size never changed across any filter step.
    pub particle_population_constant: bool,
    pub rejuvenation_warning: Option<String>,
    /// The run hit `max_sim_us` (or ran out of events) before finishing the
    /// requested rounds; diagnostics live in the traces.
    pub truncated: bool,
}

/// The four trace files, built in memory so determinism checks can compare
/// runs without touching the filesystem.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub network: String,
    pub robot: String,
    pub orchestration: String,
    pub latency: String,
}

impl TraceSet {
    /// Write the traces plus the summary under `dir` (created if missing).
    pub fn write_to_dir(&self, dir: &Path, summary: &RunSummary) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("network.csv"), &self.network)?;
        fs::write(dir.join("robot.csv"), &self.robot)?;
        fs::write(dir.join("orchestration.csv"), &self.orchestration)?;
        fs::write(dir.join("latency.csv"), &self.latency)?;
        let json = serde_json::to_string_pretty(summary).expect("summary serializes");
        fs::write(dir.join("summary.json"), json + "\n")?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub traces: TraceSet,
    pub records: Vec<LatencyRecord>,
    pub budget: E2eBudget,
}

// ---------------------------------------------------------------------------
// Event vocabulary.

#[derive(Debug, Clone)]
enum Ev {
    /// A node's own slot begins, `tx_pad_us` in (local clock, mapped to
    /// true time with the clock state at scheduling).
    SlotStart {
        node: NodeId,
        slot_index: usize,
        slot_start_local: i64,
    },
    /// Follow-up transmission of the node's queued data frames once its
    /// sync burst cleared. `deadline_local` is when the burst must end.
    DataBurst {
        node: NodeId,
        deadline_local: i64,
    },
    /// A burst left the air; deliver or discard its frames.
    Delivery {
        receipt: BurstReceipt,
    },
    RoundStart,
    SenseDone {
        round: u64,
    },
    ComputeDone {
        round: u64,
        instance: InstanceId,
        host: NodeId,
        command: MoveCommand,
        over_budget: bool,
    },
    /// The vote decided and its overhead elapsed; the voter queues the
    /// command for its next slot.
    CommandReady {
        round: u64,
        voter: NodeId,
    },
    CommandTimeout {
        round: u64,
    },
    Fault {
        index: usize,
    },
    BabbleBurst {
        node: NodeId,
        victim: usize,
    },
    ReorchDone {
        crashed: NodeId,
    },
    Rejuv {
        index: usize,
    },
}

impl EventPayload for Ev {
    fn kind(&self) -> &'static str {
        match self {
            Ev::SlotStart { .. } => "slot_start",
            Ev::DataBurst { .. } => "data_burst",
            Ev::Delivery { .. } => "delivery",
            Ev::RoundStart => "round_start",
            Ev::SenseDone { .. } => "sense_done",
            Ev::ComputeDone { .. } => "compute_done",
            Ev::CommandReady { .. } => "command_ready",
            Ev::CommandTimeout { .. } => "command_timeout",
            Ev::Fault { .. } => "fault",
            Ev::BabbleBurst { .. } => "babble_burst",
            Ev::ReorchDone { .. } => "reorch_done",
            Ev::Rejuv { .. } => "rejuv",
        }
    }
}

// ---------------------------------------------------------------------------
// Per-round bookkeeping.

#[derive(Debug, Clone)]
struct RoundTrack {
    round: u64,
    t_sense_start: SimTime,
    true_pose_at_scan: Pose,
    t_tx_start: Option<SimTime>,
    t_rx_edge: Option<SimTime>,
    t_compute_done: Option<SimTime>,
    votes: Vec<(InstanceId, MoveCommand)>,
    decided: bool,
    voted: Option<MoveCommand>,
    no_quorum_declared: bool,
    /// The round reached its verdict (actuation or halt); everything still
    /// in flight for it is stale.
    ended: bool,
}

impl RoundTrack {
    fn new(round: u64, now: SimTime, pose: Pose) -> RoundTrack {
        RoundTrack {
            round,
            t_sense_start: now,
            true_pose_at_scan: pose,
            t_tx_start: None,
            t_rx_edge: None,
            t_compute_done: None,
            votes: Vec::new(),
            decided: false,
            voted: None,
            no_quorum_declared: false,
            ended: false,
        }
    }
}

/// Result of the group's shared per-round evaluation (memoized: healthy
/// replicas are bit-identical, so it runs once per round).
#[derive(Debug, Clone)]
struct GroupResult {
    round: u64,
    command: MoveCommand,
}

// ---------------------------------------------------------------------------
// The simulation itself.

struct Sim<'a> {
    scenario: &'a LoadedScenario,
    seed: u64,
    pool: &'a WorkerPool,
    budget: E2eBudget,
    comm_timeout_us: SimTime,
    /// Worst admitted per-replica execution time; completions beyond this
    /// count as budget overruns.
    admitted_exec_us: f64,
    kernel: Kernel<Ev>,
    medium: Medium,
    loss_rng: ChaCha12Rng,

    clocks: BTreeMap<NodeId, NodeClock>,
    outbox: BTreeMap<NodeId, VecDeque<Frame>>,
    sync_estimates: BTreeMap<NodeId, Vec<i64>>,

    nodes: Vec<EdgeNode>,
    placement: Placement,
    rogue: BTreeSet<NodeId>,
    slow: BTreeMap<NodeId, f64>,
    corrupt: BTreeSet<InstanceId>,
    rejuvenating: BTreeSet<InstanceId>,
    rejuv_events: Vec<RejuvEvent>,
    overruns: OverrunTracker,

    robot: RobotState,
    dedup: Deduplicator,
    /// Uplink fragment ordinals received so far, per (edge node, round).
    fragments: BTreeMap<(NodeId, u64), BTreeSet<u32>>,
    /// Rounds whose scan already triggered the group computation.
    scan_done: BTreeSet<u64>,

    particles: ParticleSet,
    /// What the group believes was last actuated — the motion input for the
    /// next filter step. Updated when a vote decides.
    last_voted: MoveCommand,
    group: Option<GroupResult>,

    current: RoundTrack,
    records: Vec<LatencyRecord>,
    rounds_done: u64,

    net: String,
    rob: String,
    orch: String,

    quorum_failures: u64,
    reorchestrations: u64,
    incorrect_actuations: u64,
    commands_actuated: u64,
    loc_errors: Vec<f64>,
    population_ok: bool,
    rejuv_warning: Option<String>,
    truncated: bool,
}

fn dist(a: &Pose, b: &Pose) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Smallest local time ≥ `from` whose phase inside the cycle is `phase_us`.
fn next_local_phase(from: i64, phase_us: u64, cycle_us: u64) -> i64 {
    let cycle = cycle_us as i64;
    let base = from.div_euclid(cycle) * cycle + phase_us as i64;
    if base >= from {
        base
    } else {
        base + cycle
    }
}

/// Deterministic perturbation a corrupted replica applies to its reported
/// command: large enough to survive vote quantization, distinct per replica
/// so two corrupt replicas never accidentally agree with each other.
fn corrupt_command(cmd: &MoveCommand, replica: u32) -> MoveCommand {
    let k = (replica + 1) as f64;
    MoveCommand {
        v_mps: cmd.v_mps + 0.111 * k,
        omega_rps: cmd.omega_rps + 0.173 * k,
        duration_ms: cmd.duration_ms + 17.0 * k,
        sequence: cmd.sequence,
    }
}

impl<'a> Sim<'a> {
    /// The config outlives the simulation, so handlers can hold this across
    /// mutations of `self`.
    fn cfg(&self) -> &'a ScenarioConfig {
        &self.scenario.config
    }

    fn grid(&self) -> &'a OccupancyGrid {
        &self.scenario.grid
    }

    fn new(
        scenario: &'a LoadedScenario,
        seed: u64,
        pool: &'a WorkerPool,
    ) -> Result<Sim<'a>, ScenarioError> {
        let cfg = &scenario.config;
        let budget = e2e_bound(scenario)?;
        let comm_timeout_us = cfg
            .robot
            .comm_timeout_us
            .unwrap_or(2 * budget.total_us.ceil() as SimTime);
        let mcl_spec = cfg.mcl_spec()?;
        let admitted_exec_us = exec_time_us(
            mcl_spec,
            mcl_spec.cores_demand,
            worst_admitted_co_runners(scenario)?,
            cfg.contention_alpha,
        );

        let mut nodes: Vec<EdgeNode> = cfg
            .edge_nodes
            .iter()
            .map(|n| EdgeNode::new(n.id, n.total_cores, n.critical_cores, n.memory_bw_units))
            .collect();
        let placement = lrm_place(&cfg.containers, &mut nodes)?;

        let mut clocks = BTreeMap::new();
        for (i, id) in cfg.participant_ids().into_iter().enumerate() {
            let mut rng = derive_stream(seed, "scenario.clock", &[i as u64]);
            let e = cfg.clock.max_initial_offset_us;
            let offset_us = if e == 0 { 0 } else { rng.random_range(-e..=e) };
            let d = cfg.clock.drift_ppm_max;
            let drift_ppm = if d == 0.0 {
                0.0
            } else {
                rng.random_range(-d..d)
            };
            clocks.insert(
                id,
                NodeClock {
                    offset_us,
                    drift_ppm,
                    last_sync: 0,
                },
            );
        }

        let particles = init_particles(&scenario.grid, &cfg.mcl, seed)?;
        let population_ok = particles.len() == cfg.mcl.particle_count;

        let mut sim = Sim {
            scenario,
            seed,
            pool,
            budget,
            comm_timeout_us,
            admitted_exec_us,
            kernel: Kernel::new(),
            medium: Medium::new(cfg.radio, cfg.tdma.clone(), cfg.enforcement),
            loss_rng: derive_stream(seed, "scenario.loss", &[]),
            clocks,
            outbox: BTreeMap::new(),
            sync_estimates: BTreeMap::new(),
            nodes,
            placement,
            rogue: BTreeSet::new(),
            slow: BTreeMap::new(),
            corrupt: BTreeSet::new(),
            rejuvenating: BTreeSet::new(),
            rejuv_events: Vec::new(),
            overruns: OverrunTracker::new(3),
            robot: RobotState::new(cfg.robot.start_pose, comm_timeout_us),
            dedup: Deduplicator::new(),
            fragments: BTreeMap::new(),
            scan_done: BTreeSet::new(),
            particles,
            last_voted: MoveCommand::halt(0),
            group: None,
            current: RoundTrack::new(0, 0, cfg.robot.start_pose),
            records: Vec::new(),
            rounds_done: 0,
            net: String::from("true_time_us,event,src,dst,frame_kind,bytes,slot_index\n"),
            rob: String::from("true_time_us,mode,x,y,theta,event\n"),
            orch: String::from("true_time_us,event,subject,detail\n"),
            quorum_failures: 0,
            reorchestrations: 0,
            incorrect_actuations: 0,
            commands_actuated: 0,
            loc_errors: Vec::new(),
            population_ok,
            rejuv_warning: None,
            truncated: false,
        };
        for id in cfg.participant_ids() {
            sim.outbox.insert(id, VecDeque::new());
            sim.sync_estimates.insert(id, Vec::new());
        }
        Ok(sim)
    }

    // -- trace emitters -----------------------------------------------------

    // One parameter per CSV column; bundling them into a struct would just
    // restate the header somewhere else.
    #[allow(clippy::too_many_arguments)]
    fn net_row(
        &mut self,
        t: SimTime,
        event: &str,
        src: NodeId,
        dst: NodeId,
        kind: impl fmt::Display,
        bytes: u64,
        slot: Option<usize>,
    ) {
        let dst = if dst == BROADCAST {
            "*".to_string()
        } else {
            dst.to_string()
        };
        let slot = slot.map(|s| s.to_string()).unwrap_or_default();
        let _ = writeln!(self.net, "{t},{event},{src},{dst},{kind},{bytes},{slot}");
    }

    fn rob_row(&mut self, t: SimTime, event: &str) {
        let p = self.robot.true_pose;
        let mode = self.robot.mode().as_str();
        let _ = writeln!(
            self.rob,
            "{t},{mode},{:.6},{:.6},{:.6},{event}",
            p.x, p.y, p.theta
        );
    }

    fn orch_row(&mut self, t: SimTime, event: &str, subject: impl fmt::Display, detail: &str) {
        debug_assert!(!detail.contains(','), "detail must stay one CSV field");
        let _ = writeln!(self.orch, "{t},{event},{subject},{detail}");
    }

    // -- fleet views --------------------------------------------------------

    fn node_up(&self, id: NodeId) -> bool {
        if id == self.cfg().robot.node_id {
            return true; // robot crash-faults are outside the fault model
        }
        self.nodes
            .iter()
            .find(|n| n.id == id)
            .is_some_and(|n| n.status == NodeStatus::Up)
    }

    fn mcl_instances(&self) -> Vec<InstanceId> {
        let spec = self.cfg().mcl_spec().expect("validated");
        (0..spec.replicas)
            .map(|r| InstanceId::new(&spec.name, r))
            .collect()
    }

    /// A replica is live when it has an up host and is not mid-restart.
    fn instance_live(&self, id: &InstanceId) -> bool {
        !self.rejuvenating.contains(id)
            && self
                .placement
                .node_of(id)
                .is_some_and(|host| self.node_up(host))
    }

    fn live_replica_count(&self) -> usize {
        self.mcl_instances()
            .iter()
            .filter(|id| self.instance_live(id))
            .count()
    }

    /// Lowest-id healthy edge node hosting a live localization replica —
    /// the group member that relays the voted command.
    fn voter_node(&self) -> Option<NodeId> {
        self.mcl_instances()
            .iter()
            .filter(|id| self.instance_live(id))
            .filter_map(|id| self.placement.node_of(id))
            .min()
    }

    // -- scheduling helpers ---------------------------------------------------

    fn schedule(&mut self, at: SimTime, target: NodeId, ev: Ev) {
        let at = at.max(self.kernel.now());
        self.kernel
            .schedule(at, target, ev)
            .expect("clamped to the present");
    }

    /// Arm the node's next slot wake-up from its current clock state.
    fn schedule_next_slot(&mut self, node: NodeId, after_local: i64) {
        let pad = self.cfg().tdma.tx_pad_us() as i64;
        let (slot_index, slot_start_local) = self
            .cfg()
            .tdma
            .next_slot_index(node, after_local)
            .expect("validated: every participant owns a slot");
        let fire = self.clocks[&node].true_time_for_local(slot_start_local + pad);
        self.schedule(
            fire,
            node,
            Ev::SlotStart {
                node,
                slot_index,
                slot_start_local,
            },
        );
    }

    fn prime(&mut self) -> Result<(), ScenarioError> {
        let cfg = self.cfg();
        // Initial placement on record before anything moves.
        let assignments: Vec<(InstanceId, NodeId)> = self
            .placement
            .assignments
            .iter()
            .map(|(i, n)| (i.clone(), *n))
            .collect();
        for (instance, node) in assignments {
            self.orch_row(0, "place", &instance, &format!("node {node}"));
        }

        if let Some(r) = &cfg.rejuvenation {
            let plan = rejuvenation_events(
                &self.mcl_instances(),
                r.period_us,
                r.stagger_us,
                r.restart_us,
                cfg.max_sim_us,
            )?;
            if let Some(w) = plan.warning {
                self.orch_row(0, "degraded", &cfg.mcl_container, &w);
                self.rejuv_warning = Some(w);
            }
            self.rejuv_events = plan.events;
            for i in 0..self.rejuv_events.len() {
                let at = self.rejuv_events[i].at_us;
                self.schedule(at, cfg.robot.node_id, Ev::Rejuv { index: i });
            }
        }

        for (i, fault) in cfg.fault_plan.iter().enumerate() {
            self.kernel
                .schedule(fault.at_us, cfg.robot.node_id, Ev::Fault { index: i })
                .expect("fault times are non-negative");
        }

        // First slot wake-up per participant, from each node's own clock.
        for id in cfg.participant_ids() {
            let local_now = self.clocks[&id].local_time(0);
            self.schedule_next_slot(id, local_now + 1);
        }

        self.schedule(0, cfg.robot.node_id, Ev::RoundStart);
        Ok(())
    }

    // -- main loop -------------------------------------------------------------

    fn run(&mut self) -> Result<(), ScenarioError> {
        while let Some(ev) = self.kernel.pop() {
            if ev.fire_at > self.cfg().max_sim_us {
                self.truncated = true;
                return Ok(());
            }
            self.dispatch(ev.payload)?;
            if self.rounds_done >= self.cfg().rounds {
                return Ok(());
            }
        }
        // Out of events with rounds unfinished (every sender dead) is a
        // truncation too.
        self.truncated = true;
        Ok(())
    }

    fn dispatch(&mut self, ev: Ev) -> Result<(), ScenarioError> {
        match ev {
            Ev::SlotStart {
                node,
                slot_index,
                slot_start_local,
            } => self.on_slot_start(node, slot_index, slot_start_local),
            Ev::DataBurst {
                node,
                deadline_local,
            } => self.on_data_burst(node, deadline_local),
            Ev::Delivery { receipt } => self.on_delivery(receipt)?,
            Ev::RoundStart => self.on_round_start(),
            Ev::SenseDone { round } => self.on_sense_done(round)?,
            Ev::ComputeDone {
                round,
                instance,
                host,
                command,
                over_budget,
            } => self.on_compute_done(round, instance, host, command, over_budget),
            Ev::CommandReady { round, voter } => self.on_command_ready(round, voter),
            Ev::CommandTimeout { round } => self.on_command_timeout(round),
            Ev::Fault { index } => self.on_fault(index),
            Ev::BabbleBurst { node, victim } => self.on_babble_burst(node, victim),
            Ev::ReorchDone { crashed } => self.on_reorch_done(crashed),
            Ev::Rejuv { index } => self.on_rejuv(index),
        }
        Ok(())
    }

    // -- slot machinery ----------------------------------------------------------

    fn on_slot_start(&mut self, node: NodeId, slot_index: usize, slot_start_local: i64) {
        if !self.node_up(node) || self.rogue.contains(&node) {
            return; // dead or haywire: its slots fall silent for good
        }
        let now = self.kernel.now();
        let cfg = self.cfg();
        let pad = cfg.tdma.tx_pad_us() as i64;
        let slot_len = cfg.tdma.slots[slot_index].length_us as i64;

        let sync = Frame {
            src: node,
            dst: BROADCAST,
            payload_bytes: cfg.clock.sync_payload_bytes,
            overhead_bytes: cfg.radio.overhead_bytes,
            timestamp_local_us: slot_start_local + pad,
            replica_index: 0,
            content: FrameContent::Sync,
        };
        match self.medium.transmit(vec![sync], now, &mut self.loss_rng) {
            TransmitResult::Suppressed { frames } => {
                // Counted by the medium; a slot violation by a sync frame
                // means the node's clock error exceeds the design envelope.
                let bytes: u64 = frames.iter().map(|f| f.payload_bytes).sum();
                self.net_row(now, "violation", node, BROADCAST, "sync", bytes, None);
            }
            TransmitResult::OnAir(receipt) => {
                if cfg.trace_sync_frames {
                    self.net_row(
                        now,
                        "tx_start",
                        node,
                        BROADCAST,
                        "sync",
                        cfg.clock.sync_payload_bytes,
                        receipt.slot_index,
                    );
                }
                let end = receipt.delivery_time();
                // Queued data follows in the same slot once the sync burst
                // clears the air.
                if !self.outbox[&node].is_empty() {
                    let deadline_local = slot_start_local + slot_len - pad;
                    self.schedule(
                        end,
                        node,
                        Ev::DataBurst {
                            node,
                            deadline_local,
                        },
                    );
                }
                self.schedule(end, node, Ev::Delivery { receipt });
            }
        }

        // A node's own transmission carries zero self-error; folding the
        // zero in anchors the agreement exactly as hearing itself would.
        self.sync_estimates
            .get_mut(&node)
            .expect("participant")
            .push(0);
        let trim_k = cfg.clock.sync_trim_k;
        if self.sync_estimates[&node].len() > 2 * trim_k {
            let correction = fta_sync(&self.sync_estimates[&node], trim_k)
                .expect("enough estimates after the length check");
            self.clocks
                .get_mut(&node)
                .expect("participant")
                .resync(now, correction);
            self.sync_estimates
                .get_mut(&node)
                .expect("participant")
                .clear();
        }

        let local_now = self.clocks[&node].local_time(now);
        self.schedule_next_slot(node, local_now.max(slot_start_local) + 1);
    }

    fn on_data_burst(&mut self, node: NodeId, deadline_local: i64) {
        if !self.node_up(node) || self.rogue.contains(&node) || self.outbox[&node].is_empty() {
            return;
        }
        let now = self.kernel.now();
        let radio = &self.cfg().radio;
        let local_now = self.clocks[&node].local_time(now);
        let duration: f64 = self.outbox[&node].iter().map(|f| f.tx_time_us(radio)).sum();
        if local_now as f64 + duration > deadline_local as f64 {
            // An honest sender never starts what cannot finish inside the
            // slot; the frames wait for the next one.
            return;
        }
        let mut frames: Vec<Frame> = self
            .outbox
            .get_mut(&node)
            .expect("participant")
            .drain(..)
            .collect();
        for f in &mut frames {
            f.timestamp_local_us = local_now;
        }
        let bytes: u64 = frames.iter().map(|f| f.payload_bytes).sum();
        let kind = frames[0].kind();
        let dst = frames[0].dst;
        let is_uplink = node == self.cfg().robot.node_id
            && matches!(
                frames[0].content,
                FrameContent::SensorData { round, .. } if round == self.current.round
            );

        match self.medium.transmit(frames, now, &mut self.loss_rng) {
            TransmitResult::Suppressed { .. } => {
                // The gate cut the whole burst; the frames die with it and
                // the round-level machinery (timeout, next scan) recovers.
                self.net_row(now, "violation", node, dst, kind, bytes, None);
            }
            TransmitResult::OnAir(receipt) => {
                self.net_row(now, "tx_start", node, dst, kind, bytes, receipt.slot_index);
                let end = receipt.delivery_time();
                self.net_row(end, "tx_end", node, dst, kind, bytes, receipt.slot_index);
                if is_uplink && !self.current.ended {
                    self.current.t_tx_start = Some(now);
                    let deadline = self.robot.begin_awaiting(end);
                    self.rob_row(now, "uplink");
                    let round = self.current.round;
                    self.schedule(deadline, node, Ev::CommandTimeout { round });
                }
                self.schedule(end, node, Ev::Delivery { receipt });
            }
        }
    }

    fn on_delivery(&mut self, receipt: BurstReceipt) -> Result<(), ScenarioError> {
        let now = self.kernel.now();
        if self.medium.burst_collided(receipt.burst_id) {
            let bytes: u64 = receipt.frames.iter().map(|d| d.frame.payload_bytes).sum();
            let kind = receipt.frames[0].frame.kind();
            let dst = receipt.frames[0].frame.dst;
            self.net_row(
                now,
                "collision",
                receipt.src,
                dst,
                kind,
                bytes,
                receipt.slot_index,
            );
            return Ok(());
        }
        for delivery in receipt.frames.clone() {
            let frame = delivery.frame;
            let kind = frame.kind();
            if delivery.lost {
                self.net_row(
                    now,
                    "drop",
                    frame.src,
                    frame.dst,
                    kind,
                    frame.payload_bytes,
                    receipt.slot_index,
                );
                continue;
            }
            if !matches!(frame.content, FrameContent::Sync) || self.cfg().trace_sync_frames {
                self.net_row(
                    now,
                    "rx",
                    frame.src,
                    frame.dst,
                    kind,
                    frame.payload_bytes,
                    receipt.slot_index,
                );
            }
            match frame.content {
                FrameContent::Sync => {
                    if let Some(slot_index) = receipt.slot_index {
                        self.note_sync(frame.src, slot_index, now);
                    }
                }
                FrameContent::SensorData {
                    round, ref scan, ..
                } => {
                    let scan = Arc::clone(scan);
                    self.note_sensor_fragment(round, frame.replica_index, &scan)?;
                }
                FrameContent::Command { round, command } => {
                    self.deliver_command(frame.src, round, command);
                }
                FrameContent::Junk => {}
            }
        }
        Ok(())
    }

    /// Fold one sync observation into every healthy receiver's estimate
    /// window. No absolute cycle count travels with the frame: each
    /// receiver matches the arrival against its nearest schedule phase,
    /// which is unambiguous while clocks agree to within half a cycle.
    fn note_sync(&mut self, src: NodeId, slot_index: usize, delivery_true: SimTime) {
        let cfg = self.cfg();
        let cycle = cfg.tdma.cycle_length_us as i64;
        let slot = &cfg.tdma.slots[slot_index];
        let sync_tx = frame_tx_time(
            cfg.clock.sync_payload_bytes,
            cfg.radio.overhead_bytes,
            &cfg.radio,
        );
        let nominal = slot.start_us as i64 + cfg.tdma.tx_pad_us() as i64 + sync_tx.ceil() as i64;
        let receivers: Vec<NodeId> = cfg
            .participant_ids()
            .into_iter()
            .filter(|&p| p != src && self.node_up(p) && !self.rogue.contains(&p))
            .collect();
        for p in receivers {
            let actual = self.clocks[&p].local_time(delivery_true);
            let raw = estimate_offset(nominal, actual);
            let mut diff = raw.rem_euclid(cycle);
            if diff > cycle / 2 {
                diff -= cycle;
            }
            self.sync_estimates
                .get_mut(&p)
                .expect("participant")
                .push(diff);
        }
    }

    // -- uplink → compute ---------------------------------------------------------

    fn note_sensor_fragment(
        &mut self,
        round: u64,
        ordinal: u32,
        scan: &Arc<LidarScan>,
    ) -> Result<(), ScenarioError> {
        let cfg = self.cfg();
        let expected = fragment(sensor_payload_bytes(cfg.robot.lidar_samples), &cfg.radio) as usize;
        let edges: Vec<NodeId> = cfg
            .edge_nodes
            .iter()
            .map(|n| n.id)
            .filter(|&id| self.node_up(id) && !self.rogue.contains(&id))
            .collect();
        let now = self.kernel.now();
        for edge in edges {
            let got = self.fragments.entry((edge, round)).or_default();
            got.insert(ordinal);
            if got.len() < expected || self.scan_done.contains(&round) {
                continue;
            }
            // First node to assemble the full scan triggers the round's
            // shared computation. Co-receivers of the same broadcast finish
            // at the same instant; the tie goes to node order and changes
            // nothing observable.
            self.scan_done.insert(round);
            if round != self.current.round || self.current.ended {
                continue; // a stale scan completing late changes nothing
            }
            self.current.t_rx_edge = Some(now);
            self.compute_group(round, scan)?;
            self.schedule_replica_completions(round, now);
        }
        Ok(())
    }

    /// The group's one shared evaluation for the round: filter step over
    /// the decided-command history, plan from the estimate, gate the result
    /// against the fresh scan.
    fn compute_group(&mut self, round: u64, scan: &LidarScan) -> Result<(), ScenarioError> {
        let cfg = self.cfg();
        let grid = self.grid();
        let estimate = mcl_step(
            &mut self.particles,
            &self.last_voted,
            scan,
            grid,
            &cfg.mcl,
            self.seed,
            self.pool,
        )?;
        if self.particles.len() != cfg.mcl.particle_count {
            self.population_ok = false;
        }
        self.loc_errors
            .push(dist(&estimate, &self.current.true_pose_at_scan));

        // A nonsense estimate (outside the map, inside a wall) cannot be
        // planned from; the safe output is a halt, and the next round gets
        // a fresh chance.
        let (r, c) = grid.cell_of(estimate.x, estimate.y);
        let planned = if grid.in_bounds(r, c) {
            astar(grid, (r as usize, c as usize), cfg.robot.goal_cell)
                .map(|path| path_to_command(&path, &estimate, grid, &cfg.robot.drive, round))
                .unwrap_or_else(|_| MoveCommand::halt(round))
        } else {
            MoveCommand::halt(round)
        };
        let command = if obstacle_check(
            scan,
            &planned,
            cfg.robot.half_width_m,
            cfg.robot.safety_margin_m,
        ) {
            planned
        } else {
            MoveCommand::halt(round)
        };
        self.group = Some(GroupResult { round, command });
        Ok(())
    }

    fn schedule_replica_completions(&mut self, round: u64, rx_at: SimTime) {
        let group = self.group.clone().expect("group computed this round");
        debug_assert_eq!(group.round, round);
        let cfg = self.cfg();
        let spec = cfg.mcl_spec().expect("validated");
        let instances = self.mcl_instances();
        for instance in instances {
            if !self.instance_live(&instance) {
                continue;
            }
            let host = self.placement.node_of(&instance).expect("live instance");
            let co_runners = self.placement.instances_on(host).len() as u32 - 1;
            let nominal = exec_time_us(spec, spec.cores_demand, co_runners, cfg.contention_alpha);
            let actual = nominal * self.slow.get(&host).copied().unwrap_or(1.0);
            let over_budget = actual > self.admitted_exec_us + 1e-9;
            self.schedule(
                rx_at + actual.ceil() as SimTime,
                host,
                Ev::ComputeDone {
                    round,
                    instance,
                    host,
                    command: group.command,
                    over_budget,
                },
            );
        }
    }

    // -- vote → downlink ------------------------------------------------------------

    fn on_compute_done(
        &mut self,
        round: u64,
        instance: InstanceId,
        host: NodeId,
        command: MoveCommand,
        over_budget: bool,
    ) {
        let now = self.kernel.now();
        // The budget monitor sees every completion, stale or not; sustained
        // overruns get the host fenced like a crash.
        if self.overruns.record(&instance, over_budget) && self.node_up(host) {
            self.crash_node(host, "fenced after sustained budget overruns");
        }
        if round != self.current.round || self.current.ended || self.current.decided {
            return;
        }
        // A completion outlives its usefulness if the instance moved, its
        // host died, or a restart began while it was computing.
        if self.placement.node_of(&instance) != Some(host)
            || !self.node_up(host)
            || self.rejuvenating.contains(&instance)
        {
            return;
        }
        let reported = if self.corrupt.contains(&instance) {
            corrupt_command(&command, instance.replica)
        } else {
            command
        };
        self.current.votes.push((instance, reported));
        let expected = self.cfg().mcl_spec().expect("validated").replicas;
        match vote(&self.current.votes, expected) {
            VoteOutcome::Quorum(cmd) => {
                self.current.decided = true;
                self.current.voted = Some(cmd);
                // The group takes the decision as actuated; it is also the
                // motion input for the next round's filter step.
                self.last_voted = cmd;
                let agree = self
                    .current
                    .votes
                    .iter()
                    .filter(|(_, c)| quantize_command(c) == quantize_command(&cmd))
                    .count();
                self.orch_row(
                    now,
                    "vote",
                    &self.cfg().mcl_container,
                    &format!("round {round} quorum {agree} of {expected}"),
                );
                if let Some(voter) = self.voter_node() {
                    let at = now + self.cfg().vote_overhead_us;
                    self.schedule(at, voter, Ev::CommandReady { round, voter });
                }
            }
            VoteOutcome::NoQuorum => {
                if !self.current.no_quorum_declared
                    && self.current.votes.len() >= self.live_replica_count()
                {
                    // Every replica that will ever report this round has;
                    // the group formally has no output. The robot-side
                    // timeout turns this into a fail-safe halt.
                    self.current.no_quorum_declared = true;
                    self.quorum_failures += 1;
                    let n = self.current.votes.len();
                    self.orch_row(
                        now,
                        "no_quorum",
                        &self.cfg().mcl_container,
                        &format!("round {round} {n} outputs without a majority of {expected}"),
                    );
                }
            }
        }
    }

    fn on_command_ready(&mut self, round: u64, voter: NodeId) {
        if round != self.current.round || self.current.ended || !self.node_up(voter) {
            return; // the command dies with the voter; the timeout covers it
        }
        let now = self.kernel.now();
        self.current.t_compute_done = Some(now);
        let cfg = self.cfg();
        let command = self.current.voted.expect("decided before ready");
        let outbox = self.outbox.get_mut(&voter).expect("participant");
        // One decision in flight at a time; a newer vote obsoletes anything
        // a dead slot left behind.
        outbox.retain(|f| !matches!(f.content, FrameContent::Command { .. }));
        for copy in 0..cfg.command_copies {
            outbox.push_back(Frame {
                src: voter,
                dst: cfg.robot.node_id,
                payload_bytes: MoveCommand::WIRE_BYTES,
                overhead_bytes: cfg.radio.overhead_bytes,
                timestamp_local_us: 0,
                replica_index: copy,
                content: FrameContent::Command { round, command },
            });
        }
    }

    // -- robot side -------------------------------------------------------------------

    fn on_round_start(&mut self) {
        let now = self.kernel.now();
        let round = self.robot.begin_sensing();
        self.current = RoundTrack::new(round, now, self.robot.true_pose);
        self.group = None;
        self.rob_row(now, "sense_start");
        let cfg = self.cfg();
        let dur = measurement_duration(cfg.robot.lidar_samples, cfg.robot.ms_per_sample);
        self.schedule(now + dur, cfg.robot.node_id, Ev::SenseDone { round });
    }

    fn on_sense_done(&mut self, round: u64) -> Result<(), ScenarioError> {
        if round != self.robot.round {
            return Ok(());
        }
        let now = self.kernel.now();
        let cfg = self.cfg();
        let mut rng = derive_stream(self.seed, "scenario.scan", &[round]);
        let scan = Arc::new(generate_scan(
            self.grid(),
            &self.robot.true_pose,
            cfg.robot.lidar_samples,
            cfg.robot.sensor_sigma_m,
            cfg.robot.max_range_m,
            &mut rng,
        )?);
        self.robot.begin_transmitting();
        self.rob_row(now, "sense_done");

        let payload = sensor_payload_bytes(cfg.robot.lidar_samples);
        let full = cfg.radio.max_frame_payload_bytes;
        let count = fragment(payload, &cfg.radio);
        let outbox = self
            .outbox
            .get_mut(&cfg.robot.node_id)
            .expect("participant");
        // A fresh scan obsoletes one still waiting for air time.
        outbox.retain(|f| !matches!(f.content, FrameContent::SensorData { .. }));
        for i in 0..count {
            outbox.push_back(Frame {
                src: cfg.robot.node_id,
                dst: BROADCAST,
                payload_bytes: full.min(payload - i * full),
                overhead_bytes: cfg.radio.overhead_bytes,
                timestamp_local_us: 0,
                // Fragment ordinal; reassembly needs every one of them.
                replica_index: i as u32,
                content: FrameContent::SensorData {
                    round,
                    scan: Arc::clone(&scan),
                    odometry: OdometryReading::zero(),
                },
            });
        }
        // Watchdog for the wedged-uplink corner. Late enough that when the
        // burst does launch, the ordinary awaiting-phase timeout (armed at
        // launch) always fires first.
        let backstop = now + self.comm_timeout_us + 2 * cfg.tdma.cycle_length_us;
        self.schedule(backstop, cfg.robot.node_id, Ev::CommandTimeout { round });
        Ok(())
    }

    fn deliver_command(&mut self, src: NodeId, round: u64, command: MoveCommand) {
        let now = self.kernel.now();
        // Time-domain copies collapse to one actuation.
        if !self.dedup.accept(src, round) {
            return;
        }
        if round != self.robot.round || self.current.ended {
            return;
        }
        let cfg = self.cfg();
        let mut rng = derive_stream(self.seed, "scenario.actuate", &[round]);
        match self
            .robot
            .on_command(&command, now, &cfg.robot.actuation_noise, &mut rng)
        {
            CommandDisposition::Ignored => {}
            CommandDisposition::Actuated { resumed, .. } => {
                if resumed {
                    self.rob_row(now, "resume");
                }
                self.rob_row(now, "actuate");
                self.commands_actuated += 1;
                if self
                    .current
                    .voted
                    .is_none_or(|v| quantize_command(&v) != quantize_command(&command))
                {
                    self.incorrect_actuations += 1;
                }
                self.current.ended = true;
                let grant = cfg.robot.actuation_grant_us;
                let track = &self.current;
                let e2e = (now - track.t_sense_start) + grant;
                self.records.push(LatencyRecord {
                    round,
                    t_sense_start_us: track.t_sense_start,
                    t_tx_start_us: track.t_tx_start.unwrap_or(track.t_sense_start),
                    t_rx_edge_us: track.t_rx_edge.unwrap_or(track.t_sense_start),
                    t_compute_done_us: track.t_compute_done.unwrap_or(track.t_sense_start),
                    t_cmd_rx_robot_us: now,
                    e2e_us: e2e,
                    bound_us: self.budget.total_us,
                    within_bound: (e2e as f64) <= self.budget.total_us,
                });
                self.rounds_done += 1;
                if self.rounds_done < cfg.rounds {
                    // The next sensing window opens once the motion the
                    // command granted has played out.
                    let drive = round_half_up(command.duration_ms * 1000.0).max(0) as SimTime;
                    self.schedule(now + grant + drive, cfg.robot.node_id, Ev::RoundStart);
                }
            }
        }
    }

    fn on_command_timeout(&mut self, round: u64) {
        if round != self.robot.round || self.current.ended {
            return;
        }
        let now = self.kernel.now();
        let newly_halted = match self.robot.mode() {
            RobotMode::Awaiting => self.robot.on_timeout(round, now),
            // The uplink never cleared the radio, so the awaiting window
            // never opened; only the watchdog escalation reaches here.
            RobotMode::Transmitting | RobotMode::Sensing => self.robot.force_halt(),
            // Already halted from an earlier round (mode reads Halted until
            // a command clears it): the round just expires.
            _ => false,
        };
        if newly_halted {
            self.rob_row(now, "halt");
        } else if !self.robot.is_halted() {
            return; // stale timer against a live round; nothing expired
        }
        self.current.ended = true;
        self.rounds_done += 1;
        if self.rounds_done < self.cfg().rounds {
            self.schedule(now, self.cfg().robot.node_id, Ev::RoundStart);
        }
    }

    // -- faults and fleet management ---------------------------------------------------

    fn on_fault(&mut self, index: usize) {
        let now = self.kernel.now();
        match self.cfg().fault_plan[index].kind.clone() {
            FaultKind::CrashNode { node } => {
                if self.node_up(node) {
                    self.crash_node(node, "fault injection");
                }
            }
            FaultKind::Babble { node } => {
                if self.rogue.insert(node) {
                    self.orch_row(now, "degraded", node, "babbling into foreign slots");
                    self.schedule_babble(node, 0);
                }
            }
            FaultKind::CorruptReplica { container, replica } => {
                let id = InstanceId::new(&container, replica);
                self.orch_row(now, "degraded", &id, "arbitrary output fault");
                self.corrupt.insert(id);
            }
            FaultKind::ClockOffset { node, offset_us } => {
                self.clocks
                    .get_mut(&node)
                    .expect("validated target")
                    .offset_us += offset_us;
                self.orch_row(
                    now,
                    "degraded",
                    node,
                    &format!("clock stepped {offset_us} us"),
                );
            }
            FaultKind::SlowNode { node, factor } => {
                self.slow.insert(node, factor);
                self.orch_row(
                    now,
                    "degraded",
                    node,
                    &format!("execution slowed x{factor}"),
                );
            }
        }
    }

    fn crash_node(&mut self, node: NodeId, why: &str) {
        let now = self.kernel.now();
        if let Some(n) = self.nodes.iter_mut().find(|n| n.id == node) {
            n.status = NodeStatus::Crashed;
        }
        self.orch_row(now, "crash", node, why);
        let budget = self.cfg().reorchestration_budget_us;
        self.schedule(now + budget, node, Ev::ReorchDone { crashed: node });
    }

    fn on_reorch_done(&mut self, crashed: NodeId) {
        let now = self.kernel.now();
        let containers = &self.cfg().containers;
        let outcome = reorchestrate(&self.placement, crashed, &mut self.nodes, containers);
        self.placement = outcome.placement;
        self.reorchestrations += 1;
        self.orch_row(
            now,
            "reorchestrate",
            crashed,
            &format!(
                "epoch {} moved {} degraded {}",
                self.placement.epoch,
                outcome.moved.len(),
                outcome.degraded.len()
            ),
        );
        for (instance, node) in outcome.moved {
            // Replica state rides along: the newcomer copies the group's
            // shared state, which the shared representation makes free.
            self.orch_row(now, "place", &instance, &format!("node {node}"));
        }
        for instance in outcome.degraded {
            self.orch_row(now, "degraded", &instance, "no surviving capacity");
        }
    }

    fn on_rejuv(&mut self, index: usize) {
        let now = self.kernel.now();
        let ev = self.rejuv_events[index].clone();
        match ev.phase {
            RejuvPhase::Start => {
                self.rejuvenating.insert(ev.instance.clone());
                self.orch_row(now, "rejuvenate_start", &ev.instance, "restarting");
            }
            RejuvPhase::End => {
                self.rejuvenating.remove(&ev.instance);
                self.orch_row(
                    now,
                    "rejuvenate_end",
                    &ev.instance,
                    "state copied from group",
                );
            }
        }
    }

    // -- babble -----------------------------------------------------------------------

    fn schedule_babble(&mut self, node: NodeId, victim: usize) {
        let cfg = self.cfg();
        let victims: Vec<u64> = cfg
            .tdma
            .slots
            .iter()
            .filter(|s| s.owner != node)
            .map(|s| s.start_us)
            .collect();
        if victims.is_empty() {
            return;
        }
        let victim = victim % victims.len();
        let now = self.kernel.now();
        let clock = &self.clocks[&node];
        let local_now = clock.local_time(now);
        // Aim 20 µs ahead of the victim's slot start so the junk burst
        // straddles the victim's sync transmission.
        let target =
            next_local_phase(local_now + 1, victims[victim], cfg.tdma.cycle_length_us) - 20;
        let fire = clock.true_time_for_local(target);
        self.schedule(fire, node, Ev::BabbleBurst { node, victim });
    }

    fn on_babble_burst(&mut self, node: NodeId, victim: usize) {
        if !self.node_up(node) {
            return; // a fenced or crashed babbler finally falls silent
        }
        let now = self.kernel.now();
        let cfg = self.cfg();
        let frames: Vec<Frame> = (0..3)
            .map(|i| Frame {
                src: node,
                dst: BROADCAST,
                payload_bytes: cfg.radio.max_frame_payload_bytes,
                overhead_bytes: cfg.radio.overhead_bytes,
                timestamp_local_us: 0,
                replica_index: i,
                content: FrameContent::Junk,
            })
            .collect();
        let bytes: u64 = frames.iter().map(|f| f.payload_bytes).sum();
        match self.medium.transmit(frames, now, &mut self.loss_rng) {
            TransmitResult::Suppressed { .. } => {
                self.net_row(now, "violation", node, BROADCAST, "data", bytes, None);
            }
            TransmitResult::OnAir(receipt) => {
                self.net_row(
                    now,
                    "tx_start",
                    node,
                    BROADCAST,
                    "data",
                    bytes,
                    receipt.slot_index,
                );
                let end = receipt.delivery_time();
                self.net_row(
                    end,
                    "tx_end",
                    node,
                    BROADCAST,
                    "data",
                    bytes,
                    receipt.slot_index,
                );
                self.schedule(end, node, Ev::Delivery { receipt });
            }
        }
        self.schedule_babble(node, victim + 1);
    }

    // -- wrap-up ------------------------------------------------------------------------

    fn finish(self) -> RunOutput {
        let mut latency = String::from(LATENCY_HEADER);
        latency.push('\n');
        for r in &self.records {
            latency.push_str(&r.to_csv_row());
            latency.push('\n');
        }
        let e2es: Vec<u64> = self.records.iter().map(|r| r.e2e_us).collect();
        let summary = RunSummary {
            scenario: self.scenario.config.name.clone(),
            seed: self.seed,
            rounds_requested: self.scenario.config.rounds,
            rounds_attempted: self.rounds_done,
            rounds_completed: self.records.len() as u64,
            bound_us: self.budget.total_us,
            actuation_grant_us: self.scenario.config.robot.actuation_grant_us,
            max_e2e_us: e2es.iter().copied().max(),
            mean_e2e_us: if e2es.is_empty() {
                None
            } else {
                Some(e2es.iter().sum::<u64>() as f64 / e2es.len() as f64)
            },
            bound_violations: self.records.iter().filter(|r| !r.within_bound).count() as u64,
            collisions: self.medium.collision_count,
            slot_violations: self.medium.violation_count,
            quorum_failures: self.quorum_failures,
            halts: self.robot.halt_count,
            reorchestrations: self.reorchestrations,
            incorrect_actuations: self.incorrect_actuations,
            commands_actuated: self.commands_actuated,
            loc_error_final_m: self.loc_errors.last().copied(),
            loc_error_max_m: self
                .loc_errors
                .iter()
                .copied()
                .fold(None, |m, e| Some(m.map_or(e, |m: f64| m.max(e)))),
            loc_error_by_round_m: self.loc_errors,
            particle_population_constant: self.population_ok,
            rejuvenation_warning: self.rejuv_warning,
            truncated: self.truncated,
        };
        RunOutput {
            summary,
            traces: TraceSet {
                network: self.net,
                robot: self.rob,
                orchestration: self.orch,
                latency,
            },
            records: self.records,
            budget: self.budget,
        }
    }
}

/// Execute the scenario for its configured round count under `seed`.
/// Deterministic: the same scenario, seed, and build produce byte-identical
/// traces regardless of worker-pool size.
pub fn run_scenario(
    scenario: &LoadedScenario,
    seed: u64,
    pool: &WorkerPool,
) -> Result<RunOutput, ScenarioError> {
    let mut sim = Sim::new(scenario, seed, pool)?;
    sim.prime()?;
    sim.run()?;
    Ok(sim.finish())
}
