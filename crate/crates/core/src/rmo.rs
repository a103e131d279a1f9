//! Resource management and orchestration across the edge nodes.
//!
//! Each node dedicates a block of cores to critical containers and leaves
//! the rest to best-effort load; placement is first-fit-decreasing with
//! replicas of one container forced onto distinct nodes, so a single node
//! crash can never silence a whole replica group. On top sit the recovery
//! mechanisms: crash re-orchestration (move the dead node's instances into
//! surviving capacity), exact-match majority voting over replica outputs,
//! staggered rejuvenation that restarts replicas one at a time, and a
//! monitor that flags containers running past their admitted budget.
//!
//! The execution-time model is deliberately simple and calibratable:
//! Amdahl speedup over allocated cores times a linear slowdown per
//! co-running container on the same node.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::MoveCommand;
use crate::simkern::{round_half_up, NodeId, SimTime};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RmoError {
    #[error(
        "cannot place critical instance {instance}: no up node offers capacity and anti-affinity"
    )]
    Infeasible { instance: InstanceId },
    #[error("stagger {stagger_us} µs × {replicas} replicas does not fit inside the {period_us} µs rejuvenation period")]
    BadStagger {
        stagger_us: SimTime,
        replicas: usize,
        period_us: SimTime,
    },
    #[error("restart duration {restart_us} µs exceeds the {stagger_us} µs stagger; two replicas would be down at once")]
    RestartTooLong {
        restart_us: SimTime,
        stagger_us: SimTime,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContainerKind {
    Critical,
    BestEffort,
}

/// One deployable container description; `replicas` instances of it run as
/// an active-replication group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContainerSpec {
    pub name: String,
    pub kind: ContainerKind,
    pub cores_demand: u32,
    pub bw_demand: u32,
    /// Single-core, contention-free execution time.
    pub base_exec_time_us: f64,
    /// Amdahl parallel fraction of the workload, in [0, 1].
    pub parallel_fraction: f64,
    pub period_us: SimTime,
    pub replicas: u32,
}

/// Identity of one replica: container name plus replica index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstanceId {
    pub container: String,
    pub replica: u32,
}

impl InstanceId {
    pub fn new(container: &str, replica: u32) -> InstanceId {
        InstanceId {
            container: container.to_string(),
            replica,
        }
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.container, self.replica)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeStatus {
    Up,
    Crashed,
}

/// Live assignment of one instance to its host, tracked on the node.
#[derive(Debug, Clone, PartialEq)]
pub struct ContainerInstance {
    pub instance: InstanceId,
    pub kind: ContainerKind,
    pub cores_demand: u32,
    pub bw_demand: u32,
    /// Admission-time execution budget (the monitor compares against this).
    pub budget_us: f64,
    pub last_exec_us: Option<f64>,
    pub deadline_misses: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeNode {
    pub id: NodeId,
    pub total_cores: u32,
    /// Cores dedicated to critical containers; the remainder hosts
    /// best-effort load. Always less than `total_cores`.
    pub critical_cores: u32,
    pub memory_bw_units: u32,
    pub status: NodeStatus,
    pub hosted: Vec<ContainerInstance>,
}

impl EdgeNode {
    pub fn new(
        id: NodeId,
        total_cores: u32,
        critical_cores: u32,
        memory_bw_units: u32,
    ) -> EdgeNode {
        assert!(
            critical_cores < total_cores,
            "critical cores must leave at least one best-effort core"
        );
        EdgeNode {
            id,
            total_cores,
            critical_cores,
            memory_bw_units,
            status: NodeStatus::Up,
            hosted: Vec::new(),
        }
    }

    pub fn used_critical_cores(&self) -> u32 {
        self.hosted
            .iter()
            .filter(|c| c.kind == ContainerKind::Critical)
            .map(|c| c.cores_demand)
            .sum()
    }

    pub fn used_best_effort_cores(&self) -> u32 {
        self.hosted
            .iter()
            .filter(|c| c.kind == ContainerKind::BestEffort)
            .map(|c| c.cores_demand)
            .sum()
    }

    pub fn used_bw(&self) -> u32 {
        self.hosted.iter().map(|c| c.bw_demand).sum()
    }

    pub fn free_critical_cores(&self) -> u32 {
        self.critical_cores - self.used_critical_cores()
    }

    pub fn free_bw(&self) -> u32 {
        self.memory_bw_units - self.used_bw()
    }

    fn fits(&self, kind: ContainerKind, cores: u32, bw: u32) -> bool {
        if self.status != NodeStatus::Up || self.used_bw() + bw > self.memory_bw_units {
            return false;
        }
        match kind {
            ContainerKind::Critical => self.used_critical_cores() + cores <= self.critical_cores,
            // Best-effort never touches the dedicated critical cores.
            ContainerKind::BestEffort => {
                self.used_best_effort_cores() + cores <= self.total_cores - self.critical_cores
            }
        }
    }

    fn hosts_replica_of(&self, container: &str) -> bool {
        self.hosted
            .iter()
            .any(|c| c.instance.container == container)
    }
}

/// Snapshot of who runs where. The live truth is the nodes' `hosted` lists;
/// a placement is the versioned mapping derived from them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Placement {
    pub assignments: BTreeMap<InstanceId, NodeId>,
    pub epoch: u64,
    /// Best-effort instances that found no residual capacity. Not an error:
    /// best-effort work carries no guarantee.
    pub unplaced_best_effort: Vec<InstanceId>,
}

impl Placement {
    pub fn node_of(&self, instance: &InstanceId) -> Option<NodeId> {
        self.assignments.get(instance).copied()
    }

    pub fn instances_on(&self, node: NodeId) -> Vec<InstanceId> {
        self.assignments
            .iter()
            .filter(|(_, &n)| n == node)
            .map(|(i, _)| i.clone())
            .collect()
    }
}

/// Contention-aware execution time: Amdahl over the allocated cores, then a
/// linear slowdown of `alpha` per co-running container on the same node.
pub fn exec_time_us(spec: &ContainerSpec, cores: u32, co_runners: u32, alpha: f64) -> f64 {
    assert!(cores >= 1, "a container runs on at least one core");
    assert!(alpha >= 0.0, "contention cannot speed a container up");
    let p = spec.parallel_fraction;
    spec.base_exec_time_us * (1.0 - p + p / cores as f64) * (1.0 + alpha * co_runners as f64)
}

fn expand_instances(specs: &[ContainerSpec]) -> Vec<(InstanceId, ContainerKind, u32, u32, usize)> {
    let mut out = Vec::new();
    for (order, spec) in specs.iter().enumerate() {
        for r in 0..spec.replicas.max(1) {
            out.push((
                InstanceId::new(&spec.name, r),
                spec.kind,
                spec.cores_demand,
                spec.bw_demand,
                order,
            ));
        }
    }
    out
}

fn place_one(
    nodes: &mut [EdgeNode],
    instance: &InstanceId,
    kind: ContainerKind,
    cores: u32,
    bw: u32,
) -> Option<NodeId> {
    let slot = nodes
        .iter_mut()
        .find(|n| n.fits(kind, cores, bw) && !n.hosts_replica_of(&instance.container))?;
    slot.hosted.push(ContainerInstance {
        instance: instance.clone(),
        kind,
        cores_demand: cores,
        bw_demand: bw,
        budget_us: 0.0,
        last_exec_us: None,
        deadline_misses: 0,
    });
    Some(slot.id)
}

/// First-fit-decreasing placement over the critical core pools, replicas of
/// one container on distinct nodes. Critical instances first (largest
/// cores-demand first, ties by declaration order); best-effort instances
/// then fill residual non-critical capacity and are silently left unplaced
/// when none remains. Deterministic for a given spec and node order.
///
/// On success the nodes' `hosted` lists are updated in place; an infeasible
/// critical instance aborts without touching the nodes.
pub fn lrm_place(
    specs: &[ContainerSpec],
    nodes: &mut Vec<EdgeNode>,
) -> Result<Placement, RmoError> {
    let mut staged = nodes.clone();
    let mut instances = expand_instances(specs);
    // Sort key: critical before best-effort, larger demand first, then
    // declaration order and replica index (already encoded by expansion
    // order, kept by stable sort).
    instances.sort_by(|a, b| {
        let crit = |k: ContainerKind| (k != ContainerKind::Critical) as u8;
        crit(a.1).cmp(&crit(b.1)).then(b.2.cmp(&a.2))
    });

    let mut placement = Placement::default();
    for (instance, kind, cores, bw, _) in &instances {
        match place_one(&mut staged, instance, *kind, *cores, *bw) {
            Some(node) => {
                placement.assignments.insert(instance.clone(), node);
            }
            None if *kind == ContainerKind::Critical => {
                return Err(RmoError::Infeasible {
                    instance: instance.clone(),
                });
            }
            None => placement.unplaced_best_effort.push(instance.clone()),
        }
    }
    *nodes = staged;
    Ok(placement)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReorchestrationOutcome {
    pub placement: Placement,
    /// Instances that moved off the crashed node, with their new host.
    pub moved: Vec<(InstanceId, NodeId)>,
    /// Critical instances no surviving node could take. The replica group
    /// keeps voting with reduced margin; the robot's fail-safe covers the
    /// rest.
    pub degraded: Vec<InstanceId>,
}

/// Re-place every instance of a crashed node into surviving residual
/// capacity, preserving anti-affinity. Unaffected instances never move. The
/// crashed node must already be marked down; its hosted list is cleared.
pub fn reorchestrate(
    placement: &Placement,
    crashed: NodeId,
    nodes: &mut [EdgeNode],
    specs: &[ContainerSpec],
) -> ReorchestrationOutcome {
    debug_assert!(nodes
        .iter()
        .find(|n| n.id == crashed)
        .is_none_or(|n| n.status == NodeStatus::Crashed));
    if let Some(node) = nodes.iter_mut().find(|n| n.id == crashed) {
        node.hosted.clear();
    }

    let mut displaced: Vec<InstanceId> = placement.instances_on(crashed).into_iter().collect();
    // Largest demand first, like initial placement.
    let demand_of = |id: &InstanceId| -> (ContainerKind, u32, u32) {
        let spec = specs
            .iter()
            .find(|s| s.name == id.container)
            .expect("placement references a declared container");
        (spec.kind, spec.cores_demand, spec.bw_demand)
    };
    displaced.sort_by(|a, b| {
        let (ka, ca, _) = demand_of(a);
        let (kb, cb, _) = demand_of(b);
        let crit = |k: ContainerKind| (k != ContainerKind::Critical) as u8;
        crit(ka).cmp(&crit(kb)).then(cb.cmp(&ca))
    });

    let mut next = placement.clone();
    next.epoch += 1;
    let mut moved = Vec::new();
    let mut degraded = Vec::new();
    for instance in displaced {
        let (kind, cores, bw) = demand_of(&instance);
        match place_one(nodes, &instance, kind, cores, bw) {
            Some(node) => {
                next.assignments.insert(instance.clone(), node);
                moved.push((instance, node));
            }
            None => {
                next.assignments.remove(&instance);
                if kind == ContainerKind::Critical {
                    degraded.push(instance);
                } else {
                    next.unplaced_best_effort.push(instance);
                }
            }
        }
    }
    ReorchestrationOutcome {
        placement: next,
        moved,
        degraded,
    }
}

/// A command reduced to the resolution the vote compares at: millimetres per
/// second, milliradians per second, whole milliseconds. Quantization absorbs
/// replica-side rounding drift; anything larger is a real disagreement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QuantizedCommand {
    pub v_mmps: i64,
    pub omega_mrps: i64,
    pub duration_ms: i64,
}

pub fn quantize_command(cmd: &MoveCommand) -> QuantizedCommand {
    QuantizedCommand {
        v_mmps: round_half_up(cmd.v_mps * 1000.0),
        omega_mrps: round_half_up(cmd.omega_rps * 1000.0),
        duration_ms: round_half_up(cmd.duration_ms),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VoteOutcome {
    /// A strict majority of the expected replica count agreed; the returned
    /// command is the agreeing member with the lowest replica id.
    Quorum(MoveCommand),
    NoQuorum,
}

/// Exact-match majority over quantized commands. The threshold counts
/// against `expected_replicas` (the deployed group size), not against how
/// many outputs arrived — missing replicas must weaken the vote.
pub fn vote(outputs: &[(InstanceId, MoveCommand)], expected_replicas: u32) -> VoteOutcome {
    let mut tally: BTreeMap<QuantizedCommand, Vec<&InstanceId>> = BTreeMap::new();
    for (id, cmd) in outputs {
        tally.entry(quantize_command(cmd)).or_default().push(id);
    }
    for (_, members) in tally {
        if 2 * members.len() as u32 > expected_replicas {
            let winner = members.iter().min().expect("majority bucket is non-empty");
            let cmd = outputs
                .iter()
                .find(|(id, _)| id == *winner)
                .map(|(_, c)| *c)
                .expect("winner came from outputs");
            return VoteOutcome::Quorum(cmd);
        }
    }
    VoteOutcome::NoQuorum
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejuvPhase {
    Start,
    End,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejuvEvent {
    pub at_us: SimTime,
    pub instance: InstanceId,
    pub phase: RejuvPhase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejuvenationPlan {
    pub events: Vec<RejuvEvent>,
    /// Set when rejuvenation is disabled instead of planned (fewer than 3
    /// replicas cannot keep a majority alive through a restart).
    pub warning: Option<String>,
}

/// Staggered restart schedule out to `horizon_us`: replica i of round r
/// restarts at (r+1)·period + i·stagger and is non-voting until its restart
/// completes. Preconditions guarantee at most one replica is ever down, so
/// a majority stays live throughout.
pub fn rejuvenation_events(
    replicas: &[InstanceId],
    period_us: SimTime,
    stagger_us: SimTime,
    restart_us: SimTime,
    horizon_us: SimTime,
) -> Result<RejuvenationPlan, RmoError> {
    let n = replicas.len();
    if n < 3 {
        return Ok(RejuvenationPlan {
            events: Vec::new(),
            warning: Some(format!(
                "rejuvenation disabled: {n} replica(s) cannot hold a majority during a restart"
            )),
        });
    }
    if stagger_us == 0 || (n as u64 - 1) * stagger_us + restart_us > period_us {
        return Err(RmoError::BadStagger {
            stagger_us,
            replicas: n,
            period_us,
        });
    }
    if restart_us > stagger_us {
        return Err(RmoError::RestartTooLong {
            restart_us,
            stagger_us,
        });
    }
    let mut events = Vec::new();
    let mut round = 0u64;
    loop {
        let base = (round + 1) * period_us;
        if base > horizon_us {
            break;
        }
        for (i, id) in replicas.iter().enumerate() {
            let start = base + i as u64 * stagger_us;
            if start > horizon_us {
                break;
            }
            events.push(RejuvEvent {
                at_us: start,
                instance: id.clone(),
                phase: RejuvPhase::Start,
            });
            events.push(RejuvEvent {
                at_us: start + restart_us,
                instance: id.clone(),
                phase: RejuvPhase::End,
            });
        }
        round += 1;
    }
    events.sort_by(|a, b| {
        a.at_us
            .cmp(&b.at_us)
            .then_with(|| a.instance.cmp(&b.instance))
    });
    Ok(RejuvenationPlan {
        events,
        warning: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContainerHealth {
    pub instance: InstanceId,
    pub budget_us: f64,
    pub last_exec_us: Option<f64>,
    pub over_budget: bool,
    pub deadline_misses: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MonitorReport {
    NodeDown {
        node: NodeId,
    },
    Up {
        node: NodeId,
        free_critical_cores: u32,
        free_bw_units: u32,
        containers: Vec<ContainerHealth>,
    },
}

/// Immutable health snapshot of one node, fit for sharing across the
/// orchestration logic.
pub fn monitor_snapshot(node: &EdgeNode) -> MonitorReport {
    if node.status == NodeStatus::Crashed {
        return MonitorReport::NodeDown { node: node.id };
    }
    MonitorReport::Up {
        node: node.id,
        free_critical_cores: node.free_critical_cores(),
        free_bw_units: node.free_bw(),
        containers: node
            .hosted
            .iter()
            .map(|c| ContainerHealth {
                instance: c.instance.clone(),
                budget_us: c.budget_us,
                last_exec_us: c.last_exec_us,
                over_budget: c.last_exec_us.is_some_and(|t| t > c.budget_us),
                deadline_misses: c.deadline_misses,
            })
            .collect(),
    }
}

/// Migration trigger: an instance overrunning its budget for `threshold`
/// consecutive periods is reported for re-placement.
#[derive(Debug, Clone)]
pub struct OverrunTracker {
    threshold: u32,
    consecutive: BTreeMap<InstanceId, u32>,
}

impl OverrunTracker {
    pub fn new(threshold: u32) -> OverrunTracker {
        assert!(threshold >= 1);
        OverrunTracker {
            threshold,
            consecutive: BTreeMap::new(),
        }
    }

    /// Record one period's budget verdict; returns true exactly when the
    /// streak reaches the threshold (and resets the streak).
    pub fn record(&mut self, instance: &InstanceId, over_budget: bool) -> bool {
        if !over_budget {
            self.consecutive.remove(instance);
            return false;
        }
        let streak = self.consecutive.entry(instance.clone()).or_insert(0);
        *streak += 1;
        if *streak >= self.threshold {
            self.consecutive.remove(instance);
            true
        } else {
            false
        }
    }
}

impl Default for OverrunTracker {
    fn default() -> Self {
        OverrunTracker::new(3)
    }
}
