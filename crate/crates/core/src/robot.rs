//! Robot-node model.
//!
//! Two concerns live here. First, the schedulability side: the robot's
//! firmware runs a small fixed-priority preemptive task set with harmonic
//! periods, and `response_time` computes the classic worst-case response
//! recurrence so a scenario can prove the on-robot work never eats into the
//! control loop's latency budget. Second, the control-loop state machine:
//! sense → transmit → await → actuate, with a fail-safe that halts actuation
//! when no voted command arrives within the communication timeout and
//! resumes on the next valid command. A halted robot keeps sensing and
//! transmitting — the edge needs fresh data to bring it back.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::planner::MoveCommand;
use crate::simkern::SimTime;
use crate::worldmodel::{apply_motion, MotionNoise, Pose};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub period_us: SimTime,
    pub wcet_us: SimTime,
    /// Lower number = higher priority. Equal priorities rank by declaration
    /// order (the earlier task wins), and interference is counted the same
    /// way in analysis and simulation.
    pub priority: u32,
}

/// The default firmware task set: parsers for the two sensor streams, the
/// scan assembler, command actuation, and a slow system monitor. Periods
/// form a divisibility chain (1 | 2 | 50 | 250 | 60000 ms). The WCETs are
/// configuration defaults, not measurements.
pub fn default_taskset() -> Vec<TaskSpec> {
    let t = |name: &str, period_us: u64, wcet_us: u64, priority: u32| TaskSpec {
        name: name.to_string(),
        period_us,
        wcet_us,
        priority,
    };
    vec![
        t("lidar_msg_parser", 1_000, 100, 0),
        t("encoder_msg_parser", 2_000, 200, 0),
        t("scan_assembler", 50_000, 1_000, 1),
        t("cmd_actuator", 250_000, 2_000, 2),
        t("system_monitor", 60_000_000, 5_000, 2),
    ]
}

fn effectively_higher(tasks: &[TaskSpec], j: usize, i: usize) -> bool {
    (tasks[j].priority, j) < (tasks[i].priority, i)
}

/// Worst-case response time of `tasks[index]` under fixed-priority
/// preemptive scheduling: the smallest fixed point of
/// R = C_i + Σ_{j higher} ceil(R / T_j) · C_j, or `None` once R exceeds the
/// task's period (implicit deadline missed — unschedulable).
pub fn response_time(tasks: &[TaskSpec], index: usize) -> Option<SimTime> {
    let me = &tasks[index];
    let higher: Vec<&TaskSpec> = tasks
        .iter()
        .enumerate()
        .filter(|(j, _)| effectively_higher(tasks, *j, index))
        .map(|(_, t)| t)
        .collect();
    let mut r = me.wcet_us;
    loop {
        let interference: SimTime = higher
            .iter()
            .map(|t| r.div_ceil(t.period_us) * t.wcet_us)
            .sum();
        let next = me.wcet_us + interference;
        if next > me.period_us {
            return None;
        }
        if next == r {
            return Some(r);
        }
        r = next;
    }
}

/// Response times for the whole set, in declaration order.
pub fn response_times(tasks: &[TaskSpec]) -> Vec<Option<SimTime>> {
    (0..tasks.len()).map(|i| response_time(tasks, i)).collect()
}

/// Independent check of the recurrence: simulate the synchronous busy
/// period (all tasks release at t = 0, higher-priority jobs re-release
/// periodically and preempt) and report when the analyzed job completes.
/// Only the total higher-priority backlog matters for that completion time,
/// so the simulation tracks it as a scalar.
pub fn busy_period_response(tasks: &[TaskSpec], index: usize) -> Option<SimTime> {
    let me = &tasks[index];
    let higher: Vec<&TaskSpec> = tasks
        .iter()
        .enumerate()
        .filter(|(j, _)| effectively_higher(tasks, *j, index))
        .map(|(_, t)| t)
        .collect();
    let deadline = me.period_us;
    let mut t: SimTime = 0;
    let mut backlog: SimTime = higher.iter().map(|h| h.wcet_us).sum();
    let mut my_remaining = me.wcet_us;
    let mut next_release: Vec<SimTime> = higher.iter().map(|h| h.period_us).collect();
    loop {
        if t > deadline {
            return None;
        }
        let next = next_release.iter().copied().min().unwrap_or(SimTime::MAX);
        let window = next.saturating_sub(t);
        if backlog > 0 {
            if backlog <= window {
                t += backlog;
                backlog = 0;
                continue;
            }
            backlog -= window;
            t = next;
        } else {
            if my_remaining <= window {
                let done = t + my_remaining;
                return (done <= deadline).then_some(done);
            }
            my_remaining -= window;
            t = next;
        }
        for (k, h) in higher.iter().enumerate() {
            if next_release[k] == t {
                backlog += h.wcet_us;
                next_release[k] += h.period_us;
            }
        }
    }
}

/// What the trace reports as the robot's mode. `Halted` masks the loop
/// phase: a halted robot still cycles through sensing and transmitting, but
/// actuation stays at zero until a valid command arrives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RobotMode {
    Sensing,
    Transmitting,
    Awaiting,
    Actuating,
    Halted,
}

impl RobotMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RobotMode::Sensing => "sensing",
            RobotMode::Transmitting => "transmitting",
            RobotMode::Awaiting => "awaiting",
            RobotMode::Actuating => "actuating",
            RobotMode::Halted => "halted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LoopPhase {
    Sensing,
    Transmitting,
    Awaiting,
    Actuating,
}

/// What became of a delivered voted command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CommandDisposition {
    /// Applied to the true pose. `resumed` marks recovery from a halt.
    Actuated { new_pose: Pose, resumed: bool },
    /// Arrived outside an awaiting window (stale or duplicate) — dropped.
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    phase: LoopPhase,
    halted: bool,
    pub true_pose: Pose,
    pub comm_timeout_us: SimTime,
    /// Loop round currently in flight; timeout events carry the round they
    /// were armed for so stale ones can be discarded.
    pub round: u64,
    pub awaiting_since: Option<SimTime>,
    pub last_command_at: Option<SimTime>,
    pub halt_count: u64,
}

impl RobotState {
    pub fn new(initial_pose: Pose, comm_timeout_us: SimTime) -> RobotState {
        RobotState {
            phase: LoopPhase::Sensing,
            halted: false,
            true_pose: initial_pose,
            comm_timeout_us,
            round: 0,
            awaiting_since: None,
            last_command_at: None,
            halt_count: 0,
        }
    }

    pub fn mode(&self) -> RobotMode {
        if self.halted {
            return RobotMode::Halted;
        }
        match self.phase {
            LoopPhase::Sensing => RobotMode::Sensing,
            LoopPhase::Transmitting => RobotMode::Transmitting,
            LoopPhase::Awaiting => RobotMode::Awaiting,
            LoopPhase::Actuating => RobotMode::Actuating,
        }
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    /// Open a new loop round: the sensing window begins.
    pub fn begin_sensing(&mut self) -> u64 {
        self.phase = LoopPhase::Sensing;
        self.awaiting_since = None;
        self.round += 1;
        self.round
    }

    pub fn begin_transmitting(&mut self) {
        debug_assert_eq!(self.phase, LoopPhase::Sensing);
        self.phase = LoopPhase::Transmitting;
    }

    /// The uplink burst is out; the command window opens at `at`.
    pub fn begin_awaiting(&mut self, at: SimTime) -> SimTime {
        debug_assert_eq!(self.phase, LoopPhase::Transmitting);
        self.phase = LoopPhase::Awaiting;
        self.awaiting_since = Some(at);
        at + self.comm_timeout_us
    }

    /// Fail-safe check, fired by the timeout event armed for `round`.
    /// Returns true exactly when this call newly halts the robot.
    pub fn on_timeout(&mut self, round: u64, at: SimTime) -> bool {
        if round != self.round || self.phase != LoopPhase::Awaiting {
            return false; // stale timer: the round already progressed
        }
        let since = self
            .awaiting_since
            .expect("awaiting phase has a start time");
        debug_assert!(at >= since + self.comm_timeout_us);
        if self.halted {
            return false;
        }
        self.halted = true;
        self.halt_count += 1;
        true
    }

    /// Watchdog escalation: halt regardless of loop phase. For the case
    /// where a round wedges before the awaiting window even opens (the
    /// uplink never cleared the radio), which the ordinary timeout guard
    /// cannot see. Returns true exactly when this call newly halts.
    pub fn force_halt(&mut self) -> bool {
        if self.halted {
            return false;
        }
        self.halted = true;
        self.halt_count += 1;
        true
    }

    /// A voted command reached the robot. Only an open awaiting window
    /// accepts it; actuation advances the true pose under the actuation
    /// noise model and clears any standing halt.
    pub fn on_command(
        &mut self,
        command: &MoveCommand,
        at: SimTime,
        noise: &MotionNoise,
        rng: &mut impl Rng,
    ) -> CommandDisposition {
        if self.phase != LoopPhase::Awaiting {
            return CommandDisposition::Ignored;
        }
        let resumed = self.halted;
        self.halted = false;
        self.phase = LoopPhase::Actuating;
        self.last_command_at = Some(at);
        self.true_pose = apply_motion(&self.true_pose, command, noise, rng);
        CommandDisposition::Actuated {
            new_pose: self.true_pose,
            resumed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simkern::derive_stream;
    use rand::Rng;

    fn t(period_us: u64, wcet_us: u64, priority: u32) -> TaskSpec {
        TaskSpec {
            name: format!("t{period_us}"),
            period_us,
            wcet_us,
            priority,
        }
    }

    #[test]
    fn single_task_response_is_its_wcet() {
        let set = vec![t(50_000, 5_000, 0)];
        assert_eq!(response_time(&set, 0), Some(5_000));
    }

    #[test]
    fn three_task_recurrence_example() {
        // (0.1 ms / 1 ms), (0.2 ms / 2 ms), (5 ms / 50 ms): the low-priority
        // task settles at 6.5 ms.
        let set = vec![t(1_000, 100, 0), t(2_000, 200, 1), t(50_000, 5_000, 2)];
        assert_eq!(response_time(&set, 2), Some(6_500));
    }

    #[test]
    fn default_taskset_is_schedulable_and_harmonic() {
        let set = default_taskset();
        for w in set.windows(2) {
            assert_eq!(
                w[1].period_us % w[0].period_us,
                0,
                "periods must form a divisibility chain"
            );
        }
        let rs = response_times(&set);
        let expected = [100, 300, 1_400, 3_800, 10_000];
        for (i, (r, want)) in rs.iter().zip(expected).enumerate() {
            assert_eq!(*r, Some(want), "task {i} response");
            assert!(want <= set[i].period_us);
        }
    }

    #[test]
    fn overload_reports_unschedulable() {
        // Two tasks each needing 60% of the same period.
        let set = vec![t(1_000, 600, 0), t(1_000, 600, 1)];
        assert_eq!(response_time(&set, 0), Some(600));
        assert_eq!(response_time(&set, 1), None);
    }

    #[test]
    fn equal_priorities_rank_by_declaration_order() {
        let set = vec![t(1_000, 300, 0), t(1_000, 300, 0)];
        // First-declared wins ties: it sees no interference.
        assert_eq!(response_time(&set, 0), Some(300));
        assert_eq!(response_time(&set, 1), Some(600));
    }

    #[test]
    fn recurrence_agrees_with_busy_period_simulation() {
        let mut rng = derive_stream(0xB5, "robot.test.rta", &[]);
        for _ in 0..50 {
            // Random harmonic chain of up to 5 tasks.
            let count = rng.random_range(1..=5);
            let mut period: u64 = rng.random_range(2..20) * 100;
            let mut set = Vec::new();
            for _ in 0..count {
                let util = rng.random_range(0.05..0.40);
                let wcet = ((period as f64 * util) as u64).max(1);
                set.push(t(period, wcet, rng.random_range(0..3)));
                period *= rng.random_range(1..=4);
            }
            for i in 0..set.len() {
                assert_eq!(
                    response_time(&set, i),
                    busy_period_response(&set, i),
                    "set {set:?}, task {i}"
                );
            }
        }
    }

    fn zero_rng() -> impl Rng {
        derive_stream(0, "robot.test.noise", &[])
    }

    #[test]
    fn nominal_round_cycles_through_all_modes() {
        let mut state = RobotState::new(Pose::new(1.0, 1.0, 0.0), 500_000);
        assert_eq!(state.mode(), RobotMode::Sensing);
        state.begin_sensing();
        state.begin_transmitting();
        assert_eq!(state.mode(), RobotMode::Transmitting);
        let deadline = state.begin_awaiting(200_000);
        assert_eq!(deadline, 700_000);
        assert_eq!(state.mode(), RobotMode::Awaiting);
        let cmd = MoveCommand {
            v_mps: 1.0,
            omega_rps: 0.0,
            duration_ms: 500.0,
            sequence: 1,
        };
        match state.on_command(&cmd, 300_000, &MotionNoise::NONE, &mut zero_rng()) {
            CommandDisposition::Actuated { new_pose, resumed } => {
                assert!(!resumed);
                assert_eq!(new_pose, Pose::new(1.5, 1.0, 0.0));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(state.mode(), RobotMode::Actuating);
    }

    #[test]
    fn timeout_halts_and_next_command_resumes() {
        let mut state = RobotState::new(Pose::new(0.5, 0.5, 0.0), 100_000);
        let round = state.begin_sensing();
        state.begin_transmitting();
        let deadline = state.begin_awaiting(50_000);
        assert!(state.on_timeout(round, deadline));
        assert_eq!(state.mode(), RobotMode::Halted);
        assert_eq!(state.halt_count, 1);
        // Second firing of the same timer is not a new halt.
        assert!(!state.on_timeout(round, deadline));

        // The halted robot keeps looping: sense, transmit, await again.
        let round2 = state.begin_sensing();
        assert_eq!(
            state.mode(),
            RobotMode::Halted,
            "halt persists across phases"
        );
        state.begin_transmitting();
        state.begin_awaiting(400_000);
        let cmd = MoveCommand {
            v_mps: 0.2,
            omega_rps: 0.0,
            duration_ms: 1000.0,
            sequence: 2,
        };
        match state.on_command(&cmd, 420_000, &MotionNoise::NONE, &mut zero_rng()) {
            CommandDisposition::Actuated { resumed, new_pose } => {
                assert!(resumed, "valid command ends the halt");
                assert_eq!(new_pose, Pose::new(0.7, 0.5, 0.0));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(state.mode(), RobotMode::Actuating);
        assert!(
            !state.on_timeout(round2, 500_000),
            "round already progressed"
        );
    }

    #[test]
    fn commands_outside_awaiting_window_are_ignored() {
        let mut state = RobotState::new(Pose::new(0.0, 0.0, 0.0), 100_000);
        state.begin_sensing();
        let pose_before = state.true_pose;
        let cmd = MoveCommand {
            v_mps: 1.0,
            omega_rps: 0.0,
            duration_ms: 1000.0,
            sequence: 9,
        };
        assert_eq!(
            state.on_command(&cmd, 10, &MotionNoise::NONE, &mut zero_rng()),
            CommandDisposition::Ignored
        );
        assert_eq!(
            state.true_pose, pose_before,
            "ignored command moves nothing"
        );
    }

    #[test]
    fn stale_timeout_from_previous_round_is_inert() {
        let mut state = RobotState::new(Pose::new(0.0, 0.0, 0.0), 100_000);
        let round1 = state.begin_sensing();
        state.begin_transmitting();
        state.begin_awaiting(10_000);
        let cmd = MoveCommand::halt(1);
        state.on_command(&cmd, 20_000, &MotionNoise::NONE, &mut zero_rng());
        // Round 2 begins; round 1's timer fires late.
        state.begin_sensing();
        assert!(!state.on_timeout(round1, 110_000));
        assert_eq!(state.mode(), RobotMode::Sensing);
    }
}
