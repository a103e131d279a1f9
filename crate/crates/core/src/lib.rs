//! ttedge — deterministic simulation and analysis of a time-triggered
//! wireless control loop for an edge-offloaded mobile robot.
//!
//! A robot streams Lidar/odometry over a TDMA-scheduled wireless link to a
//! small edge cluster that runs replicated localization and planning
//! containers under a resource-management layer; voted move commands flow
//! back over the same schedule. Everything here is built around two ideas:
//!
//! * **Determinism** — integer-microsecond virtual time, a totally ordered
//!   event queue, and per-consumer RNG streams derived from the root seed,
//!   so a (scenario, seed) pair always produces byte-identical traces.
//! * **Analysis next to simulation** — the same configuration that drives a
//!   run also produces an analytic end-to-end latency bound, and every
//!   simulated round is checked against it.
//!
//! Module map:
//!
//! * [`simkern`]  — event kernel, virtual clocks, seeded stream derivation
//! * [`worldmodel`] — occupancy grid, poses, ray casting, sensor/motion models
//! * [`mcl`]      — Monte-Carlo localization (particle filter)
//! * [`planner`]  — A* grid planning and command synthesis
//! * [`ttwifi`]   — TDMA radio model: airtime, slots, enforcement, clock sync
//! * [`rmo`]      — edge resource management: placement, voting, rejuvenation
//! * [`robot`]    — robot-side task analysis and control-loop state machine
//! * [`scenario`] — configuration, latency budget, closed-loop runner, tools

pub mod mcl;
pub mod planner;
pub mod rmo;
pub mod robot;
pub mod scenario;
pub mod simkern;
pub mod ttwifi;
pub mod worldmodel;
