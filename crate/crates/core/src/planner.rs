//! Grid path planning and command synthesis.
//!
//! A* over the occupancy grid (4-connected, unit step cost, Manhattan
//! heuristic) produces a cell path; the controller consumes it one primitive
//! at a time — rotate in place until roughly facing the next cell, then
//! drive one cell length — and every emitted command passes a last-second
//! corridor check against the most recent scan before it may be actuated.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::worldmodel::{normalize_angle, LidarScan, OccupancyGrid, Pose};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("cell ({0}, {1}) is occupied or out of bounds")]
    InvalidCell(i64, i64),
    #[error("goal unreachable from start")]
    NoPath,
}

/// Velocity command sent to the robot. Wire format: v, ω, duration as
/// 8-byte reals plus an 8-byte sequence number = 32 bytes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoveCommand {
    pub v_mps: f64,
    pub omega_rps: f64,
    pub duration_ms: f64,
    pub sequence: u64,
}

impl MoveCommand {
    pub const WIRE_BYTES: u64 = 32;

    pub fn halt(sequence: u64) -> Self {
        MoveCommand {
            v_mps: 0.0,
            omega_rps: 0.0,
            duration_ms: 0.0,
            sequence,
        }
    }

    pub fn is_halt(&self) -> bool {
        self.v_mps == 0.0 && self.omega_rps == 0.0
    }
}

/// 4-connected cell path; cost equals the number of steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridPath {
    pub waypoints: Vec<(usize, usize)>,
    pub cost: u64,
}

/// Search diagnostics (expansion counts back the heuristic-usefulness check).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchStats {
    pub expanded: Vec<(usize, usize)>,
}

pub fn astar(
    grid: &OccupancyGrid,
    start: (usize, usize),
    goal: (usize, usize),
) -> Result<GridPath, PlanError> {
    search(grid, start, goal, true).map(|(p, _)| p)
}

pub fn astar_with_stats(
    grid: &OccupancyGrid,
    start: (usize, usize),
    goal: (usize, usize),
) -> Result<(GridPath, SearchStats), PlanError> {
    search(grid, start, goal, true)
}

/// Uniform-cost search (A* with a zero heuristic); the expansion-count
/// baseline A* is measured against.
pub fn dijkstra_with_stats(
    grid: &OccupancyGrid,
    start: (usize, usize),
    goal: (usize, usize),
) -> Result<(GridPath, SearchStats), PlanError> {
    search(grid, start, goal, false)
}

fn manhattan(a: (usize, usize), b: (usize, usize)) -> u64 {
    (a.0.abs_diff(b.0) + a.1.abs_diff(b.1)) as u64
}

fn search(
    grid: &OccupancyGrid,
    start: (usize, usize),
    goal: (usize, usize),
    use_heuristic: bool,
) -> Result<(GridPath, SearchStats), PlanError> {
    for &(r, c) in [&start, &goal] {
        if grid.is_occupied(r as i64, c as i64) {
            return Err(PlanError::InvalidCell(r as i64, c as i64));
        }
    }
    let w = grid.width();
    let idx = |cell: (usize, usize)| cell.0 * w + cell.1;

    let mut g = vec![u64::MAX; w * grid.height()];
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; w * grid.height()];
    let mut closed = vec![false; w * grid.height()];
    // Min-heap on (f, row, col): equal-f entries expand in (row, col) order,
    // which pins the returned path among equal-cost alternatives.
    let mut open: BinaryHeap<Reverse<(u64, usize, usize)>> = BinaryHeap::new();
    let mut stats = SearchStats {
        expanded: Vec::new(),
    };

    g[idx(start)] = 0;
    let h0 = if use_heuristic {
        manhattan(start, goal)
    } else {
        0
    };
    open.push(Reverse((h0, start.0, start.1)));

    while let Some(Reverse((_, r, c))) = open.pop() {
        let cell = (r, c);
        if closed[idx(cell)] {
            continue; // stale heap entry
        }
        closed[idx(cell)] = true;
        stats.expanded.push(cell);
        if cell == goal {
            let mut waypoints = vec![cell];
            let mut cur = cell;
            while let Some(p) = parent[idx(cur)] {
                waypoints.push(p);
                cur = p;
            }
            waypoints.reverse();
            return Ok((
                GridPath {
                    cost: g[idx(goal)],
                    waypoints,
                },
                stats,
            ));
        }
        let (ri, ci) = (r as i64, c as i64);
        for (nr, nc) in [(ri - 1, ci), (ri, ci - 1), (ri, ci + 1), (ri + 1, ci)] {
            if grid.is_occupied(nr, nc) {
                continue;
            }
            let ncell = (nr as usize, nc as usize);
            let tentative = g[idx(cell)] + 1;
            if tentative < g[idx(ncell)] {
                g[idx(ncell)] = tentative;
                parent[idx(ncell)] = Some(cell);
                let h = if use_heuristic {
                    manhattan(ncell, goal)
                } else {
                    0
                };
                open.push(Reverse((tentative + h, ncell.0, ncell.1)));
            }
        }
    }
    Err(PlanError::NoPath)
}

/// Kinematic limits and the heading tolerance that switches between the
/// rotate and drive primitives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriveLimits {
    pub v_max_mps: f64,
    pub omega_max_rps: f64,
    pub heading_tol_rad: f64,
}

impl Default for DriveLimits {
    fn default() -> Self {
        DriveLimits {
            v_max_mps: 0.5,
            omega_max_rps: 1.0,
            heading_tol_rad: 0.3,
        }
    }
}

/// Emit the single next command for following `path` from `pose`: rotate in
/// place toward the next cell center while the heading error exceeds the
/// tolerance, otherwise drive straight to it. A path that holds no cell
/// other than the robot's own yields a halt command.
pub fn path_to_command(
    path: &GridPath,
    pose: &Pose,
    grid: &OccupancyGrid,
    limits: &DriveLimits,
    sequence: u64,
) -> MoveCommand {
    let here = grid.cell_of(pose.x, pose.y);
    let target = path
        .waypoints
        .iter()
        .find(|&&(r, c)| (r as i64, c as i64) != here);
    let Some(&(tr, tc)) = target else {
        return MoveCommand::halt(sequence);
    };
    let (tx, ty) = grid.cell_center(tr, tc);
    let heading_err = normalize_angle((ty - pose.y).atan2(tx - pose.x) - pose.theta);
    if heading_err.abs() > limits.heading_tol_rad {
        let omega = limits.omega_max_rps * heading_err.signum();
        MoveCommand {
            v_mps: 0.0,
            omega_rps: omega,
            duration_ms: heading_err.abs() / limits.omega_max_rps * 1000.0,
            sequence,
        }
    } else {
        let dist = ((tx - pose.x).powi(2) + (ty - pose.y).powi(2)).sqrt();
        MoveCommand {
            v_mps: limits.v_max_mps,
            omega_rps: 0.0,
            duration_ms: dist / limits.v_max_mps * 1000.0,
            sequence,
        }
    }
}

/// Final pre-actuation check against the freshest scan: fail iff a sample in
/// the corridor the command sweeps (heading ± atan2(half_width + margin,
/// travel)) reports an obstacle closer than travel + margin. Zero-travel
/// commands (halt, pure rotation) always pass.
pub fn obstacle_check(
    scan: &LidarScan,
    command: &MoveCommand,
    half_width_m: f64,
    safety_margin_m: f64,
) -> bool {
    let travel = command.v_mps * command.duration_ms / 1000.0;
    if travel <= 0.0 {
        return true;
    }
    let half_angle = (half_width_m + safety_margin_m).atan2(travel);
    for &(angle, dist) in &scan.samples {
        if angle.abs() <= half_angle && dist < travel + safety_margin_m {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simkern::derive_stream;
    use rand::Rng;
    use std::collections::VecDeque;
    use std::f64::consts::PI;

    // Plain breadth-first search; the independent cost oracle.
    fn bfs_cost(grid: &OccupancyGrid, start: (usize, usize), goal: (usize, usize)) -> Option<u64> {
        let w = grid.width();
        let idx = |cell: (usize, usize)| cell.0 * w + cell.1;
        let mut dist = vec![u64::MAX; w * grid.height()];
        let mut q = VecDeque::new();
        dist[idx(start)] = 0;
        q.push_back(start);
        while let Some((r, c)) = q.pop_front() {
            if (r, c) == goal {
                return Some(dist[idx((r, c))]);
            }
            let (ri, ci) = (r as i64, c as i64);
            for (nr, nc) in [(ri - 1, ci), (ri, ci - 1), (ri, ci + 1), (ri + 1, ci)] {
                if grid.is_occupied(nr, nc) {
                    continue;
                }
                let n = (nr as usize, nc as usize);
                if dist[idx(n)] == u64::MAX {
                    dist[idx(n)] = dist[idx((r, c))] + 1;
                    q.push_back(n);
                }
            }
        }
        None
    }

    fn random_grid(rng: &mut impl Rng, max_side: usize, fill: f64) -> OccupancyGrid {
        let h = rng.random_range(2..=max_side);
        let w = rng.random_range(2..=max_side);
        let mut g = OccupancyGrid::new_free(w, h, 1.0);
        for r in 0..h {
            for c in 0..w {
                if rng.random::<f64>() < fill {
                    g.set_occupied(r, c, true);
                }
            }
        }
        g
    }

    #[test]
    fn start_equals_goal() {
        let g = OccupancyGrid::new_free(3, 3, 1.0);
        let p = astar(&g, (1, 1), (1, 1)).unwrap();
        assert_eq!(p.waypoints, vec![(1, 1)]);
        assert_eq!(p.cost, 0);
    }

    #[test]
    fn empty_3x3_corner_to_corner_costs_4() {
        let g = OccupancyGrid::new_free(3, 3, 1.0);
        let p = astar(&g, (0, 0), (2, 2)).unwrap();
        assert_eq!(p.cost, 4);
        assert_eq!(p.waypoints.len(), 5);
        for w in p.waypoints.windows(2) {
            let dr = w[0].0.abs_diff(w[1].0);
            let dc = w[0].1.abs_diff(w[1].1);
            assert_eq!(dr + dc, 1, "consecutive waypoints must be 4-connected");
        }
    }

    #[test]
    fn enclosed_goal_is_no_path() {
        let mut g = OccupancyGrid::new_free(5, 5, 1.0);
        for (r, c) in [
            (1, 1),
            (1, 2),
            (1, 3),
            (2, 1),
            (2, 3),
            (3, 1),
            (3, 2),
            (3, 3),
        ] {
            g.set_occupied(r, c, true);
        }
        assert_eq!(astar(&g, (0, 0), (2, 2)), Err(PlanError::NoPath));
    }

    #[test]
    fn occupied_endpoints_are_invalid() {
        let mut g = OccupancyGrid::new_free(3, 3, 1.0);
        g.set_occupied(0, 0, true);
        assert_eq!(astar(&g, (0, 0), (2, 2)), Err(PlanError::InvalidCell(0, 0)));
        assert_eq!(astar(&g, (2, 2), (0, 0)), Err(PlanError::InvalidCell(0, 0)));
    }

    #[test]
    fn equal_f_entries_expand_in_row_col_order() {
        // 2×2 free grid, (0,0)→(1,1): both neighbors of the start tie at
        // f=2; (0,1) must come out before (1,0).
        let g = OccupancyGrid::new_free(2, 2, 1.0);
        let (_, stats) = astar_with_stats(&g, (0, 0), (1, 1)).unwrap();
        assert_eq!(stats.expanded, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn cost_matches_bfs_oracle_on_random_grids() {
        let mut rng = derive_stream(0xACC6, "planner.bfs_oracle", &[]);
        let mut reachable = 0;
        for _ in 0..120 {
            let mut g = random_grid(&mut rng, 15, 0.3);
            let start = (0, 0);
            let goal = (g.height() - 1, g.width() - 1);
            g.set_occupied(start.0, start.1, false);
            g.set_occupied(goal.0, goal.1, false);
            match (astar(&g, start, goal), bfs_cost(&g, start, goal)) {
                (Ok(p), Some(c)) => {
                    assert_eq!(p.cost, c);
                    reachable += 1;
                }
                (Err(PlanError::NoPath), None) => {}
                (a, b) => panic!("disagreement: astar={a:?} bfs={b:?}"),
            }
        }
        assert!(reachable > 20, "want a healthy mix of solvable instances");
    }

    #[test]
    fn astar_expands_no_more_than_dijkstra() {
        let mut rng = derive_stream(0xACC6, "planner.expansions", &[]);
        for _ in 0..60 {
            let mut g = random_grid(&mut rng, 20, 0.25);
            let start = (0, 0);
            let goal = (g.height() - 1, g.width() - 1);
            g.set_occupied(start.0, start.1, false);
            g.set_occupied(goal.0, goal.1, false);
            let a = astar_with_stats(&g, start, goal);
            let d = dijkstra_with_stats(&g, start, goal);
            match (a, d) {
                (Ok((pa, sa)), Ok((pd, sd))) => {
                    assert_eq!(pa.cost, pd.cost);
                    assert!(
                        sa.expanded.len() <= sd.expanded.len(),
                        "A* expanded {} > Dijkstra {}",
                        sa.expanded.len(),
                        sd.expanded.len()
                    );
                }
                (Err(ea), Err(ed)) => assert_eq!(ea, ed),
                (a, d) => panic!("disagreement: astar={a:?} dijkstra={d:?}"),
            }
        }
    }

    fn limits() -> DriveLimits {
        DriveLimits {
            v_max_mps: 0.5,
            omega_max_rps: 1.0,
            heading_tol_rad: 0.1,
        }
    }

    #[test]
    fn at_sole_waypoint_emits_halt() {
        let g = OccupancyGrid::new_free(3, 3, 1.0);
        let path = GridPath {
            waypoints: vec![(1, 1)],
            cost: 0,
        };
        let pose = Pose::new(1.5, 1.5, 0.3);
        let cmd = path_to_command(&path, &pose, &g, &limits(), 7);
        assert!(cmd.is_halt());
        assert_eq!(cmd.sequence, 7);
    }

    #[test]
    fn aligned_next_cell_drives_one_cell_length() {
        let g = OccupancyGrid::new_free(3, 3, 1.0);
        let path = GridPath {
            waypoints: vec![(1, 1), (1, 2)],
            cost: 1,
        };
        // Centered in (1,1) facing +x: next center is exactly 1 m ahead.
        let pose = Pose::new(1.5, 1.5, 0.0);
        let cmd = path_to_command(&path, &pose, &g, &limits(), 0);
        assert_eq!(cmd.v_mps, 0.5);
        assert_eq!(cmd.omega_rps, 0.0);
        assert!((cmd.duration_ms - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn waypoint_to_the_left_rotates_first() {
        let g = OccupancyGrid::new_free(3, 3, 1.0);
        let path = GridPath {
            waypoints: vec![(1, 1), (2, 1)], // +y from the robot's cell
            cost: 1,
        };
        let pose = Pose::new(1.5, 1.5, 0.0); // facing +x; target is 90° left
        let cmd = path_to_command(&path, &pose, &g, &limits(), 0);
        assert_eq!(cmd.v_mps, 0.0);
        assert!(cmd.omega_rps > 0.0);
        assert!((cmd.duration_ms - (PI / 2.0) * 1000.0).abs() < 1e-6);
    }

    fn synthetic_scan(front_distance: f64) -> LidarScan {
        let mut samples = Vec::new();
        for i in -45i32..=45 {
            let angle = i as f64 * PI / 180.0;
            let d = if i.abs() <= 10 { front_distance } else { 10.0 };
            samples.push((angle, d));
        }
        LidarScan {
            samples,
            max_range_m: 12.0,
        }
    }

    #[test]
    fn halt_always_passes_obstacle_check() {
        let scan = synthetic_scan(0.05);
        assert!(obstacle_check(&scan, &MoveCommand::halt(0), 0.3, 0.2));
        // Pure rotation sweeps no travel distance either.
        let rot = MoveCommand {
            v_mps: 0.0,
            omega_rps: 1.0,
            duration_ms: 500.0,
            sequence: 0,
        };
        assert!(obstacle_check(&scan, &rot, 0.3, 0.2));
    }

    #[test]
    fn close_frontal_obstacle_fails() {
        let scan = synthetic_scan(0.5);
        let fwd = MoveCommand {
            v_mps: 0.5,
            omega_rps: 0.0,
            duration_ms: 2000.0, // 1 m travel
            sequence: 0,
        };
        assert!(!obstacle_check(&scan, &fwd, 0.3, 0.2));
    }

    #[test]
    fn clear_corridor_passes() {
        let scan = synthetic_scan(1.3); // > travel 1.0 + margin 0.2
        let fwd = MoveCommand {
            v_mps: 0.5,
            omega_rps: 0.0,
            duration_ms: 2000.0,
            sequence: 0,
        };
        assert!(obstacle_check(&scan, &fwd, 0.3, 0.2));
    }
}
