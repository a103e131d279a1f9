//! Shared fixtures for the scenario-module tests: a minimal five-node
//! scenario and a small asymmetric arena. The shipped scenario files carry
//! realistic numbers; these favor smallness so tests stay fast.

use crate::worldmodel::OccupancyGrid;

pub(crate) fn tiny_config_json() -> String {
    r#"{
        "map_file": "unused.map",
        "robot": {
            "start_pose": {"x": 1.5, "y": 1.5, "theta": 0.0},
            "goal_cell": [6, 6]
        },
        "tdma": {
            "cycle_length_us": 10000,
            "guard_time_us": 30,
            "slots": [
                {"owner": 0, "start_us": 30, "length_us": 1940},
                {"owner": 1, "start_us": 2030, "length_us": 1940},
                {"owner": 2, "start_us": 4030, "length_us": 1940},
                {"owner": 3, "start_us": 6030, "length_us": 1940},
                {"owner": 4, "start_us": 8030, "length_us": 1940}
            ]
        },
        "edge_nodes": [
            {"id": 1, "total_cores": 4, "critical_cores": 3, "memory_bw_units": 10},
            {"id": 2, "total_cores": 4, "critical_cores": 3, "memory_bw_units": 10},
            {"id": 3, "total_cores": 4, "critical_cores": 3, "memory_bw_units": 10},
            {"id": 4, "total_cores": 4, "critical_cores": 3, "memory_bw_units": 10}
        ],
        "containers": [
            {
                "name": "mcl", "kind": "critical", "cores_demand": 2,
                "bw_demand": 2, "base_exec_time_us": 50000.0,
                "parallel_fraction": 0.8, "period_us": 1300000, "replicas": 3
            }
        ],
        "mcl": {"particle_count": 200}
    }"#
    .to_string()
}

/// 8×8 walled arena at 1 m resolution with an asymmetric interior pair so
/// localization has something to grab.
pub(crate) fn tiny_grid() -> OccupancyGrid {
    let mut g = OccupancyGrid::new_free(8, 8, 1.0);
    for i in 0..8 {
        g.set_occupied(0, i, true);
        g.set_occupied(7, i, true);
        g.set_occupied(i, 0, true);
        g.set_occupied(i, 7, true);
    }
    g.set_occupied(3, 3, true);
    g.set_occupied(3, 4, true);
    g
}
