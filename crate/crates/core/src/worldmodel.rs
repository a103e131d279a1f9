//! Ground-truth environment model.
//!
//! The world is a 2-D binary occupancy grid; everything outside the grid
//! counts as occupied. Poses are continuous (meters, radians); cells are
//! addressed as (row, col) with row 0 = the first map line and the world
//! origin at that line's left edge, so `x` grows with columns and `y` with
//! rows. Synthetic Lidar and the unicycle motion model live here, together
//! with the sensor payload-size and measurement-duration formulas the rest
//! of the pipeline budgets against.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::MoveCommand;
use crate::simkern::{round_half_up, SimTime};

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("map line {line}: bad header (expected `W H RESOLUTION_M`): {detail}")]
    MapHeader { line: usize, detail: String },
    #[error("map line {line}: expected {expected} columns, found {found}")]
    MapWidth {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("map line {line}: invalid cell character {ch:?} (only '#' and '.')")]
    MapChar { line: usize, ch: char },
    #[error("map: expected {expected} rows, found {found}")]
    MapHeight { expected: usize, found: usize },
    #[error("ray origin ({x}, {y}) is outside the map")]
    RayOriginOutside { x: f64, y: f64 },
    #[error("ray origin ({x}, {y}) is inside an occupied cell")]
    RayOriginOccupied { x: f64, y: f64 },
    #[error("sample count {0} outside the supported sensor range [354, 366]")]
    SampleCount(u32),
    #[error("grid has no free cell")]
    NoFreeCell,
}

/// Binary occupancy grid. Cells are row-major; out-of-bounds is occupied.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution_m: f64,
    cells: Vec<bool>, // true = occupied
}

impl OccupancyGrid {
    /// All-free grid (tests and programmatic map construction).
    pub fn new_free(width: usize, height: usize, resolution_m: f64) -> Self {
        assert!(width > 0 && height > 0, "grid must be non-empty");
        assert!(resolution_m > 0.0, "resolution must be positive");
        OccupancyGrid {
            width,
            height,
            resolution_m,
            cells: vec![false; width * height],
        }
    }

    /// Parse the map file format: header line `W H RESOLUTION_M`, then H
    /// lines of W characters, '#' occupied and '.' free. Trailing whitespace
    /// on each line and trailing blank lines are tolerated; anything else is
    /// an error naming the offending 1-based line.
    pub fn from_map_str(text: &str) -> Result<Self, WorldError> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(WorldError::MapHeader {
                line: 1,
                detail: format!("found {} fields", fields.len()),
            });
        }
        let parse = |s: &str, what: &str| -> Result<f64, WorldError> {
            s.parse::<f64>().map_err(|_| WorldError::MapHeader {
                line: 1,
                detail: format!("{what} is not a number: {s:?}"),
            })
        };
        let width = parse(fields[0], "width")? as usize;
        let height = parse(fields[1], "height")? as usize;
        let resolution_m = parse(fields[2], "resolution")?;
        if width == 0 || height == 0 || !resolution_m.is_finite() || resolution_m <= 0.0 {
            return Err(WorldError::MapHeader {
                line: 1,
                detail: format!("W={width} H={height} RES={resolution_m}"),
            });
        }

        let mut cells = Vec::with_capacity(width * height);
        let mut rows = 0usize;
        for (ix, raw) in lines.enumerate() {
            let line_no = ix + 2;
            let row = raw.trim_end();
            if row.is_empty() {
                // Tolerated only as trailing padding; a blank line between
                // rows means the next non-blank row trips MapHeight below.
                continue;
            }
            if rows == height {
                return Err(WorldError::MapHeight {
                    expected: height,
                    found: rows + 1,
                });
            }
            if row.chars().count() != width {
                return Err(WorldError::MapWidth {
                    line: line_no,
                    expected: width,
                    found: row.chars().count(),
                });
            }
            for ch in row.chars() {
                match ch {
                    '#' => cells.push(true),
                    '.' => cells.push(false),
                    other => {
                        return Err(WorldError::MapChar {
                            line: line_no,
                            ch: other,
                        })
                    }
                }
            }
            rows += 1;
        }
        if rows != height {
            return Err(WorldError::MapHeight {
                expected: height,
                found: rows,
            });
        }
        Ok(OccupancyGrid {
            width,
            height,
            resolution_m,
            cells,
        })
    }

    /// Inverse of `from_map_str` (round-trip tested).
    pub fn to_map_string(&self) -> String {
        let mut out = format!("{} {} {}\n", self.width, self.height, self.resolution_m);
        for r in 0..self.height {
            for c in 0..self.width {
                out.push(if self.cells[r * self.width + c] {
                    '#'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution_m(&self) -> f64 {
        self.resolution_m
    }

    pub fn set_occupied(&mut self, row: usize, col: usize, occupied: bool) {
        assert!(row < self.height && col < self.width);
        self.cells[row * self.width + col] = occupied;
    }

    /// Out-of-bounds cells count as occupied.
    pub fn is_occupied(&self, row: i64, col: i64) -> bool {
        if row < 0 || col < 0 || row as usize >= self.height || col as usize >= self.width {
            return true;
        }
        self.cells[row as usize * self.width + col as usize]
    }

    pub fn in_bounds(&self, row: i64, col: i64) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width
    }

    /// Cell containing the point (x, y); may be out of bounds.
    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        (
            (y / self.resolution_m).floor() as i64,
            (x / self.resolution_m).floor() as i64,
        )
    }

    /// Center of a cell in world coordinates.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (col as f64 + 0.5) * self.resolution_m,
            (row as f64 + 0.5) * self.resolution_m,
        )
    }

    /// Free cells in row-major order (deterministic support for sampling).
    pub fn free_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.height {
            for c in 0..self.width {
                if !self.cells[r * self.width + c] {
                    out.push((r, c));
                }
            }
        }
        out
    }
}

/// Normalize an angle into (−π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut a = a % two_pi;
    if a <= -std::f64::consts::PI {
        a += two_pi;
    } else if a > std::f64::consts::PI {
        a -= two_pi;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    /// Euclidean distance between positions (heading ignored).
    pub fn distance_to(&self, other: &Pose) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// One Lidar rotation: ordered (angle, distance) samples in the sensor
/// frame (angle 0 = robot heading), plus the range the sensor saturates at.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarScan {
    pub samples: Vec<(f64, f64)>,
    pub max_range_m: f64,
}

impl LidarScan {
    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }
}

/// Rotary-encoder odometry as carried on the wire: four 8-byte values
/// (left increment, right increment, timestamp, status) = 32 bytes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryReading {
    pub left_increment: f64,
    pub right_increment: f64,
    pub timestamp: f64,
    pub status: f64,
}

impl OdometryReading {
    pub const WIRE_BYTES: u64 = 32;

    pub fn zero() -> Self {
        OdometryReading {
            left_increment: 0.0,
            right_increment: 0.0,
            timestamp: 0.0,
            status: 0.0,
        }
    }
}

/// Sensor payload for one round: `sample_count` Lidar pairs at 16 bytes each
/// plus one 32-byte odometry block.
pub fn sensor_payload_bytes(sample_count: u32) -> u64 {
    sample_count as u64 * 16 + OdometryReading::WIRE_BYTES
}

/// Time the sensor needs for one full measurement, in microseconds
/// (rounded half-up; the per-sample time is configured in milliseconds).
pub fn measurement_duration(sample_count: u32, ms_per_sample: f64) -> SimTime {
    round_half_up(sample_count as f64 * ms_per_sample * 1000.0).max(0) as SimTime
}

/// Cast a ray from (origin.x, origin.y) at world angle `angle` and return
/// the distance to the first occupied cell boundary, or `max_range` if the
/// ray stays free that long. Uses exact cell traversal (Amanatides–Woo):
/// the ray advances crossing by crossing, so the returned distance is the
/// entry distance into the blocking cell, not a sampled approximation.
pub fn ray_cast(
    grid: &OccupancyGrid,
    origin: &Pose,
    angle: f64,
    max_range: f64,
) -> Result<f64, WorldError> {
    let (mut row, mut col) = grid.cell_of(origin.x, origin.y);
    if !grid.in_bounds(row, col) {
        return Err(WorldError::RayOriginOutside {
            x: origin.x,
            y: origin.y,
        });
    }
    if grid.is_occupied(row, col) {
        return Err(WorldError::RayOriginOccupied {
            x: origin.x,
            y: origin.y,
        });
    }

    let res = grid.resolution_m();
    let dx = angle.cos();
    let dy = angle.sin();
    let step_col: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_row: i64 = if dy > 0.0 { 1 } else { -1 };

    // Distance along the ray to the first vertical / horizontal crossing.
    let mut t_max_x = if dx == 0.0 {
        f64::INFINITY
    } else if dx > 0.0 {
        ((col + 1) as f64 * res - origin.x) / dx
    } else {
        (col as f64 * res - origin.x) / dx
    };
    let mut t_max_y = if dy == 0.0 {
        f64::INFINITY
    } else if dy > 0.0 {
        ((row + 1) as f64 * res - origin.y) / dy
    } else {
        (row as f64 * res - origin.y) / dy
    };
    let t_delta_x = if dx == 0.0 {
        f64::INFINITY
    } else {
        (res / dx).abs()
    };
    let t_delta_y = if dy == 0.0 {
        f64::INFINITY
    } else {
        (res / dy).abs()
    };

    loop {
        // Corner ties advance the column first (fixed, documented order).
        let t;
        if t_max_x <= t_max_y {
            t = t_max_x;
            t_max_x += t_delta_x;
            col += step_col;
        } else {
            t = t_max_y;
            t_max_y += t_delta_y;
            row += step_row;
        }
        if t >= max_range {
            return Ok(max_range);
        }
        if grid.is_occupied(row, col) {
            return Ok(t);
        }
    }
}

/// Generate one noisy scan from the true pose. Angles are evenly spaced in
/// the sensor frame: `−π + (i+1)·2π/n`, strictly increasing and all within
/// (−π, π]. Distances are ray casts plus N(0, σ) clamped to [0, max_range].
pub fn generate_scan(
    grid: &OccupancyGrid,
    true_pose: &Pose,
    sample_count: u32,
    sensor_sigma: f64,
    max_range: f64,
    rng: &mut impl Rng,
) -> Result<LidarScan, WorldError> {
    if !(354..=366).contains(&sample_count) {
        return Err(WorldError::SampleCount(sample_count));
    }
    scan_at(grid, true_pose, sample_count, sensor_sigma, max_range, rng)
}

/// Same as `generate_scan` without the physical-sensor sample-count bounds;
/// used by tests and by callers that deliberately decimate.
pub fn scan_at(
    grid: &OccupancyGrid,
    pose: &Pose,
    sample_count: u32,
    sensor_sigma: f64,
    max_range: f64,
    rng: &mut impl Rng,
) -> Result<LidarScan, WorldError> {
    let n = sample_count as usize;
    let mut samples = Vec::with_capacity(n);
    let two_pi = 2.0 * std::f64::consts::PI;
    let noise = if sensor_sigma > 0.0 {
        Some(Normal::new(0.0, sensor_sigma).expect("finite sigma"))
    } else {
        None
    };
    for i in 0..n {
        let beam = -std::f64::consts::PI + (i as f64 + 1.0) * two_pi / n as f64;
        let d = ray_cast(grid, pose, pose.theta + beam, max_range)?;
        let d = match &noise {
            Some(dist) => (d + dist.sample(rng)).clamp(0.0, max_range),
            None => d,
        };
        samples.push((beam, d));
    }
    Ok(LidarScan {
        samples,
        max_range_m: max_range,
    })
}

/// Gaussian noise applied by the motion model; all-zero = exact kinematics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionNoise {
    pub sigma_v: f64,
    pub sigma_omega: f64,
    pub sigma_theta: f64,
}

impl MotionNoise {
    pub const NONE: MotionNoise = MotionNoise {
        sigma_v: 0.0,
        sigma_omega: 0.0,
        sigma_theta: 0.0,
    };
}

impl Default for MotionNoise {
    fn default() -> Self {
        MotionNoise {
            sigma_v: 0.02,
            sigma_omega: 0.01,
            sigma_theta: 0.005,
        }
    }
}

/// Unicycle-model update: rotate by ω·Δt, then translate v·Δt along the new
/// heading. Noise perturbs (v, ω) before the update and the final heading
/// after it; each σ that is zero draws nothing, so the zero-noise path is
/// bit-exact.
pub fn apply_motion(
    pose: &Pose,
    command: &MoveCommand,
    noise: &MotionNoise,
    rng: &mut impl Rng,
) -> Pose {
    let dt = command.duration_ms / 1000.0;
    let mut v = command.v_mps;
    let mut omega = command.omega_rps;
    if noise.sigma_v > 0.0 {
        v += Normal::new(0.0, noise.sigma_v)
            .expect("finite sigma")
            .sample(rng);
    }
    if noise.sigma_omega > 0.0 {
        omega += Normal::new(0.0, noise.sigma_omega)
            .expect("finite sigma")
            .sample(rng);
    }
    let heading = normalize_angle(pose.theta + omega * dt);
    let mut out = Pose {
        x: pose.x + v * dt * heading.cos(),
        y: pose.y + v * dt * heading.sin(),
        theta: heading,
    };
    if noise.sigma_theta > 0.0 {
        let dtheta = Normal::new(0.0, noise.sigma_theta)
            .expect("finite sigma")
            .sample(rng);
        out.theta = normalize_angle(out.theta + dtheta);
    }
    out
}
