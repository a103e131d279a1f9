//! Monte-Carlo localization.
//!
//! Classic particle filter over the occupancy grid: motion update with
//! per-particle noise, independent-beam Gaussian sensor weighting against
//! ray-cast expected ranges, low-variance (systematic) resampling with
//! random injection when overall fitness collapses, and a weighted pose
//! estimate. The population size never changes.
//!
//! Parallelism contract: the motion and weighting phases fan out over a
//! [`WorkerPool`], but every particle draws from its own derived RNG stream
//! keyed by (seed, phase, generation, index), and reductions happen in index
//! order — so results are bit-identical for any worker count.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::MoveCommand;
use crate::simkern::{derive_stream, round_half_up, WorkerPool};
use crate::worldmodel::{
    apply_motion, normalize_angle, LidarScan, MotionNoise, OccupancyGrid, Pose,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MclError {
    #[error("grid has no free cells to sample particles from")]
    NoFreeSpace,
    #[error("particle set is empty")]
    EmptySet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub pose: Pose,
    pub weight: f64,
}

/// The filter population. `log_mean_raw` caches ln(mean unnormalized
/// weight) from the latest weighting pass — the injection decision needs the
/// raw fitness level, which the normalized weights no longer carry, and at
/// 61 beams the raw products themselves underflow f64.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub particles: Vec<Particle>,
    pub generation: u64,
    pub log_mean_raw: Option<f64>,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Debug dump, one `x,y,theta,weight` row per particle.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,theta,weight\n");
        for p in &self.particles {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.pose.x, p.pose.y, p.pose.theta, p.weight
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    WeightedMean,
    MaxWeight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MclConfig {
    pub particle_count: usize,
    pub sensor_sigma: f64,
    pub motion_noise: MotionNoise,
    /// Inject fresh particles when mean raw weight drops below this.
    pub injection_threshold: f64,
    /// Fraction of the population replaced on injection.
    pub injection_fraction: f64,
    /// Use every k-th beam of the scan (cost control; 366/6 → 61 beams).
    pub beam_decimation: usize,
    pub estimator: Estimator,
}

impl Default for MclConfig {
    fn default() -> Self {
        MclConfig {
            particle_count: 10_000,
            sensor_sigma: 0.2,
            motion_noise: MotionNoise::default(),
            injection_threshold: 1e-8,
            injection_fraction: 0.05,
            beam_decimation: 6,
            estimator: Estimator::WeightedMean,
        }
    }
}

fn uniform_particle(grid: &OccupancyGrid, free: &[(usize, usize)], rng: &mut impl Rng) -> Particle {
    let (row, col) = free[rng.random_range(0..free.len())];
    let res = grid.resolution_m();
    let x = col as f64 * res + rng.random_range(0.0..res);
    let y = row as f64 * res + rng.random_range(0.0..res);
    let theta = normalize_angle(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
    Particle {
        pose: Pose { x, y, theta },
        weight: 0.0,
    }
}

/// Uniform population over free space with uniform headings, equal weights.
pub fn init_particles(
    grid: &OccupancyGrid,
    config: &MclConfig,
    seed: u64,
) -> Result<ParticleSet, MclError> {
    let free = grid.free_cells();
    if free.is_empty() {
        return Err(MclError::NoFreeSpace);
    }
    let n = config.particle_count;
    let w = 1.0 / n as f64;
    let particles = (0..n)
        .map(|i| {
            let mut rng = derive_stream(seed, "mcl.init", &[i as u64]);
            let mut p = uniform_particle(grid, &free, &mut rng);
            p.weight = w;
            p
        })
        .collect();
    Ok(ParticleSet {
        particles,
        generation: 0,
        log_mean_raw: None,
    })
}

/// Advance every particle by the command with per-particle noise.
/// Weights and population size are untouched.
pub fn motion_update(
    set: &mut ParticleSet,
    command: &MoveCommand,
    config: &MclConfig,
    seed: u64,
    pool: &WorkerPool,
) {
    let generation = set.generation;
    let noise = config.motion_noise;
    pool.install(|| {
        set.particles.par_iter_mut().enumerate().for_each(|(i, p)| {
            let mut rng = derive_stream(seed, "mcl.motion", &[generation, i as u64]);
            p.pose = apply_motion(&p.pose, command, &noise, &mut rng);
        });
    });
}

/// Log-likelihood of the scan from one hypothetical pose: sum over the
/// decimated beams of ln N(measured − expected; 0, σ). Poses in occupied or
/// out-of-map cells score −∞ (weight 0).
pub fn sensor_log_weight(
    pose: &Pose,
    scan: &LidarScan,
    grid: &OccupancyGrid,
    config: &MclConfig,
) -> f64 {
    let (row, col) = grid.cell_of(pose.x, pose.y);
    if grid.is_occupied(row, col) {
        return f64::NEG_INFINITY;
    }
    let sigma = config.sensor_sigma;
    let ln_norm = -(sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let step = config.beam_decimation.max(1);
    let mut lw = 0.0;
    for &(angle, measured) in scan.samples.iter().step_by(step) {
        let expected =
            match crate::worldmodel::ray_cast(grid, pose, pose.theta + angle, scan.max_range_m) {
                Ok(d) => d,
                Err(_) => return f64::NEG_INFINITY,
            };
        let z = (measured - expected) / sigma;
        lw += -0.5 * z * z + ln_norm;
    }
    lw
}

/// Raw (unnormalized) likelihood of one particle. Convenience wrapper over
/// the log form; underflows to 0 for long beam sets — population-level code
/// stays in log space.
pub fn sensor_weight(
    particle: &Particle,
    scan: &LidarScan,
    grid: &OccupancyGrid,
    config: &MclConfig,
) -> f64 {
    sensor_log_weight(&particle.pose, scan, grid, config).exp()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Score the whole population against a scan: normalized weights are written
/// into the particles and the raw fitness level is cached for the injection
/// decision. All-blocked populations end up with all-zero weights.
pub fn weight_particles(
    set: &mut ParticleSet,
    scan: &LidarScan,
    grid: &OccupancyGrid,
    config: &MclConfig,
    pool: &WorkerPool,
) {
    let logs: Vec<f64> = pool.install(|| {
        set.particles
            .par_iter()
            .map(|p| sensor_log_weight(&p.pose, scan, grid, config))
            .collect()
    });
    let lse = log_sum_exp(&logs);
    set.log_mean_raw = Some(if lse == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        lse - (set.particles.len() as f64).ln()
    });
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        for p in &mut set.particles {
            p.weight = 0.0;
        }
        return;
    }
    // Shift by the max before exponentiating, then normalize sequentially in
    // index order (fixed summation order keeps this bit-stable).
    let mut sum = 0.0;
    for (p, lw) in set.particles.iter_mut().zip(&logs) {
        p.weight = (lw - max).exp();
        sum += p.weight;
    }
    for p in &mut set.particles {
        p.weight /= sum;
    }
}

/// Systematic (low-variance) pick: `draws` indices from one uniform offset
/// `u` ∈ [0, 1/draws) walked across the cumulative normalized weights.
pub fn systematic_pick(weights: &[f64], draws: usize, u: f64) -> Vec<usize> {
    debug_assert!(!weights.is_empty());
    let mut picks = Vec::with_capacity(draws);
    let mut cum = weights[0];
    let mut i = 0usize;
    for j in 0..draws {
        let point = u + j as f64 / draws as f64;
        while point > cum && i + 1 < weights.len() {
            i += 1;
            cum += weights[i];
        }
        picks.push(i);
    }
    picks
}

/// Resample the population proportional to weight (systematic), injecting
/// `injection_fraction·N` fresh uniform particles when the cached mean raw
/// weight is below `injection_threshold`. Output weights are uniform 1/N.
/// All-zero weights (every particle blocked) trigger a full uniform
/// reinitialization — a documented recovery, not an error.
pub fn resample(
    set: &mut ParticleSet,
    grid: &OccupancyGrid,
    config: &MclConfig,
    seed: u64,
) -> Result<(), MclError> {
    if set.particles.is_empty() {
        return Err(MclError::EmptySet);
    }
    let n = set.particles.len();
    let generation = set.generation;
    let free = grid.free_cells();
    if free.is_empty() {
        return Err(MclError::NoFreeSpace);
    }
    let uniform_w = 1.0 / n as f64;
    let total: f64 = set.particles.iter().map(|p| p.weight).sum();
    let mut rng = derive_stream(seed, "mcl.resample", &[generation]);

    if total <= 0.0 {
        for (j, p) in set.particles.iter_mut().enumerate() {
            let mut prng = derive_stream(seed, "mcl.reinit", &[generation, j as u64]);
            *p = uniform_particle(grid, &free, &mut prng);
            p.weight = uniform_w;
        }
        set.generation += 1;
        set.log_mean_raw = None;
        return Ok(());
    }

    let weights: Vec<f64> = set.particles.iter().map(|p| p.weight / total).collect();
    let u = rng.random_range(0.0..uniform_w);
    let picks = systematic_pick(&weights, n, u);
    let mut next: Vec<Particle> = picks
        .iter()
        .map(|&i| Particle {
            pose: set.particles[i].pose,
            weight: uniform_w,
        })
        .collect();

    let inject = match set.log_mean_raw {
        Some(lm) => lm < config.injection_threshold.ln(),
        None => false,
    };
    if inject {
        let k = (round_half_up(config.injection_fraction * n as f64).max(0) as usize).min(n);
        // k distinct victims via partial Fisher-Yates on the index range.
        let mut order: Vec<usize> = (0..n).collect();
        for j in 0..k {
            let pick = rng.random_range(j..n);
            order.swap(j, pick);
        }
        for (j, &victim) in order[..k].iter().enumerate() {
            let mut prng = derive_stream(seed, "mcl.inject", &[generation, j as u64]);
            let mut fresh = uniform_particle(grid, &free, &mut prng);
            fresh.weight = uniform_w;
            next[victim] = fresh;
        }
    }

    set.particles = next;
    set.generation += 1;
    set.log_mean_raw = None;
    Ok(())
}

/// Pose estimate. Weighted mean of (x, y) with a weighted circular mean for
/// θ; the max-weight variant returns the best single hypothesis (ties break
/// to the lower index). Zero-total weights fall back to uniform weighting.
pub fn estimate_pose(set: &ParticleSet, config: &MclConfig) -> Result<Pose, MclError> {
    if set.particles.is_empty() {
        return Err(MclError::EmptySet);
    }
    match config.estimator {
        Estimator::MaxWeight => {
            let mut best = 0usize;
            for (i, p) in set.particles.iter().enumerate() {
                if p.weight > set.particles[best].weight {
                    best = i;
                }
            }
            Ok(set.particles[best].pose)
        }
        Estimator::WeightedMean => {
            let total: f64 = set.particles.iter().map(|p| p.weight).sum();
            let uniform = 1.0 / set.particles.len() as f64;
            let (mut x, mut y, mut sin, mut cos) = (0.0, 0.0, 0.0, 0.0);
            for p in &set.particles {
                let w = if total > 0.0 {
                    p.weight / total
                } else {
                    uniform
                };
                x += w * p.pose.x;
                y += w * p.pose.y;
                sin += w * p.pose.theta.sin();
                cos += w * p.pose.theta.cos();
            }
            Ok(Pose {
                x,
                y,
                theta: normalize_angle(sin.atan2(cos)),
            })
        }
    }
}

/// One full filter step: motion → weighting → resample → estimate.
/// The returned pose is the estimate over the freshly resampled population.
pub fn mcl_step(
    set: &mut ParticleSet,
    command: &MoveCommand,
    scan: &LidarScan,
    grid: &OccupancyGrid,
    config: &MclConfig,
    seed: u64,
    pool: &WorkerPool,
) -> Result<Pose, MclError> {
    motion_update(set, command, config, seed, pool);
    weight_particles(set, scan, grid, config, pool);
    resample(set, grid, config, seed)?;
    estimate_pose(set, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simkern::derive_stream;
    use crate::worldmodel::scan_at;
    use std::f64::consts::PI;

    fn walled_grid(side: usize) -> OccupancyGrid {
        let mut g = OccupancyGrid::new_free(side, side, 1.0);
        for i in 0..side {
            g.set_occupied(0, i, true);
            g.set_occupied(side - 1, i, true);
            g.set_occupied(i, 0, true);
            g.set_occupied(i, side - 1, true);
        }
        g
    }

    fn config(n: usize) -> MclConfig {
        MclConfig {
            particle_count: n,
            sensor_sigma: 0.2,
            beam_decimation: 1,
            ..MclConfig::default()
        }
    }

    #[test]
    fn init_uniform_weights() {
        let g = walled_grid(12);
        let set = init_particles(&g, &config(10_000), 9).unwrap();
        assert_eq!(set.len(), 10_000);
        for p in &set.particles {
            assert_eq!(p.weight, 1e-4);
            let (r, c) = g.cell_of(p.pose.x, p.pose.y);
            assert!(!g.is_occupied(r, c), "particle spawned in occupied space");
        }
        let single = init_particles(&g, &config(1), 9).unwrap();
        assert_eq!(single.particles[0].weight, 1.0);
    }

    #[test]
    fn init_single_free_cell_confines_population() {
        let mut g = OccupancyGrid::new_free(3, 3, 1.0);
        for r in 0..3 {
            for c in 0..3 {
                g.set_occupied(r, c, (r, c) != (1, 2));
            }
        }
        let set = init_particles(&g, &config(64), 3).unwrap();
        for p in &set.particles {
            assert_eq!(g.cell_of(p.pose.x, p.pose.y), (1, 2));
        }
        // Headings still spread over the circle.
        let spread = set
            .particles
            .iter()
            .map(|p| p.pose.theta)
            .fold((f64::MAX, f64::MIN), |(lo, hi), t| (lo.min(t), hi.max(t)));
        assert!(spread.1 - spread.0 > PI);
    }

    #[test]
    fn init_fully_occupied_grid_fails() {
        let mut g = OccupancyGrid::new_free(2, 2, 1.0);
        for r in 0..2 {
            for c in 0..2 {
                g.set_occupied(r, c, true);
            }
        }
        assert_eq!(
            init_particles(&g, &config(4), 0),
            Err(MclError::NoFreeSpace)
        );
    }

    #[test]
    fn motion_update_zero_command_zero_noise_is_identity() {
        let g = walled_grid(8);
        let mut cfg = config(128);
        cfg.motion_noise = MotionNoise::NONE;
        let pool = WorkerPool::new(2);
        let mut set = init_particles(&g, &cfg, 5).unwrap();
        let before = set.clone();
        motion_update(&mut set, &MoveCommand::halt(0), &cfg, 5, &pool);
        assert_eq!(set, before);
    }

    #[test]
    fn motion_update_translates_degenerate_population() {
        let g = walled_grid(8);
        let mut cfg = config(16);
        cfg.motion_noise = MotionNoise::NONE;
        let pool = WorkerPool::new(1);
        let mut set = init_particles(&g, &cfg, 5).unwrap();
        for p in &mut set.particles {
            p.pose = Pose::new(2.0, 2.0, 0.0);
        }
        let fwd = MoveCommand {
            v_mps: 1.0,
            omega_rps: 0.0,
            duration_ms: 1000.0,
            sequence: 0,
        };
        motion_update(&mut set, &fwd, &cfg, 5, &pool);
        for p in &set.particles {
            assert_eq!(p.pose, Pose::new(3.0, 2.0, 0.0));
        }
    }

    #[test]
    fn motion_noise_spreads_positions() {
        let g = walled_grid(8);
        let cfg = config(256); // default noise enabled
        let pool = WorkerPool::new(4);
        let mut set = init_particles(&g, &cfg, 5).unwrap();
        for p in &mut set.particles {
            p.pose = Pose::new(4.0, 4.0, 0.0);
        }
        let fwd = MoveCommand {
            v_mps: 1.0,
            omega_rps: 0.0,
            duration_ms: 1000.0,
            sequence: 0,
        };
        motion_update(&mut set, &fwd, &cfg, 5, &pool);
        let mean = set.particles.iter().map(|p| p.pose.x).sum::<f64>() / 256.0;
        let var = set
            .particles
            .iter()
            .map(|p| (p.pose.x - mean).powi(2))
            .sum::<f64>()
            / 256.0;
        assert!(var > 0.0, "σ_v > 0 must spread x positions");
    }

    // The independent oracle: evaluate the beam product naively, no logs.
    fn naive_weight(pose: &Pose, scan: &LidarScan, grid: &OccupancyGrid, cfg: &MclConfig) -> f64 {
        let norm = 1.0 / (cfg.sensor_sigma * (2.0 * PI).sqrt());
        let mut w = 1.0;
        for &(angle, measured) in scan.samples.iter().step_by(cfg.beam_decimation.max(1)) {
            let expected =
                crate::worldmodel::ray_cast(grid, pose, pose.theta + angle, scan.max_range_m)
                    .unwrap();
            let z = (measured - expected) / cfg.sensor_sigma;
            w *= norm * (-0.5 * z * z).exp();
        }
        w
    }

    #[test]
    fn five_beam_weight_matches_naive_product() {
        let g = walled_grid(10);
        let cfg = config(1);
        let true_pose = Pose::new(4.3, 5.6, 0.7);
        let mut rng = derive_stream(11, "mcl.test.scan", &[]);
        let scan = scan_at(&g, &true_pose, 5, 0.0, 12.0, &mut rng).unwrap();
        for pose in [
            true_pose,
            Pose::new(2.2, 3.3, -1.0),
            Pose::new(7.9, 1.4, 2.9),
        ] {
            let p = Particle { pose, weight: 0.0 };
            let got = sensor_weight(&p, &scan, &g, &cfg);
            let want = naive_weight(&pose, &scan, &g, &cfg);
            assert!(
                (got - want).abs() <= want.abs() * 1e-12 + 1e-300,
                "log-space {got} vs naive {want}"
            );
        }
    }

    #[test]
    fn true_pose_dominates_population_weights() {
        let g = walled_grid(10);
        let mut cfg = config(1);
        cfg.sensor_sigma = 0.05;
        let true_pose = Pose::new(4.5, 5.5, 0.0);
        let mut rng = derive_stream(11, "mcl.test.scan", &[]);
        let scan = scan_at(&g, &true_pose, 36, 0.0, 12.0, &mut rng).unwrap();
        let at_truth = Particle {
            pose: true_pose,
            weight: 0.0,
        };
        let w_truth = sensor_weight(&at_truth, &scan, &g, &cfg);
        for dx in [-0.8, -0.3, 0.4, 1.2] {
            let off = Particle {
                pose: Pose::new(4.5 + dx, 5.5, 0.0),
                weight: 0.0,
            };
            assert!(sensor_weight(&off, &scan, &g, &cfg) <= w_truth);
        }
    }

    #[test]
    fn blocked_particle_weighs_zero() {
        let mut g = walled_grid(10);
        g.set_occupied(5, 5, true);
        let cfg = config(1);
        let mut rng = derive_stream(11, "mcl.test.scan", &[]);
        let scan = scan_at(&g, &Pose::new(2.5, 2.5, 0.0), 8, 0.0, 12.0, &mut rng).unwrap();
        let inside_wall = Particle {
            pose: Pose::new(5.5, 5.5, 0.0),
            weight: 0.0,
        };
        let outside_map = Particle {
            pose: Pose::new(-3.0, 4.0, 0.0),
            weight: 0.0,
        };
        assert_eq!(sensor_weight(&inside_wall, &scan, &g, &cfg), 0.0);
        assert_eq!(sensor_weight(&outside_map, &scan, &g, &cfg), 0.0);
    }

    #[test]
    fn normalized_weights_sum_to_one() {
        let g = walled_grid(12);
        let cfg = config(500);
        let pool = WorkerPool::new(3);
        let mut set = init_particles(&g, &cfg, 21).unwrap();
        let mut rng = derive_stream(21, "mcl.test.scan", &[]);
        let scan = scan_at(&g, &Pose::new(6.0, 6.0, 0.0), 24, 0.0, 12.0, &mut rng).unwrap();
        weight_particles(&mut set, &scan, &g, &cfg, &pool);
        let sum: f64 = set.particles.iter().map(|p| p.weight).sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(set.log_mean_raw.is_some());
    }

    #[test]
    fn weighting_is_permutation_equivariant() {
        let g = walled_grid(12);
        let cfg = config(64);
        let pool = WorkerPool::new(2);
        let mut set = init_particles(&g, &cfg, 33).unwrap();
        let mut rng = derive_stream(33, "mcl.test.scan", &[]);
        let scan = scan_at(&g, &Pose::new(5.0, 7.0, 1.0), 16, 0.0, 12.0, &mut rng).unwrap();

        let mut reversed = set.clone();
        reversed.particles.reverse();
        weight_particles(&mut set, &scan, &g, &cfg, &pool);
        weight_particles(&mut reversed, &scan, &g, &cfg, &pool);
        reversed.particles.reverse();
        for (a, b) in set.particles.iter().zip(&reversed.particles) {
            assert_eq!(
                a.weight, b.weight,
                "permuting input permutes weights identically"
            );
        }
    }

    #[test]
    fn systematic_counts_match_weights_within_one() {
        for seed in 0..20u64 {
            let mut rng = derive_stream(seed, "mcl.test.systematic", &[]);
            let u = rng.random_range(0.0..0.001);
            let picks = systematic_pick(&[0.5, 0.3, 0.2], 1000, u);
            let mut counts = [0usize; 3];
            for i in picks {
                counts[i] += 1;
            }
            assert!((counts[0] as i64 - 500).abs() <= 1, "counts={counts:?}");
            assert!((counts[1] as i64 - 300).abs() <= 1, "counts={counts:?}");
            assert!((counts[2] as i64 - 200).abs() <= 1, "counts={counts:?}");
        }
    }

    #[test]
    fn degenerate_weight_copies_single_survivor() {
        let g = walled_grid(8);
        let cfg = config(4);
        let mut set = init_particles(&g, &cfg, 2).unwrap();
        let keeper = set.particles[0].pose;
        set.particles[0].weight = 1.0;
        for p in &mut set.particles[1..] {
            p.weight = 0.0;
        }
        set.log_mean_raw = Some(0.0); // healthy fitness: no injection
        resample(&mut set, &g, &cfg, 2).unwrap();
        assert_eq!(set.len(), 4);
        for p in &set.particles {
            assert_eq!(p.pose, keeper);
            assert_eq!(p.weight, 0.25);
        }
    }

    #[test]
    fn uniform_weights_preserve_population_exactly() {
        let g = walled_grid(8);
        let cfg = config(50);
        let mut set = init_particles(&g, &cfg, 4).unwrap();
        set.log_mean_raw = Some(0.0);
        let before: Vec<Pose> = set.particles.iter().map(|p| p.pose).collect();
        resample(&mut set, &g, &cfg, 4).unwrap();
        let after: Vec<Pose> = set.particles.iter().map(|p| p.pose).collect();
        assert_eq!(before, after, "uniform systematic pick is the identity");
    }

    #[test]
    fn injection_replaces_the_configured_fraction() {
        let g = walled_grid(20);
        let cfg = config(200);
        let set0 = {
            let mut s = init_particles(&g, &cfg, 8).unwrap();
            // Uniform weights, catastophic raw fitness → injection fires.
            s.log_mean_raw = Some((1e-12f64).ln());
            s
        };
        let mut with_injection = set0.clone();
        resample(&mut with_injection, &g, &cfg, 8).unwrap();
        let mut without = set0.clone();
        without.log_mean_raw = Some(0.0);
        resample(&mut without, &g, &cfg, 8).unwrap();
        let differing = with_injection
            .particles
            .iter()
            .zip(&without.particles)
            .filter(|(a, b)| a.pose != b.pose)
            .count();
        assert_eq!(differing, 10, "5% of 200 particles replaced");
        assert_eq!(with_injection.len(), 200);
    }

    #[test]
    fn all_zero_weights_reinitialize() {
        let g = walled_grid(8);
        let cfg = config(32);
        let mut set = init_particles(&g, &cfg, 6).unwrap();
        for p in &mut set.particles {
            p.weight = 0.0;
        }
        set.log_mean_raw = Some(f64::NEG_INFINITY);
        resample(&mut set, &g, &cfg, 6).unwrap();
        assert_eq!(set.len(), 32);
        for p in &set.particles {
            let (r, c) = g.cell_of(p.pose.x, p.pose.y);
            assert!(!g.is_occupied(r, c));
            assert_eq!(p.weight, 1.0 / 32.0);
        }
    }

    #[test]
    fn estimate_identical_particles_returns_that_pose() {
        let pose = Pose::new(1.0, 2.0, 0.5);
        let set = ParticleSet {
            particles: vec![Particle { pose, weight: 0.25 }; 4],
            generation: 0,
            log_mean_raw: None,
        };
        let est = estimate_pose(&set, &config(4)).unwrap();
        assert!((est.x - 1.0).abs() < 1e-12);
        assert!((est.y - 2.0).abs() < 1e-12);
        assert!((est.theta - 0.5).abs() < 1e-12);
    }

    #[test]
    fn estimate_midpoint_and_circular_mean() {
        let mk = |x: f64, theta: f64| Particle {
            pose: Pose::new(x, 0.0, theta),
            weight: 0.5,
        };
        let set = ParticleSet {
            particles: vec![mk(0.0, 0.1), mk(2.0, 0.1)],
            generation: 0,
            log_mean_raw: None,
        };
        let est = estimate_pose(&set, &config(2)).unwrap();
        assert!((est.x - 1.0).abs() < 1e-12);

        // Straddling the ±π wrap: the circular mean is π, not 0.
        let wrap = ParticleSet {
            particles: vec![mk(0.0, PI - 0.1), mk(0.0, -PI + 0.1)],
            generation: 0,
            log_mean_raw: None,
        };
        let est = estimate_pose(&wrap, &config(2)).unwrap();
        assert!(
            (est.theta - PI).abs() < 1e-9,
            "circular mean across the wrap: {}",
            est.theta
        );
    }

    #[test]
    fn max_weight_estimator_picks_best_hypothesis() {
        let mut cfg = config(3);
        cfg.estimator = Estimator::MaxWeight;
        let mk = |x: f64, w: f64| Particle {
            pose: Pose::new(x, 0.0, 0.0),
            weight: w,
        };
        let set = ParticleSet {
            particles: vec![mk(1.0, 0.2), mk(2.0, 0.5), mk(3.0, 0.3)],
            generation: 0,
            log_mean_raw: None,
        };
        assert_eq!(estimate_pose(&set, &cfg).unwrap().x, 2.0);
    }

    #[test]
    fn population_size_invariant_through_full_steps() {
        let g = walled_grid(15);
        let mut cfg = config(300);
        cfg.beam_decimation = 4;
        let pool = WorkerPool::new(2);
        let true_pose = Pose::new(7.5, 7.5, 0.0);
        let mut set = init_particles(&g, &cfg, 14).unwrap();
        for round in 0..5u64 {
            let mut rng = derive_stream(14, "mcl.test.scan", &[round]);
            let scan = scan_at(&g, &true_pose, 48, 0.02, 12.0, &mut rng).unwrap();
            mcl_step(
                &mut set,
                &MoveCommand::halt(round),
                &scan,
                &g,
                &cfg,
                14,
                &pool,
            )
            .unwrap();
            assert_eq!(set.len(), 300, "population size never changes");
        }
        assert_eq!(set.generation, 5);
    }

    #[test]
    fn single_particle_tracks_motion_model() {
        let g = walled_grid(10);
        let mut cfg = config(1);
        cfg.motion_noise = MotionNoise::NONE;
        let pool = WorkerPool::new(1);
        let mut set = init_particles(&g, &cfg, 1).unwrap();
        set.particles[0].pose = Pose::new(3.5, 3.5, 0.0);
        let fwd = MoveCommand {
            v_mps: 1.0,
            omega_rps: 0.0,
            duration_ms: 500.0,
            sequence: 1,
        };
        let mut rng = derive_stream(1, "mcl.test.scan", &[]);
        let scan = scan_at(&g, &Pose::new(4.0, 3.5, 0.0), 12, 0.0, 12.0, &mut rng).unwrap();
        let est = mcl_step(&mut set, &fwd, &scan, &g, &cfg, 1, &pool).unwrap();
        assert_eq!(set.particles[0].pose, Pose::new(4.0, 3.5, 0.0));
        assert_eq!(est, Pose::new(4.0, 3.5, 0.0));
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let g = walled_grid(15);
        let mut cfg = config(400);
        cfg.beam_decimation = 3;
        let true_pose = Pose::new(6.5, 8.5, 0.4);
        let pool1 = WorkerPool::new(1);
        let pool8 = WorkerPool::new(8);
        let mut a = init_particles(&g, &cfg, 77).unwrap();
        let mut b = a.clone();
        for round in 0..3u64 {
            let mut rng = derive_stream(77, "mcl.test.scan", &[round]);
            let scan = scan_at(&g, &true_pose, 36, 0.01, 12.0, &mut rng).unwrap();
            let cmd = MoveCommand::halt(round);
            let ea = mcl_step(&mut a, &cmd, &scan, &g, &cfg, 77, &pool1).unwrap();
            let eb = mcl_step(&mut b, &cmd, &scan, &g, &cfg, 77, &pool8).unwrap();
            assert_eq!(ea, eb, "estimates must not depend on worker count");
        }
        assert_eq!(a, b, "particle state must be bit-identical across pools");
    }

    #[test]
    fn stationary_filter_error_contracts_over_steps() {
        // A bare box is rotationally ambiguous (symmetric poses scan
        // identically), so furnish the room with asymmetric structure.
        let mut g = walled_grid(15);
        for c in 4..9 {
            g.set_occupied(5, c, true);
        }
        for r in 9..13 {
            g.set_occupied(r, 9, true);
        }
        g.set_occupied(2, 11, true);
        let mut cfg = config(800);
        cfg.beam_decimation = 3;
        // Process noise is what lets resampled duplicates refine toward the
        // truth; without it the filter is frozen at its best initial sample.
        cfg.motion_noise = MotionNoise {
            sigma_v: 0.1,
            sigma_omega: 0.15,
            sigma_theta: 0.02,
        };
        let pool = WorkerPool::new(4);
        let true_pose = Pose::new(4.5, 10.5, 0.0);
        let mut set = init_particles(&g, &cfg, 42).unwrap();
        // Stationary robot, but the command window is open: noise applies
        // over the duration while the commanded velocities stay zero.
        let hold = MoveCommand {
            v_mps: 0.0,
            omega_rps: 0.0,
            duration_ms: 1000.0,
            sequence: 0,
        };
        let mut first_err = None;
        let mut last_err = 0.0;
        for round in 0..10u64 {
            let mut rng = derive_stream(42, "mcl.test.scan", &[round]);
            let scan = scan_at(&g, &true_pose, 36, 0.0, 12.0, &mut rng).unwrap();
            let est = mcl_step(&mut set, &hold, &scan, &g, &cfg, 42, &pool).unwrap();
            last_err = est.distance_to(&true_pose);
            first_err.get_or_insert(last_err);
        }
        let first = first_err.unwrap();
        assert!(
            last_err <= first,
            "error should contract: first={first} last={last_err}"
        );
        assert!(last_err < 1.0, "converged estimate off by {last_err} m");
    }
}
