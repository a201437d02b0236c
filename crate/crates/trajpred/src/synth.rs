//! Synthetic constant-velocity crowds, for smoke-testing the pipeline
//! without annotation files and for learnability checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{PedId, SequenceSample, TrackPoint, SEQ_LEN};

/// Generation settings. Scenes are disjoint frame ranges; within a scene the
/// pedestrians start near each other and walk straight at constant speed,
/// with isotropic Gaussian noise added to every annotated position.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Pedestrians per scene, cycled over scenes.
    pub scene_sizes: Vec<usize>,
    pub n_scenes: usize,
    /// Annotated frames per track (every track spans its whole scene).
    pub track_len: usize,
    /// Position noise sigma, in dataset units.
    pub noise_sigma: f64,
    /// Walking speed range, units per second.
    pub speed: (f64, f64),
    /// Seconds between consecutive annotated frames (frame ids advance by 1).
    pub frame_period: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scene_sizes: vec![2, 3],
            n_scenes: 20,
            // Divisible by the default stride, so windowing tiles scenes
            // exactly (two windows per scene at stride 10).
            track_len: 30,
            noise_sigma: 0.01,
            speed: (0.4, 1.0),
            frame_period: 0.4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn total_pedestrians(&self) -> usize {
        (0..self.n_scenes)
            .map(|s| self.scene_sizes[s % self.scene_sizes.len()])
            .sum()
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-12);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Generates the annotation rows, sorted by (frame, ped).
pub fn constant_velocity_tracks(cfg: &SynthConfig) -> Vec<TrackPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut points = Vec::new();
    for scene in 0..cfg.n_scenes {
        let n_peds = cfg.scene_sizes[scene % cfg.scene_sizes.len()];
        let frame_base = (scene * (cfg.track_len + 80)) as i64;
        let scene_origin = [
            rng.gen_range(-30.0..30.0),
            rng.gen_range(-30.0..30.0),
        ];
        for p in 0..n_peds {
            let ped = (scene * 100 + p + 1) as i64;
            let start = [
                scene_origin[0] + rng.gen_range(-1.2..1.2),
                scene_origin[1] + rng.gen_range(-1.2..1.2),
            ];
            let speed = rng.gen_range(cfg.speed.0..cfg.speed.1);
            let heading = rng.gen_range(0.0..std::f64::consts::TAU);
            let vel = [speed * heading.cos(), speed * heading.sin()];
            for t in 0..cfg.track_len {
                let time = t as f64 * cfg.frame_period;
                points.push(TrackPoint {
                    frame: frame_base + t as i64,
                    ped,
                    x: start[0] + vel[0] * time + cfg.noise_sigma * gaussian(&mut rng),
                    y: start[1] + vel[1] * time + cfg.noise_sigma * gaussian(&mut rng),
                });
            }
        }
    }
    points.sort_by_key(|p| (p.frame, p.ped));
    points
}

/// One noise-free window of up to four straight-line walkers with fixed
/// offsets and consecutive frame ids, used by gradient checks. The offsets
/// keep everyone inside each other's interaction maps and away from grid
/// cell boundaries.
pub fn straight_crossing_sample(n_peds: usize) -> SequenceSample {
    assert!((1..=4).contains(&n_peds));
    let dt = 0.4;
    let starts: [[f64; 2]; 4] = [[0.0, 0.0], [0.55, 0.35], [-0.45, 0.85], [1.15, -0.65]];
    let vels: [[f64; 2]; 4] = [[0.28, 0.12], [-0.22, 0.18], [0.08, -0.26], [-0.12, -0.08]];
    let peds: Vec<PedId> = (1..=n_peds as i64).collect();
    let frames: Vec<i64> = (0..SEQ_LEN as i64).collect();
    let mut positions = Vec::new();
    let mut velocities = Vec::new();
    for p in 0..n_peds {
        let mut pos = Vec::new();
        let mut vel = Vec::new();
        for t in 0..SEQ_LEN {
            pos.push([
                starts[p][0] + vels[p][0] * dt * t as f64,
                starts[p][1] + vels[p][1] * dt * t as f64,
            ]);
            vel.push(if t == 0 { [0.0, 0.0] } else { vels[p] });
        }
        positions.push(pos);
        velocities.push(vel);
    }
    SequenceSample {
        frames,
        peds,
        positions,
        velocities,
    }
}
