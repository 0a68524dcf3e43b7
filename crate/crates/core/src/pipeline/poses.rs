//! Camera layouts: an inside-out ring of source cameras, a trajectory of
//! novel cameras interpolated between neighbors, and held-out test cameras.

use std::f64::consts::TAU;

use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::PoseConfig;
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSet {
    pub sources: Vec<Pose>,
    pub novel: Vec<Pose>,
    pub test: Vec<Pose>,
}

fn jitter_vec(rng: &mut ChaCha8Rng, amount: f64) -> Vec3 {
    if amount == 0.0 {
        return Vec3::zeros();
    }
    Vec3::new(rng.random_range(-amount..amount), rng.random_range(-amount..amount), rng.random_range(-amount..amount))
}

/// Source camera `i`: on the ring, looking radially outward.
fn ring_pose(cfg: &PoseConfig, i: usize, rng: &mut ChaCha8Rng) -> Result<Pose> {
    let yj = cfg.yaw_jitter_deg.to_radians();
    let yaw = TAU * i as f64 / cfg.sources as f64 + if yj > 0.0 { rng.random_range(-yj..yj) } else { 0.0 };
    let out = Vec3::new(yaw.cos(), 0.0, yaw.sin());
    let eye = out * cfg.ring_radius + jitter_vec(rng, cfg.jitter);
    Pose::look_at(eye, eye + out, Vec3::y())
}

/// Pose at trajectory parameter `s ∈ [0, N)`: interpolated between source
/// `floor(s)` and its successor, then perturbed.
fn along_ring(sources: &[Pose], s: f64, lift: f64, jitter: f64, rot_jitter: f64, rng: &mut ChaCha8Rng) -> Pose {
    let n = sources.len();
    let g = (s.floor() as usize) % n;
    let t = s - s.floor();
    let (a, b) = (&sources[g], &sources[(g + 1) % n]);
    let q = a.quaternion().slerp(&b.quaternion(), t);
    let eye = a.translation * (1.0 - t) + b.translation * t + Vec3::new(0.0, lift, 0.0) + jitter_vec(rng, jitter);
    let wobble = UnitQuaternion::from_scaled_axis(jitter_vec(rng, rot_jitter));
    Pose::from_quaternion(q * wobble, eye).orthonormalized()
}

pub fn generate_poses(cfg: &PoseConfig, seed: u64) -> Result<PoseSet> {
    if cfg.sources < 2 {
        return Err(Error::Config("need at least two source poses".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sources = (0..cfg.sources).map(|i| ring_pose(cfg, i, &mut rng)).collect::<Result<Vec<_>>>()?;
    let n = cfg.sources as f64;
    let rot = (cfg.yaw_jitter_deg * 0.5).to_radians();
    let novel = (0..cfg.novel)
        .map(|j| along_ring(&sources, (j as f64 + 0.5) * n / cfg.novel as f64, 0.0, cfg.jitter, rot, &mut rng))
        .collect();
    let test = (0..cfg.test)
        .map(|k| {
            let lift = if k % 2 == 0 { 0.08 } else { -0.08 };
            along_ring(&sources, (k as f64 + 0.25) * n / cfg.test as f64, lift, cfg.jitter, rot, &mut rng)
        })
        .collect();
    let set = PoseSet { sources, novel, test };
    set.check_disjoint()?;
    Ok(set)
}

impl PoseSet {
    fn check_disjoint(&self) -> Result<()> {
        let same = |a: &Pose, b: &Pose| (a.translation - b.translation).norm() < 1e-9 && (a.rotation - b.rotation).norm() < 1e-9;
        for t in self.novel.iter().chain(&self.test) {
            if self.sources.iter().any(|s| same(s, t)) {
                return Err(Error::Config("a novel or test pose coincides with a source pose".into()));
            }
        }
        for t in &self.test {
            if self.novel.iter().any(|s| same(s, t)) {
                return Err(Error::Config("a test pose coincides with a novel pose".into()));
            }
        }
        Ok(())
    }
}
