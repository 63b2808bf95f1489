//! Synthetic kinematic-chain motion with camera projection.
//!
//! Gives the trainer paired 2D/3D ground truth at desk scale: sinusoidal
//! joint-angle trajectories drive forward kinematics over a 17-joint
//! skeleton, a pinhole camera projects to normalized 2D keypoints, and
//! optional Gaussian noise models detector error. The root stays pinned at
//! the origin, so stored root-relative 3D coordinates reproject exactly onto
//! the stored 2D with zero noise.

use serde::{Deserialize, Serialize};

use crate::data::clip::{ClipError, ClipKind, PoseClip};
use crate::error::Result;
use crate::rng::Prng;

/// Sinusoidal joint-angle trajectory about a fixed axis:
/// `theta(t) = amplitude * sin(2*pi*frequency*t/fps + phase)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointMotion {
    pub axis: [f32; 3],
    pub amplitude_rad: f32,
    pub frequency_hz: f32,
    pub phase_rad: f32,
}

impl JointMotion {
    pub fn still() -> Self {
        JointMotion { axis: [1.0, 0.0, 0.0], amplitude_rad: 0.0, frequency_hz: 0.0, phase_rad: 0.0 }
    }
}

/// Pinhole camera on the -z axis looking at the subject.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinholeCamera {
    pub focal_px: f32,
    /// Image half-extent in pixels; normalizes projections to [-1, 1].
    pub half_extent_px: f32,
    /// Subject distance in millimeters.
    pub distance_mm: f32,
}

impl PinholeCamera {
    /// Projects a root-relative 3D point (mm) to normalized 2D coordinates.
    pub fn project(&self, p: [f32; 3]) -> [f32; 2] {
        let depth = p[2] as f64 + self.distance_mm as f64;
        let u = self.focal_px as f64 * p[0] as f64 / depth / self.half_extent_px as f64;
        let v = self.focal_px as f64 * p[1] as f64 / depth / self.half_extent_px as f64;
        [u as f32, v as f32]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticRig {
    /// Parent joint per joint; entry 0 is the root and must be 0. Parents
    /// must precede children.
    pub parents: Vec<usize>,
    /// Unit direction from the parent in the rest pose.
    pub rest_directions: Vec<[f32; 3]>,
    /// Segment lengths in millimeters.
    pub segment_lengths_mm: Vec<f32>,
    pub motions: Vec<JointMotion>,
    pub camera: PinholeCamera,
    /// Gaussian keypoint noise sigma in normalized 2D units.
    pub noise_2d: f32,
    /// Confidence degradation level in [0, 1]; 0 means confidence 1.
    pub confidence_noise: f32,
    pub fps: f32,
    pub seed: u64,
}

impl SyntheticRig {
    /// 17-joint skeleton matching the common indoor-capture topology:
    /// 0 hip, 1-3 right leg, 4-6 left leg, 7-10 spine/neck/head,
    /// 11-13 left arm, 14-16 right arm.
    pub fn human17(seed: u64) -> Self {
        let parents = vec![0, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15];
        let rest_directions = vec![
            [0.0, 0.0, 0.0],  // root
            [-1.0, 0.0, 0.0], // right hip
            [0.0, -1.0, 0.0], // right knee
            [0.0, -1.0, 0.0], // right ankle
            [1.0, 0.0, 0.0],  // left hip
            [0.0, -1.0, 0.0], // left knee
            [0.0, -1.0, 0.0], // left ankle
            [0.0, 1.0, 0.0],  // spine
            [0.0, 1.0, 0.0],  // thorax
            [0.0, 1.0, 0.0],  // neck
            [0.0, 1.0, 0.0],  // head
            [1.0, 0.0, 0.0],  // left shoulder
            [0.0, -1.0, 0.0], // left elbow
            [0.0, -1.0, 0.0], // left wrist
            [-1.0, 0.0, 0.0], // right shoulder
            [0.0, -1.0, 0.0], // right elbow
            [0.0, -1.0, 0.0], // right wrist
        ];
        let segment_lengths_mm = vec![
            0.0, 130.0, 440.0, 440.0, 130.0, 440.0, 440.0, 240.0, 250.0, 120.0, 120.0, 180.0,
            280.0, 250.0, 180.0, 280.0, 250.0,
        ];
        let x = [1.0, 0.0, 0.0];
        let z = [0.0, 0.0, 1.0];
        let swing = |axis: [f32; 3], amp: f32, freq: f32, phase: f32| JointMotion {
            axis,
            amplitude_rad: amp,
            frequency_hz: freq,
            phase_rad: phase,
        };
        let motions = vec![
            JointMotion::still(),              // root
            swing(x, 0.5, 0.8, 0.0),           // right hip
            swing(x, 0.7, 0.8, 0.9),           // right knee
            swing(x, 0.3, 1.6, 0.3),           // right ankle
            swing(x, 0.5, 0.8, std::f32::consts::PI), // left hip
            swing(x, 0.7, 0.8, 0.9 + std::f32::consts::PI), // left knee
            swing(x, 0.3, 1.6, 0.3),           // left ankle
            swing(z, 0.15, 0.4, 0.0),          // spine
            swing(z, 0.1, 0.4, 0.5),           // thorax
            swing(x, 0.1, 0.8, 0.0),           // neck
            swing(x, 0.08, 0.8, 0.4),          // head
            swing(x, 0.6, 0.8, std::f32::consts::PI), // left shoulder
            swing(x, 0.5, 0.8, 1.2),           // left elbow
            swing(x, 0.2, 1.6, 0.0),           // left wrist
            swing(x, 0.6, 0.8, 0.0),           // right shoulder
            swing(x, 0.5, 0.8, 1.2 + std::f32::consts::PI), // right elbow
            swing(x, 0.2, 1.6, 0.0),           // right wrist
        ];
        SyntheticRig {
            parents,
            rest_directions,
            segment_lengths_mm,
            motions,
            camera: PinholeCamera { focal_px: 1100.0, half_extent_px: 500.0, distance_mm: 4200.0 },
            noise_2d: 0.0,
            confidence_noise: 0.0,
            fps: 50.0,
            seed,
        }
    }

    /// A generic rig with the requested joint count: joint 0 is the root and
    /// every joint hangs off the previous one. Used when a caller asks for a
    /// joint count other than 17.
    pub fn chain(joints: usize, seed: u64) -> Result<Self> {
        if joints < 2 {
            return Err(ClipError::Invalid(format!("joints must be >= 2, got {joints}")).into());
        }
        let mut rig = Self::human17(seed);
        if joints == 17 {
            return Ok(rig);
        }
        rig.parents = (0..joints).map(|j| j.saturating_sub(1)).collect();
        rig.rest_directions = (0..joints)
            .map(|j| if j == 0 { [0.0, 0.0, 0.0] } else if j % 2 == 0 { [0.3, -1.0, 0.1] } else { [-0.2, -1.0, 0.0] })
            .collect();
        rig.segment_lengths_mm = (0..joints)
            .map(|j| if j == 0 { 0.0 } else { 180.0 + 40.0 * (j % 4) as f32 })
            .collect();
        rig.motions = (0..joints)
            .map(|j| {
                if j == 0 {
                    JointMotion::still()
                } else {
                    JointMotion {
                        axis: [1.0, 0.0, 0.0],
                        amplitude_rad: 0.4 + 0.05 * (j % 5) as f32,
                        frequency_hz: 0.6 + 0.2 * (j % 3) as f32,
                        phase_rad: 0.7 * j as f32,
                    }
                }
            })
            .collect();
        Ok(rig)
    }

    pub fn joints(&self) -> usize {
        self.parents.len()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.parents.len();
        if j < 2 {
            return Err(ClipError::Invalid("rig needs at least 2 joints".into()).into());
        }
        if self.parents[0] != 0 {
            return Err(ClipError::Invalid("joint 0 must be the root".into()).into());
        }
        for (idx, &p) in self.parents.iter().enumerate().skip(1) {
            if p >= idx {
                return Err(ClipError::Invalid(format!(
                    "parent {p} of joint {idx} does not precede it; parents must form a tree rooted at 0"
                ))
                .into());
            }
        }
        if self.rest_directions.len() != j
            || self.segment_lengths_mm.len() != j
            || self.motions.len() != j
        {
            return Err(ClipError::Invalid("rig arrays must all have one entry per joint".into()).into());
        }
        if self.segment_lengths_mm.iter().skip(1).any(|&l| l <= 0.0) {
            return Err(ClipError::Invalid("segment lengths must be positive".into()).into());
        }
        if self.motions.iter().any(|m| m.frequency_hz < 0.0) {
            return Err(ClipError::Invalid("motion frequencies must be >= 0".into()).into());
        }
        Ok(())
    }

    /// One paired (2D, 3D) clip. Deterministic in `(self.seed, clip_index)`.
    pub fn generate_pair(&self, clip_index: u64, frames: usize) -> Result<(PoseClip, PoseClip)> {
        self.validate()?;
        let joints = self.joints();
        let mut rng = Prng::derive(self.seed, clip_index);
        // Per-clip variation so clips are distinct motions of the same rig.
        let phase_jitter: Vec<f64> = (0..joints).map(|_| rng.uniform(0.0, std::f64::consts::TAU)).collect();
        let amp_scale: Vec<f64> = (0..joints).map(|_| rng.uniform(0.7, 1.3)).collect();

        let mut values_3d = Vec::with_capacity(frames * joints * 3);
        for t in 0..frames {
            let time = t as f64 / self.fps as f64;
            let pose = self.pose_at(time, &phase_jitter, &amp_scale);
            for p in &pose {
                values_3d.extend_from_slice(p);
            }
        }
        let clip_3d = PoseClip::new(ClipKind::Pose3d, frames, joints, self.fps, values_3d)?;

        // Project from the *stored* f32 values so that reprojection of the
        // saved 3D clip reproduces the saved 2D clip exactly at zero noise.
        let mut values_2d = Vec::with_capacity(frames * joints * 3);
        for t in 0..frames {
            for j in 0..joints {
                let [u, v] = self.camera.project(clip_3d.get(t, j));
                let (u, v) = if self.noise_2d > 0.0 {
                    (
                        u + (self.noise_2d as f64 * rng.normal()) as f32,
                        v + (self.noise_2d as f64 * rng.normal()) as f32,
                    )
                } else {
                    (u, v)
                };
                let conf = if self.confidence_noise > 0.0 {
                    (1.0 - self.confidence_noise as f64 * rng.next_f64()).clamp(0.0, 1.0) as f32
                } else {
                    1.0
                };
                values_2d.extend_from_slice(&[u, v, conf]);
            }
        }
        let clip_2d = PoseClip::new(ClipKind::Pose2d, frames, joints, self.fps, values_2d)?;
        Ok((clip_2d, clip_3d))
    }

    /// Joint positions (mm, root at origin) at one time instant.
    fn pose_at(&self, time: f64, phase_jitter: &[f64], amp_scale: &[f64]) -> Vec<[f32; 3]> {
        let joints = self.joints();
        let mut global_rot = vec![[[0.0f64; 3]; 3]; joints];
        let mut pos = vec![[0.0f64; 3]; joints];
        global_rot[0] = identity3();
        for j in 1..joints {
            let m = &self.motions[j];
            let theta = amp_scale[j]
                * m.amplitude_rad as f64
                * (std::f64::consts::TAU * m.frequency_hz as f64 * time
                    + m.phase_rad as f64
                    + phase_jitter[j])
                    .sin();
            let local = rotation_about(normalize3([
                m.axis[0] as f64,
                m.axis[1] as f64,
                m.axis[2] as f64,
            ]), theta);
            let parent = self.parents[j];
            global_rot[j] = matmul3(&global_rot[parent], &local);
            let dir = [
                self.rest_directions[j][0] as f64,
                self.rest_directions[j][1] as f64,
                self.rest_directions[j][2] as f64,
            ];
            let offset = mul3(&global_rot[j], normalize3(dir));
            let len = self.segment_lengths_mm[j] as f64;
            for c in 0..3 {
                pos[j][c] = pos[parent][c] + len * offset[c];
            }
        }
        pos.iter().map(|p| [p[0] as f32, p[1] as f32, p[2] as f32]).collect()
    }
}

fn identity3() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

fn normalize3(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n == 0.0 {
        [0.0, 0.0, 0.0]
    } else {
        [v[0] / n, v[1] / n, v[2] / n]
    }
}

/// Rodrigues rotation about a unit axis.
fn rotation_about(axis: [f64; 3], theta: f64) -> [[f64; 3]; 3] {
    let (s, c) = theta.sin_cos();
    let t = 1.0 - c;
    let [x, y, z] = axis;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn mul3(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}
