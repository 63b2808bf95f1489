//! Pose clip container and its binary file format.
//!
//! Layout of a `.pseq` file, everything little-endian:
//!
//! ```text
//! magic   4 bytes  "PSEQ"
//! version u32      1
//! kind    u8       0 = 2D keypoints + confidence, 1 = 3D joints (mm)
//! frames  u32
//! joints  u32
//! fps     f32
//! payload frames * joints * 3 f32 values, row-major (t, j, channel)
//! crc32   u32      CRC32 of the payload bytes
//! ```

use std::path::Path;

use thiserror::Error;

use crate::error::{Error as CrateError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CLIP_MAGIC: [u8; 4] = *b"PSEQ";
pub const CLIP_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ClipError {
    #[error("bad magic {found:?}, expected \"PSEQ\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported clip version {found}, expected {CLIP_VERSION}")]
    UnsupportedVersion { found: u32 },

    #[error("truncated clip file: needed {needed} bytes, got {available}")]
    Truncated { needed: usize, available: usize },

    #[error("payload checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("invalid clip data: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipKind {
    /// (u, v) in [-1, 1] plus confidence in [0, 1].
    Pose2d,
    /// (x, y, z) in millimeters, root-relative.
    Pose3d,
}

impl ClipKind {
    fn to_byte(self) -> u8 {
        match self {
            ClipKind::Pose2d => 0,
            ClipKind::Pose3d => 1,
        }
    }

    fn from_byte(b: u8) -> std::result::Result<Self, ClipError> {
        match b {
            0 => Ok(ClipKind::Pose2d),
            1 => Ok(ClipKind::Pose3d),
            other => Err(ClipError::Invalid(format!("unknown clip kind byte {other}"))),
        }
    }
}

/// A `frames x joints x 3` sequence of 2D keypoints+confidence or 3D joints.
/// Joint 0 is the root (hip).
#[derive(Debug, Clone, PartialEq)]
pub struct PoseClip {
    pub kind: ClipKind,
    pub frames: usize,
    pub joints: usize,
    pub fps: f32,
    values: Vec<f32>,
}

impl PoseClip {
    pub fn new(
        kind: ClipKind,
        frames: usize,
        joints: usize,
        fps: f32,
        values: Vec<f32>,
    ) -> Result<Self> {
        if frames < 1 {
            return Err(ClipError::Invalid("frames must be >= 1".into()).into());
        }
        if joints < 2 {
            return Err(ClipError::Invalid(format!("joints must be >= 2, got {joints}")).into());
        }
        if values.len() != frames * joints * 3 {
            return Err(ClipError::Invalid(format!(
                "value count {} does not match {frames} x {joints} x 3",
                values.len()
            ))
            .into());
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ClipError::Invalid("non-finite value in clip".into()).into());
        }
        if kind == ClipKind::Pose2d {
            for t in 0..frames {
                for j in 0..joints {
                    let conf = values[(t * joints + j) * 3 + 2];
                    if !(0.0..=1.0).contains(&conf) {
                        return Err(ClipError::Invalid(format!(
                            "confidence {conf} at frame {t} joint {j} outside [0, 1]"
                        ))
                        .into());
                    }
                }
            }
        }
        Ok(PoseClip { kind, frames, joints, fps, values })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, t: usize, j: usize) -> [f32; 3] {
        let base = (t * self.joints + j) * 3;
        [self.values[base], self.values[base + 1], self.values[base + 2]]
    }

    /// Values as a `(frames, joints, 3)` tensor in the requested precision.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(
            vec![self.frames, self.joints, 3],
            self.values.iter().map(|&v| T::from_f64(v as f64)).collect(),
        )
        .expect("clip invariant guarantees element count")
    }

    pub fn payload_crc32(&self) -> u32 {
        let mut hasher = crc32fast::Hasher::new();
        for v in &self.values {
            hasher.update(&v.to_le_bytes());
        }
        hasher.finalize()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(21 + self.values.len() * 4 + 4);
        out.extend_from_slice(&CLIP_MAGIC);
        out.extend_from_slice(&CLIP_VERSION.to_le_bytes());
        out.push(self.kind.to_byte());
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.joints as u32).to_le_bytes());
        out.extend_from_slice(&self.fps.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.payload_crc32().to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        const HEADER: usize = 4 + 4 + 1 + 4 + 4 + 4;
        if bytes.len() < HEADER {
            return Err(ClipError::Truncated { needed: HEADER, available: bytes.len() }.into());
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != CLIP_MAGIC {
            return Err(ClipError::BadMagic { found: magic }.into());
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CLIP_VERSION {
            return Err(ClipError::UnsupportedVersion { found: version }.into());
        }
        let kind = ClipKind::from_byte(bytes[8])?;
        let frames = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
        let joints = u32::from_le_bytes(bytes[13..17].try_into().unwrap()) as usize;
        let fps = f32::from_le_bytes(bytes[17..21].try_into().unwrap());
        let count = frames
            .checked_mul(joints)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| ClipError::Invalid("dimension overflow".into()))?;
        let needed = HEADER + count * 4 + 4;
        if bytes.len() < needed {
            return Err(ClipError::Truncated { needed, available: bytes.len() }.into());
        }
        let payload = &bytes[HEADER..HEADER + count * 4];
        let stored = u32::from_le_bytes(
            bytes[HEADER + count * 4..HEADER + count * 4 + 4].try_into().unwrap(),
        );
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(ClipError::ChecksumMismatch { stored, computed }.into());
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        PoseClip::new(kind, frames, joints, fps, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| CrateError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| CrateError::io(path, e))?;
        Self::decode(&bytes)
    }
}

/// Shifts a 3D clip so the root joint sits exactly at the origin in every
/// frame; returns the removed root trajectory for [`denormalize_root`].
pub fn normalize_root(clip: &PoseClip) -> Result<(PoseClip, Vec<[f32; 3]>)> {
    if clip.kind != ClipKind::Pose3d {
        return Err(ClipError::Invalid("normalize_root requires a 3D clip".into()).into());
    }
    let mut values = clip.values.clone();
    let mut roots = Vec::with_capacity(clip.frames);
    for t in 0..clip.frames {
        let root = clip.get(t, 0);
        roots.push(root);
        for j in 0..clip.joints {
            let base = (t * clip.joints + j) * 3;
            for c in 0..3 {
                values[base + c] -= root[c];
            }
        }
    }
    let normalized = PoseClip::new(clip.kind, clip.frames, clip.joints, clip.fps, values)?;
    Ok((normalized, roots))
}

/// Inverse of [`normalize_root`].
pub fn denormalize_root(clip: &PoseClip, roots: &[[f32; 3]]) -> Result<PoseClip> {
    if clip.kind != ClipKind::Pose3d {
        return Err(ClipError::Invalid("denormalize_root requires a 3D clip".into()).into());
    }
    if roots.len() != clip.frames {
        return Err(ClipError::Invalid(format!(
            "root trajectory length {} does not match {} frames",
            roots.len(),
            clip.frames
        ))
        .into());
    }
    let mut values = clip.values.clone();
    for t in 0..clip.frames {
        for j in 0..clip.joints {
            let base = (t * clip.joints + j) * 3;
            for c in 0..3 {
                values[base + c] += roots[t][c];
            }
        }
    }
    PoseClip::new(clip.kind, clip.frames, clip.joints, clip.fps, values)
}
