//! Dataset manifest, in-memory dataset, and the deterministic batch stream.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::clip::{ClipError, ClipKind, PoseClip};
use crate::data::synth::SyntheticRig;
use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub frames: usize,
    pub joints: usize,
    pub path_2d: String,
    pub path_3d: String,
    pub crc_2d: u32,
    pub crc_3d: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    /// Generator settings the clips were produced from, kept for
    /// reproducibility and reprojection.
    pub rig: SyntheticRig,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        let mut seen = std::collections::HashSet::new();
        for entry in &manifest.entries {
            if !seen.insert(entry.id.clone()) {
                return Err(ClipError::Invalid(format!("duplicate clip id {}", entry.id)).into());
            }
        }
        Ok(manifest)
    }
}

/// One clip pair with both streams resident in memory.
#[derive(Debug, Clone)]
pub struct ClipPair {
    pub id: String,
    pub input_2d: PoseClip,
    pub target_3d: PoseClip,
}

/// All clips of one split, loaded and checksum-verified.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub joints: usize,
    pub pairs: Vec<ClipPair>,
}

impl Dataset {
    pub fn load(manifest: &DatasetManifest, dir: impl AsRef<Path>, split: Split) -> Result<Self> {
        let dir = dir.as_ref();
        let mut pairs = Vec::new();
        let mut joints = None;
        for entry in manifest.entries.iter().filter(|e| e.split == split) {
            let input_2d = PoseClip::load(dir.join(&entry.path_2d))?;
            let target_3d = PoseClip::load(dir.join(&entry.path_3d))?;
            if input_2d.payload_crc32() != entry.crc_2d {
                return Err(ClipError::ChecksumMismatch {
                    stored: entry.crc_2d,
                    computed: input_2d.payload_crc32(),
                }
                .into());
            }
            if target_3d.payload_crc32() != entry.crc_3d {
                return Err(ClipError::ChecksumMismatch {
                    stored: entry.crc_3d,
                    computed: target_3d.payload_crc32(),
                }
                .into());
            }
            if input_2d.kind != ClipKind::Pose2d || target_3d.kind != ClipKind::Pose3d {
                return Err(ClipError::Invalid(format!(
                    "entry {} pairs the wrong clip kinds",
                    entry.id
                ))
                .into());
            }
            if input_2d.frames != target_3d.frames || input_2d.joints != target_3d.joints {
                return Err(ClipError::Invalid(format!(
                    "entry {} has mismatched 2D/3D dimensions",
                    entry.id
                ))
                .into());
            }
            match joints {
                None => joints = Some(input_2d.joints),
                Some(j) if j != input_2d.joints => {
                    return Err(ClipError::Invalid("clips disagree on joint count".into()).into())
                }
                _ => {}
            }
            pairs.push(ClipPair { id: entry.id.clone(), input_2d, target_3d });
        }
        if pairs.is_empty() {
            return Err(ClipError::Invalid(format!("split {split:?} is empty")).into());
        }
        Ok(Dataset { joints: joints.unwrap(), pairs })
    }

    pub fn from_pairs(pairs: Vec<ClipPair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(ClipError::Invalid("dataset needs at least one clip".into()).into());
        }
        let joints = pairs[0].input_2d.joints;
        Ok(Dataset { joints, pairs })
    }
}

/// One training window: `window` frames of one clip starting at `start`.
/// Frames past the clip end are edge-replicated and masked out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub clip: usize,
    pub start: usize,
}

/// Number of stride-`window` windows covering a clip of `frames` frames.
pub fn window_count(frames: usize, window: usize) -> usize {
    frames.div_ceil(window)
}

/// Every window of the dataset, shuffled deterministically for the given
/// `(seed, epoch)` pair. Each window appears exactly once per epoch.
pub fn epoch_windows(dataset: &Dataset, window: usize, seed: u64, epoch: usize) -> Vec<Window> {
    let mut windows = Vec::new();
    for (clip, pair) in dataset.pairs.iter().enumerate() {
        for w in 0..window_count(pair.input_2d.frames, window) {
            windows.push(Window { clip, start: w * window });
        }
    }
    let mut rng = Prng::derive(seed, 0x5AFE_0000 ^ epoch as u64);
    rng.shuffle(&mut windows);
    windows
}

/// A batch assembled for the model: inputs, targets, and a per-frame
/// validity mask (0 on edge-replicated padding).
#[derive(Debug, Clone)]
pub struct Batch<T> {
    /// `(B, T, J, 3)` 2D keypoints with confidence.
    pub input_2d: Tensor<T>,
    /// `(B, T, J, 3)` root-relative 3D targets in millimeters.
    pub target_3d: Tensor<T>,
    /// `(B, T)` validity flags.
    pub frame_mask: Tensor<T>,
}

pub fn assemble_batch<T: Scalar>(dataset: &Dataset, windows: &[Window], window: usize) -> Batch<T> {
    let b = windows.len();
    let j = dataset.joints;
    let mut input = Vec::with_capacity(b * window * j * 3);
    let mut target = Vec::with_capacity(b * window * j * 3);
    let mut mask = Vec::with_capacity(b * window);
    for w in windows {
        let pair = &dataset.pairs[w.clip];
        let frames = pair.input_2d.frames;
        for t in 0..window {
            let src_t = w.start + t;
            let (clamped, valid) = if src_t < frames { (src_t, T::ONE) } else { (frames - 1, T::ZERO) };
            mask.push(valid);
            for joint in 0..j {
                for c in pair.input_2d.get(clamped, joint) {
                    input.push(T::from_f64(c as f64));
                }
                for c in pair.target_3d.get(clamped, joint) {
                    target.push(T::from_f64(c as f64));
                }
            }
        }
    }
    Batch {
        input_2d: Tensor::new(vec![b, window, j, 3], input).expect("batch input shape"),
        target_3d: Tensor::new(vec![b, window, j, 3], target).expect("batch target shape"),
        frame_mask: Tensor::new(vec![b, window], mask).expect("batch mask shape"),
    }
}

/// Splits an epoch's windows into batches; the final batch may be short.
pub fn batches_of(windows: &[Window], batch_size: usize) -> impl Iterator<Item = &[Window]> {
    windows.chunks(batch_size.max(1))
}
