//! Clip format, synthetic motion generation, and batching.

pub mod clip;
pub mod manifest;
pub mod synth;

pub use clip::{denormalize_root, normalize_root, ClipError, ClipKind, PoseClip};
pub use manifest::{
    assemble_batch, batches_of, epoch_windows, window_count, Batch, ClipPair, Dataset,
    DatasetManifest, ManifestEntry, Split, Window,
};
pub use synth::{JointMotion, PinholeCamera, SyntheticRig};
