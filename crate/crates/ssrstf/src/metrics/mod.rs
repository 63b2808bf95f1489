//! Evaluation protocols: root-aligned MPJPE (protocol 1), Procrustes-aligned
//! P-MPJPE (protocol 2), PCK within a distance threshold, AUC over a 0-150 mm
//! threshold sweep, and the per-pose error histogram.

pub mod procrustes;

use serde::Serialize;

use crate::data::clip::{ClipError, ClipKind, PoseClip};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use procrustes::{procrustes_align, svd3, Alignment, Svd3};

/// PCK threshold of the standard protocol, in millimeters.
pub const PCK_THRESHOLD_MM: f64 = 150.0;
/// AUC sweep: 0, 5, ..., 150 mm (31 samples).
pub const AUC_STEP_MM: f64 = 5.0;
pub const AUC_SAMPLES: usize = 31;

/// How predictions are aligned to ground truth before measuring error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignmentMode {
    /// Subtract the root joint per frame.
    Root,
    /// Optimal per-frame similarity transform; `with_scale: false` restricts
    /// to a strict rigid transform.
    Procrustes { with_scale: bool },
}

/// A stack of 3D poses in millimeters, `(frames, joints, 3)`.
#[derive(Debug, Clone)]
pub struct PoseSet {
    pub frames: usize,
    pub joints: usize,
    data: Vec<f64>,
}

impl PoseSet {
    pub fn new(frames: usize, joints: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * joints * 3 {
            return Err(Error::invalid(
                "pose_set",
                format!("value count {} does not match {frames} x {joints} x 3", data.len()),
            ));
        }
        Ok(PoseSet { frames, joints, data })
    }

    pub fn from_clip(clip: &PoseClip) -> Result<Self> {
        if clip.kind != ClipKind::Pose3d {
            return Err(ClipError::Invalid("metrics need a 3D clip".into()).into());
        }
        Self::new(
            clip.frames,
            clip.joints,
            clip.values().iter().map(|&v| v as f64).collect(),
        )
    }

    /// Accepts `(T, J, 3)` or `(B, T, J, 3)` tensors; batches flatten into
    /// the frame axis.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let shape = t.shape();
        let (frames, joints) = match shape.len() {
            3 if shape[2] == 3 => (shape[0], shape[1]),
            4 if shape[3] == 3 => (shape[0] * shape[1], shape[2]),
            _ => {
                return Err(Error::invalid(
                    "pose_set",
                    format!("expected (T, J, 3) or (B, T, J, 3), got {shape:?}"),
                ))
            }
        };
        Self::new(frames, joints, t.data().iter().map(|v| v.to_f64()).collect())
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.joints * 3..(t + 1) * self.joints * 3]
    }

    /// Root-aligned copy: joint 0 subtracted per frame.
    pub fn root_aligned(&self) -> PoseSet {
        let mut data = self.data.clone();
        for t in 0..self.frames {
            let base = t * self.joints * 3;
            let root = [data[base], data[base + 1], data[base + 2]];
            for j in 0..self.joints {
                for c in 0..3 {
                    data[base + j * 3 + c] -= root[c];
                }
            }
        }
        PoseSet { frames: self.frames, joints: self.joints, data }
    }
}

fn check_pair(op: &'static str, pred: &PoseSet, gt: &PoseSet) -> Result<()> {
    if pred.frames != gt.frames || pred.joints != gt.joints {
        return Err(Error::ShapeMismatch {
            op,
            lhs: vec![pred.frames, pred.joints, 3],
            rhs: vec![gt.frames, gt.joints, 3],
        });
    }
    Ok(())
}

fn joint_distance(a: &[f64], b: &[f64]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Per-joint Euclidean errors after the requested alignment, flattened over
/// frames then joints. Also reports how many frames fell back to root
/// alignment inside the Procrustes path.
pub fn aligned_errors(
    pred: &PoseSet,
    gt: &PoseSet,
    mode: AlignmentMode,
) -> Result<(Vec<f64>, usize)> {
    check_pair("aligned_errors", pred, gt)?;
    let pred = pred.root_aligned();
    let gt = gt.root_aligned();
    let mut errors = Vec::with_capacity(pred.frames * pred.joints);
    let mut fallbacks = 0;
    for t in 0..pred.frames {
        let p = pred.frame(t);
        let g = gt.frame(t);
        match mode {
            AlignmentMode::Root => {
                for j in 0..pred.joints {
                    errors.push(joint_distance(&p[j * 3..j * 3 + 3], &g[j * 3..j * 3 + 3]));
                }
            }
            AlignmentMode::Procrustes { with_scale } => {
                let alignment = procrustes_align(p, g, with_scale);
                if alignment.root_fallback {
                    fallbacks += 1;
                }
                for j in 0..pred.joints {
                    errors.push(joint_distance(
                        &alignment.aligned[j * 3..j * 3 + 3],
                        &g[j * 3..j * 3 + 3],
                    ));
                }
            }
        }
    }
    Ok((errors, fallbacks))
}

/// Protocol 1: mean per-joint position error after root alignment.
pub fn mpjpe_mm(pred: &PoseSet, gt: &PoseSet) -> Result<f64> {
    let (errors, _) = aligned_errors(pred, gt, AlignmentMode::Root)?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

/// Protocol 2: mean per-joint error after per-frame Procrustes alignment.
pub fn p_mpjpe_mm(pred: &PoseSet, gt: &PoseSet, strict_rigid: bool) -> Result<f64> {
    let (errors, _) =
        aligned_errors(pred, gt, AlignmentMode::Procrustes { with_scale: !strict_rigid })?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

/// Percentage of root-aligned joint errors within `threshold_mm`.
pub fn pck_percent(pred: &PoseSet, gt: &PoseSet, threshold_mm: f64) -> Result<f64> {
    if threshold_mm <= 0.0 {
        return Err(Error::invalid("pck", "threshold must be > 0"));
    }
    let (errors, _) = aligned_errors(pred, gt, AlignmentMode::Root)?;
    Ok(pck_of_errors(&errors, threshold_mm))
}

fn pck_of_errors(errors: &[f64], threshold_mm: f64) -> f64 {
    let hits = errors.iter().filter(|&&e| e <= threshold_mm).count();
    100.0 * hits as f64 / errors.len() as f64
}

/// Mean PCK over thresholds 0, 5, ..., 150 mm.
pub fn auc_percent(pred: &PoseSet, gt: &PoseSet) -> Result<f64> {
    let (errors, _) = aligned_errors(pred, gt, AlignmentMode::Root)?;
    Ok(auc_of_errors(&errors))
}

fn auc_of_errors(errors: &[f64]) -> f64 {
    (0..AUC_SAMPLES)
        .map(|i| pck_of_errors(errors, i as f64 * AUC_STEP_MM))
        .sum::<f64>()
        / AUC_SAMPLES as f64
}

/// Distribution of per-pose (per-frame) MPJPE over fixed-width bins.
#[derive(Debug, Clone, Serialize)]
pub struct Histogram {
    pub bin_width_mm: f64,
    /// Proportion of poses in `[i * width, (i + 1) * width)`.
    pub proportions: Vec<f64>,
}

impl Histogram {
    pub fn bin_edges(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.proportions
            .iter()
            .enumerate()
            .map(move |(i, _)| (i as f64 * self.bin_width_mm, (i + 1) as f64 * self.bin_width_mm))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_start_mm,bin_end_mm,proportion\n");
        for ((lo, hi), p) in self.bin_edges().zip(&self.proportions) {
            out.push_str(&format!("{lo},{hi},{p}\n"));
        }
        out
    }
}

pub fn error_histogram(pred: &PoseSet, gt: &PoseSet, bin_width_mm: f64) -> Result<Histogram> {
    if bin_width_mm <= 0.0 {
        return Err(Error::invalid("error_histogram", "bin width must be > 0"));
    }
    check_pair("error_histogram", pred, gt)?;
    let (errors, _) = aligned_errors(pred, gt, AlignmentMode::Root)?;
    // Per-pose mean over joints.
    let per_pose: Vec<f64> = errors
        .chunks(pred.joints)
        .map(|row| row.iter().sum::<f64>() / row.len() as f64)
        .collect();
    let bins = per_pose
        .iter()
        .map(|&e| (e / bin_width_mm).floor() as usize)
        .max()
        .unwrap_or(0)
        + 1;
    let mut proportions = vec![0.0; bins];
    for &e in &per_pose {
        proportions[(e / bin_width_mm).floor() as usize] += 1.0;
    }
    for p in &mut proportions {
        *p /= per_pose.len() as f64;
    }
    Ok(Histogram { bin_width_mm, proportions })
}

/// Metrics of one clip.
#[derive(Debug, Clone, Serialize)]
pub struct ClipMetrics {
    pub id: String,
    pub frames: usize,
    pub mpjpe_mm: Option<f64>,
    pub p_mpjpe_mm: Option<f64>,
    pub pck_percent: Option<f64>,
    pub auc_percent: Option<f64>,
}

/// Aggregate evaluation over a set of clips.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub clips: usize,
    pub frames: usize,
    pub joints: usize,
    pub mpjpe_mm: Option<f64>,
    pub p_mpjpe_mm: Option<f64>,
    pub pck_threshold_mm: f64,
    pub pck_percent: Option<f64>,
    pub auc_percent: Option<f64>,
    pub strict_rigid: bool,
    /// Frames where Procrustes fell back to root alignment.
    pub procrustes_fallbacks: usize,
    pub per_clip: Vec<ClipMetrics>,
    pub histogram: Histogram,
}

/// Which protocols to evaluate.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub protocol_1: bool,
    pub protocol_2: bool,
    pub pck: bool,
    pub auc: bool,
    pub strict_rigid: bool,
    pub histogram_bin_mm: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            protocol_1: true,
            protocol_2: true,
            pck: true,
            auc: true,
            strict_rigid: false,
            histogram_bin_mm: 30.0,
        }
    }
}

/// Evaluates prediction/target pairs clip by clip and aggregates over all
/// joints of all frames.
pub fn evaluate(pairs: &[(String, PoseSet, PoseSet)], options: &EvalOptions) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("evaluate", "no clips to evaluate"));
    }
    let joints = pairs[0].1.joints;
    let mut root_errors = Vec::new();
    let mut proc_errors = Vec::new();
    let mut per_clip = Vec::new();
    let mut fallbacks = 0;
    let mut frames = 0;
    for (id, pred, gt) in pairs {
        check_pair("evaluate", pred, gt)?;
        frames += pred.frames;
        let (clip_root, _) = aligned_errors(pred, gt, AlignmentMode::Root)?;
        let (clip_proc, fb) = aligned_errors(
            pred,
            gt,
            AlignmentMode::Procrustes { with_scale: !options.strict_rigid },
        )?;
        fallbacks += fb;
        per_clip.push(ClipMetrics {
            id: id.clone(),
            frames: pred.frames,
            mpjpe_mm: options
                .protocol_1
                .then(|| clip_root.iter().sum::<f64>() / clip_root.len() as f64),
            p_mpjpe_mm: options
                .protocol_2
                .then(|| clip_proc.iter().sum::<f64>() / clip_proc.len() as f64),
            pck_percent: options.pck.then(|| pck_of_errors(&clip_root, PCK_THRESHOLD_MM)),
            auc_percent: options.auc.then(|| auc_of_errors(&clip_root)),
        });
        root_errors.extend(clip_root);
        proc_errors.extend(clip_proc);
    }
    // Histogram over per-pose errors of all clips.
    let per_pose: Vec<f64> = root_errors
        .chunks(joints)
        .map(|row| row.iter().sum::<f64>() / row.len() as f64)
        .collect();
    let bins = per_pose
        .iter()
        .map(|&e| (e / options.histogram_bin_mm).floor() as usize)
        .max()
        .unwrap_or(0)
        + 1;
    let mut proportions = vec![0.0; bins];
    for &e in &per_pose {
        proportions[(e / options.histogram_bin_mm).floor() as usize] += 1.0;
    }
    for p in &mut proportions {
        *p /= per_pose.len() as f64;
    }

    Ok(EvalReport {
        clips: pairs.len(),
        frames,
        joints,
        mpjpe_mm: options
            .protocol_1
            .then(|| root_errors.iter().sum::<f64>() / root_errors.len() as f64),
        p_mpjpe_mm: options
            .protocol_2
            .then(|| proc_errors.iter().sum::<f64>() / proc_errors.len() as f64),
        pck_threshold_mm: PCK_THRESHOLD_MM,
        pck_percent: options.pck.then(|| pck_of_errors(&root_errors, PCK_THRESHOLD_MM)),
        auc_percent: options.auc.then(|| auc_of_errors(&root_errors)),
        strict_rigid: options.strict_rigid,
        procrustes_fallbacks: fallbacks,
        per_clip,
        histogram: Histogram { bin_width_mm: options.histogram_bin_mm, proportions },
    })
}
