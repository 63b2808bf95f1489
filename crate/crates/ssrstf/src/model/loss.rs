//! Training losses: per-joint position error and first-difference velocity
//! error, combined as `total = position + lambda * velocity`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, TenId};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Literal double sum over frames and joints (and batch items).
    Sum,
    /// Sum divided by the number of contributing (frame, joint) terms;
    /// batch-size independent.
    Mean,
}

/// Tape nodes of one loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub position: TenId,
    pub velocity: TenId,
    pub total: TenId,
}

/// Loss values in millimeters.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LossValues {
    pub position: f64,
    pub velocity: f64,
    pub total: f64,
}

impl LossNodes {
    pub fn values<T: Scalar>(&self, tape: &Tape<T>) -> LossValues {
        LossValues {
            position: tape.value(self.position).item().to_f64(),
            velocity: tape.value(self.velocity).item().to_f64(),
            total: tape.value(self.total).item().to_f64(),
        }
    }
}

fn check_pose_pair<T: Scalar>(
    op: &'static str,
    tape: &Tape<T>,
    pred: TenId,
    target: TenId,
) -> Result<(usize, usize, usize)> {
    let sp = tape.shape(pred).to_vec();
    let st = tape.shape(target).to_vec();
    if sp != st {
        return Err(Error::ShapeMismatch { op, lhs: sp, rhs: st });
    }
    if sp.len() != 4 || sp[3] != 3 {
        return Err(Error::invalid(op, format!("expected (B, T, J, 3), got {sp:?}")));
    }
    Ok((sp[0], sp[1], sp[2]))
}

fn mask_weight_sum<T: Scalar>(tape: &Tape<T>, mask: TenId) -> f64 {
    tape.value(mask).data().iter().map(|v| v.to_f64()).sum()
}

/// Sum (or mean) over batch, frames, and joints of the Euclidean distance
/// between predicted and target joints. `frame_mask` is an optional `(B, T)`
/// weight grid; masked frames contribute nothing (and in mean mode do not
/// count toward the denominator).
pub fn position_loss<T: Scalar>(
    tape: &mut Tape<T>,
    pred: TenId,
    target: TenId,
    reduction: Reduction,
    frame_mask: Option<TenId>,
) -> Result<TenId> {
    let (b, t, j) = check_pose_pair("position_loss", tape, pred, target)?;
    let diff = tape.sub(pred, target)?;
    let mut norms = tape.norm_last(diff)?;
    let mut term_count = (b * t) as f64;
    if let Some(mask) = frame_mask {
        term_count = mask_weight_sum(tape, mask);
        let mask3 = tape.reshape(mask, vec![b, t, 1])?;
        norms = tape.hadamard(norms, mask3)?;
    }
    let sum = tape.sum_all(norms);
    Ok(match reduction {
        Reduction::Sum => sum,
        Reduction::Mean => tape.scale(sum, T::from_f64(1.0 / (term_count * j as f64).max(1.0))),
    })
}

/// Loss on first temporal differences. Constant per-frame offsets cancel;
/// a single-frame clip has zero velocity loss by definition.
pub fn velocity_loss<T: Scalar>(
    tape: &mut Tape<T>,
    pred: TenId,
    target: TenId,
    reduction: Reduction,
    frame_mask: Option<TenId>,
) -> Result<TenId> {
    let (b, t, j) = check_pose_pair("velocity_loss", tape, pred, target)?;
    if t < 2 {
        return Ok(tape.leaf(Tensor::scalar(T::ZERO)));
    }
    let pred_next = tape.slice_axis(pred, 1, 1, t - 1)?;
    let pred_prev = tape.slice_axis(pred, 1, 0, t - 1)?;
    let dpred = tape.sub(pred_next, pred_prev)?;
    let target_next = tape.slice_axis(target, 1, 1, t - 1)?;
    let target_prev = tape.slice_axis(target, 1, 0, t - 1)?;
    let dtarget = tape.sub(target_next, target_prev)?;
    let diff = tape.sub(dpred, dtarget)?;
    let mut norms = tape.norm_last(diff)?;
    let mut term_count = (b * (t - 1)) as f64;
    if let Some(mask) = frame_mask {
        // A difference term is valid only when both frames are.
        let next = tape.slice_axis(mask, 1, 1, t - 1)?;
        let prev = tape.slice_axis(mask, 1, 0, t - 1)?;
        let pair_mask = tape.hadamard(next, prev)?;
        term_count = mask_weight_sum(tape, pair_mask);
        let mask3 = tape.reshape(pair_mask, vec![b, t - 1, 1])?;
        norms = tape.hadamard(norms, mask3)?;
    }
    let sum = tape.sum_all(norms);
    Ok(match reduction {
        Reduction::Sum => sum,
        Reduction::Mean => tape.scale(sum, T::from_f64(1.0 / (term_count * j as f64).max(1.0))),
    })
}

/// `total = position + lambda * velocity`.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    pred: TenId,
    target: TenId,
    lambda_velocity: f64,
    reduction: Reduction,
    frame_mask: Option<TenId>,
) -> Result<LossNodes> {
    if !(lambda_velocity.is_finite() && lambda_velocity >= 0.0) {
        return Err(Error::invalid(
            "total_loss",
            format!("lambda_velocity must be >= 0, got {lambda_velocity}"),
        ));
    }
    let position = position_loss(tape, pred, target, reduction, frame_mask)?;
    let velocity = velocity_loss(tape, pred, target, reduction, frame_mask)?;
    let scaled = tape.scale(velocity, T::from_f64(lambda_velocity));
    let total = tape.add(position, scaled)?;
    Ok(LossNodes { position, velocity, total })
}
