//! Kernel geometry for skeleton selective refine attention.
//!
//! An irregular large kernel `k1 x k2` is factored into four cascaded 1D
//! depth-wise convolutions: per axis, a `(2d - 1)`-tap plain convolution
//! followed by a `floor(k/d)`-tap convolution with dilation `d`. The cascade
//! covers the same span as the dense kernel: the effective extent is
//! `(2d - 1) + d * (floor(k/d) - 1)`, which the shipped shapes make equal to
//! `k` exactly. [`compose_dense_kernel`] reconstructs the dense kernel as an
//! independent oracle for equivalence checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::ConvAxis;
use crate::tensor::Tensor;

/// Extent of the single dense kernel equivalent to a `(2d-1)` tap stage
/// cascaded with a `floor(k/d)` tap stage at dilation `d`.
pub fn effective_extent(k: usize, d: usize) -> usize {
    (2 * d - 1) + d * (k / d - 1)
}

/// The `{k1, d1, k2, d2}` quadruple of the irregular large kernel. The short
/// axis pair may be absent (`k2 = -` in shape tables), in which case only the
/// long-axis convolutions run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub k1: usize,
    pub d1: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k2: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d2: Option<usize>,
}

impl KernelSpec {
    pub fn new(k1: usize, d1: usize, k2: Option<usize>, d2: Option<usize>) -> Result<Self> {
        let spec = KernelSpec { k1, d1, k2, d2 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn square(k: usize, d: usize) -> Result<Self> {
        Self::new(k, d, Some(k), Some(d))
    }

    pub fn long_only(k1: usize, d1: usize) -> Result<Self> {
        Self::new(k1, d1, None, None)
    }

    pub fn validate(&self) -> Result<()> {
        validate_pair("k1/d1", self.k1, self.d1)?;
        match (self.k2, self.d2) {
            (None, None) => {}
            (Some(k2), Some(d2)) => validate_pair("k2/d2", k2, d2)?,
            _ => {
                return Err(Error::invalid(
                    "kernel_spec",
                    "k2 and d2 must be both present or both absent",
                ))
            }
        }
        Ok(())
    }

    /// Tap count of the plain long-axis stage.
    pub fn dw1_size(&self) -> usize {
        2 * self.d1 - 1
    }

    /// Tap count of the dilated long-axis stage.
    pub fn dwd1_size(&self) -> usize {
        self.k1 / self.d1
    }

    pub fn dw2_size(&self) -> Option<usize> {
        self.d2.map(|d| 2 * d - 1)
    }

    pub fn dwd2_size(&self) -> Option<usize> {
        self.k2.zip(self.d2).map(|(k, d)| k / d)
    }

    /// Equivalent dense extents along the (long, short) axes.
    pub fn extents(&self) -> (usize, Option<usize>) {
        (
            effective_extent(self.k1, self.d1),
            self.k2
                .zip(self.d2)
                .map(|(k, d)| effective_extent(k, d)),
        )
    }

    /// Halo radius needed per axis so the cascade sees the same zero
    /// boundary as the dense kernel.
    pub fn halo(&self) -> (usize, usize) {
        let (e1, e2) = self.extents();
        (e1 / 2, e2.map_or(0, |e| e / 2))
    }

    /// The kernel-shape grid shipped with the model family.
    pub fn standard_shapes() -> Vec<KernelSpec> {
        vec![
            KernelSpec { k1: 35, d1: 3, k2: Some(35), d2: Some(3) },
            KernelSpec { k1: 35, d1: 3, k2: Some(11), d2: Some(2) },
            KernelSpec { k1: 23, d1: 3, k2: Some(7), d2: Some(2) },
            KernelSpec { k1: 11, d1: 2, k2: Some(11), d2: Some(2) },
            KernelSpec { k1: 11, d1: 2, k2: None, d2: None },
        ]
    }
}

fn validate_pair(what: &str, k: usize, d: usize) -> Result<()> {
    if d < 1 || k < d {
        return Err(Error::invalid(
            "kernel_spec",
            format!("{what}: need k >= d >= 1, got k={k}, d={d}"),
        ));
    }
    if (k / d) % 2 == 0 {
        return Err(Error::invalid(
            "kernel_spec",
            format!("{what}: floor({k}/{d}) = {} must be odd for center alignment", k / d),
        ));
    }
    if effective_extent(k, d) != k {
        return Err(Error::invalid(
            "kernel_spec",
            format!(
                "{what}: effective extent {} of the cascade does not equal k={k}",
                effective_extent(k, d)
            ),
        ));
    }
    Ok(())
}

/// Geometry of one 1D depth-wise stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub kernel_size: usize,
    pub dilation: usize,
    pub axis: ConvAxis,
}

impl Conv1dSpec {
    pub fn new(kernel_size: usize, dilation: usize, axis: ConvAxis) -> Result<Self> {
        if kernel_size % 2 == 0 {
            return Err(Error::invalid(
                "conv1d_spec",
                format!("kernel size {kernel_size} must be odd"),
            ));
        }
        if dilation == 0 {
            return Err(Error::invalid("conv1d_spec", "dilation must be >= 1"));
        }
        Ok(Conv1dSpec { kernel_size, dilation, axis })
    }

    /// Runs this stage on a `(B, T, J, C)` grid node. Weights must be
    /// `(channels, kernel_size)`.
    pub fn apply<T: Scalar>(
        &self,
        tape: &mut crate::tape::Tape<T>,
        x: crate::tape::TenId,
        weights: crate::tape::TenId,
    ) -> Result<crate::tape::TenId> {
        if tape.shape(weights).get(1) != Some(&self.kernel_size) {
            return Err(Error::ShapeMismatch {
                op: "conv1d_spec",
                lhs: vec![self.kernel_size],
                rhs: tape.shape(weights).to_vec(),
            });
        }
        tape.depthwise_conv1d(x, weights, self.axis.index(), self.dilation)
    }
}

/// Dense 1D kernel equal to `dw` (dilation 1) cascaded with `dwd` at
/// `dilation`: the discrete convolution of the first weight vector with the
/// second upsampled by the dilation. Both kernels are per-channel rows of a
/// `(channels, taps)` tensor.
pub fn compose_dense_kernel<T: Scalar>(
    dw: &Tensor<T>,
    dwd: &Tensor<T>,
    dilation: usize,
) -> Result<Tensor<T>> {
    if dw.rank() != 2 || dwd.rank() != 2 || dw.shape()[0] != dwd.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "compose_dense_kernel",
            lhs: dw.shape().to_vec(),
            rhs: dwd.shape().to_vec(),
        });
    }
    let channels = dw.shape()[0];
    let (k_dw, k_dwd) = (dw.shape()[1], dwd.shape()[1]);
    if k_dw % 2 == 0 || k_dwd % 2 == 0 {
        return Err(Error::invalid(
            "compose_dense_kernel",
            format!("kernel sizes must be odd, got {k_dw} and {k_dwd}"),
        ));
    }
    if dilation == 0 {
        return Err(Error::invalid("compose_dense_kernel", "dilation must be >= 1"));
    }
    let out_len = k_dw + dilation * (k_dwd - 1);
    let mut out = vec![T::ZERO; channels * out_len];
    for c in 0..channels {
        let a = &dw.data()[c * k_dw..(c + 1) * k_dw];
        let b = &dwd.data()[c * k_dwd..(c + 1) * k_dwd];
        let dst = &mut out[c * out_len..(c + 1) * out_len];
        for (i, &av) in a.iter().enumerate() {
            for (j, &bv) in b.iter().enumerate() {
                dst[i + dilation * j] += av * bv;
            }
        }
    }
    Tensor::new(vec![channels, out_len], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;
    use crate::tape::Tape;

    #[test]
    fn effective_extent_matches_shipped_shapes() {
        assert_eq!(effective_extent(35, 3), 35);
        assert_eq!(effective_extent(11, 2), 11);
        assert_eq!(effective_extent(23, 3), 23);
        assert_eq!(effective_extent(7, 2), 7);
    }

    #[test]
    fn standard_shapes_validate_and_cover_extents() {
        let shapes = KernelSpec::standard_shapes();
        assert_eq!(shapes.len(), 5);
        let mut extents = Vec::new();
        for s in &shapes {
            s.validate().unwrap();
            extents.push(s.extents());
        }
        assert_eq!(
            extents,
            vec![
                (35, Some(35)),
                (35, Some(11)),
                (23, Some(7)),
                (11, Some(11)),
                (11, None),
            ]
        );
    }

    #[test]
    fn spec_rejects_bad_pairs() {
        // floor(12/3) = 4 is even.
        assert!(KernelSpec::new(12, 3, None, None).is_err());
        // k < d.
        assert!(KernelSpec::new(2, 3, None, None).is_err());
        // Half-specified short axis.
        assert!(KernelSpec::new(11, 2, Some(7), None).is_err());
    }

    #[test]
    fn compose_delta_kernels() {
        let delta = Tensor::new(vec![1, 1], vec![1.0f64]).unwrap();
        let composed = compose_dense_kernel(&delta, &delta, 1).unwrap();
        assert_eq!(composed.shape(), &[1, 1]);
        assert_eq!(composed.data(), &[1.0]);
    }

    #[test]
    fn compose_rejects_even_kernel() {
        let dw = Tensor::new(vec![1, 3], vec![1.0f64, 1.0, 1.0]).unwrap();
        let dwd = Tensor::new(vec![1, 2], vec![1.0f64, 1.0]).unwrap();
        assert!(compose_dense_kernel(&dw, &dwd, 1).is_err());
    }

    #[test]
    fn compose_matches_polynomial_product() {
        let dw = Tensor::new(vec![1, 3], vec![1.0f64, 2.0, 1.0]).unwrap();
        let dwd = Tensor::new(vec![1, 3], vec![1.0f64, 0.0, 1.0]).unwrap();
        let composed = compose_dense_kernel(&dw, &dwd, 2).unwrap();
        assert_eq!(composed.shape(), &[1, 7]);
        assert_eq!(composed.data(), &[1.0, 2.0, 1.0, 0.0, 1.0, 2.0, 1.0]);
    }

    #[test]
    fn padded_cascade_equals_dense_kernel() {
        // One long-axis pair: pad by the dense radius, cascade, crop. The
        // result must match the dense composed kernel with plain same
        // padding, boundaries included.
        let mut rng = Prng::new(77);
        let channels = 3;
        let (k, d) = (11usize, 2usize);
        let dw_taps = 2 * d - 1;
        let dwd_taps = k / d;
        let dw = Tensor::new(
            vec![channels, dw_taps],
            (0..channels * dw_taps).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let dwd = Tensor::new(
            vec![channels, dwd_taps],
            (0..channels * dwd_taps).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let x = Tensor::new(
            vec![2, 1, 9, channels],
            (0..2 * 9 * channels).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap();

        let mut tape = Tape::new();
        let xid = tape.leaf(x.clone());
        let dw_id = tape.leaf(dw.clone());
        let dwd_id = tape.leaf(dwd.clone());
        let halo = k / 2;
        let padded = tape.pad_axis(xid, 2, halo, halo).unwrap();
        let stage1 = tape.depthwise_conv1d(padded, dw_id, 2, 1).unwrap();
        let stage2 = tape.depthwise_conv1d(stage1, dwd_id, 2, d).unwrap();
        let cascade = tape.slice_axis(stage2, 2, halo, 9).unwrap();

        let dense_kernel = compose_dense_kernel(&dw, &dwd, d).unwrap();
        let dense_id = tape.leaf(dense_kernel);
        let x2 = tape.leaf(x);
        let dense = tape.depthwise_conv1d(x2, dense_id, 2, 1).unwrap();

        for (a, b) in tape.value(cascade).data().iter().zip(tape.value(dense).data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
