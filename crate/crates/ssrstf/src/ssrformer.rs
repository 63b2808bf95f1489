//! Local stream: skeleton selective refine attention and its blocks.
//!
//! SSRA builds an attention map from four cascaded 1D depth-wise
//! convolutions — a plain and a dilated stage along the long kernel axis,
//! optionally the same pair along the short axis — followed by a pointwise
//! convolution, and gates the input by elementwise product. The SSR module
//! wraps SSRA between two pointwise convolutions with a GELU and an inner
//! residual; the SSRFormer block is the MetaFormer arrangement of SSR and an
//! MLP, each behind layer norm with an outer residual.
//!
//! The cascade runs on a zero-halo-padded grid (see [`crate::conv`]) so it
//! equals the dense composed kernel exactly, boundaries included.

use crate::conv::{Conv1dSpec, KernelSpec};
use crate::error::Result;
use crate::model::params::{
    add_conv_kernel, add_linear, add_mlp, add_norm, BoundParams, LinearRef, MlpRef, NormRef,
    ParamId, ParamStore,
};
use crate::rng::Prng;
use crate::scalar::Scalar;
use crate::tape::{ConvAxis, Tape, TenId};

/// Which grid axis carries the long side of the irregular kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Long axis along joints: local dependencies in joint space.
    Spatial,
    /// Long axis along frames: local dependencies in time.
    Temporal,
}

impl Orientation {
    /// (long, short) convolution axes of a `(B, T, J, C)` grid.
    pub fn axes(self) -> (ConvAxis, ConvAxis) {
        match self {
            Orientation::Spatial => (ConvAxis::Joint, ConvAxis::Temporal),
            Orientation::Temporal => (ConvAxis::Temporal, ConvAxis::Joint),
        }
    }
}

/// Weights of one SSRA unit.
#[derive(Debug, Clone, Copy)]
pub struct SsraRef {
    pub dw1: ParamId,
    pub dwd1: ParamId,
    pub dw2: Option<ParamId>,
    pub dwd2: Option<ParamId>,
    /// Pointwise map producing the attention map, with bias.
    pub attn: LinearRef,
}

impl SsraRef {
    pub fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Prng,
        prefix: &str,
        channels: usize,
        spec: &KernelSpec,
    ) -> Self {
        let dw1 = add_conv_kernel(store, rng, &format!("{prefix}.dw1"), channels, spec.dw1_size());
        let dwd1 =
            add_conv_kernel(store, rng, &format!("{prefix}.dwd1"), channels, spec.dwd1_size());
        let dw2 = spec
            .dw2_size()
            .map(|taps| add_conv_kernel(store, rng, &format!("{prefix}.dw2"), channels, taps));
        let dwd2 = spec
            .dwd2_size()
            .map(|taps| add_conv_kernel(store, rng, &format!("{prefix}.dwd2"), channels, taps));
        let attn = add_linear(store, rng, &format!("{prefix}.attn"), channels, channels, true);
        SsraRef { dw1, dwd1, dw2, dwd2, attn }
    }
}

/// Weights of one SSRFormer block.
#[derive(Debug, Clone, Copy)]
pub struct SsrFormerRef {
    pub orientation: Orientation,
    pub norm_mix: NormRef,
    pub entry: LinearRef,
    pub ssra: SsraRef,
    pub exit: LinearRef,
    pub norm_mlp: NormRef,
    pub mlp: MlpRef,
}

impl SsrFormerRef {
    pub fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Prng,
        prefix: &str,
        channels: usize,
        spec: &KernelSpec,
        mlp_ratio: usize,
        orientation: Orientation,
    ) -> Self {
        let norm_mix = add_norm(store, &format!("{prefix}.norm_mix"), channels);
        let entry = add_linear(store, rng, &format!("{prefix}.entry"), channels, channels, true);
        let ssra = SsraRef::build(store, rng, &format!("{prefix}.ssra"), channels, spec);
        let exit = add_linear(store, rng, &format!("{prefix}.exit"), channels, channels, true);
        let norm_mlp = add_norm(store, &format!("{prefix}.norm_mlp"), channels);
        let mlp = add_mlp(store, rng, &format!("{prefix}.mlp"), channels, mlp_ratio);
        SsrFormerRef { orientation, norm_mix, entry, ssra, exit, norm_mlp, mlp }
    }
}

/// The depth-wise cascade producing the pre-pointwise feature: plain then
/// dilated stage along the long axis, interleaved with the short-axis pair
/// when present. Runs on a halo-padded grid and crops back.
pub fn ssra_cascade<T: Scalar>(
    tape: &mut Tape<T>,
    x: TenId,
    w: &SsraRef,
    bound: &BoundParams,
    spec: &KernelSpec,
    orientation: Orientation,
) -> Result<TenId> {
    let (long, short) = orientation.axes();
    let (halo_long, halo_short) = spec.halo();
    let long_len = tape.shape(x)[long.index()];
    let short_len = tape.shape(x)[short.index()];

    let dw1 = Conv1dSpec::new(spec.dw1_size(), 1, long)?;
    let dwd1 = Conv1dSpec::new(spec.dwd1_size(), spec.d1, long)?;

    let mut h = tape.pad_axis(x, long.index(), halo_long, halo_long)?;
    if w.dw2.is_some() {
        h = tape.pad_axis(h, short.index(), halo_short, halo_short)?;
    }
    h = dw1.apply(tape, h, bound.id(w.dw1))?;
    if let Some(dw2) = w.dw2 {
        let stage = Conv1dSpec::new(spec.dw2_size().unwrap(), 1, short)?;
        h = stage.apply(tape, h, bound.id(dw2))?;
    }
    h = dwd1.apply(tape, h, bound.id(w.dwd1))?;
    if let Some(dwd2) = w.dwd2 {
        let d2 = spec.d2.expect("dwd2 present implies d2 present");
        let stage = Conv1dSpec::new(spec.dwd2_size().unwrap(), d2, short)?;
        h = stage.apply(tape, h, bound.id(dwd2))?;
    }
    if w.dw2.is_some() {
        h = tape.slice_axis(h, short.index(), halo_short, short_len)?;
    }
    tape.slice_axis(h, long.index(), halo_long, long_len)
}

/// Skeleton selective refine attention: attention map from the cascade and a
/// pointwise convolution, applied by Hadamard product with the input.
pub fn ssra<T: Scalar>(
    tape: &mut Tape<T>,
    x: TenId,
    w: &SsraRef,
    bound: &BoundParams,
    spec: &KernelSpec,
    orientation: Orientation,
) -> Result<TenId> {
    let refined = ssra_cascade(tape, x, w, bound, spec, orientation)?;
    let attn_map = w.attn.apply(tape, bound, refined)?;
    tape.hadamard(attn_map, x)
}

/// SSR module: input plus pointwise-wrapped SSRA over the GELU-activated
/// pointwise projection of the input.
pub fn ssr_module<T: Scalar>(
    tape: &mut Tape<T>,
    x: TenId,
    w: &SsrFormerRef,
    bound: &BoundParams,
    spec: &KernelSpec,
) -> Result<TenId> {
    let projected = w.entry.apply(tape, bound, x)?;
    let activated = tape.gelu(projected);
    let attended = ssra(tape, activated, &w.ssra, bound, spec, w.orientation)?;
    let out = w.exit.apply(tape, bound, attended)?;
    tape.add(x, out)
}

/// Full SSRFormer block: token mixing then MLP, each behind layer norm with
/// a residual. With `literal_sigma` the activation wraps the whole MLP
/// output; otherwise the MLP's internal GELU is the only activation.
pub fn ssrformer_block<T: Scalar>(
    tape: &mut Tape<T>,
    x: TenId,
    w: &SsrFormerRef,
    bound: &BoundParams,
    spec: &KernelSpec,
    literal_sigma: bool,
) -> Result<TenId> {
    let normed = w.norm_mix.apply(tape, bound, x)?;
    let mixed = ssr_module(tape, normed, w, bound, spec)?;
    let y = tape.add(mixed, x)?;
    let normed2 = w.norm_mlp.apply(tape, bound, y)?;
    let mut branch = w.mlp.apply(tape, bound, normed2)?;
    if literal_sigma {
        branch = tape.gelu(branch);
    }
    tape.add(branch, y)
}
