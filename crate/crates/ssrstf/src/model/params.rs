//! Named parameter storage shared by the model, optimizer, and checkpoints.
//!
//! Parameters are registered in a deterministic order at build time; the
//! registration order fixes both the initialization RNG stream and the
//! checkpoint tensor index. Layout structs hold [`ParamId`] handles into the
//! store, and [`bind`] mirrors the store onto a tape for one forward pass.

use crate::error::Result;
use crate::rng::Prng;
use crate::scalar::Scalar;
use crate::tape::{Tape, TenId};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Role of a parameter; decides weight-decay exclusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Norm,
    PositionalEncoding,
}

#[derive(Debug, Clone)]
pub struct ParamDef {
    pub name: String,
    pub kind: ParamKind,
}

#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    defs: Vec<ParamDef>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { defs: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<T>) -> ParamId {
        self.defs.push(ParamDef { name: name.into(), kind });
        self.values.push(value);
        ParamId(self.defs.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    pub fn def(&self, id: ParamId) -> &ParamDef {
        &self.defs[id.0]
    }

    pub fn defs(&self) -> &[ParamDef] {
        &self.defs
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamDef, &Tensor<T>)> {
        self.defs.iter().zip(self.values.iter())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.defs.len()).map(ParamId)
    }

    pub fn total_scalars(&self) -> usize {
        self.values.iter().map(|v| v.numel()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.defs.iter().position(|d| d.name == name).map(ParamId)
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            defs: self.defs.clone(),
            values: self.values.iter().map(|v| v.cast()).collect(),
        }
    }
}

/// Tape nodes for every parameter of a store, in store order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    ids: Vec<TenId>,
}

impl BoundParams {
    pub fn id(&self, p: ParamId) -> TenId {
        self.ids[p.0]
    }

    pub fn ids(&self) -> &[TenId] {
        &self.ids
    }
}

/// Copies every parameter onto the tape as a leaf.
pub fn bind<T: Scalar>(store: &ParamStore<T>, tape: &mut Tape<T>) -> BoundParams {
    BoundParams {
        ids: store.values().iter().map(|v| tape.leaf(v.clone())).collect(),
    }
}

// ── Layout building blocks ──────────────────────────────────────────────

/// A per-position channel map (pointwise convolution / linear layer).
#[derive(Debug, Clone, Copy)]
pub struct LinearRef {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl LinearRef {
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, bound: &BoundParams, x: TenId) -> Result<TenId> {
        tape.linear(x, bound.id(self.weight), self.bias.map(|b| bound.id(b)))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NormRef {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl NormRef {
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, bound: &BoundParams, x: TenId) -> Result<TenId> {
        tape.layer_norm(x, bound.id(self.gamma), bound.id(self.beta), T::from_f64(LAYER_NORM_EPS))
    }
}

/// Two-layer feed-forward with GELU between, widths `C -> r*C -> C`.
#[derive(Debug, Clone, Copy)]
pub struct MlpRef {
    pub fc1: LinearRef,
    pub fc2: LinearRef,
}

impl MlpRef {
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, bound: &BoundParams, x: TenId) -> Result<TenId> {
        let hidden = self.fc1.apply(tape, bound, x)?;
        let act = tape.gelu(hidden);
        self.fc2.apply(tape, bound, act)
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Uniform Glorot init in `[-sqrt(6/(fan_in+fan_out)), +...]`.
pub fn glorot_uniform<T: Scalar>(rng: &mut Prng, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64(rng.uniform(-limit, limit)))
}

pub fn add_linear<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut Prng,
    prefix: &str,
    c_in: usize,
    c_out: usize,
    bias: bool,
) -> LinearRef {
    let weight = store.add(
        format!("{prefix}.weight"),
        ParamKind::Weight,
        glorot_uniform(rng, vec![c_in, c_out], c_in, c_out),
    );
    let bias = bias.then(|| {
        store.add(format!("{prefix}.bias"), ParamKind::Bias, Tensor::zeros(vec![c_out]))
    });
    LinearRef { weight, bias }
}

pub fn add_norm<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, width: usize) -> NormRef {
    let gamma = store.add(
        format!("{prefix}.gamma"),
        ParamKind::Norm,
        Tensor::filled(vec![width], T::ONE),
    );
    let beta = store.add(format!("{prefix}.beta"), ParamKind::Norm, Tensor::zeros(vec![width]));
    NormRef { gamma, beta }
}

pub fn add_mlp<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut Prng,
    prefix: &str,
    channels: usize,
    ratio: usize,
) -> MlpRef {
    let hidden = channels * ratio;
    let fc1 = add_linear(store, rng, &format!("{prefix}.fc1"), channels, hidden, true);
    let fc2 = add_linear(store, rng, &format!("{prefix}.fc2"), hidden, channels, true);
    MlpRef { fc1, fc2 }
}

/// Per-channel 1D convolution kernel `(channels, taps)`.
pub fn add_conv_kernel<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut Prng,
    name: &str,
    channels: usize,
    taps: usize,
) -> ParamId {
    store.add(
        name.to_string(),
        ParamKind::Weight,
        glorot_uniform(rng, vec![channels, taps], taps, taps),
    )
}
