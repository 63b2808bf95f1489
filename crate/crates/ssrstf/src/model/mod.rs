//! Full pose-lifting model: embedding, spatial positional encoding, stacked
//! dual-stream blocks with adaptive fusion, the tanh motion-representation
//! layer, and the 3D regression head.

pub mod loss;
pub mod params;

use serde::{Deserialize, Serialize};

use crate::conv::KernelSpec;
use crate::error::{Error, Result};
use crate::model::loss::Reduction;
use crate::model::params::{
    add_linear, bind, BoundParams, LinearRef, ParamId, ParamKind, ParamStore,
};
use crate::rng::Prng;
use crate::scalar::Scalar;
use crate::ssrformer::{ssrformer_block, Orientation, SsrFormerRef};
use crate::stformer::{stformer_block, StFormerRef};
use crate::tape::{Tape, TenId};
use crate::tensor::Tensor;

/// Standard deviation of the positional-encoding init.
const POS_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Dual-stream block depth N.
    pub n_blocks: usize,
    /// Feature width C.
    pub channels: usize,
    /// Motion-representation width C_h.
    pub repr_channels: usize,
    /// Training clip length T.
    pub frames: usize,
    /// Joint count J.
    pub joints: usize,
    pub kernel: KernelSpec,
    /// Attention heads per criss-cross branch.
    pub heads: usize,
    /// MLP expansion ratio r.
    pub mlp_ratio: usize,
    /// Velocity-loss coefficient.
    pub lambda_velocity: f64,
    /// Apply the activation around the whole MLP output (the literal block
    /// equation) instead of only inside the MLP.
    pub literal_sigma: bool,
    pub reduction: Reduction,
    /// Fixed scale folded into the regression head: the stored head weights
    /// operate at O(1) and the prediction is `output_scale_mm * Linear(E)`.
    /// Keeps millimeter outputs reachable within desk-scale step budgets;
    /// set to 1.0 for the plain parametrization.
    #[serde(default = "default_output_scale")]
    pub output_scale_mm: f64,
}

fn default_output_scale() -> f64 {
    1000.0
}

impl ModelConfig {
    /// Base variant: N=12, C=256, C_h=512.
    pub fn base() -> Self {
        ModelConfig {
            n_blocks: 12,
            channels: 256,
            repr_channels: 512,
            frames: 243,
            joints: 17,
            kernel: KernelSpec { k1: 35, d1: 3, k2: Some(11), d2: Some(2) },
            heads: 8,
            mlp_ratio: 4,
            lambda_velocity: 1.0,
            literal_sigma: true,
            reduction: Reduction::Mean,
            output_scale_mm: 1000.0,
        }
    }

    /// Small variant: N=16, C=128, C_h=512.
    pub fn small() -> Self {
        ModelConfig {
            n_blocks: 16,
            channels: 128,
            repr_channels: 512,
            heads: 4,
            ..Self::base()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "base" => Ok(Self::base()),
            "small" => Ok(Self::small()),
            other => Err(Error::invalid(
                "preset",
                format!("unknown preset {other:?}; expected \"base\" or \"small\""),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_blocks < 1 {
            problems.push("n_blocks must be >= 1".to_string());
        }
        if self.channels < 2 || self.channels % 2 != 0 {
            problems.push(format!("channels must be even and >= 2, got {}", self.channels));
        }
        if self.repr_channels < 1 {
            problems.push("repr_channels must be >= 1".to_string());
        }
        if self.frames < 1 {
            problems.push("frames must be >= 1".to_string());
        }
        if self.joints < 2 {
            problems.push(format!("joints must be >= 2, got {}", self.joints));
        }
        if self.heads < 1 || (self.channels / 2) % self.heads.max(1) != 0 {
            problems.push(format!(
                "heads ({}) must divide the branch width C/2 ({})",
                self.heads,
                self.channels / 2
            ));
        }
        if self.mlp_ratio < 1 {
            problems.push("mlp_ratio must be >= 1".to_string());
        }
        if !(self.lambda_velocity.is_finite() && self.lambda_velocity >= 0.0) {
            problems.push(format!(
                "lambda_velocity must be finite and >= 0, got {}",
                self.lambda_velocity
            ));
        }
        if !(self.output_scale_mm.is_finite() && self.output_scale_mm > 0.0) {
            problems.push(format!(
                "output_scale_mm must be finite and > 0, got {}",
                self.output_scale_mm
            ));
        }
        if let Err(e) = self.kernel.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Parameter handles of one dual-stream block.
#[derive(Debug, Clone)]
pub struct DualBlockRef {
    pub spatial: SsrFormerRef,
    pub temporal: SsrFormerRef,
    pub global: [StFormerRef; 2],
    /// 2C -> 2 stream-weight map of the adaptive fusion.
    pub fusion: LinearRef,
}

#[derive(Debug, Clone)]
pub struct ModelLayout {
    pub embed: LinearRef,
    pub pos: ParamId,
    pub blocks: Vec<DualBlockRef>,
    pub repr: LinearRef,
    pub head: LinearRef,
}

/// The complete named-parameter set of one model instance.
#[derive(Debug, Clone)]
pub struct ModelWeights<T> {
    pub config: ModelConfig,
    pub layout: ModelLayout,
    pub store: ParamStore<T>,
}

impl<T: Scalar> ModelWeights<T> {
    /// Builds and initializes all parameters. Identical seeds give
    /// bit-identical weights.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = Prng::derive(seed, 0x1217);
        let c = config.channels;

        let embed = add_linear(&mut store, &mut rng, "embed", 3, c, true);
        let pos = store.add(
            "pos_embed",
            ParamKind::PositionalEncoding,
            Tensor::from_fn(vec![1, config.joints, c], |_| {
                T::from_f64(rng.normal_scaled(0.0, POS_INIT_STD))
            }),
        );
        let mut blocks = Vec::with_capacity(config.n_blocks);
        for i in 0..config.n_blocks {
            let spatial = SsrFormerRef::build(
                &mut store,
                &mut rng,
                &format!("blocks.{i}.local.spatial"),
                c,
                &config.kernel,
                config.mlp_ratio,
                Orientation::Spatial,
            );
            let temporal = SsrFormerRef::build(
                &mut store,
                &mut rng,
                &format!("blocks.{i}.local.temporal"),
                c,
                &config.kernel,
                config.mlp_ratio,
                Orientation::Temporal,
            );
            let global = [
                StFormerRef::build(
                    &mut store,
                    &mut rng,
                    &format!("blocks.{i}.global.0"),
                    c,
                    config.heads,
                    config.mlp_ratio,
                )?,
                StFormerRef::build(
                    &mut store,
                    &mut rng,
                    &format!("blocks.{i}.global.1"),
                    c,
                    config.heads,
                    config.mlp_ratio,
                )?,
            ];
            let fusion =
                add_linear(&mut store, &mut rng, &format!("blocks.{i}.fusion"), 2 * c, 2, true);
            blocks.push(DualBlockRef { spatial, temporal, global, fusion });
        }
        let repr = add_linear(&mut store, &mut rng, "repr", c, config.repr_channels, true);
        let head = add_linear(&mut store, &mut rng, "head", config.repr_channels, 3, true);

        Ok(ModelWeights {
            config,
            layout: ModelLayout { embed, pos, blocks, repr, head },
            store,
        })
    }

    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        ModelWeights {
            config: self.config,
            layout: self.layout.clone(),
            store: self.store.cast(),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        bind(&self.store, tape)
    }
}

/// Exact per-section scalar counts for a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Census {
    pub embedding: usize,
    pub positional: usize,
    pub per_block: usize,
    pub blocks: usize,
    pub representation: usize,
    pub head: usize,
    pub total: usize,
}

/// Parameter census as a pure function of the configuration; matches the
/// built store scalar for scalar.
pub fn census(config: &ModelConfig) -> Census {
    let c = config.channels;
    let k = &config.kernel;
    let linear = |cin: usize, cout: usize| cin * cout + cout;
    let norm = 2 * c;
    let mlp = linear(c, c * config.mlp_ratio) + linear(c * config.mlp_ratio, c);

    let ssra = c * k.dw1_size()
        + c * k.dwd1_size()
        + k.dw2_size().map_or(0, |t| c * t)
        + k.dwd2_size().map_or(0, |t| c * t)
        + linear(c, c);
    let ssrformer = norm + linear(c, c) + ssra + linear(c, c) + norm + mlp;

    let half = c / 2;
    let stc = 2 * (4 * half * half) + c * c;
    let stformer = norm + stc + norm + mlp;

    let fusion = linear(2 * c, 2);
    let per_block = 2 * ssrformer + 2 * stformer + fusion;

    let embedding = linear(3, c);
    let positional = config.joints * c;
    let representation = linear(c, config.repr_channels);
    let head = linear(config.repr_channels, 3);
    let blocks = config.n_blocks * per_block;
    Census {
        embedding,
        positional,
        per_block,
        blocks,
        representation,
        head,
        total: embedding + positional + blocks + representation + head,
    }
}

/// Outputs of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// Motion representation E, `(B, T, J, C_h)`, tanh-bounded.
    pub representation: TenId,
    /// Predicted 3D pose, `(B, T, J, 3)`.
    pub prediction: TenId,
}

/// Embeds 2D keypoints+confidence and adds the spatial positional encoding.
pub fn embed<T: Scalar>(
    tape: &mut Tape<T>,
    weights: &ModelWeights<T>,
    bound: &BoundParams,
    input: TenId,
) -> Result<TenId> {
    let shape = tape.shape(input).to_vec();
    if shape.len() != 4 || shape[3] != 3 {
        return Err(Error::invalid(
            "embed",
            format!("expected (B, T, J, 3) input, got {shape:?}"),
        ));
    }
    if shape[2] != weights.config.joints {
        return Err(Error::invalid(
            "embed",
            format!(
                "input joint count {} does not match configured {} (parameter pos_embed)",
                shape[2], weights.config.joints
            ),
        ));
    }
    let projected = weights.layout.embed.apply(tape, bound, input)?;
    tape.add(projected, bound.id(weights.layout.pos))
}

/// Per-position softmax gate over the two streams; returns the fused grid
/// and the `(B, T, J, 2)` stream weights.
pub fn adaptive_fusion<T: Scalar>(
    tape: &mut Tape<T>,
    f_local: TenId,
    f_global: TenId,
    fusion: &LinearRef,
    bound: &BoundParams,
) -> Result<(TenId, TenId)> {
    let cat = tape.concat_last(f_local, f_global)?;
    let logits = fusion.apply(tape, bound, cat)?;
    let alphas = tape.softmax_last(logits)?;
    let alpha_l = tape.slice_last(alphas, 0, 1)?;
    let alpha_g = tape.slice_last(alphas, 1, 1)?;
    let weighted_l = tape.hadamard(f_local, alpha_l)?;
    let weighted_g = tape.hadamard(f_global, alpha_g)?;
    let fused = tape.add(weighted_l, weighted_g)?;
    Ok((fused, alphas))
}

/// One dual-stream block: local spatial+temporal SSRFormers in sequence,
/// two STFormers in sequence, adaptive fusion of the two stream outputs.
pub fn dual_stream_block<T: Scalar>(
    tape: &mut Tape<T>,
    x: TenId,
    block: &DualBlockRef,
    bound: &BoundParams,
    config: &ModelConfig,
) -> Result<TenId> {
    let local_s = ssrformer_block(tape, x, &block.spatial, bound, &config.kernel, config.literal_sigma)?;
    let f_local = ssrformer_block(tape, local_s, &block.temporal, bound, &config.kernel, config.literal_sigma)?;
    let global_1 = stformer_block(tape, x, &block.global[0], bound, config.literal_sigma)?;
    let f_global = stformer_block(tape, global_1, &block.global[1], bound, config.literal_sigma)?;
    let (fused, _alphas) = adaptive_fusion(tape, f_local, f_global, &block.fusion, bound)?;
    Ok(fused)
}

/// Full forward pass over an already-bound parameter set.
pub fn forward_bound<T: Scalar>(
    tape: &mut Tape<T>,
    weights: &ModelWeights<T>,
    bound: &BoundParams,
    input: TenId,
) -> Result<ForwardOutput> {
    let mut grid = embed(tape, weights, bound, input)?;
    for block in &weights.layout.blocks {
        grid = dual_stream_block(tape, grid, block, bound, &weights.config)?;
    }
    let repr_linear = weights.layout.repr.apply(tape, bound, grid)?;
    let representation = tape.tanh(repr_linear);
    let head_out = weights.layout.head.apply(tape, bound, representation)?;
    let prediction = if weights.config.output_scale_mm == 1.0 {
        head_out
    } else {
        tape.scale(head_out, T::from_f64(weights.config.output_scale_mm))
    };
    Ok(ForwardOutput { representation, prediction })
}

/// Binds the weights and runs the forward pass on a fresh tape.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    weights: &ModelWeights<T>,
    input: &Tensor<T>,
) -> Result<(BoundParams, ForwardOutput)> {
    let bound = weights.bind(tape);
    let input_id = tape.leaf(input.clone());
    let output = forward_bound(tape, weights, &bound, input_id)?;
    Ok((bound, output))
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_blocks: 1,
            channels: 8,
            repr_channels: 8,
            frames: 4,
            joints: 5,
            kernel: KernelSpec { k1: 7, d1: 2, k2: Some(7), d2: Some(2) },
            heads: 2,
            mlp_ratio: 2,
            lambda_velocity: 1.0,
            literal_sigma: true,
            reduction: Reduction::Mean,
            output_scale_mm: 1000.0,
        }
    }

    pub(crate) fn tiny_f32_weights(seed: u64) -> ModelWeights<f32> {
        ModelWeights::init(tiny_config(), seed).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::tests_support::tiny_config;
    use super::*;

    fn random_input(config: &ModelConfig, b: usize, seed: u64) -> Tensor<f64> {
        let mut rng = Prng::new(seed);
        Tensor::from_fn(vec![b, config.frames, config.joints, 3], |_| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn census_matches_built_store() {
        for config in [tiny_config(), ModelConfig { n_blocks: 2, channels: 12, heads: 3, ..tiny_config() }] {
            let weights: ModelWeights<f32> = ModelWeights::init(config, 0).unwrap();
            assert_eq!(census(&config).total, weights.store.total_scalars());
        }
    }

    #[test]
    fn census_linear_in_depth() {
        let c6 = census(&ModelConfig { n_blocks: 6, ..ModelConfig::base() });
        let c12 = census(&ModelConfig::base());
        assert_eq!(c12.blocks, 2 * c6.blocks);
        assert_eq!(c6.per_block, c12.per_block);
    }

    #[test]
    fn presets_match_reported_sizes_within_15_percent() {
        let base = census(&ModelConfig::base()).total as f64;
        let small = census(&ModelConfig::small()).total as f64;
        assert!((base - 36.7e6).abs() / 36.7e6 < 0.15, "base census {base}");
        assert!((small - 12.4e6).abs() / 12.4e6 < 0.15, "small census {small}");
    }

    #[test]
    fn forward_shape_contract() {
        let mut config = tiny_config();
        config.frames = 6;
        let weights: ModelWeights<f64> = ModelWeights::init(config, 1).unwrap();
        let input = random_input(&config, 2, 3);
        let mut tape = Tape::new();
        let (_, out) = forward(&mut tape, &weights, &input).unwrap();
        assert_eq!(tape.shape(out.representation), &[2, 6, 5, 8]);
        assert_eq!(tape.shape(out.prediction), &[2, 6, 5, 3]);
    }

    #[test]
    fn representation_is_tanh_bounded() {
        let config = tiny_config();
        let weights: ModelWeights<f64> = ModelWeights::init(config, 2).unwrap();
        let input = random_input(&config, 1, 4);
        let mut tape = Tape::new();
        let (_, out) = forward(&mut tape, &weights, &input).unwrap();
        assert!(tape
            .value(out.representation)
            .data()
            .iter()
            .all(|v| v.abs() < 1.0));
    }

    #[test]
    fn forward_is_deterministic_and_init_is_seeded() {
        let config = tiny_config();
        let w1: ModelWeights<f64> = ModelWeights::init(config, 9).unwrap();
        let w2: ModelWeights<f64> = ModelWeights::init(config, 9).unwrap();
        for (a, b) in w1.store.values().iter().zip(w2.store.values()) {
            assert_eq!(a.data(), b.data());
        }
        let input = random_input(&config, 2, 5);
        let mut t1 = Tape::new();
        let mut t2 = Tape::new();
        let (_, o1) = forward(&mut t1, &w1, &input).unwrap();
        let (_, o2) = forward(&mut t2, &w2, &input).unwrap();
        assert_eq!(t1.value(o1.prediction).data(), t2.value(o2.prediction).data());
        let w3: ModelWeights<f64> = ModelWeights::init(config, 10).unwrap();
        assert_ne!(
            w1.store.value(w1.layout.embed.weight).data(),
            w3.store.value(w3.layout.embed.weight).data()
        );
    }

    #[test]
    fn embed_zero_weights_zero_grid() {
        let config = tiny_config();
        let mut weights: ModelWeights<f64> = ModelWeights::init(config, 3).unwrap();
        let embed_ref = weights.layout.embed;
        *weights.store.value_mut(embed_ref.weight) = Tensor::zeros(vec![3, 8]);
        *weights.store.value_mut(embed_ref.bias.unwrap()) = Tensor::zeros(vec![8]);
        *weights.store.value_mut(weights.layout.pos) = Tensor::zeros(vec![1, 5, 8]);
        let input = random_input(&config, 1, 6);
        let mut tape = Tape::new();
        let bound = weights.bind(&mut tape);
        let input_id = tape.leaf(input);
        let grid = embed(&mut tape, &weights, &bound, input_id).unwrap();
        assert!(tape.value(grid).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn positional_encoding_is_time_independent() {
        // Identical inputs at two frames embed identically at each joint.
        let config = tiny_config();
        let weights: ModelWeights<f64> = ModelWeights::init(config, 4).unwrap();
        let mut rng = Prng::new(7);
        let frame: Vec<f64> = (0..config.joints * 3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut data = frame.clone();
        for _ in 1..config.frames {
            data.extend_from_slice(&frame);
        }
        let input = Tensor::new(vec![1, config.frames, config.joints, 3], data).unwrap();
        let mut tape = Tape::new();
        let bound = weights.bind(&mut tape);
        let input_id = tape.leaf(input);
        let grid = embed(&mut tape, &weights, &bound, input_id).unwrap();
        let out = tape.value(grid).data();
        let stride = config.joints * config.channels;
        for t in 1..config.frames {
            assert_eq!(&out[..stride], &out[t * stride..(t + 1) * stride]);
        }
    }

    #[test]
    fn embed_matches_per_position_oracle() {
        let config = tiny_config();
        let weights: ModelWeights<f64> = ModelWeights::init(config, 5).unwrap();
        let input = random_input(&config, 2, 8);
        let mut tape = Tape::new();
        let bound = weights.bind(&mut tape);
        let input_id = tape.leaf(input.clone());
        let grid = embed(&mut tape, &weights, &bound, input_id).unwrap();

        let w = weights.store.value(weights.layout.embed.weight).data();
        let b = weights.store.value(weights.layout.embed.bias.unwrap()).data();
        let pos = weights.store.value(weights.layout.pos).data();
        let c = config.channels;
        let out = tape.value(grid).data();
        let mut idx = 0;
        for bi in 0..2 {
            for t in 0..config.frames {
                for j in 0..config.joints {
                    let base = ((bi * config.frames + t) * config.joints + j) * 3;
                    for o in 0..c {
                        let mut expected = b[o] + pos[j * c + o];
                        for i in 0..3 {
                            expected += input.data()[base + i] * w[i * c + o];
                        }
                        assert!((out[idx] - expected).abs() <= 1e-6);
                        idx += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn fusion_uniform_when_zeroed() {
        let config = tiny_config();
        let mut weights: ModelWeights<f64> = ModelWeights::init(config, 6).unwrap();
        let fusion = weights.layout.blocks[0].fusion;
        *weights.store.value_mut(fusion.weight) = Tensor::zeros(vec![16, 2]);
        *weights.store.value_mut(fusion.bias.unwrap()) = Tensor::zeros(vec![2]);

        let mut rng = Prng::new(8);
        let f_l = Tensor::from_fn(vec![1, 2, 3, 8], |_| rng.uniform(-1.0, 1.0));
        let f_g = Tensor::from_fn(vec![1, 2, 3, 8], |_| rng.uniform(-1.0, 1.0));
        let mut tape = Tape::new();
        let bound = weights.bind(&mut tape);
        let a = tape.leaf(f_l.clone());
        let b = tape.leaf(f_g.clone());
        let (fused, alphas) = adaptive_fusion(&mut tape, a, b, &fusion, &bound).unwrap();
        for v in tape.value(alphas).data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
        for ((f, x), y) in tape.value(fused).data().iter().zip(f_l.data()).zip(f_g.data()) {
            assert!((f - 0.5 * (x + y)).abs() < 1e-12);
        }
    }

    #[test]
    fn fusion_saturates_to_local_stream() {
        let config = tiny_config();
        let mut weights: ModelWeights<f64> = ModelWeights::init(config, 7).unwrap();
        let fusion = weights.layout.blocks[0].fusion;
        *weights.store.value_mut(fusion.weight) = Tensor::zeros(vec![16, 2]);
        *weights.store.value_mut(fusion.bias.unwrap()) =
            Tensor::new(vec![2], vec![20.0, -20.0]).unwrap();
        let mut rng = Prng::new(9);
        let f_l = Tensor::from_fn(vec![1, 2, 3, 8], |_| rng.uniform(-1.0, 1.0));
        let f_g = Tensor::from_fn(vec![1, 2, 3, 8], |_| rng.uniform(-1.0, 1.0));
        let mut tape = Tape::new();
        let bound = weights.bind(&mut tape);
        let a = tape.leaf(f_l.clone());
        let b = tape.leaf(f_g);
        let (fused, _) = adaptive_fusion(&mut tape, a, b, &fusion, &bound).unwrap();
        for (f, x) in tape.value(fused).data().iter().zip(f_l.data()) {
            assert!((f - x).abs() < 1e-6);
        }
    }

    #[test]
    fn fusion_weights_sum_to_one() {
        let config = tiny_config();
        let weights: ModelWeights<f64> = ModelWeights::init(config, 11).unwrap();
        let fusion = weights.layout.blocks[0].fusion;
        let mut rng = Prng::new(12);
        for _ in 0..10 {
            let f_l = Tensor::from_fn(vec![2, 3, 4, 8], |_| rng.uniform(-2.0, 2.0));
            let f_g = Tensor::from_fn(vec![2, 3, 4, 8], |_| rng.uniform(-2.0, 2.0));
            let mut tape = Tape::new();
            let bound = weights.bind(&mut tape);
            let a = tape.leaf(f_l);
            let b = tape.leaf(f_g);
            let (_, alphas) = adaptive_fusion(&mut tape, a, b, &fusion, &bound).unwrap();
            for pair in tape.value(alphas).data().chunks(2) {
                assert!((pair[0] + pair[1] - 1.0).abs() < 1e-6);
                assert!(pair[0] >= 0.0 && pair[1] >= 0.0);
            }
        }
    }

    #[test]
    fn config_validation_lists_all_problems() {
        let config = ModelConfig {
            n_blocks: 0,
            channels: 7,
            joints: 1,
            ..tiny_config()
        };
        match config.validate() {
            Err(Error::Config(problems)) => {
                assert!(problems.len() >= 3, "{problems:?}");
            }
            other => panic!("expected Config error, got {other:?}"),
        }
    }

    #[test]
    fn embed_rejects_wrong_joint_count() {
        let config = tiny_config();
        let weights: ModelWeights<f64> = ModelWeights::init(config, 13).unwrap();
        let input = Tensor::<f64>::zeros(vec![1, 4, 9, 3]);
        let mut tape = Tape::new();
        let err = forward(&mut tape, &weights, &input).unwrap_err();
        assert!(err.to_string().contains("pos_embed"), "{err}");
    }
}
