//! Verification oracle suites: finite-difference gradient checks, separable
//! kernel equivalence, and metric invariances. The `verify` command runs
//! these and reports machine-readable pass/fail results; the acceptance
//! tests call them directly.

use serde::Serialize;

use crate::conv::{compose_dense_kernel, effective_extent, KernelSpec};
use crate::error::Result;
use crate::metrics::{
    aligned_errors, auc_percent, error_histogram, mpjpe_mm, p_mpjpe_mm, pck_percent,
    procrustes_align, AlignmentMode, PoseSet,
};
use crate::model::loss::total_loss;
use crate::model::params::bind;
use crate::model::{forward, ModelConfig, ModelWeights};
use crate::rng::Prng;
use crate::scalar::Scalar;
use crate::ssrformer::{ssra_cascade, Orientation, SsraRef};
use crate::tape::{Tape, TenId};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    fn new(suite: &str, checks: Vec<Check>) -> Self {
        SuiteReport {
            suite: suite.to_string(),
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    }
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check { name: name.to_string(), passed, detail }
}

// ── Finite differences ──────────────────────────────────────────────────

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Checks the analytic gradient of `build` (mapping leaf tensors to a scalar
/// loss) against central differences over every input coordinate. Returns
/// the maximum relative error.
pub fn finite_diff_check(
    inputs: &[Tensor<f64>],
    build: &dyn Fn(&mut Tape<f64>, &[TenId]) -> Result<TenId>,
) -> Result<f64> {
    let eval = |tensors: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<TenId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &ids)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let ids: Vec<TenId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    tape.backward(loss)?;

    let mut worst = 0.0f64;
    for (which, input) in inputs.iter().enumerate() {
        let analytic = tape.grad(ids[which]).expect("backward ran");
        for coord in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[which].data_mut()[coord] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[which].data_mut()[coord] -= FD_STEP;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[coord], numeric));
        }
    }
    Ok(worst)
}

fn random_tensor(rng: &mut Prng, shape: Vec<usize>) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(-1.5, 1.5))
}

/// Weighted sum of an output node: a scalar loss with non-uniform adjoints.
fn probe_loss(tape: &mut Tape<f64>, out: TenId, rng: &mut Prng) -> Result<TenId> {
    let probe = Tensor::from_fn(tape.shape(out).to_vec(), |_| rng.uniform(-1.0, 1.0));
    let probe_id = tape.leaf(probe);
    let weighted = tape.hadamard(out, probe_id)?;
    Ok(tape.sum_all(weighted))
}

struct PrimitiveCase {
    name: &'static str,
    /// Builds (inputs, loss builder seed) for one instance.
    run: Box<dyn Fn(u64) -> Result<f64>>,
}

fn primitive_cases() -> Vec<PrimitiveCase> {
    let case = |name: &'static str,
                inputs: Box<dyn Fn(&mut Prng) -> Vec<Tensor<f64>>>,
                apply: Box<dyn Fn(&mut Tape<f64>, &[TenId]) -> Result<TenId>>|
     -> PrimitiveCase {
        PrimitiveCase {
            name,
            run: Box::new(move |seed: u64| {
                let mut rng = Prng::derive(seed, 0xF0 + name.len() as u64);
                let tensors = inputs(&mut rng);
                let probe_rng = Prng::derive(seed, 0xBEEF);
                finite_diff_check(&tensors, &|tape, ids| {
                    let out = apply(tape, ids)?;
                    probe_loss(tape, out, &mut probe_rng.clone())
                })
            }),
        }
    };

    vec![
        case(
            "add_broadcast",
            Box::new(|rng| vec![random_tensor(rng, vec![2, 3, 4]), random_tensor(rng, vec![1, 4])]),
            Box::new(|tape, ids| tape.add(ids[0], ids[1])),
        ),
        case(
            "sub",
            Box::new(|rng| vec![random_tensor(rng, vec![3, 4]), random_tensor(rng, vec![3, 4])]),
            Box::new(|tape, ids| tape.sub(ids[0], ids[1])),
        ),
        case(
            "scale",
            Box::new(|rng| vec![random_tensor(rng, vec![5, 2])]),
            Box::new(|tape, ids| Ok(tape.scale(ids[0], -0.7))),
        ),
        case(
            "hadamard_broadcast",
            Box::new(|rng| vec![random_tensor(rng, vec![2, 3, 4]), random_tensor(rng, vec![2, 3, 1])]),
            Box::new(|tape, ids| tape.hadamard(ids[0], ids[1])),
        ),
        case(
            "matmul",
            Box::new(|rng| vec![random_tensor(rng, vec![3, 4]), random_tensor(rng, vec![4, 2])]),
            Box::new(|tape, ids| tape.matmul(ids[0], ids[1])),
        ),
        case(
            "matmul_batched",
            Box::new(|rng| vec![random_tensor(rng, vec![2, 2, 3, 4]), random_tensor(rng, vec![2, 2, 4, 3])]),
            Box::new(|tape, ids| tape.matmul(ids[0], ids[1])),
        ),
        case(
            "linear_bias",
            Box::new(|rng| {
                vec![
                    random_tensor(rng, vec![2, 3, 4]),
                    random_tensor(rng, vec![4, 3]),
                    random_tensor(rng, vec![3]),
                ]
            }),
            Box::new(|tape, ids| tape.linear(ids[0], ids[1], Some(ids[2]))),
        ),
        case(
            "softmax_last",
            Box::new(|rng| vec![random_tensor(rng, vec![3, 5])]),
            Box::new(|tape, ids| tape.softmax_last(ids[0])),
        ),
        case(
            "layer_norm",
            Box::new(|rng| {
                vec![
                    random_tensor(rng, vec![4, 6]),
                    random_tensor(rng, vec![6]),
                    random_tensor(rng, vec![6]),
                ]
            }),
            Box::new(|tape, ids| tape.layer_norm(ids[0], ids[1], ids[2], 1e-5)),
        ),
        case(
            "gelu",
            Box::new(|rng| vec![random_tensor(rng, vec![4, 5])]),
            Box::new(|tape, ids| Ok(tape.gelu(ids[0]))),
        ),
        case(
            "tanh",
            Box::new(|rng| vec![random_tensor(rng, vec![4, 5])]),
            Box::new(|tape, ids| Ok(tape.tanh(ids[0]))),
        ),
        case(
            "norm_last",
            Box::new(|rng| vec![random_tensor(rng, vec![4, 3])]),
            Box::new(|tape, ids| tape.norm_last(ids[0])),
        ),
        case(
            "concat_last",
            Box::new(|rng| vec![random_tensor(rng, vec![2, 3]), random_tensor(rng, vec![2, 5])]),
            Box::new(|tape, ids| tape.concat_last(ids[0], ids[1])),
        ),
        case(
            "slice_axis",
            Box::new(|rng| vec![random_tensor(rng, vec![2, 6, 3])]),
            Box::new(|tape, ids| tape.slice_axis(ids[0], 1, 1, 4)),
        ),
        case(
            "pad_axis",
            Box::new(|rng| vec![random_tensor(rng, vec![2, 3, 2])]),
            Box::new(|tape, ids| tape.pad_axis(ids[0], 1, 2, 1)),
        ),
        case(
            "permute",
            Box::new(|rng| vec![random_tensor(rng, vec![2, 3, 4])]),
            Box::new(|tape, ids| tape.permute(ids[0], &[2, 0, 1])),
        ),
        case(
            "reshape",
            Box::new(|rng| vec![random_tensor(rng, vec![2, 6])]),
            Box::new(|tape, ids| tape.reshape(ids[0], vec![3, 4])),
        ),
        case(
            "depthwise_conv_joint",
            Box::new(|rng| vec![random_tensor(rng, vec![1, 3, 7, 2]), random_tensor(rng, vec![2, 3])]),
            Box::new(|tape, ids| tape.depthwise_conv1d(ids[0], ids[1], 2, 1)),
        ),
        case(
            "depthwise_conv_temporal_dilated",
            Box::new(|rng| vec![random_tensor(rng, vec![1, 8, 3, 2]), random_tensor(rng, vec![2, 3])]),
            Box::new(|tape, ids| tape.depthwise_conv1d(ids[0], ids[1], 1, 2)),
        ),
    ]
}

/// Gradient check of every primitive over `instances` random instances.
pub fn grad_primitive_checks(instances: usize) -> Vec<Check> {
    primitive_cases()
        .iter()
        .map(|case| {
            let mut worst = 0.0f64;
            let mut failure = None;
            for i in 0..instances {
                match (case.run)(i as u64) {
                    Ok(err) => worst = worst.max(err),
                    Err(e) => {
                        failure = Some(e.to_string());
                        break;
                    }
                }
            }
            match failure {
                Some(msg) => check(&format!("grad.{}", case.name), false, msg),
                None => check(
                    &format!("grad.{}", case.name),
                    worst <= FD_TOLERANCE,
                    format!("max relative error {worst:.3e} over {instances} instances"),
                ),
            }
        })
        .collect()
}

/// Configuration of the end-to-end gradient check: one block, narrow widths.
pub fn grad_check_config() -> ModelConfig {
    ModelConfig {
        n_blocks: 1,
        channels: 8,
        repr_channels: 8,
        frames: 4,
        joints: 5,
        kernel: KernelSpec { k1: 7, d1: 2, k2: Some(7), d2: Some(2) },
        heads: 2,
        mlp_ratio: 2,
        lambda_velocity: 0.7,
        literal_sigma: true,
        reduction: crate::model::loss::Reduction::Mean,
        output_scale_mm: 1000.0,
    }
}

/// End-to-end finite-difference check on the tiny configuration: at least
/// `min_samples` parameter coordinates, spanning every parameter tensor.
/// Returns (max relative error, samples checked, parameter tensors spanned).
pub fn grad_end_to_end(min_samples: usize, seed: u64) -> Result<(f64, usize, usize)> {
    let config = grad_check_config();
    let weights: ModelWeights<f64> = ModelWeights::init(config, seed)?;
    let mut rng = Prng::derive(seed, 0xE2E);
    let input = Tensor::from_fn(vec![1, config.frames, config.joints, 3], |_| {
        rng.uniform(-1.0, 1.0)
    });
    let target = Tensor::from_fn(vec![1, config.frames, config.joints, 3], |_| {
        rng.uniform(-30.0, 30.0)
    });

    let loss_of = |w: &ModelWeights<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let (_, out) = forward(&mut tape, w, &input)?;
        let t = tape.leaf(target.clone());
        let nodes = total_loss(
            &mut tape,
            out.prediction,
            t,
            config.lambda_velocity,
            config.reduction,
            None,
        )?;
        Ok(tape.value(nodes.total).item())
    };

    // Analytic gradients in one pass.
    let mut tape = Tape::new();
    let bound = bind(&weights.store, &mut tape);
    let input_id = tape.leaf(input.clone());
    let out = crate::model::forward_bound(&mut tape, &weights, &bound, input_id)?;
    let t = tape.leaf(target.clone());
    let nodes = total_loss(
        &mut tape,
        out.prediction,
        t,
        config.lambda_velocity,
        config.reduction,
        None,
    )?;
    tape.backward(nodes.total)?;

    let param_count = weights.store.len();
    let per_param = min_samples.div_ceil(param_count);
    let mut worst = 0.0f64;
    let mut samples = 0usize;
    for id in weights.store.ids().collect::<Vec<_>>() {
        let analytic = tape.grad(bound.id(id)).expect("backward ran");
        let numel = weights.store.value(id).numel();
        for _ in 0..per_param.min(numel) {
            let coord = rng.next_below(numel);
            let mut plus = weights.clone();
            plus.store.value_mut(id).data_mut()[coord] += FD_STEP;
            let mut minus = weights.clone();
            minus.store.value_mut(id).data_mut()[coord] -= FD_STEP;
            let numeric = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[coord], numeric));
            samples += 1;
        }
    }
    Ok((worst, samples, param_count))
}

pub fn run_grad_suite() -> SuiteReport {
    let mut checks = grad_primitive_checks(20);
    match grad_end_to_end(200, 17) {
        Ok((worst, samples, params)) => checks.push(check(
            "grad.end_to_end",
            worst <= FD_TOLERANCE && samples >= 200,
            format!(
                "max relative error {worst:.3e} over {samples} sampled coordinates spanning {params} parameter tensors"
            ),
        )),
        Err(e) => checks.push(check("grad.end_to_end", false, e.to_string())),
    }
    SuiteReport::new("grad", checks)
}

// ── Separable kernel equivalence ────────────────────────────────────────

/// Maximum absolute deviation between the halo-padded cascade and the dense
/// composed kernels for one shape, over a random grid. `perturb` shifts one
/// dense tap to prove the comparison has teeth.
pub fn cascade_dense_deviation<T: Scalar>(
    spec: &KernelSpec,
    orientation: Orientation,
    dims: (usize, usize, usize, usize),
    seed: u64,
    perturb: f64,
) -> Result<f64> {
    let (b, t, j, c) = dims;
    let mut store = crate::model::params::ParamStore::<T>::new();
    let mut rng = Prng::derive(seed, 0xE9);
    let w = SsraRef::build(&mut store, &mut rng, "ssra", c, spec);
    let mut data_rng = Prng::derive(seed, 0xDA7A);
    let x = Tensor::<T>::from_fn(vec![b, t, j, c], |_| T::from_f64(data_rng.uniform(-1.0, 1.0)));

    let mut tape = Tape::new();
    let bound = bind(&store, &mut tape);
    let xid = tape.leaf(x.clone());
    let cascade = ssra_cascade(&mut tape, xid, &w, &bound, spec, orientation)?;

    // Dense path: composed long-axis kernel, then composed short-axis kernel.
    let (long, short) = orientation.axes();
    let mut dense_long = compose_dense_kernel(store.value(w.dw1), store.value(w.dwd1), spec.d1)?;
    if perturb != 0.0 {
        let mid = dense_long.numel() / 2;
        dense_long.data_mut()[mid] += T::from_f64(perturb);
    }
    let dl = tape.leaf(dense_long);
    let x2 = tape.leaf(x);
    let mut dense = tape.depthwise_conv1d(x2, dl, long.index(), 1)?;
    if let (Some(dw2), Some(dwd2)) = (w.dw2, w.dwd2) {
        let dense_short =
            compose_dense_kernel(store.value(dw2), store.value(dwd2), spec.d2.unwrap())?;
        let ds = tape.leaf(dense_short);
        dense = tape.depthwise_conv1d(dense, ds, short.index(), 1)?;
    }

    let mut max_dev = 0.0f64;
    for (a, b) in tape.value(cascade).data().iter().zip(tape.value(dense).data()) {
        max_dev = max_dev.max((a.to_f64() - b.to_f64()).abs());
    }
    Ok(max_dev)
}

pub fn run_equiv_suite(use_f64: bool) -> SuiteReport {
    let mut checks = Vec::new();
    let expected_extents = [(35, Some(35)), (35, Some(11)), (23, Some(7)), (11, Some(11)), (11, None)];
    let shapes = KernelSpec::standard_shapes();
    for (spec, expected) in shapes.iter().zip(expected_extents) {
        let got = spec.extents();
        checks.push(check(
            &format!("equiv.extent.{}x{}", expected.0, expected.1.unwrap_or(1)),
            got == expected && effective_extent(spec.k1, spec.d1) == spec.k1,
            format!("{spec:?} -> extents {got:?}"),
        ));
    }
    let dims = (2, 16, 11, 8);
    let tolerance = if use_f64 { 1e-10 } else { 1e-4 };
    for (i, spec) in shapes.iter().enumerate() {
        for orientation in [Orientation::Spatial, Orientation::Temporal] {
            let name = format!(
                "equiv.cascade.{}x{}.{}",
                spec.extents().0,
                spec.extents().1.unwrap_or(1),
                match orientation {
                    Orientation::Spatial => "spatial",
                    Orientation::Temporal => "temporal",
                }
            );
            let result = if use_f64 {
                cascade_dense_deviation::<f64>(spec, orientation, dims, 100 + i as u64, 0.0)
            } else {
                cascade_dense_deviation::<f32>(spec, orientation, dims, 100 + i as u64, 0.0)
            };
            match result {
                Ok(dev) => checks.push(check(
                    &name,
                    dev <= tolerance,
                    format!("max abs deviation {dev:.3e} (tolerance {tolerance:.0e})"),
                )),
                Err(e) => checks.push(check(&name, false, e.to_string())),
            }
        }
    }
    SuiteReport::new("equiv", checks)
}

// ── Metric invariances ──────────────────────────────────────────────────

fn random_pose_set(rng: &mut Prng, frames: usize, joints: usize, scale: f64) -> PoseSet {
    PoseSet::new(
        frames,
        joints,
        (0..frames * joints * 3).map(|_| rng.uniform(-scale, scale)).collect(),
    )
    .expect("well-formed pose set")
}

pub fn run_metrics_suite() -> SuiteReport {
    let mut checks = Vec::new();
    let mut rng = Prng::new(0x3A11);

    // Procrustes recovers a random similarity transform exactly.
    let mut worst_residual = 0.0f64;
    for _ in 0..25 {
        let gt = random_pose_set(&mut rng, 1, 12, 400.0);
        let theta = rng.uniform(0.0, std::f64::consts::TAU);
        let (s, c) = theta.sin_cos();
        let scale = rng.uniform(0.5, 2.0);
        let shift = [rng.uniform(-300.0, 300.0), rng.uniform(-300.0, 300.0), rng.uniform(-300.0, 300.0)];
        let pred = PoseSet::new(
            1,
            12,
            gt.frame(0)
                .chunks(3)
                .flat_map(|p| {
                    [
                        scale * (c * p[0] - s * p[1]) + shift[0],
                        scale * (s * p[0] + c * p[1]) + shift[1],
                        scale * p[2] + shift[2],
                    ]
                })
                .collect(),
        )
        .unwrap();
        let err = p_mpjpe_mm(&pred, &gt, false).unwrap();
        worst_residual = worst_residual.max(err);
    }
    checks.push(check(
        "metrics.procrustes_recovery",
        worst_residual <= 1e-6 * 400.0,
        format!("worst residual {worst_residual:.3e} mm over 25 random similarity transforms"),
    ));

    // Rotation orthonormality and determinant.
    let gt = random_pose_set(&mut rng, 1, 10, 350.0);
    let pred = PoseSet::new(
        1,
        10,
        gt.frame(0).iter().map(|v| v + rng.normal_scaled(0.0, 25.0)).collect(),
    )
    .unwrap();
    let alignment = procrustes_align(pred.frame(0), gt.frame(0), true);
    let r = alignment.rotation;
    let mut ortho_dev = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
            let expected = if i == j { 1.0 } else { 0.0 };
            ortho_dev = ortho_dev.max((dot - expected).abs());
        }
    }
    let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
        - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
    checks.push(check(
        "metrics.rotation_proper",
        ortho_dev <= 1e-8 && (det - 1.0).abs() <= 1e-8,
        format!("orthonormality deviation {ortho_dev:.3e}, det {det:.12}"),
    ));

    // P2 <= P1 over random clips.
    let mut p2_ok = true;
    let mut detail = String::new();
    for i in 0..20 {
        let gt = random_pose_set(&mut rng, 5, 11, 400.0);
        let pred = PoseSet::new(
            5,
            11,
            gt.frame(0)
                .iter()
                .chain(gt.frame(1))
                .chain(gt.frame(2))
                .chain(gt.frame(3))
                .chain(gt.frame(4))
                .map(|v| v + rng.normal_scaled(0.0, 50.0))
                .collect(),
        )
        .unwrap();
        let p1 = mpjpe_mm(&pred, &gt).unwrap();
        let p2 = p_mpjpe_mm(&pred, &gt, false).unwrap();
        if p2 > p1 + 1e-9 {
            p2_ok = false;
            detail = format!("clip {i}: p2 {p2} > p1 {p1}");
            break;
        }
    }
    checks.push(check(
        "metrics.p2_not_above_p1",
        p2_ok,
        if p2_ok { "p2 <= p1 on 20 random clips".into() } else { detail },
    ));

    // PCK/AUC against exhaustive enumeration; exact predictions score 100.
    let gt = random_pose_set(&mut rng, 4, 9, 300.0);
    let pred = PoseSet::new(
        4,
        9,
        gt.frame(0)
            .iter()
            .chain(gt.frame(1))
            .chain(gt.frame(2))
            .chain(gt.frame(3))
            .map(|v| v + rng.normal_scaled(0.0, 80.0))
            .collect(),
    )
    .unwrap();
    let (errors, _) = aligned_errors(&pred, &gt, AlignmentMode::Root).unwrap();
    let brute_pck =
        100.0 * errors.iter().filter(|&&e| e <= 150.0).count() as f64 / errors.len() as f64;
    let mut brute_auc = 0.0;
    for i in 0..31 {
        let t = 5.0 * i as f64;
        brute_auc += 100.0 * errors.iter().filter(|&&e| e <= t).count() as f64 / errors.len() as f64;
    }
    brute_auc /= 31.0;
    let pck = pck_percent(&pred, &gt, 150.0).unwrap();
    let auc = auc_percent(&pred, &gt).unwrap();
    let exact_pck = pck_percent(&gt, &gt, 150.0).unwrap();
    let exact_auc = auc_percent(&gt, &gt).unwrap();
    checks.push(check(
        "metrics.pck_auc_enumeration",
        pck == brute_pck && (auc - brute_auc).abs() < 1e-12 && exact_pck == 100.0 && exact_auc == 100.0,
        format!("pck {pck} (brute {brute_pck}), auc {auc:.6} (brute {brute_auc:.6}), exact scores ({exact_pck}, {exact_auc})"),
    ));

    // Histogram proportions sum to 1.
    let hist = error_histogram(&pred, &gt, 25.0).unwrap();
    let sum: f64 = hist.proportions.iter().sum();
    checks.push(check(
        "metrics.histogram_normalized",
        (sum - 1.0).abs() <= 1e-9,
        format!("proportions sum to {sum}"),
    ));

    // MPJPE invariance under common translation.
    let shifted = PoseSet::new(
        4,
        9,
        pred.frame(0)
            .iter()
            .chain(pred.frame(1))
            .chain(pred.frame(2))
            .chain(pred.frame(3))
            .enumerate()
            .map(|(i, v)| v + [77.0, -31.0, 12.0][i % 3])
            .collect(),
    )
    .unwrap();
    let base = mpjpe_mm(&pred, &gt).unwrap();
    let moved = mpjpe_mm(&shifted, &gt).unwrap();
    checks.push(check(
        "metrics.translation_invariance",
        (base - moved).abs() <= 1e-9,
        format!("{base} vs {moved} after common translation"),
    ));

    SuiteReport::new("metrics", checks)
}

/// Runs the requested suites ("grad", "equiv", "metrics", or "all").
pub fn run_suites(which: &str, use_f64: bool) -> Result<Vec<SuiteReport>> {
    match which {
        "grad" => Ok(vec![run_grad_suite()]),
        "equiv" => Ok(vec![run_equiv_suite(use_f64)]),
        "metrics" => Ok(vec![run_metrics_suite()]),
        "all" => Ok(vec![run_grad_suite(), run_equiv_suite(use_f64), run_metrics_suite()]),
        other => Err(crate::error::Error::invalid(
            "verify",
            format!("unknown suite {other:?}; expected grad|equiv|metrics|all"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitive_gradients_pass() {
        // A reduced-instance sweep; the full 20-instance sweep runs in the
        // verify command and the acceptance suite.
        for case in primitive_cases() {
            let err = (case.run)(0).unwrap_or_else(|e| panic!("{}: {e}", case.name));
            assert!(err <= FD_TOLERANCE, "{}: relative error {err}", case.name);
        }
    }

    #[test]
    fn tampered_equivalence_fails_loudly() {
        let spec = KernelSpec::long_only(11, 2).unwrap();
        let clean =
            cascade_dense_deviation::<f64>(&spec, Orientation::Spatial, (1, 4, 11, 2), 3, 0.0)
                .unwrap();
        assert!(clean <= 1e-10, "clean deviation {clean}");
        let tampered =
            cascade_dense_deviation::<f64>(&spec, Orientation::Spatial, (1, 4, 11, 2), 3, 0.05)
                .unwrap();
        assert!(tampered > 1e-4, "tampering went undetected: {tampered}");
    }

    #[test]
    fn metrics_suite_passes() {
        let report = run_metrics_suite();
        assert!(report.passed, "{:#?}", report.checks);
    }

    #[test]
    fn unknown_suite_rejected() {
        assert!(run_suites("bogus", false).is_err());
    }
}
