//! Acceptance suite: one test per shipping criterion, each printing a
//! pass/fail line. Run with `cargo test --test acceptance -- --nocapture`
//! to see the lines; any failure fails the build.

use ssrstf::conv::{effective_extent, KernelSpec};
use ssrstf::data::{assemble_batch, epoch_windows, ClipPair, Dataset, PoseClip, SyntheticRig};
use ssrstf::metrics::{
    auc_percent, mpjpe_mm, p_mpjpe_mm, pck_percent, PoseSet,
};
use ssrstf::model::loss::{total_loss, Reduction};
use ssrstf::model::params::bind;
use ssrstf::model::{adaptive_fusion, census, forward, ModelConfig, ModelWeights};
use ssrstf::rng::Prng;
use ssrstf::ssrformer::{ssra_cascade, Orientation, SsraRef};
use ssrstf::tape::Tape;
use ssrstf::tensor::Tensor;
use ssrstf::train::{
    clip_global_norm, eval_mpjpe, train, AdamW, LrSchedule, TrainSettings,
};
use ssrstf::verify;

fn report(criterion: &str, passed: bool, detail: &str) {
    println!(
        "{} criterion {criterion}: {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    assert!(passed, "criterion {criterion} failed: {detail}");
}

/// 1. Cascaded DW->DWD equals the dense composed kernel for every shipped
/// kernel shape, on random (2, 16, 11, 8) grids, within 1e-4 in 32-bit.
#[test]
fn criterion_01_ssra_decomposition_equivalence() {
    let start = std::time::Instant::now();
    let mut worst = 0.0f64;
    for (i, spec) in KernelSpec::standard_shapes().iter().enumerate() {
        for orientation in [Orientation::Spatial, Orientation::Temporal] {
            let dev = verify::cascade_dense_deviation::<f32>(
                spec,
                orientation,
                (2, 16, 11, 8),
                1000 + i as u64,
                0.0,
            )
            .unwrap();
            worst = worst.max(dev);
        }
    }
    let elapsed = start.elapsed();
    report(
        "1 (SSRA decomposition equivalence)",
        worst <= 1e-4 && elapsed.as_secs() < 60,
        &format!("max abs deviation {worst:.3e} over 5 shapes x 2 orientations in {elapsed:.2?}"),
    );
}

/// 2. Effective extents reproduce all five shipped kernel shapes exactly.
#[test]
fn criterion_02_effective_extent_exactness() {
    let shapes = KernelSpec::standard_shapes();
    let extents: Vec<_> = shapes.iter().map(|s| s.extents()).collect();
    let expected = vec![
        (35, Some(35)),
        (35, Some(11)),
        (23, Some(7)),
        (11, Some(11)),
        (11, None),
    ];
    let pairwise = [(35, 3), (11, 2), (23, 3), (7, 2)]
        .iter()
        .all(|&(k, d)| effective_extent(k, d) == k);
    report(
        "2 (effective-extent exactness)",
        extents == expected && pairwise,
        &format!("extents {extents:?}"),
    );
}

/// 3. End-to-end finite-difference gradient check on the tiny configuration,
/// at least 200 sampled parameters spanning every group, 64-bit.
#[test]
fn criterion_03_gradient_integrity() {
    let start = std::time::Instant::now();
    let (worst, samples, groups) = verify::grad_end_to_end(200, 2024).unwrap();
    let elapsed = start.elapsed();
    report(
        "3 (gradient integrity)",
        worst <= 1e-4 && samples >= 200 && elapsed.as_secs() < 300,
        &format!(
            "max relative error {worst:.3e} over {samples} coordinates spanning {groups} parameter tensors in {elapsed:.2?}"
        ),
    );
}

/// 4. Fusion weights sum to 1 at every position for 100 random draws.
#[test]
fn criterion_04_fusion_normalization() {
    let config = ModelConfig {
        n_blocks: 1,
        channels: 8,
        repr_channels: 8,
        frames: 3,
        joints: 4,
        kernel: KernelSpec::long_only(11, 2).unwrap(),
        heads: 2,
        mlp_ratio: 2,
        lambda_velocity: 1.0,
        literal_sigma: true,
        reduction: Reduction::Mean,
        output_scale_mm: 1000.0,
    };
    let mut rng = Prng::new(404);
    let mut worst = 0.0f64;
    for draw in 0..100 {
        let weights: ModelWeights<f32> = ModelWeights::init(config, draw).unwrap();
        let fusion = weights.layout.blocks[0].fusion;
        let f_l = Tensor::<f32>::from_fn(vec![2, 3, 4, 8], |_| rng.uniform(-3.0, 3.0) as f32);
        let f_g = Tensor::<f32>::from_fn(vec![2, 3, 4, 8], |_| rng.uniform(-3.0, 3.0) as f32);
        let mut tape = Tape::new();
        let bound = bind(&weights.store, &mut tape);
        let a = tape.leaf(f_l);
        let b = tape.leaf(f_g);
        let (_, alphas) = adaptive_fusion(&mut tape, a, b, &fusion, &bound).unwrap();
        for pair in tape.value(alphas).data().chunks(2) {
            worst = worst.max(((pair[0] + pair[1]) as f64 - 1.0).abs());
            assert!(pair[0] >= 0.0 && pair[1] >= 0.0);
        }
    }
    report(
        "4 (fusion normalization)",
        worst <= 1e-6,
        &format!("max |alpha_L + alpha_G - 1| = {worst:.3e} over 100 draws"),
    );
}

/// 5. Receptive-field locality: spatial SSRA with {11, 2, -, -} is exactly
/// unaffected by perturbations beyond joint offset 5.
#[test]
fn criterion_05_receptive_field_locality() {
    let spec = KernelSpec::long_only(11, 2).unwrap();
    let channels = 4;
    let joints = 17;
    let frames = 3;
    let mut store = ssrstf::model::params::ParamStore::<f32>::new();
    let mut rng = Prng::new(505);
    let w = SsraRef::build(&mut store, &mut rng, "ssra", channels, &spec);
    let x = Tensor::<f32>::from_fn(vec![1, frames, joints, channels], |_| {
        rng.uniform(-1.0, 1.0) as f32
    });
    let run = |input: &Tensor<f32>| {
        let mut tape = Tape::new();
        let bound = bind(&store, &mut tape);
        let xid = tape.leaf(input.clone());
        let y = ssra_cascade(&mut tape, xid, &w, &bound, &spec, Orientation::Spatial).unwrap();
        tape.value(y).data().to_vec()
    };
    let base = run(&x);
    // Perturb every joint at offset > 5 from the probe (joint 0).
    let mut perturbed = x.clone();
    for t in 0..frames {
        for j in 6..joints {
            for c in 0..channels {
                perturbed.data_mut()[((t * joints) + j) * channels + c] += 7.5;
            }
        }
    }
    let changed = run(&perturbed);
    let mut max_probe_delta = 0.0f32;
    for t in 0..frames {
        for c in 0..channels {
            let idx = (t * joints) * channels + c;
            max_probe_delta = max_probe_delta.max((base[idx] - changed[idx]).abs());
        }
    }
    // Offset exactly 5 must still reach the probe.
    let mut near = x.clone();
    near.data_mut()[5 * channels] += 7.5;
    let near_out = run(&near);
    let near_reaches = near_out[0] != base[0];
    report(
        "5 (receptive-field locality)",
        max_probe_delta == 0.0 && near_reaches,
        &format!("probe delta {max_probe_delta} beyond radius; offset-5 influence present: {near_reaches}"),
    );
}

fn overfit_config() -> ModelConfig {
    ModelConfig {
        n_blocks: 4,
        channels: 64,
        repr_channels: 128,
        frames: 27,
        joints: 17,
        kernel: KernelSpec::new(11, 2, Some(11), Some(2)).unwrap(),
        heads: 4,
        mlp_ratio: 2,
        lambda_velocity: 1.0,
        literal_sigma: true,
        reduction: Reduction::Mean,
        output_scale_mm: 1000.0,
    }
}

fn overfit_dataset(config: &ModelConfig) -> Dataset {
    let rig = SyntheticRig::human17(3);
    let pairs = (0..8)
        .map(|i| {
            let (input_2d, target_3d) = rig.generate_pair(i, config.frames).unwrap();
            ClipPair { id: format!("clip{i}"), input_2d, target_3d }
        })
        .collect();
    Dataset::from_pairs(pairs).unwrap()
}

/// Mean total loss over one deterministic epoch of the training windows.
fn mean_total_loss(weights: &ModelWeights<f32>, data: &Dataset) -> f64 {
    let config = weights.config;
    let windows = epoch_windows(data, config.frames, 0, 0);
    let mut sum = 0.0;
    let mut batches = 0.0;
    for chunk in windows.chunks(2) {
        let batch = assemble_batch::<f32>(data, chunk, config.frames);
        let mut tape = Tape::new();
        let (_, out) = forward(&mut tape, weights, &batch.input_2d).unwrap();
        let target = tape.leaf(batch.target_3d.clone());
        let mask = tape.leaf(batch.frame_mask.clone());
        let nodes = total_loss(
            &mut tape,
            out.prediction,
            target,
            config.lambda_velocity,
            config.reduction,
            Some(mask),
        )
        .unwrap();
        sum += nodes.values(&tape).total;
        batches += 1.0;
    }
    sum / batches
}

/// 6. Synthetic overfit: the small-ish configuration trained on 8 clips for
/// at most 1000 steps cuts training MPJPE by >= 90% and total loss by >= 10x.
#[test]
fn criterion_06_synthetic_overfit() {
    let start = std::time::Instant::now();
    let config = overfit_config();
    let data = overfit_dataset(&config);
    let mut weights = ModelWeights::<f32>::init(config, 12).unwrap();

    let initial_mpjpe = eval_mpjpe(&weights, &data).unwrap();
    let initial_loss = mean_total_loss(&weights, &data);

    let settings = TrainSettings {
        epochs: 250,
        batch_size: 2,
        schedule: LrSchedule { initial: 4e-3, decay: 1.0 },
        weight_decay: 0.0,
        grad_clip: Some(1.0),
        seed: 1,
        max_steps: Some(1000),
        eval_every: 50,
    };
    let result = train(&mut weights, &data, None, &settings, None, |_| Ok(())).unwrap();

    let final_mpjpe = eval_mpjpe(&weights, &data).unwrap();
    let final_loss = mean_total_loss(&weights, &data);
    let reduction = 1.0 - final_mpjpe / initial_mpjpe;
    let loss_ratio = initial_loss / final_loss;
    let elapsed = start.elapsed();
    report(
        "6 (synthetic overfit)",
        result.global_step <= 1000
            && reduction >= 0.90
            && loss_ratio >= 10.0
            && elapsed.as_secs() < 1800,
        &format!(
            "{} steps: MPJPE {initial_mpjpe:.1} -> {final_mpjpe:.1} mm ({:.1}% reduction), loss {initial_loss:.1} -> {final_loss:.1} ({loss_ratio:.1}x) in {elapsed:.0?}",
            result.global_step,
            100.0 * reduction
        ),
    );
}

/// 7. Metric oracles: Procrustes recovers transformed copies exactly,
/// P2 <= P1, PCK/AUC match exhaustive enumeration, exact predictions score
/// 100.
#[test]
fn criterion_07_metrics_oracles() {
    let mut rng = Prng::new(707);
    let mut ok = true;
    let mut details = Vec::new();

    // Rotated + translated + scaled ground truth aligns to zero error.
    let gt = PoseSet::new(
        4,
        17,
        (0..4 * 17 * 3).map(|_| rng.uniform(-500.0, 500.0)).collect(),
    )
    .unwrap();
    let theta = 1.1f64;
    let (s, c) = theta.sin_cos();
    let transformed = PoseSet::new(
        4,
        17,
        gt_frames(&gt)
            .chunks(3)
            .flat_map(|p| {
                [
                    1.7 * (c * p[0] - s * p[1]) + 120.0,
                    1.7 * (s * p[0] + c * p[1]) - 60.0,
                    1.7 * p[2] + 200.0,
                ]
            })
            .collect(),
    )
    .unwrap();
    let residual = p_mpjpe_mm(&transformed, &gt, false).unwrap();
    if residual > 1e-6 * 500.0 {
        ok = false;
    }
    details.push(format!("similarity-transform residual {residual:.3e} mm"));

    // P2 <= P1 on random clips.
    let mut p2_violation = None;
    for i in 0..25 {
        let gt = PoseSet::new(
            3,
            17,
            (0..3 * 17 * 3).map(|_| rng.uniform(-400.0, 400.0)).collect(),
        )
        .unwrap();
        let pred = PoseSet::new(
            3,
            17,
            gt_frames(&gt).iter().map(|v| v + rng.normal_scaled(0.0, 60.0)).collect(),
        )
        .unwrap();
        let p1 = mpjpe_mm(&pred, &gt).unwrap();
        let p2 = p_mpjpe_mm(&pred, &gt, false).unwrap();
        if p2 > p1 + 1e-9 {
            p2_violation = Some((i, p1, p2));
        }
    }
    if let Some((i, p1, p2)) = p2_violation {
        ok = false;
        details.push(format!("clip {i}: p2 {p2} > p1 {p1}"));
    } else {
        details.push("p2 <= p1 on 25 random clips".into());
    }

    // PCK/AUC versus exhaustive enumeration.
    let gt2 = PoseSet::new(
        5,
        9,
        (0..5 * 9 * 3).map(|_| rng.uniform(-300.0, 300.0)).collect(),
    )
    .unwrap();
    let pred2 = PoseSet::new(
        5,
        9,
        gt_frames(&gt2).iter().map(|v| v + rng.normal_scaled(0.0, 90.0)).collect(),
    )
    .unwrap();
    let (errors, _) = ssrstf::metrics::aligned_errors(
        &pred2,
        &gt2,
        ssrstf::metrics::AlignmentMode::Root,
    )
    .unwrap();
    let brute_pck =
        100.0 * errors.iter().filter(|&&e| e <= 150.0).count() as f64 / errors.len() as f64;
    let mut brute_auc = 0.0;
    for i in 0..31 {
        let t = 5.0 * i as f64;
        brute_auc +=
            100.0 * errors.iter().filter(|&&e| e <= t).count() as f64 / errors.len() as f64;
    }
    brute_auc /= 31.0;
    let pck = pck_percent(&pred2, &gt2, 150.0).unwrap();
    let auc = auc_percent(&pred2, &gt2).unwrap();
    if pck != brute_pck || (auc - brute_auc).abs() > 1e-12 {
        ok = false;
    }
    details.push(format!("pck {pck:.4} (enum {brute_pck:.4}), auc {auc:.4} (enum {brute_auc:.4})"));

    // Exact predictions.
    let exact_pck = pck_percent(&gt2, &gt2, 150.0).unwrap();
    let exact_auc = auc_percent(&gt2, &gt2).unwrap();
    if exact_pck != 100.0 || exact_auc != 100.0 {
        ok = false;
    }
    details.push(format!("exact scores pck {exact_pck}, auc {exact_auc}"));

    report("7 (metrics oracles)", ok, &details.join("; "));
}

fn gt_frames(set: &PoseSet) -> Vec<f64> {
    (0..set.frames).flat_map(|t| set.frame(t).to_vec()).collect()
}

/// 8. Parameter census: presets within +/-15% of the reported sizes and
/// exactly linear in depth.
#[test]
fn criterion_08_parameter_census() {
    let base = census(&ModelConfig::base());
    let small = census(&ModelConfig::small());
    let base_dev = (base.total as f64 - 36.7e6).abs() / 36.7e6;
    let small_dev = (small.total as f64 - 12.4e6).abs() / 12.4e6;

    let c6 = census(&ModelConfig { n_blocks: 6, ..ModelConfig::base() });
    let c12 = census(&ModelConfig::base());
    let linear = c12.blocks == 2 * c6.blocks && c6.per_block == c12.per_block;

    // The census formula matches a really-built store.
    let config = ModelConfig {
        n_blocks: 2,
        channels: 16,
        repr_channels: 8,
        frames: 4,
        joints: 5,
        heads: 2,
        mlp_ratio: 2,
        ..ModelConfig::base()
    };
    let built: ModelWeights<f32> = ModelWeights::init(config, 0).unwrap();
    let census_matches = census(&config).total == built.store.total_scalars();

    report(
        "8 (parameter census)",
        base_dev <= 0.15 && small_dev <= 0.15 && linear && census_matches,
        &format!(
            "base {:.2}M ({:.1}% off 36.7M), small {:.2}M ({:.1}% off 12.4M), depth-linear {linear}, store-exact {census_matches}",
            base.total as f64 / 1e6,
            100.0 * base_dev,
            small.total as f64 / 1e6,
            100.0 * small_dev
        ),
    );
}

/// 9. Loss identities: zero at equality for any lambda, exact velocity
/// translation-invariance, exact combination for lambda in {0, 0.5, 1}.
#[test]
fn criterion_09_loss_identities() {
    let mut rng = Prng::new(909);
    let x = Tensor::<f64>::from_fn(vec![2, 5, 17, 3], |_| rng.uniform(-300.0, 300.0));
    let mut ok = true;
    let mut details = Vec::new();

    let mut tape = Tape::new();
    let p = tape.leaf(x.clone());
    let t = tape.leaf(x.clone());
    for lambda in [0.0, 0.5, 1.0] {
        let nodes = total_loss(&mut tape, p, t, lambda, Reduction::Sum, None).unwrap();
        let v = nodes.values(&tape);
        if v.total != 0.0 || v.position != 0.0 || v.velocity != 0.0 {
            ok = false;
        }
    }
    details.push("loss(x, x, lambda) = 0 for lambda in {0, 0.5, 1}".into());

    // Constant per-frame offset has exactly zero velocity loss.
    let offset = Tensor::<f64>::from_fn(vec![2, 5, 17, 3], |i| {
        x.data()[i] + [31.0, -17.0, 8.0][i % 3]
    });
    let po = tape.leaf(offset);
    let vel = ssrstf::model::loss::velocity_loss(&mut tape, po, t, Reduction::Sum, None).unwrap();
    let vel_value = tape.value(vel).item();
    if vel_value != 0.0 {
        ok = false;
    }
    details.push(format!("velocity under constant offset = {vel_value}"));

    // Exact combination on random preds.
    let q = Tensor::<f64>::from_fn(vec![2, 5, 17, 3], |_| rng.uniform(-300.0, 300.0));
    let qid = tape.leaf(q);
    for lambda in [0.0, 0.5, 1.0] {
        let nodes = total_loss(&mut tape, qid, t, lambda, Reduction::Sum, None).unwrap();
        let v = nodes.values(&tape);
        if (v.total - (v.position + lambda * v.velocity)).abs() != 0.0 {
            ok = false;
            details.push(format!("combination off at lambda {lambda}"));
        }
    }
    details.push("total = position + lambda * velocity exactly".into());

    report("9 (loss identities)", ok, &details.join("; "));
}

/// 10. Persistence: PSEQ and checkpoint round-trips bit-identical, resumed
/// training matches uninterrupted training, `verify --suite all` exits 0.
#[test]
fn criterion_10_persistence() {
    let mut ok = true;
    let mut details = Vec::new();
    let dir = tempfile::tempdir().unwrap();

    // PSEQ round trip.
    let rig = SyntheticRig::human17(77);
    let (clip2d, clip3d) = rig.generate_pair(0, 9).unwrap();
    let p2d = dir.path().join("c.2d.pseq");
    clip2d.save(&p2d).unwrap();
    let loaded = PoseClip::load(&p2d).unwrap();
    if loaded != clip2d || loaded.encode() != clip2d.encode() {
        ok = false;
    }
    details.push("PSEQ round trip bit-identical".into());

    // Checkpoint round trip preserves forward outputs bit for bit.
    let config = ModelConfig {
        n_blocks: 1,
        channels: 8,
        repr_channels: 8,
        frames: 9,
        joints: 17,
        kernel: KernelSpec::long_only(11, 2).unwrap(),
        heads: 2,
        mlp_ratio: 2,
        lambda_velocity: 1.0,
        literal_sigma: true,
        reduction: Reduction::Mean,
        output_scale_mm: 1000.0,
    };
    let weights = ModelWeights::<f32>::init(config, 5).unwrap();
    let ckpt = dir.path().join("w.ssrw");
    ssrstf::train::save_checkpoint(&ckpt, &weights, None).unwrap();
    let reloaded = ssrstf::train::load_checkpoint(&ckpt).unwrap().weights;
    let input = clip2d
        .to_tensor::<f32>()
        .reshaped(vec![1, clip2d.frames, clip2d.joints, 3])
        .unwrap();
    let mut t1 = Tape::new();
    let mut t2 = Tape::new();
    let (_, o1) = forward(&mut t1, &weights, &input).unwrap();
    let (_, o2) = forward(&mut t2, &reloaded, &input).unwrap();
    if t1.value(o1.prediction).data() != t2.value(o2.prediction).data() {
        ok = false;
    }
    details.push("checkpoint round trip bit-identical".into());

    // Resume equals uninterrupted, through the container.
    let data = Dataset::from_pairs(vec![ClipPair {
        id: "c".into(),
        input_2d: clip2d,
        target_3d: clip3d,
    }])
    .unwrap();
    let settings = TrainSettings {
        epochs: 4,
        batch_size: 1,
        schedule: LrSchedule { initial: 1e-3, decay: 0.99 },
        weight_decay: 0.01,
        grad_clip: Some(1.0),
        seed: 3,
        max_steps: None,
        eval_every: 1,
    };
    let mut w_full = ModelWeights::<f32>::init(config, 5).unwrap();
    train(&mut w_full, &data, None, &settings, None, |_| Ok(())).unwrap();

    let mut w_half = ModelWeights::<f32>::init(config, 5).unwrap();
    let half_settings = TrainSettings { epochs: 2, ..settings.clone() };
    let halfway = dir.path().join("half.ssrw");
    train(&mut w_half, &data, None, &half_settings, None, |snap| {
        if snap.state.epoch == 2 {
            ssrstf::train::save_checkpoint(&halfway, snap.weights, Some((&snap.state, snap.optimizer)))?;
        }
        Ok(())
    })
    .unwrap();
    let loaded = ssrstf::train::load_checkpoint(&halfway).unwrap();
    let mut w_resumed = loaded.weights;
    let (state, optimizer) = loaded.trainer.unwrap();
    let state = ssrstf::train::TrainerState { settings: settings.clone(), ..state };
    train(&mut w_resumed, &data, None, &settings, Some((state, optimizer)), |_| Ok(())).unwrap();
    let resume_ok = w_full
        .store
        .values()
        .iter()
        .zip(w_resumed.store.values())
        .all(|(a, b)| a.data() == b.data());
    if !resume_ok {
        ok = false;
    }
    details.push(format!("resumed training bit-identical: {resume_ok}"));

    // The verify binary exits 0 on a clean build.
    let output = std::process::Command::new(env!("CARGO_BIN_EXE_ssrstf"))
        .args(["verify", "--suite", "all"])
        .output()
        .expect("verify binary runs");
    if !output.status.success() {
        ok = false;
        details.push(format!(
            "verify exited {:?}: {}",
            output.status.code(),
            String::from_utf8_lossy(&output.stderr)
        ));
    } else {
        details.push("verify --suite all exit 0".into());
    }

    report("10 (persistence)", ok, &details.join("; "));
}

/// Gradient clipping helper referenced by the trainer is exercised here so
/// the acceptance target is self-contained.
#[test]
fn clip_norm_sanity() {
    let mut grads = vec![vec![3.0f32], vec![4.0f32]];
    let norm = clip_global_norm(&mut grads, 1.0);
    assert!((norm - 5.0).abs() < 1e-6);
    let _ = AdamW::<f32>::new(&ssrstf::model::params::ParamStore::new(), 0.0);
}
