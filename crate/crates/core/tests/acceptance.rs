//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! `SACC_ACCEPTANCE_ONLY=1,4` restricts the run to the listed criteria.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use sacc_core::compositor::{compose_image, compose_layout, ObjectAsset};
use sacc_core::data::{generate_dataset, generate_toy_scene, make_training_example, Dataset, Split, ToyConfig};
use sacc_core::eval::{evaluate, load_examples, placement_is_valid, Baseline, EvalConfig, EvalReport};
use sacc_core::geometry::{warp_mask, warp_param_gradient, warp_to_scene, NormalizedFrame, Transform2D};
use sacc_core::losses::{affine_gan_losses, kl_divergence, layout_gan_losses, Ablation, LossWeights};
use sacc_core::model::{ModelConfig, ModelState, Nets};
use sacc_core::nn::{Graph, Tensor};
use sacc_core::trainer::{fit, TrainConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(floor)
}

// ---------------------------------------------------------------- criterion 1

/// Independent scalar resampler: output pixel centre -> patch pixel coordinate -> bilinear, zero outside.
fn brute_force_warp(src: &Array3<f64>, t: [f64; 3], w: usize, h: usize) -> Array3<f64> {
    let (c, p, _) = src.dim();
    let half_h = h as f64 / 2.0;
    let rho = p as f64 / h as f64;
    let read = |ch: usize, y: i64, x: i64| -> f64 {
        if x < 0 || y < 0 || x >= p as i64 || y >= p as i64 {
            0.0
        } else {
            src[[ch, y as usize, x as usize]]
        }
    };
    Array3::from_shape_fn((c, h, w), |(ch, v, u)| {
        let qx = (u as f64 + 0.5 - w as f64 / 2.0) / half_h;
        let qy = (v as f64 + 0.5 - h as f64 / 2.0) / half_h;
        let px = (qx - t[1]) / (t[0] * rho);
        let py = (qy - t[2]) / (t[0] * rho);
        let fx = (px + 1.0) / 2.0 * p as f64 - 0.5;
        let fy = (py + 1.0) / 2.0 * p as f64 - 0.5;
        let (x0, y0) = (fx.floor(), fy.floor());
        let (ax, ay) = (fx - x0, fy - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        read(ch, y0, x0) * (1.0 - ax) * (1.0 - ay)
            + read(ch, y0, x0 + 1) * ax * (1.0 - ay)
            + read(ch, y0 + 1, x0) * (1.0 - ax) * ay
            + read(ch, y0 + 1, x0 + 1) * ax * ay
    })
}

fn random_case(rng: &mut ChaCha8Rng) -> (Array3<f64>, [f64; 3], usize, usize) {
    let c = rng.gen_range(1..=3);
    let p = rng.gen_range(4..=16);
    let src = Array3::from_shape_fn((c, p, p), |_| rng.gen::<f64>());
    let (w, h) = (rng.gen_range(8..=40), rng.gen_range(8..=40));
    let t = [
        rng.gen_range(0.2..3.0),
        rng.gen_range(-1.5..1.5),
        rng.gen_range(-1.5..1.5),
    ];
    (src, t, w, h)
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut max_diff = 0.0f64;
    for _ in 0..200 {
        let (src, t, w, h) = random_case(&mut rng);
        let tr = Transform2D::from_params(t).unwrap();
        let ours = warp_to_scene(src.view(), &tr, NormalizedFrame::new(w, h).unwrap()).unwrap();
        let oracle = brute_force_warp(&src, t, w, h);
        max_diff = ours
            .iter()
            .zip(oracle.iter())
            .fold(max_diff, |m, (a, b)| m.max((a - b).abs()));
    }

    // Sampler gradient against central differences of sum(upstream * warp).
    let mut sampler_err = 0.0f64;
    let fd_h = 1e-6;
    for _ in 0..100 {
        let (src, t, w, h) = random_case(&mut rng);
        let frame = NormalizedFrame::new(w, h).unwrap();
        let up = Array3::from_shape_fn((src.dim().0, h, w), |_| rng.gen_range(-1.0..1.0));
        let f = |t: [f64; 3]| -> f64 {
            let out = brute_force_warp(&src, t, w, h);
            out.iter().zip(up.iter()).map(|(a, b)| a * b).sum()
        };
        let g = warp_param_gradient(src.view(), &Transform2D::from_params(t).unwrap(), frame, up.view()).unwrap();
        for k in 0..3 {
            let (mut a, mut b) = (t, t);
            a[k] += fd_h;
            b[k] -= fd_h;
            let num = (f(a) - f(b)) / (2.0 * fd_h);
            sampler_err = sampler_err.max(rel_err(g[k], num, 1e-3));
        }
    }

    // Full chain: G input -> transform -> warp -> layout paste -> D_layout -> generator loss.
    let mut state = ModelState::init(ModelConfig {
        layout_side: 32,
        patch_side: 32,
        lay_widths: vec![8, 8, 8],
        obj_widths: vec![4, 8],
        dlay_widths: vec![8, 16, 16],
        init_seed: 3,
        ..ModelConfig::default()
    })
    .unwrap();
    for t in state.params_mut().values_mut() {
        t.data_mut().iter_mut().for_each(|v| *v *= 8.0);
    }
    let cfg = state.config().clone();
    let scene = generate_toy_scene(2, 0, &ToyConfig::default()).unwrap();
    let ex = make_training_example(scene, 0, cfg.patch_side).unwrap().unwrap();
    let layout = state.layout_input(&ex.scene.layout).unwrap().cast::<f64>();
    let sil = state.layout_silhouette(&ex.asset).unwrap().cast::<f64>();
    let mut frng = ChaCha8Rng::seed_from_u64(9);
    let f_scene: Vec<f64> = (0..cfg.d_f).map(|_| frng.gen_range(-0.3..0.3)).collect();
    let f_obj: Vec<f64> = (0..cfg.d_o).map(|_| frng.gen_range(-0.3..0.3)).collect();
    let chain = |fs: &[f64]| -> (f64, Vec<f64>) {
        let mut g = Graph::<f64>::new();
        let p = state.bind(&mut g, |_| false);
        let nets = Nets::new(&cfg, &p);
        let fs_n = g.parameter(Tensor::vector(fs.to_vec()));
        let fo_n = g.constant(Tensor::vector(f_obj.clone()));
        let t = nets.generate(&mut g, fs_n, fo_n);
        let sil_n = g.constant(sil.clone());
        let base = g.shared_constant(Arc::new(layout.clone()));
        let comp = nets.layout_composite(&mut g, base, sil_n, t);
        let (_, score) = nets.disc_layout(&mut g, comp);
        let loss = sacc_core::losses::g_loss_node(&mut g, &[score]);
        let grads = g.backward(loss);
        (g.value(loss).item(), grads.get(fs_n).unwrap().to_vec())
    };
    let (_, analytic) = chain(&f_scene);
    let mut chain_err = 0.0f64;
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut checked = 0;
    for k in (0..cfg.d_f).step_by(17) {
        let (mut a, mut b) = (f_scene.clone(), f_scene.clone());
        a[k] += 1e-5;
        b[k] -= 1e-5;
        let num = (chain(&a).0 - chain(&b).0) / 2e-5;
        chain_err = chain_err.max(rel_err(analytic[k], num, 1e-2 * scale));
        checked += 1;
    }
    outcome(
        max_diff <= 1e-6 && sampler_err <= 1e-2 && chain_err <= 5e-2 && scale > 0.0,
        format!(
            "warp vs oracle max |diff| {max_diff:.2e} (<= 1e-6); sampler grad rel err {sampler_err:.2e} (<= 1e-2); \
             full-chain rel err {chain_err:.2e} over {checked} inputs (<= 5e-2)"
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let scene = generate_toy_scene(4, 0, &ToyConfig::default()).unwrap();
    let (_, h, w) = scene.image.dim();
    let frame = NormalizedFrame::new(w, h).unwrap();

    let p = 16;
    let zero = ObjectAsset {
        patch: Array3::zeros((3, p, p)),
        silhouette: Array2::zeros((p, p)),
        edge: Array2::zeros((p, p)),
        class_id: 4,
        source_bbox: None,
    };
    let t = Transform2D::new(1.3, 0.2, -0.1).unwrap();
    let zero_ok = compose_image(scene.image.view(), &zero, &t).unwrap() == scene.image
        && compose_layout(&scene.layout, &zero, &t).unwrap().channels() == scene.layout.channels();

    // Unit mask, s = 1 at the native grid: the centered P x P block is exactly the patch.
    let patch = Array3::from_shape_fn((3, 64, 64), |_| rng.gen::<f32>());
    let unit = ObjectAsset {
        patch: patch.clone(),
        silhouette: Array2::ones((64, 64)),
        edge: Array2::zeros((64, 64)),
        class_id: 4,
        source_bbox: None,
    };
    let out = compose_image(scene.image.view(), &unit, &Transform2D::IDENTITY).unwrap();
    let (u0, v0) = (w / 2 - 32, h / 2 - 32);
    let mut block_diff = 0.0f32;
    for c in 0..3 {
        for y in 0..64 {
            for x in 0..64 {
                block_diff = block_diff.max((out[[c, v0 + y, u0 + x]] - patch[[c, y, x]]).abs());
            }
        }
    }
    let outside_same = (0..h).all(|v| {
        (0..w).all(|u| {
            let inside = (v0..v0 + 64).contains(&v) && (u0..u0 + 64).contains(&u);
            inside || (0..3).all(|c| out[[c, v, u]] == scene.image[[c, v, u]])
        })
    });

    // Random silhouettes and transforms keep one class per pixel.
    let mut excl_fail = 0;
    for i in 0..100 {
        let base = generate_toy_scene(5, i, &ToyConfig::default()).unwrap();
        let side = rng.gen_range(8..=40);
        let sil = Array2::from_shape_fn((side, side), |_| if rng.gen_bool(0.6) { 1.0 } else { 0.0 });
        let asset = ObjectAsset {
            patch: Array3::zeros((3, side, side)),
            silhouette: sil,
            edge: Array2::zeros((side, side)),
            class_id: rng.gen_range(0..5),
            source_bbox: None,
        };
        let t = Transform2D::new(
            rng.gen_range(0.2..4.0),
            rng.gen_range(-1.2..1.2),
            rng.gen_range(-1.2..1.2),
        )
        .unwrap();
        let soft = compose_layout(&base.layout, &asset, &t).unwrap();
        let m = warp_mask(asset.silhouette.view(), &t, frame).unwrap();
        let ch = soft.channels();
        let hard = soft.binarize();
        let ok = (0..h).all(|v| {
            (0..w).all(|u| {
                let col = ch.index_axis(Axis(1), v);
                let vals: Vec<f32> = (0..5).map(|c| col[[c, u]]).collect();
                let sum: f32 = vals.iter().sum();
                let ones = (0..5).filter(|&c| hard.channels()[[c, v, u]] == 1.0).count();
                let tie = (m[[v, u]] - 0.5).abs() < 1e-6;
                (sum - 1.0).abs() <= 1e-6
                    && vals.iter().all(|x| (0.0..=1.0).contains(x))
                    && (ones == 1 || (tie && ones == 0))
            })
        });
        excl_fail += (!ok) as usize;
    }
    outcome(
        zero_ok && block_diff == 0.0 && outside_same && excl_fail == 0,
        format!(
            "zero mask bit-exact: {zero_ok}; unit block max |diff| {block_diff:e}, outside untouched: {outside_same}; \
             exclusivity violations {excl_fail}/100"
        ),
    )
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3() -> Outcome {
    let cfg = ToyConfig::default();
    let (mut worst_mae, mut worst_iou, mut missing) = (0.0f64, 1.0f64, 0);
    for i in 0..100 {
        let scene = generate_toy_scene(33, i, &cfg).unwrap();
        let Some(ex) = make_training_example(scene, i, 64).unwrap() else {
            missing += 1;
            continue;
        };
        let bbox = ex.asset.source_bbox.expect("cropped asset");
        // Cars are convex, so the box center belongs to the selected instance.
        let inst = ex.scene.instance_map[[bbox.v_min + bbox.h / 2, bbox.u_min + bbox.w / 2]];
        let out = compose_image(ex.scene.image.view(), &ex.asset, &ex.t_gt).unwrap();
        let warped = warp_mask(ex.asset.silhouette.view(), &ex.t_gt, ex.scene.frame().unwrap()).unwrap();
        let (mut err, mut n, mut inter, mut union) = (0.0f64, 0usize, 0usize, 0usize);
        for ((v, u), &iv) in ex.scene.instance_map.indexed_iter() {
            let a = iv == inst;
            let b = warped[[v, u]] > 0.5;
            inter += (a && b) as usize;
            union += (a || b) as usize;
            if a {
                for c in 0..3 {
                    err += (out[[c, v, u]] - ex.scene.image[[c, v, u]]).abs() as f64;
                }
                n += 3;
            }
        }
        worst_mae = worst_mae.max(err / n as f64);
        worst_iou = worst_iou.min(inter as f64 / union as f64);
    }
    outcome(
        missing == 0 && worst_mae <= 3.0 / 255.0 && worst_iou >= 0.9,
        format!(
            "100 scenes: worst in-mask MAE {:.3}/255 (<= 3/255), worst IoU {worst_iou:.3} (>= 0.9), scenes without object {missing}",
            worst_mae * 255.0
        ),
    )
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4() -> Outcome {
    let ln2 = std::f64::consts::LN_2;
    let kl0 = kl_divergence(&[0.0; 8], &[0.0; 8]);
    let mut mu = vec![0.0; 8];
    mu[0] = 1.0;
    let kl1 = kl_divergence(&mu, &[0.0; 8]);
    let (da, ga) = affine_gan_losses(&[0.5; 4]);
    let (dl, gl) = layout_gan_losses(&[0.5; 3]);
    let pass = kl0 == 0.0
        && (kl1 - 0.5).abs() <= 1e-12
        && (da - 4.0 * ln2).abs() <= 1e-12
        && (ga - 3.0 * ln2).abs() <= 1e-12
        && (dl - 3.0 * ln2).abs() <= 1e-12
        && (gl - 2.0 * ln2).abs() <= 1e-12;
    outcome(
        pass,
        format!(
            "kl(0,0)={kl0}; kl(e1,0)={kl1}; affine d={:.12}·ln2 g={:.12}·ln2 (3 fakes); layout d={:.12}·ln2 g={:.12}·ln2 (2 fakes)",
            da / ln2,
            ga / ln2,
            dl / ln2,
            gl / ln2
        ),
    )
}

// ---------------------------------------------------------------- criterion 5

const LEARN_SCENES: usize = 625;
const LEARN_VAL_FRACTION: f64 = 0.2;
const LEARN_BUDGET: Duration = Duration::from_secs(45 * 60);

/// Monte-Carlo oracle: uniform translation over the frame, scale uniform over the ground-truth range.
fn random_placement_oracle(examples: &[sacc_core::data::TrainingExample], draws: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let (lo, hi) = examples.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), e| {
        (lo.min(e.t_gt.s), hi.max(e.t_gt.s))
    });
    let mut valid = 0usize;
    for _ in 0..draws {
        let ex = &examples[rng.gen_range(0..examples.len())];
        let aspect = ex.scene.width() as f64 / ex.scene.height() as f64;
        let t = Transform2D::new(
            rng.gen_range(lo..=hi),
            rng.gen_range(-aspect..=aspect),
            rng.gen_range(-1.0..=1.0),
        )
        .unwrap();
        valid += placement_is_valid(ex, &t).unwrap() as usize;
    }
    valid as f64 / draws as f64
}

struct LearnRun {
    report: EvalReport,
    oracle_baseline: f64,
    elapsed: Duration,
}

fn learn_run(work: &Path) -> sacc_core::Result<LearnRun> {
    let ds = generate_dataset(
        &work.join("data"),
        LEARN_SCENES,
        7,
        &ToyConfig::default(),
        LEARN_VAL_FRACTION,
    )?;
    let cfg = TrainConfig {
        seed: 7,
        ..TrainConfig::default()
    };
    let val = load_examples(&ds, Split::Val, cfg.model.patch_side, None)?;
    let oracle_baseline = random_placement_oracle(&val, 4000);
    println!("  criterion 5: random-placement oracle validity {oracle_baseline:.3} (before training)");
    let start = Instant::now();
    let out = fit(cfg, &ds, &work.join("run"))?;
    let elapsed = start.elapsed();
    let state = ModelState::load(&out.model_path)?;
    let report = evaluate(&state, &val, &EvalConfig::default(), Some(Baseline::Random))?;
    std::fs::write(work.join("report.json"), serde_json::to_string_pretty(&report).unwrap()).ok();
    Ok(LearnRun {
        report,
        oracle_baseline,
        elapsed,
    })
}

fn criterion_5(work: &Path) -> Outcome {
    let run = match learn_run(work) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let r = &run.report;
    let m = &r.metrics;
    let base = r.baseline.as_ref().expect("baseline requested");
    let a = m.transform_mae.tx <= 0.05 && m.transform_mae.ty <= 0.05 && m.relative_scale_error <= 0.15;
    let b = m.layout_validity_rate - run.oracle_baseline >= 0.3;
    let gt_r = r.ground_truth_correlation.r;
    let c = gt_r >= 0.95
        && !m.scale_position_correlation.degenerate
        && m.scale_position_correlation.r.signum() == gt_r.signum()
        && m.scale_position_correlation.r.abs() >= 0.6 * gt_r.abs();
    let d = m.frechet_feature_distance < base.metrics.frechet_feature_distance;
    let t = run.elapsed <= LEARN_BUDGET;
    outcome(
        a && b && c && d && t,
        format!(
            "(a) mae tx {:.4} ty {:.4} (<= 0.05), rel scale err {:.3} (<= 0.15): {a}; \
             (b) validity {:.3} vs oracle {:.3} (+0.3): {b}; \
             (c) r {:.3} vs gt r {:.3} (same sign, >= 0.6x): {c}; \
             (d) FD model {:.4} < random {:.4}: {d}; \
             training {:.1} min (<= 45): {t}",
            m.transform_mae.tx,
            m.transform_mae.ty,
            m.relative_scale_error,
            m.layout_validity_rate,
            run.oracle_baseline,
            m.scale_position_correlation.r,
            gt_r,
            m.frechet_feature_distance,
            base.metrics.frechet_feature_distance,
            run.elapsed.as_secs_f64() / 60.0
        ),
    )
}

// ---------------------------------------------------------------- criterion 6

// Half the default schedule on the full training split: long enough for the
// full model to leave its early constant-placement plateau.
const ABLATION_EPOCHS: usize = 15;

fn criterion_6(work: &Path) -> Outcome {
    let root = work.join("data");
    let ds = if root.join("dataset.json").exists() {
        Dataset::open(&root)
    } else {
        generate_dataset(&root, LEARN_SCENES, 7, &ToyConfig::default(), LEARN_VAL_FRACTION)
    };
    let ds = match ds {
        Ok(d) => d,
        Err(e) => return outcome(false, format!("dataset: {e}")),
    };
    let mut rows = BTreeMap::new();
    for a in Ablation::ALL {
        let cfg = TrainConfig {
            seed: 7,
            epochs: ABLATION_EPOCHS,
            weights: LossWeights::default().with_ablation(a),
            ..TrainConfig::default()
        };
        let res = fit(cfg.clone(), &ds, &work.join(format!("ablation_{}", a.as_str())))
            .and_then(|out| ModelState::load(&out.model_path))
            .and_then(|state| {
                let val = load_examples(&ds, Split::Val, cfg.model.patch_side, None)?;
                evaluate(&state, &val, &EvalConfig::default(), None)
            });
        match res {
            Ok(r) => {
                println!(
                    "  criterion 6: {:<12} validity {:.3} r {:.3} degenerate {}",
                    a.as_str(),
                    r.metrics.layout_validity_rate,
                    r.metrics.scale_position_correlation.r,
                    r.metrics.scale_position_correlation.degenerate
                );
                rows.insert(a.as_str(), r);
            }
            Err(e) => return outcome(false, format!("{}: {e}", a.as_str())),
        }
    }
    let full = rows["full"].metrics.layout_validity_rate;
    let singles_ok = ["gan_only", "vae_only", "vae_daffine", "vae_dlayout"]
        .iter()
        .all(|k| full >= rows[k].metrics.layout_validity_rate);
    let gan = &rows["gan_only"].metrics;
    let gan_ok = gan.scale_position_correlation.degenerate || gan.layout_validity_rate <= full;
    let pass = singles_ok && gan_ok;
    let summary: BTreeMap<&str, serde_json::Value> = rows
        .iter()
        .map(|(k, r)| {
            (
                *k,
                serde_json::json!({
                    "layout_validity_rate": r.metrics.layout_validity_rate,
                    "scale_position_correlation": r.metrics.scale_position_correlation,
                    "frechet_feature_distance": r.metrics.frechet_feature_distance,
                }),
            )
        })
        .collect();
    let report = serde_json::json!({ "ordering_holds": pass, "variants": summary });
    std::fs::write(
        work.join("ablation_report.json"),
        serde_json::to_string_pretty(&report).unwrap(),
    )
    .ok();
    outcome(
        pass,
        format!(
            "full validity {full:.3} >= every single-loss variant: {singles_ok}; gan_only degenerate or <= full: {gan_ok}"
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

fn hash_tree(root: &Path) -> String {
    fn walk(dir: &Path, files: &mut Vec<PathBuf>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(&p, files);
            } else {
                files.push(p);
            }
        }
    }
    let mut files = Vec::new();
    walk(root, &mut files);
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(root).unwrap().to_string_lossy().as_bytes());
        h.update(std::fs::read(&f).unwrap());
    }
    format!("{:x}", h.finalize())
}

fn sacc(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_sacc"))
        .args(args)
        .env("RUST_LOG", "warn")
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn pipeline(dir: &Path) -> Option<(String, String, String)> {
    let s = |p: &str| dir.join(p).to_string_lossy().into_owned();
    std::fs::create_dir_all(dir).ok()?;
    let config = serde_json::json!({ "epochs": 2, "seed": 11, "max_train_scenes": 24 });
    std::fs::write(dir.join("config.json"), config.to_string()).ok()?;
    let ok = sacc(&[
        "generate-data",
        "--out",
        &s("data"),
        "--count",
        "120",
        "--seed",
        "11",
        "--size",
        "128",
    ]) && sacc(&[
        "train",
        "--data",
        &s("data"),
        "--out",
        &s("run"),
        "--config",
        &s("config.json"),
    ]) && sacc(&[
        "eval",
        "--model",
        &s("run/model.sacc"),
        "--data",
        &s("data"),
        "--out",
        &s("report.json"),
        "--baseline",
        "random",
        "--samples-per-example",
        "2",
    ]);
    if !ok {
        return None;
    }
    let file_hash = |p: &str| format!("{:x}", Sha256::digest(std::fs::read(dir.join(p)).unwrap()));
    Some((
        hash_tree(&dir.join("data")),
        file_hash("run/metrics.csv"),
        file_hash("report.json"),
    ))
}

fn criterion_7(work: &Path) -> Outcome {
    let a = pipeline(&work.join("a"));
    let b = pipeline(&work.join("b"));
    match (a, b) {
        (Some(a), Some(b)) => outcome(
            a == b,
            format!(
                "data {} / metrics {} / report {} (hash-equal across runs: {}, {}, {})",
                &a.0[..12],
                &a.1[..12],
                &a.2[..12],
                a.0 == b.0,
                a.1 == b.1,
                a.2 == b.2
            ),
        ),
        _ => outcome(false, "a pipeline command failed"),
    }
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("SACC_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let selected = |i: u32| only.as_ref().is_none_or(|o| o.contains(&i));
    let work = tempfile::tempdir().expect("temp dir");
    let learn_dir = work.path().join("learn");

    type Crit<'a> = (u32, &'a str, Box<dyn Fn() -> Outcome + 'a>);
    let criteria: Vec<Crit> = vec![
        (1, "geometry oracle and gradients", Box::new(criterion_1)),
        (2, "composition identities", Box::new(criterion_2)),
        (3, "self-supervision round trip", Box::new(criterion_3)),
        (4, "loss formulas", Box::new(criterion_4)),
        (5, "desk-scale learning", Box::new(|| criterion_5(&learn_dir))),
        (6, "ablation ordering", Box::new(|| criterion_6(&learn_dir))),
        (
            7,
            "end-to-end determinism",
            Box::new(|| criterion_7(&work.path().join("determinism"))),
        ),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !selected(id) {
            println!("SKIP criterion {id}: {name}");
            continue;
        }
        let start = Instant::now();
        let o = run();
        failed += (!o.pass) as usize;
        println!(
            "{} criterion {id}: {name} [{:.1}s] {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
