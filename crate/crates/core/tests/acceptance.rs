//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance` runs all ten; `-- 3 7` runs a subset.
//! Criterion 10 is a throughput target and only reports.

use gp_core::cascade::{detect, train_cascade_mined, CascadeModel, DetectParams, TrainConfig};
use gp_core::codebook::{CodebookModel, CodebookParams};
use gp_core::cpdh::{
    build_cpdh, centroid_of, classify, contour_points, cpdh_distance, ClassifyParams, Gallery, GestureClass,
};
use gp_core::imaging::{to_gray, Frame, GrayImage, IntegralImage, Mask, Rect};
use gp_core::pipeline::kit::{build_kit, KitParams};
use gp_core::pipeline::synth::{pose_mask, render_patch, PatchContent, Pose, Scene};
use gp_core::pipeline::{run_session, GestureEvent, Models, Pipeline, PipelineConfig};
use gp_core::skintrack::{fuse_masks, mean_shift, MeanShiftParams};
use gp_core::telemetry::{
    decode, encode, load_events, rate_schedule, simulate, IndicatorParams, Message, SessionState, SimOptions,
    Supervisor, SupervisorConfig, WireEvent,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Criterion = (u32, &'static str, bool, fn() -> Outcome);

const CRITERIA: [Criterion; 10] = [
    (1, "integral image matches brute force", true, integral_oracle),
    (2, "codebook segmentation", true, codebook_segmentation),
    (3, "toy cascade detection", true, toy_cascade),
    (4, "mean shift convergence", true, mean_shift_convergence),
    (5, "CPDH invariances and gallery accuracy", true, cpdh_invariances),
    (6, "mask fusion inclusion", true, fusion_inclusion),
    (7, "pipeline end to end", true, pipeline_end_to_end),
    (8, "protocol round trip and fuzz", true, protocol),
    (9, "participation ordering and replay", true, participation),
    (10, "throughput >= 15 fps at 320x240", false, throughput),
];

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, hard, run) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = catch_unwind(run).unwrap_or_else(|_| outcome(false, "panicked"));
        let verdict = match (o.pass, hard) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "FAIL (soft, reported only)",
        };
        println!("criterion {id:>2} {verdict}: {name} [{}] ({:.1} s)", o.detail, start.elapsed().as_secs_f64());
        if !o.pass && hard {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} hard criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn integral_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..100 {
        let img = GrayImage::from_fn(64, 64, |_, _| rng.random()).unwrap();
        let ii = IntegralImage::new(&img);
        for _ in 0..1000 {
            let (x, y) = (rng.random_range(0..64), rng.random_range(0..64));
            let (w, h) = (rng.random_range(1..=64 - x), rng.random_range(1..=64 - y));
            let r = Rect::new(x, y, w, h).unwrap();
            let brute: u64 = (y..y + h)
                .flat_map(|yy| (x..x + w).map(move |xx| (xx, yy)))
                .map(|(xx, yy)| img.values()[(yy * 64 + xx) as usize] as u64)
                .sum();
            if ii.rect_sum(r).unwrap() != brute {
                mismatches += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(mismatches == 0 && secs < 10.0, format!("{mismatches} mismatches in 100000 rects, {secs:.2} s"))
}

const CODEBOOK_SCENE: &str = "gpscene 1
frames 300 160 120
seed 11
bg 2 30
hand 30 60 20
pose 100 FIST
pose 200 NONE
move hand 100 199 100 0
";

fn codebook_segmentation() -> Outcome {
    let scene = Scene::parse(CODEBOOK_SCENE).unwrap();
    let mut frames = Vec::new();
    let mut truth = Vec::new();
    for r in scene.frames() {
        let (f, gt) = r.unwrap();
        frames.push(f);
        truth.push(gt.foreground);
    }
    let model = CodebookModel::train(&frames[..100], CodebookParams::default()).unwrap().prune();
    let mut ious: Vec<f64> = (100..200).map(|i| model.subtract(&frames[i]).unwrap().iou(&truth[i])).collect();
    ious.sort_by(f64::total_cmp);
    let (median, min) = ((ious[49] + ious[50]) / 2.0, ious[0]);
    let (mut fp, mut px) = (0, 0);
    for f in &frames[200..300] {
        fp += model.subtract(f).unwrap().count();
        px += (f.width() * f.height()) as usize;
    }
    let rate = fp as f64 / px as f64;
    outcome(
        median >= 0.95 && min >= 0.90 && rate <= 0.01,
        format!("IoU median {median:.4}, min {min:.4}; background FP rate {:.4}%", rate * 100.0),
    )
}

fn background(size: u32, rng: &mut ChaCha8Rng) -> GrayImage {
    to_gray(&render_patch(size, PatchContent::Background, 0.0, 0.0, 0.0, 2.0, rng).unwrap())
}

const BASE: u32 = 24;
const FIST_R: f64 = 9.0;

/// Fist patches on random texture, window-centered with sub-pixel jitter.
fn cascade_positives(rng: &mut ChaCha8Rng) -> Vec<GrayImage> {
    let c = (BASE as f64 - 1.0) / 2.0;
    (0..200)
        .map(|_| {
            let (dx, dy) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let r = FIST_R * rng.random_range(0.9..1.1);
            to_gray(&render_patch(BASE, PatchContent::Hand(Pose::Fist), c + dx, c + dy, r, 2.0, rng).unwrap())
        })
        .collect()
}

/// Keeps up to 1000 negatives per stage: survivors of the previous stages,
/// topped up with windows of fresh background images that the partial
/// cascade still accepts.
fn bootstrap_negatives(model: &CascadeModel, kept: &mut Vec<GrayImage>, rng: &mut ChaCha8Rng) -> Vec<GrayImage> {
    const WANT: usize = 1000;
    let base = Rect::new(0, 0, BASE, BASE).unwrap();
    kept.retain(|p| model.eval_window(&IntegralImage::new(p), base).unwrap().pass);
    let mut images = 0;
    while kept.len() < WANT && images < 400 {
        images += 1;
        let img = background(96, rng);
        let ii = IntegralImage::new(&img);
        for _ in 0..100 {
            let side = rng.random_range(BASE..=60);
            let win = Rect::new(rng.random_range(0..=96 - side), rng.random_range(0..=96 - side), side, side).unwrap();
            if model.eval_window(&ii, win).unwrap().pass {
                kept.push(img.crop(win).unwrap().resize(BASE, BASE).unwrap());
                if kept.len() == WANT {
                    break;
                }
            }
        }
    }
    if kept.len() < 10 {
        Vec::new()
    } else {
        kept.clone()
    }
}

fn toy_cascade() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let positives = cascade_positives(&mut rng);
    let start = Instant::now();
    let mut mine_rng = ChaCha8Rng::seed_from_u64(5);
    let mut kept = Vec::new();
    let cfg = TrainConfig { stages: 8, per_stage_fpr: 0.3, label: "fist".into(), ..TrainConfig::default() };
    let model = match train_cascade_mined(&positives, &cfg, |m| Ok(bootstrap_negatives(m, &mut kept, &mut mine_rng))) {
        Ok(m) => m,
        Err(e) => return outcome(false, format!("training failed: {e}")),
    };
    let train_s = start.elapsed().as_secs_f64();

    let params = DetectParams::default();
    let mut eval = ChaCha8Rng::seed_from_u64(4);
    let clean = (0..100).filter(|_| detect(&model, &background(96, &mut eval), &params).is_empty()).count();

    let mut report = Vec::new();
    let mut ok = true;
    for (step, scale) in [1.0, 1.25, 1.5625].into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let (cx, cy) = (eval.random_range(40.0..80.0), eval.random_range(40.0..80.0));
            let r = FIST_R * scale;
            let img = to_gray(&render_patch(128, PatchContent::Hand(Pose::Fist), cx, cy, r, 2.0, &mut eval).unwrap());
            let expected_side = (BASE as f64 * params.scale_step.powi(step as i32)).round();
            let err = detect(&model, &img, &params)
                .iter()
                .filter(|d| (d.w() as f64 - expected_side).abs() <= 0.15 * expected_side)
                .map(|d| {
                    let (x, y) = d.center();
                    (x - cx).hypot(y - cy)
                })
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(err);
        }
        // away from the base scale the window grid itself is coarser
        ok &= worst <= 2.0 * scale;
        if step == 0 {
            ok &= worst <= 2.0;
        }
        report.push(format!("scale {scale}: worst center error {worst:.2} px"));
    }
    ok &= clean >= 95 && train_s < 60.0;
    outcome(
        ok,
        format!(
            "{} stages, trained in {train_s:.1} s; {}; {clean}/100 negatives clean",
            model.stages.len(),
            report.join(", ")
        ),
    )
}

fn mean_shift_convergence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sigma = 8.0;
    let mut worst = (0.0f64, 0u32);
    let mut failures = 0;
    for _ in 0..50 {
        let (mx, my) = (rng.random_range(50.0..78.0), rng.random_range(50.0..78.0));
        let blob = GrayImage::from_fn(128, 128, |x, y| {
            let d2 = (x as f64 - mx).powi(2) + (y as f64 - my).powi(2);
            (255.0 * (-d2 / (2.0 * sigma * sigma)).exp()).round() as u8
        })
        .unwrap();
        let a = rng.random_range(0.0..TAU);
        let (sx, sy) = (mx + 10.0 * a.cos(), my + 10.0 * a.sin());
        let side = 33;
        let start = Rect::centered_clamped(sx, sy, side, side, 128, 128);
        let r = mean_shift(&blob, start, &MeanShiftParams::default()).unwrap();
        let (cx, cy) = r.window.center();
        let err = (cx - mx).hypot(cy - my);
        worst = (worst.0.max(err), worst.1.max(r.iterations));
        if err > 1.0 || r.iterations > 20 {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!("{failures}/50 failed; worst error {:.2} px, most iterations {}", worst.0, worst.1),
    )
}

fn rotate(pts: &[(f64, f64)], a: f64) -> Vec<(f64, f64)> {
    pts.iter().map(|&(x, y)| (x * a.cos() - y * a.sin(), x * a.sin() + y * a.cos())).collect()
}

/// Points at bin centers with random multiplicities, mirrored through the
/// origin so the centroid stays there, plus a full outer ring setting the
/// circumscribed radius to 1.
fn bin_center_set(rng: &mut ChaCha8Rng, n_rho: usize, n_theta: usize) -> Vec<(f64, f64)> {
    let mut pts = Vec::new();
    for ring in 0..n_rho - 1 {
        for sector in 0..n_theta / 2 {
            let rho = (ring as f64 + 0.5) / n_rho as f64;
            let th = (sector as f64 + 0.5) * TAU / n_theta as f64;
            for _ in 0..rng.random_range(0..4) {
                pts.push((rho * th.cos(), rho * th.sin()));
                pts.push((-rho * th.cos(), -rho * th.sin()));
            }
        }
    }
    for sector in 0..n_theta {
        let th = (sector as f64 + 0.5) * TAU / n_theta as f64;
        pts.push((th.cos(), th.sin()));
    }
    pts
}

fn jittered(points: &[(f64, f64)], rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    points.iter().map(|&(x, y)| (x + rng.random_range(-1.0..=1.0), y + rng.random_range(-1.0..=1.0))).collect()
}

fn cpdh_invariances() -> Outcome {
    let (n_rho, n_theta) = (5, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut problems = Vec::new();

    let mut worst_bin: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(16..200);
        let pts: Vec<(f64, f64)> =
            (0..n).map(|_| (rng.random_range(-50i32..50) as f64, rng.random_range(-50i32..50) as f64)).collect();
        let Ok(a) = build_cpdh(&pts, n_rho, n_theta) else { continue };
        let (dx, dy) = (rng.random_range(-1000i32..1000) as f64, rng.random_range(-1000i32..1000) as f64);
        let k = [0.25, 0.5, 2.0, 4.0, 8.0][rng.random_range(0..5)];
        for other in [
            pts.iter().map(|&(x, y)| (x + dx, y + dy)).collect::<Vec<_>>(),
            pts.iter().map(|&(x, y)| (k * x, k * y)).collect(),
            pts.iter().map(|&(x, y)| (k * x + dx, k * y + dy)).collect(),
        ] {
            let b = build_cpdh(&other, n_rho, n_theta).unwrap();
            for (u, v) in a.bins().iter().zip(b.bins()) {
                worst_bin = worst_bin.max((u - v).abs());
            }
        }
        let (d, shift) = cpdh_distance(&a, &a).unwrap();
        if d != 0.0 || shift != 0 {
            problems.push(format!("d(a,a) = {d}"));
        }
        let q: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0))).collect();
        let b = build_cpdh(&q, n_rho, n_theta).unwrap();
        let asym = (cpdh_distance(&a, &b).unwrap().0 - cpdh_distance(&b, &a).unwrap().0).abs();
        if asym > 1e-12 {
            problems.push(format!("asymmetry {asym:e}"));
        }
    }
    // arbitrary factors on real-valued sets, where no point sits on a bin edge
    for _ in 0..200 {
        let n = rng.random_range(16..200);
        let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0))).collect();
        let a = build_cpdh(&pts, n_rho, n_theta).unwrap();
        let (k, dx, dy) = (rng.random_range(0.1..10.0), rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3));
        let b = build_cpdh(&pts.iter().map(|&(x, y)| (k * x + dx, k * y + dy)).collect::<Vec<_>>(), n_rho, n_theta)
            .unwrap();
        for (u, v) in a.bins().iter().zip(b.bins()) {
            worst_bin = worst_bin.max((u - v).abs());
        }
    }
    if worst_bin > 1e-12 {
        problems.push(format!("translation/scale bin difference {worst_bin:e}"));
    }

    let mut worst_rot: f64 = 0.0;
    let mut wrong_shift = 0;
    for _ in 0..50 {
        let pts = bin_center_set(&mut rng, n_rho, n_theta);
        let a = build_cpdh(&pts, n_rho, n_theta).unwrap();
        let k = rng.random_range(1..n_theta);
        let b = build_cpdh(&rotate(&pts, k as f64 * TAU / n_theta as f64), n_rho, n_theta).unwrap();
        let (d, shift) = cpdh_distance(&a, &b).unwrap();
        worst_rot = worst_rot.max(d);
        // the set is symmetric under a half turn, so shifts agree modulo n/2
        if shift % (n_theta / 2) != k % (n_theta / 2) {
            wrong_shift += 1;
        }
        // the recovered shift must itself be an exact match
        let recheck = build_cpdh(&rotate(&pts, shift as f64 * TAU / n_theta as f64), n_rho, n_theta).unwrap();
        if recheck.bins().iter().zip(b.bins()).any(|(u, v)| (u - v).abs() > 1e-12) {
            wrong_shift += 1;
        }
    }
    if worst_rot > 1e-9 || wrong_shift > 0 {
        problems.push(format!("rotation: worst d {worst_rot:e}, {wrong_shift} wrong shifts"));
    }

    let poses = [Pose::OpenPalm, Pose::Fist, Pose::Point];
    let mut classes = Vec::new();
    let mut shapes = Vec::new();
    for pose in poses {
        let id = pose.class_id().unwrap();
        let pts = contour_points(&pose_mask(pose, 24.0).unwrap()).unwrap();
        let templates = (0..3)
            .map(|i| build_cpdh(&rotate(&pts, (i as f64 - 1.0) * 0.05), n_rho, n_theta).unwrap())
            .collect();
        classes.push(GestureClass { id, name: pose.name().to_string(), templates });
        shapes.push((id, pts));
    }
    let gallery = Gallery::new(n_rho, n_theta, classes).unwrap();
    let params = ClassifyParams { tau: 0.25, ..ClassifyParams::default() };
    let mut correct = 0;
    for i in 0..300 {
        let (id, pts) = &shapes[i % 3];
        let c = centroid_of(pts).unwrap();
        let scale = rng.random_range(0.8..1.25);
        let moved: Vec<_> = pts.iter().map(|&(x, y)| ((x - c.0) * scale + 100.0, (y - c.1) * scale + 80.0)).collect();
        let q = build_cpdh(&jittered(&moved, &mut rng), n_rho, n_theta).unwrap();
        if classify(&q, &gallery, &params).unwrap().class == Some(*id) {
            correct += 1;
        }
    }
    let accuracy = correct as f64 / 300.0;
    if accuracy < 0.95 {
        problems.push(format!("accuracy {accuracy:.3}"));
    }
    let pass = problems.is_empty();
    let detail = if pass {
        format!("max bin diff {worst_bin:e}, max rotated distance {worst_rot:e}, gallery accuracy {accuracy:.3}")
    } else {
        problems.join("; ")
    };
    outcome(pass, detail)
}

fn fusion_inclusion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut violations = 0;
    for _ in 0..1000 {
        let (w, h) = (rng.random_range(1..48), rng.random_range(1..48));
        let density = rng.random_range(0.0..1.0);
        let motion = Mask::from_fn(w, h, |_, _| rng.random_bool(density)).unwrap();
        let skin = Mask::from_fn(w, h, |_, _| rng.random_bool(density)).unwrap();
        let face = if rng.random_bool(0.5) {
            let (x, y) = (rng.random_range(0..w), rng.random_range(0..h));
            Some(Rect::new(x, y, rng.random_range(1..=w - x), rng.random_range(1..=h - y)).unwrap())
        } else {
            None
        };
        let fused = fuse_masks(&motion, &skin, face).unwrap();
        if !(fused.is_subset_of(&motion) && fused.is_subset_of(&skin)) {
            violations += 1;
        }
    }
    outcome(violations == 0, format!("{violations}/1000 violations"))
}

const DEMO_SCENE: &str = include_str!("../../../scenes/demo.scene");

struct Demo {
    events: Vec<GestureEvent>,
    fps: f64,
    noise_failures: usize,
}

fn demo_models() -> Models {
    let kit = build_kit(&KitParams::default(), 5, 12).unwrap();
    let scene = Scene::parse(DEMO_SCENE).unwrap();
    let bg: Vec<Frame> = (0..30).map(|i| scene.render(i).unwrap().0).collect();
    let background = CodebookModel::train(&bg, CodebookParams::default()).unwrap().prune();
    Models { background, hand: kit.hand, face: Some(kit.face), gallery: kit.gallery }
}

fn run_demo() -> Demo {
    let mut pipeline = Pipeline::new(PipelineConfig::default(), demo_models()).unwrap();
    let scene = Scene::parse(DEMO_SCENE).unwrap();
    let mut events = Vec::new();
    let summary = run_session(
        &mut pipeline,
        (0..scene.len()).map(|i| scene.render(i).map(|(f, _)| f)),
        |e| {
            events.push(e.clone());
            Ok(())
        },
        |_, _| Ok(()),
    )
    .unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut noise_failures = 0;
    for _ in 0..1000 {
        let px: Vec<u8> = (0..320 * 240 * 3).map(|_| rng.random()).collect();
        let frame = Frame::new(320, 240, px).unwrap();
        match catch_unwind(AssertUnwindSafe(|| pipeline.process(&frame))) {
            Ok(Ok(_)) => {}
            _ => noise_failures += 1,
        }
    }
    Demo { events, fps: summary.frames_per_second(), noise_failures }
}

fn demo() -> &'static Demo {
    static DEMO: std::sync::OnceLock<Demo> = std::sync::OnceLock::new();
    DEMO.get_or_init(run_demo)
}

fn pipeline_end_to_end() -> Outcome {
    let d = demo();
    let got: Vec<(u8, &str, u32)> = d.events.iter().map(|e| (e.class, e.name.as_str(), e.frame)).collect();
    let classes: Vec<Option<u8>> = d.events.iter().map(|e| Some(e.class)).collect();
    let ok = classes == [Pose::OpenPalm.class_id(), Pose::Fist.class_id()] && d.noise_failures == 0;
    outcome(ok, format!("events {got:?}; {} of 1000 noise frames failed", d.noise_failures))
}

fn throughput() -> Outcome {
    let fps = demo().fps;
    outcome(fps >= 15.0, format!("{fps:.1} fps"))
}

fn random_message(rng: &mut ChaCha8Rng) -> Message {
    let text = |rng: &mut ChaCha8Rng| -> String {
        let n = rng.random_range(0..40);
        (0..n).map(|_| if rng.random_bool(0.9) { rng.random_range('a'..='z') } else { 'é' }).collect()
    };
    match rng.random_range(0..7) {
        0 => Message::Hello { session: rng.random(), learner: rng.random(), name: text(rng) },
        1 => Message::HelloAck,
        2 => Message::Event(WireEvent {
            learner: rng.random(),
            timestamp_ms: rng.random(),
            frame: rng.random(),
            class: rng.random(),
            confidence: rng.random_range(0..=10_000),
        }),
        3 => Message::EventAck { learner: rng.random(), frame: rng.random() },
        4 => Message::Heartbeat { timestamp_ms: rng.random() },
        5 => Message::Bye,
        _ => Message::Error { code: rng.random(), message: text(rng) },
    }
}

fn protocol() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let m = random_message(&mut rng);
        match encode(&m).map(|b| decode(&b)) {
            Ok(Ok(back)) if back == m => {}
            _ => mismatches += 1,
        }
    }
    let (mut panics, mut errors, mut valid) = (0, 0, 0);
    for i in 0..10_000 {
        let n = rng.random_range(0..64);
        let mut bytes: Vec<u8> = (0..n).map(|_| rng.random()).collect();
        // half the inputs carry a real header so payload decoding is reached
        if i % 2 == 0 && bytes.len() >= 8 {
            bytes[..5].copy_from_slice(&[0x47, 0x50, 0x52, 0x50, 1]);
            bytes[5] = rng.random_range(1..=7);
            let len = (bytes.len() - 8) as u16;
            bytes[6..8].copy_from_slice(&len.saturating_sub(rng.random_range(0..2)).to_be_bytes());
        }
        match catch_unwind(|| decode(&bytes)) {
            Err(_) => panics += 1,
            Ok(Err(_)) => errors += 1,
            Ok(Ok(_)) => valid += 1,
        }
    }
    outcome(
        mismatches == 0 && panics == 0,
        format!(
            "{mismatches}/10000 round-trip mismatches; random bytes: {panics} panics, {errors} typed errors, {valid} valid"
        ),
    )
}

fn participation() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("events.jsonl");
    let cfg = SupervisorConfig { heartbeat_interval: Duration::from_secs(5), ..SupervisorConfig::default() };
    let (handle, worker) = Supervisor::bind("127.0.0.1:0", &store, cfg.clone()).unwrap().spawn();
    let schedules: Vec<_> = [12.0, 8.0, 4.0, 1.0]
        .iter()
        .zip(1..)
        .map(|(&rate, learner)| rate_schedule(learner, rate, 600, 9))
        .collect();
    let report = simulate(handle.addr(), &schedules, &SimOptions::default()).unwrap();
    let p = IndicatorParams::default();
    let span = Some(600_000);
    let live = handle.series(10.0, span, &p).unwrap();
    handle.shutdown();
    worker.join().unwrap().unwrap();

    let means: Vec<f64> = live.iter().map(|s| s.mean()).collect();
    let ordered = means.len() == 4 && means.windows(2).all(|w| w[0] > w[1]);

    let stored = load_events(&store).unwrap();
    let replayed = SessionState::replay(&stored).unwrap();
    let from_store: Vec<_> = replayed
        .learners()
        .map(|l| gp_core::telemetry::series(l.id, l.events(), 600_000, 10.0, &p).unwrap())
        .collect();
    let (restarted, worker) = Supervisor::bind("127.0.0.1:0", &store, cfg).unwrap().spawn();
    let after_restart = restarted.series(10.0, span, &p).unwrap();
    restarted.shutdown();
    worker.join().unwrap().unwrap();
    let same = from_store == live && after_restart == live;

    outcome(
        ordered && same && report.total() == 25,
        format!(
            "session means {}; {} events stored; replay {}",
            means.iter().map(|m| format!("{m:.4}")).collect::<Vec<_>>().join(" > "),
            stored.len(),
            if same { "identical" } else { "differs" }
        ),
    )
}
