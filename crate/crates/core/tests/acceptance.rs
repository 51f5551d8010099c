//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on failure.

mod common;

use std::f64::consts::{FRAC_PI_2, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;

use posetraj::conditioning::{self, InitialImageKind, LossWeights, Stage, TargetKind};
use posetraj::config::ForgeConfig;
use posetraj::eval::{self, TrackFile};
use posetraj::forge::{self, DatasetManifest, Rect, FPS};
use posetraj::geom::{Box3, CameraModel, Pose, Vec3};
use posetraj::raster::{self, Image, PointTrack, SegmentMode};
use posetraj::seed;
use posetraj::service::{self, ServiceState};
use posetraj::trajectory::{self, Template, TrajectorySpec};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    }};
}

const FORGE_TIME_LIMIT: Duration = Duration::from_secs(60);
const SAMPLES: u64 = 10_000;

struct Dataset {
    root: PathBuf,
    timings: Vec<(usize, Duration)>,
    hashes: Vec<(usize, String)>,
}

/// Forges a 4-object catalog (20 scenes) once per worker count.
fn forge_twice(root: &Path) -> Result<Dataset, String> {
    common::write_catalog(root, 4);
    let mut timings = Vec::new();
    let mut hashes = Vec::new();
    for workers in [1usize, 8] {
        let out = format!("out_w{workers}");
        let start = Instant::now();
        let o = common::run(
            root,
            &[
                "forge",
                "--set",
                &format!("workers={workers}"),
                "--set",
                &format!("output_dir={out}"),
            ],
        );
        let elapsed = start.elapsed();
        ensure!(
            o.status.success(),
            "forge with {workers} workers exited {:?}",
            o.status.code()
        );
        ensure!(
            common::stdout(&o).contains("scenes=20 "),
            "unexpected summary: {}",
            common::stdout(&o).lines().last().unwrap_or("")
        );
        timings.push((workers, elapsed));
        let (files, digest) = common::tree_hash(&root.join(&out));
        hashes.push((files, digest));
    }
    Ok(Dataset {
        root: root.to_path_buf(),
        timings,
        hashes,
    })
}

fn manifests(ds: &Dataset) -> Vec<DatasetManifest> {
    let dir = ds.root.join("out_w1").join("manifests");
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| DatasetManifest::read(p).unwrap())
        .collect()
}

fn determinism(ds: &Result<Dataset, String>) -> Outcome {
    let ds = ds.as_ref().map_err(Clone::clone)?;
    ensure!(
        ds.hashes[0] == ds.hashes[1],
        "trees differ: {:?}",
        ds.hashes
    );
    for (w, t) in &ds.timings {
        ensure!(*t < FORGE_TIME_LIMIT, "{w} workers took {t:?}");
    }
    Ok(format!(
        "{} files, sha256 {}…, 1 worker {:.1}s, 8 workers {:.1}s",
        ds.hashes[0].0,
        &ds.hashes[0].1[..12],
        ds.timings[0].1.as_secs_f64(),
        ds.timings[1].1.as_secs_f64()
    ))
}

fn sampler_ranges() -> Outcome {
    let mut radius_sum = 0.0;
    let mut scurves = 0;
    for i in 0..SAMPLES {
        let s = trajectory::sample_trajectory_spec(seed::derive(2024, i), None)
            .map_err(|e| e.to_string())?;
        ensure!((1.0..=1.5).contains(&s.radius), "radius {}", s.radius);
        ensure!(
            (FRAC_PI_2..=PI).contains(&s.swept_angle.abs()),
            "sweep {}",
            s.swept_angle
        );
        ensure!(s.start[0].hypot(s.start[1]) <= 1.0, "start {:?}", s.start);
        ensure!(
            (0.0..=FRAC_PI_2).contains(&s.initial_heading),
            "heading {}",
            s.initial_heading
        );
        radius_sum += s.radius;
        scurves += usize::from(s.template == Template::SCurve);
    }
    let mean = radius_sum / SAMPLES as f64;
    let split = scurves as f64 / SAMPLES as f64;
    ensure!((mean - 1.25).abs() <= 0.02, "mean radius {mean}");
    ensure!((split - 0.5).abs() <= 0.02, "s-curve fraction {split}");
    Ok(format!(
        "mean radius {mean:.4}, s-curve fraction {split:.4} over {SAMPLES} specs"
    ))
}

fn spec(template: Template, heading: f64, radius: f64, sweep: f64) -> TrajectorySpec {
    TrajectorySpec {
        template,
        start: [0.0, 0.0],
        initial_heading: heading,
        radius,
        swept_angle: sweep,
        steps: 200,
        keyframes: 32,
    }
}

fn geometry_oracle() -> Outcome {
    let semi = spec(Template::Arc, 0.0, 1.0, PI);
    let track = trajectory::build_pose_track(&semi, 1.0).map_err(|e| e.to_string())?;
    let end = track.poses.last().unwrap().translation();
    let err = (end - Vec3::new(0.0, 2.0, 0.5)).norm();
    ensure!(err < 1e-9, "semicircle endpoint off by {err}");

    let mut worst_len = 0.0f64;
    let mut worst_yaw = 0.0f64;
    for i in 0..200 {
        let s = trajectory::sample_trajectory_spec(seed::derive(7, i), None)
            .map_err(|e| e.to_string())?;
        let n = 20_000;
        let mut len = 0.0;
        let mut prev = s.eval(0.0).unwrap().0;
        let mut heading = Vec::with_capacity(n + 1);
        heading.push(s.eval(0.0).unwrap().1);
        for k in 1..=n {
            let (p, h) = s.eval(k as f64 / n as f64).unwrap();
            len += (p[0] - prev[0]).hypot(p[1] - prev[1]);
            prev = p;
            heading.push(h);
        }
        worst_len = worst_len.max((len - s.radius * s.swept_angle.abs()).abs());
        let turns: Vec<f64> = heading.windows(2).map(|w| (w[1] - w[0]).signum()).collect();
        let changes = turns.windows(2).filter(|w| w[0] != w[1]).count();
        let (h0, h_mid, h1) = (heading[0], s.eval(0.5).unwrap().1, heading[n]);
        match s.template {
            Template::Arc => {
                ensure!(changes == 0, "arc changes curvature sign {changes} times");
                worst_yaw = worst_yaw.max((h1 - h0 - s.swept_angle).abs());
            }
            Template::SCurve => {
                ensure!(
                    changes == 1,
                    "s-curve changes curvature sign {changes} times"
                );
                // total turning is the sweep: out by half, back by half
                let total = (h_mid - h0).abs() + (h1 - h_mid).abs();
                worst_yaw = worst_yaw.max((total - s.swept_angle.abs()).abs());
            }
        }
        let t = trajectory::build_pose_track(&s, 1.0).unwrap();
        let pose_sweep = t.poses.last().unwrap().yaw() - t.poses[0].yaw();
        if s.template == Template::Arc {
            let d = trajectory::wrap_angle(pose_sweep - s.swept_angle).abs();
            worst_yaw = worst_yaw.max(d);
        }
    }
    ensure!(worst_len < 1e-6, "arc length error {worst_len}");
    ensure!(worst_yaw < 1e-9, "yaw sweep error {worst_yaw}");
    Ok(format!(
        "endpoint err {err:.1e}, arc length err {worst_len:.1e}, yaw sweep err {worst_yaw:.1e}"
    ))
}

fn projection_oracle(ds: &Result<Dataset, String>) -> Outcome {
    let cam = ForgeConfig::default().camera_model().unwrap();
    let mut rng = seed::rng(99);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = Vec3::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-1.0..1.5),
        );
        let proj = cam.project_point(&p).map_err(|e| e.to_string())?;
        let back = cam.unproject(proj.pixel, proj.depth);
        worst = worst.max((back - p).norm());
    }
    ensure!(worst < 1e-9, "round trip error {worst}");

    let ds = ds.as_ref().map_err(Clone::clone)?;
    let cfg = ForgeConfig::default();
    let mut checked = 0;
    for m in manifests(ds) {
        let report = eval::manifest_self_check(&m, cfg.max_center_step_px);
        for name in ["center_reprojection", "bbox_reprojection"] {
            let c = report.check(name).unwrap();
            ensure!(
                c.passed,
                "{} {name} failed at frames {:?}: {}",
                m.scene_id,
                c.failing_frames,
                c.detail
            );
        }
        ensure!(
            report.passed(),
            "{} self-check failed: {:?}",
            m.scene_id,
            report.checks
        );
        checked += 1;
    }
    Ok(format!(
        "round trip err {worst:.1e}; {checked} manifests reproject within 1e-6 px"
    ))
}

fn conditioning_rules() -> Outcome {
    let pose = Some(Pose::identity());
    // (stage, camera given) -> expected (initial image, target, camera kept possible, error)
    for stage in Stage::ALL {
        for camera in [None, pose] {
            let got = conditioning::assemble_condition(stage, 1, "t", camera, 0);
            match (stage, camera.is_some()) {
                (Stage::StageOneBbox, false) => {
                    let c = got.map_err(|e| e.to_string())?;
                    ensure!(
                        c.initial_image_kind == InitialImageKind::BboxAugmented,
                        "stage one initial"
                    );
                    ensure!(
                        c.target_kind == TargetKind::BboxAugmentedVideo,
                        "stage one target"
                    );
                    ensure!(c.camera_pose.is_none(), "stage one camera");
                }
                (Stage::StageTwoAppearance, false) => {
                    let c = got.map_err(|e| e.to_string())?;
                    ensure!(
                        c.initial_image_kind == InitialImageKind::Plain,
                        "stage two initial"
                    );
                    ensure!(c.target_kind == TargetKind::PlainVideo, "stage two target");
                    ensure!(c.camera_pose.is_none(), "stage two camera");
                }
                (Stage::FinetuneCamera, true) => {
                    let c = got.map_err(|e| e.to_string())?;
                    ensure!(
                        c.initial_image_kind == InitialImageKind::Plain,
                        "finetune initial"
                    );
                    ensure!(c.target_kind == TargetKind::PlainVideo, "finetune target");
                }
                (Stage::FinetuneCamera, false) => ensure!(
                    matches!(
                        got,
                        Err(conditioning::ConditioningError::MissingCamera { .. })
                    ),
                    "finetune without camera must fail"
                ),
                (_, true) => ensure!(
                    matches!(
                        got,
                        Err(conditioning::ConditioningError::UnexpectedCamera { .. })
                    ),
                    "{stage:?} with camera must fail"
                ),
            }
        }
    }

    let kept = (0..SAMPLES)
        .filter(|i| {
            conditioning::assemble_condition(
                Stage::FinetuneCamera,
                1,
                "t",
                pose,
                seed::derive(31, *i),
            )
            .unwrap()
            .camera_pose
            .is_some()
        })
        .count();
    let freq = kept as f64 / SAMPLES as f64;
    ensure!((freq - 0.5).abs() <= 0.02, "camera frequency {freq}");

    let draws = 100_000u64;
    let mut bins = [0u64; 14];
    for i in 0..draws {
        let j = conditioning::sample_spatial_frame(14, seed::derive(77, i))
            .map_err(|e| e.to_string())?;
        ensure!((1..=14).contains(&j), "spatial frame {j} out of range");
        bins[j as usize - 1] += 1;
    }
    let worst = bins
        .iter()
        .map(|&b| (b as f64 / draws as f64 - 1.0 / 14.0).abs())
        .fold(0.0, f64::max);
    ensure!(worst <= 0.01, "spatial frame bin deviation {worst}");
    Ok(format!(
        "6-case table ok, camera frequency {freq:.4}, max spatial bin deviation {worst:.4}"
    ))
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn loss_functions() -> Outcome {
    let mut rng = seed::rng(5);
    let mut worst = 0.0f64;
    let mut worst_lin = 0.0f64;
    for trial in 0..200usize {
        let n = 1 + trial * 37 % 4096;
        let pred: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let target: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        // two passes: residuals first, then their mean square
        let residuals: Vec<f64> = pred.iter().zip(&target).map(|(p, t)| p - t).collect();
        let mut acc = 0.0;
        for r in &residuals {
            acc += r * r;
        }
        let naive = acc / n as f64;
        let mse = conditioning::loss_mse(&pred, &target).map_err(|e| e.to_string())?;
        let spa = conditioning::loss_spa(&pred[..n.div_ceil(2)], &target[..n.div_ceil(2)])
            .map_err(|e| e.to_string())?;
        worst = worst.max(relative(mse, naive));

        let l1: f64 = rng.random_range(0.0..4.0);
        let l2: f64 = rng.random_range(0.0..4.0);
        let total =
            |l: f64| conditioning::loss_total(mse, spa, &LossWeights::new(l).unwrap()).unwrap();
        let direct = relative(total(l1), mse + l1 * spa);
        let additive = (total(l1 + l2) - total(l1) - l2 * spa).abs() / total(l1 + l2);
        worst_lin = worst_lin.max(direct).max(additive);
    }
    ensure!(worst <= 1e-12, "loss vs oracle relative error {worst}");
    ensure!(worst_lin <= 1e-12, "lambda linearity error {worst_lin}");
    Ok(format!(
        "oracle rel err {worst:.1e}, linearity err {worst_lin:.1e}"
    ))
}

fn objmc_values() -> Outcome {
    let file = |pts: Vec<[f64; 2]>| TrackFile::new("v", 5.0, vec![PointTrack::new(pts)]);
    let base: Vec<[f64; 2]> = (0..14)
        .map(|i| [10.0 + 7.0 * i as f64, 40.0 - 2.5 * i as f64])
        .collect();
    let same = eval::objmc(&file(base.clone()), &file(base.clone())).map_err(|e| e.to_string())?;
    ensure!(same == 0.0, "identical tracks gave {same}");
    let shifted: Vec<[f64; 2]> = base.iter().map(|p| [p[0] + 3.0, p[1] + 4.0]).collect();
    let offset = eval::objmc(&file(shifted.clone()), &file(base.clone())).unwrap();
    ensure!(offset == 25.0, "offset gave {offset}");
    let back = eval::objmc(&file(base.clone()), &file(shifted)).unwrap();
    ensure!(back == offset, "asymmetric: {back} vs {offset}");
    let mut bumped = base.clone();
    bumped[9][1] += 1.0;
    let single = eval::objmc(&file(bumped), &file(base)).unwrap();
    ensure!(single == 1.0 / 14.0, "single perturbation gave {single}");
    Ok(format!("0, {offset}, symmetric, {single:.6} = 1/14"))
}

fn raster_contracts(ds: &Result<Dataset, String>) -> Outcome {
    let ds = ds.as_ref().map_err(Clone::clone)?;
    let all = manifests(ds);
    for m in &all {
        let last = ds.root.join("out_w1").join(forge::image_rel_path(
            &m.scene_id,
            "traj",
            m.frames.len() as u32,
        ));
        let img = Image::read_png(&last).map_err(|e| format!("{}: {e}", last.display()))?;
        ensure!(img.is_blank(), "{} is not blank", last.display());
    }

    let cam = ForgeConfig::default().camera_model().unwrap();
    let mut rng = seed::rng(11);
    let noise: Vec<u8> = (0..576 * 320 * 3).map(|_| rng.random()).collect();
    let base = Image::from_raw(576, 320, 3, noise).unwrap();
    // the default camera sits at y = -2*sqrt(3) looking towards +y
    let behind = Box3::new([0.5; 3], Pose::from_translation(Vec3::new(0.0, -8.0, 0.5))).unwrap();
    let out = raster::draw_bbox_overlay(&base, &cam, &behind, [255, 0, 0], 3)
        .map_err(|e| e.to_string())?;
    ensure!(
        out.data() == base.data(),
        "behind-camera overlay changed pixels"
    );

    let mut rng = seed::rng(12);
    let specials = [
        f64::NAN,
        f64::INFINITY,
        f64::NEG_INFINITY,
        1e300,
        -1e300,
        0.0,
    ];
    let coord = |rng: &mut rand_chacha::ChaCha8Rng| match rng.random_range(0..10) {
        0 => specials[rng.random_range(0..specials.len())],
        1..=3 => rng.random_range(-1e6..1e6),
        _ => rng.random_range(-50.0..130.0),
    };
    let fuzz_cam = CameraModel::look_at(
        60.0,
        60.0,
        40.0,
        24.0,
        80,
        48,
        Vec3::new(0.0, -3.0, 1.5),
        Vec3::zeros(),
    )
    .unwrap();
    let fuzz_base = Image::new(80, 48, 3);
    let mut panics = 0;
    for _ in 0..SAMPLES {
        let pts: Vec<[f64; 2]> = (0..3).map(|_| [coord(&mut rng), coord(&mut rng)]).collect();
        let stroke = rng.random_range(1..8);
        let center = Vec3::new(
            rng.random_range(-6.0..6.0),
            rng.random_range(-6.0..6.0),
            rng.random_range(-2.0..3.0),
        );
        let yaw = rng.random_range(-PI..PI);
        let ok = catch_unwind(AssertUnwindSafe(|| {
            let track = PointTrack::new(pts.clone());
            for i in 1..=3 {
                let img =
                    raster::draw_segment_image(&track, i, 80, 48, stroke, SegmentMode::Cumulative)
                        .unwrap();
                assert_eq!(img.data().len(), 80 * 48);
            }
            let b = Box3::new([0.4, 0.7, 0.5], Pose::from_yaw(yaw, center)).unwrap();
            let img =
                raster::draw_bbox_overlay(&fuzz_base, &fuzz_cam, &b, [0, 255, 0], stroke).unwrap();
            assert_eq!(img.data().len(), 80 * 48 * 3);
        }))
        .is_ok();
        panics += usize::from(!ok);
    }
    ensure!(panics == 0, "{panics} fuzz cases panicked");
    Ok(format!(
        "{} last images blank, behind-camera overlay identical, {SAMPLES} fuzz cases clean",
        all.len()
    ))
}

fn dataset_constants(ds: &Result<Dataset, String>) -> Outcome {
    let cfg = ForgeConfig::default();
    ensure!(cfg.keyframes == 32, "keyframes {}", cfg.keyframes);
    ensure!(FPS == 5, "fps {FPS}");
    ensure!(
        cfg.training_frames == 14,
        "training frames {}",
        cfg.training_frames
    );
    ensure!(
        (cfg.width, cfg.height) == (576, 320),
        "resolution {}x{}",
        cfg.width,
        cfg.height
    );
    ensure!(
        cfg.samples_per_object == 5,
        "samples per object {}",
        cfg.samples_per_object
    );
    for objects in [1usize, 2, 4, 13] {
        let n = forge::plan_scenes(objects, &cfg).len();
        ensure!(n == 5 * objects, "{objects} objects planned {n} scenes");
    }
    let ds = ds.as_ref().map_err(Clone::clone)?;
    let all = manifests(ds);
    ensure!(
        all.len() == 20,
        "forged {} manifests from 4 objects",
        all.len()
    );
    for m in &all {
        ensure!(
            m.frames.len() == 32 && m.fps == 5,
            "{} has {} frames at {} fps",
            m.scene_id,
            m.frames.len(),
            m.fps
        );
        ensure!(
            (m.camera.width(), m.camera.height()) == (576, 320),
            "{} resolution",
            m.scene_id
        );
        let lines = conditioning::assemble_scene(m, Stage::StageOneBbox, cfg.training_frames)
            .map_err(|e| e.to_string())?;
        ensure!(
            lines.len() == 14,
            "{} clip has {} lines",
            m.scene_id,
            lines.len()
        );
    }

    let track = all[0].center_track();
    let rect = Rect::bounding(&all[0].frames[0].bbox_corners_pixel.unwrap()).unwrap();
    ensure!(
        forge::sample_drag_points(&all[0], &rect, 8, 1).is_ok(),
        "n = 8 rejected"
    );
    ensure!(
        forge::sample_drag_points_along(&track, &rect, 9, 1).is_err(),
        "n = 9 accepted"
    );
    let state = ServiceState::new(cfg).unwrap();
    let body = br#"{"schema_version":1,"rect":{"min":[0,0],"max":[9,9]},"n":9,"seed":1}"#;
    let (status, _) = service::handle(&state, "POST", "/v1/drag/sample", body);
    ensure!(status == 400, "service answered {status} for n = 9");
    Ok(
        "32 keyframes @ 5 fps, 14-frame clips at 576x320, 20 scenes from 4 objects, n > 8 rejected"
            .into(),
    )
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temp dir");
    let dataset = forge_twice(tmp.path());

    let criteria: Vec<Criterion> = vec![
        ("determinism", Box::new(|| determinism(&dataset))),
        ("sampler ranges", Box::new(sampler_ranges)),
        ("geometry oracle", Box::new(geometry_oracle)),
        (
            "projection oracle",
            Box::new(|| projection_oracle(&dataset)),
        ),
        ("conditioning", Box::new(conditioning_rules)),
        ("loss functions", Box::new(loss_functions)),
        ("objmc", Box::new(objmc_values)),
        ("raster contracts", Box::new(|| raster_contracts(&dataset))),
        (
            "dataset constants",
            Box::new(|| dataset_constants(&dataset)),
        ),
    ];

    let mut failed = 0;
    for (name, check) in &criteria {
        let outcome =
            catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
