mod common;

use std::path::Path;

use common::{run, stdout, tree_hash, write_catalog};
use posetraj::conditioning::BatchLine;
use posetraj::forge::DatasetManifest;
use posetraj::raster::Image;

fn forge_small(dir: &Path) {
    write_catalog(dir, 2);
    let out = run(dir, &["forge"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert!(
        text.lines()
            .last()
            .unwrap()
            .starts_with("scenes=10 rejected="),
        "{text}"
    );
    assert_eq!(text.lines().filter(|l| l.starts_with('[')).count(), 10);
}

fn lines(path: &Path) -> Vec<BatchLine> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn forge_assemble_and_eval_round() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    forge_small(dir);
    let out = dir.join("out");

    let manifests: Vec<_> = std::fs::read_dir(out.join("manifests")).unwrap().collect();
    assert_eq!(manifests.len(), 10);
    let first = manifests[0].as_ref().unwrap().path();
    let m = DatasetManifest::read(&first).unwrap();
    assert_eq!(m.frames.len(), 32);
    let img_dir = out.join("images").join(&m.scene_id);
    assert!(Image::read_png(&img_dir.join("traj_032.png"))
        .unwrap()
        .is_blank());
    assert!(!Image::read_png(&img_dir.join("traj_001.png"))
        .unwrap()
        .is_blank());
    assert!(out
        .join("scenes")
        .join(format!("{}.scene.json", m.scene_id))
        .exists());

    // a rerun rewrites identical bytes
    let before = tree_hash(&out);
    assert!(run(dir, &["forge"]).status.success());
    assert_eq!(tree_hash(&out), before);

    for stage in ["one", "two", "finetune"] {
        let o = run(dir, &["assemble", "--stage", stage]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let one = lines(&out.join("batches/one.jsonl"));
    assert_eq!(one.len(), 140);
    assert!(one
        .iter()
        .all(|l| l.camera.is_none() && l.bbox_overlay.is_some()));
    let two = lines(&out.join("batches/two.jsonl"));
    assert_eq!(two.len(), 140);
    assert!(two
        .iter()
        .all(|l| l.camera.is_none() && l.bbox_overlay.is_none()));
    let fine = lines(&out.join("batches/finetune.jsonl"));
    let with_camera = fine.iter().filter(|l| l.camera.is_some()).count();
    assert!(with_camera > 0 && with_camera < 140);
    for l in &one {
        assert!(out.join(&l.trajectory_image).exists());
        assert!(out.join(l.bbox_overlay.as_ref().unwrap()).exists());
    }

    let o = run(dir, &["eval", "--self-check"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("manifests=10 failed=0"));

    let o = run(
        dir,
        &[
            "eval",
            "--generated",
            "out/tracks",
            "--reference",
            "out/tracks",
            "--report",
            "report.json",
        ],
    );
    assert!(o.status.success());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["mean_objmc"], 0.0);
    assert_eq!(report["videos"].as_array().unwrap().len(), 10);
    assert_eq!(report["resolution"], serde_json::json!([576, 320]));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    assert_eq!(
        run(dir, &["forge", "--set", "keyframes=0"]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(dir, &["forge", "--config", "missing.json"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(dir, &["forge"]).status.code(),
        Some(3),
        "catalog is missing"
    );

    write_catalog(dir, 1);
    let o = run(
        dir,
        &[
            "forge",
            "--set",
            "camera.azimuth_deg=90",
            "--set",
            "camera.target=[0,-10,0]",
            "--set",
            "camera.ring_radius=1",
            "--set",
            "max_retries=2",
        ],
    );
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("scenes=0 rejected=15"));
}

#[test]
fn config_file_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_catalog(dir, 1);
    std::fs::write(
        dir.join("cfg.json"),
        r#"{"samples_per_object": 2, "output_dir": "elsewhere"}"#,
    )
    .unwrap();
    let o = common::bin()
        .current_dir(dir)
        .env("POSETRAJ_CONFIG", dir.join("cfg.json"))
        .arg("forge")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(stdout(&o).contains("scenes=2 "));
    assert!(dir.join("elsewhere/manifests").is_dir());
}

#[test]
fn eval_names_the_bad_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("gen.json"),
        r#"{"schema_version":1,"video_id":"v","fps":5,"tracks":[[[1,2],[3,4],[NaN,6]]]}"#,
    )
    .unwrap();
    std::fs::write(
        dir.join("ref.json"),
        r#"{"schema_version":1,"video_id":"v","fps":5,"tracks":[[[1,2],[3,4],[5,6]]]}"#,
    )
    .unwrap();
    let o = run(
        dir,
        &["eval", "--generated", "gen.json", "--reference", "ref.json"],
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("frame 3"));

    std::fs::write(
        dir.join("gen.json"),
        r#"{"schema_version":1,"video_id":"v","fps":5,"tracks":[[[4,6],[3,4],[5,6]]]}"#,
    )
    .unwrap();
    let o = run(
        dir,
        &["eval", "--generated", "gen.json", "--reference", "ref.json"],
    );
    assert!(o.status.success());
    assert!(stdout(&o).contains("8.3333"), "{}", stdout(&o));
}

#[test]
fn preview_prints_the_sampled_track() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["preview", "--seed", "7"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["keyframes"].as_array().unwrap().len(), 32);
}
