#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_posetraj"));
    cmd.env_remove("POSETRAJ_CONFIG");
    cmd
}

pub fn run(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Catalog of `n` objects with varied extents.
pub fn write_catalog(dir: &Path, n: usize) -> PathBuf {
    let mut text = String::new();
    for i in 0..n {
        let f = i as f64;
        text.push_str(&format!(
            "{{\"object_id\":\"obj_{i:02}\",\"raw_extents\":[{},{},{}],\"mesh_uri\":\"mesh://obj_{i:02}\"}}\n",
            0.4 + 0.13 * f,
            0.3 + 0.07 * f,
            0.5 + 0.11 * f
        ));
    }
    let path = dir.join("catalog.jsonl");
    std::fs::write(&path, text).unwrap();
    path
}

fn files(root: &Path, out: &mut Vec<PathBuf>) {
    for entry in std::fs::read_dir(root).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            files(&p, out);
        } else {
            out.push(p);
        }
    }
}

/// Digest over every relative path and file content under `root`.
pub fn tree_hash(root: &Path) -> (usize, String) {
    let mut all = Vec::new();
    files(root, &mut all);
    all.sort();
    let mut h = Sha256::new();
    for p in &all {
        h.update(p.strip_prefix(root).unwrap().to_string_lossy().as_bytes());
        h.update([0]);
        h.update(std::fs::read(p).unwrap());
    }
    let digest: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    (all.len(), digest)
}
