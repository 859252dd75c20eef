#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

/// Suite apps and the package names their captures are recorded under.
pub const APPS: [(&str, &str); 3] = [
    ("amaze", "com.amaze.filemanager"),
    ("taskmate", "com.taskmate"),
    ("contacts", "com.pocketcontacts"),
];

pub fn suite_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/suite")
}

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_propforge"))
}

/// Runs `propforge -w <ws> args...`.
pub fn run(ws: &Path, args: &[&str]) -> Output {
    bin().arg("-w").arg(ws).args(args).output().expect("spawn propforge")
}

pub fn run_json(ws: &Path, args: &[&str]) -> (i32, Value) {
    let mut full = vec!["--json"];
    full.extend_from_slice(args);
    let out = run(ws, &full);
    let v =
        serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)));
    (out.status.code().unwrap_or(-1), v)
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let dest = to.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &dest);
        } else {
            fs::copy(e.path(), dest).unwrap();
        }
    }
}

/// Copies a suite app into a fresh workspace, exports captures from its
/// correct model and builds the context store.
pub fn prepared_app(app: &str) -> TempDir {
    let (_, package) = APPS.iter().find(|(a, _)| *a == app).expect("known app");
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path();
    copy_dir(&suite_dir().join(app), ws);
    let model = ws.join("models").join(format!("{app}.json"));
    let out = bin()
        .args(["simulate", "--model"])
        .arg(&model)
        .arg("--export-captures")
        .arg(ws.join("captures"))
        .args(["--app", package])
        .output()
        .unwrap();
    assert!(out.status.success(), "export: {}", stderr(&out));
    let out = run(ws, &["context", "build"]);
    assert!(out.status.success(), "context build: {}", stderr(&out));
    dir
}

pub fn ground_truth_files(ws: &Path, app: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(ws.join("ground_truth").join(app))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    v.sort();
    v
}
