#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dmbpp::cli::manifest::{RunManifest, MANIFEST_FILE};

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_dmbpp"))
}

/// Runs the CLI and returns its output; panics if it cannot be started.
pub fn dmbpp(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("failed to start dmbpp")
}

/// Runs the CLI and panics with its stderr on failure.
pub fn dmbpp_ok(args: &[&str]) -> String {
    let out = dmbpp(args);
    assert!(out.status.success(), "dmbpp {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Chain settings short enough for tests.
pub fn short_config(dir: &Path, n_iter: usize, burn_in: usize, thin: usize) -> PathBuf {
    let text = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/defaults.toml"))
        .expect("defaults.toml");
    let text = text
        .replace("n_iter = 11000", &format!("n_iter = {n_iter}"))
        .replace("burn_in = 1000", &format!("burn_in = {burn_in}"))
        .replace("thin = 10", &format!("thin = {thin}"));
    let path = dir.join(format!("short_{n_iter}_{burn_in}_{thin}.toml"));
    fs::write(&path, text).expect("write config");
    path
}

/// Differences between two output directories: every artifact byte for
/// byte, and the manifests with timing fields removed.
pub fn output_differences(a: &Path, b: &Path) -> Vec<String> {
    let mut diffs = Vec::new();
    let mut names: Vec<_> = fs::read_dir(a)
        .expect("read dir")
        .map(|e| e.expect("entry").file_name().into_string().expect("utf-8 name"))
        .collect();
    names.sort();
    let mut other: Vec<_> = fs::read_dir(b)
        .expect("read dir")
        .map(|e| e.expect("entry").file_name().into_string().expect("utf-8 name"))
        .collect();
    other.sort();
    if names != other {
        diffs.push(format!("file sets differ: {names:?} vs {other:?}"));
    }
    for name in names.iter().filter(|n| other.contains(n)) {
        if name == MANIFEST_FILE {
            let ma = RunManifest::read(&a.join(name)).expect("manifest").without_wall_clock();
            let mb = RunManifest::read(&b.join(name)).expect("manifest").without_wall_clock();
            if ma != mb {
                diffs.push("manifests differ beyond timing".into());
            }
        } else if fs::read(a.join(name)).expect("read") != fs::read(b.join(name)).expect("read") {
            diffs.push(format!("{name} differs"));
        }
    }
    diffs
}
