#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn shdebias(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shdebias"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn shdebias_threads(dir: &Path, threads: usize, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shdebias"))
        .current_dir(dir)
        .env("RAYON_NUM_THREADS", threads.to_string())
        .args(args)
        .output()
        .expect("binary runs")
}

#[track_caller]
pub fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Every file under `root`, keyed by relative path.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// synth-gen, estimate, stats, align, embed, relight-scale and report.
pub fn full_pipeline(dir: &Path, threads: usize, per_class: usize, resolution: usize, seed: u64, perplexity: f64) {
    let run = |args: &[&str]| ok(shdebias_threads(dir, threads, args));
    let (pc, res, seed, perp) = (per_class.to_string(), resolution.to_string(), seed.to_string(), perplexity.to_string());
    run(&["synth-gen", "--out", "corpus", "--per-class", &pc, "--resolution", &res, "--seed", &seed]);
    run(&["estimate", "--corpus", "corpus", "--out", "raw.csv"]);
    run(&["stats", "--coeffs", "raw.csv", "--corpus", "corpus", "--out-dir", "stats"]);
    run(&["align", "--coeffs", "raw.csv", "--stats", "stats/alignment_stats.json", "--out", "aligned.csv"]);
    run(&[
        "embed", "--raw", "raw.csv", "--aligned", "aligned.csv", "--out-dir", "plots", "--per-class", &pc, "--seed", &seed,
        "--perplexity", &perp,
    ]);
    run(&["relight-scale", "--corpus", "corpus", "--magnitudes", "stats/class_magnitudes.json", "--out", "scaled"]);
    let report = run(&[
        "report", "--corpus", "corpus", "--raw", "raw.csv", "--aligned", "aligned.csv", "--magnitudes",
        "stats/class_magnitudes.json", "--out", "report.json", "--seed", &seed,
    ]);
    std::fs::write(dir.join("report.txt"), report.stdout).unwrap();
}
