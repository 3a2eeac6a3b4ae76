mod common;

use std::fs;
use std::path::Path;

use common::{ok, shdebias, stderr, tree};
use shdebias::debias::{separability_coeffs, AlignmentStats};
use shdebias::image_io::{read_coeffs, write_coeffs, CoeffKind};
use shdebias::magnitude_scaling::{class_magnitude_means, ClassMagnitudes, MagnitudeDomain, MagnitudeItem};
use shdebias::synthetic_faces::{read_item, read_truth};
use shdebias::SkinTone;

fn synth(dir: &Path, out: &str, per_class: usize, extra: &[&str]) {
    let pc = per_class.to_string();
    let mut args = vec!["synth-gen", "--out", out, "--per-class", &pc, "--seed", "7"];
    if !extra.contains(&"--resolution") {
        args.extend(["--resolution", "32"]);
    }
    args.extend_from_slice(extra);
    ok(shdebias(dir, &args));
}

fn corpus_with_raw(dir: &Path, per_class: usize) {
    synth(dir, "c", per_class, &[]);
    ok(shdebias(dir, &["estimate", "--corpus", "c", "--out", "raw.csv"]));
}

#[test]
fn synth_gen_writes_protocol_corpus() {
    let d = tempfile::tempdir().unwrap();
    ok(shdebias(d.path(), &["synth-gen", "--per-class", "100", "--seed", "7", "--out", "corpus/", "--resolution", "32"]));
    let pngs = fs::read_dir(d.path().join("corpus/images")).unwrap().count();
    assert_eq!(pngs, 400);
    assert_eq!(read_truth(&d.path().join("corpus")).unwrap().items.len(), 400);
    assert!(d.path().join("corpus/labels.csv").exists());
}

#[test]
fn synth_gen_is_byte_stable() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "a", 3, &[]);
    synth(d.path(), "b", 3, &[]);
    assert_eq!(tree(&d.path().join("a")), tree(&d.path().join("b")));
}

#[test]
fn usage_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let out = shdebias(d.path(), &["synth-gen", "--per-class", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--out"));
    assert_eq!(shdebias(d.path(), &["synth-gen", "--out", "x", "--resolution", "16"]).status.code(), Some(2));
    assert_eq!(shdebias(d.path(), &["bogus"]).status.code(), Some(2));
    assert_eq!(shdebias(d.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn estimate_one_record_per_image() {
    let d = tempfile::tempdir().unwrap();
    corpus_with_raw(d.path(), 3);
    let recs = read_coeffs(&d.path().join("raw.csv")).unwrap();
    assert_eq!(recs.len(), 12);
    assert!(recs.iter().all(|r| r.kind == Some(CoeffKind::Raw) && r.class.is_some()));
    ok(shdebias(d.path(), &["estimate", "--corpus", "c", "--out", "raw.json"]));
    assert_eq!(read_coeffs(&d.path().join("raw.json")).unwrap(), recs);
}

#[test]
fn estimate_unbiased_recovers_truth() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "c", 5, &["--noise-sigma", "0", "--resolution", "64"]);
    ok(shdebias(d.path(), &["estimate", "--corpus", "c", "--out", "u.csv", "--unbiased"]));
    let truth = read_truth(&d.path().join("c")).unwrap();
    let by_id = truth.by_id();
    let recs = read_coeffs(&d.path().join("u.csv")).unwrap();
    let err: f64 = recs
        .iter()
        .map(|r| {
            let t = by_id[r.id.as_str()].light;
            r.coeffs.iter().zip(t.as_array()).map(|(a, b)| (a - b).abs()).sum::<f64>() / 9.0
        })
        .sum::<f64>()
        / recs.len() as f64;
    assert!(err < 1e-3, "{err}");
}

#[test]
fn estimate_names_corrupt_item() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "c", 2, &[]);
    fs::write(d.path().join("c/images/tan_00001.png"), b"not a png").unwrap();
    let out = shdebias(d.path(), &["estimate", "--corpus", "c", "--out", "raw.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("tan_00001"), "{}", stderr(&out));
}

#[test]
fn stats_outputs_and_order_independence() {
    let d = tempfile::tempdir().unwrap();
    corpus_with_raw(d.path(), 4);
    ok(shdebias(d.path(), &["stats", "--coeffs", "raw.csv", "--corpus", "c", "--out-dir", "s1"]));
    let mut recs = read_coeffs(&d.path().join("raw.csv")).unwrap();
    recs.reverse();
    recs.swap(1, 9);
    write_coeffs(&d.path().join("perm.csv"), &recs).unwrap();
    ok(shdebias(d.path(), &["stats", "--coeffs", "perm.csv", "--corpus", "c", "--out-dir", "s2"]));
    assert_eq!(tree(&d.path().join("s1")), tree(&d.path().join("s2")));

    let stats = AlignmentStats::from_json(&fs::read_to_string(d.path().join("s1/alignment_stats.json")).unwrap()).unwrap();
    assert_eq!((stats.n_d, stats.n_nd), (4, 12));
    let cm = ClassMagnitudes::from_json(&fs::read_to_string(d.path().join("s1/class_magnitudes.json")).unwrap()).unwrap();
    assert_eq!(cm.classes.len(), 4);
}

#[test]
fn stats_without_dark_items_fails() {
    let d = tempfile::tempdir().unwrap();
    corpus_with_raw(d.path(), 3);
    let recs: Vec<_> = read_coeffs(&d.path().join("raw.csv"))
        .unwrap()
        .into_iter()
        .filter(|r| r.class != Some(SkinTone::Dark))
        .collect();
    write_coeffs(&d.path().join("nodark.csv"), &recs).unwrap();
    let out = shdebias(d.path(), &["stats", "--coeffs", "nodark.csv", "--corpus", "c", "--out-dir", "s"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("dark"), "{}", stderr(&out));
}

#[test]
fn align_contract() {
    let d = tempfile::tempdir().unwrap();
    corpus_with_raw(d.path(), 60);
    ok(shdebias(d.path(), &["stats", "--coeffs", "raw.csv", "--corpus", "c", "--out-dir", "s"]));
    ok(shdebias(d.path(), &["align", "--coeffs", "raw.csv", "--stats", "s/alignment_stats.json", "--out", "al.csv"]));
    let raw = read_coeffs(&d.path().join("raw.csv")).unwrap();
    let al = read_coeffs(&d.path().join("al.csv")).unwrap();
    assert_eq!(raw.len(), al.len());
    for (r, a) in raw.iter().zip(&al) {
        assert_eq!(a.coeffs[0], 1.0);
        assert_eq!(a.kind, Some(CoeffKind::Aligned));
        if r.class != Some(SkinTone::Dark) {
            let n: Vec<f64> = r.coeffs.iter().map(|c| c / r.coeffs[0]).collect();
            for (x, y) in a.coeffs[1..].iter().zip(&n[1..]) {
                assert_eq!(x, y);
            }
        }
    }
    let pairs: Vec<_> = al.iter().map(|r| (r.coeffs, r.class.unwrap())).collect();
    let acc = separability_coeffs(&pairs).unwrap().nc_accuracy;
    assert!((0.4..=0.6).contains(&acc), "{acc}");
}

fn embed_setup(dir: &Path, per_class: usize) {
    corpus_with_raw(dir, per_class);
    ok(shdebias(dir, &["stats", "--coeffs", "raw.csv", "--corpus", "c", "--out-dir", "s"]));
    ok(shdebias(dir, &["align", "--coeffs", "raw.csv", "--stats", "s/alignment_stats.json", "--out", "al.csv"]));
}

#[test]
fn embed_emits_four_stable_plot_pairs() {
    let d = tempfile::tempdir().unwrap();
    embed_setup(d.path(), 12);
    let args = |out: &'static str| {
        vec![
            "embed", "--raw", "raw.csv", "--aligned", "al.csv", "--out-dir", out, "--per-class", "12", "--perplexity", "5",
            "--iterations", "300", "--seed", "3",
        ]
    };
    ok(shdebias(d.path(), &args("p1")));
    ok(shdebias(d.path(), &args("p2")));
    let t = tree(&d.path().join("p1"));
    assert_eq!(t.len(), 8);
    for stem in ["raw_sh", "band0_strip", "bands1_8", "aligned"] {
        assert!(t.contains_key(Path::new(&format!("{stem}.svg"))));
        let csv = String::from_utf8(t[Path::new(&format!("{stem}.csv"))].clone()).unwrap();
        assert_eq!(csv.lines().count(), 49);
    }
    assert_eq!(t, tree(&d.path().join("p2")));
    ok(shdebias(
        d.path(),
        &["embed", "--raw", "raw.csv", "--aligned", "al.csv", "--out-dir", "pca", "--per-class", "12", "--method", "pca"],
    ));
}

#[test]
fn embed_too_few_points_hints_perplexity() {
    let d = tempfile::tempdir().unwrap();
    embed_setup(d.path(), 5);
    let out = shdebias(d.path(), &["embed", "--raw", "raw.csv", "--aligned", "al.csv", "--out-dir", "p", "--per-class", "5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("perplexity"), "{}", stderr(&out));
}

#[test]
fn relight_scale_with_unit_factors_is_identity() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "c", 1, &[]);
    let corpus = d.path().join("c");
    let truth = read_truth(&corpus).unwrap();
    let items: Vec<_> = truth.items.iter().map(|r| (read_item(&corpus, &r.id).unwrap(), r.class)).collect();
    let mag_items: Vec<MagnitudeItem> = items
        .iter()
        .map(|((img, mask), tone)| MagnitudeItem { image: img.red(), mask, tone: *tone })
        .collect();
    // one item per class, so every s is exactly 1
    let cm = class_magnitude_means(&mag_items, MagnitudeDomain::Linear).unwrap();
    fs::write(d.path().join("m.json"), cm.to_json().unwrap()).unwrap();
    ok(shdebias(d.path(), &["relight-scale", "--corpus", "c", "--magnitudes", "m.json", "--out", "o"]));
    assert_eq!(tree(&d.path().join("o/images")), tree(&corpus.join("images")));
}

#[test]
fn relight_scale_report() {
    let d = tempfile::tempdir().unwrap();
    corpus_with_raw(d.path(), 25);
    ok(shdebias(d.path(), &["stats", "--coeffs", "raw.csv", "--corpus", "c", "--out-dir", "s"]));
    ok(shdebias(d.path(), &["relight-scale", "--corpus", "c", "--magnitudes", "s/class_magnitudes.json", "--out", "o"]));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("o/scale_report.json")).unwrap()).unwrap();
    for tone in SkinTone::ALL {
        let c = &report["classes"][tone.as_str()];
        assert!((c["mean_s"].as_f64().unwrap() - 1.0).abs() < 1e-9);
        assert!(c["magnitude_std_after"].as_f64().unwrap() <= 0.5 * c["magnitude_std_before"].as_f64().unwrap());
    }
    assert_eq!(fs::read_dir(d.path().join("o/images")).unwrap().count(), 100);
}

#[test]
fn report_contents_and_determinism() {
    let d = tempfile::tempdir().unwrap();
    embed_setup(d.path(), 10);
    ok(shdebias(d.path(), &["stats", "--coeffs", "raw.csv", "--corpus", "c", "--out-dir", "s"]));
    let args = |out: &'static str| {
        vec![
            "report", "--corpus", "c", "--raw", "raw.csv", "--aligned", "al.csv", "--magnitudes", "s/class_magnitudes.json",
            "--out", out, "--seed", "5",
        ]
    };
    let first = ok(shdebias(d.path(), &args("r1.json")));
    let second = ok(shdebias(d.path(), &args("r2.json")));
    assert_eq!(first.stdout, second.stdout);
    let r1 = fs::read(d.path().join("r1.json")).unwrap();
    assert_eq!(r1, fs::read(d.path().join("r2.json")).unwrap());
    let v: serde_json::Value = serde_json::from_slice(&r1).unwrap();
    for key in ["avg", "std", "min"] {
        assert!(v["consistency"][key].is_f64());
    }
    assert!(v["skin_tone_labels"]["kl_divergence"].as_f64().unwrap() >= 0.0);
    for tone in SkinTone::ALL {
        assert!(v["magnitude"][tone.as_str()]["magnitude_std_after"].is_f64());
    }
    for key in ["ground_truth", "estimated", "aligned"] {
        assert!(v["separability"][key]["nc_accuracy"].is_f64());
    }
    let reference = &v["published_reference"];
    assert_eq!(reference["consistency_avg"].as_f64(), Some(0.9745));
    assert_eq!(reference["kl_divergence"].as_f64(), Some(0.0029));
    assert_eq!(reference["magnitude_std"].as_f64(), Some(0.1011));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("run.cfg"), "# shared settings
out = from_cfg
per-class = 2
resolution = 32
seed = 9
perplexity = 5
").unwrap();
    ok(shdebias(d.path(), &["--config", "run.cfg", "synth-gen"]));
    assert_eq!(read_truth(&d.path().join("from_cfg")).unwrap().items.len(), 8);
    ok(shdebias(d.path(), &["--config", "run.cfg", "synth-gen", "--out", "flag", "--per-class", "1"]));
    let t = read_truth(&d.path().join("flag")).unwrap();
    assert_eq!(t.items.len(), 4);
    assert_eq!(t.config.master_seed, 9);

    fs::write(d.path().join("bad.cfg"), "colour = blue
").unwrap();
    assert_eq!(shdebias(d.path(), &["--config", "bad.cfg", "synth-gen", "--out", "x"]).status.code(), Some(2));
    assert_eq!(shdebias(d.path(), &["--config", "missing.cfg", "synth-gen", "--out", "x"]).status.code(), Some(2));
}
