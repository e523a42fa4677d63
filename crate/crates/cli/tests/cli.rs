mod support;

use std::path::Path;
use std::process::{Command, Output};

use qubo_passgen::placement::{
    circle_layout, DeviceConstraints, PlacementParams, CHECK_MIN_DISTANCE,
};
use qubo_passgen::tokenizer::TokenVocabulary;
use qubo_passgen_cli::{load_model, ModelArtifact, PlacementArtifact};

/// Runs `qpg` in `dir` with whitespace-separated arguments.
fn qpg(dir: &Path, args: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qpg"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args.split_whitespace())
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &str) {
    let out = qpg(dir, args);
    assert!(
        out.status.success(),
        "qpg {args}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

const MODEL: &str = "out/model_binary_fold0.json";

/// Tiny corpus, a 16-token vocabulary and one trained fold-0 model with M = 3.
fn trained(dir: &Path) {
    support::write_corpus(&dir.join("corpus.txt"), &support::tiny(300, 1));
    ok(
        dir,
        "tokenize --corpus corpus.txt --vocab-size 16 --out vocab.json",
    );
    ok(
        dir,
        "train --corpus corpus.txt --vocab vocab.json --encoding binary --max-tokens 3 --fold 0 \
         --split-seed 2 --seed 3 --iterations 60 --samples-per-iter 500 --out-dir out",
    );
}

#[test]
fn tokenize_builds_requested_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    support::write_corpus(&d.join("corpus.txt"), &support::printable(3000, 4));
    ok(
        d,
        "tokenize --corpus corpus.txt --vocab-size 256 --out a.json",
    );
    ok(
        d,
        "tokenize --corpus corpus.txt --vocab-size 256 --out b.json",
    );
    let vocab = TokenVocabulary::from_json(&read(d, "a.json")).unwrap();
    assert_eq!(vocab.len(), 256);
    assert_eq!(read(d, "a.json"), read(d, "b.json"));

    let out = qpg(
        d,
        "tokenize --corpus corpus.txt --vocab-size 20 --out c.json",
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("c.json").exists());
}

#[test]
fn train_sizes_follow_the_encoding() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    support::write_corpus(&d.join("corpus.txt"), &support::printable(3000, 5));
    ok(
        d,
        "tokenize --corpus corpus.txt --vocab-size 256 --out vocab.json",
    );
    for (encoding, n) in [
        ("stacked16", 96),
        ("binary8", 48),
        ("stacked20", 120),
        ("stacked24", 144),
    ] {
        ok(
            d,
            &format!(
                "train --corpus corpus.txt --vocab vocab.json --encoding {encoding} --max-tokens 6 \
                 --fold 2 --split-seed 1 --seed 1 --iterations 2 --samples-per-iter 20 \
                 --burn-in 2 --thinning 1 --chains 2 --out-dir out"
            ),
        );
        let model: ModelArtifact =
            load_model(&d.join(format!("out/model_{encoding}_fold2.json"))).unwrap();
        assert_eq!(model.model.n(), n, "{encoding}");
        assert_eq!(model.fold, 2);
        let loss = read(d, &format!("out/loss_{encoding}_fold2.csv"));
        assert_eq!(loss.lines().count(), 3);
    }
    assert!(d.join("out/split.json").exists());
    assert!(d.join("out/eval_fold2.txt").exists());
    assert!(d.join("out/checkpoint_binary8_fold2.json").exists());

    let out = qpg(
        d,
        "train --corpus corpus.txt --vocab vocab.json --encoding ternary --split-seed 1 --seed 1 \
         --out-dir out",
    );
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    for name in ["binary8", "stacked16", "stacked20", "stacked24"] {
        assert!(stderr.contains(name), "{stderr}");
    }
}

#[test]
fn sample_writes_requested_count_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    ok(
        d,
        &format!("sample --model {MODEL} --count 1000 --seed 7 --out a.txt"),
    );
    ok(
        d,
        &format!("sample --model {MODEL} --count 1000 --seed 7 --out b.txt"),
    );
    ok(
        d,
        &format!("sample --model {MODEL} --count 1000 --seed 8 --out c.txt"),
    );
    ok(
        d,
        &format!("sample --model {MODEL} --count 0 --seed 7 --out empty.txt"),
    );
    let a = read(d, "a.txt");
    assert_eq!(a.lines().count(), 1000);
    assert_eq!(a, read(d, "b.txt"));
    assert_ne!(a, read(d, "c.txt"));
    assert_eq!(read(d, "empty.txt"), "");
}

#[test]
fn place_records_layout_and_violations() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    ok(
        d,
        &format!("place --model {MODEL} --iterations 0 --seed 1 --pin-epsilon 0 --out circle.json"),
    );
    let placement: PlacementArtifact = serde_json::from_str(&read(d, "circle.json")).unwrap();
    let c = PlacementParams::default_c(&DeviceConstraints::default());
    assert_eq!(placement.placement.coordinates_um, circle_layout(12, c));
    assert!(read(d, "circle.svg").starts_with("<svg"));

    // A circle of radius 2 µm puts twelve atoms closer than 4 µm to each other.
    let out = qpg(
        d,
        &format!(
            "place --model {MODEL} --iterations 0 --c 500000 --seed 1 --out tight.json \
             --svg tight-layout.svg"
        ),
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(d.join("tight-layout.svg").exists());
    let placement: PlacementArtifact = serde_json::from_str(&read(d, "tight.json")).unwrap();
    let check = placement
        .placement
        .record
        .check(CHECK_MIN_DISTANCE)
        .unwrap();
    assert!(!check.passed && !check.violations.is_empty());
}

#[test]
fn eval_reports_overlap_and_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    let eval = read(d, "out/eval_fold0.txt");
    let subset: Vec<&str> = eval.lines().take(10).collect();
    std::fs::write(d.join("subset.txt"), subset.join("\n") + "\n").unwrap();
    let args = |generated: &str, out: &str| {
        format!(
            "eval --generated {generated} --eval out/eval_fold0.txt --vocab vocab.json \
             --max-tokens 3 --baseline-count 100 --seed 5 --out {out}"
        )
    };
    ok(d, &args("subset.txt", "report.json"));
    let report: serde_json::Value = serde_json::from_str(&read(d, "report.json")).unwrap();
    assert_eq!(report["overlap"], 1.0);
    assert_eq!(report["med_mean"], 0.0);
    assert!(report["baseline_med_mean"].as_f64().unwrap() > 0.0);
    let csv = read(d, "report.csv");
    assert!(csv.lines().next().unwrap().contains("baseline_med_mean"));
    assert_eq!(csv.lines().count(), 12);

    std::fs::write(d.join("none.txt"), "").unwrap();
    let out = qpg(d, &args("none.txt", "none.json"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn emulate_decodes_blockade_samples() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    ok(
        d,
        &format!("place --model {MODEL} --iterations 100 --seed 1 --out placement.json"),
    );
    let run = |placement: &str, seed: u64, out: &str| {
        ok(
            d,
            &format!(
                "emulate --model {MODEL} --placement {placement} --count 128 --seed {seed} \
                 --out {out}"
            ),
        );
        read(d, out)
    };
    let a = run("placement.json", 3, "a.txt");
    assert_eq!(a.lines().count(), 128);
    assert_eq!(a, run("placement.json", 3, "b.txt"));

    // Every atom blockades every other: at most one qubit is excited, so each
    // password is empty or a single token.
    ok(
        d,
        &format!(
            "place --model {MODEL} --iterations 0 --blockade-radius 1000 --seed 1 \
             --out complete.json"
        ),
    );
    let vocab = TokenVocabulary::from_json(&read(d, "vocab.json")).unwrap();
    let complete = run("complete.json", 4, "c.txt");
    assert_eq!(complete.lines().count(), 128);
    assert!(complete
        .lines()
        .all(|l| l.is_empty() || vocab.tokens().iter().any(|t| t == l)));
}

#[test]
fn exit_codes_distinguish_usage_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let code = |args: &str| qpg(d, args).status.code();
    assert_eq!(code("--help"), Some(0));
    assert_eq!(code("frobnicate"), Some(1));
    assert_eq!(code("sample --model m.json --out x.txt"), Some(1));
    assert_eq!(
        code("place --model m.json --seed 1 --out p.json --jobs 0"),
        Some(1)
    );
    assert_eq!(
        code("sample --model missing.json --seed 1 --out x.txt"),
        Some(2)
    );
    std::fs::write(d.join("short.txt"), "a\n").unwrap();
    assert_eq!(
        code("tokenize --corpus short.txt --min-len 2 --out v.json"),
        Some(2)
    );
}
