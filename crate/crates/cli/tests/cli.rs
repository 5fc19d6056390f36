//! Integration tests for the command-line surface: exit codes, error
//! wording, config-file precedence, and determinism guarantees that the
//! acceptance gate does not already pin down.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dynarc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynarc"))
        .args(args)
        .output()
        .expect("failed to launch dynarc")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process was killed by a signal")
}

/// Small synthetic gallery shared by the predict-oriented tests.
fn synth_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let feats = dir.join("feats.emb");
    let labels = dir.join("labels.csv");
    let out = dynarc(&[
        "synth",
        "--classes",
        "10",
        "--samples",
        "200",
        "--input-dim",
        "8",
        "--noise",
        "0.2",
        "--seed",
        "1",
        "--out-features",
        feats.to_str().unwrap(),
        "--out-labels",
        labels.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    (feats, labels)
}

#[test]
fn help_and_version_exit_zero() {
    let help = dynarc(&["--help"]);
    assert_eq!(exit_code(&help), 0);
    assert!(stdout(&help).contains("Usage"));

    let version = dynarc(&["--version"]);
    assert_eq!(exit_code(&version), 0);

    let sub_help = dynarc(&["predict", "--help"]);
    assert_eq!(exit_code(&sub_help), 0);
    assert!(stdout(&sub_help).contains("--gallery-features"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = dynarc(&["synth", "--bogus", "1"]);
    assert_eq!(exit_code(&out), 1);
    assert!(!stderr(&out).is_empty());
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    let out = dynarc(&[]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn missing_input_file_is_a_runtime_error() {
    let out = dynarc(&[
        "eval",
        "--predictions",
        "/nonexistent/preds.csv",
        "--truth",
        "/nonexistent/truth.csv",
    ]);
    assert_eq!(exit_code(&out), 2);
    // The failing path is part of the message.
    assert!(
        stderr(&out).contains("/nonexistent/preds.csv"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| -> Vec<u8> {
        let feats = dir.path().join(format!("{name}.emb"));
        let labels = dir.path().join(format!("{name}.csv"));
        let out = dynarc(&[
            "synth",
            "--classes",
            "6",
            "--samples",
            "60",
            "--input-dim",
            "5",
            "--seed",
            seed,
            "--out-features",
            feats.to_str().unwrap(),
            "--out-labels",
            labels.to_str().unwrap(),
        ]);
        assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
        fs::read(feats).unwrap()
    };
    let a = run("a", "5");
    let b = run("b", "5");
    let c = run("c", "6");
    assert_eq!(a, b, "same seed must give identical features");
    assert_ne!(a, c, "different seeds must not collide");
}

#[test]
fn malformed_truth_csv_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("preds.csv");
    let truth = dir.path().join("truth.csv");
    fs::write(&preds, "query_id,class_id,confidence\ns0,1,0.5\n").unwrap();
    fs::write(&truth, "query_id,class_id\ns0,1\ns1,not_a_class\n").unwrap();

    let out = dynarc(&[
        "eval",
        "--predictions",
        preds.to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains(":3:"), "missing line number: {err}");
    assert!(err.contains("truth.csv"), "missing path: {err}");
}

#[test]
fn config_file_applies_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let (feats, labels) = synth_fixture(dir.path());
    let config = dir.path().join("train.conf");
    fs::write(
        &config,
        "# toy run\n\
         train.epochs = 3\n\
         train.embed-dim = 8\n\
         train.batch-size = 32\n\
         margin.kind = constant\n\
         margin.lower = 0.3\n\
         margin.upper = 0.3\n",
    )
    .unwrap();

    let out = dynarc(&[
        "train",
        "--features",
        feats.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--train.epochs",
        "2",
        "--out-head",
        dir.path().join("head.afh").to_str().unwrap(),
        "--out-encoder",
        dir.path().join("enc.emb").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    let log = stdout(&out);
    assert!(
        log.contains("margins (constant): min=0.3000 max=0.3000"),
        "config margin level not applied: {log}"
    );
    assert!(log.contains("epoch   2:"), "flag override lost: {log}");
    assert!(
        !log.contains("epoch   3:"),
        "config epochs not overridden: {log}"
    );
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (feats, labels) = synth_fixture(dir.path());
    let config = dir.path().join("bad.conf");
    fs::write(&config, "train.epochs = 2\npost.bogus = 1\n").unwrap();

    let out = dynarc(&[
        "train",
        "--features",
        feats.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out-head",
        dir.path().join("h.afh").to_str().unwrap(),
        "--out-encoder",
        dir.path().join("e.emb").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains("post.bogus"), "unknown key not named: {err}");
}

#[test]
fn duplicate_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (feats, labels) = synth_fixture(dir.path());
    let config = dir.path().join("dup.conf");
    fs::write(&config, "train.epochs = 2\ntrain.epochs = 3\n").unwrap();

    let out = dynarc(&[
        "train",
        "--features",
        feats.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out-head",
        dir.path().join("h.afh").to_str().unwrap(),
        "--out-encoder",
        dir.path().join("e.emb").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("duplicate"), "{}", stderr(&out));
}

#[test]
fn contradictory_constant_margin_bounds_are_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (feats, labels) = synth_fixture(dir.path());
    let out = dynarc(&[
        "train",
        "--features",
        feats.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
        "--margin.kind",
        "constant",
        "--margin.lower",
        "0.2",
        "--margin.upper",
        "0.4",
        "--out-head",
        dir.path().join("h.afh").to_str().unwrap(),
        "--out-encoder",
        dir.path().join("e.emb").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 1, "{}", stderr(&out));
}

#[test]
fn pp2_without_a_head_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (feats, labels) = synth_fixture(dir.path());
    let out = dynarc(&[
        "predict",
        "--gallery-features",
        feats.to_str().unwrap(),
        "--gallery-labels",
        labels.to_str().unwrap(),
        "--query-features",
        feats.to_str().unwrap(),
        "--mode",
        "pp1+pp2",
        "--out",
        dir.path().join("p.csv").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("--head"), "{}", stderr(&out));
}

#[test]
fn no_head_fusion_downgrades_to_pp1() {
    let dir = tempfile::tempdir().unwrap();
    let (feats, labels) = synth_fixture(dir.path());
    let out = dynarc(&[
        "predict",
        "--gallery-features",
        feats.to_str().unwrap(),
        "--gallery-labels",
        labels.to_str().unwrap(),
        "--query-features",
        feats.to_str().unwrap(),
        "--mode",
        "pp1+pp2",
        "--no-head-fusion",
        "--out",
        dir.path().join("p.csv").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("(mode=pp1)"), "{}", stdout(&out));
}

#[test]
fn bad_mode_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (feats, labels) = synth_fixture(dir.path());
    let out = dynarc(&[
        "predict",
        "--gallery-features",
        feats.to_str().unwrap(),
        "--gallery-labels",
        labels.to_str().unwrap(),
        "--query-features",
        feats.to_str().unwrap(),
        "--mode",
        "pp3",
        "--out",
        dir.path().join("p.csv").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("pp3"), "{}", stderr(&out));
}

/// Hand-assembled embedding file: magic, u32 rows/cols/width, then
/// row-major little-endian values.
fn write_emb1_f64(path: &Path, rows: &[&[f64]]) {
    let cols = rows[0].len();
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"EMB1");
    bytes.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(cols as u32).to_le_bytes());
    bytes.extend_from_slice(&8u32.to_le_bytes());
    for row in rows {
        assert_eq!(row.len(), cols);
        for v in *row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).unwrap();
}

#[test]
fn single_model_ensemble_reproduces_its_input() {
    let dir = tempfile::tempdir().unwrap();
    let feats = dir.path().join("unit.emb");
    write_emb1_f64(
        &feats,
        &[
            &[1.0, 0.0, 0.0],
            &[0.0, 1.0, 0.0],
            &[0.0, 0.0, 1.0],
            &[0.6, 0.8, 0.0],
        ],
    );
    let fused = dir.path().join("fused.emb");
    let out = dynarc(&[
        "ensemble",
        "--model",
        feats.to_str().unwrap(),
        "--out-features",
        fused.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        fs::read(&feats).unwrap(),
        fs::read(&fused).unwrap(),
        "one-model fusion must be a byte-level copy"
    );
}

#[test]
fn ensemble_rejects_non_unit_rows() {
    let dir = tempfile::tempdir().unwrap();
    let feats = dir.path().join("raw.emb");
    write_emb1_f64(&feats, &[&[2.0, 0.0], &[0.0, 1.0]]);
    let out = dynarc(&[
        "ensemble",
        "--model",
        feats.to_str().unwrap(),
        "--out-features",
        dir.path().join("fused.emb").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr(&out).contains("unit-norm"), "{}", stderr(&out));
}

#[test]
fn eval_reports_the_expected_gap() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("preds.csv");
    let truth = dir.path().join("truth.csv");
    // Middle prediction is wrong: GAP = (1/1 + 2/3) / 3 = 5/9.
    fs::write(
        &preds,
        "query_id,class_id,confidence\nq1,0,0.9\nq2,2,0.8\nq3,0,0.7\n",
    )
    .unwrap();
    fs::write(&truth, "query_id,class_id\nq1,0\nq2,1\nq3,0\n").unwrap();

    let out = dynarc(&[
        "eval",
        "--predictions",
        preds.to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    assert_eq!(stdout(&out), "gap=0.555556 acc=0.666667\n");
}

#[test]
fn gradcheck_exit_codes() {
    let ok = dynarc(&["gradcheck", "--trials", "5"]);
    assert_eq!(exit_code(&ok), 0, "{}", stderr(&ok));
    assert!(stdout(&ok).contains("max_rel_err"));

    let impossible_tol = dynarc(&["gradcheck", "--trials", "5", "--tol", "1e-30"]);
    assert_eq!(exit_code(&impossible_tol), 2);

    let no_trials = dynarc(&["gradcheck", "--trials", "0"]);
    assert_eq!(exit_code(&no_trials), 1);
}

#[test]
fn unlabeled_gallery_row_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let (feats, _) = synth_fixture(dir.path());
    let labels = dir.path().join("holey.csv");
    // 200 rows; row s000001 has an empty class field.
    let mut body = String::from("id,class_id\n");
    for i in 0..200 {
        if i == 1 {
            body.push_str(&format!("s{i:06},\n"));
        } else {
            body.push_str(&format!("s{i:06},3\n"));
        }
    }
    fs::write(&labels, body).unwrap();

    let out = dynarc(&[
        "predict",
        "--gallery-features",
        feats.to_str().unwrap(),
        "--gallery-labels",
        labels.to_str().unwrap(),
        "--query-features",
        feats.to_str().unwrap(),
        "--out",
        dir.path().join("p.csv").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr(&out).contains("s000001"), "{}", stderr(&out));
}
