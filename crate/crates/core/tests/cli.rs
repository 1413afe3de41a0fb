//! End-to-end checks of the `precondnet` binary and the files it writes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use precondnet::bench::{load_audit_csv, summarize, write_summary_csv, Method};
use precondnet::cnn::load_checkpoint;
use precondnet::poisson::load_dataset;
use precondnet::training::load_history_csv;

fn precondnet(args: &[&str], envs: &[(&str, &str)]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_precondnet"))
        .args(args)
        .env_remove("PRECONDNET_DENSE_CAP")
        .envs(envs.iter().copied())
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = precondnet(args, &[]);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

/// Generates a 5x5 dataset and trains one epoch, returning (data, checkpoint).
fn small_setup(dir: &Path) -> (String, String) {
    let data = path(dir, "data.pmd");
    ok(&[
        "gen",
        "--height",
        "5",
        "--width",
        "5",
        "--count",
        "3",
        "--obstacles",
        "1",
        "--seed",
        "4",
        "--out",
        &data,
    ]);
    let model_dir = path(dir, "model");
    ok(&[
        "train", "--data", &data, "--val", &data, "--epochs", "1", "--out", &model_dir,
    ]);
    (data, path(dir, "model/best.ckpt"))
}

#[test]
fn gen_writes_a_loadable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "d.pmd");
    ok(&[
        "gen",
        "--height",
        "7",
        "--width",
        "9",
        "--count",
        "4",
        "--obstacles",
        "2",
        "--seed",
        "1",
        "--out",
        &data,
    ]);
    let text = std::fs::read_to_string(&data).unwrap();
    assert!(text.starts_with("PMD1 4\n"));
    let samples = load_dataset(&data).unwrap();
    assert_eq!(samples.len(), 4);
    for (k, s) in samples.iter().enumerate() {
        assert_eq!(s.id, k);
        assert_eq!((s.grid.height(), s.grid.width()), (7, 9));
        assert_eq!(s.n(), s.grid.n_fluid());
    }
}

#[test]
fn train_writes_checkpoints_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ckpt) = small_setup(dir.path());
    load_checkpoint(&ckpt).unwrap();
    load_checkpoint(dir.path().join("model/epoch_1.ckpt")).unwrap();
    let history = load_history_csv(dir.path().join("model/history.csv")).unwrap();
    assert_eq!(history.epochs.len(), 1);
    assert!(history.epochs[0].train_loss >= 1.0 && history.epochs[0].val_loss >= 1.0);
}

#[test]
fn eval_writes_summary_audit_and_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ckpt) = small_setup(dir.path());
    let summary = path(dir.path(), "summary.csv");
    let residuals = path(dir.path(), "curves");
    ok(&[
        "eval",
        "--data",
        &data,
        "--model",
        &ckpt,
        "--summary",
        &summary,
        "--residual-dir",
        &residuals,
    ]);

    let text = std::fs::read_to_string(&summary).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("method,time_ms,iter,kappa,density"));
    let methods: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["vanilla", "jacobi", "ic0", "amg", "learned"]);

    // every summary row is recomputable from the audit file
    let audit = load_audit_csv(dir.path().join("summary.audit.csv")).unwrap();
    assert_eq!(audit.len(), 15);
    let mut again = Vec::new();
    write_summary_csv(&summarize(&audit).unwrap(), false, &mut again).unwrap();
    assert_eq!(again, text.as_bytes());

    for m in Method::ALL {
        for id in 0..3 {
            let curve = std::fs::read_to_string(
                PathBuf::from(&residuals).join(format!("{m}_sample{id}.csv")),
            )
            .unwrap();
            assert!(curve.starts_with("iteration,residual\n0,"));
        }
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ckpt) = small_setup(dir.path());
    let mut outputs = Vec::new();
    for threads in ["1", "2"] {
        let summary = path(dir.path(), &format!("s{threads}.csv"));
        ok(&[
            "--threads",
            threads,
            "eval",
            "--data",
            &data,
            "--model",
            &ckpt,
            "--summary",
            &summary,
            "--omit-time",
        ]);
        outputs.push(std::fs::read(&summary).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert!(String::from_utf8_lossy(&outputs[0]).contains(",NA,"));
}

#[test]
fn learned_without_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = small_setup(dir.path());
    let out = precondnet(
        &[
            "eval",
            "--data",
            &data,
            "--methods",
            "learned",
            "--summary",
            &path(dir.path(), "s.csv"),
        ],
        &[],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
    assert!(!dir.path().join("s.csv").exists());
}

#[test]
fn unknown_method_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = small_setup(dir.path());
    let out = precondnet(
        &[
            "eval",
            "--data",
            &data,
            "--methods",
            "vanilla,ilu",
            "--summary",
            &path(dir.path(), "s.csv"),
        ],
        &[],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("ilu"));
}

#[test]
fn dense_cap_variable_limits_spectral_work() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "d.pmd");
    ok(&[
        "gen",
        "--height",
        "4",
        "--width",
        "4",
        "--count",
        "1",
        "--obstacles",
        "0",
        "--seed",
        "1",
        "--out",
        &data,
    ]);
    let summary = path(dir.path(), "s.csv");
    let args = [
        "eval",
        "--data",
        &data,
        "--methods",
        "vanilla",
        "--summary",
        &summary,
    ];
    let refused = precondnet(&args, &[("PRECONDNET_DENSE_CAP", "8")]);
    assert!(!refused.status.success());
    assert!(String::from_utf8_lossy(&refused.stderr).contains("16"));
    let allowed = precondnet(&args, &[("PRECONDNET_DENSE_CAP", "16")]);
    assert!(
        allowed.status.success(),
        "{}",
        String::from_utf8_lossy(&allowed.stderr)
    );
}

#[test]
fn corrupt_dataset_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "bad.pmd");
    std::fs::write(&data, "PMD1 1\nsample 0 2 2\n.. ..\nmatrix 4 x\n").unwrap();
    let out = precondnet(
        &[
            "eval",
            "--data",
            &data,
            "--methods",
            "vanilla",
            "--summary",
            &path(dir.path(), "s.csv"),
        ],
        &[],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));
}
