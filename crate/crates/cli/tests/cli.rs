//! Drives the `lsvos` binary end to end on the smoke preset.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lsvos(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lsvos"))
        .env("LSVOS_OUTPUT_ROOT", root)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

#[test]
fn generate_is_reproducible() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    for dir in [&a, &b] {
        let d = dir.to_str().unwrap();
        ok(lsvos(
            root.path(),
            &[
                "generate", "--preset", "smoke", "--seed", "4", "--scenes", "2", "--out", d,
            ],
        ));
    }
    for f in ["train.vosf", "val.vosf", "scenes/scene_0001.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn invalid_overlap_is_rejected() {
    let root = tempfile::tempdir().unwrap();
    let out = lsvos(root.path(), &["generate", "--preset", "smoke", "--fp-overlap", "1.2"]);
    assert!(!out.status.success());
}

#[test]
fn unknown_config_key_lists_accepted_keys() {
    let root = tempfile::tempdir().unwrap();
    let out = lsvos(
        root.path(),
        &["train", "--preset", "smoke", "--set", "noise.gamma=1", "--dry-run"],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("noise.gamma") && err.contains("noise.alpha"), "{err}");
}

#[test]
fn dry_run_prints_resolved_config() {
    let root = tempfile::tempdir().unwrap();
    let out = ok(lsvos(
        root.path(),
        &["train", "--preset", "smoke", "--set", "loss.lambda=0.5", "--dry-run"],
    ));
    let text = stdout(&out);
    assert!(text.starts_with("config ok"));
    assert!(text.contains("0.5"), "{text}");
    assert!(!root.path().join("runs").exists());
}

#[test]
fn train_evaluate_report_round_trip() {
    let root = tempfile::tempdir().unwrap();
    let run = root.path().join("run");
    let r = run.to_str().unwrap();
    let trained = stdout(&ok(lsvos(root.path(), &["train", "--preset", "smoke", "--out", r])));
    for f in [
        "config.toml",
        "report.json",
        "checkpoint.bin",
        "manifest.json",
        "scores.csv",
    ] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let table = |s: &str| {
        s.lines()
            .skip_while(|l| !l.contains("AUROC"))
            .map(str::to_owned)
            .collect::<Vec<_>>()
    };
    let evaluated = stdout(&ok(lsvos(root.path(), &["evaluate", "--run", r])));
    let reported = stdout(&ok(lsvos(root.path(), &["report", "--run", r])));
    assert!(trained.contains("LS-VOS (ours)") && trained.contains("Default score"));
    assert_eq!(table(&trained), table(&evaluated));
    assert_eq!(table(&trained), table(&reported));
}

#[test]
fn lambda_sweep_emits_five_rows() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("abl");
    let o = out.to_str().unwrap();
    let text = stdout(&ok(lsvos(
        root.path(),
        &[
            "ablate",
            "--preset",
            "smoke",
            "--sweep",
            "loss.lambda=0.1,0.5,1,2,5",
            "--out",
            o,
        ],
    )));
    assert_eq!(
        text.lines().filter(|l| l.starts_with("loss.lambda=")).count(),
        5,
        "{text}"
    );
    assert!(out.join("ablation.csv").is_file());
    let report = stdout(&ok(lsvos(root.path(), &["report", "--run", o])));
    assert_eq!(report.lines().filter(|l| l.starts_with("loss.lambda=")).count(), 5);
}
