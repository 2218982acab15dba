use std::path::Path;
use std::process::{Command, Output};

use lms2s::checkpoint::load_checkpoint;
use lms2s::cli::{read_report, CHECKPOINT_FILE, CLUSTER_FILE, REPORT_FILE, TRAJECTORY_FILE};

const TINY: [&str; 11] = [
    "hidden=6",
    "latent=5",
    "embed=4",
    "epochs=2",
    "train_size=40",
    "valid_size=12",
    "max_steps=30",
    "episode_len=10",
    "learning_starts=10",
    "sac_batch=8",
    "sac_hidden=8",
];

fn lms2s(out_dir: &Path, args: &[&str]) -> Output {
    let out = format!("out_dir={}", out_dir.display());
    Command::new(env!("CARGO_BIN_EXE_lms2s"))
        .args(args)
        .args(TINY)
        .arg(out)
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = lms2s(dir.path(), &["pipeline", "--seed", "7"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    for f in [CHECKPOINT_FILE, TRAJECTORY_FILE, CLUSTER_FILE, REPORT_FILE] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let report = read_report(&dir.path().join(REPORT_FILE)).expect("parseable report");
    assert_eq!(report.pairs, 12);
    assert_eq!(report.cluster_counts.len(), 2);
    let stdout = text(&out.stdout);
    assert!(stdout.starts_with("hidden=6\n"), "config echo comes first");
    assert!(stdout.contains("seed=7\n"));
    let traj = std::fs::read_to_string(dir.path().join(TRAJECTORY_FILE)).unwrap();
    assert!(traj.starts_with("step\tepisode\tsc\treward\tdone\tbest_sc\ta0"));
}

#[test]
fn same_seed_gives_identical_reports() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = lms2s(d.path(), &["pipeline", "--seed", "3"]);
        assert!(out.status.success(), "{}", text(&out.stderr));
    }
    let ra = std::fs::read(a.path().join(REPORT_FILE)).unwrap();
    let rb = std::fs::read(b.path().join(REPORT_FILE)).unwrap();
    assert_eq!(ra, rb);
    // The config echo records each run's own out_dir, so compare parameters.
    let ca = load_checkpoint(&a.path().join(CHECKPOINT_FILE)).unwrap();
    let cb = load_checkpoint(&b.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ca.params, cb.params);
}

#[test]
fn phases_run_one_at_a_time() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["train", "enhance", "train-filters", "cluster-report", "evaluate"] {
        let out = lms2s(dir.path(), &[cmd, "--seed", "5"]);
        assert!(out.status.success(), "{cmd}: {}", text(&out.stderr));
    }
    assert!(read_report(&dir.path().join(REPORT_FILE)).is_some());
}

#[test]
fn evaluate_without_checkpoint_names_the_missing_phase() {
    let dir = tempfile::tempdir().unwrap();
    let out = lms2s(dir.path(), &["evaluate"]);
    assert!(!out.status.success());
    let err = text(&out.stderr);
    assert!(err.contains("run `train` before `evaluate`"), "{err}");
}

#[test]
fn evaluate_after_train_asks_for_filters() {
    let dir = tempfile::tempdir().unwrap();
    assert!(lms2s(dir.path(), &["train"]).status.success());
    let out = lms2s(dir.path(), &["evaluate"]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("`train-filters`"), "{}", text(&out.stderr));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = lms2s(dir.path(), &["train", "hiden=3"]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("hiden"), "{}", text(&out.stderr));
}

#[test]
fn config_file_is_read_and_overridden() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# tiny run\nepochs = 1\nmix = 0.25\n").unwrap();
    let out = lms2s(dir.path(), &["gen-data", "--config", cfg.to_str().unwrap(), "mix=0.75"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("mix=0.75\n"), "{stdout}");
    let train = std::fs::read_to_string(dir.path().join("train.tsv")).unwrap();
    assert_eq!(train.lines().count(), 40);
}

#[test]
fn help_lists_every_subcommand() {
    let out = Command::new(env!("CARGO_BIN_EXE_lms2s"))
        .arg("--help")
        .output()
        .unwrap();
    assert!(out.status.success());
    let help = text(&out.stdout);
    for cmd in [
        "gen-data",
        "train",
        "enhance",
        "train-filters",
        "evaluate",
        "cluster-report",
        "pipeline",
    ] {
        assert!(help.contains(cmd), "{cmd} missing from help");
    }
}
