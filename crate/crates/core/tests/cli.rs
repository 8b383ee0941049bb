use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use protoset::training::{init_model, TrainConfig};
use protoset::Model;

fn protoset(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_protoset"))
        .current_dir(dir)
        .env("PROTO_SET_THREADS", "1")
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn gen_small(dir: &Path) {
    fs::write(
        dir.join("synth.txt"),
        "n_subjects=6\nmin_media=4\nmax_media=8\n",
    )
    .unwrap();
    let o = protoset(
        dir,
        &[
            "gen-data",
            "--out",
            "data.txt",
            "--config",
            "synth.txt",
            "--pairs",
            "40",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(protoset(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(
        protoset(dir.path(), &["eval", "--help"]).status.code(),
        Some(0)
    );
}

#[test]
fn bad_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(
        protoset(p, &["train", "--frobnicate"]).status.code(),
        Some(1)
    );
    fs::write(p.join("bad.txt"), "not a dataset\n").unwrap();
    let o = protoset(
        p,
        &["train", "--desk", "--dataset", "bad.txt", "--out", "o"],
    );
    assert_eq!(o.status.code(), Some(1));
    fs::write(p.join("cfg.txt"), "tau=-1\n").unwrap();
    gen_small(p);
    let o = protoset(
        p,
        &[
            "train",
            "--desk",
            "--config",
            "cfg.txt",
            "--dataset",
            "data.txt",
            "--out",
            "o",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn partition_matches_oracle_on_block_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let csv = "0,0.1,0.1,1,1,1\n\
               0.1,0,0.1,1,1,1\n\
               0.1,0.1,0,1,1,1\n\
               1,1,1,0,0.1,0.1\n\
               1,1,1,0.1,0,0.1\n\
               1,1,1,0.1,0.1,0\n";
    fs::write(dir.path().join("d.csv"), csv).unwrap();
    let o = protoset(dir.path(), &["partition", "d.csv", "--k", "2"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let field = |key: &str| {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{key}: ")))
            .unwrap_or_else(|| panic!("missing {key} in {text}"))
            .to_string()
    };
    let value: f64 = field("value").parse().unwrap();
    let oracle: f64 = field("oracle_value").parse().unwrap();
    assert!((value - oracle).abs() < 1e-12);
    assert!((oracle - 1.2).abs() < 1e-12);
}

#[test]
fn zero_iteration_training_keeps_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    gen_small(p);
    fs::write(p.join("cfg.txt"), "max_iters=0\n").unwrap();
    let o = protoset(
        p,
        &[
            "train",
            "--desk",
            "--config",
            "cfg.txt",
            "--seed",
            "3",
            "--dataset",
            "data.txt",
            "--out",
            "run",
        ],
    );
    assert!(o.status.success());
    let saved = Model::load(p.join("run/checkpoint.txt")).unwrap();
    let mut cfg = TrainConfig::desk();
    cfg.seed = 3;
    assert_eq!(saved, init_model(&cfg).unwrap());
    assert_eq!(
        fs::read_to_string(p.join("run/loss.csv"))
            .unwrap()
            .lines()
            .count(),
        1
    );
}

#[test]
fn train_then_eval_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    gen_small(p);
    fs::write(
        p.join("cfg.txt"),
        "epochs=1\npairs_per_epoch=40\ngrad_check=true\n",
    )
    .unwrap();
    let o = protoset(
        p,
        &[
            "train",
            "--desk",
            "--config",
            "cfg.txt",
            "--dataset",
            "data.txt",
            "--out",
            "run",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("dsg.w"), "{}", stdout(&o));
    let o = protoset(
        p,
        &[
            "eval",
            "--desk",
            "--dataset",
            "data.txt",
            "--checkpoint",
            "run/checkpoint.txt",
            "--pairs",
            "data.pairs",
            "--out",
            "run",
            "--mode",
            "proto",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("tar@far=0.01"));
    for f in ["roc.csv", "cmc.csv", "metrics.txt", "config.txt"] {
        assert!(p.join("run").join(f).exists(), "missing {f}");
    }
}

#[test]
fn grad_check_and_bench_commands() {
    let dir = tempfile::tempdir().unwrap();
    let o = protoset(dir.path(), &["grad-check", "--draws", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let o = protoset(dir.path(), &["bench", "--desk", "--n", "64", "--reps", "3"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("mode=media distance_evals=4096"), "{text}");
    let proto = text.lines().find(|l| l.starts_with("mode=proto")).unwrap();
    let evals: usize = proto
        .split_whitespace()
        .find_map(|t| t.strip_prefix("distance_evals="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(evals <= 64);
}
