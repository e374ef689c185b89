use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "env.side=7",
    "env.episode_cap=6",
    "model.latent_channels=2",
    "model.hidden=4",
    "mcts.budget=3",
    "train.batch_size=4",
    "train.total_steps=4",
    "train.selfplay_every=2",
    "train.metrics_every=2",
    "split.n_train=2",
    "split.n_eval=2",
    "eval.episodes=2",
    "audit.cases=2",
    "audit.budget=4",
];

fn eqmz(out: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_eqmz"));
    cmd.args(args).arg("--out").arg(out);
    for s in TINY {
        cmd.args(["--set", s]);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn pipeline_runs_and_repeats_byte_for_byte() {
    let run = |dir: &Path| {
        for args in [&["gen-maps"][..], &["train"], &["train", "--set", "variant=StdMuZero"], &["eval"], &["audit"]] {
            let o = eqmz(dir, args);
            assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        }
        let eval = fs::read_to_string(dir.join("eval.csv")).unwrap();
        assert_eq!(eval.lines().count(), 7);
        (
            eval,
            fs::read(dir.join("EqMuZero/checkpoint.txt")).unwrap(),
            fs::read(dir.join("StdMuZero/metrics.csv")).unwrap(),
        )
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(run(a.path()), run(b.path()));
}

#[test]
fn train_without_maps_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = eqmz(dir.path(), &["train"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = eqmz(dir.path(), &["gen-maps", "--set", "train.nonsense=1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_config_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = eqmz(dir.path(), &["gen-maps", "--config", "/nonexistent/eqmz.toml"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn unreadable_plot_input_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_eqmz"))
        .args(["plot", "/nonexistent/metrics.csv", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn divergence_exits_4_and_keeps_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&eqmz(dir.path(), &["gen-maps"])), 0);
    let o = eqmz(dir.path(), &["train", "--set", "train.learning_rate=1.7e308"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("EqMuZero/checkpoint.txt").exists());
}
