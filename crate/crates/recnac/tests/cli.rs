//! End-to-end checks of the command-line interface through the compiled
//! binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn recnac(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recnac"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn gen_pomdp_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = recnac(
        &[
            "gen-pomdp",
            "--states",
            "3",
            "--obs",
            "2",
            "--actions",
            "4",
            "--seed",
            "7",
            "--out",
            "instance.json",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let pomdp = recnac::pomdp::Pomdp::load(&dir.path().join("instance.json")).unwrap();
    assert_eq!((pomdp.n_states, pomdp.n_obs, pomdp.n_actions), (3, 2, 4));
}

#[test]
fn run_rec_td_sweep_writes_curves_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("cfg.toml"),
        concat!(
            "kind = \"rec-td\"\n",
            "seed = 3\n",
            "trials = 2\n",
            "widths = [4]\n",
            "seq_lens = [2]\n",
            "[policy]\nkind = \"uniform\"\n",
            "[features]\nd = 3\nseed = 1\n",
            "[rec_td]\nk_iters = 3\n",
        ),
    )
    .unwrap();
    let out = recnac(&["run-rec-td", "--config", "cfg.toml", "--out", "results"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let results = dir.path().join("results");
    assert!(results.join("pomdp.json").is_file());
    assert!(results.join("metadata.toml").is_file());
    assert!(results.join("mstd_m4_T2.csv").is_file());
    let trial = fs::read_to_string(results.join("trials/mstd_m4_T2_trial0.csv")).unwrap();
    assert!(trial.starts_with("iteration,value\n"));
    assert_eq!(trial.lines().count(), 1 + 3);
}

#[test]
fn invalid_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "trials = 0\n").unwrap();
    let out = recnac(&["run-rec-td", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("invalid config"));
}

#[test]
fn missing_config_exits_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = recnac(&["run-rec-td", "--config", "absent.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn aggregate_bands_trial_curves() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.csv"), "iteration,value\n0,1.0\n1,2.0\n").unwrap();
    fs::write(dir.path().join("b.csv"), "iteration,value\n0,3.0\n1,4.0\n").unwrap();
    let out = recnac(&["aggregate", "--out", "band.csv", "a.csv", "b.csv"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let band = fs::read_to_string(dir.path().join("band.csv")).unwrap();
    let mut lines = band.lines();
    assert_eq!(lines.next(), Some("iteration,mean,lo,hi"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[1], "2");

    let single = recnac(&["aggregate", "--out", "one.csv", "a.csv"], dir.path());
    assert!(single.status.success());
    assert!(stderr(&single).contains("degenerate"));
}

#[test]
fn verify_passes_with_defaults_and_fails_on_impossible_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let out = recnac(&["verify"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("pass"));
    assert!(!stdout(&out).contains("FAIL"));

    fs::write(dir.path().join("tight.toml"), "[bounds]\ngrad_fd = 1e-30\n").unwrap();
    let failing = recnac(&["verify", "--config", "tight.toml"], dir.path());
    assert_eq!(failing.status.code(), Some(1));
    assert!(stdout(&failing).contains("FAIL"));
}
