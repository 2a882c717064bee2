use std::path::Path;
use std::process::{Command, Output};

fn gpg_rl(args: &[&str], out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gpg-rl"));
    cmd.args(args).arg("--quiet");
    if args[0] == "eval" {
        cmd.arg("--csv").arg(out.join("evals.csv"));
    } else {
        cmd.arg("--out").arg(out);
    }
    cmd
        .env_remove("GPG_RL_OUT")
        .output()
        .expect("spawn gpg-rl")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small(extra: &[&'static str]) -> Vec<&'static str> {
    let mut v = extra.to_vec();
    v.extend_from_slice(&["--num-envs", "2", "--set", "rollout_length=16", "--iterations", "2", "--eval-seeds", "1"]);
    v
}

#[test]
fn zero_iterations_writes_header_and_initial_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gpg_rl(&["train", "--env", "cartpole", "--iterations", "0", "--eval-seeds", "1"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = tmp.path().join("cartpole/gpg-time/16/1");
    let metrics = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1);
    assert!(metrics.starts_with("iteration,env_steps,mean_return"));
    assert!(dir.join("checkpoint.bin").exists());
    assert!(std::fs::read_to_string(dir.join("config.resolved")).unwrap().contains("iterations = 0"));
}

#[test]
fn same_seed_gives_identical_metrics_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = small(&["train", "--env", "cliffwalking", "--threads", "1", "--zero-wall-clock"]);
    for d in [&a, &b] {
        let o = gpg_rl(&args, d.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let rel = "cliffwalking/gpg-time/2/1";
    for f in ["metrics.csv", "eval.csv", "checkpoint.bin"] {
        let x = std::fs::read(a.path().join(rel).join(f)).unwrap();
        let y = std::fs::read(b.path().join(rel).join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn unknown_config_key_is_usage_error_naming_key() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gpg_rl(&["train", "--set", "learnig_rate=0.1"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learnig_rate"));

    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "# comment\ngamma = 0.9\nbogus_key = 1\n").unwrap();
    let o = gpg_rl(&["train", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus_key"));
}

#[test]
fn bad_binning_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gpg_rl(&["train", "--binning", "hexagonal"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = gpg_rl(&["ablate-binning", "--env", "pointmass", "--binning", "time,nope"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = gpg_rl(&["train", "--env", "cliffwalking", "--binning", "spatial:0.5"], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = gpg_rl(&["ablate-binning", "--env", "cliffwalking", "--binning", "spatial:0.5"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!tmp.path().join("cliffwalking").exists());
}

#[test]
fn missing_config_file_is_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gpg_rl(&["train", "--config", "/nonexistent/x.cfg"], tmp.path());
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn eval_round_trip_and_env_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gpg_rl(&small(&["train", "--env", "cartpole"]), tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = tmp.path().join("cartpole/gpg-time/2/1/checkpoint.bin");
    let ckpt = ckpt.to_str().unwrap();
    let first = gpg_rl(&["eval", "--checkpoint", ckpt, "--n-seeds", "3"], tmp.path());
    let second = gpg_rl(&["eval", "--checkpoint", ckpt, "--n-seeds", "3"], tmp.path());
    assert!(first.status.success(), "{}", stderr(&first));
    assert_eq!(first.stdout, second.stdout);
    let appended = std::fs::read_to_string(tmp.path().join("evals.csv")).unwrap();
    assert_eq!(appended.lines().count(), 3);

    let o = gpg_rl(&["eval", "--checkpoint", ckpt, "--env", "cliffwalking"], tmp.path());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn resume_continues_the_iteration_counter() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gpg_rl(&small(&["train", "--env", "cliffwalking"]), tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = tmp.path().join("cliffwalking/gpg-time/2/1/checkpoint.bin");
    let out2 = tmp.path().join("resumed");
    let o = gpg_rl(
        &["train", "--env", "cliffwalking", "--num-envs", "2", "--set", "rollout_length=16", "--iterations", "3",
            "--eval-seeds", "1", "--resume", ckpt.to_str().unwrap()],
        &out2,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = std::fs::read_to_string(out2.join("cliffwalking/gpg-time/2/1/metrics.csv")).unwrap();
    let rows: Vec<_> = metrics.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("3,96,"), "{}", rows[0]);
}

#[test]
fn sweep_with_one_cell_makes_one_run() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gpg_rl(
        &["sweep", "--env", "cliffwalking", "--num-envs", "1", "--seeds", "5", "--set", "rollout_length=16",
            "--iterations", "1", "--eval-seeds", "1"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let seeds: Vec<_> = std::fs::read_dir(tmp.path().join("cliffwalking/gpg-time/1")).unwrap().collect();
    assert_eq!(seeds.len(), 1);
    let mut r = csv::Reader::from_path(tmp.path().join("sweep_summary.csv")).unwrap();
    assert_eq!(r.headers().unwrap().len(), 8);
    assert_eq!(r.records().count(), 1);
}

#[test]
fn sweep_summary_has_one_row_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gpg_rl(
        &["sweep", "--env", "cliffwalking", "--algo", "gpg,grpo", "--num-envs", "1,2", "--seeds", "1",
            "--set", "rollout_length=8", "--iterations", "1", "--eval-seeds", "1"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let mut r = csv::Reader::from_path(tmp.path().join("sweep_summary.csv")).unwrap();
    let rows: Vec<_> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 4);
    for row in &rows {
        assert_eq!(&row[3], "1");
        assert_eq!(&row[4], "0");
        let eval = std::fs::read_to_string(
            tmp.path().join("cliffwalking").join(if &row[1] == "grpo" { "grpo" } else { "gpg-time" })
                .join(&row[2]).join("1/eval.csv"),
        )
        .unwrap();
        let mean: f64 = eval.lines().nth(1).unwrap().split(',').nth(4).unwrap().parse().unwrap();
        assert_eq!(mean, row[5].parse::<f64>().unwrap());
    }
}

#[test]
fn duplicate_seeds_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gpg_rl(&["sweep", "--seeds", "1,1", "--iterations", "0"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn out_env_var_sets_root() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_gpg-rl"))
        .args(["train", "--env", "cliffwalking", "--iterations", "0", "--eval-seeds", "1", "--quiet"])
        .env("GPG_RL_OUT", tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(tmp.path().join("cliffwalking/gpg-time/16/1/metrics.csv").exists());
}

#[test]
fn oracle_check_reports_and_fails_on_tight_tolerance() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gpg_rl(&["oracle-check", "--n-list", "20,200", "--reps", "3", "--tolerance", "1e-9"], tmp.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let summary = std::fs::read_to_string(tmp.path().join("oracle/oracle_summary.txt")).unwrap();
    assert!(summary.contains("PASS"));
    assert!(summary.contains("FAIL"));
    let mut r = csv::Reader::from_path(tmp.path().join("oracle/oracle.csv")).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["estimator", "N", "repetition", "rel_error"]);
    assert_eq!(r.records().count(), 4 * 2 * 3);

    let o = gpg_rl(&["oracle-check", "--n-list", "1"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}
