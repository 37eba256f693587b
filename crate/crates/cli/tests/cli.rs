use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_horizon-gcn");

fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        "data_dir = \"{d}/data\"\ncheckpoint_dir = \"{d}/ckpt\"\nreport_dir = \"{d}/reports\"\n\
         node_count = 30\nsteps = 40\nepochs = 2\nhidden = 4\nt_scale = 40.0\nt0 = 10\nt1 = 40\n\
         horizons = [1, 5]\nablation_sets = [[1], [1, 5]]\nablation_h2 = [3, 5]\n{extra}",
        d = dir.display()
    );
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(config: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--config")
        .arg(config)
        .args(["--threads", "2"])
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let manifest = ok(run(&cfg, &["generate"]));
    assert_eq!(manifest.lines().count(), 37);
    assert!(manifest.lines().next().unwrap().ends_with("mesh.bin"));

    let trained = ok(run(&cfg, &["train"]));
    assert!(trained.contains("pairs/epoch 2072"), "{trained}");
    let history = std::fs::read_to_string(dir.path().join("ckpt/history.txt")).unwrap();
    assert_eq!(history.lines().count(), 3);

    let forecasts = ok(run(&cfg, &["rollout"]));
    assert_eq!(forecasts.lines().count(), 4);
    let plan = std::fs::read_to_string(dir.path().join("reports/forecasts/melt_10.plan.txt")).unwrap();
    assert!(plan.starts_with("# t0=10 t1=40 steps=30 max_depth=6"), "{plan}");

    let summary = ok(run(&cfg, &["eval", "--series", dir.path().join("series.txt").to_str().unwrap()]));
    assert!(summary.starts_with("window rmse"));
    let report = std::fs::read_to_string(dir.path().join("reports/rmse.txt")).unwrap();
    assert_eq!(report.lines().filter(|l| !l.starts_with('#')).count(), 30);
    let series = std::fs::read_to_string(dir.path().join("series.txt")).unwrap();
    assert!(series.starts_with("11 "));

    // frozen scan and a horizon override
    let out = dir.path().join("frozen");
    ok(run(
        &cfg,
        &["rollout", "--frozen-scan", "--horizons", "1", "--out", out.to_str().unwrap()],
    ));
    let plan = std::fs::read_to_string(out.join("melt_30.plan.txt")).unwrap();
    assert!(plan.contains("max_depth=30"), "{plan}");

    let tsv = ok(run(&cfg, &["ablate-horizons", "--table", "2", "--epochs", "1"]));
    let rows: Vec<&str> = tsv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 3, "{tsv}");
    assert!(rows[1].starts_with("{1,3}\t76\t"), "{tsv}");
    assert!(rows.iter().skip(1).all(|r| r.ends_with("\tok")));
    assert!(dir.path().join("reports/ablation_second_horizon.tsv").exists());
}

#[test]
fn error_paths_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    let bad = tiny_config(dir.path(), "unknown_key = 1\n");
    assert_eq!(run(&bad, &["generate"]).status.code(), Some(1));

    let cfg = tiny_config(dir.path(), "");
    let out = run(&cfg, &["train"]);
    assert_eq!(out.status.code(), Some(2), "missing dataset is a data error");
    assert!(out.stdout.is_empty());
    assert!(!out.stderr.is_empty());

    assert_eq!(run(&cfg, &["rollout", "--t0", "30", "--t1", "20"]).status.code(), Some(1));
    assert_eq!(run(&cfg, &["eval", "--pred", "a.traj"]).status.code(), Some(1));
    assert_eq!(run(&cfg, &["no-such-command"]).status.code(), Some(1));

    ok(run(&cfg, &["generate"]));
    let corrupt = dir.path().join("data/melt_02.traj");
    let mut bytes = std::fs::read(&corrupt).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&corrupt, bytes).unwrap();
    assert_eq!(run(&cfg, &["train"]).status.code(), Some(2), "hash mismatch");

    let dir = tempfile::tempdir().unwrap();
    let blowup = tiny_config(dir.path(), "lr0 = 1e200\n");
    ok(run(&blowup, &["generate"]));
    let out = run(&blowup, &["train"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
