use std::path::Path;
use std::process::{Command, Output};

use streamot::bench::BENCH_HEADER;
use streamot::demo::TRAJECTORY_HEADER;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_streamot"))
        .args(args)
        .env_remove("FSK_THREADS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn field(out: &str, key: &str) -> f64 {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_else(|| panic!("no {key} in {out}"))
        .trim()
        .parse()
        .unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn dense_and_stream_backends_agree() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src.fsk");
    let tgt = dir.path().join("tgt.fsk");
    for (p, seed) in [(&src, "1"), (&tgt, "2")] {
        let o = run(&["generate", "--n", "120", "--d", "3", "--seed", seed, "--out", path_str(p)]);
        assert!(o.status.success());
    }
    let solve = |backend: &str| {
        let o = run(&[
            "solve", "--source", path_str(&src), "--target", path_str(&tgt), "--eps", "0.1", "--iters", "50",
            "--backend", backend,
        ]);
        assert_eq!(o.status.code(), Some(0));
        field(&stdout(&o), "dual_cost")
    };
    assert!((solve("stream") - solve("dense")).abs() <= 1e-9);
}

#[test]
fn identical_single_points_cost_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("one.csv");
    std::fs::write(&p, "x0,x1\n0.5,-1.5\n").unwrap();
    let o = run(&["solve", "--source", path_str(&p), "--target", path_str(&p), "--tol", "1e-12"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(field(&stdout(&o), "dual_cost"), 0.0);
}

#[test]
fn schedules_agree_after_500_iterations() {
    let solve = |schedule: &str| {
        let o = run(&[
            "solve", "--n", "64", "--m", "64", "--d", "4", "--eps", "0.5", "--iters", "500", "--schedule", schedule,
        ]);
        assert!(o.status.success());
        field(&stdout(&o), "dual_cost")
    };
    assert!((solve("alt") - solve("sym")).abs() <= 1e-6);
}

#[test]
fn potentials_file_has_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pot.csv");
    let o = run(&["solve", "--n", "9", "--m", "7", "--potentials-out", path_str(&out)]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(out).unwrap();
    assert_eq!(text.lines().next(), Some("side,index,potential"));
    assert_eq!(text.lines().count(), 1 + 9 + 7);
}

#[test]
fn output_is_deterministic_and_thread_independent() {
    let args = ["solve", "--n", "300", "--m", "250", "--d", "5", "--seed", "9", "--iters", "30"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.stdout, b.stdout);
    let mut one = vec!["--threads", "1"];
    one.extend(args);
    let mut four = vec!["--threads", "4"];
    four.extend(args);
    assert_eq!(run(&one).stdout, a.stdout);
    assert_eq!(run(&four).stdout, a.stdout);
    let env = Command::new(env!("CARGO_BIN_EXE_streamot"))
        .args(args)
        .env("FSK_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(env.stdout, a.stdout);
}

#[test]
fn bench_csv_is_fixed_and_reproducible() {
    let args = ["bench", "--sizes", "50,100", "--dims", "2", "--iters", "3", "--deterministic", "--dense-budget", "100000"];
    let a = run(&args);
    assert!(a.status.success());
    let text = stdout(&a);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], BENCH_HEADER);
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("dense,alt,100,100,2,") && lines[4].contains("OOM"));
    assert_eq!(run(&args).stdout, a.stdout);
}

#[test]
fn parity_reports_and_fault_injection() {
    let ok = run(&["parity", "--only", "2,5,6"]);
    assert_eq!(ok.status.code(), Some(0));
    let text = stdout(&ok);
    assert_eq!(text.lines().filter(|l| l.starts_with("[PASS]")).count(), 3);
    let broken = run(&["parity", "--only", "2", "--break-lse"]);
    assert_eq!(broken.status.code(), Some(3));
    assert!(stdout(&broken).contains("[FAIL]"));
}

#[test]
fn parity_grid_has_three_by_three_layout() {
    let o = run(&["parity", "--only", "6", "--grid"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for eps in ["0.1", "0.25", "0.5"] {
        assert!(text.contains(&format!("eps = {eps}")), "{text}");
    }
}

#[test]
fn generate_and_read_back() {
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("a.fsk");
    let csv = dir.path().join("a.csv");
    for p in [&bin, &csv] {
        let o = run(&["generate", "--n", "20", "--d", "3", "--classes", "2", "--seed", "4", "--out", path_str(p)]);
        assert!(o.status.success());
    }
    let a = streamot::io::read_point_cloud(&bin).unwrap();
    let b = streamot::io::read_point_cloud(&csv).unwrap();
    assert_eq!(a.labels(), b.labels());
    assert_eq!(a.len(), 20);
    let o = run(&["divergence", "--source", path_str(&bin), "--target", path_str(&csv), "--otdd"]);
    assert!(o.status.success());
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["nope"]).status.code(), Some(1));
    assert_eq!(run(&["solve", "--eps", "-1"]).status.code(), Some(1));
    assert_eq!(run(&["solve", "--tile-bn", "0"]).status.code(), Some(1));
    assert_eq!(run(&["solve", "--source", "/nonexistent.fsk"]).status.code(), Some(1));
    assert_eq!(run(&["--threads", "0", "solve"]).status.code(), Some(1));
    let bad_env = Command::new(env!("CARGO_BIN_EXE_streamot"))
        .args(["solve", "--n", "5", "--m", "5"])
        .env("FSK_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(bad_env.status.code(), Some(1));
    assert_eq!(run(&["solve", "--eps", "1e-300", "--n", "10", "--m", "10"]).status.code(), Some(2));
    assert_eq!(run(&["parity", "--only", "11"]).status.code(), Some(1));
}

#[test]
fn truncated_file_is_rejected_with_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.fsk");
    assert!(run(&["generate", "--n", "10", "--d", "2", "--out", path_str(&p)]).status.success());
    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
    let o = run(&["solve", "--source", path_str(&p)]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains(&(bytes.len() - 5).to_string()), "{err}");
}

#[test]
fn shuffled_demo_writes_a_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("traj.csv");
    let o = run(&[
        "shuffled-demo", "--n", "150", "--d", "2", "--max-steps", "6", "--seed", "3", "--trajectory", path_str(&t),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&t).unwrap();
    assert_eq!(text.lines().next().unwrap(), TRAJECTORY_HEADER.join(","));
    let rows = streamot::demo::read_trajectory_csv(text.as_bytes()).unwrap();
    assert!(!rows.is_empty() && rows.len() <= 7);
    assert!(rows[0].lambda_min.is_some());
    assert!(stdout(&o).contains("W_hat"));
}
