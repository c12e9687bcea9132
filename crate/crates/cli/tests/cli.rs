use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn scanb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scanb"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn value(out: &str, key: &str) -> f64 {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key}= in {out}"))
        .parse()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn calibrate_prints_threshold_and_check() {
    let o = scanb(&["calibrate", "--arl", "5000", "--b0", "20"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 2);
    assert!(out.lines().next().unwrap().starts_with("threshold="));
    assert!((value(&out, "arl_check") / 5000.0 - 1.0).abs() < 1e-5);
}

#[test]
fn calibrate_rejects_small_arl() {
    let o = scanb(&["calibrate", "--arl", "0.5", "--b0", "20"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("> 1"), "{}", stderr(&o));
}

#[test]
fn calibrate_below_reachable_range_is_numerical() {
    let o = scanb(&["calibrate", "--arl", "5", "--b0", "20"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn calibrate_thresholds_ordered() {
    let lo = value(&stdout(&scanb(&["calibrate", "--arl", "100", "--b0", "20"])), "threshold");
    let hi = value(&stdout(&scanb(&["calibrate", "--arl", "10000", "--b0", "20"])), "threshold");
    assert!(lo < hi);
}

#[test]
fn generate_shape_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let o = scanb(&[
            "generate", "--case", "case5-laplace", "--tau", "100", "--length", "200", "--seed", "7", "--out", p(path),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(stdout(&o).contains("seed=7"));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 200);
    assert!(text.lines().all(|l| !l.contains(',') && l.parse::<f64>().is_ok()));
    assert_eq!(text, fs::read_to_string(&b).unwrap());
}

#[test]
fn generate_prints_default_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let o = scanb(&["generate", "--case", "case1-mean-shift", "--tau", "5", "--length", "10", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("seed=0"));
}

#[test]
fn generate_rejects_tau_beyond_length() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let o = scanb(&["generate", "--case", "case1-mean-shift", "--tau", "300", "--length", "200", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn generate_rejects_unknown_case() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let o = scanb(&["generate", "--case", "case9", "--tau", "0", "--length", "10", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

fn write_null(dir: &Path, name: &str, rows: usize, seed: u64) -> std::path::PathBuf {
    let path = dir.join(name);
    let n = rows.to_string();
    let s = seed.to_string();
    let o = scanb(&["generate", "--case", "case1-mean-shift", "--tau", &n, "--length", &n, "--seed", &s, "--out", p(&path)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    path
}

#[test]
fn detect_huge_threshold_never_alarms() {
    let dir = tempfile::tempdir().unwrap();
    let pool = write_null(dir.path(), "pool.csv", 300, 1);
    let stream = write_null(dir.path(), "stream.csv", 200, 2);
    let o = scanb(&["detect", "--stream", p(&stream), "--pool", p(&pool), "--threshold", "1e12"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("no alarm"), "{out}");
    assert!(out.contains("final_statistic="));
    assert!(out.contains("seed=0"));
}

#[test]
fn detect_dimension_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let pool = write_null(dir.path(), "pool.csv", 300, 1);
    let stream = write_null(dir.path(), "stream.csv", 30, 2);
    let mut text = fs::read_to_string(&stream).unwrap();
    text.push_str("0.1,0.2,0.3\n");
    fs::write(&stream, text).unwrap();
    let o = scanb(&["detect", "--stream", p(&stream), "--pool", p(&pool)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let narrow = dir.path().join("narrow.csv");
    fs::write(&narrow, "0.1,0.2,0.3\n".repeat(40)).unwrap();
    let o = scanb(&["detect", "--stream", p(&narrow), "--pool", p(&pool)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn detect_malformed_row_exits_1_with_row() {
    let dir = tempfile::tempdir().unwrap();
    let pool = write_null(dir.path(), "pool.csv", 300, 1);
    let stream = dir.path().join("bad.csv");
    let good = "0,0,0,0,0,0,0,0,0,0\n";
    fs::write(&stream, format!("{good}{good}0,0,0,abc,0,0,0,0,0,0\n")).unwrap();
    let o = scanb(&["detect", "--stream", p(&stream), "--pool", p(&pool)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("row 3"), "{}", stderr(&o));
}

#[test]
fn detect_finds_mean_shift_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let pool = write_null(dir.path(), "pool.csv", 500, 1000);
    let trials = 20;
    let mut quick = 0;
    for seed in 0..trials {
        let stream = dir.path().join(format!("s{seed}.csv"));
        let s = seed.to_string();
        let o = scanb(&["generate", "--case", "case1-mean-shift", "--tau", "0", "--length", "100", "--seed", &s, "--out", p(&stream)]);
        assert_eq!(o.status.code(), Some(0));
        let o = scanb(&["detect", "--stream", p(&stream), "--pool", p(&pool), "--arl", "500", "--seed", &s]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let out = stdout(&o);
        if let Some(t) = out.lines().find_map(|l| l.strip_prefix("alarm at t=")) {
            if t.parse::<u64>().unwrap() <= 50 {
                quick += 1;
            }
        }
    }
    assert!(quick as f64 >= 0.95 * trials as f64, "{quick}/{trials}");
}

const MINIMAL: &str = r#"
[plan]
methods = ["scanB"]
cases = ["case1-mean-shift"]
replications = 10
reference_pool_size = 300
variance_tuples = 2000
"#;

#[test]
fn experiment_minimal_config_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("plan.toml");
    fs::write(&cfg, MINIMAL).unwrap();
    let mut outputs = Vec::new();
    for run in ["r1", "r2"] {
        let out = dir.path().join(run);
        let o = scanb(&["experiment", "--config", p(&cfg), "--out", p(&out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let text = stdout(&o);
        assert!(text.contains("base_seed=20190401"), "{text}");
        assert!(text.contains("scanB case1-mean-shift"), "{text}");
        let reps = fs::read(out.join("edd_replications.csv")).unwrap();
        let summary = fs::read(out.join("edd_summary.csv")).unwrap();
        assert_eq!(String::from_utf8_lossy(&reps).lines().count(), 11);
        assert_eq!(String::from_utf8_lossy(&summary).lines().count(), 2);
        assert!(out.join("metadata.csv").exists());
        outputs.push((reps, summary));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn experiment_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("plan.toml");
    fs::write(&cfg, MINIMAL).unwrap();
    let out = dir.path().join("o");
    let o = scanb(&["experiment", "--config", p(&cfg), "--out", p(&out), "--replications", "3", "--seed", "9"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("base_seed=9"));
    let reps = fs::read_to_string(out.join("edd_replications.csv")).unwrap();
    assert_eq!(reps.lines().count(), 4);
}

#[test]
fn experiment_unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("plan.toml");
    fs::write(&cfg, "[plan]\nreplicatons = 10\n").unwrap();
    let o = scanb(&["experiment", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("replicatons"), "{}", stderr(&o));
}

#[test]
fn experiment_two_axis_sweep_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("plan.toml");
    fs::write(&cfg, format!("sweep = true\n{MINIMAL}block_sizes = [10, 20]\nn_blocks = [5, 6]\n")).unwrap();
    let o = scanb(&["experiment", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
