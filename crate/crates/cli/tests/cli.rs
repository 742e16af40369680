//! End-to-end checks of the `wifislam` binary: exit codes, output files,
//! sweep resumption and flag handling.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn wifislam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wifislam"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = wifislam(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn gen(dir: &Path, preset: &str, seed: u64) {
    ok(&["gen", "--world", preset, "--seed", &seed.to_string(), "--out", dir.to_str().unwrap()]);
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut rdr = csv::Reader::from_path(path).expect("csv opens");
    rdr.records().map(|r| r.expect("csv row")).collect()
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let mut rdr = csv::Reader::from_path(path).expect("csv opens");
    let idx = rdr.headers().unwrap().iter().position(|h| h == name).expect("column exists");
    rdr.records().map(|r| r.unwrap()[idx].to_string()).collect()
}

#[test]
fn gen_is_reproducible_byte_for_byte() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen(&a, "a_hall", 7);
    gen(&b, "a_hall", 7);
    for f in ["frames.csv", "scans.csv", "loops_gt.csv", "world.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn gen_from_world_json_reproduces_the_preset() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen(&a, "c_hall", 3);
    ok(&["gen", "--world", a.join("world.json").to_str().unwrap(), "--seed", "3", "--out", b.to_str().unwrap()]);
    assert_eq!(fs::read(a.join("frames.csv")).unwrap(), fs::read(b.join("frames.csv")).unwrap());
}

#[test]
fn unknown_preset_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = wifislam(&["gen", "--world", "no_such_hall", "--seed", "1", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nothing");
    let out = wifislam(&["run", missing.to_str().unwrap(), "--seed", "1", "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn run_without_seed_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "a_hall", 1);
    let out = wifislam(&["run", data.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn localize_on_empty_dataset_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "a_hall", 1);
    for f in ["frames.csv", "scans.csv", "loops_gt.csv"] {
        let p = data.join(f);
        let header = fs::read_to_string(&p).unwrap().lines().next().unwrap().to_string();
        fs::write(&p, header + "\n").unwrap();
    }
    let out = wifislam(&["localize", data.to_str().unwrap(), "--out", tmp.path().join("loc").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_writes_every_artifact_and_reflects_flags() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("run");
    gen(&data, "a_hall", 5);
    ok(&[
        "run",
        data.to_str().unwrap(),
        "--seed",
        "11",
        "--policy",
        "rgbd",
        "--gated",
        "false",
        "--min-matches",
        "15",
        "--out",
        out.to_str().unwrap(),
    ]);
    for f in [
        "trajectory.csv",
        "loop_events.jsonl",
        "memory_trace.csv",
        "clusters.csv",
        "representatives.jsonl",
        "config.toml",
        "report.csv",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let report = out.join("report.csv");
    assert_eq!(column(&report, "policy"), ["rgbd"]);
    assert_eq!(column(&report, "gated"), ["false"]);
    assert_eq!(column(&report, "min_matches"), ["15"]);
    assert_eq!(column(&report, "seed"), ["11"]);
    // Vanilla runs never build clusters.
    assert_eq!(column(&report, "clusters"), ["0"]);

    let frames = csv_rows(&data.join("frames.csv")).len();
    let events = fs::read_to_string(out.join("loop_events.jsonl")).unwrap();
    assert_eq!(events.lines().count(), frames);
    for line in events.lines() {
        serde_json::from_str::<serde_json::Value>(line).expect("event is JSON");
    }
}

#[test]
fn config_file_supplies_seed_and_flags_override_it() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "a_hall", 2);
    let cfg = tmp.path().join("cfg.toml");
    fs::write(&cfg, "seed = 9\n[params]\npolicy = \"rtab\"\nmin_matches = 12\n").unwrap();
    let out = tmp.path().join("run");
    ok(&[
        "run",
        data.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--min-matches",
        "18",
        "--real-time-threshold",
        "40",
        "--out",
        out.to_str().unwrap(),
    ]);
    let report = out.join("report.csv");
    assert_eq!(column(&report, "seed"), ["9"]);
    assert_eq!(column(&report, "policy"), ["rtab"]);
    assert_eq!(column(&report, "min_matches"), ["18"]);
    assert_eq!(column(&report, "real_time_threshold"), ["40"]);
}

#[test]
fn sweep_covers_the_grid_and_resumes() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "a_hall", 4);
    let grid = tmp.path().join("grid.toml");
    fs::write(
        &grid,
        "seed = 1\n[grid]\npolicy = [\"orb\"]\ngated = [true, false]\nmin_matches = [10, 15, 20, 25, 30]\n",
    )
    .unwrap();
    let out = tmp.path().join("sweep");
    let args = ["sweep", data.to_str().unwrap(), "--grid", grid.to_str().unwrap(), "--out", out.to_str().unwrap()];
    let first = ok(&args);
    assert!(first.contains("10 computed"), "{first}");
    let report = out.join("report.csv");
    assert_eq!(csv_rows(&report).len(), 10);
    let before = fs::read(&report).unwrap();

    let second = ok(&args);
    assert!(second.contains("0 computed, 10 reused"), "{second}");
    assert_eq!(fs::read(&report).unwrap(), before);
}

#[test]
fn sweep_rejects_unknown_grid_axes() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "a_hall", 4);
    let grid = tmp.path().join("grid.toml");
    fs::write(&grid, "seed = 1\n[grid]\nbogus = [1]\n").unwrap();
    let out = wifislam(&["sweep", data.to_str().unwrap(), "--grid", grid.to_str().unwrap(), "--out", tmp.path().join("s").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn curve_localize_and_report_produce_csv() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "c_hall", 6);

    let curve = tmp.path().join("curve");
    ok(&["curve", data.to_str().unwrap(), "--out", curve.to_str().unwrap()]);
    let text = fs::read_to_string(fs::read_dir(&curve).unwrap().next().unwrap().unwrap().path()).unwrap();
    assert!(text.lines().last().unwrap().starts_with("# spearman="));

    let loc = tmp.path().join("loc");
    ok(&["localize", data.to_str().unwrap(), "--out", loc.to_str().unwrap()]);
    let fractions = column(&loc.join("cdf.csv"), "fraction");
    assert_eq!(fractions.last().map(String::as_str), Some("1"));

    let (r1, r2) = (tmp.path().join("r1"), tmp.path().join("r2"));
    ok(&["run", data.to_str().unwrap(), "--seed", "1", "--policy", "orb", "--out", r1.to_str().unwrap()]);
    ok(&["run", data.to_str().unwrap(), "--seed", "1", "--policy", "rgbd", "--out", r2.to_str().unwrap()]);
    let merged = tmp.path().join("merged");
    ok(&["report", r1.to_str().unwrap(), r2.to_str().unwrap(), r1.to_str().unwrap(), "--out", merged.to_str().unwrap()]);
    assert_eq!(csv_rows(&merged.join("report.csv")).len(), 2);
}
