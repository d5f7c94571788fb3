use std::ffi::OsStr;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const GRID: [&str; 4] = ["--grid-extent", "12.8", "--cell-size", "0.8"];
const SMALL: [&str; 10] = [
    "--cameras", "2", "--height", "4", "--width", "8", "--depth-bins", "16", "--channels", "3",
];

fn bevpool<S: AsRef<OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bevpool"))
        .args(args)
        .env_remove("BEVPOOL_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/small")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn pool_small(dir: &Path, backend: &str, out_name: &str, extra: &[&str]) -> (Output, PathBuf) {
    let out = dir.join(out_name);
    let d = data();
    let (calib, features, logits) = (d.join("calib.json"), d.join("features.bvpt"), d.join("logits.bvpt"));
    let mut args: Vec<&OsStr> = vec![
        "pool".as_ref(),
        "--calib".as_ref(),
        calib.as_os_str(),
        "--features".as_ref(),
        features.as_os_str(),
        "--logits".as_ref(),
        logits.as_os_str(),
        "--backend".as_ref(),
        backend.as_ref(),
        "--out".as_ref(),
        out.as_os_str(),
    ];
    args.extend(GRID.iter().chain(extra).map(OsStr::new));
    (bevpool(&args), out)
}

#[test]
fn gen_workload_matches_committed_files() {
    let tmp = TempDir::new().unwrap();
    let mut args = vec!["gen-workload", "--seed", "11", "--out", s(tmp.path())];
    args.extend(SMALL);
    args.extend(GRID);
    let out = bevpool(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    for name in ["calib.json", "features.bvpt", "logits.bvpt"] {
        assert_eq!(
            fs::read(tmp.path().join(name)).unwrap(),
            fs::read(data().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn pool_naive_matches_golden_and_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let golden = fs::read(data().join("bev_naive_sum.bvpt")).unwrap();
    let (a, path_a) = pool_small(tmp.path(), "naive", "a.bvpt", &[]);
    let (b, path_b) = pool_small(tmp.path(), "naive", "b.bvpt", &["--threads", "3"]);
    assert!(a.status.success() && b.status.success(), "{}", stderr(&a));
    assert_eq!(fs::read(&path_a).unwrap(), golden);
    assert_eq!(fs::read(&path_b).unwrap(), golden);
}

#[test]
fn interval_output_is_thread_independent_and_matches_naive() {
    let tmp = TempDir::new().unwrap();
    let (one, p1) = pool_small(tmp.path(), "interval", "i1.bvpt", &["--threads", "1"]);
    let (four, p4) = pool_small(tmp.path(), "interval", "i4.bvpt", &["--threads", "4"]);
    assert!(one.status.success() && four.status.success());
    assert_eq!(fs::read(&p1).unwrap(), fs::read(&p4).unwrap());

    let golden = data().join("bev_naive_sum.bvpt");
    for backend in ["interval", "prefixsum"] {
        let (_, path) = pool_small(tmp.path(), backend, &format!("{backend}.bvpt"), &[]);
        let cmp = bevpool(&["verify", "--compare", s(&golden), s(&path)]);
        assert!(cmp.status.success(), "{backend}: {}", stdout(&cmp));
        assert!(stdout(&cmp).contains("PASS"));
    }
}

#[test]
fn cached_pooling_matches_uncached() {
    let tmp = TempDir::new().unwrap();
    let cache = tmp.path().join("assoc.bvpc");
    let calib = data().join("calib.json");
    let mut args = vec!["cache-build", "--calib", s(&calib), "--out", s(&cache)];
    args.extend(GRID);
    let built = bevpool(&args);
    assert!(built.status.success(), "{}", stderr(&built));
    assert!(stdout(&built).contains("1024 points"));

    let (fresh, p_fresh) = pool_small(tmp.path(), "interval", "fresh.bvpt", &[]);
    let (cached, p_cached) = pool_small(tmp.path(), "interval", "cached.bvpt", &["--cache", s(&cache)]);
    assert!(fresh.status.success() && cached.status.success(), "{}", stderr(&cached));
    assert_eq!(fs::read(p_fresh).unwrap(), fs::read(p_cached).unwrap());

    // Same cache with a different grid is stale.
    let (stale, _) = pool_small(
        tmp.path(),
        "interval",
        "stale.bvpt",
        &["--cache", s(&cache), "--z-max", "4"],
    );
    assert!(!stale.status.success());
    assert!(stderr(&stale).contains("stale"), "{}", stderr(&stale));
}

#[test]
fn truncated_tensor_is_rejected_with_byte_position() {
    let tmp = TempDir::new().unwrap();
    let bytes = fs::read(data().join("features.bvpt")).unwrap();
    let cut = tmp.path().join("features.bvpt");
    fs::write(&cut, &bytes[..bytes.len() - 5]).unwrap();
    let (calib, logits) = (data().join("calib.json"), data().join("logits.bvpt"));
    let out_path = tmp.path().join("out.bvpt");
    let mut args = vec![
        "pool",
        "--calib",
        s(&calib),
        "--features",
        s(&cut),
        "--logits",
        s(&logits),
        "--out",
        s(&out_path),
    ];
    args.extend(GRID);
    let out = bevpool(&args);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("at byte"), "{}", stderr(&out));
    assert!(!out_path.exists());
}

#[test]
fn malformed_calibration_names_field() {
    let tmp = TempDir::new().unwrap();
    let text = fs::read_to_string(data().join("calib.json")).unwrap();
    let bad = tmp.path().join("calib.json");
    fs::write(&bad, text.replacen("\"fx\": 6.4", "\"fx\": \"wide\"", 1)).unwrap();
    let mut args = vec!["cache-build", "--calib", s(&bad), "--out", "/dev/null"];
    args.extend(GRID);
    let out = bevpool(&args);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("cameras[0].fx"), "{}", stderr(&out));
}

#[test]
fn verify_passes_and_detects_corruption() {
    let mut args = vec!["verify", "--seed", "5"];
    args.extend(SMALL);
    args.extend(GRID);
    let ok = bevpool(&args);
    assert!(ok.status.success(), "{}", stdout(&ok));
    assert!(stdout(&ok).contains("PASS"));

    args.extend(["--corrupt-backend", "interval"]);
    let bad = bevpool(&args);
    assert_eq!(bad.status.code(), Some(1));
    let text = stdout(&bad);
    assert!(text.contains("FAIL") && text.contains("interval") && text.contains("cell ("), "{text}");
}

#[test]
fn zero_channels_is_not_an_error() {
    let mut args = vec!["verify", "--cameras", "1", "--height", "4", "--width", "4", "--depth-bins", "4", "--channels", "0"];
    args.extend(GRID);
    let out = bevpool(&args);
    assert!(out.status.success(), "{}{}", stdout(&out), stderr(&out));
}

#[test]
fn unknown_backend_is_rejected() {
    let out = bevpool(&["verify", "--reducer", "median"]);
    assert!(!out.status.success());
    let out = bevpool(&["bench", "--backend", "gpu"]);
    assert!(!out.status.success());
}

#[test]
fn bench_writes_csv() {
    let tmp = TempDir::new().unwrap();
    let csv = tmp.path().join("bench.csv");
    let mut args = vec!["bench", "--reps", "2", "--warmups", "1", "--csv", s(&csv)];
    args.extend(SMALL);
    args.extend(GRID);
    let out = bevpool(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("backend,n_points,channels,stage,median_ms,min_ms,speedup_vs_baseline")
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    for backend in ["naive", "prefixsum", "interval"] {
        assert!(rows.iter().any(|r| r[0] == backend && r[3] == "pool" && r[1] == "1024"));
    }
    assert!(rows.iter().any(|r| r[3] == "association"));

    let zero = bevpool(&["bench", "--reps", "0"]);
    assert!(!zero.status.success());
}
