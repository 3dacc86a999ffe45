use std::fs;
use std::process::{Command, Output};

fn mig(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mig")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn run_writes_a_trace_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let out = mig(&[
        "run",
        "--synthetic",
        "200,30,5,0.5",
        "--lambda",
        "1e-2",
        "--solver",
        "async-mig",
        "--threads",
        "2",
        "--epochs",
        "4",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,oracle_calls,wall_ms,objective,subopt");
    assert_eq!(lines.len(), 6);
    assert!(stdout(&out).is_empty());
}

#[test]
fn run_prints_csv_without_out() {
    let out = mig(&["run", "--synthetic", "100,10,3,0.1", "--loss", "ridge", "--reg", "l1", "--solver", "mig-nsc", "--epochs", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).lines().count(), 4);
}

#[test]
fn run_reads_libsvm_files_with_fixed_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.svm");
    fs::write(&data, "+1 1:0.5 2:1\n-1 2:-1 3:0.3\n+1 1:1 3:-0.2\n-1 1:-0.4 2:0.1\n").unwrap();
    let out = mig(&[
        "run",
        "--data",
        data.to_str().unwrap(),
        "--bias",
        "--solver",
        "sparse-mig",
        "--m",
        "8",
        "--eta",
        "0.5",
        "--theta",
        "0.5",
        "--restart",
        "2",
        "--epochs",
        "4",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("m = 8"), "{stderr}");
}

#[test]
fn fstar_populates_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("fstar.cache");
    let args = ["fstar", "--synthetic", "150,20,4,0.5", "--lambda", "1e-3", "--cache", cache.to_str().unwrap()];
    let first = mig(&args);
    assert!(first.status.success());
    assert!(cache.exists());
    let second = mig(&args);
    assert_eq!(stdout(&first), stdout(&second));
    assert!(stdout(&first).contains("certified true"));
}

#[test]
fn speedup_reports_one_row_per_thread_count() {
    let out = mig(&["speedup", "--synthetic", "300,40,5,0.5", "--lambda", "1e-2", "--threads", "1,2", "--epochs", "40"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("1,") && rows[1].split(',').nth(2) == Some("1.000"));
}

#[test]
fn bad_input_fails_with_a_message() {
    for args in [
        vec!["run", "--epochs", "1"],
        vec!["run", "--synthetic", "10,5,2"],
        vec!["run", "--synthetic", "10,5,2,0", "--theta", "2"],
        vec!["run", "--synthetic", "10,5,2,0", "--solver", "sgd"],
        vec!["run", "--synthetic", "10,5,2,0", "--reg", "l1", "--solver", "kromagnon"],
        vec!["speedup", "--solver", "mig", "--threads", "1"],
    ] {
        let out = mig(&args);
        assert!(!out.status.success(), "{args:?}");
        assert!(!out.stderr.is_empty(), "{args:?}");
    }
}
