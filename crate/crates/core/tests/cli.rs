use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dcrm"));
    c.env_remove("DCRM_THREADS");
    c
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], config: &Path, out: &Path) -> (i32, String) {
    let o = bin().args(args).arg("--config").arg(config).arg("--out").arg(out).output().unwrap();
    (o.status.code().unwrap(), String::from_utf8_lossy(&o.stderr).into_owned())
}

#[test]
fn diagnostics_name_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");

    let cfg = write(dir.path(), "zero.toml", "n_factors = 0\nseed = 1\n");
    let (code, err) = run(&["simulate"], &cfg, &out);
    assert_eq!(code, 2);
    assert!(err.contains("n_factors") && err.contains("line 1"), "{err}");

    let cfg = write(dir.path(), "typo.toml", "n_factors = 2\n[betta]\nmode = \"raw\"\n");
    let (code, err) = run(&["simulate"], &cfg, &out);
    assert_eq!(code, 2);
    assert!(err.contains("did you mean `beta`") && err.contains("line 2"), "{err}");

    let cfg = write(dir.path(), "wep.toml", "n_factors = 4\n[wep]\nn_a = 3\nn_b = 3\n");
    let (code, err) = run(&["wep"], &cfg, &out);
    assert_eq!(code, 2);
    assert!(err.contains("wep.n_a") && err.contains("line 3"), "{err}");
    assert!(!out.exists());
}

#[test]
fn runtime_error_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    // raw drift far outside the unit ball
    let cfg = write(
        dir.path(),
        "raw.toml",
        "n_factors = 1\nseed = 4\n[beta]\nmode = \"raw\"\nfield = { kind = \"contraction\", anchor = [0,0,0,0,0,0,0,0], rate = 5.0 }\n",
    );
    let (code, err) = run(&["simulate"], &cfg, &dir.path().join("out"));
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("norm bound"), "{err}");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(bin().args(["bogus", "--config", "x", "--out", "y"]).output().unwrap().status.code(), Some(2));
    assert_eq!(bin().arg("simulate").output().unwrap().status.code(), Some(2));
}

#[test]
fn env_threads_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", "n_factors = 2\nseed = 1\n[simulate]\ntau_end = 0.1\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&["simulate"], &cfg, &a).0, 0);
    let o = bin().args(["simulate", "--config"]).arg(&cfg).arg("--out").arg(&b).env("DCRM_THREADS", "3").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let read = |d: &Path| std::fs::read(d.join("trajectory.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    let bad = bin().args(["simulate", "--config"]).arg(&cfg).arg("--out").arg(&b).env("DCRM_THREADS", "0").output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn trajectory_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", "n_factors = 2\nseed = 1\n[simulate]\ntau_end = 0.5\ndtau = 0.25\n");
    let out = dir.path().join("o");
    assert_eq!(run(&["simulate"], &cfg, &out).0, 0);
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 1 + 32);
    assert_eq!((header[0], header[1], header[16], header[17], header[32]), ("tau", "u_0", "u_15", "p_0", "p_15"));
    assert_eq!(csv.lines().count(), 4);
}
