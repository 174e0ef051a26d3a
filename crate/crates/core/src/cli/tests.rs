use std::path::{Path, PathBuf};

use super::*;
use crate::concentration::ConcentrationReport;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn exit(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> u8 {
    let mut args: Vec<std::ffi::OsString> = vec!["dcrm".into(), cmd.into(), "--config".into(), config.into(), "--out".into(), out.into()];
    args.extend(extra.iter().map(|s| s.into()));
    main_with(args)
}

#[test]
fn exit_0_on_passing_concentration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "n_factors = 8\nseed = 5\n[schedule]\ncycles = [{ ergodic = 0.2, concentration = 0.5 }]\n[concentration]\ncount = 4000\ntail_prefactor = 1.0\n",
    );
    let out = dir.path().join("out");
    assert_eq!(exit("concentration", &cfg, &out, &[]), 0);
    let summary: Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["verdicts"]["concentration"], true);
    assert_eq!(summary["pass"], true);
    let csv = std::fs::read_to_string(out.join("concentration.csv")).unwrap();
    assert!(csv.starts_with("rho,empirical_tail,dkw_margin,bound_log,fitted_exponent\r\n"));
    assert_eq!(csv.lines().count(), 41);
    let manifest: Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["run_id"], summary["run_id"]);
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config"]["concentration"]["count"], 4000);
    assert!(manifest["started"].is_string() && manifest["finished"].is_string());
}

#[test]
fn exit_1_when_expansion_is_certified() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "l.toml",
        "n_factors = 3\nseed = 2\n[schedule]\nkappa_expand = 0.2\n[lipschitz]\npairs = 500\nmap = { kind = \"regime\", regime = \"expansion\", duration = 0.5 }\n",
    );
    let out = dir.path().join("out");
    assert_eq!(exit("lipschitz", &cfg, &out, &[]), 1);
    let csv = std::fs::read_to_string(out.join("lipschitz.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let estimate: f64 = row[0].parse().unwrap();
    assert!((estimate - 0.1f64.exp()).abs() < 1e-6);
    assert_eq!(row[2], "false");
    let summary: Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["verdicts"]["lipschitz"], false);
}

#[test]
fn exit_2_on_configuration_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let zero = write(dir.path(), "zero.toml", "n_factors = 0\nseed = 1\n");
    assert_eq!(exit("simulate", &zero, &out, &[]), 2);
    let typo = write(dir.path(), "typo.toml", "n_factors = 2\n[betta]\nmode = \"raw\"\n");
    assert_eq!(exit("simulate", &typo, &out, &[]), 2);
    assert_eq!(exit("simulate", &dir.path().join("missing.toml"), &out, &[]), 2);
    let wep = write(dir.path(), "wep.toml", "n_factors = 4\n[wep]\nn_a = 3\nn_b = 3\n");
    assert_eq!(exit("wep", &wep, &out, &[]), 2);
    assert_eq!(main_with(["dcrm", "bogus", "--config", "x", "--out", "y"]), 2);
    assert!(!out.exists());
}

#[test]
fn section_errors_name_key_and_line() {
    let loaded = parse_config_str("n_factors = 4\n\n[wep]\nn_a = 3\nn_b = 3\n", Syntax::Toml).unwrap();
    let Err(CliError::Config(e)) = validate_section(Command::Wep, &loaded) else { panic!("expected a configuration error") };
    assert_eq!((e.key.as_deref(), e.line), (Some("wep.n_a"), Some(4)));
    assert!(validate_section(Command::Simulate, &loaded).is_ok());
}

#[test]
fn exit_3_on_runtime_errors_and_cleans_up() {
    let dir = tempfile::tempdir().unwrap();
    let raw = write(
        dir.path(),
        "raw.toml",
        "n_factors = 1\nseed = 4\n[beta]\nmode = \"raw\"\nfield = { kind = \"contraction\", anchor = [0,0,0,0,0,0,0,0], rate = 5.0 }\n",
    );
    let out = dir.path().join("out");
    assert_eq!(exit("simulate", &raw, &out, &[]), 3);
    assert!(!out.exists());

    let ok = write(dir.path(), "ok.toml", "n_factors = 1\nseed = 1\n[simulate]\ntau_end = 0.1\n");
    let blocker = write(dir.path(), "file", "");
    assert_eq!(exit("simulate", &ok, &blocker.join("sub"), &[]), 3);

    // a directory squatting on summary.json fails the write after the CSV
    let out = dir.path().join("partial");
    std::fs::create_dir_all(out.join("summary.json")).unwrap();
    assert_eq!(exit("simulate", &ok, &out, &[]), 3);
    assert!(!out.join("trajectory.csv").exists());
    assert!(!out.join("manifest.json").exists());
}

const DETERMINISM: &[(&str, &str, &str)] = &[
    ("simulate", "trajectory.csv", "n_factors = 2\nseed = 3\n[beta]\nfield = { kind = \"contraction\", anchor = [0,0,0,0,1,0,0,0], rate = 0.5 }\n[schedule]\ncycles = [{ ergodic = 0.2, concentration = 0.3 }]\n[simulate]\ndtau = 0.05\n"),
    ("concentration", "concentration.csv", "n_factors = 8\nseed = 3\n[schedule]\ncycles = [{ ergodic = 0.2, concentration = 0.3 }]\n[concentration]\ncount = 3000\n"),
    ("reduction", "reduction.csv", "n_factors = 8\nseed = 3\n[schedule]\ncycles = [{ ergodic = 0.2, concentration = 0.5 }]\n[reduction]\ncount = 3000\n"),
    ("wep", "wep.csv", "n_factors = 8\nseed = 3\n[schedule]\ncycles = [{ concentration = 0.3 }]\n[wep]\ncount = 2000\nh = { kind = \"sinusoidal\", amplitude = [1, 0, 0, 1], omega = 2.0, phase = 0.1 }\n"),
    ("lipschitz", "lipschitz.csv", "n_factors = 2\nseed = 3\n[schedule]\ncycles = [{ ergodic = 0.2, concentration = 0.3, expansion = 0.1 }]\n[lipschitz]\npairs = 300\n"),
];

#[test]
fn outputs_are_byte_identical_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    for (cmd, csv, text) in DETERMINISM {
        let cfg = write(dir.path(), &format!("{cmd}.toml"), text);
        let mut outputs = Vec::new();
        for threads in ["1", "2", "4", "4"] {
            let out = dir.path().join(format!("{cmd}-{}", outputs.len()));
            let code = exit(cmd, &cfg, &out, &["--threads", threads]);
            assert!(code == 0 || code == 1, "{cmd} exited {code}");
            outputs.push((std::fs::read(out.join(csv)).unwrap(), std::fs::read(out.join("summary.json")).unwrap()));
        }
        assert!(outputs.windows(2).all(|w| w[0] == w[1]), "{cmd} differs between runs");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", "n_factors = 2\nseed = 1\n[simulate]\ntau_end = 0.1\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(exit("simulate", &cfg, &a, &[]), 0);
    assert_eq!(exit("simulate", &cfg, &b, &["--seed", "2"]), 0);
    let read = |d: &Path| std::fs::read(d.join("trajectory.csv")).unwrap();
    assert_ne!(read(&a), read(&b));
    let manifest: Value = serde_json::from_slice(&std::fs::read(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 2);
}

fn golden_report() -> ConcentrationReport {
    ConcentrationReport {
        rho_grid: vec![0.1, 0.2, 0.30000000000000004],
        empirical_tail: vec![0.6827, 0.3173, 0.0455],
        dkw_margin: vec![0.004294690832, 0.004294690832, 0.004294690832],
        bound_log: vec![-0.7131471805599453, -0.8331471805599453, -1.0331471805599455],
        fitted_exponent: Some(3.25),
        fit_r_squared: Some(0.999),
        sigma_f: 0.1,
        m_f: 0.0,
        count: 100_000,
        n_factors: 4,
        scaled_bound_log: -512.6931471805599,
        complexity_bound_log: -8.693147180559945,
        verdict: true,
        violations: 0,
    }
}

#[test]
fn concentration_csv_matches_golden_file() {
    let golden = std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/concentration_3row.csv")).unwrap();
    assert_eq!(csv_bytes(&golden_report()).unwrap(), golden);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.csv");
    emit_csv(&golden_report(), &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), golden);
    assert!(emit_csv(&golden_report(), &dir.path().join("no/such/dir.csv")).is_err());
}

#[test]
fn emitted_csv_round_trips() {
    let r = golden_report();
    let bytes = csv_bytes(&r).unwrap();
    let mut rd = csv::Reader::from_reader(bytes.as_slice());
    let mut rows = 0;
    for (i, rec) in rd.records().enumerate() {
        let v: Vec<f64> = rec.unwrap().iter().map(|c| c.parse().unwrap()).collect();
        assert_eq!(v, vec![r.rho_grid[i], r.empirical_tail[i], r.dkw_margin[i], r.bound_log[i], 3.25]);
        rows += 1;
    }
    assert_eq!(rows, 3);
}

#[test]
fn run_id_tracks_resolved_config() {
    let a = parse_config_str("n_factors = 3\nseed = 1\n", Syntax::Toml).unwrap().config;
    let b = parse_config_str("seed = 1\nn_factors = 3\nlength_scale = 1.0\n", Syntax::Toml).unwrap().config;
    let c = parse_config_str("n_factors = 3\nseed = 2\n", Syntax::Toml).unwrap().config;
    assert_eq!(run_id(&a), run_id(&b));
    assert_ne!(run_id(&a), run_id(&c));
    assert_eq!(run_id(&a).len(), 64);
}
