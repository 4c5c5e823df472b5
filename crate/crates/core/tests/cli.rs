use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_salem-lab"))
        .current_dir(dir)
        .env_remove("SALEM_LAB_THREADS")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const STEANE: &str = r#"
code = "steane"
eps = 1e-3
max_weight = 2
seed = 99
out = "out"

[characterize]
tau_grid = [0.1, 0.2]
missing_grid = [0.0, 0.5, 1.0]

[estimate]
methods = ["ec", "ec_ps", "ext_lem", "cg_salem:inv0_rej1"]
tau = 0.2
volumes = [64, 256]
shots = 2000

[analytics]
reports = ["out/report.json"]
eps_l_points = [[4e-4, 1.06e-4], [8e-4, 4.16e-4]]
volumes = [10.0, 100.0, 1000.0]
deltas = [0.01, 0.1]
eps_grid = [1e-4, 1e-3]
threshold_v = [1.0, 10.0]
msrej_aspects = [1.0]
msrej_v = [0.1, 1.0]
"#;

#[test]
fn characterize_estimate_analytics_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "s.toml", STEANE);
    for cmd in ["characterize", "estimate", "analytics"] {
        let o = lab(d.path(), &["--config", &cfg, cmd]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let out = d.path().join("out");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let eps_l = report["eps_l"].as_f64().unwrap();
    assert!(eps_l > 2e-4 && eps_l < 8e-4, "{eps_l}");
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    assert!(out.join("table/table.bin").exists() && out.join("lut.csv").exists());

    let est = fs::read_to_string(out.join("estimate.csv")).unwrap();
    let mut lines = est.lines();
    assert_eq!(lines.next().unwrap(), "method,V,eps,estimate,bias_model,sigma,gamma,lambda,N,seed,config_hash");
    assert_eq!(lines.count(), 8);
    for f in ["fig2a.csv", "fig2b.csv", "fig2c.csv", "msrej.csv", "thresholds.csv"] {
        let text = fs::read_to_string(out.join(f)).unwrap();
        assert!(text.lines().count() > 1, "{f} is empty");
        assert!(text.lines().next().unwrap().ends_with("config_hash"));
    }

    // same config and seed: identical bytes
    let first: Vec<_> = ["estimate.csv", "fig2a.csv", "thresholds.csv"].iter().map(|f| fs::read(out.join(f)).unwrap()).collect();
    for cmd in ["estimate", "analytics"] {
        assert!(lab(d.path(), &["--config", &cfg, cmd]).status.success());
    }
    let second: Vec<_> = ["estimate.csv", "fig2a.csv", "thresholds.csv"].iter().map(|f| fs::read(out.join(f)).unwrap()).collect();
    assert_eq!(first, second);

    // a different seed changes the Monte Carlo rows
    assert!(lab(d.path(), &["--config", &cfg, "--seed", "100", "estimate"]).status.success());
    assert_ne!(fs::read(out.join("estimate.csv")).unwrap(), first[0]);
}

#[test]
fn zero_shots_and_empty_methods_give_headers() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "s.toml", STEANE);
    assert!(lab(d.path(), &["--config", &cfg, "characterize"]).status.success());
    let zero =
        write(d.path(), "z.toml", &STEANE.replace("shots = 2000", "shots = 0").replace("volumes = [10.0, 100.0, 1000.0]", "methods = []"));
    assert!(lab(d.path(), &["--config", &zero, "estimate"]).status.success());
    assert!(lab(d.path(), &["--config", &zero, "analytics"]).status.success());
    let out = d.path().join("out");
    assert_eq!(fs::read_to_string(out.join("estimate.csv")).unwrap().lines().count(), 1);
    for f in ["fig2a.csv", "fig2b.csv", "fig2c.csv"] {
        assert_eq!(fs::read_to_string(out.join(f)).unwrap().lines().count(), 1, "{f}");
    }
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let bad = write(d.path(), "bad.toml", &STEANE.replace("seed = 99", "seed = 99\nbogus = 1"));
    let o = lab(d.path(), &["--config", &bad, "characterize"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));

    let cfg = write(d.path(), "s.toml", STEANE);
    assert_eq!(lab(d.path(), &["--config", &cfg, "estimate"]).status.code(), Some(3));

    let nofit = write(
        d.path(),
        "n.toml",
        &STEANE.replace("eps_l_points = [[4e-4, 1.06e-4], [8e-4, 4.16e-4]]", "").replace("reports = [\"out/report.json\"]", ""),
    );
    assert_eq!(lab(d.path(), &["--config", &nofit, "analytics"]).status.code(), Some(4));

    assert_eq!(lab(d.path(), &["--config", "does-not-exist.toml", "characterize"]).status.code(), Some(2));
}

#[test]
fn noiseless_characterization_is_trivial() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "s.toml", &STEANE.replace("eps = 1e-3", "eps = 0.0"));
    let o = lab(d.path(), &["--config", &cfg, "characterize"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["eps_l"].as_f64(), Some(0.0));
}

#[test]
fn selftest_passes() {
    let d = tempfile::tempdir().unwrap();
    let o = lab(d.path(), &["selftest"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{text}");
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}
