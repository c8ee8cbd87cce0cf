use std::process::{Command, Output};

fn hbvp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hbvp")).args(args).output().unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

#[test]
fn exponents_for_the_default_domain() {
    let o = hbvp(&["exponents"]);
    assert_eq!(o.status.code(), Some(0));
    let s = String::from_utf8_lossy(&o.stdout);
    assert!(s.contains("\"alpha_minus\": 1.0") && s.contains("\"alpha_plus\": 2.0"), "{s}");
}

#[test]
fn kernel_values_are_positive() {
    let o = hbvp(&["kernel", "--variant", "green", "--x", "0.3,0.1,0", "--y", "-0.2,0.4,0.1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("value"));
}

#[test]
fn config_errors_exit_one() {
    assert_eq!(hbvp(&["exponents", "--param", "scenario.bogus=1"]).status.code(), Some(1));
    assert_eq!(hbvp(&["exponents", "--param", "domain.mu=9"]).status.code(), Some(1));
    assert_eq!(hbvp(&["solve", "--p", "0.5"]).status.code(), Some(1));
    assert_eq!(hbvp(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(hbvp(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "domain.k = 0\ndomain.k = 1\n").unwrap();
    let o = hbvp(&["--config", cfg.to_str().unwrap(), "exponents"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("duplicate"));
}

#[test]
fn config_file_and_overrides_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# four-ball with a circle\ndomain.N = 4\ndomain.k = 1\ndomain.mu = 0.5\n").unwrap();
    let o = hbvp(&["--config", cfg.to_str().unwrap(), "--param", "domain.mu=2.25", "exponents"]);
    assert_eq!(o.status.code(), Some(0));
    let v = json(&o);
    let s = v.to_string();
    assert!(s.contains("\"alpha_minus\":1.5"), "{s}");
}

#[test]
fn supercritical_source_exits_two() {
    let o = hbvp(&["solve", "--problem", "source", "--p", "4", "--sigma", "1e-6", "--param", "cloud.resolution=1500"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn subcritical_source_converges_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = hbvp(&["--out", out, "solve", "--p", "2", "--sigma", "1e-3", "--param", "cloud.resolution=1500"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("solve.json").exists());
    assert!(dir.path().join("solve.field").exists());
    assert_eq!(std::fs::read(dir.path().join("solve.json")).unwrap(), o.stdout);
}

#[test]
fn scan_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = hbvp(&["--out", out, "scan", "--p-grid", "1.5:3.5:5"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("scan.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5 * 5);
}

#[test]
fn runs_are_reproducible_for_a_seed() {
    let args = ["--seed", "5", "check", "--check", "quasimetric", "--triples", "2000"];
    let (a, b) = (hbvp(&args), hbvp(&args));
    assert_eq!(a.status.code(), b.status.code());
    assert_eq!(a.stdout, b.stdout);
}
