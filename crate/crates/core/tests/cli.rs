use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vertmart"))
}

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg("run")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn summary(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

fn without_wall_time(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("wall_time_s");
    v
}

fn estimate(s: &Value, name: &str) -> f64 {
    s["estimates"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["name"] == name)
        .unwrap()["mean"]
        .as_f64()
        .unwrap()
}

const SMALL_HARMONICITY: &str = r#"
experiment = "harmonicity"
geometry = "flat-torus-tm-complete"
seed = 5
n_paths = 300
x0 = [1.5707963267948966, 0.0]

[grid]
dt = 2e-3
n_steps = 500
"#;

#[test]
fn golden_brownian_config_passes() {
    let dir = TempDir::new().unwrap();
    let out = run(&config_dir().join("brownian-torus.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "brownian-check: pass");
    let s = summary(dir.path());
    assert_eq!(s["verdict"], "pass");
    assert_eq!(s["experiment"], "brownian-check");
    assert_eq!(s["seed"], 11);
    for key in ["estimates", "truncation_fraction", "version", "wall_time_s"] {
        assert!(s.get(key).is_some(), "missing {key}");
    }
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert!(csv.starts_with("path_id,"));
    assert_eq!(csv.lines().count(), 501);
}

#[test]
fn harmonic_section_passes_and_sin_section_fails() {
    let dir = TempDir::new().unwrap();
    let constant = format!("{SMALL_HARMONICITY}\n[section]\nname = \"constant-field\"\nparams = [1.0, -0.5]\n");
    let sin = format!("{SMALL_HARMONICITY}\n[section]\nname = \"sin-field\"\n");
    let pass = run(
        &write_config(dir.path(), "c.toml", &constant),
        &dir.path().join("c"),
        &[],
    );
    assert_eq!(pass.status.code(), Some(0), "{}", String::from_utf8_lossy(&pass.stderr));
    let fail = run(&write_config(dir.path(), "s.toml", &sin), &dir.path().join("s"), &[]);
    assert_eq!(fail.status.code(), Some(2), "{}", String::from_utf8_lossy(&fail.stderr));
    assert_eq!(summary(&dir.path().join("s"))["verdict"], "fail");
}

#[test]
fn conversion_ratio_halving_from_four_to_two_milliseconds() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"
experiment = "conversion"
geometry = "flat-torus-tm-complete"
seed = 23
n_paths = 500

[grid]
dt = 4e-3
n_steps = 250

[form]
kind = "base-sin"
"#;
    let out = run(&write_config(dir.path(), "conv.toml", cfg), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(dir.path());
    let ratio = estimate(&s, "ratio");
    assert!((1.5..=3.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn tension_map_of_killing_field_fails() {
    let dir = TempDir::new().unwrap();
    let out = run(&config_dir().join("tension-map-sphere.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert!(csv.starts_with("point_id,"));
}

#[test]
fn outputs_are_reproducible_across_runs_and_thread_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "h.toml",
        &format!("{SMALL_HARMONICITY}\n[section]\nname = \"sin-field\"\n"),
    );
    let outs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|n| dir.path().join(n)).collect();
    run(&cfg, &outs[0], &[]);
    run(&cfg, &outs[1], &["--jobs", "1"]);
    run(&cfg, &outs[2], &["--jobs", "3"]);
    let csv0 = fs::read(outs[0].join("results.csv")).unwrap();
    let json0 = without_wall_time(summary(&outs[0]));
    for o in &outs[1..] {
        assert_eq!(fs::read(o.join("results.csv")).unwrap(), csv0);
        assert_eq!(without_wall_time(summary(o)), json0);
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "h.toml",
        &format!("{SMALL_HARMONICITY}\n[section]\nname = \"sin-field\"\n"),
    );
    run(&cfg, &dir.path().join("a"), &["--seed", "99"]);
    run(&cfg, &dir.path().join("b"), &[]);
    assert_eq!(summary(&dir.path().join("a"))["seed"], 99);
    assert_ne!(
        fs::read(dir.path().join("a/results.csv")).unwrap(),
        fs::read(dir.path().join("b/results.csv")).unwrap()
    );
}

#[test]
fn invalid_configs_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let cases = [
        ("unknown-experiment", "experiment = \"nope\"\ngeometry = \"flat-torus\"\n[grid]\ndt = 1e-3\nn_steps = 10\n"),
        ("unknown-geometry", "experiment = \"brownian-check\"\ngeometry = \"klein-bottle\"\n[grid]\ndt = 1e-3\nn_steps = 10\n"),
        ("unknown-key", "experiment = \"brownian-check\"\ngeometry = \"flat-torus\"\ncolour = 1\n[grid]\ndt = 1e-3\nn_steps = 10\n"),
        ("bad-grid", "experiment = \"brownian-check\"\ngeometry = \"flat-torus\"\n[grid]\ndt = -1.0\nn_steps = 10\n"),
        ("too-few-paths", "experiment = \"brownian-check\"\ngeometry = \"flat-torus\"\nn_paths = 10\n[grid]\ndt = 1e-3\nn_steps = 10\n"),
        ("not-toml", "experiment = [\n"),
    ];
    for (name, body) in cases {
        let cfg = write_config(dir.path(), &format!("{name}.toml"), body);
        let out = run(&cfg, &dir.path().join(name), &[]);
        assert_eq!(
            out.status.code(),
            Some(1),
            "{name}: {}",
            String::from_utf8_lossy(&out.stdout)
        );
        assert!(!out.stderr.is_empty(), "{name}");
    }
    let missing = run(&dir.path().join("absent.toml"), dir.path(), &[]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(bin().output().unwrap().status.code(), Some(1));
    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(1));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn list_prints_corpus_and_experiments() {
    let out = bin().arg("list").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for name in [
        "brownian-check",
        "harmonicity",
        "tension-map",
        "sphere-tm-sasaki",
        "torus-x-circle",
        "sin-field",
    ] {
        assert!(text.contains(name), "{name} missing from list");
    }
}
