use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spdelab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spdelab")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL_HEAT: &str = r#"
name = "small-heat"

[grid]
min = -5.0
max = 5.0
n = 64

[time]
dt = 1e-3
t_end = 0.05

[coefficients]
a = [[{ kind = "constant", value = 0.5 }]]
initial = { kind = "gaussian-bump", amplitude = 0.7978845608028654, center = [0.0], width = 0.5 }

[checks]
positivity = 1e-8
mass_conservation = 1e-12
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("scenario.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn run_dir(out: &str) -> String {
    out.lines()
        .find_map(|l| l.strip_prefix("run directory: "))
        .expect("run directory line")
        .to_string()
}

#[test]
fn unknown_subcommand_is_usage_error() {
    assert_eq!(spdelab(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn missing_or_bad_input_is_usage_error() {
    assert_eq!(spdelab(&["run-spde"]).status.code(), Some(2));
    assert_eq!(spdelab(&["run-spde", "--scenario", "nope"]).status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SMALL_HEAT.replace("n = 64", "n = 8"));
    let o = spdelab(&["run-spde", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid.n"));
    let cfg = write_config(tmp.path(), &SMALL_HEAT.replace("t_end", "t_ned"));
    assert_eq!(spdelab(&["run-spde", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn rerun_from_manifest_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_HEAT);
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    let o = spdelab(&["run-spde", "--config", &cfg, "--out", out_a.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let first = run_dir(&stdout(&o));
    let manifest = Path::new(&first).join("manifest.json");
    let o = spdelab(&["run-spde", "--manifest", manifest.to_str().unwrap(), "--out", out_b.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let second = run_dir(&stdout(&o));
    assert_eq!(Path::new(&first).file_name(), Path::new(&second).file_name());
    let mut names: Vec<_> = fs::read_dir(&first).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.iter().any(|n| n == "trajectory.csv"));
    for n in names {
        assert_eq!(fs::read(Path::new(&first).join(&n)).unwrap(), fs::read(Path::new(&second).join(&n)).unwrap());
    }
    // The manifest pins its subcommand.
    let o = spdelab(&["picard", "--manifest", manifest.to_str().unwrap(), "--out", out_b.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failing_check_exits_one_with_report_path() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "{SMALL_HEAT}exact = {{ solution = {{ kind = \"heat-gaussian\", mass = 1.0, variance = 0.25, diffusivity = 0.5 }}, tolerance = 1e-9 }}\n"
    );
    let cfg = write_config(tmp.path(), &text);
    let out = tmp.path().join("runs");
    let o = spdelab(&["check", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(text.contains("FAIL exact-solution"), "{text}");
    let line = text.lines().find(|l| l.starts_with("check failed; report: ")).unwrap();
    let report = line.trim_start_matches("check failed; report: ");
    let json: serde_json::Value = serde_json::from_slice(&fs::read(report).unwrap()).unwrap();
    assert!(json.as_array().unwrap().iter().any(|r| r["name"] == "exact-solution" && r["pass"] == false));
}

#[test]
fn builtin_scenario_check_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = spdelab(&["check", "--scenario", "decay", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS positivity"));
}
