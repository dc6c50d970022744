use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ccpdi(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccpdi"))
        .args(args)
        .current_dir(root)
        .env_remove("CCPDI_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn rigid_run_is_stable_and_logs_the_four_panels() {
    let dir = tempfile::tempdir().unwrap();
    let robot = configs().join("quad.toml");
    let out = ccpdi(dir.path(), &["run", "--robot", robot.to_str().unwrap(), "--spine", "rigid", "--duration", "20", "--output", "r"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let (header, rows) = csv_rows(&dir.path().join("r/states.csv"));
    for col in ["height", "roll", "pitch", "yaw"] {
        assert!(header.iter().any(|h| h == col), "{col}");
    }
    assert_eq!(rows.len(), 20 * 1000 / 30 + 1);
    for f in ["grf.csv", "inertia.csv", "summary.json"] {
        assert!(dir.path().join("r").join(f).exists(), "{f}");
    }
}

#[test]
fn exit_code_follows_the_recorded_status() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccpdi(dir.path(), &["run", "--spine", "compliant", "--ks", "36", "--lrest", "0.180", "--ccpdi", "off", "--duration", "12", "--output", "off"]);
    let summary = fs::read_to_string(dir.path().join("off/summary.json")).unwrap();
    let expected = if summary.contains("\"status\": \"stable\"") { 0 } else { 2 };
    assert_eq!(out.status.code(), Some(expected), "{}", stderr(&out));
    assert!(summary.contains("\"ccpdi\": false"));
}

#[test]
fn missing_robot_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccpdi(dir.path(), &["run", "--robot", "absent.toml", "--duration", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("`robot`"), "{}", stderr(&out));
}

#[test]
fn config_errors_exit_one_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    for (text, key) in [
        ("duration = 1.0\n[swing]\nkp = \"stiff\"\n", "swing.kp"),
        ("duration = 1.0\nspeed = 2.0\n", "speed"),
        ("duration = -1.0\n", "duration"),
    ] {
        fs::write(dir.path().join("exp.toml"), text).unwrap();
        let out = ccpdi(dir.path(), &["run", "--config", "exp.toml"]);
        assert_eq!(out.status.code(), Some(1));
        assert!(stderr(&out).contains(&format!("`{key}`")), "{key}: {}", stderr(&out));
    }
    let out = ccpdi(dir.path(), &["run", "--ccpdi", "maybe"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn experiment_file_resolves_its_robot_relative_to_itself() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("experiment.toml");
    let out = ccpdi(dir.path(), &["run", "--config", cfg.to_str().unwrap(), "--duration", "0.5", "--output", "x"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
}

#[test]
fn output_root_variable_relocates_relative_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("root");
    let out = Command::new(env!("CARGO_BIN_EXE_ccpdi"))
        .args(["run", "--duration", "0.3", "--output", "here"])
        .current_dir(dir.path())
        .env("CCPDI_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(root.join("here/summary.json").exists());
    assert!(!dir.path().join("here").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let out = ccpdi(dir.path(), &["run", "--duration", "1.5", "--seed", "5", "--output", name]);
        assert_eq!(out.status.code(), Some(0));
    }
    for f in ["states.csv", "grf.csv", "inertia.csv", "summary.json"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn sweep_writes_one_row_per_cell_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let grid = ["--ks", "20,40", "--lrest", "0.165,0.195", "--duration", "1"];
    let mut maps = Vec::new();
    for (name, jobs) in [("s1", "1"), ("s2", "4")] {
        let mut args = vec!["sweep", "--output", name, "--jobs", jobs];
        args.extend(grid);
        let out = ccpdi(dir.path(), &args);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        maps.push(fs::read(dir.path().join(name).join("map.csv")).unwrap());
    }
    assert_eq!(maps[0], maps[1]);
    let (header, rows) = csv_rows(&dir.path().join("s1/map.csv"));
    assert_eq!(&header[..3], ["k_s", "l_rest", "status"]);
    let cells: Vec<(&str, &str)> = rows.iter().map(|r| (r[0].as_str(), r[1].as_str())).collect();
    assert_eq!(cells, [("20", "0.165"), ("20", "0.195"), ("40", "0.165"), ("40", "0.195")]);
    for (k, l) in cells {
        assert!(dir.path().join(format!("s1/k{k}_l{l}/summary.json")).exists());
    }
    let leftovers = fs::read_dir(dir.path().join("s1")).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with('.')).count();
    assert_eq!(leftovers, 0);
}

#[test]
fn empty_sweep_grid_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exp.toml"), "[sweep]\nstiffness = []\n").unwrap();
    let out = ccpdi(dir.path(), &["sweep", "--config", "exp.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("sweep.stiffness"));
}

#[test]
fn report_aggregates_runs_and_rejects_missing_logs() {
    let dir = tempfile::tempdir().unwrap();
    for (name, flag) in [("on", "on"), ("off", "off")] {
        let out = ccpdi(dir.path(), &["run", "--duration", "2", "--ccpdi", flag, "--output", name]);
        assert_eq!(out.status.code(), Some(0));
    }
    let out = ccpdi(dir.path(), &["report", "on", "off", "--output", "report.csv", "--gnuplot"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let (header, rows) = csv_rows(&dir.path().join("report.csv"));
    assert_eq!(rows.len(), 2);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let legs: Vec<f64> = ["FL", "FR", "RL", "RR"].iter().map(|l| rows[0][col(&format!("{l}_grf_mean"))].parse().unwrap()).collect();
    let spread: f64 = rows[0][col("grf_spread")].parse().unwrap();
    let mean = legs.iter().sum::<f64>() / 4.0;
    let expected = legs.iter().map(|g| (g - mean).abs()).fold(0.0, f64::max);
    assert_eq!(spread, expected);
    assert!(dir.path().join("report.gp").exists());

    let again = ccpdi(dir.path(), &["report", "on", "off", "--output", "again.csv"]);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(fs::read(dir.path().join("report.csv")).unwrap(), fs::read(dir.path().join("again.csv")).unwrap());

    let out = ccpdi(dir.path(), &["report", "on", "nothing-here"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn validate_robot_accepts_the_shipped_description() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccpdi(dir.path(), &["validate-robot", configs().join("quad.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    fs::write(dir.path().join("bad.toml"), fs::read_to_string(configs().join("quad.toml")).unwrap().replace("friction = 0.8", "friction = -1.0")).unwrap();
    let out = ccpdi(dir.path(), &["validate-robot", "bad.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("contact.friction"));
}
