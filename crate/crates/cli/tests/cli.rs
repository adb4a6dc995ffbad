use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use helfrich_core::mesh::generate;
use helfrich_core::mesh::io::write_off;
use tempfile::TempDir;

fn helfrich(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_helfrich")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn configs() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

const FLOW: &str = r#"
seed = 3
[mesh]
generate = { kind = "perturbed_sphere", subdivisions = 2, amplitude = 0.1 }
[params]
beta = 1.0
gamma = -0.5
[flow]
tau = 1e-3
steps = 3
"#;

fn write_config(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn flow_run_is_monotone_and_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "run.toml", FLOW);
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = helfrich(&["flow", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(out);
    }
    let trace = fs::read_to_string(outputs[0].join("trace.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(trace.as_bytes());
    let col = rdr.headers().unwrap().iter().position(|h| h == "energy").unwrap();
    let energies: Vec<f64> = rdr.records().map(|r| r.unwrap()[col].parse().unwrap()).collect();
    assert_eq!(energies.len(), 4);
    assert!(energies.windows(2).all(|w| w[1] <= w[0] + 1e-10 * (1.0 + energies[0].abs())));
    for file in ["trace.csv", "summary.json"] {
        assert_eq!(fs::read(outputs[0].join(file)).unwrap(), fs::read(outputs[1].join(file)).unwrap(), "{file}");
    }
    for file in ["manifest.json", "snapshot_0000.off", "snapshot_0003.off"] {
        assert!(outputs[0].join(file).exists(), "{file}");
    }
}

#[test]
fn flow_config_errors_exit_with_usage_code() {
    let dir = TempDir::new().unwrap();
    let missing = write_config(&dir, "missing.toml", "[mesh]\npath = \"nowhere.off\"\n[params]\nbeta = 1.0\n");
    let o = helfrich(&["flow", &missing]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.off"), "{}", stderr(&o));

    for (name, text) in [
        ("tau.toml", FLOW.replace("tau = 1e-3", "tau = -1e-3")),
        ("zero.toml", FLOW.replace("tau = 1e-3", "tau = 0.0")),
        ("unknown.toml", FLOW.replace("steps = 3", "steps = 3\nstep_size = 2")),
        ("beta.toml", FLOW.replace("beta = 1.0", "beta = 0.0")),
    ] {
        let cfg = write_config(&dir, name, &text);
        let o = helfrich(&["flow", &cfg, "--out", dir.path().join("x").to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{name}: {}", stderr(&o));
    }
}

#[test]
fn sphere_table() {
    let o = helfrich(&["spheres", "--beta", "1", "--gamma", "0", "--h0", "0"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let row = out.lines().find(|l| l.contains("<- argmin")).unwrap();
    let cols: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(cols[0], "1");
    assert!((cols[2].parse::<f64>().unwrap() - 8.0 * PI).abs() < 1e-8);

    let m0 = (16.0 * PI).to_string();
    let o = helfrich(&["spheres", "--beta", "1", "--gamma", "0", "--h0", "-1", "--m0", &m0]);
    assert!(stdout(&o).contains("exact interior minimizer"), "{}", stdout(&o));

    let o = helfrich(&["spheres", "--beta", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

fn energy_json(args: &[&str]) -> serde_json::Value {
    let o = helfrich(args);
    assert!(o.status.success(), "{}", stderr(&o));
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn energy_reports() {
    let v = energy_json(&["energy", "--gamma", "-0.5"]);
    let w = v["willmore"].as_f64().unwrap();
    assert!((w - 4.0 * PI).abs() < 0.02 * 4.0 * PI);
    let g = v["energy"]["gauss"].as_f64().unwrap();
    assert!((g - 4.0 * PI * -0.5).abs() < 1e-9 * 2.0 * PI);
    assert!(v["multiplicity_bound"].as_u64().is_some());

    let dir = TempDir::new().unwrap();
    let torus = generate::torus(2.0, 0.7, 30, 15, 1).unwrap();
    let path = dir.path().join("torus.off");
    write_off(&path, torus.positions(), torus.faces()).unwrap();
    let v = energy_json(&["energy", path.to_str().unwrap(), "--gamma", "-0.5"]);
    assert_eq!(v["genus"], 1);
    assert!(v["energy"]["gauss"].as_f64().unwrap().abs() < 1e-9);

    let open = dir.path().join("open.off");
    fs::write(&open, "OFF\n4 3 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1 3\n3 1 2 3\n").unwrap();
    let o = helfrich(&["energy", open.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mesh not closed"), "{}", stderr(&o));
}

#[test]
fn transport_distances() {
    let (a, b) = (configs().join("ring_a.csv"), configs().join("ring_b.csv"));
    let (a, b) = (a.to_str().unwrap(), b.to_str().unwrap());
    let o = helfrich(&["transport", a, a]);
    assert!(o.status.success());
    let d: f64 = stdout(&o).split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(d.abs() < 1e-12);

    let dir = TempDir::new().unwrap();
    let plan = dir.path().join("plan.csv");
    let o = helfrich(&["transport", a, b, "--spatial", "--plan", plan.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let vals: Vec<f64> = stdout(&o).lines().map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap()).collect();
    assert!(vals[1] <= vals[0] + 1e-12 && vals[0] > 0.0);
    assert!(plan.exists());

    let heavy = dir.path().join("heavy.csv");
    let text = fs::read_to_string(a).unwrap();
    let mut lines = text.lines();
    let mut scaled = vec![lines.next().unwrap().to_string()];
    for l in lines {
        let mut f: Vec<String> = l.split(',').map(str::to_string).collect();
        let w: f64 = f.last().unwrap().parse().unwrap();
        *f.last_mut().unwrap() = (2.0 * w).to_string();
        scaled.push(f.join(","));
    }
    fs::write(&heavy, scaled.join("\n")).unwrap();
    let o = helfrich(&["transport", a, heavy.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mass"), "{}", stderr(&o));
}

#[test]
fn validate_quick_subset_and_mutation_hook() {
    let o = helfrich(&["validate", "--only", "1,2"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("[PASS]")).count(), 2);

    let o = helfrich(&["validate", "--only", "1,4", "--corrupt-curvature-sign"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("[FAIL]")).count(), 2);

    let o = helfrich(&["validate", "--only", "12"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn quick_validation_passes() {
    let o = helfrich(&["validate", "--quick"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().count(), 6);
}

#[test]
fn thread_count_must_be_positive() {
    let o = Command::new(env!("CARGO_BIN_EXE_helfrich")).env("HELFRICH_THREADS", "zero").args(["spheres"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
