use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_sticky-mfg");

/// Small ComplexPair configuration that runs every subcommand in well under a second.
fn base_config(out: &Path) -> Value {
    json!({
        "version": 1,
        "market": { "alpha": 0.8, "beta": 2.0, "rho": 0.5, "p0": 1.2, "x0": 0.9 },
        "limit_type": { "mu": 1.0, "sigma": 0.5, "gamma": 0.5, "lambda": 0.5, "r": 0.5, "c": 0.4 },
        "population": {
            "n": 3,
            "n_list": [4, 16, 64],
            "heterogeneity": { "delta": { "mu": 0.1, "c": 0.1 }, "jitter": 0.5 },
            "init": { "family": "log_normal", "mean": 0.9, "variance": 0.05 }
        },
        "sim": { "dt": 0.05, "horizon": 4.0, "n_paths": 40 },
        "simulate": { "format": "csv", "record": "all" },
        "nashgap": { "family": { "kind": "piecewise_constant", "segments": 4 }, "search": { "budget": 20 } },
        "fixedpoint": { "dt": 0.01, "horizon": 40.0, "window": 20.0 },
        "output_dir": out,
        "seed": 11
    })
}

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self, value: &Value) -> PathBuf {
        let path = self.dir.path().join("config.json");
        fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
        path
    }

    fn raw_config(&self, text: &str) -> PathBuf {
        let path = self.dir.path().join("config.json");
        fs::write(&path, text).unwrap();
        path
    }
}

fn run(args: &[&str], config: &Path, env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).arg("--config").arg(config).env_remove("STICKY_MFG_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

/// `(name, bytes)` of every file in `dir`, with the manifest's wall clock removed.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            let name = e.file_name().into_string().unwrap();
            let mut bytes = fs::read(e.path()).unwrap();
            if name == "manifest.json" {
                let mut m: Value = serde_json::from_slice(&bytes).unwrap();
                m.as_object_mut().unwrap().remove("wall_clock");
                bytes = serde_json::to_vec(&m).unwrap();
            }
            (name, bytes)
        })
        .collect();
    files.sort();
    files
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn valid_config_prints_ok() {
    let sb = Sandbox::new();
    let o = run(&["validate"], &sb.config(&base_config(&sb.out("out"))), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "OK");
}

#[test]
fn shipped_default_config_is_valid() {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
    let sb = Sandbox::new();
    let out = sb.out("out");
    let o = Command::new(BIN).args(["validate", "--config"]).arg(&config).arg("--out").arg(&out).output().unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn loud_volatility_is_a_validation_failure() {
    let sb = Sandbox::new();
    let mut cfg = base_config(&sb.out("out"));
    cfg["limit_type"]["sigma"] = json!(1.5);
    let o = run(&["validate"], &sb.config(&cfg), &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("sigma²<2mu violated"), "{}", stderr(&o));

    let o = run(&["equilibrium"], &sb.config(&cfg), &[]);
    assert_eq!(code(&o), 1);
    assert!(!sb.out("out").exists());
}

#[test]
fn missing_and_unknown_fields_are_parse_failures() {
    let sb = Sandbox::new();
    let mut cfg = base_config(&sb.out("out"));
    cfg.as_object_mut().unwrap().remove("seed");
    let o = run(&["validate"], &sb.config(&cfg), &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing field `seed`"), "{}", stderr(&o));

    let mut cfg = base_config(&sb.out("out"));
    cfg["market"]["alhpa"] = json!(1.0);
    let o = run(&["validate"], &sb.config(&cfg), &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("alhpa"), "{}", stderr(&o));

    let mut cfg = base_config(&sb.out("out"));
    cfg["version"] = json!(2);
    assert_eq!(code(&run(&["validate"], &sb.config(&cfg), &[])), 2);

    assert_eq!(code(&run(&["validate"], &sb.raw_config("{ not json"), &[])), 2);
    assert_eq!(code(&run(&["validate"], &sb.out("absent.json"), &[])), 2);
}

#[test]
fn bad_thread_cap_is_a_parse_failure() {
    let sb = Sandbox::new();
    let o = run(&["validate"], &sb.config(&base_config(&sb.out("out"))), &[("STICKY_MFG_THREADS", "zero")]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("STICKY_MFG_THREADS"));
}

#[test]
fn output_dir_must_be_a_directory() {
    let sb = Sandbox::new();
    let blocker = sb.out("file");
    fs::write(&blocker, b"x").unwrap();
    let o = run(&["validate"], &sb.config(&base_config(&blocker)), &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("not a directory"));
}

#[test]
fn equilibrium_reports_the_constructed_cubic() {
    // α = ρ, A = 7, B = 6: the cubic is (K+2)(K+1)(K−3).
    let rho = 0.5f64;
    let mu = (-rho + (28.0 - 3.0 * rho * rho).sqrt()) / 2.0;
    let r = 0.75 * 0.5 / (2.0 * (6.0 / rho - mu * (mu + rho)));
    let sb = Sandbox::new();
    let out = sb.out("eq");
    let mut cfg = base_config(&out);
    cfg["market"] = json!({ "alpha": rho, "beta": 2.0, "rho": rho, "p0": 1.0, "x0": 0.8 });
    cfg["limit_type"] = json!({ "mu": mu, "sigma": 0.5, "gamma": 0.5, "lambda": 0.5, "r": r, "c": 0.5 });
    cfg["population"]["init"] = json!({ "family": "point_mass", "mean": 0.8 });
    let o = run(&["equilibrium"], &sb.config(&cfg), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("equilibrium.json")).unwrap()).unwrap();
    let ch = &summary["characteristic"];
    assert_eq!(ch["case"], "ThreeReal");
    assert!((ch["delta"].as_f64().unwrap() - 400.0).abs() < 1e-9);
    for (key, want) in [("k1", -2.0), ("k2", -1.0), ("k3", 3.0)] {
        assert!((ch["roots"][key].as_f64().unwrap() - want).abs() < 1e-12, "{key}");
    }
    assert_eq!(summary["passed"], true);

    let first = &csv_rows(&out.join("equilibrium.csv"))[0];
    let first: Vec<f64> = first.iter().map(|c| c.parse().unwrap()).collect();
    let g0 = summary["terms"]["g"].as_array().unwrap().iter().map(|t| t["coeff"][0].as_f64().unwrap()).sum::<f64>();
    assert_eq!(first[0], 0.0);
    assert!((first[1] - 1.0).abs() < 1e-14);
    assert!((first[2] - 0.8).abs() < 1e-14);
    assert!((first[3] - g0 / (2.0 * r)).abs() < 1e-12);
    assert!((first[4] - g0).abs() < 1e-12);
    assert!(stdout(&o).contains("ThreeReal"));
}

#[test]
fn residual_threshold_breach_is_a_numerical_failure() {
    let sb = Sandbox::new();
    let out = sb.out("eq");
    let mut cfg = base_config(&out);
    cfg["equilibrium"] = json!({ "identity_tol": 1e-300 });
    let o = run(&["equilibrium"], &sb.config(&cfg), &[]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    // Diagnostics are still written, and the manifest records the failure.
    assert!(out.join("equilibrium.json").exists());
    assert!(manifest(&out)["status"].as_str().unwrap().contains("residuals exceed"));
}

#[test]
fn fixedpoint_prints_trace_and_distance() {
    let sb = Sandbox::new();
    let out = sb.out("fp");
    let o = run(&["fixedpoint"], &sb.config(&base_config(&out)), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("iter    1  sup change"));
    assert!(text.contains("sup |m_X - closed form| on [0, 20]"));
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("fixedpoint.json")).unwrap()).unwrap();
    assert_eq!(summary["converged"], true);
    assert!(summary["sup_distance_to_closed_form"].as_f64().unwrap() < 1e-4);
    let trace = csv_rows(&out.join("picard_trace.csv"));
    assert_eq!(trace.len(), summary["iterations"].as_u64().unwrap() as usize);

    let mut starved = base_config(&out);
    starved["fixedpoint"]["max_iter"] = json!(2);
    assert_eq!(code(&run(&["fixedpoint"], &sb.config(&starved), &[])), 3);
}

#[test]
fn gap_over_three_sizes_has_three_rows() {
    let sb = Sandbox::new();
    let out = sb.out("gap");
    let o = run(&["gap"], &sb.config(&base_config(&out)), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&out.join("gap.csv"));
    assert_eq!(rows.len(), 3);
    let ns: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(ns, ["4", "16", "64"]);
    assert!(rows.iter().all(|r| r.len() == 9 && r[2] == "piecewise_constant_4"));
}

#[test]
fn reward_and_simulate_write_their_exports() {
    let sb = Sandbox::new();
    let cfg = sb.config(&base_config(&sb.out("unused")));
    let rw = sb.out("rw");
    let o = run(&["reward", "--out", rw.to_str().unwrap()], &cfg, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&rw.join("reward.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[2] == "deterministic_exppoly" && r[7] == "11"));

    let sim = sb.out("sim");
    let o = run(&["simulate", "--out", sim.to_str().unwrap(), "--paths", "5", "--horizon", "1"], &cfg, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    // 5 paths, 3 firms, 21 grid points.
    assert_eq!(csv_rows(&sim.join("trajectories.csv")).len(), 5 * 3 * 21);

    let conv = sb.out("conv");
    let o = run(&["simulate", "--convergence", "--out", conv.to_str().unwrap()], &cfg, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(csv_rows(&conv.join("convergence.csv")).len(), 3);
}

#[test]
fn every_output_carries_the_config_hash() {
    let sb = Sandbox::new();
    let mut cfg = base_config(&sb.out("unused"));
    cfg["simulate"]["format"] = json!("binary");
    let path = sb.config(&cfg);
    let mut hashes = Vec::new();
    for sub in ["equilibrium", "simulate", "reward", "fixedpoint"] {
        let out = sb.out(sub);
        let o = run(&[sub, "--out", out.to_str().unwrap()], &path, &[]);
        assert_eq!(code(&o), 0, "{sub}: {}", stderr(&o));
        let hash = manifest(&out)["config_hash"].as_str().unwrap().to_string();
        for entry in fs::read_dir(&out).unwrap() {
            let bytes = fs::read(entry.unwrap().path()).unwrap();
            assert!(bytes.windows(hash.len()).any(|w| w == hash.as_bytes()));
        }
        hashes.push(hash);
    }
    // Same config, same hash, whichever subcommand ran.
    assert!(hashes.windows(2).all(|w| w[0] == w[1]));

    let out = sb.out("reseeded");
    run(&["equilibrium", "--out", out.to_str().unwrap(), "--seed", "12"], &path, &[]);
    assert_ne!(manifest(&out)["config_hash"].as_str().unwrap(), hashes[0]);
}

#[test]
fn reruns_are_byte_identical_apart_from_wall_clock() {
    let sb = Sandbox::new();
    let path = sb.config(&base_config(&sb.out("unused")));
    for sub in ["simulate", "reward", "gap"] {
        let a = sb.out(&format!("{sub}-a"));
        let b = sb.out(&format!("{sub}-b"));
        let oa = run(&[sub, "--out", a.to_str().unwrap()], &path, &[("STICKY_MFG_THREADS", "1")]);
        let ob = run(&[sub, "--out", b.to_str().unwrap()], &path, &[("STICKY_MFG_THREADS", "3")]);
        assert_eq!((code(&oa), code(&ob)), (0, 0), "{sub}");
        assert_eq!(snapshot(&a), snapshot(&b), "{sub}");
        assert_eq!(stdout(&oa), stdout(&ob));
    }
}
