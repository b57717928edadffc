use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};
use tempfile::TempDir;

fn addrtrap(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_addrtrap"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Path, args: &[&str]) -> i32 {
    addrtrap(out, args).status.code().expect("exit code")
}

fn read(dir: &TempDir, name: &str) -> Vec<u8> {
    std::fs::read(dir.path().join(name)).unwrap()
}

const SHORT_SIM: &[&str] = &["simulate", "--preset", "point", "--duration", "2e-6", "--jitter", "1e-6"];

#[test]
fn runs_are_byte_identical() {
    let cases: [(&[&str], &[&str]); 4] = [
        (SHORT_SIM, &["trajectory.csv", "summary.json"]),
        (&["table1"], &["table1.csv"]),
        (&["generate", "folsom4x4"], &["layout.json"]),
        (&["resonator", "response"], &["response.csv", "resonance.json"]),
    ];
    for (args, files) in cases {
        let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
        for d in [&a, &b] {
            let mut full = vec!["--seed", "7"];
            full.extend_from_slice(args);
            assert_eq!(code(d.path(), &full), 0, "{args:?}");
        }
        for f in files {
            assert_eq!(read(&a, f), read(&b, f), "{args:?}: {f}");
        }
    }
}

#[test]
fn seed_moves_the_start() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let mut args = vec!["--seed", "1"];
    args.extend_from_slice(SHORT_SIM);
    assert_eq!(code(a.path(), &args), 0);
    args[1] = "2";
    assert_eq!(code(b.path(), &args), 0);
    assert_ne!(read(&a, "trajectory.csv"), read(&b, "trajectory.csv"));
}

#[test]
fn exit_codes() {
    let d = TempDir::new().unwrap();
    let p = d.path();
    assert_eq!(code(p, &["table1", "--no-such-flag"]), 2);
    let empty = p.join("empty.json");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(code(p, &["resonator", "response", empty.to_str().unwrap()]), 2);

    assert_eq!(code(p, &["--threads", "0", "table1"]), 3);
    assert_eq!(code(p, &["resonator", "design"]), 3);
    assert_eq!(code(p, &["simulate", "--preset", "point", "--timestep", "1e-6"]), 3);

    assert_eq!(code(p, &["analyze", "--preset", "point", "--voltage", "0"]), 4);
    assert_eq!(code(p, &["resonator", "lock", "--dc", "5e-12"]), 4);

    assert_eq!(code(p, &["analyze", "--layout", p.join("missing.json").to_str().unwrap()]), 5);
    let blocked = p.join("file");
    std::fs::write(&blocked, "x").unwrap();
    assert_eq!(code(&blocked, &["table1"]), 5);
}

#[test]
fn csv_and_json_agree() {
    let (c, j) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    assert_eq!(code(c.path(), SHORT_SIM), 0);
    let mut args = vec!["--format", "json"];
    args.extend_from_slice(SHORT_SIM);
    assert_eq!(code(j.path(), &args), 0);

    let states: Vec<Value> = serde_json::from_slice(&read(&j, "trajectory.json")).unwrap();
    let text = read(&c, "trajectory.csv");
    let mut rdr = csv::Reader::from_reader(&text[..]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), states.len());
    let close = |a: f64, b: f64| a == b || (a - b).abs() <= 1e-15 * a.abs().max(b.abs());
    for (row, s) in rows.iter().zip(&states) {
        let v: Vec<f64> = row.iter().map(|x| x.parse().unwrap()).collect();
        let get = |k: &str, i: usize| s[k][i].as_f64().unwrap();
        assert!(close(v[0], s["time"].as_f64().unwrap()));
        for i in 0..3 {
            assert!(close(v[1 + i], get("position", i)));
            assert!(close(v[4 + i], get("velocity", i)));
        }
    }
}

#[test]
fn flags_override_config_over_presets() {
    let d = TempDir::new().unwrap();
    let cfg = d.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"table1": {"omega_unit": "mhz"}}"#).unwrap();
    let cfg = cfg.to_str().unwrap();
    let first_time = |args: &[&str]| {
        let o = TempDir::new().unwrap();
        let mut full = vec!["--format", "json"];
        full.extend_from_slice(args);
        assert_eq!(code(o.path(), &full), 0);
        let rows: Vec<Value> = serde_json::from_slice(&read(&o, "table1.json")).unwrap();
        rows[0]["gate_time_s"].as_f64().unwrap()
    };
    let preset = first_time(&["table1"]);
    let config = first_time(&["--config", cfg, "table1"]);
    let flag = first_time(&["--config", cfg, "table1", "--omega-unit", "mrad"]);
    assert!((config / preset - std::f64::consts::TAU).abs() < 1e-12);
    assert_eq!(flag, preset);

    std::fs::write(d.path().join("bad.json"), r#"{"table1": {"omega": 1}}"#).unwrap();
    assert_eq!(code(d.path(), &["--config", d.path().join("bad.json").to_str().unwrap(), "table1"]), 2);
}
