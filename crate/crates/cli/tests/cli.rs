use std::fs;
use std::path::PathBuf;
use std::process::Command;

fn conewave() -> Command {
    Command::new(env!("CARGO_BIN_EXE_conewave"))
}

fn tmpdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("conewave-cli-{name}-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

const WAVE_JSON: &str = r#"{
  "n": 2, "period": 32.0, "grid_points": 128,
  "color": "red", "k": 0, "hilbert_dim": 1,
  "atoms": [
    {"xi": [1.5, 0.0], "amp": [[1.0, 0.0]]},
    {"xi": [1.40625, 0.09375], "amp": [[0.5, 0.5]]},
    {"xi": [1.59375, -0.125], "amp": [[0.0, -1.0]]}
  ]
}"#;

#[test]
fn bad_config_exits_2() {
    let dir = tmpdir("badcfg");
    let cfg = dir.join("exp.toml");
    fs::write(&cfg, "experiment = \"mock\"\nseed = 1\n[mock]\nr_list = []\ntrials = 5\n").unwrap();
    let out = conewave()
        .args(["bilinear", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("r_list"), "stderr: {err}");
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tmpdir("unknownkey");
    let cfg = dir.join("exp.toml");
    fs::write(
        &cfg,
        "experiment = \"mock\"\nseed = 1\ntollerance = 0.1\n[mock]\nr_list = [4.0]\ntrials = 1\n",
    )
    .unwrap();
    let out = conewave()
        .args(["bilinear", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn toy_scan_csv_is_deterministic() {
    let dir = tmpdir("toyscan");
    let a = dir.join("a.csv");
    let b = dir.join("b.csv");
    for path in [&a, &b] {
        let out = conewave()
            .args(["nullform", "--toy-scan", "--l", "0..1", "--k", "0..1", "--quad-res", "12"])
            .arg("--csv")
            .arg(path)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let bytes_a = fs::read(&a).unwrap();
    let bytes_b = fs::read(&b).unwrap();
    assert!(!bytes_a.is_empty());
    assert_eq!(bytes_a, bytes_b, "reruns must produce identical CSV bytes");
    let text = String::from_utf8(bytes_a).unwrap();
    assert!(text.starts_with("experiment,params,value,err_est,seed\n"));
}

#[test]
fn localize_writes_projection_and_report() {
    let dir = tmpdir("localize");
    let wave = dir.join("wave.json");
    fs::write(&wave, WAVE_JSON).unwrap();
    let out_wave = dir.join("proj.json");
    let report = dir.join("report.json");
    let out = conewave()
        .arg("localize")
        .arg("--wave")
        .arg(&wave)
        .args(["--disk", "x=16:16,t=0,r=8"])
        .arg("--out")
        .arg(&out_wave)
        .arg("--report")
        .arg(&report)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(doc["energy_minor_ok"], serde_json::Value::Bool(true));
    assert!(fs::read_to_string(&out_wave).unwrap().contains("\"atoms\""));
}

#[test]
fn packets_writes_tubes_and_index() {
    let dir = tmpdir("packets");
    let wave = dir.join("wave.json");
    fs::write(&wave, WAVE_JSON).unwrap();
    let out_dir = dir.join("packets");
    let out = conewave()
        .arg("packets")
        .arg("--wave")
        .arg(&wave)
        .args(["--cube", "x=16:16,t=0,side=8", "--c", "0.2"])
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let index: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("index.json")).unwrap()).unwrap();
    let residual = index["reconstruction_residual"].as_f64().unwrap();
    assert!(residual <= 1e-10, "residual {residual}");
    assert!(!index["tubes"].as_array().unwrap().is_empty());
}

#[test]
fn check_exponents_reports_admissible_tuple() {
    let dir = tmpdir("exponents");
    let tuple = dir.join("tuple.json");
    fs::write(
        &tuple,
        r#"{"n": 2, "p": [2, 1], "beta0": [0, 1], "beta_plus": [1, 2],
            "beta_minus": [1, 2], "alpha1": [3, 4], "alpha2": [3, 4]}"#,
    )
    .unwrap();
    let out = conewave()
        .arg("nullform")
        .arg("--check-exponents")
        .arg(&tuple)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(doc["admissible"], serde_json::Value::Bool(true));
}

#[test]
fn bilinear_kscaling_writes_csv_rows() {
    let dir = tmpdir("kscaling");
    let cfg = dir.join("exp.toml");
    fs::write(
        &cfg,
        "experiment = \"kscaling\"\nseed = 7\n[kscaling]\nk_list = [0, 1, 2]\np = 2.0\ng = 32\nslices = 12\n",
    )
    .unwrap();
    let csv = dir.join("out.csv");
    let out = conewave()
        .args(["bilinear", "--config"])
        .arg(&cfg)
        .arg("--csv")
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "experiment,params,value,err_est,seed");
    // One row per k plus the slope row.
    assert_eq!(lines.len(), 1 + 3 + 1);
    assert!(lines[1].starts_with("kscaling,k=0 p=2,"));
    assert!(lines.iter().all(|l| l == &lines[0] || l.ends_with(",7")));
}
