//! The `roadsig` binary end to end: exit codes, outputs, overrides.

use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use roadsig_core::perception::{save_checkpoint, Architecture, LaneNet};
use roadsig_core::protocol::read_csv;

fn roadsig() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_roadsig"));
    c.env_remove("ROADSIG_OUT_DIR");
    c
}

fn text(o: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

fn golden() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Temp dir with a small model and a config using it.
struct Setup {
    dir: tempfile::TempDir,
}

impl Setup {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&LaneNet::<f32>::init(Architecture::default(), 1), dir.path().join("m.rsm")).unwrap();
        Setup { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn config(&self, name: &str, body: &str) -> PathBuf {
        let p = self.path().join(name);
        std::fs::write(&p, format!("seed = 5\n[model]\npath = \"m.rsm\"\n{body}")).unwrap();
        p
    }
}

const NO_ATTACK: &str = "[plan]\nkind = \"trial\"\ntrial_id = \"base/no_attack/0\"\narm = \"no_attack\"\n";

#[test]
fn dry_run_checks_without_running() {
    let s = Setup::new();
    let cfg = s.config("c.toml", NO_ATTACK);
    let o = roadsig().args(["run", "--dry-run"]).arg(&cfg).output().unwrap();
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("config ok: 1 trial(s)"));
    assert!(!s.path().join("out").exists());
}

#[test]
fn baseline_trial_writes_390_rows_reproducibly() {
    let s = Setup::new();
    let cfg = s.config("c.toml", NO_ATTACK);
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let out = s.path().join(run);
        let o = roadsig().arg("run").arg(&cfg).env("ROADSIG_OUT_DIR", &out).output().unwrap();
        assert!(o.status.success(), "{}", text(&o));
        let csv = out.join("base_no_attack_0.csv");
        assert_eq!(read_csv(&csv).unwrap().len(), 390);
        csvs.push(std::fs::read(csv).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn invalid_configs_exit_2_and_name_the_section() {
    let s = Setup::new();
    let bad = s.config(
        "bad.toml",
        "[attack]\ntype = \"dos\"\nkind = \"drop\"\nrate = 1.5\n[plan]\nkind = \"trial\"\n",
    );
    let o = roadsig().args(["run", "--dry-run"]).arg(&bad).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("[attack]"), "{}", text(&o));

    let typo = s.config("typo.toml", &format!("{NO_ATTACK}[world]\nstart_lateal = 0.1\n"));
    let o = roadsig().args(["run", "--dry-run"]).arg(&typo).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("start_lateal"));

    let missing = s.path().join("missing.toml");
    assert_eq!(roadsig().arg("run").arg(&missing).status().unwrap().code(), Some(2));

    let no_model = s.config("nm.toml", NO_ATTACK);
    std::fs::remove_file(s.path().join("m.rsm")).unwrap();
    let o = roadsig().args(["run", "--dry-run"]).arg(&no_model).output().unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
}

#[test]
fn bundled_configs_validate() {
    let configs = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let s = Setup::new();
    for name in ["baseline.toml", "mitm_target.toml", "smoke.toml", "fingerprint.toml"] {
        // point the model path at the temp model
        let body = std::fs::read_to_string(configs.join(name)).unwrap();
        let p = s.path().join(name);
        std::fs::write(&p, body.replace("../models/lane_cnn.rsm", "m.rsm")).unwrap();
        let o = roadsig().args(["run", "--dry-run"]).arg(&p).output().unwrap();
        assert!(o.status.success(), "{name}: {}", text(&o));
    }
}

#[test]
fn analyze_rejects_empty_and_missing_inputs_with_3() {
    let s = Setup::new();
    let o = roadsig().arg("analyze").arg(s.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(3), "{}", text(&o));
    let o = roadsig().arg("analyze").arg(s.path().join("nope")).output().unwrap();
    assert_eq!(o.status.code(), Some(3), "{}", text(&o));
}

#[derive(serde::Deserialize)]
struct Expected {
    signatures: std::collections::BTreeMap<String, String>,
}

fn signatures(report: &Path) -> std::collections::BTreeMap<String, String> {
    let mut r = csv::Reader::from_path(report.join("fingerprints.csv")).unwrap();
    let headers = r.headers().unwrap().clone();
    let col = |n: &str| headers.iter().position(|h| h == n).unwrap();
    let (name, sig) = (col("name"), col("signature"));
    r.records()
        .map(|row| {
            let row = row.unwrap();
            (row[name].to_string(), row[sig].to_string())
        })
        .collect()
}

#[test]
fn analyze_golden_campaign() {
    let s = Setup::new();
    let out = s.path().join("report");
    let o = roadsig().arg("analyze").arg(golden().join("logs")).arg("--out").arg(&out).output().unwrap();
    assert!(o.status.success(), "{}", text(&o));
    let expected: Expected =
        serde_json::from_str(&std::fs::read_to_string(golden().join("expected.json")).unwrap()).unwrap();
    assert_eq!(signatures(&out), expected.signatures);
    for f in ["table.txt", "analysis.json", "fingerprints.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(text(&o).contains("Bonferroni"));
}

#[test]
fn threshold_override_reaches_the_report() {
    let s = Setup::new();
    let out = s.path().join("report");
    let o = roadsig()
        .arg("analyze")
        .arg(golden().join("logs"))
        .args(["--thresholds", "0.99,0.01", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", text(&o));
    let a: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("analysis.json")).unwrap()).unwrap();
    assert_eq!(a["thresholds"]["hi"], 0.99);
    assert_eq!(a["thresholds"]["lo"], 0.01);
    let o = roadsig()
        .arg("analyze")
        .arg(golden().join("logs"))
        .args(["--thresholds", "0.2,0.5"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn occupied_port_exits_4() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let o = roadsig().args(["netlab", "peer", "--port", &port]).output().unwrap();
    assert_eq!(o.status.code(), Some(4), "{}", text(&o));
    let o = roadsig().args(["netlab", "proxy", "--port", &port]).output().unwrap();
    assert_eq!(o.status.code(), Some(4), "{}", text(&o));
}

#[test]
fn scenario_bias_and_passthrough() {
    let o = roadsig().args(["netlab", "scenario", "--frames", "20", "--output", "bias:0.3"]).output().unwrap();
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("shifted by 0.3"));
    let o = roadsig().args(["netlab", "scenario", "--frames", "20", "--passthrough"]).output().unwrap();
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("passthrough control equality: true"));
}

#[test]
fn scenario_flood_prints_csv_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = roadsig()
        .args(["netlab", "scenario", "--frames", "20", "--flood-rate", "100", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", text(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("sent,acknowledged,errors"), "{out}");
    assert_eq!(read_csv(dir.path().join("probe.csv")).unwrap().len(), 20);
    assert!(dir.path().join("scenario.json").exists());
}

#[test]
fn bad_shape_policy_is_a_usage_error() {
    let o = roadsig().args(["netlab", "shape", "drop:2"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
