use std::path::Path;
use std::process::{Command, Output};

fn kdvtau(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kdvtau"))
        .args(args)
        .current_dir(dir)
        .env_remove("KDVTAU_OUT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn with_config(body: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), body).unwrap();
    dir
}

const SMALL_FLOW: &str = "[gamma]\natoms = []\n[flow]\nx = { lo = -0.5, hi = 0.5, step = 0.1 }\nt = { lo = 0.0, hi = 0.02, step = 0.01 }\n";

#[test]
fn mfun_check_accepts_default() {
    let d = with_config("");
    let o = kdvtau(d.path(), &["mfun-check", "--config", "run.toml", "--out", "o"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.path().join("o/mfun_check.json")).unwrap()).unwrap();
    assert!(rep["clauses"].as_array().unwrap().iter().all(|c| c["passed"] == true));
}

#[test]
fn mfun_check_rejects_negative_mass() {
    let d = with_config("[m]\nmasses = [[0.0, -0.5]]\n");
    let o = kdvtau(d.path(), &["mfun-check", "--config", "run.toml", "--out", "o"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("[FAIL] construction"));
}

#[test]
fn config_errors_exit_2() {
    for body in ["seed = \"x\"", "[m]\nbogus = 1", "[flow]\nx = { lo = 1.0, hi = 0.0, step = 0.1 }", "[numerics]\nnodes = 0"] {
        let d = with_config(body);
        let o = kdvtau(d.path(), &["tau", "--config", "run.toml", "--out", "o"]);
        assert_eq!(code(&o), 2, "config {body:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&kdvtau(d.path(), &["tau", "--config", "missing.toml"])), 2);
    assert_eq!(code(&kdvtau(d.path(), &["no-such-command"])), 2);
}

#[test]
fn tau_json_shape() {
    let d = with_config("");
    let o = kdvtau(d.path(), &["tau", "--config", "run.toml", "--out", "o", "--cross-validate"]);
    assert_eq!(code(&o), 0);
    let first = String::from_utf8_lossy(&o.stdout).lines().next().unwrap().to_string();
    let v: serde_json::Value = serde_json::from_str(&first).unwrap();
    let mut keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    keys.sort();
    assert_eq!(keys, ["log_abs", "phase_im", "phase_re", "route"]);
    assert_eq!(v["route"], "recursion");
}

#[test]
fn route_disagreement_exit_3() {
    // any nonzero discrepancy exceeds a zero tolerance
    let d = with_config("[numerics]\nroute_tol = 0.0\n[gamma]\natoms = [{ kind = \"q\", re = 3.0 }]\nexp = [[0.3, 0.0]]\n");
    let o = kdvtau(d.path(), &["tau", "--config", "run.toml", "--out", "o", "--cross-validate"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn residual_gate_exit_4() {
    let d = with_config(&format!("{SMALL_FLOW}[numerics]\nresidual_gate = 1e-12\n"));
    let o = kdvtau(d.path(), &["flow", "--config", "run.toml", "--out", "o"]);
    assert_eq!(code(&o), 4);
    assert!(d.path().join("o/flow.csv").exists());
}

#[test]
fn flow_csv_is_deterministic() {
    let d = with_config(&format!("{SMALL_FLOW}[numerics]\nresidual_gate = 1e9\n"));
    let a = kdvtau(d.path(), &["flow", "--config", "run.toml", "--out", "a"]);
    let b = kdvtau(d.path(), &["flow", "--config", "run.toml", "--out", "b"]);
    assert_eq!((code(&a), code(&b)), (0, 0));
    for f in ["flow.csv", "flow_meta.json", "flow_summary.json"] {
        let x = std::fs::read(d.path().join("a").join(f)).unwrap();
        let y = std::fs::read(d.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between runs");
    }
    let csv = std::fs::read_to_string(d.path().join("a/flow.csv")).unwrap();
    assert!(!csv.contains('\r'));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x,t,q,pole_flag"));
    assert_eq!(lines.count(), 11 * 3);
    let q = csv.lines().nth(1).unwrap().split(',').nth(2).unwrap();
    let mantissa = q.trim_start_matches('-').split('e').next().unwrap();
    assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 17);
}

#[test]
fn out_dir_from_environment() {
    let d = with_config("");
    let o = Command::new(env!("CARGO_BIN_EXE_kdvtau"))
        .args(["tau", "--config", "run.toml"])
        .current_dir(d.path())
        .env("KDVTAU_OUT", "from_env")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(d.path().join("from_env/tau.json").exists());
}

#[test]
fn oracle_passes_on_default() {
    let d = with_config("");
    let o = kdvtau(d.path(), &["oracle", "--config", "run.toml", "--out", "o"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.path().join("o/oracle.json")).unwrap()).unwrap();
    assert_eq!(rep["passed"], true);
}
