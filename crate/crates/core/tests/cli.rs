use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flowdyn"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("flowdyn-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn run_writes_json_and_csv() {
    let dir = scratch("run");
    let json = dir.join("out.json");
    let csv = dir.join("out.csv");
    let out = bin()
        .args(["run", "--preset", "symmetric-websearch-50", "--duration-ms", "5", "--warmup-ms", "1"])
        .arg("--json")
        .arg(&json)
        .arg("--csv")
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(doc["config"]["scheme"], "letflow");
    assert!(doc["summary"]["flows"].as_u64().unwrap() > 0);
    let table = std::fs::read_to_string(&csv).unwrap();
    let mut lines = table.lines();
    assert!(lines.next().unwrap().starts_with("scheme,flowdyn,load"));
    assert!(lines.next().unwrap().starts_with("letflow,true,0.50,web-search,symmetric,1,"));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn dumped_config_reloads() {
    let dir = scratch("dump");
    let out = bin().args(["run", "--preset", "asymmetric", "--seed", "9", "--dump-config"]).output().unwrap();
    assert!(out.status.success());
    let path = dir.join("c.toml");
    std::fs::write(&path, &out.stdout).unwrap();
    let again = bin().args(["run", "--dump-config", "--config"]).arg(&path).output().unwrap();
    assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));
    assert_eq!(out.stdout, again.stdout);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn invalid_value_names_the_field() {
    let out = bin().args(["run", "--load", "1.7"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("load"));
}

#[test]
fn topology_lists_edges() {
    let out = bin().args(["topology"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() >= 96);
}
