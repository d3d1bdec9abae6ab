use std::path::PathBuf;
use std::process::Command;

fn out_root(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("turnwave-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn run(root: &PathBuf, command: &str, args: &[&str]) -> (i32, PathBuf) {
    let st = Command::new(env!("CARGO_BIN_EXE_turnwave"))
        .arg("--out")
        .arg(root)
        .args(args)
        .output()
        .unwrap();
    (st.status.code().unwrap(), root.join(command))
}

#[test]
fn geometry_reports_default_turning_point() {
    let root = out_root("geom");
    let (code, dir) = run(&root, "geometry", &["geometry"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    let zt = v["result"]["frame"]["z_t"].as_f64().unwrap();
    assert!((zt + 1.0).abs() < 1e-12, "{zt}");
    assert!(dir.join("config.resolved").exists());
    std::fs::remove_dir_all(&root).unwrap();
}

#[test]
fn trace_is_bit_reproducible() {
    let (r1, r2) = (out_root("trace1"), out_root("trace2"));
    let args = ["--set", "eps=1e-2", "trace", "--seed", "9"];
    let (c1, d1) = run(&r1, "trace", &args);
    let (c2, d2) = run(&r2, "trace", &args);
    assert_eq!((c1, c2), (0, 0));
    let a = std::fs::read(d1.join("trace.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, std::fs::read(d2.join("trace.csv")).unwrap());
    std::fs::remove_dir_all(&r1).unwrap();
    std::fs::remove_dir_all(&r2).unwrap();
}

#[test]
fn bad_key_is_an_error() {
    let root = out_root("bad");
    let st = Command::new(env!("CARGO_BIN_EXE_turnwave"))
        .arg("--out")
        .arg(&root)
        .args(["--set", "no_such_key=1", "geometry"])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
    let _ = std::fs::remove_dir_all(&root);
}
