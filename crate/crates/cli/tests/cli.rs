use std::path::Path;
use std::process::{Command, Output};

fn osmac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osmac"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_then_fit() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let out = osmac(&["gen", "--scenario", "mzNormal", "--n", "5000", "--out", s(&data), "--seed", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&data).unwrap();
    assert_eq!(text.lines().next().unwrap(), "x0,x1,x2,x3,x4,x5,x6,y");
    assert_eq!(text.lines().count(), 5001);

    let ssp = dir.path().join("ssp.csv");
    let out = osmac(&[
        "fit", "--data", s(&data), "--method", "mvc", "--r0", "200", "--r", "800", "--json",
        "--dump-ssp", s(&ssp),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["beta"].as_array().unwrap().len(), 7);
    assert_eq!(v["se"].as_array().unwrap().len(), 7);
    let plan = std::fs::read_to_string(&ssp).unwrap();
    assert_eq!(plan.lines().next().unwrap(), "index,pi");
    assert_eq!(plan.lines().count(), 5001);
    let total: f64 = plan
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-9);

    for method in ["uniform", "mmse", "lcc", "full"] {
        let out = osmac(&["fit", "--data", s(&data), "--method", method]);
        assert!(out.status.success(), "{method}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn fit_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    assert!(osmac(&["gen", "--scenario", "EXP", "--n", "3000", "--out", s(&data)]).status.success());
    let a = osmac(&["fit", "--data", s(&data), "--method", "mmse", "--seed", "9", "--json"]);
    let b = osmac(&["fit", "--data", s(&data), "--method", "mmse", "--seed", "9", "--json"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn bench_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{
            "source": {"scenario": "mzNormal", "n": 2000},
            "methods": ["uniform", "mvc"],
            "r0": 100,
            "r_grid": [200, 300],
            "reps": 3,
            "metrics": ["mse", "est_mse"]
        }"#,
    )
    .unwrap();
    let json1 = dir.path().join("a.json");
    let json2 = dir.path().join("b.json");
    let csv = dir.path().join("r.csv");
    for (out, threads) in [(&json1, "1"), (&json2, "2"), (&csv, "1")] {
        let o = osmac(&["bench", "--spec", s(&spec), "--out", s(out), "--seed", "42", "--threads", threads]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(&json1).unwrap();
    assert_eq!(a, std::fs::read(&json2).unwrap());
    let v: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(v["seed"], 42);
    assert_eq!(v["cells"].as_array().unwrap().len(), 4);
    let rows = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(rows.lines().count(), 5);
    assert!(rows.starts_with("method,r0,r,"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.json");
    std::fs::write(&spec, r#"{"source": {"scenario": "mzNormal", "n": 10}, "methods": [], "r0": 1, "reps": 1}"#).unwrap();
    let out = dir.path().join("r.json");
    assert_eq!(osmac(&["bench", "--spec", s(&spec), "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(osmac(&["gen", "--scenario", "nope", "--n", "5", "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(osmac(&["fit", "--data", "/nonexistent.csv", "--method", "mvc"]).status.code(), Some(2));

    // perfectly separated data: the full-data MLE does not exist
    let data = dir.path().join("sep.csv");
    std::fs::write(&data, "x,y\n-2,0\n-1,0\n1,1\n2,1\n").unwrap();
    let o = osmac(&["fit", "--data", s(&data), "--method", "full"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
