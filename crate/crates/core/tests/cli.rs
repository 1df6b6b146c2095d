use std::path::Path;
use std::process::{Command, Output};

fn bitscale(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bitscale")).args(args).output().unwrap()
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name).display().to_string()
}

#[test]
fn quantize_worked_example_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("q");
    let o = bitscale(&["run", &config("quantize.json"), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let params: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("params.json")).unwrap()).unwrap();
    let p = &params[0];
    assert!((p["s"].as_f64().unwrap() - 4.0 / 3.0).abs() < 1e-15, "{params}");
    assert_eq!(p["z"], 1);
    let values = std::fs::read_to_string(out.join("values.csv")).unwrap();
    let codes: Vec<&str> = values.lines().skip(1).map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(codes, ["0", "1", "3"], "{values}");

    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    for f in m["files"].as_array().unwrap() {
        let bytes = std::fs::read(out.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"].as_u64().unwrap() as usize, bytes.len());
        assert_eq!(f["sha256"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn invalid_config_exits_1_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(
        &cfg,
        r#"{"seed":0,"experiment":{"kind":"quantize","tensor":{"values":[[1.0]]},"spec":{"bits":2,"scheme":"integer","granularity":"per_tensor","bogus":1}}}"#,
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = bitscale(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("experiment.spec"), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());

    std::fs::write(&cfg, r#"{"seed":0,"experiment":{"kind":"nope"}}"#).unwrap();
    assert_eq!(bitscale(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(bitscale(&["run", "/nonexistent/config.json"]).status.code(), Some(1));
}

#[test]
fn unwritable_output_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let out = blocker.join("sub");
    let o = bitscale(&["run", &config("quantize.json"), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_merges_record_files() {
    let tmp = tempfile::tempdir().unwrap();
    let recs = tmp.path().join("r.jsonl");
    let mut lines = String::new();
    for (label, bits, q) in [("a", 16, 0.0), ("b", 4, 0.3)] {
        for (i, n) in [1e6f64, 4e6, 16e6, 64e6].into_iter().enumerate() {
            let quality = 3.0 * n.powf(-0.3) + 1.0 + q + i as f64 * 1e-9;
            lines.push_str(&format!(
                "{{\"label\":\"{label}\",\"n_params\":{},\"w_bits\":{bits},\"a_bits\":16,\"quality\":{quality}}}\n\n",
                n as u64
            ));
        }
    }
    std::fs::write(&recs, lines).unwrap();
    let out = tmp.path().join("rep");
    let o = bitscale(&["report", recs.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["records.jsonl", "fits.csv", "verdicts.csv", "frontier_mt.csv", "frontier_ct.csv", "scaling.svg", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let empty = tmp.path().join("empty.jsonl");
    std::fs::write(&empty, "\n").unwrap();
    assert_eq!(bitscale(&["report", empty.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn selftest_and_schema() {
    let o = bitscale(&["selftest", "--seed", "3"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).lines().all(|l| l.starts_with("PASS")));
    let o = bitscale(&["schema"]);
    let schema: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(schema.is_object());
}

#[test]
fn zero_jobs_is_rejected() {
    assert_eq!(bitscale(&["--jobs", "0", "schema"]).status.code(), Some(1));
}
