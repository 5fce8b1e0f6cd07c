use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fuselabel(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fuselabel"));
    cmd.args(args).env("RUST_LOG", "warn");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn dataset(dir: &Path) -> String {
    let data = dir.join("data");
    let printed = ok(fuselabel(&["fixture", "--out", data.to_str().unwrap()], &[]));
    printed.trim().to_string()
}

#[test]
fn stages_report_missing_prerequisites() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let out = dir.path().join("out");
    for stage in ["verify", "map", "navigate", "parts", "eval"] {
        let res = fuselabel(&[stage, "--manifest", &manifest, "--out", out.to_str().unwrap()], &[]);
        assert!(!res.status.success(), "{stage} ran without inputs");
        let err = String::from_utf8_lossy(&res.stderr);
        assert!(
            err.contains("missing") && err.contains(out.to_str().unwrap()),
            "{stage}: {err}"
        );
    }
    let res = fuselabel(
        &["fuse", "--manifest", "nowhere.json", "--out", out.to_str().unwrap()],
        &[],
    );
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("nowhere.json"));
}

#[test]
fn staged_run_with_env_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let out = dir.path().join("out");
    let env = [
        ("FUSELABEL_MANIFEST", manifest.as_str()),
        ("FUSELABEL_OUT", out.to_str().unwrap()),
        ("FUSELABEL_WORKERS", "2"),
    ];
    ok(fuselabel(&["fuse"], &env));
    ok(fuselabel(&["verify"], &env));
    let table = ok(fuselabel(&["eval"], &env));
    assert!(table.contains("mIoU"), "{table}");
    ok(fuselabel(&["map", "--resolution", "0.1"], &env));
    let maps = out.join("maps").join("living");
    let georef: Value = serde_json::from_slice(&std::fs::read(maps.join("semantic.json")).unwrap()).unwrap();
    assert_eq!(georef["resolution"], 0.1);

    ok(fuselabel(
        &["navigate", "--seeds", "4,9", "--episodes-per-scene", "2"],
        &env,
    ));
    let summary: Value = serde_json::from_slice(&std::fs::read(out.join("nav").join("summary.json")).unwrap()).unwrap();
    let seeds: Vec<u64> = summary["runs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["seed"].as_u64().unwrap())
        .collect();
    assert_eq!(seeds, [4, 9]);
    let csv = std::fs::read_to_string(out.join("nav").join("episodes.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 2);

    let res = fuselabel(&["parts", "--cluster", "0"], &env);
    assert!(!res.status.success(), "--cluster without --part must be rejected");
    ok(fuselabel(
        &["parts", "--k", "2", "--cluster", "1", "--part", "handle"],
        &env,
    ));
    let index: Value =
        serde_json::from_slice(&std::fs::read(out.join("parts").join("kitchen").join("clusters.json")).unwrap())
            .unwrap();
    assert_eq!(index["selection"]["part"], "handle");
    assert!(out
        .join("parts")
        .join("kitchen")
        .join("parts")
        .join("parts.json")
        .exists());
    assert!(out.join("logs").join("parts.jsonl").exists());
}

#[test]
fn invalid_values_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let out = dir.path().join("out");
    let base = ["--manifest", manifest.as_str(), "--out", out.to_str().unwrap()];
    ok(fuselabel(&[&["fuse"][..], &base].concat(), &[]));
    for bad in [
        &["map", "--resolution", "0"][..],
        &["map", "--z-min", "2", "--z-max", "1"],
        &["navigate", "--goal-source", "guess"],
        &["navigate", "--seeds", "1,x"],
    ] {
        let res = fuselabel(&[bad, &base].concat(), &[]);
        assert!(!res.status.success(), "{bad:?} accepted");
    }
}
