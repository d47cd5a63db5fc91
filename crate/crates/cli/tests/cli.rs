use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use bmfa_core::ppc::hdi;
use bmfa_core::sampler::PosteriorSamples;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn bmfa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bmfa")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = bmfa(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_reports_counts() {
    let out = ok(&["validate", s(&fixture("si_example.toml"))]);
    assert_eq!(out.lines().next(), Some("p=12 variables, 5 data rows, 5 balance rows"));
    assert_eq!(out.lines().count(), 6);
}

#[test]
fn validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixture("si_example.toml")).unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, text.replace(r#"["4", "3"],"#, r#"["4", "3"], ["4", "A"],"#)).unwrap();
    let out = bmfa(&["validate", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("4->A"));

    std::fs::write(&bad, text.replace("units =", "unit =")).unwrap();
    let out = bmfa(&["validate", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));

    let out = bmfa(&["validate", s(&dir.path().join("missing.toml"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn prior_only_project_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixture("si_example.toml")).unwrap();
    let head = text.split("[[observations]]").next().unwrap();
    let path = dir.path().join("empty.toml");
    std::fs::write(&path, head).unwrap();
    let out = ok(&["validate", s(&path)]);
    assert!(out.starts_with("p=12 variables, 0 data rows, 5 balance rows"));
}

#[test]
fn gaussian_fit_is_fast_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    ok(&["fit-gaussian", s(&fixture("si_example.toml")), "--out", s(dir.path())]);
    assert!(start.elapsed().as_secs_f64() < 1.0);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("gaussian.json")).unwrap()).unwrap();
    assert_eq!(v["mean"].as_array().unwrap().len(), 12);
    assert_eq!(v["cov"].as_array().unwrap().len(), 12);
    assert_eq!(v["negative_mass"].as_array().unwrap().len(), 10);
}

#[test]
fn map_mode_lies_inside_sampled_hdis() {
    let dir = tempfile::tempdir().unwrap();
    let project = fixture("imbalance.toml");
    let out = s(dir.path());
    ok(&["fit-map", s(&project), "--out", out]);
    ok(&["sample", s(&project), "--out", out, "--draws", "2000"]);
    let map: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("map.json")).unwrap()).unwrap();
    let samples = PosteriorSamples::read_csv(std::fs::File::open(dir.path().join("draws.csv")).unwrap()).unwrap();
    let names: Vec<String> = serde_json::from_value(map["variables"].clone()).unwrap();
    assert_eq!(names, samples.names);
    for (v, mode) in map["mode"].as_array().unwrap().iter().enumerate() {
        let h = hdi(&samples.column(v), 0.99).unwrap();
        let m = mode.as_f64().unwrap();
        assert!(h.contains(m), "{}: mode {m} outside [{}, {}]", names[v], h.lower, h.upper);
    }
}

#[test]
fn ppc_and_rank_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let project = fixture("imbalance.toml");
    let out = s(dir.path());
    ok(&["sample", s(&project), "--out", out]);
    let stdout = ok(&["ppc", s(&project), "--out", out]);
    assert!(stdout.contains("least consistent balance: balance:Remelt"), "{stdout}");
    let ppc = std::fs::read_to_string(dir.path().join("ppc.csv")).unwrap();
    assert!(ppc.starts_with("row,label,observed,hdi_lo,hdi_hi,pvalue,extreme\n"));
    assert_eq!(ppc.lines().count(), 8);

    ok(&["rank", s(&project), "--out", out]);
    let mut rdr = csv::Reader::from_path(dir.path().join("rank.csv")).unwrap();
    let widths: Vec<f64> = rdr.records().map(|r| r.unwrap()[2].parse().unwrap()).collect();
    assert_eq!(widths.len(), 5);
    assert!(widths.windows(2).all(|w| w[0] > w[1]));
}

#[test]
fn ppc_without_draws_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = bmfa(&["ppc", s(&fixture("imbalance.toml")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bmfa sample"));
}

#[test]
fn bad_sampler_flag_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bmfa(&[
        "sample",
        s(&fixture("imbalance.toml")),
        "--out",
        s(dir.path()),
        "--target-accept",
        "1.5",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bound_on_zinc_like_study() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["bound", s(&fixture("zinc_like.toml")), "--out", s(dir.path())]);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("bound.json")).unwrap()).unwrap();
    assert!(v["bound_value"].as_f64().unwrap() > 0.0);
    assert_eq!(v["eigenvalues"].as_array().unwrap().len(), 20);
}
