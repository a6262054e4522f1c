use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn koopcert(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_koopcert"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn data_rows(p: &Path) -> usize {
    fs::read_to_string(p).unwrap().lines().skip(1).filter(|l| !l.is_empty()).count()
}

#[test]
fn collect_writes_one_file_per_input() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&koopcert(tmp.path(), &["collect", "--preset", "cooked_up"]));
    let dir = tmp.path().join("cooked_up");
    assert_eq!(data_rows(&dir.join("samples_u0.csv")), 5000);
    assert_eq!(data_rows(&dir.join("samples_u1.csv")), 5000);
    assert!(!dir.join("samples_u2.csv").exists());
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest_collect.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "collect");
    assert_eq!(m["config"]["name"], "cooked_up");
    assert_eq!(m["outputs"].as_array().unwrap().len(), 3);
}

#[test]
fn single_sample_smoke_run() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&koopcert(tmp.path(), &["collect", "--preset", "cooked_up", "--d", "1"]));
    let dir = tmp.path().join("cooked_up");
    assert_eq!(data_rows(&dir.join("samples_u0.csv")), 1);
    // One sample cannot determine the surrogate; the fit still succeeds with a warning.
    ok(&koopcert(tmp.path(), &["fit", "--preset", "cooked_up", "--d", "1"]));
    let report = fs::read_to_string(dir.join("fit_report.json")).unwrap();
    assert!(report.contains("rank"));
    ok(&koopcert(tmp.path(), &["d0", "--preset", "cooked_up"]));
    assert!(dir.join("d0.json").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for out in [a.path(), b.path()] {
        ok(&koopcert(out, &["collect", "--preset", "cooked_up", "--d", "400"]));
        ok(&koopcert(out, &["fit", "--preset", "cooked_up", "--d", "400"]));
    }
    for f in ["samples_u0.csv", "samples_u1.csv", "samples_meta.json", "surrogate.json", "fit_report.json"] {
        let x = fs::read(a.path().join("cooked_up").join(f)).unwrap();
        let y = fs::read(b.path().join("cooked_up").join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
}

#[test]
fn manifest_hashes_match_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&koopcert(tmp.path(), &["collect", "--preset", "cooked_up", "--d", "200"]));
    ok(&koopcert(tmp.path(), &["fit", "--preset", "cooked_up", "--d", "200"]));
    let dir = tmp.path().join("cooked_up");
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest_fit.json")).unwrap()).unwrap();
    let inputs = m["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 3);
    for i in inputs {
        let h = i["sha256"].as_str().unwrap();
        assert_eq!(h.len(), 64);
        assert!(h.chars().all(|c| c.is_ascii_hexdigit()));
    }
    let h0 = inputs.iter().map(|i| i["sha256"].as_str().unwrap()).collect::<Vec<_>>();
    assert!(h0[1] != h0[2]);
}

#[test]
fn full_pipeline_and_infeasible_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let p = ["--preset", "cooked_up"];
    for cmd in ["collect", "fit", "design"] {
        ok(&koopcert(tmp.path(), &[&[cmd][..], &p[..]].concat()));
    }
    ok(&koopcert(tmp.path(), &["verify", "--preset", "cooked_up", "--starts", "3"]));
    let dir = tmp.path().join("cooked_up");
    for f in ["design.json", "region.json", "solve_report.json", "design_checks.json", "roa.dat", "verify_summary.json"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("verify_summary.json")).unwrap()).unwrap();
    assert_eq!(v["converged"], 3);

    let o = koopcert(tmp.path(), &["design", "--preset", "cooked_up", "--c-r", "10"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bad_input_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(koopcert(tmp.path(), &["fit", "--preset", "no_such_preset"]).status.code(), Some(4));
    // fit before collect
    assert_eq!(koopcert(tmp.path(), &["design", "--preset", "cooked_up"]).status.code(), Some(4));
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, "{\"name\": 3}").unwrap();
    assert_eq!(koopcert(tmp.path(), &["collect", "--config", cfg.to_str().unwrap()]).status.code(), Some(4));
}

#[test]
fn config_file_round_trips_through_presets() {
    let tmp = tempfile::tempdir().unwrap();
    let o = koopcert(tmp.path(), &["config", "cooked_up"]);
    ok(&o);
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, &o.stdout).unwrap();
    ok(&koopcert(tmp.path(), &["collect", "--config", cfg.to_str().unwrap(), "--d", "10", "--seed", "9"]));
    let meta = fs::read_to_string(tmp.path().join("cooked_up/samples_meta.json")).unwrap();
    assert!(meta.contains("\"seed\": 9"));
}

#[test]
fn reproduce_fig1() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&koopcert(tmp.path(), &["reproduce", "fig1"]));
    let dir = tmp.path().join("figures/fig1");
    assert!(dir.join("manifest.json").exists());
    let n = fs::read_dir(&dir).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "dat")).count();
    assert!(n >= 3);
    assert_eq!(koopcert(tmp.path(), &["reproduce", "fig9"]).status.code(), Some(4));
}
