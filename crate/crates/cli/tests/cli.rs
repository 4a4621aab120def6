use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};

fn regdiag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regdiag"))
        .args(args)
        .env("REGDIAG_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn check_regular_point_exits_zero() {
    let o = regdiag(&["check", "ce_scsc_disk", "--x", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    let pts = v["points"].as_array().unwrap();
    assert_eq!(pts.len(), 1);
    assert_eq!(pts[0]["kkt"]["active"], serde_json::json!([1]));
    assert_eq!(pts[0]["classification"]["kind"], "STRICT_LOCAL_MIN");
}

#[test]
fn check_licq_failure_exits_two() {
    let o = regdiag(&["check", "ex_mult_disc", "--x", "1"]);
    assert_eq!(code(&o), 2);
    let v = stdout_json(&o);
    assert!(v["points"].as_array().unwrap().iter().all(|p| p["report"]["licq"] == false));
}

#[test]
fn errors_exit_one() {
    assert_eq!(code(&regdiag(&["check", "ex_mult_disc", "--x", "9"])), 1);
    assert_eq!(code(&regdiag(&["check", "no_such_problem", "--x", "0"])), 1);
    assert_eq!(code(&regdiag(&["check", "ce_scsc_disk"])), 1);
    assert_eq!(code(&regdiag(&["--tol", "bogus=1", "check", "ce_scsc_disk", "--x", "2"])), 1);
    assert_eq!(code(&regdiag(&["--tol", "reg_tol=-1", "check", "ce_scsc_disk", "--x", "2"])), 1);
}

#[test]
fn help_exits_zero() {
    assert_eq!(code(&regdiag(&["--help"])), 0);
}

#[test]
fn tolerance_override_changes_the_verdict() {
    // The fold branch has SOSC modulus 2 sqrt(x) = 0.02 at x = 1e-4.
    let o = regdiag(&["check", "ex_sosc_fold", "--x", "1e-4"]);
    let v = stdout_json(&o);
    let min = v["points"]
        .as_array()
        .unwrap()
        .iter()
        .find(|p| p["classification"]["kind"] == "STRICT_LOCAL_MIN")
        .expect("the minimizer is found")
        .clone();
    assert_eq!(min["report"]["sosc"], true);
    let o = regdiag(&["--tol", "reg_tol=0.1", "check", "ex_sosc_fold", "--x", "1e-4"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn trace_writes_branch_events_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = regdiag(&["--out", out, "--seed", "5", "trace", "ce_scsc_disk", "--from", "0", "--to", "2"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));

    let events = std::fs::read_to_string(dir.path().join("events.csv")).unwrap();
    let mut lines = events.lines();
    assert_eq!(lines.next(), Some("kind,index,x_star,s_star,bracket_width"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "ACTIVATION");
    assert_eq!(row[1], "1");
    assert!((row[2].parse::<f64>().unwrap() - 1.0).abs() < 1e-6);

    let branch = std::fs::read_to_string(dir.path().join("branch.csv")).unwrap();
    assert!(branch.lines().count() > 10);

    let m = read_json(&dir.path().join("manifest.json"));
    assert_eq!(m["tool"], "regdiag");
    assert_eq!(m["subcommand"], "trace");
    assert_eq!(m["seed"], 5);
    assert_eq!(m["problem"]["source"], "ce_scsc_disk");
    assert_eq!(m["problem"]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["tolerances"]["act_tol"], 1e-8);
    assert_eq!(m["finding"], true);
    let files: Vec<&str> = m["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap()).collect();
    assert_eq!(files, ["trace.json", "branch.csv", "events.csv"]);
    let t = read_json(&dir.path().join("trace.json"));
    assert_eq!(t["termination"], "PATH_END");
}

#[test]
fn trace_reports_fold_and_kink() {
    let o = regdiag(&["trace", "ex_sosc_fold", "--from", "1", "--to", "-1"]);
    assert_eq!(code(&o), 2);
    let v = stdout_json(&o);
    assert_eq!(v["termination"], "FOLD");
    let x = v["termination_x"].as_f64().unwrap();
    assert!(x.abs() < 1e-5, "fold at {x}");

    let o = regdiag(&["trace", "ex_scsc_kink", "--from", "-1", "--to", "1"]);
    assert_eq!(code(&o), 2);
    let v = stdout_json(&o);
    let ev = &v["events"][0];
    assert_eq!(ev["kind"], "SCSC_LOSS");
    assert!(ev["x_star"].as_f64().unwrap().abs() < 1e-6);
}

#[test]
fn trace_from_explicit_point() {
    // The minimizer of the cubic at x = 1 is y = (0, 1) on the face of constraint 1.
    let o = regdiag(&[
        "trace", "ex_sosc_fold", "--from", "1", "--to", "0.5", "--start", "point", "--start-y", "0,1", "--start-set", "1",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["termination"], "PATH_END");
    let last = v["branch"]["samples"].as_array().unwrap().last().unwrap().clone();
    let y2 = last["kkt"]["y"][1].as_f64().unwrap();
    assert!((y2 - 0.5f64.sqrt()).abs() < 1e-8, "y2 = {y2}");

    let o = regdiag(&["trace", "ex_sosc_fold", "--from", "1", "--to", "0.5", "--start", "point"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn strata_screen_finds_the_corner() {
    let o = regdiag(&["strata", "ce_licq_corner", "--x", "-0.5", "--x", "0.5", "--format", "csv"]);
    assert_eq!(code(&o), 2);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("x,vertices,arcs,faces,degenerate_vertices"));
    assert_eq!(text.lines().count(), 3);

    let o = regdiag(&["strata", "ce_licq_corner", "--x", "0.25", "--x", "0.75"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout_json(&o)["screen"]["verdict"], "CONSISTENT");
}

#[test]
fn perturb_is_seeded() {
    let args = [
        "--seed", "3", "perturb", "ex_scsc_prev", "--condition", "scsc", "--trials", "3", "--grid", "101",
    ];
    let a = regdiag(&args);
    let b = regdiag(&args);
    assert_eq!(a.stdout, b.stdout);
    let v = stdout_json(&a);
    assert_eq!(v["prevalence"]["trials"], 3);
    assert_eq!(v["prevalence"]["seed"], 3);
    // The unperturbed problem fails SCSC on all of [0, 1].
    assert!(v["unperturbed"]["fraction"].as_f64().unwrap() > 0.2);
}

#[test]
fn sens_point_mode_flags_the_ambiguous_active_set() {
    let o = regdiag(&["sens", "ex_mult_disc", "--x", "1", "--format", "csv"]);
    assert_eq!(code(&o), 2);
    let o = regdiag(&["sens", "ex_mult_disc", "--x", "0.5"]);
    assert_eq!(code(&o), 0);
    let v = stdout_json(&o);
    let dy = &v["points"][0]["complementarity"]["dy_dx"];
    assert_eq!(dy[0][0].as_f64().unwrap(), 1.0);
}

#[test]
fn growth_and_corpus() {
    let o = regdiag(&["growth", "ce_scsc_disk", "--x", "2", "--samples", "400"]);
    assert_eq!(code(&o), 0);
    let c = stdout_json(&o)["minimizers"][0]["growth"]["c_hat"].as_f64().unwrap();
    assert!(c > 1.0, "c_hat {c}");

    let o = regdiag(&["corpus"]);
    assert_eq!(code(&o), 0);
    let list = String::from_utf8(o.stdout).unwrap();
    assert!(list.contains("ce_licq_corner"));
    assert!(list.contains("ex_sosc_fold"));

    // A printed corpus problem loads back as a file with the same digest.
    let dir = tempfile::tempdir().unwrap();
    let o = regdiag(&["corpus", "ex_scsc_kink"]);
    let path = dir.path().join("kink.json");
    std::fs::write(&path, &o.stdout).unwrap();
    let out = dir.path().join("run");
    let p = path.to_str().unwrap();
    let o = regdiag(&["--out", out.to_str().unwrap(), "check", p, "--x", "0.5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let file_digest = read_json(&out.join("manifest.json"))["problem"]["sha256"].clone();
    let o = regdiag(&["--out", out.to_str().unwrap(), "check", "ex_scsc_kink", "--x", "0.5"]);
    assert_eq!(code(&o), 0);
    assert_eq!(read_json(&out.join("manifest.json"))["problem"]["sha256"], file_digest);
}

#[test]
fn repro_subset_prints_table() {
    let o = regdiag(&["repro", "--only", "1,2"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines.iter().all(|l| l.starts_with("PASS criterion")));
    assert_eq!(code(&regdiag(&["repro", "--only", "99"])), 1);
}

#[test]
fn bad_thread_count_is_an_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_regdiag"))
        .args(["corpus"])
        .env("REGDIAG_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}
