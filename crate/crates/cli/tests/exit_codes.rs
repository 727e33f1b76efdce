use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hyflow(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hyflow"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn malformed_config_reports_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(
        &cfg,
        "{\n  \"problem\": {\"kind\": \"lmse\", \"m\": 50, \"n\": 5},\n  \"t_end\": oops\n}\n",
    )
    .unwrap();
    let o = hyflow(&["compare"], Some(&cfg), tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn unknown_method_field_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(
        &cfg,
        r#"{"problem": {"kind": "lmse", "m": 20, "n": 3}, "methods": [{"method": "gd", "step": 0.1}]}"#,
    )
    .unwrap();
    let o = hyflow(&["baseline"], Some(&cfg), tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn infeasible_rate_exits_3_and_names_condition() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("infeasible.json");
    fs::write(
        &cfg,
        r#"{
  "problem": {"kind": "lmse", "m": 50, "n": 5, "seed": 53,
              "constants": {"l_f": 136.9832, "mu_f": 3.6878}},
  "methods": [{"name": "fast", "method": "structure_i",
               "alpha": 5.0, "beta": 0.1356, "u_lo": -14.352, "u_hi": 15.1511}]
}"#,
    )
    .unwrap();
    for sub in ["validate", "simulate"] {
        let o = hyflow(&[sub], Some(&cfg), &tmp.path().join("out"));
        assert_eq!(o.status.code(), Some(3));
        let err = stderr(&o);
        assert!(
            err.contains("fast") && err.contains("damping-rate"),
            "{err}"
        );
    }
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn empty_method_list_writes_only_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("empty.json");
    fs::write(
        &cfg,
        r#"{"problem": {"kind": "lmse", "m": 20, "n": 3}, "methods": []}"#,
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = hyflow(&["compare", "--quiet"], Some(&cfg), &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let files: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(files, ["summary.json"]);
}

#[test]
fn bundled_config_validates() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hyflow(&["zeno"], None, tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(
        text.contains("structure_i: feasible, inter-jump bound 1.058544e-3"),
        "{text}"
    );
    assert!(
        text.contains("structure_ii: feasible, inter-jump bound 5.629116e-5"),
        "{text}"
    );
}
