use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lambda-switch"));
    c.env("RUST_LOG", "warn");
    c
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn every_reference_config_validates() {
    for name in [
        "table1.cfg",
        "relay.cfg",
        "empty-cavity.cfg",
        "fig6-sweep.cfg",
    ] {
        let o = run(&["validate", config(name).to_str().unwrap()]);
        assert!(o.status.success(), "{name}: {}", stderr(&o));
    }
}

#[test]
fn validate_echoes_resolved_parameters() {
    let o = run(&["validate", config("table1.cfg").to_str().unwrap()]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.lines().any(|l| l == "g_b = 10.0"), "{out}");
    assert!(out.lines().any(|l| l == "gamma_b = 1.0"), "{out}");
}

#[test]
fn mirror_fractions_over_one_are_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.cfg",
        "scenario = \"steady\"\noutput = \"x\"\n[params]\nkappa_b_in_frac = 0.7\nkappa_b_out_frac = 0.7\n",
    );
    let o = run(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(err["error"], "config");
    assert!(
        err["message"]
            .as_str()
            .unwrap()
            .contains("mirror fractions"),
        "{err}"
    );
}

#[test]
fn dark_band_start_warns_but_validates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "dark.cfg",
        "scenario = \"optimize\"\noutput = \"x\"\n[params]\ntheta_a = -11.5916\n\
         [optimize]\nfree = [\"theta_a\", \"delta_cap\"]\n",
    );
    let o = run(&["validate", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("dark-state band"), "{}", stderr(&o));
}

#[test]
fn typos_are_reported_with_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "typo.cfg",
        "scenario = \"steady\"\noutput = \"x\"\n\n[params]\nkapa_b = 2.0\n",
    );
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("kapa_b") && msg.contains("line 5"), "{msg}");
}

#[test]
fn missing_scenario_block_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "relay.cfg",
        "scenario = \"relay\"\noutput = \"x\"\n",
    );
    let o = run(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("[relay]"));
}

#[test]
fn scenarios_are_listed() {
    let o = run(&["scenarios"]);
    assert!(o.status.success());
    let names: Vec<String> = stdout(&o)
        .lines()
        .map(|l| l.split_whitespace().next().unwrap().to_string())
        .collect();
    assert_eq!(
        names,
        [
            "steady",
            "scan",
            "evolve",
            "mc",
            "switch-times",
            "relay",
            "optimize",
            "sweep"
        ]
    );
}

const SMALL_EVOLVE: &str = r#"
scenario = "evolve"
seed = 7
output = "unused"
fock-convergence-check = false

[params]
n_a = 2
n_b = 3

[evolve]
points = 11
initial = "g00"
schedule = [
  { start = 0.0, end = 5.0, a_on = true },
  { start = 5.0, end = 10.0 },
]

[mc]
trajectories = 20
t_end = 10.0
points = 11
initial = "h-coherent"
a_on = true
compare_master_equation = true
"#;

fn strip_wall_time(text: &str) -> String {
    text.lines()
        .filter(|l| !l.contains("\"wall_time_s\""))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.cfg", SMALL_EVOLVE);
    for scenario in ["evolve", "mc"] {
        let mut outputs = Vec::new();
        for k in 0..2 {
            // same file names in separate directories
            let prefix = dir.path().join(format!("run{k}")).join(scenario);
            let o = run(&[
                "run",
                cfg.to_str().unwrap(),
                "--scenario",
                scenario,
                "--out",
                prefix.to_str().unwrap(),
            ]);
            assert!(o.status.success(), "{}", stderr(&o));
            let mut files: Vec<String> = Vec::new();
            for line in stdout(&o).lines() {
                let text = std::fs::read_to_string(line).unwrap();
                files.push(if line.ends_with(".json") {
                    strip_wall_time(&text)
                } else {
                    text
                });
            }
            outputs.push(files);
        }
        assert!(!outputs[0].is_empty());
        assert_eq!(
            outputs[0], outputs[1],
            "{scenario} outputs differ between runs"
        );
    }
}

#[test]
fn seed_changes_the_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.cfg", SMALL_EVOLVE);
    let mut jumps = Vec::new();
    for seed in ["1", "2"] {
        let prefix = dir.path().join(format!("s{seed}"));
        let o = run(&[
            "run",
            cfg.to_str().unwrap(),
            "--scenario",
            "mc",
            "--seed",
            seed,
            "--trajectories",
            "5",
            "--out",
            prefix.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        jumps.push(std::fs::read_to_string(format!("{}_mc_jumps.csv", prefix.display())).unwrap());
        let summary: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(format!("{}.json", prefix.display())).unwrap(),
        )
        .unwrap();
        assert_eq!(summary["metrics"]["trajectories"], 5);
        assert_eq!(summary["seed"], seed.parse::<u64>().unwrap());
    }
    assert_ne!(jumps[0], jumps[1]);
}

#[test]
fn csv_series_carry_the_schema_line_and_named_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.cfg", SMALL_EVOLVE);
    let prefix = dir.path().join("ev");
    let o = run(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        prefix.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(format!("{}_evolve.csv", prefix.display())).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# schema=1"));
    assert_eq!(
        lines.next(),
        Some("t_gamma_b,n_a_over_n_a0,n_b_over_n_b0,pop_G,pop_H,pop_E")
    );
    assert_eq!(lines.count(), 11);

    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(format!("{}.json", prefix.display())).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["schema"], 1);
    assert_eq!(summary["params"]["n_b"], 3);
    assert_eq!(summary["params"]["g_b"], 10.0);
    assert_eq!(summary["convergence_gate"]["enabled"], false);
    assert!(summary["wall_time_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn unconverged_cutoffs_exit_with_the_gate_code_and_still_write() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "tiny.cfg",
        "scenario = \"steady\"\noutput = \"unused\"\n[params]\nn_a = 1\nn_b = 2\n",
    );
    let prefix = dir.path().join("tiny");
    let o = run(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        prefix.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let err: serde_json::Value =
        serde_json::from_str(stderr(&o).trim().lines().last().unwrap()).unwrap();
    assert_eq!(err["error"], "convergence-gate");
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(format!("{}.json", prefix.display())).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["convergence_gate"]["passed"], false);
    assert_eq!(
        summary["convergence_gate"]["refined_cutoffs"],
        serde_json::json!([3, 4])
    );
}

#[test]
fn cutoff_flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.cfg", SMALL_EVOLVE);
    let o = run(&["run", cfg.to_str().unwrap(), "--fock-na", "1", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2), "clap rejects a lone cutoff flag");
    let prefix = dir.path().join("c");
    let o = run(&[
        "run",
        cfg.to_str().unwrap(),
        "--fock-na",
        "1",
        "--fock-nb",
        "2",
        "--out",
        prefix.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(format!("{}.json", prefix.display())).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["params"]["n_a"], 1);
    assert_eq!(summary["params"]["n_b"], 2);
}

#[test]
fn solver_errors_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    // no b-drive: the off and on photon numbers coincide and there is nothing to time
    let cfg = write(
        dir.path(),
        "flat.cfg",
        "scenario = \"switch-times\"\noutput = \"unused\"\nfock-convergence-check = false\n\
         [params]\neps_b = 0.0\nn_a = 1\nn_b = 2\n",
    );
    let o = run(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("f").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let err: serde_json::Value =
        serde_json::from_str(stderr(&o).trim().lines().last().unwrap()).unwrap();
    assert_eq!(err["error"], "solver");
    assert_eq!(err["scenario"], "switch-times");
}
