//! Acceptance suite: runs the reference configurations through the CLI
//! binary, checks the library-level oracles, and prints one PASS/FAIL line
//! per criterion. Exits non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use lambda_switch::dynamics::{
    evolve_with, liouvillian, steady_state_in_sector, EvolveOptions, MasterEquation, Schedule,
    Segment, SteadyStateOptions,
};
use lambda_switch::model::{
    collapse_operators, dark_state, hamiltonian, DriveState, SwitchOperators, SwitchParams,
};
use lambda_switch::operator::{
    coherent_state, DensityMatrix, Level, Operator, SpaceLayout, StateVector,
};
use lambda_switch::C64;
use lambda_switch_cli::{Overrides, ScenarioConfig};
use serde_json::Value;

type Check = Result<String, String>;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

struct Runner {
    dir: tempfile::TempDir,
}

struct RunOutput {
    code: Option<i32>,
    summary: Value,
    prefix: PathBuf,
    tag: String,
}

impl Runner {
    fn run(&self, config: &str, tag: &str, extra: &[&str]) -> Result<RunOutput, String> {
        let prefix = self.dir.path().join(tag);
        let started = Instant::now();
        let out = Command::new(env!("CARGO_BIN_EXE_lambda-switch"))
            .arg("run")
            .arg(configs().join(config))
            .args(["--out", prefix.to_str().unwrap()])
            .args(extra)
            .output()
            .map_err(|e| e.to_string())?;
        eprintln!(
            "  ran {config} {extra:?} in {:.0} s",
            started.elapsed().as_secs_f64()
        );
        let json = std::fs::read_to_string(format!("{}.json", prefix.display())).map_err(|_| {
            format!(
                "{config}: no summary; stderr: {}",
                String::from_utf8_lossy(&out.stderr)
            )
        })?;
        let summary = serde_json::from_str(&json).map_err(|e| e.to_string())?;
        Ok(RunOutput {
            code: out.status.code(),
            summary,
            prefix,
            tag: tag.to_string(),
        })
    }
}

impl RunOutput {
    fn metric(&self, key: &str) -> Result<f64, String> {
        self.summary["metrics"][key]
            .as_f64()
            .ok_or_else(|| format!("metric {key} missing"))
    }

    fn gate_passed(&self) -> Result<(), String> {
        if self.summary["convergence_gate"]["passed"] == Value::Bool(true) && self.code == Some(0) {
            Ok(())
        } else {
            Err(format!(
                "convergence gate: {} (exit {:?})",
                self.summary["convergence_gate"]["checks"], self.code
            ))
        }
    }

    /// Every output file, with the wall-time line removed from the summary.
    fn artifacts(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let json =
            std::fs::read_to_string(format!("{}.json", self.prefix.display())).unwrap_or_default();
        let json: String = json
            .lines()
            .filter(|l| !l.contains("\"wall_time_s\""))
            .collect::<Vec<_>>()
            .join("\n");
        out.push(("summary".to_string(), json));
        for f in self.summary["files"].as_array().into_iter().flatten() {
            let name = f.as_str().unwrap_or_default();
            let path = self.prefix.parent().unwrap().join(name);
            out.push((
                name.to_string(),
                std::fs::read_to_string(path).unwrap_or_default(),
            ));
        }
        out
    }
}

fn within(name: &str, value: f64, target: f64, tol: f64) -> Result<String, String> {
    if (value - target).abs() <= tol {
        Ok(format!("{name} = {value:.6}"))
    } else {
        Err(format!("{name} = {value:.6}, expected {target} +- {tol}"))
    }
}

fn ensure(cond: bool, msg: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg)
    }
}

fn resolved(config: &str) -> SwitchParams {
    ScenarioConfig::load(&configs().join(config))
        .and_then(|c| c.resolve(&Overrides::default()))
        .expect("reference config resolves")
        .params
}

fn c_ops(p: &SwitchParams) -> Vec<Operator> {
    collapse_operators(p, true)
        .unwrap()
        .into_iter()
        .map(|c| c.op)
        .collect()
}

/// Basis states with the emitter in one of `levels` and no a-photons.
fn sector(p: &SwitchParams, levels: &[Level]) -> Vec<usize> {
    let layout = p.layout().unwrap();
    (0..layout.total())
        .filter(|&k| {
            let f = layout.factors(k);
            f[1] == 0 && levels.iter().any(|l| l.index() == f[0])
        })
        .collect()
}

fn quiet(n_a: usize, n_b: usize) -> SwitchParams {
    SwitchParams {
        g_a: 0.0,
        g_b: 0.0,
        theta_a: 0.0,
        theta_b: 0.0,
        delta_cap: 0.0,
        delta_small: 0.0,
        n_a,
        n_b,
        ..SwitchParams::table1()
    }
}

fn criterion_1(r: &Runner) -> Check {
    let out = r.run("table1.cfg", "c1", &["--scenario", "steady"])?;
    out.gate_passed()?;
    let n = out.summary["params"]["n_b"]
        .as_u64()
        .unwrap_or(0)
        .min(out.summary["params"]["n_a"].as_u64().unwrap_or(0));
    ensure(n >= 5, format!("cutoffs below 5 ({n})"))?;
    let at = out.metric("D_at_configured_theta_a")?;
    let best = out.metric("D")?;
    let a = within("D(theta_a = -0.0915)", at, 0.908, 0.005)?;
    let b = within("max D", best, at, 0.005)?;
    Ok(format!(
        "{a}, {b} at theta_a* = {:.4}",
        out.metric("theta_a_star")?
    ))
}

fn criteria_2_and_8(r: &Runner) -> (Check, Check, Option<RunOutput>) {
    let out = match r.run("table1.cfg", "c2", &[]) {
        Ok(o) => o,
        Err(e) => return (Err(e.clone()), Err(e), None),
    };
    let c2 = (|| {
        out.gate_passed()?;
        let on = within("T_on", out.metric("T_on")?, 220.0, 0.05 * 220.0)?;
        let off = within("T_off", out.metric("T_off")?, 2390.0, 0.05 * 2390.0)?;
        Ok(format!("{on}, {off}"))
    })();
    let c8 = (|| {
        out.gate_passed()?;
        let d = out.metric("D")?;
        let ratio = out.metric("rate_ratio")?;
        within("|D - T_off/(T_on+T_off)|", (d - ratio).abs(), 0.0, 0.02)
    })();
    (c2, c8, Some(out))
}

fn criterion_3(r: &Runner) -> (Check, Option<RunOutput>) {
    let oracle = (|| {
        let p = quiet(1, 12);
        let h = hamiltonian(&p, DriveState::OFF, 0.0).map_err(|e| e.to_string())?;
        let rho = steady_state_in_sector(&h, &c_ops(&p), &sector(&p, &[Level::G]))
            .map_err(|e| e.to_string())?;
        let b = SwitchOperators::for_params(&p).unwrap().b;
        let alpha = p.eps_b / p.kappa_b;
        let got = rho.expectation(&b).map_err(|e| e.to_string())?;
        ensure(
            (got - C64::new(alpha, 0.0)).norm() <= 1e-8,
            format!("<b> = {got}, expected {alpha}"),
        )?;
        let psi = StateVector::product(&[
            StateVector::basis(&SpaceLayout::single(3).unwrap(), &[Level::G.index()]).unwrap(),
            StateVector::basis(&SpaceLayout::single(1).unwrap(), &[0]).unwrap(),
            coherent_state(12, C64::new(alpha, 0.0)).unwrap(),
        ])
        .unwrap();
        let fidelity = rho.fidelity_pure(&psi).map_err(|e| e.to_string())?;
        ensure(
            fidelity >= 1.0 - 1e-8,
            format!("coherent-state fidelity {fidelity}"),
        )?;
        Ok(format!(
            "|<b> - E_b/kappa_b| = {:.1e}, |1 - fidelity| = {:.1e}",
            (got - alpha).norm(),
            (1.0 - fidelity).abs()
        ))
    })();
    let run = r.run("empty-cavity.cfg", "c3", &[]);
    let check = oracle.and_then(|msg| {
        let out = run.as_ref().map_err(|e| e.clone())?;
        out.gate_passed()?;
        let on = within(
            "b_photons (a-drive on)",
            out.metric("b_photons_on")?,
            0.1,
            1e-6,
        )?;
        let off = within(
            "b_photons (a-drive off)",
            out.metric("b_photons_off")?,
            0.1,
            1e-6,
        )?;
        Ok(format!("{msg}; {on}, {off}"))
    });
    (check, run.ok())
}

fn criterion_4() -> Check {
    let p = SwitchParams {
        g_b: 10.0,
        gamma_a: 0.0,
        eps_a: 0.0,
        eps_b: 0.001f64.sqrt(),
        ..quiet(1, 4)
    };
    let cooperativity = p.g_b * p.g_b / (2.0 * p.kappa_b * p.gamma_b);
    let h = hamiltonian(&p, DriveState::OFF, 0.0).map_err(|e| e.to_string())?;
    let rho = steady_state_in_sector(&h, &c_ops(&p), &sector(&p, &[Level::G, Level::E]))
        .map_err(|e| e.to_string())?;
    let b = SwitchOperators::for_params(&p).unwrap().b;
    let got = rho.expectation(&b).map_err(|e| e.to_string())?.norm();
    let expected = p.eps_b / (p.kappa_b * (1.0 + 2.0 * cooperativity));
    let rel = (got / expected - 1.0).abs();
    ensure(rel <= 0.05, format!("|<b>| = {got:.4e} vs {expected:.4e}"))?;
    Ok(format!(
        "C_b = {cooperativity}, |<b>| = {got:.4e}, weak-drive value {expected:.4e} ({:.2}% off)",
        100.0 * rel
    ))
}

fn criterion_5() -> Check {
    let mut p = SwitchParams::table1().with_cutoffs(6, 10);
    p.theta_a = -p.delta_small;
    let psi = dark_state(&p).map_err(|e| e.to_string())?;
    let mut system = MasterEquation::new(&p).map_err(|e| e.to_string())?;
    let l = system
        .liouvillian(DriveState::A_ON)
        .map_err(|e| e.to_string())?;
    let residual = l.apply(DensityMatrix::from_pure(&psi).matrix()).norm();
    ensure(
        residual <= 1e-6,
        format!("||L vec(psi psi^dagger)|| = {residual:.3e}"),
    )?;
    let report = system
        .steady_state(DriveState::A_ON, &SteadyStateOptions::default())
        .map_err(|e| e.to_string())?;
    let fidelity = report.rho.fidelity_pure(&psi).map_err(|e| e.to_string())?;
    ensure(
        fidelity >= 0.999,
        format!("steady-state fidelity {fidelity}"),
    )?;
    Ok(format!("residual {residual:.1e}, fidelity {fidelity:.6}"))
}

fn criterion_6(r: &Runner) -> Check {
    let out = r.run(
        "table1.cfg",
        "c6",
        &["--scenario", "mc", "--trajectories", "200"],
    )?;
    out.gate_passed()?;
    let cmp = &out.summary["metrics"]["master_equation_comparison"];
    let mut parts = Vec::new();
    for obs in ["pop_G", "n_b_over_n_b0"] {
        let outside = cmp[obs]["points_outside_3_std_err"]
            .as_u64()
            .ok_or("comparison missing")?;
        let worst = cmp[obs]["max_deviation_in_std_err"]
            .as_f64()
            .unwrap_or(f64::INFINITY);
        ensure(
            outside == 0,
            format!("{obs}: {outside} grid points outside 3 standard errors"),
        )?;
        parts.push(format!("{obs} max {worst:.2} SE"));
    }
    let rows = std::fs::read_to_string(format!("{}_mc.csv", out.prefix.display()))
        .map_err(|e| e.to_string())?;
    let n = rows.lines().count() - 2;
    ensure(n == 100, format!("grid has {n} points"))?;
    Ok(format!(
        "200 trajectories, 100 points: {}",
        parts.join(", ")
    ))
}

fn criterion_7(r: &Runner) -> (Check, Option<RunOutput>) {
    let out = match r.run("relay.cfg", "c7", &[]) {
        Ok(o) => o,
        Err(e) => return (Err(e), None),
    };
    let check = (|| {
        out.gate_passed()?;
        let g = out.metric("pop_G_after_a_drive")?;
        let h = out.metric("pop_H_after_c_field")?;
        let drift = out.metric("pop_H_drift_while_idle")?;
        ensure(g >= 0.9, format!("pop_G after the a-drive phase {g}"))?;
        ensure(h >= 0.9, format!("pop_H after the c-field phase {h}"))?;
        ensure(drift.abs() <= 1e-3, format!("pop_H drift {drift:e}"))?;
        // the same value read back from the series
        let csv = std::fs::read_to_string(format!("{}_relay.csv", out.prefix.display()))
            .map_err(|e| e.to_string())?;
        let mut lines = csv.lines().skip(1);
        let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
        let col = header
            .iter()
            .position(|&c| c == "pop_H")
            .ok_or("no pop_H column")?;
        let row = lines
            .map(|l| {
                l.split(',')
                    .map(|v| v.parse::<f64>().unwrap_or(f64::NAN))
                    .collect::<Vec<_>>()
            })
            .find(|r| r[0] == 4000.0)
            .ok_or("no row at t = 4000")?;
        ensure(row[col] >= 0.9, format!("CSV pop_H(4000) = {}", row[col]))?;
        Ok(format!(
            "pop_G(2000) = {g:.4}, pop_H(4000) = {h:.4}, idle drift {drift:.1e}"
        ))
    })();
    (check, Some(out))
}

fn criterion_9(r: &Runner) -> (Check, Option<RunOutput>) {
    let out = match r.run("fig6-sweep.cfg", "c9", &[]) {
        Ok(o) => o,
        Err(e) => return (Err(e), None),
    };
    let check = (|| {
        out.gate_passed()?;
        let sweeps = out.summary["metrics"]["sweeps"]
            .as_array()
            .ok_or("no sweeps")?;
        let series = |param: &str| -> Result<Vec<(f64, f64)>, String> {
            let s = sweeps
                .iter()
                .find(|s| s["parameter"] == param)
                .ok_or(format!("no {param} sweep"))?;
            s["points"]
                .as_array()
                .unwrap()
                .iter()
                .map(|p| match (p["value"].as_f64(), p["D"].as_f64()) {
                    (Some(v), Some(d)) => Ok((v, d)),
                    _ => Err(format!("{param} sweep point failed: {p}")),
                })
                .collect()
        };
        let gb = series("g_b")?;
        ensure(
            gb.iter().map(|p| p.0).collect::<Vec<_>>() == [5.0, 10.0, 20.0],
            "g_b grid".into(),
        )?;
        ensure(
            gb.windows(2).all(|w| w[1].1 > w[0].1),
            format!("D along g_b: {gb:?}"),
        )?;
        let kappa = series("kappa")?;
        ensure(
            kappa.len() == 2 && kappa[1].1 < kappa[0].1,
            format!("D along kappa: {kappa:?}"),
        )?;
        let fmt = |v: &[(f64, f64)]| {
            v.iter()
                .map(|(x, d)| format!("{x}:{d:.4}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        Ok(format!("D(g_b) {}; D(kappa) {}", fmt(&gb), fmt(&kappa)))
    })();
    (check, Some(out))
}

fn trace_and_state_invariants(p: &SwitchParams) -> Result<String, String> {
    let mut defect: f64 = 0.0;
    for drives in [DriveState::OFF, DriveState::A_ON, DriveState::C_ON] {
        let h = hamiltonian(p, drives, 0.7).map_err(|e| e.to_string())?;
        let l = liouvillian(&h, &c_ops(p)).map_err(|e| e.to_string())?;
        defect = defect.max(l.trace_defect());
    }
    ensure(
        defect <= 1e-10,
        format!("<<I|L has an entry of size {defect:.2e}"),
    )?;

    let layout = p.layout().map_err(|e| e.to_string())?;
    let rho0 =
        DensityMatrix::from_pure(&StateVector::basis(&layout, &[Level::H.index(), 0, 0]).unwrap());
    let segments = [DriveState::A_ON, DriveState::C_ON, DriveState::OFF]
        .iter()
        .enumerate()
        .map(|(k, &d)| Segment {
            start: 20.0 * k as f64,
            end: 20.0 * (k + 1) as f64,
            drives: d,
        })
        .collect();
    let schedule = Schedule::new(segments).map_err(|e| e.to_string())?;
    let grid: Vec<f64> = (0..=12).map(|k| 5.0 * k as f64).collect();
    let mut system = MasterEquation::new(p).map_err(|e| e.to_string())?;
    let run = evolve_with(
        &mut system,
        &schedule,
        &rho0,
        &grid,
        &EvolveOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    for (t, rho) in run.times.iter().zip(&run.states) {
        rho.check().map_err(|e| format!("state at t = {t}: {e}"))?;
    }
    Ok(format!(
        "trace defect {defect:.1e}, max trace error {:.1e}",
        run.max_trace_error
    ))
}

fn criterion_10(r: &Runner, first: &[(&str, Option<&RunOutput>)]) -> Check {
    let mut notes = Vec::new();
    for (config, out) in first {
        let p = resolved(config);
        let msg = trace_and_state_invariants(&p).map_err(|e| format!("{config}: {e}"))?;
        let out = out.ok_or(format!("{config}: first run missing"))?;
        out.gate_passed().map_err(|e| format!("{config}: {e}"))?;
        // same file names in a separate directory
        let again = r.run(config, &format!("rerun/{}", out.tag), &[])?;
        let (a, b) = (out.artifacts(), again.artifacts());
        ensure(a.len() == b.len(), format!("{config}: different file sets"))?;
        for ((name, x), (_, y)) in a.iter().zip(&b) {
            ensure(
                x == y,
                format!("{config}: {name} differs between identical runs"),
            )?;
        }
        notes.push(format!("{config} ({msg}, {} files identical)", a.len()));
    }
    Ok(notes.join("; "))
}

fn main() {
    let runner = Runner {
        dir: tempfile::tempdir().expect("temporary directory"),
    };
    let mut results: Vec<(u32, &str, Check)> = Vec::new();
    let mut report = |n: u32, name: &'static str, check: Check| {
        match &check {
            Ok(msg) => println!("PASS  {n:>2} {name}: {msg}"),
            Err(msg) => println!("FAIL  {n:>2} {name}: {msg}"),
        }
        results.push((n, name, check));
    };

    report(1, "reference-point contrast", criterion_1(&runner));
    let (c2, c8, switch_run) = criteria_2_and_8(&runner);
    report(2, "switching times", c2);
    let (c3, empty_run) = criterion_3(&runner);
    report(3, "empty-cavity oracle", c3);
    report(4, "strong-coupling suppression", criterion_4());
    report(5, "dark-state stationarity", criterion_5());
    report(6, "unraveling equivalence", criterion_6(&runner));
    let (c7, relay_run) = criterion_7(&runner);
    report(7, "relay protocol", c7);
    report(8, "rate-contrast relation", c8);
    let (c9, sweep_run) = criterion_9(&runner);
    report(9, "sweep monotonicity", c9);
    let first = [
        ("table1.cfg", switch_run.as_ref()),
        ("relay.cfg", relay_run.as_ref()),
        ("empty-cavity.cfg", empty_run.as_ref()),
        ("fig6-sweep.cfg", sweep_run.as_ref()),
    ];
    report(10, "invariant suite", criterion_10(&runner, &first));

    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
