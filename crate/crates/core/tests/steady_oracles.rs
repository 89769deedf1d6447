use lambda_switch::dynamics::{
    liouvillian, steady_state_in_sector, MasterEquation, SteadyStateOptions,
};
use lambda_switch::model::{collapse_operators, dark_state, hamiltonian, DriveState, SwitchParams};
use lambda_switch::operator::{coherent_state, DensityMatrix, Level, Operator, StateVector};
use lambda_switch::C64;
use nalgebra::{DMatrix, DVector};

fn quiet_params(n_a: usize, n_b: usize) -> SwitchParams {
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

fn c_ops(p: &SwitchParams) -> Vec<Operator> {
    collapse_operators(p, true)
        .unwrap()
        .into_iter()
        .map(|c| c.op)
        .collect()
}

/// Basis indices whose emitter level is one of `levels` and with no a-photons.
fn sector(p: &SwitchParams, levels: &[Level]) -> Vec<usize> {
    let layout = p.layout().unwrap();
    (0..layout.total())
        .filter(|&k| {
            let f = layout.factors(k);
            f[1] == 0 && levels.iter().any(|l| l.index() == f[0])
        })
        .collect()
}

fn mode_b(p: &SwitchParams) -> Operator {
    lambda_switch::model::SwitchOperators::for_params(p)
        .unwrap()
        .b
}

fn basis(dim: usize, k: usize) -> StateVector {
    let mut v = DVector::zeros(dim);
    v[k] = C64::new(1.0, 0.0);
    StateVector::new(
        lambda_switch::operator::SpaceLayout::single(dim).unwrap(),
        v,
    )
    .unwrap()
}

#[test]
fn empty_cavity_steady_state_is_the_coherent_state() {
    let p = quiet_params(1, 12);
    let h = hamiltonian(&p, DriveState::OFF, 0.0).unwrap();
    let rho = steady_state_in_sector(&h, &c_ops(&p), &sector(&p, &[Level::G])).unwrap();
    let alpha = p.eps_b / p.kappa_b;
    let b = rho.expectation(&mode_b(&p)).unwrap();
    assert!((b - C64::new(alpha, 0.0)).norm() < 1e-8, "<b> = {b}");

    let psi = StateVector::product(&[
        basis(3, Level::G.index()),
        basis(1, 0),
        coherent_state(12, C64::new(alpha, 0.0)).unwrap(),
    ])
    .unwrap();
    let fidelity = rho.fidelity_pure(&psi).unwrap();
    assert!(fidelity >= 1.0 - 1e-8, "fidelity {fidelity}");
}

#[test]
fn strong_coupling_suppresses_the_two_level_transmission() {
    let p = SwitchParams {
        g_b: 10.0,
        gamma_a: 0.0,
        eps_a: 0.0,
        eps_b: 0.001f64.sqrt(),
        n_a: 1,
        n_b: 4,
        ..quiet_params(1, 4)
    };
    let cooperativity = p.g_b * p.g_b / (2.0 * p.kappa_b * p.gamma_b);
    assert_eq!(cooperativity, 50.0);
    let h = hamiltonian(&p, DriveState::OFF, 0.0).unwrap();
    let rho = steady_state_in_sector(&h, &c_ops(&p), &sector(&p, &[Level::G, Level::E])).unwrap();
    let b = rho.expectation(&mode_b(&p)).unwrap().norm();
    let expected = p.eps_b / (p.kappa_b * (1.0 + 2.0 * cooperativity));
    assert!(
        (b / expected - 1.0).abs() < 0.05,
        "|<b>| = {b:.4e}, weak-drive value {expected:.4e}"
    );
}

#[test]
fn dark_state_is_stationary_and_selected() {
    let mut p = SwitchParams::table1().with_cutoffs(6, 10);
    p.theta_a = -p.delta_small;
    let psi = dark_state(&p).unwrap();
    let mut system = MasterEquation::new(&p).unwrap();
    let l = system.liouvillian(DriveState::A_ON).unwrap();
    let pure = DensityMatrix::from_pure(&psi);
    let residual = l.apply(pure.matrix()).norm();
    assert!(residual <= 1e-6, "residual {residual:.3e}");

    let report = system
        .steady_state(DriveState::A_ON, &SteadyStateOptions::default())
        .unwrap();
    let fidelity = report.rho.fidelity_pure(&psi).unwrap();
    assert!(fidelity >= 0.999, "fidelity {fidelity}");
}

#[test]
fn mirror_resolved_channels_give_the_same_liouvillian() {
    let p = SwitchParams::table1().with_cutoffs(2, 3);
    let h = hamiltonian(&p, DriveState::A_ON, 0.0).unwrap();
    let ops = |resolved| -> Vec<Operator> {
        collapse_operators(&p, resolved)
            .unwrap()
            .into_iter()
            .map(|c| c.op)
            .collect()
    };
    let resolved = liouvillian(&h, &ops(true)).unwrap().to_dense();
    let lumped = liouvillian(&h, &ops(false)).unwrap().to_dense();
    assert!((resolved - lumped).camax() < 1e-12);
}

#[test]
fn liouvillian_preserves_trace() {
    for p in [
        SwitchParams::table1().with_cutoffs(3, 3),
        SwitchParams::relay().with_cutoffs(3, 3),
    ] {
        for drives in [DriveState::A_ON, DriveState::OFF, DriveState::C_ON] {
            let l = liouvillian(&hamiltonian(&p, drives, 0.7).unwrap(), &c_ops(&p)).unwrap();
            // <<I| L: the trace row is the sum of the diagonal-element rows
            let dense = l.to_dense();
            let n = l.dim();
            let mut row = DMatrix::<C64>::zeros(1, n * n);
            for k in 0..n {
                row += dense.row(k + n * k);
            }
            assert!(row.camax() < 1e-10);
        }
    }
}
