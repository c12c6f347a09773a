use std::f64::consts::FRAC_1_SQRT_2;

use qtraj::bohm::{
    continuity_residual, density_transport, integrate_bohm_trajectory, quantum_potential_drift, short_time_deviations,
    GaussianGuidance, GridEvolution, Termination, DEFAULT_NODE_EPS,
};
use qtraj::numerics::{fit_convergence_order, ComplexField, SpatialGrid, SystemConfig, TimeWindow};
use qtraj::potentials::PotentialSpec;
use qtraj::propagators::{CrankNicolson, GaussianParams};

const STEPS: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

fn cfg() -> SystemConfig {
    SystemConfig::natural(1)
}

fn harmonic() -> PotentialSpec {
    PotentialSpec::harmonic(1.0, 1.0).unwrap()
}

fn free_guidance(dt: f64) -> GaussianGuidance {
    let packet = GaussianParams::normalized(0.0, 0.0, 1.0).unwrap();
    GaussianGuidance::new(packet, &PotentialSpec::Free, &TimeWindow::new(0.0, dt, 64).unwrap(), &cfg()).unwrap()
}

fn last_step_residual(points: usize) -> (f64, f64) {
    let grid = SpatialGrid::new(-10.0, 10.0, points).unwrap();
    let psi0 = GaussianParams::normalized(-1.0, 1.0, 1.0).unwrap().to_field(grid, 1.0).unwrap();
    let steps = points / 4;
    let dt = 0.5 / steps as f64;
    let cn = CrankNicolson::new(&PotentialSpec::Free, grid, dt, &cfg()).unwrap();
    let mut values = psi0.into_values();
    for _ in 0..steps - 1 {
        cn.step(&mut values);
    }
    let before = ComplexField::new(grid, values.clone()).unwrap();
    cn.step(&mut values);
    let after = ComplexField::new(grid, values).unwrap();
    let r = continuity_residual(&before, &after, dt, DEFAULT_NODE_EPS, &cfg()).unwrap();
    (grid.dx(), r.relative)
}

#[test]
fn reference_evolution_satisfies_continuity() {
    let samples: Vec<_> = [401, 801, 1601, 3201].into_iter().map(last_step_residual).collect();
    assert!(samples[3].1 < 1e-3, "{samples:?}");
    assert!(fit_convergence_order(&samples).unwrap() >= 1.5, "{samples:?}");
}

#[test]
fn position_law_is_second_order() {
    let errs: Vec<_> = STEPS
        .iter()
        .map(|&dt| {
            let traj = integrate_bohm_trajectory(&free_guidance(dt), 1.0, &cfg()).unwrap();
            (dt, short_time_deviations(&traj, &PotentialSpec::Free, &cfg()).unwrap().last().unwrap().position)
        })
        .collect();
    assert!(fit_convergence_order(&errs).unwrap() >= 1.9, "{errs:?}");
}

#[test]
fn momentum_law_off_the_packet_centre_is_first_order() {
    // grad Q(1) = -1/4 for the unit-width free packet; the classical law omits it.
    let (mut bare, mut with_q) = (Vec::new(), Vec::new());
    for dt in STEPS {
        let guide = free_guidance(dt);
        let traj = integrate_bohm_trajectory(&guide, 1.0, &cfg()).unwrap();
        bare.push((dt, short_time_deviations(&traj, &PotentialSpec::Free, &cfg()).unwrap().last().unwrap().momentum));
        let dq = guide.state(0.0).quantum_potential_gradient(1.0, 1.0, 1.0);
        assert!((dq + 0.25).abs() < 1e-12);
        with_q.push((dt, (traj.last_momentum() - traj.momenta[0] + dq * dt).abs()));
    }
    let p = fit_convergence_order(&bare).unwrap();
    assert!((p - 1.0).abs() < 0.05, "{p}");
    assert!(fit_convergence_order(&with_q).unwrap() >= 1.9);
}

#[test]
fn momentum_law_at_the_packet_centre_is_exact() {
    let traj = integrate_bohm_trajectory(&free_guidance(0.2), 0.0, &cfg()).unwrap();
    for d in short_time_deviations(&traj, &PotentialSpec::Free, &cfg()).unwrap() {
        assert!(d.position < 1e-14 && d.momentum < 1e-14, "{d:?}");
    }
}

#[test]
fn quantum_potential_drift_orders() {
    let free = quantum_potential_drift(&integrate_bohm_trajectory(&free_guidance(0.2), 1.0, &cfg()).unwrap()).unwrap();
    assert!(free.order >= 1.9, "{free:?}");
    let coherent = GaussianParams::normalized(1.0, 0.0, FRAC_1_SQRT_2).unwrap();
    let guide = GaussianGuidance::new(coherent, &harmonic(), &TimeWindow::new(0.0, 0.2, 64).unwrap(), &cfg()).unwrap();
    let drift = quantum_potential_drift(&integrate_bohm_trajectory(&guide, 1.3, &cfg()).unwrap()).unwrap();
    assert!(drift.order.is_infinite(), "{drift:?}");
}

#[test]
fn grid_guidance_follows_the_spreading_width() {
    // sigma(t) = sqrt(1 + t²/4); trajectories scale with it, so x(2) = sqrt(2).
    let grid = SpatialGrid::new(-12.0, 12.0, 2401).unwrap();
    let psi0 = GaussianParams::normalized(0.0, 0.0, 1.0).unwrap().to_field(grid, 1.0).unwrap();
    let window = TimeWindow::new(0.0, 2.0, 800).unwrap();
    let evo = GridEvolution::from_reference(&PotentialSpec::Free, &psi0, &window, 4, DEFAULT_NODE_EPS, &cfg()).unwrap();
    let traj = integrate_bohm_trajectory(&evo, 1.0, &cfg()).unwrap();
    assert_eq!(traj.termination, Termination::Completed);
    assert!((traj.last_position() - 2f64.sqrt()).abs() < 1e-3, "{}", traj.last_position());
}

#[test]
fn coherent_state_trajectories_oscillate_rigidly() {
    let packet = GaussianParams::normalized(1.0, 0.0, FRAC_1_SQRT_2).unwrap();
    let guide = GaussianGuidance::new(packet, &harmonic(), &TimeWindow::new(0.0, std::f64::consts::PI, 256).unwrap(), &cfg()).unwrap();
    let traj = integrate_bohm_trajectory(&guide, 1.3, &cfg()).unwrap();
    // The centre moves from 1 to -1; every trajectory shifts with it.
    assert!((traj.last_position() + 0.7).abs() < 1e-8, "{}", traj.last_position());
}

#[test]
fn grid_ensemble_transports_density() {
    let grid = SpatialGrid::new(-10.0, 10.0, 2001).unwrap();
    let psi0 = GaussianParams::normalized(0.5, 0.8, 1.0).unwrap().to_field(grid, 1.0).unwrap();
    let window = TimeWindow::new(0.0, 1.0, 400).unwrap();
    let evo = GridEvolution::from_reference(&harmonic(), &psi0, &window, 4, DEFAULT_NODE_EPS, &cfg()).unwrap();
    let starts: Vec<f64> = (0..21).map(|k| -1.0 + 0.1 * k as f64).collect();
    for (k, r) in density_transport(&evo, &starts, &cfg()).unwrap().into_iter().enumerate() {
        assert!((r - 1.0).abs() < 2e-3, "start {}: {r}", starts[k + 1]);
    }
}
