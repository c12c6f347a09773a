use std::sync::Arc;

use proptest::prelude::*;
use qtraj::flows::{
    classical_flow, quantum_flow, suspended_flow, symplectic_check, trotter_compose, ExactFlow, GaussianQ,
    GaussianQuantumTerm, HamiltonianSpec, PhaseSpacePoint,
};
use qtraj::numerics::{SystemConfig, TimeWindow};
use qtraj::potentials::PotentialSpec;
use qtraj::propagators::GaussianParams;
use qtraj::zeno::reprepare;

fn cfg() -> SystemConfig {
    SystemConfig::natural(1)
}

fn quartic() -> HamiltonianSpec {
    HamiltonianSpec::classical(PotentialSpec::quartic(0.3).unwrap(), cfg())
}

fn augmented() -> HamiltonianSpec {
    let harmonic = PotentialSpec::harmonic(1.0, 1.0).unwrap();
    let packet = GaussianParams::normalized(0.0, 0.0, 1.0).unwrap();
    let q = GaussianQuantumTerm::new(vec![packet], &harmonic, 0.0, GaussianQ::Thawed, &cfg()).unwrap();
    HamiltonianSpec::with_quantum(harmonic, cfg(), Arc::new(q))
}

fn z(x: f64, p: f64) -> PhaseSpacePoint {
    PhaseSpacePoint::one_d(x, p).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn flows_compose_as_a_groupoid(x in -1.5..1.5f64, p in -1.5..1.5f64, split in 0.2..0.8f64) {
        let h = augmented();
        let (t0, t2) = (0.1, 1.1);
        let t1 = t0 + split * (t2 - t0);
        let direct = quantum_flow(&h, &z(x, p), &TimeWindow::new(t0, t2, 2000).unwrap()).unwrap();
        let first = quantum_flow(&h, &z(x, p), &TimeWindow::new(t0, t1, 1000).unwrap()).unwrap();
        let second = quantum_flow(&h, first.endpoint(), &TimeWindow::new(t1, t2, 1000).unwrap()).unwrap();
        prop_assert!(direct.endpoint().distance(second.endpoint()) < 1e-9);
        let back = quantum_flow(&h, direct.endpoint(), &TimeWindow::new(t2, t0, 2000).unwrap()).unwrap();
        prop_assert!(back.endpoint().distance(&z(x, p)) < 1e-9);
    }

    #[test]
    fn dense_output_agrees_with_restarted_flow(x in -1.5..1.5f64, p in -1.5..1.5f64, s in 0.05..0.95f64) {
        let h = quartic();
        let flow = classical_flow(&h, &z(x, p), &TimeWindow::new(0.0, 1.0, 4000).unwrap()).unwrap();
        let restarted = classical_flow(&h, &z(x, p), &TimeWindow::new(0.0, s, 4000).unwrap()).unwrap();
        prop_assert!(flow.at(s).unwrap().distance(restarted.endpoint()) < 1e-6);
    }

    #[test]
    fn flows_are_symplectic(x in -1.5..1.5f64, p in -1.5..1.5f64) {
        let h = quartic();
        let classical = |z: &PhaseSpacePoint| Ok(classical_flow(&h, z, &TimeWindow::new(0.0, 1.0, 500).unwrap())?.endpoint().clone());
        prop_assert!(symplectic_check(&classical, &z(x, p)).unwrap() < 1e-4);
        let ha = augmented();
        let quantum = |z: &PhaseSpacePoint| Ok(quantum_flow(&ha, z, &TimeWindow::new(0.0, 0.5, 500).unwrap())?.endpoint().clone());
        prop_assert!(symplectic_check(&quantum, &z(x, p)).unwrap() < 1e-4);
    }

    #[test]
    fn suspended_flow_tracks_time_and_state(x in -1.5..1.5f64, p in -1.5..1.5f64, t0 in -1.0..1.0f64) {
        let h = augmented();
        let (end, s) = suspended_flow(&h, &z(x, p), t0, 0.8, 800).unwrap();
        prop_assert!((s - (t0 + 0.8)).abs() < 1e-12);
        let direct = quantum_flow(&h, &z(x, p), &TimeWindow::new(t0, t0 + 0.8, 800).unwrap()).unwrap();
        prop_assert!(end.distance(direct.endpoint()) < 1e-9);
    }

    #[test]
    fn exact_flow_composition_is_independent_of_the_subdivision(x in -1.5..1.5f64, p in -1.5..1.5f64, n in 1usize..12) {
        let alg = ExactFlow::new(quartic(), 1e-3).unwrap();
        let one = trotter_compose(&alg, &z(x, p), &TimeWindow::new(0.0, 1.2, 1).unwrap()).unwrap();
        let many = trotter_compose(&alg, &z(x, p), &TimeWindow::new(0.0, 1.2, n).unwrap()).unwrap();
        prop_assert!(one.distance(&many) < 1e-9);
    }

    #[test]
    fn reprepared_state_is_centred_with_the_observed_momentum(x in -5.0..5.0f64, p in -3.0..3.0f64, sigma in 0.1..2.0f64) {
        let g = reprepare(x, p, sigma).unwrap();
        prop_assert!((g.sigma() - sigma).abs() < 1e-12 * sigma);
        prop_assert!((g.norm() - 1.0).abs() < 1e-12);
        prop_assert!((g.velocity(x, 1.0, 1.0) - p).abs() < 1e-12);
        prop_assert!((g.velocity(x + 0.7, 1.0, 1.0) - p).abs() < 1e-12);
        prop_assert!(g.quantum_potential_gradient(x, 1.0, 1.0).abs() < 1e-12);
    }
}
