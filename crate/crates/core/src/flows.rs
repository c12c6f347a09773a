//! Classical and quantum-augmented Hamiltonian flows on phase space, the
//! suspended (extended phase space) flow, algorithm families and their
//! Lie–Trotter composition.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::bohm::{GuidanceField, Probe};
use crate::error::{ensure_finite, Error, Result};
use crate::numerics::{SystemConfig, TimeWindow};
use crate::potentials::{eval_potential, grad_potential, PotentialSpec};
use crate::propagators::GaussianParams;

/// Phase-space norm above which an integration is declared blown up.
pub const BLOW_UP_NORM: f64 = 1e12;
/// Tolerance of the algorithm derivative gate.
pub const ALGORITHM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpacePoint {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhaseSpacePoint {
    pub fn new(x: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if x.len() != p.len() || x.is_empty() {
            return Err(Error::InvalidInput(format!(
                "position and momentum dimensions differ or vanish ({} vs {})",
                x.len(),
                p.len()
            )));
        }
        for v in x.iter().chain(&p) {
            ensure_finite(*v, "phase-space point")?;
        }
        Ok(Self { x, p })
    }

    pub fn one_d(x: f64, p: f64) -> Result<Self> {
        Self::new(vec![x], vec![p])
    }

    pub fn dof(&self) -> usize {
        self.x.len()
    }

    /// Euclidean distance in `(x, p)`.
    pub fn distance(&self, other: &Self) -> f64 {
        self.x
            .iter()
            .zip(&other.x)
            .chain(self.p.iter().zip(&other.p))
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn flat(&self) -> Vec<f64> {
        self.x.iter().chain(&self.p).copied().collect()
    }

    fn from_flat(z: &[f64]) -> Self {
        let n = z.len() / 2;
        Self { x: z[..n].to_vec(), p: z[n..].to_vec() }
    }
}

/// Time-dependent quantum potential `Q(x, t)` added to a classical Hamiltonian.
pub trait QuantumTerm: Send + Sync + std::fmt::Debug {
    fn value(&self, x: &[f64], t: f64) -> Result<f64>;
    fn gradient(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;
}

/// Whether a Gaussian quantum potential follows the exact packet evolution or
/// stays at its initial shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GaussianQ {
    #[default]
    Frozen,
    Thawed,
}

/// Quantum potential of a product of one-dimensional Gaussians, one per degree
/// of freedom, prepared at `t0`.
#[derive(Debug, Clone)]
pub struct GaussianQuantumTerm {
    packets: Vec<GaussianParams>,
    stiffness: Vec<f64>,
    masses: Vec<f64>,
    hbar: f64,
    t0: f64,
    mode: GaussianQ,
}

impl GaussianQuantumTerm {
    pub fn new(packets: Vec<GaussianParams>, potential: &PotentialSpec, t0: f64, mode: GaussianQ, cfg: &SystemConfig) -> Result<Self> {
        if packets.len() != cfg.dof() {
            return Err(Error::InvalidInput(format!("{} packets for {} degrees of freedom", packets.len(), cfg.dof())));
        }
        let stiffness = match (mode, potential) {
            (GaussianQ::Frozen, _) => vec![0.0; packets.len()],
            (GaussianQ::Thawed, PotentialSpec::Harmonic { mass, omega }) => vec![mass * omega * omega; packets.len()],
            (GaussianQ::Thawed, PotentialSpec::Free) => vec![0.0; packets.len()],
            (GaussianQ::Thawed, _) => {
                return Err(Error::InvalidInput("thawed Gaussian evolution needs a free or harmonic potential".into()))
            }
        };
        Ok(Self { packets, stiffness, masses: cfg.masses.clone(), hbar: cfg.hbar, t0, mode })
    }

    pub fn packets_at(&self, t: f64) -> Result<Vec<GaussianParams>> {
        match self.mode {
            GaussianQ::Frozen => Ok(self.packets.clone()),
            GaussianQ::Thawed => self
                .packets
                .iter()
                .enumerate()
                .map(|(j, g)| g.evolve_exact(self.stiffness[j], self.masses[j], self.hbar, t - self.t0))
                .collect(),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.packets.len() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("point has {} coordinates, expected {}", x.len(), self.packets.len())))
        }
    }
}

impl QuantumTerm for GaussianQuantumTerm {
    fn value(&self, x: &[f64], t: f64) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self
            .packets_at(t)?
            .iter()
            .enumerate()
            .map(|(j, g)| g.quantum_potential(x[j], self.masses[j], self.hbar))
            .sum())
    }

    fn gradient(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self
            .packets_at(t)?
            .iter()
            .enumerate()
            .map(|(j, g)| g.quantum_potential_gradient(x[j], self.masses[j], self.hbar))
            .collect())
    }
}

/// One-dimensional quantum potential read from a guidance field; the
/// gradient is a central difference with step `h`.
#[derive(Debug, Clone)]
pub struct GridQuantumTerm<G> {
    field: G,
    h: f64,
}

impl<G: GuidanceField + std::fmt::Debug + Send> GridQuantumTerm<G> {
    pub fn new(field: G, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::InvalidInput(format!("difference step must be positive, got {h}")));
        }
        Ok(Self { field, h })
    }

    fn probe(&self, x: f64, t: f64) -> Result<f64> {
        match self.field.quantum_potential(x, t) {
            Probe::Value(q) => Ok(q),
            other => Err(Error::Domain(format!("quantum potential unavailable at x = {x}, t = {t} ({other:?})"))),
        }
    }
}

impl<G: GuidanceField + std::fmt::Debug + Send> QuantumTerm for GridQuantumTerm<G> {
    fn value(&self, x: &[f64], t: f64) -> Result<f64> {
        self.probe(x[0], t)
    }

    fn gradient(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok(vec![(self.probe(x[0] + self.h, t)? - self.probe(x[0] - self.h, t)?) / (2.0 * self.h)])
    }
}

/// `H = Σ p²/2m + V(x)`, optionally augmented by a quantum term `Q(x, t)`.
#[derive(Debug, Clone)]
pub struct HamiltonianSpec {
    pub potential: PotentialSpec,
    pub cfg: SystemConfig,
    pub quantum: Option<Arc<dyn QuantumTerm>>,
}

impl HamiltonianSpec {
    pub fn classical(potential: PotentialSpec, cfg: SystemConfig) -> Self {
        Self { potential, cfg, quantum: None }
    }

    pub fn with_quantum(potential: PotentialSpec, cfg: SystemConfig, q: Arc<dyn QuantumTerm>) -> Self {
        Self { potential, cfg, quantum: Some(q) }
    }

    pub fn without_quantum(&self) -> Self {
        Self { quantum: None, ..self.clone() }
    }

    fn check(&self, z: &PhaseSpacePoint) -> Result<()> {
        if z.dof() != self.cfg.dof() {
            return Err(Error::InvalidInput(format!(
                "phase-space point has {} degrees of freedom, configuration has {}",
                z.dof(),
                self.cfg.dof()
            )));
        }
        Ok(())
    }

    pub fn energy(&self, z: &PhaseSpacePoint, t: f64) -> Result<f64> {
        self.check(z)?;
        let kinetic: f64 = z.p.iter().enumerate().map(|(j, p)| p * p / (2.0 * self.cfg.mass(j))).sum();
        let q = match &self.quantum {
            Some(q) => q.value(&z.x, t)?,
            None => 0.0,
        };
        Ok(kinetic + eval_potential(&self.potential, &z.x)? + q)
    }

    /// `∇V + ∇Q`.
    fn force_gradient(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut g = grad_potential(&self.potential, x)?;
        if let Some(q) = &self.quantum {
            for (gj, qj) in g.iter_mut().zip(q.gradient(x, t)?) {
                *gj += qj;
            }
        }
        Ok(g)
    }

    /// Hamiltonian vector field `(∂H/∂p, -∂H/∂x)` at `(z, t)`.
    pub fn vector_field(&self, z: &PhaseSpacePoint, t: f64) -> Result<PhaseSpacePoint> {
        self.check(z)?;
        Ok(PhaseSpacePoint::from_flat(&self.field_flat(&z.flat(), t)?))
    }

    fn field_flat(&self, z: &[f64], t: f64) -> Result<Vec<f64>> {
        let n = z.len() / 2;
        let g = self.force_gradient(&z[..n], t)?;
        let mut out = Vec::with_capacity(2 * n);
        out.extend((0..n).map(|j| z[n + j] / self.cfg.mass(j)));
        out.extend(g.into_iter().map(|v| -v));
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    StormerVerlet,
    Rk4,
}

/// Sampled trajectory `t ↦ z(t)` with cubic Hermite dense output.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMap {
    pub integrator: Integrator,
    pub times: Vec<f64>,
    pub states: Vec<PhaseSpacePoint>,
    derivatives: Vec<Vec<f64>>,
}

impl FlowMap {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn start(&self) -> &PhaseSpacePoint {
        &self.states[0]
    }

    pub fn endpoint(&self) -> &PhaseSpacePoint {
        self.states.last().expect("flows hold the start point")
    }

    /// State at any time inside the sampled range.
    pub fn at(&self, t: f64) -> Result<PhaseSpacePoint> {
        let (a, b) = (self.times[0], *self.times.last().expect("non-empty"));
        let forward = b > a;
        if !(t >= a.min(b) && t <= a.max(b)) {
            return Err(Error::Domain(format!("t = {t} lies outside the flow range [{a}, {b}]")));
        }
        let n = self.steps();
        let s = ((t - a) / (b - a) * n as f64).floor() as usize;
        let i = s.min(n - 1);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        debug_assert!(forward == (t1 > t0));
        let h = t1 - t0;
        let u = (t - t0) / h;
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * u) * (1.0 - u).powi(2),
            u * (1.0 - u).powi(2),
            u * u * (3.0 - 2.0 * u),
            u * u * (u - 1.0),
        );
        let (y0, y1) = (self.states[i].flat(), self.states[i + 1].flat());
        let (f0, f1) = (&self.derivatives[i], &self.derivatives[i + 1]);
        let z: Vec<f64> =
            (0..y0.len()).map(|k| h00 * y0[k] + h10 * h * f0[k] + h01 * y1[k] + h11 * h * f1[k]).collect();
        Ok(PhaseSpacePoint::from_flat(&z))
    }
}

fn check_growth(z: &[f64], t: f64) -> Result<()> {
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm.is_finite() && norm <= BLOW_UP_NORM {
        Ok(())
    } else {
        Err(Error::BlowUp { t })
    }
}

/// Störmer–Verlet (kick-drift-kick) flow of a Hamiltonian without quantum term.
pub fn classical_flow(h: &HamiltonianSpec, z0: &PhaseSpacePoint, window: &TimeWindow) -> Result<FlowMap> {
    if h.quantum.is_some() {
        return Err(Error::InvalidInput("classical flow requested for a Hamiltonian with a quantum term".into()));
    }
    h.check(z0)?;
    let n = z0.dof();
    let dt = window.dt();
    let mut z = z0.flat();
    let mut grad = grad_potential(&h.potential, &z[..n])?;
    let field = |z: &[f64], grad: &[f64]| -> Vec<f64> {
        (0..n).map(|j| z[n + j] / h.cfg.mass(j)).chain(grad.iter().map(|g| -g)).collect()
    };
    let mut flow = FlowMap {
        integrator: Integrator::StormerVerlet,
        times: vec![window.t0],
        states: vec![z0.clone()],
        derivatives: vec![field(&z, &grad)],
    };
    for s in 1..=window.steps {
        for j in 0..n {
            z[n + j] -= 0.5 * dt * grad[j];
            z[j] += dt * z[n + j] / h.cfg.mass(j);
        }
        grad = grad_potential(&h.potential, &z[..n])?;
        for j in 0..n {
            z[n + j] -= 0.5 * dt * grad[j];
        }
        let t = window.time(s);
        check_growth(&z, t)?;
        flow.times.push(t);
        flow.states.push(PhaseSpacePoint::from_flat(&z));
        flow.derivatives.push(field(&z, &grad));
    }
    Ok(flow)
}

fn rk4_step(f: &dyn Fn(&[f64], f64) -> Result<Vec<f64>>, z: &[f64], t: f64, dt: f64, k1: &[f64]) -> Result<Vec<f64>> {
    let shift = |k: &[f64], c: f64| -> Vec<f64> { z.iter().zip(k).map(|(a, b)| a + c * b).collect() };
    let k2 = f(&shift(k1, 0.5 * dt), t + 0.5 * dt)?;
    let k3 = f(&shift(&k2, 0.5 * dt), t + 0.5 * dt)?;
    let k4 = f(&shift(&k3, dt), t + dt)?;
    Ok((0..z.len()).map(|i| z[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect())
}

/// RK4 flow of `H + Q`; a missing quantum term makes this an RK4 classical flow.
pub fn quantum_flow(h: &HamiltonianSpec, z0: &PhaseSpacePoint, window: &TimeWindow) -> Result<FlowMap> {
    h.check(z0)?;
    let dt = window.dt();
    let f = |z: &[f64], t: f64| h.field_flat(z, t);
    let mut z = z0.flat();
    let mut k = f(&z, window.t0)?;
    let mut flow = FlowMap { integrator: Integrator::Rk4, times: vec![window.t0], states: vec![z0.clone()], derivatives: vec![k.clone()] };
    for s in 1..=window.steps {
        z = rk4_step(&f, &z, window.time(s - 1), dt, &k)?;
        let t = window.time(s);
        check_growth(&z, t)?;
        k = f(&z, t)?;
        flow.times.push(t);
        flow.states.push(PhaseSpacePoint::from_flat(&z));
        flow.derivatives.push(k.clone());
    }
    Ok(flow)
}

/// Integrates the autonomous field `(X_H(z, s), 1)` on extended phase space
/// from `(z0, t0)` for `duration`, returning the final `(z, s)`.
pub fn suspended_flow(
    h: &HamiltonianSpec,
    z0: &PhaseSpacePoint,
    t0: f64,
    duration: f64,
    steps: usize,
) -> Result<(PhaseSpacePoint, f64)> {
    h.check(z0)?;
    if steps == 0 {
        return Err(Error::InvalidInput("suspended flow needs at least one step".into()));
    }
    if duration == 0.0 {
        return Err(Error::ZeroTimeStep);
    }
    let f = |y: &[f64], _tau: f64| -> Result<Vec<f64>> {
        let (z, s) = y.split_at(y.len() - 1);
        let mut out = h.field_flat(z, s[0])?;
        out.push(1.0);
        Ok(out)
    };
    let dt = duration / steps as f64;
    let mut y = z0.flat();
    y.push(t0);
    for s in 0..steps {
        let k = f(&y, 0.0)?;
        y = rk4_step(&f, &y, 0.0, dt, &k)?;
        check_growth(&y[..y.len() - 1], t0 + (s + 1) as f64 * dt)?;
    }
    let s = y.pop().expect("time coordinate");
    Ok((PhaseSpacePoint::from_flat(&y), s))
}

/// Flows from many start points, integrated in parallel.
pub fn flow_ensemble(h: &HamiltonianSpec, starts: &[PhaseSpacePoint], window: &TimeWindow) -> Vec<Result<FlowMap>> {
    starts
        .par_iter()
        .map(|z| if h.quantum.is_some() { quantum_flow(h, z, window) } else { classical_flow(h, z, window) })
        .collect()
}

/// Two-parameter family `k_{t,t0}` approximating the flow of `generator()`.
pub trait AlgorithmFamily: Sync {
    fn name(&self) -> &str;
    fn local_order(&self) -> u32;
    fn generator(&self) -> &HamiltonianSpec;
    fn apply(&self, z: &PhaseSpacePoint, t: f64, t0: f64) -> Result<PhaseSpacePoint>;
}

/// `x += (p0/m) Δt`, `p -= ∇V(x0) Δt`.
#[derive(Debug, Clone)]
pub struct EulerStep {
    h: HamiltonianSpec,
}

pub fn euler_step_algorithm(h: &HamiltonianSpec) -> EulerStep {
    EulerStep { h: h.without_quantum() }
}

impl AlgorithmFamily for EulerStep {
    fn name(&self) -> &str {
        "euler-step"
    }

    fn local_order(&self) -> u32 {
        2
    }

    fn generator(&self) -> &HamiltonianSpec {
        &self.h
    }

    fn apply(&self, z: &PhaseSpacePoint, t: f64, t0: f64) -> Result<PhaseSpacePoint> {
        self.h.check(z)?;
        let dt = t - t0;
        let g = grad_potential(&self.h.potential, &z.x)?;
        let x = z.x.iter().enumerate().map(|(j, x)| x + z.p[j] / self.h.cfg.mass(j) * dt).collect();
        let p = z.p.iter().zip(&g).map(|(p, g)| p - g * dt).collect();
        PhaseSpacePoint::new(x, p)
    }
}

/// The flow itself used as an algorithm: RK4 with at most `max_step` per step.
#[derive(Debug, Clone)]
pub struct ExactFlow {
    h: HamiltonianSpec,
    max_step: f64,
}

impl ExactFlow {
    pub fn new(h: HamiltonianSpec, max_step: f64) -> Result<Self> {
        if !(max_step > 0.0) {
            return Err(Error::InvalidInput(format!("maximum step must be positive, got {max_step}")));
        }
        Ok(Self { h, max_step })
    }
}

impl AlgorithmFamily for ExactFlow {
    fn name(&self) -> &str {
        "exact-flow"
    }

    fn local_order(&self) -> u32 {
        u32::MAX
    }

    fn generator(&self) -> &HamiltonianSpec {
        &self.h
    }

    fn apply(&self, z: &PhaseSpacePoint, t: f64, t0: f64) -> Result<PhaseSpacePoint> {
        if t == t0 {
            return Ok(z.clone());
        }
        let steps = ((t - t0).abs() / self.max_step).ceil().max(1.0) as usize;
        Ok(quantum_flow(&self.h, z, &TimeWindow::new(t0, t, steps)?)?.endpoint().clone())
    }
}

/// Checks `k_{t0,t0}(z) = z` and `∂_t k_{t,t0}(z)|_{t=t0} = X_H(z, t0)` by a
/// central difference, relative to `1 + |X_H|`. Returns the mismatch.
pub fn verify_algorithm(alg: &dyn AlgorithmFamily, z: &PhaseSpacePoint, t0: f64, tol: f64) -> Result<f64> {
    let same = alg.apply(z, t0, t0)?;
    let identity_gap = same.distance(z);
    let h = 1e-5 * (1.0 + t0.abs());
    let plus = alg.apply(z, t0 + h, t0)?.flat();
    let minus = alg.apply(z, t0 - h, t0)?.flat();
    let field = alg.generator().field_flat(&z.flat(), t0)?;
    let scale = 1.0 + field.iter().map(|v| v * v).sum::<f64>().sqrt();
    let gap = plus
        .iter()
        .zip(&minus)
        .zip(&field)
        .map(|((a, b), f)| ((a - b) / (2.0 * h) - f).powi(2))
        .sum::<f64>()
        .sqrt()
        / scale;
    let mismatch = gap.max(identity_gap);
    if mismatch > tol {
        return Err(Error::AlgorithmCheck { mismatch, tol });
    }
    Ok(mismatch)
}

/// `k_{t,t_{N-1}} ∘ … ∘ k_{t1,t0}(z0)` over the equal subdivision of `window`,
/// after the algorithm passes the derivative gate at `(z0, t0)`.
pub fn trotter_compose(alg: &dyn AlgorithmFamily, z0: &PhaseSpacePoint, window: &TimeWindow) -> Result<PhaseSpacePoint> {
    verify_algorithm(alg, z0, window.t0, ALGORITHM_TOLERANCE)?;
    let mut z = z0.clone();
    for j in 0..window.steps {
        let t = window.time(j + 1);
        z = alg
            .apply(&z, t, window.time(j))
            .and_then(|next| check_growth(&next.flat(), t).map(|_| next))
            .map_err(|e| Error::Subinterval { index: j, source: Box::new(e) })?;
    }
    Ok(z)
}

/// Frobenius norm of `JᵀΩJ - Ω` for the central-difference Jacobian of `map`
/// at `z0`, with per-coordinate step `1e-5 (1 + |z_k|)`.
pub fn symplectic_check(map: &dyn Fn(&PhaseSpacePoint) -> Result<PhaseSpacePoint>, z0: &PhaseSpacePoint) -> Result<f64> {
    let base = z0.flat();
    let d = base.len();
    let n = d / 2;
    let mut jac = DMatrix::<f64>::zeros(d, d);
    for k in 0..d {
        let step = 1e-5 * (1.0 + base[k].abs());
        let (mut up, mut down) = (base.clone(), base.clone());
        up[k] += step;
        down[k] -= step;
        let width = up[k] - down[k];
        if width == 0.0 || !width.is_finite() {
            return Err(Error::Domain(format!("finite-difference step underflows at coordinate {k}")));
        }
        let hi = map(&PhaseSpacePoint::from_flat(&up))?.flat();
        let lo = map(&PhaseSpacePoint::from_flat(&down))?.flat();
        for i in 0..d {
            jac[(i, k)] = (hi[i] - lo[i]) / width;
        }
    }
    let mut omega = DMatrix::<f64>::zeros(d, d);
    for j in 0..n {
        omega[(j, n + j)] = 1.0;
        omega[(n + j, j)] = -1.0;
    }
    Ok((jac.transpose() * &omega * &jac - omega).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn harmonic() -> HamiltonianSpec {
        HamiltonianSpec::classical(PotentialSpec::harmonic(1.0, 1.0).unwrap(), SystemConfig::natural(1))
    }

    fn z(x: f64, p: f64) -> PhaseSpacePoint {
        PhaseSpacePoint::one_d(x, p).unwrap()
    }

    #[test]
    fn harmonic_quarter_period() {
        let w = TimeWindow::new(0.0, PI / 2.0, 4000).unwrap();
        let end = classical_flow(&harmonic(), &z(1.0, 0.0), &w).unwrap().endpoint().clone();
        assert!(end.distance(&z(0.0, -1.0)) < 1e-6);
    }

    #[test]
    fn free_motion_is_a_straight_line() {
        let h = HamiltonianSpec::classical(PotentialSpec::Free, SystemConfig::natural(1));
        let end = classical_flow(&h, &z(0.0, 1.0), &TimeWindow::new(0.0, 2.0, 64).unwrap()).unwrap();
        assert_abs_diff_eq!(end.endpoint().x[0], 2.0, epsilon = 1e-14);
        assert_eq!(end.endpoint().p[0], 1.0);
    }

    #[test]
    fn verlet_energy_drift_stays_bounded() {
        let h = harmonic();
        let z0 = z(1.0, 0.3);
        let flow = classical_flow(&h, &z0, &TimeWindow::new(0.0, 100.0, 100_000).unwrap()).unwrap();
        let e0 = h.energy(&z0, 0.0).unwrap();
        let drift = flow.states.iter().map(|s| (h.energy(s, 0.0).unwrap() - e0).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-6, "{drift}");
    }

    #[test]
    fn groupoid_law_with_aligned_steps() {
        let h = harmonic();
        let z0 = z(0.4, -0.7);
        let whole = classical_flow(&h, &z0, &TimeWindow::new(0.0, 2.0, 200).unwrap()).unwrap();
        let first = classical_flow(&h, &z0, &TimeWindow::new(0.0, 0.8, 80).unwrap()).unwrap();
        let second = classical_flow(&h, first.endpoint(), &TimeWindow::new(0.8, 2.0, 120).unwrap()).unwrap();
        assert!(whole.endpoint().distance(second.endpoint()) < 1e-8);
    }

    #[test]
    fn dense_output_interpolates_between_steps() {
        let flow = classical_flow(&harmonic(), &z(1.0, 0.0), &TimeWindow::new(0.0, 1.0, 1000).unwrap()).unwrap();
        let mid = flow.at(0.50005).unwrap();
        assert_abs_diff_eq!(mid.x[0], 0.50005f64.cos(), epsilon = 1e-6);
        assert!(flow.at(1.5).is_err());
    }

    #[test]
    fn rk4_without_quantum_term_matches_verlet() {
        let w = TimeWindow::new(0.0, 1.0, 2000).unwrap();
        let a = classical_flow(&harmonic(), &z(1.0, 0.5), &w).unwrap();
        let b = quantum_flow(&harmonic(), &z(1.0, 0.5), &w).unwrap();
        assert!(a.endpoint().distance(b.endpoint()) < 1e-7);
    }

    #[test]
    fn suspended_flow_matches_time_dependent_flow() {
        let cfg = SystemConfig::natural(1);
        let packet = GaussianParams::normalized(0.0, 0.0, 1.0).unwrap();
        let q = GaussianQuantumTerm::new(vec![packet], &PotentialSpec::Free, 0.3, GaussianQ::Thawed, &cfg).unwrap();
        let h = HamiltonianSpec::with_quantum(PotentialSpec::Free, cfg, Arc::new(q));
        let direct = quantum_flow(&h, &z(0.7, 0.0), &TimeWindow::new(0.3, 1.8, 300).unwrap()).unwrap();
        let (zs, s) = suspended_flow(&h, &z(0.7, 0.0), 0.3, 1.5, 300).unwrap();
        assert!(zs.distance(direct.endpoint()) < 1e-12);
        assert_abs_diff_eq!(s, 1.8, epsilon = 1e-12);
    }

    #[test]
    fn euler_step_direct_formula_and_identity() {
        let alg = euler_step_algorithm(&harmonic());
        let out = alg.apply(&z(1.0, 0.0), 0.1, 0.0).unwrap();
        assert_abs_diff_eq!(out.x[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.p[0], -0.1, epsilon = 1e-15);
        assert_eq!(alg.apply(&z(1.0, 0.0), 0.0, 0.0).unwrap(), z(1.0, 0.0));
        assert!(verify_algorithm(&alg, &z(0.3, 0.2), 0.0, ALGORITHM_TOLERANCE).unwrap() < 1e-8);
    }

    #[test]
    fn exact_flow_composition_is_independent_of_n() {
        let alg = ExactFlow::new(harmonic(), 1e-3).unwrap();
        for n in [1, 3, 10] {
            let end = trotter_compose(&alg, &z(1.0, 0.0), &TimeWindow::new(0.0, PI / 2.0, n).unwrap()).unwrap();
            assert!(end.distance(&z(0.0, -1.0)) < 1e-10, "n = {n}");
        }
    }

    #[derive(Debug)]
    struct Drift;

    impl AlgorithmFamily for Drift {
        fn name(&self) -> &str {
            "wrong"
        }
        fn local_order(&self) -> u32 {
            1
        }
        fn generator(&self) -> &HamiltonianSpec {
            static H: std::sync::OnceLock<HamiltonianSpec> = std::sync::OnceLock::new();
            H.get_or_init(harmonic)
        }
        fn apply(&self, z: &PhaseSpacePoint, t: f64, t0: f64) -> Result<PhaseSpacePoint> {
            PhaseSpacePoint::new(vec![z.x[0] + 2.0 * (t - t0)], z.p.clone())
        }
    }

    #[test]
    fn gate_rejects_families_with_the_wrong_derivative() {
        let w = TimeWindow::new(0.0, 1.0, 4).unwrap();
        assert!(matches!(trotter_compose(&Drift, &z(0.0, 0.0), &w), Err(Error::AlgorithmCheck { .. })));
    }

    #[test]
    fn symplectic_check_cases() {
        let identity = |z: &PhaseSpacePoint| Ok(z.clone());
        assert_eq!(symplectic_check(&identity, &z(0.3, 0.1)).unwrap(), 0.0);
        let h = harmonic();
        let map = |z0: &PhaseSpacePoint| Ok(classical_flow(&h, z0, &TimeWindow::new(0.0, 1.0, 1000).unwrap())?.endpoint().clone());
        assert!(symplectic_check(&map, &z(1.0, 0.0)).unwrap() < 1e-6);
    }

    #[test]
    fn quantum_term_dimension_is_checked() {
        let cfg = SystemConfig::natural(2);
        let g = GaussianParams::normalized(0.0, 0.0, 1.0).unwrap();
        assert!(GaussianQuantumTerm::new(vec![g], &PotentialSpec::Free, 0.0, GaussianQ::Frozen, &cfg).is_err());
        let q = GaussianQuantumTerm::new(vec![g, g], &PotentialSpec::Free, 0.0, GaussianQ::Frozen, &cfg).unwrap();
        assert_abs_diff_eq!(q.value(&[0.0, 0.0], 0.0).unwrap(), 0.5, epsilon = 1e-14);
        assert!(GaussianQuantumTerm::new(vec![g, g], &PotentialSpec::quartic(1.0).unwrap(), 0.0, GaussianQ::Thawed, &cfg).is_err());
    }
}
