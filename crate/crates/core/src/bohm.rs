//! Polar decomposition `psi = sqrt(rho) exp(i S / hbar)`, the quantum potential
//! `Q = -(hbar²/2m) (sqrt rho)'' / sqrt rho`, the guidance velocity, the
//! continuity residual, and Bohmian trajectories.
//!
//! Grid fields are one-dimensional. Points where `rho < eps_node * max rho`
//! are masked; phase, velocity and `Q` carry no meaning there.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{
    finite_difference, first_derivative, fit_convergence_order, second_derivative, ComplexField, CubicInterpolant,
    SpatialGrid, SystemConfig, TimeWindow, BOUNDARY_POINTS,
};
use crate::potentials::{grad_potential, PotentialSpec};
use crate::propagators::{CrankNicolson, GaussianParams};

pub const DEFAULT_NODE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PolarFields {
    pub grid: SpatialGrid,
    pub rho: Vec<f64>,
    /// `hbar * arg psi`, unwrapped outward from the density maximum.
    pub phase: Vec<f64>,
    pub node_mask: Vec<bool>,
}

impl PolarFields {
    /// `sqrt(rho) exp(i S / hbar)`.
    pub fn reconstruct(&self, hbar: f64) -> Vec<Complex64> {
        self.rho
            .iter()
            .zip(&self.phase)
            .map(|(r, s)| Complex64::from_polar(r.sqrt(), s / hbar))
            .collect()
    }
}

fn node_mask(rho: &[f64], eps_node: f64) -> Result<Vec<bool>> {
    let max = rho.iter().cloned().fold(0.0, f64::max);
    let mask: Vec<bool> = rho.iter().map(|r| *r < eps_node * max || max == 0.0).collect();
    if mask.iter().all(|m| *m) {
        return Err(Error::AllMasked);
    }
    Ok(mask)
}

fn wrap(d: f64) -> f64 {
    d - 2.0 * PI * ((d + PI) / (2.0 * PI)).floor()
}

pub fn polar_decompose(psi: &ComplexField, eps_node: f64, cfg: &SystemConfig) -> Result<PolarFields> {
    let rho = psi.density();
    let node_mask = node_mask(&rho, eps_node)?;
    let raw: Vec<f64> = psi.values().iter().map(|z| z.arg()).collect();
    let start = rho
        .iter()
        .enumerate()
        .fold(0, |best, (i, r)| if *r > rho[best] { i } else { best });
    let mut unwrapped = vec![0.0; raw.len()];
    unwrapped[start] = raw[start];
    for i in start + 1..raw.len() {
        unwrapped[i] = unwrapped[i - 1] + wrap(raw[i] - raw[i - 1]);
    }
    for i in (0..start).rev() {
        unwrapped[i] = unwrapped[i + 1] + wrap(raw[i] - raw[i + 1]);
    }
    let phase = unwrapped.into_iter().map(|a| cfg.hbar * a).collect();
    Ok(PolarFields { grid: *psi.grid(), rho, phase, node_mask })
}

/// Points whose derivative stencils stay off the mask and away from the
/// one-sided boundary stencils.
fn stencil_valid(mask: &[bool]) -> Vec<bool> {
    let m = mask.len();
    (0..m)
        .map(|i| {
            i >= BOUNDARY_POINTS
                && i + BOUNDARY_POINTS < m
                && !mask[i - 1]
                && !mask[i]
                && !mask[i + 1]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantumPotentialField {
    pub grid: SpatialGrid,
    /// From the curvature of `sqrt(rho)`.
    pub q: Vec<f64>,
    /// Same quantity from `rho` directly: `(hbar²/4m)(rho'²/(2 rho²) - rho''/rho)`.
    pub q_from_rho: Vec<f64>,
    pub valid_mask: Vec<bool>,
}

impl QuantumPotentialField {
    /// `max |q - q_from_rho| / max |q|` over the valid points.
    pub fn form_discrepancy(&self) -> f64 {
        let mut diff: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in (0..self.q.len()).filter(|&i| self.valid_mask[i]) {
            diff = diff.max((self.q[i] - self.q_from_rho[i]).abs());
            scale = scale.max(self.q[i].abs());
        }
        if scale == 0.0 {
            diff
        } else {
            diff / scale
        }
    }
}

pub fn quantum_potential(fields: &PolarFields, cfg: &SystemConfig) -> Result<QuantumPotentialField> {
    let mass = cfg.single_mass()?;
    let hbar = cfg.hbar;
    let valid_mask = stencil_valid(&fields.node_mask);
    if !valid_mask.iter().any(|v| *v) {
        return Err(Error::AllMasked);
    }
    let dx = fields.grid.dx();
    let amp: Vec<f64> = fields.rho.iter().map(|r| r.sqrt()).collect();
    let amp2 = second_derivative(&amp, dx);
    let rho1 = first_derivative(&fields.rho, dx);
    let rho2 = second_derivative(&fields.rho, dx);
    let mut q = vec![0.0; amp.len()];
    let mut q_from_rho = vec![0.0; amp.len()];
    for i in (0..amp.len()).filter(|&i| valid_mask[i]) {
        let r = fields.rho[i];
        q[i] = -hbar * hbar / (2.0 * mass) * amp2[i] / amp[i];
        q_from_rho[i] = hbar * hbar / (4.0 * mass) * (rho1[i] * rho1[i] / (2.0 * r * r) - rho2[i] / r);
    }
    Ok(QuantumPotentialField { grid: fields.grid, q, q_from_rho, valid_mask })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub grid: SpatialGrid,
    pub v: Vec<f64>,
    pub valid_mask: Vec<bool>,
}

/// `v = (hbar/m) Im(psi'/psi)`.
pub fn velocity_field(psi: &ComplexField, eps_node: f64, cfg: &SystemConfig) -> Result<VelocityField> {
    let mass = cfg.single_mass()?;
    let mask = node_mask(&psi.density(), eps_node)?;
    let valid_mask = stencil_valid(&mask);
    if !valid_mask.iter().any(|v| *v) {
        return Err(Error::AllMasked);
    }
    let d = finite_difference(psi, 1)?;
    let v = (0..psi.values().len())
        .map(|i| {
            if valid_mask[i] {
                cfg.hbar / mass * (d.field.values()[i] / psi.values()[i]).im
            } else {
                0.0
            }
        })
        .collect();
    Ok(VelocityField { grid: *psi.grid(), v, valid_mask })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityResidual {
    /// `∂rho/∂t + ∂(rho v)/∂x` at the mid time; zero where not evaluated.
    pub residual: Vec<f64>,
    pub evaluated: Vec<bool>,
    /// `max |residual| / max(max |∂rho/∂t|, (hbar/2m) max |rho''|)`.
    pub relative: f64,
}

/// Continuity-equation residual between two snapshots `dt` apart. The current
/// `j = (hbar/m) Im(conj(psi) psi')` is averaged over the two snapshots.
pub fn continuity_residual(
    psi_t0: &ComplexField,
    psi_t1: &ComplexField,
    dt: f64,
    eps_node: f64,
    cfg: &SystemConfig,
) -> Result<ContinuityResidual> {
    if psi_t0.grid() != psi_t1.grid() {
        return Err(Error::InvalidInput("snapshots live on different grids".into()));
    }
    if dt == 0.0 {
        return Err(Error::ZeroTimeStep);
    }
    let mass = cfg.single_mass()?;
    let dx = psi_t0.grid().dx();
    let current = |psi: &ComplexField| -> Vec<f64> {
        let d = first_derivative(psi.values(), dx);
        psi.values().iter().zip(&d).map(|(p, dp)| cfg.hbar / mass * (p.conj() * dp).im).collect()
    };
    let j: Vec<f64> = current(psi_t0).iter().zip(current(psi_t1)).map(|(a, b)| 0.5 * (a + b)).collect();
    let rho0 = psi_t0.density();
    let rho1 = psi_t1.density();
    let rho_mid: Vec<f64> = rho0.iter().zip(&rho1).map(|(a, b)| 0.5 * (a + b)).collect();
    let mask = node_mask(&rho_mid, eps_node)?;
    let evaluated = stencil_valid(&mask);
    let dj = first_derivative(&j, dx);
    let curvature = second_derivative(&rho_mid, dx);
    let mut residual = vec![0.0; j.len()];
    let (mut worst, mut rate, mut diffusion): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for i in (0..j.len()).filter(|&i| evaluated[i]) {
        let drho = (rho1[i] - rho0[i]) / dt;
        residual[i] = drho + dj[i];
        worst = worst.max(residual[i].abs());
        rate = rate.max(drho.abs());
        diffusion = diffusion.max(cfg.hbar / (2.0 * mass) * curvature[i].abs());
    }
    let scale = rate.max(diffusion);
    let relative = if scale > 0.0 { worst / scale } else { 0.0 };
    Ok(ContinuityResidual { residual, evaluated, relative })
}

/// Outcome of probing a guidance field at `(x, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Probe {
    Value(f64),
    Node,
    Boundary,
}

/// A velocity field, quantum potential and density available at arbitrary
/// `(x, t)` inside its time range.
pub trait GuidanceField: Sync {
    /// Time nodes of the integration; trajectories take one RK4 step per interval.
    fn step_times(&self) -> &[f64];
    fn velocity(&self, x: f64, t: f64) -> Probe;
    fn quantum_potential(&self, x: f64, t: f64) -> Probe;
    fn density(&self, x: f64, t: f64) -> Probe;
}

#[derive(Debug, Clone)]
struct Snapshot {
    v: CubicInterpolant,
    q: CubicInterpolant,
    rho: CubicInterpolant,
    valid: Vec<bool>,
}

/// Time-indexed sequence of wavefunction snapshots, interpolated cubically in
/// space and linearly in time.
#[derive(Debug, Clone)]
pub struct GridEvolution {
    grid: SpatialGrid,
    times: Vec<f64>,
    snapshots: Vec<Snapshot>,
}

impl GridEvolution {
    pub fn new(times: Vec<f64>, fields: &[ComplexField], eps_node: f64, cfg: &SystemConfig) -> Result<Self> {
        if times.len() != fields.len() || times.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need matching times and snapshots (at least 2), got {} and {}",
                times.len(),
                fields.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("snapshot times must increase".into()));
        }
        let grid = *fields[0].grid();
        let snapshots = fields
            .par_iter()
            .map(|psi| {
                if *psi.grid() != grid {
                    return Err(Error::InvalidInput("snapshots live on different grids".into()));
                }
                let polar = polar_decompose(psi, eps_node, cfg)?;
                let q = quantum_potential(&polar, cfg)?;
                let v = velocity_field(psi, eps_node, cfg)?;
                let valid: Vec<bool> = q.valid_mask.iter().zip(&v.valid_mask).map(|(a, b)| *a && *b).collect();
                Ok(Snapshot {
                    v: CubicInterpolant::new(grid, v.v)?,
                    q: CubicInterpolant::new(grid, q.q)?,
                    rho: CubicInterpolant::new(grid, polar.rho)?,
                    valid,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid, times, snapshots })
    }

    /// Crank–Nicolson run recording a snapshot every `record_every` steps.
    pub fn from_reference(
        spec: &PotentialSpec,
        psi0: &ComplexField,
        window: &TimeWindow,
        record_every: usize,
        eps_node: f64,
        cfg: &SystemConfig,
    ) -> Result<Self> {
        if record_every == 0 || !window.steps.is_multiple_of(record_every) {
            return Err(Error::InvalidInput(format!(
                "record interval {record_every} must divide the step count {}",
                window.steps
            )));
        }
        let stepper = CrankNicolson::new(spec, *psi0.grid(), window.dt(), cfg)?;
        let mut values = psi0.values().to_vec();
        let mut fields = vec![psi0.clone()];
        let mut times = vec![window.t0];
        for s in 1..=window.steps {
            stepper.step(&mut values);
            if s % record_every == 0 {
                fields.push(ComplexField::new(*psi0.grid(), values.clone())?);
                times.push(window.time(s));
            }
        }
        Self::new(times, &fields, eps_node, cfg)
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    fn probe(&self, x: f64, t: f64, pick: impl Fn(&Snapshot) -> &CubicInterpolant) -> Probe {
        let Some((i, _)) = self.grid.locate(x) else {
            return Probe::Boundary;
        };
        let m = self.grid.len();
        if i < BOUNDARY_POINTS || i + 1 + BOUNDARY_POINTS >= m {
            return Probe::Boundary;
        }
        let n = self.times.len();
        let k = match self.times.binary_search_by(|s| s.partial_cmp(&t).expect("finite times")) {
            Ok(k) => k.min(n - 2),
            Err(0) => return Probe::Boundary,
            Err(k) if k >= n => return Probe::Boundary,
            Err(k) => k - 1,
        };
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        let mut acc = 0.0;
        for (snap, weight) in [(&self.snapshots[k], 1.0 - w), (&self.snapshots[k + 1], w)] {
            if (i - 1..=i + 2).any(|j| !snap.valid[j]) {
                return Probe::Node;
            }
            acc += weight * pick(snap).eval(x).expect("inside grid");
        }
        Probe::Value(acc)
    }
}

impl GuidanceField for GridEvolution {
    fn step_times(&self) -> &[f64] {
        &self.times
    }

    fn velocity(&self, x: f64, t: f64) -> Probe {
        self.probe(x, t, |s| &s.v)
    }

    fn quantum_potential(&self, x: f64, t: f64) -> Probe {
        self.probe(x, t, |s| &s.q)
    }

    fn density(&self, x: f64, t: f64) -> Probe {
        self.probe(x, t, |s| &s.rho)
    }
}

/// Exactly evolving Gaussian under a quadratic potential.
#[derive(Debug, Clone)]
pub struct GaussianGuidance {
    initial: GaussianParams,
    stiffness: f64,
    mass: f64,
    hbar: f64,
    times: Vec<f64>,
}

impl GaussianGuidance {
    pub fn new(initial: GaussianParams, spec: &PotentialSpec, window: &TimeWindow, cfg: &SystemConfig) -> Result<Self> {
        let stiffness = spec
            .stiffness()
            .ok_or_else(|| Error::InvalidInput("Gaussian guidance needs a free or harmonic potential".into()))?;
        Ok(Self { initial, stiffness, mass: cfg.single_mass()?, hbar: cfg.hbar, times: window.times() })
    }

    pub fn state(&self, t: f64) -> GaussianParams {
        self.initial
            .evolve_exact(self.stiffness, self.mass, self.hbar, t - self.times[0])
            .expect("exact evolution keeps the packet normalizable")
    }

    fn in_range(&self, t: f64) -> bool {
        let (a, b) = (self.times[0], *self.times.last().expect("non-empty"));
        t >= a.min(b) && t <= a.max(b)
    }
}

impl GuidanceField for GaussianGuidance {
    fn step_times(&self) -> &[f64] {
        &self.times
    }

    fn velocity(&self, x: f64, t: f64) -> Probe {
        if !self.in_range(t) {
            return Probe::Boundary;
        }
        Probe::Value(self.state(t).velocity(x, self.mass, self.hbar))
    }

    fn quantum_potential(&self, x: f64, t: f64) -> Probe {
        if !self.in_range(t) {
            return Probe::Boundary;
        }
        Probe::Value(self.state(t).quantum_potential(x, self.mass, self.hbar))
    }

    fn density(&self, x: f64, t: f64) -> Probe {
        if !self.in_range(t) {
            return Probe::Boundary;
        }
        Probe::Value(self.state(t).eval(x, self.hbar).norm_sqr())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Completed,
    Node,
    Boundary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BohmTrajectory {
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    /// `m v` along the path.
    pub momenta: Vec<f64>,
    pub quantum_potential: Vec<f64>,
    pub termination: Termination,
}

impl BohmTrajectory {
    pub fn last_position(&self) -> f64 {
        *self.positions.last().expect("trajectories hold the start point")
    }

    pub fn last_momentum(&self) -> f64 {
        *self.momenta.last().expect("trajectories hold the start point")
    }
}

fn value(p: Probe) -> std::result::Result<f64, Termination> {
    match p {
        Probe::Value(v) => Ok(v),
        Probe::Node => Err(Termination::Node),
        Probe::Boundary => Err(Termination::Boundary),
    }
}

/// RK4 on `dx/dt = v(x, t)`, one step per interval of `field.step_times()`.
pub fn integrate_bohm_trajectory(field: &dyn GuidanceField, x0: f64, cfg: &SystemConfig) -> Result<BohmTrajectory> {
    let mass = cfg.single_mass()?;
    let times = field.step_times();
    let t0 = times[0];
    let start = value(field.velocity(x0, t0)).and_then(|v| Ok((v, value(field.quantum_potential(x0, t0))?)));
    let (v0, q0) = start.map_err(|reason| Error::Domain(format!("start point x0 = {x0} is not admissible ({reason:?})")))?;
    let mut traj = BohmTrajectory {
        times: vec![t0],
        positions: vec![x0],
        momenta: vec![mass * v0],
        quantum_potential: vec![q0],
        termination: Termination::Completed,
    };
    let mut x = x0;
    for w in times.windows(2) {
        let (t, h) = (w[0], w[1] - w[0]);
        let step = || -> std::result::Result<(f64, f64, f64), Termination> {
            let k1 = value(field.velocity(x, t))?;
            let k2 = value(field.velocity(x + 0.5 * h * k1, t + 0.5 * h))?;
            let k3 = value(field.velocity(x + 0.5 * h * k2, t + 0.5 * h))?;
            let k4 = value(field.velocity(x + h * k3, w[1]))?;
            let next = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            Ok((next, value(field.velocity(next, w[1]))?, value(field.quantum_potential(next, w[1]))?))
        };
        match step() {
            Ok((next, v, q)) => {
                if !next.is_finite() {
                    return Err(Error::BlowUp { t: w[1] });
                }
                x = next;
                traj.times.push(w[1]);
                traj.positions.push(x);
                traj.momenta.push(mass * v);
                traj.quantum_potential.push(q);
            }
            Err(reason) => {
                traj.termination = reason;
                break;
            }
        }
    }
    Ok(traj)
}

/// Independent trajectories from every start point, integrated in parallel.
pub fn integrate_ensemble(
    field: &dyn GuidanceField,
    starts: &[f64],
    cfg: &SystemConfig,
) -> Vec<Result<BohmTrajectory>> {
    starts.par_iter().map(|&x0| integrate_bohm_trajectory(field, x0, cfg)).collect()
}

/// Sample indices `1, 2, 4, 8, …` inside a trajectory of `len` points.
fn ladder(len: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |k| Some(k * 2)).take_while(|k| *k < len).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantumPotentialDrift {
    /// `(t - t0, |Q(x(t), t) - Q(x0, t0)|)` on the doubling ladder of sample indices.
    pub samples: Vec<(f64, f64)>,
    pub order: f64,
}

/// Drift of `Q` along a trajectory. Drifts below `1e-12 max|Q|` count as exact
/// agreement, which the order fit reports as `+inf`.
pub fn quantum_potential_drift(traj: &BohmTrajectory) -> Result<QuantumPotentialDrift> {
    let n = traj.positions.len();
    let idx = ladder(n);
    if idx.len() < 3 {
        return Err(Error::TooFewSamples { needed: 3, have: idx.len() });
    }
    let q0 = traj.quantum_potential[0];
    let floor = 1e-12 * traj.quantum_potential.iter().fold(0.0f64, |a, q| a.max(q.abs()));
    let samples: Vec<(f64, f64)> = idx
        .iter()
        .map(|&k| {
            let d = (traj.quantum_potential[k] - q0).abs();
            (traj.times[k] - traj.times[0], if d <= floor { 0.0 } else { d })
        })
        .collect();
    let order = fit_convergence_order(&samples)?;
    Ok(QuantumPotentialDrift { samples, order })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShortTimeDeviation {
    pub dt: f64,
    /// `|x(dt) - x0 - p0 dt / m|`.
    pub position: f64,
    /// `|p(dt) - p0 + ∇V(x0) dt|`.
    pub momentum: f64,
}

/// Deviations from the free-streaming short-time laws on the doubling ladder.
pub fn short_time_deviations(traj: &BohmTrajectory, spec: &PotentialSpec, cfg: &SystemConfig) -> Result<Vec<ShortTimeDeviation>> {
    let mass = cfg.single_mass()?;
    let (x0, p0) = (traj.positions[0], traj.momenta[0]);
    let force = grad_potential(spec, &[x0])?[0];
    Ok(ladder(traj.positions.len())
        .into_iter()
        .map(|k| {
            let dt = traj.times[k] - traj.times[0];
            ShortTimeDeviation {
                dt,
                position: (traj.positions[k] - x0 - p0 * dt / mass).abs(),
                momentum: (traj.momenta[k] - p0 + force * dt).abs(),
            }
        })
        .collect())
}

/// `rho(x(t), t) |dx(t)/dx0| / rho(x0, t0)` at the final time for every
/// interior member of an ensemble of neighbouring trajectories (ordered starts).
pub fn density_transport(field: &dyn GuidanceField, starts: &[f64], cfg: &SystemConfig) -> Result<Vec<f64>> {
    if starts.len() < 3 {
        return Err(Error::TooFewSamples { needed: 3, have: starts.len() });
    }
    let trajs = integrate_ensemble(field, starts, cfg).into_iter().collect::<Result<Vec<_>>>()?;
    if let Some(t) = trajs.iter().find(|t| t.termination != Termination::Completed) {
        return Err(Error::Domain(format!("trajectory from {} stopped early ({:?})", t.positions[0], t.termination)));
    }
    let t0 = field.step_times()[0];
    let t1 = *field.step_times().last().expect("non-empty");
    (1..starts.len() - 1)
        .map(|k| {
            let jac = (trajs[k + 1].last_position() - trajs[k - 1].last_position()) / (starts[k + 1] - starts[k - 1]);
            let r1 = value(field.density(trajs[k].last_position(), t1));
            let r0 = value(field.density(starts[k], t0));
            match (r0, r1) {
                (Ok(r0), Ok(r1)) if r0 > 0.0 => Ok(r1 * jac.abs() / r0),
                _ => Err(Error::Domain(format!("density unavailable along trajectory {k}"))),
            }
        })
        .collect()
}
