//! Repeated position observation. After each interval the state is replaced
//! by a Gaussian of width `sigma_meas` centred on the observed point, carrying
//! the Bohm momentum observed there; runs are compared with the classical flow.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bohm::{integrate_bohm_trajectory, GridEvolution, Termination};
use crate::error::{Error, Result};
use crate::flows::{
    classical_flow, quantum_flow, AlgorithmFamily, GaussianQ, GaussianQuantumTerm, HamiltonianSpec, PhaseSpacePoint,
};
use crate::numerics::{ComplexField, SystemConfig, TimeWindow};
use crate::propagators::GaussianParams;

pub const DEFAULT_SIGMA_MEAS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObservationMode {
    WavefunctionLevel,
    #[default]
    FlowLevel,
}

/// Momentum assigned to the re-prepared state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MomentumRule {
    /// `p = ∇S` of the state just before observation.
    #[default]
    BohmMomentum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSchedule {
    pub intervals: usize,
    pub sigma_meas: f64,
    pub mode: ObservationMode,
    pub momentum_rule: MomentumRule,
    /// Shape of the per-segment quantum potential at flow level.
    pub segment_q: GaussianQ,
    /// Integration steps inside each segment.
    pub substeps: usize,
}

impl MeasurementSchedule {
    pub fn new(intervals: usize, sigma_meas: f64) -> Result<Self> {
        if intervals == 0 {
            return Err(Error::InvalidInput("a schedule needs at least one interval".into()));
        }
        if !(sigma_meas > 0.0 && sigma_meas.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma_meas must be positive, got {sigma_meas}")));
        }
        Ok(Self {
            intervals,
            sigma_meas,
            mode: ObservationMode::default(),
            momentum_rule: MomentumRule::default(),
            segment_q: GaussianQ::default(),
            substeps: 64,
        })
    }

    pub fn with_mode(mut self, mode: ObservationMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_segment_q(mut self, q: GaussianQ) -> Self {
        self.segment_q = q;
        self
    }

    pub fn with_substeps(mut self, substeps: usize) -> Result<Self> {
        if substeps == 0 {
            return Err(Error::InvalidInput("at least one substep per segment is required".into()));
        }
        self.substeps = substeps;
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub t: f64,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

/// Sampled path of one segment between two observations.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPath {
    pub times: Vec<f64>,
    pub states: Vec<PhaseSpacePoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZenoRun {
    /// `N + 1` records, the first being the start point.
    pub records: Vec<ObservationRecord>,
    pub segments: Vec<SegmentPath>,
    pub endpoint: PhaseSpacePoint,
    pub classical_endpoint: PhaseSpacePoint,
    /// Phase-space distance between `endpoint` and `classical_endpoint`.
    pub error: f64,
}

/// Normalized Gaussian of width `sigma_meas` centred at `x_obs` with phase
/// gradient `p_obs`.
pub fn reprepare(x_obs: f64, p_obs: f64, sigma_meas: f64) -> Result<GaussianParams> {
    GaussianParams::normalized(x_obs, p_obs, sigma_meas)
}

fn record(t: f64, z: &PhaseSpacePoint) -> ObservationRecord {
    ObservationRecord { t, x: z.x.clone(), p: z.p.clone() }
}

fn classical_reference(h: &HamiltonianSpec, z0: &PhaseSpacePoint, window: &TimeWindow, steps: usize) -> Result<PhaseSpacePoint> {
    let fine = TimeWindow::new(window.t0, window.t, steps.max(4096))?;
    Ok(classical_flow(&h.without_quantum(), z0, &fine)?.endpoint().clone())
}

fn finish(
    h: &HamiltonianSpec,
    z0: &PhaseSpacePoint,
    window: &TimeWindow,
    records: Vec<ObservationRecord>,
    segments: Vec<SegmentPath>,
    steps: usize,
) -> Result<ZenoRun> {
    let endpoint = segments.last().and_then(|s| s.states.last()).cloned().unwrap_or_else(|| z0.clone());
    let classical_endpoint = classical_reference(h, z0, window, steps)?;
    let error = endpoint.distance(&classical_endpoint);
    Ok(ZenoRun { records, segments, endpoint, classical_endpoint, error })
}

/// Flow-level run: segment `j` follows `H + Q^j`, with `Q^j` the quantum
/// potential of the state re-prepared at `t_j` (frozen or thawed per the
/// schedule). `window.steps` is ignored; the schedule fixes the subdivision.
pub fn zeno_run_flow(h: &HamiltonianSpec, schedule: &MeasurementSchedule, z0: &PhaseSpacePoint, window: &TimeWindow) -> Result<ZenoRun> {
    if schedule.mode != ObservationMode::FlowLevel {
        return Err(Error::InvalidInput("schedule is not in flow-level mode".into()));
    }
    let marks = TimeWindow::new(window.t0, window.t, schedule.intervals)?;
    let classical = h.without_quantum();
    let mut z = z0.clone();
    let mut records = vec![record(window.t0, z0)];
    let mut segments = Vec::with_capacity(schedule.intervals);
    for j in 0..schedule.intervals {
        let (tj, tn) = (marks.time(j), marks.time(j + 1));
        let packets = z
            .x
            .iter()
            .zip(&z.p)
            .map(|(x, p)| reprepare(*x, *p, schedule.sigma_meas))
            .collect::<Result<Vec<_>>>()?;
        let q = GaussianQuantumTerm::new(packets, &classical.potential, tj, schedule.segment_q, &classical.cfg)?;
        let hj = HamiltonianSpec::with_quantum(classical.potential.clone(), classical.cfg.clone(), Arc::new(q));
        let flow = quantum_flow(&hj, &z, &TimeWindow::new(tj, tn, schedule.substeps)?)
            .map_err(|e| Error::Subinterval { index: j, source: Box::new(e) })?;
        z = flow.endpoint().clone();
        records.push(record(tn, &z));
        segments.push(SegmentPath { times: flow.times, states: flow.states });
    }
    finish(h, z0, window, records, segments, schedule.intervals * schedule.substeps)
}

/// Wavefunction-level run in one dimension. Each segment evolves the current
/// state with Crank–Nicolson (`schedule.substeps` steps), follows the Bohm
/// trajectory from the previous observation, and collapses onto a Gaussian
/// at its endpoint.
pub fn zeno_run_wavefunction(
    h: &HamiltonianSpec,
    schedule: &MeasurementSchedule,
    psi0: &ComplexField,
    x0: f64,
    window: &TimeWindow,
    eps_node: f64,
) -> Result<ZenoRun> {
    if schedule.mode != ObservationMode::WavefunctionLevel {
        return Err(Error::InvalidInput("schedule is not in wavefunction-level mode".into()));
    }
    if h.quantum.is_some() {
        return Err(Error::InvalidInput("wavefunction-level runs take the classical Hamiltonian".into()));
    }
    let cfg: &SystemConfig = &h.cfg;
    cfg.single_mass()?;
    let grid = *psi0.grid();
    let marks = TimeWindow::new(window.t0, window.t, schedule.intervals)?;
    let mut psi = psi0.clone();
    let mut x = x0;
    let mut records = Vec::with_capacity(schedule.intervals + 1);
    let mut segments = Vec::with_capacity(schedule.intervals);
    let mut start = None;
    for j in 0..schedule.intervals {
        let (tj, tn) = (marks.time(j), marks.time(j + 1));
        let segment = || -> Result<_> {
            let evo = GridEvolution::from_reference(&h.potential, &psi, &TimeWindow::new(tj, tn, schedule.substeps)?, 1, eps_node, cfg)?;
            let traj = integrate_bohm_trajectory(&evo, x, cfg)?;
            if traj.termination != Termination::Completed {
                return Err(Error::Domain(format!("Bohm trajectory from x = {x} stopped early ({:?})", traj.termination)));
            }
            Ok(traj)
        };
        let traj = segment().map_err(|e| Error::Subinterval { index: j, source: Box::new(e) })?;
        let states = traj
            .positions
            .iter()
            .zip(&traj.momenta)
            .map(|(x, p)| PhaseSpacePoint::one_d(*x, *p))
            .collect::<Result<Vec<_>>>()?;
        if j == 0 {
            records.push(record(tj, &states[0]));
            start = Some(states[0].clone());
        }
        let end = states.last().expect("completed trajectories hold samples").clone();
        records.push(record(tn, &end));
        x = end.x[0];
        psi = reprepare(x, end.p[0], schedule.sigma_meas)?.to_field(grid, cfg.hbar)?;
        segments.push(SegmentPath { times: traj.times, states });
    }
    let z0 = start.expect("at least one interval");
    finish(h, &z0, window, records, segments, schedule.intervals * schedule.substeps)
}

/// Flow-level Zeno composition over `[t0, t]` viewed as an algorithm family.
#[derive(Debug, Clone)]
pub struct ZenoAlgorithm {
    h: HamiltonianSpec,
    schedule: MeasurementSchedule,
}

impl ZenoAlgorithm {
    pub fn new(h: &HamiltonianSpec, schedule: MeasurementSchedule) -> Self {
        Self { h: h.without_quantum(), schedule: schedule.with_mode(ObservationMode::FlowLevel) }
    }
}

impl AlgorithmFamily for ZenoAlgorithm {
    fn name(&self) -> &str {
        "zeno-composition"
    }

    fn local_order(&self) -> u32 {
        2
    }

    fn generator(&self) -> &HamiltonianSpec {
        &self.h
    }

    fn apply(&self, z: &PhaseSpacePoint, t: f64, t0: f64) -> Result<PhaseSpacePoint> {
        if t == t0 {
            return Ok(z.clone());
        }
        Ok(zeno_run_flow(&self.h, &self.schedule, z, &TimeWindow::new(t0, t, 1)?)?.endpoint)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MottTrack {
    pub seed: u64,
    /// Emission angle in radians.
    pub direction: f64,
    pub points: Vec<[f64; 2]>,
    /// Largest perpendicular distance from the least-squares line over the track length.
    pub straightness: f64,
    pub run: ZenoRun,
}

/// Total-least-squares straightness of a planar point set.
pub fn straightness(points: &[[f64; 2]]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::TooFewSamples { needed: 3, have: points.len() });
    }
    let n = points.len() as f64;
    let (cx, cy) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p[0] / n, b + p[1] / n));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - cx, p[1] - cy);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (ux, uy) = (theta.cos(), theta.sin());
    let along: Vec<f64> = points.iter().map(|p| (p[0] - cx) * ux + (p[1] - cy) * uy).collect();
    let length = along.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - along.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(length > 0.0) {
        return Err(Error::Domain("track has zero length".into()));
    }
    let worst = points.iter().map(|p| ((p[0] - cx) * uy - (p[1] - cy) * ux).abs()).fold(0.0, f64::max);
    Ok(worst / length)
}

/// Emission from the origin at `speed` in a direction drawn from `seed`,
/// observed according to a flow-level schedule with at least 3 intervals.
pub fn mott_track_demo(
    h: &HamiltonianSpec,
    schedule: &MeasurementSchedule,
    speed: f64,
    seed: u64,
    window: &TimeWindow,
) -> Result<MottTrack> {
    if h.cfg.dof() != 2 {
        return Err(Error::InvalidInput(format!("the track demo needs 2 degrees of freedom, got {}", h.cfg.dof())));
    }
    if schedule.intervals < 3 {
        return Err(Error::InvalidInput(format!("the track demo needs at least 3 intervals, got {}", schedule.intervals)));
    }
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(Error::InvalidInput(format!("emission speed must be positive, got {speed}")));
    }
    let direction = ChaCha8Rng::seed_from_u64(seed).gen_range(0.0..2.0 * PI);
    let (ux, uy) = (direction.cos(), direction.sin());
    let z0 = PhaseSpacePoint::new(vec![0.0, 0.0], vec![h.cfg.mass(0) * speed * ux, h.cfg.mass(1) * speed * uy])?;
    let run = zeno_run_flow(h, schedule, &z0, window)?;
    let points: Vec<[f64; 2]> = run.records.iter().map(|r| [r.x[0], r.x[1]]).collect();
    let straightness = straightness(&points)?;
    Ok(MottTrack { seed, direction, points, straightness, run })
}
