//! Task dispatch. Sweep rows keep the order of the configured lists; a
//! summary row (sweep columns empty) closes every sweep of 3 or more entries.

use std::fmt;
use std::sync::Arc;

use qtraj::action::{exact_action, short_time_action};
use qtraj::bohm::{
    continuity_residual, integrate_bohm_trajectory, quantum_potential_drift, short_time_deviations, GaussianGuidance,
    GridEvolution, GuidanceField, Termination,
};
use qtraj::flows::{
    classical_flow, euler_step_algorithm, quantum_flow, trotter_compose, GaussianQ, GaussianQuantumTerm, HamiltonianSpec,
    PhaseSpacePoint,
};
use qtraj::numerics::{fit_convergence_order, ComplexField, SpatialGrid, TimeWindow};
use qtraj::potentials::{AveragedPotential, PotentialSpec};
use qtraj::propagators::{
    apply_kernel, kernel, reference_evolve, time_slice_evolve, CrankNicolson, GaussianParams, KernelKind, KernelSpec,
};
use qtraj::zeno::{mott_track_demo, zeno_run_flow, zeno_run_wavefunction, MeasurementSchedule, ObservationMode};

use crate::config::{
    BohmOptions, BohmOutput, ConvergenceOptions, Guidance, InitialState, MottOptions, PropagateKernel, PropagateOptions,
    Reference, ScenarioConfig, SegmentQ, Study, TaskOptions, ZenoMode, ZenoOptions,
};
use crate::table::{Cell, ResultTable};

/// Steps of the classical reference in the Euler composition study.
const EULER_REFERENCE_STEPS: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct RunError {
    pub module: &'static str,
    pub operation: &'static str,
    pub message: String,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}::{}: {}", self.module, self.operation, self.message)
    }
}

impl std::error::Error for RunError {}

type Result<T> = std::result::Result<T, RunError>;

fn at(module: &'static str, operation: &'static str) -> impl Fn(qtraj::Error) -> RunError {
    move |e| RunError { module, operation, message: e.to_string() }
}

fn cli_error(message: impl Into<String>) -> RunError {
    RunError { module: "cli", operation: "run_scenario", message: message.into() }
}

fn fit(samples: &[(f64, f64)]) -> Result<Option<f64>> {
    if samples.len() < 3 {
        return Ok(None);
    }
    fit_convergence_order(samples).map(Some).map_err(at("numerics", "fit_convergence_order"))
}

fn initial_field(cfg: &ScenarioConfig, grid: SpatialGrid) -> Result<ComplexField> {
    match cfg.initial.as_ref().ok_or_else(|| cli_error("no initial state configured"))? {
        InitialState::Gaussian(g) => g.to_field(grid, cfg.system.hbar).map_err(at("propagators", "GaussianParams::to_field")),
        InitialState::Field(v) => ComplexField::new(grid, v.clone()).map_err(at("numerics", "ComplexField::new")),
    }
}

fn initial_gaussian(cfg: &ScenarioConfig) -> Result<GaussianParams> {
    match cfg.initial {
        Some(InitialState::Gaussian(g)) => Ok(g),
        _ => Err(cli_error("this run needs a gaussian initial state")),
    }
}

fn grid(cfg: &ScenarioConfig) -> Result<SpatialGrid> {
    cfg.grid.ok_or_else(|| cli_error("no grid configured"))
}

fn window(cfg: &ScenarioConfig) -> Result<TimeWindow> {
    cfg.time.ok_or_else(|| cli_error("no time window configured"))
}

fn ks_spec(cfg: &ScenarioConfig, nodes: usize) -> Result<KernelSpec> {
    let avg = AveragedPotential::new(cfg.potential.clone(), nodes).map_err(at("potentials", "AveragedPotential::new"))?;
    KernelSpec::new(KernelKind::KernerSutcliffe(avg), cfg.system.clone()).map_err(at("propagators", "KernelSpec::new"))
}

fn mehler_spec(cfg: &ScenarioConfig) -> Result<KernelSpec> {
    match cfg.potential {
        PotentialSpec::Harmonic { mass, omega } => {
            KernelSpec::new(KernelKind::Mehler { mass, omega }, cfg.system.clone()).map_err(at("propagators", "KernelSpec::new"))
        }
        _ => Err(cli_error("the harmonic closed form needs a harmonic potential")),
    }
}

fn segment_q(q: SegmentQ) -> GaussianQ {
    match q {
        SegmentQ::Frozen => GaussianQ::Frozen,
        SegmentQ::Thawed => GaussianQ::Thawed,
    }
}

/// Runs the configured study; `cfg.seed` already holds any command-line override.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ResultTable> {
    match &cfg.options {
        TaskOptions::Propagate(o) => propagate(cfg, o),
        TaskOptions::Bohm(o) => bohm(cfg, o),
        TaskOptions::Convergence(o) => convergence(cfg, o),
        TaskOptions::Zeno(o) => zeno(cfg, o),
        TaskOptions::Mott(o) => mott(cfg, o),
    }
}

fn propagate(cfg: &ScenarioConfig, o: &PropagateOptions) -> Result<ResultTable> {
    let grid = grid(cfg)?;
    let w = window(cfg)?;
    let psi0 = initial_field(cfg, grid)?;
    let out = if o.kernel == PropagateKernel::CrankNicolson {
        reference_evolve(&cfg.potential, &psi0, &w, &cfg.system).map_err(at("propagators", "reference_evolve"))?
    } else {
        let spec = match o.kernel {
            PropagateKernel::ExactFree => KernelSpec::new(KernelKind::ExactFree, cfg.system.clone()).map_err(at("propagators", "KernelSpec::new"))?,
            PropagateKernel::Mehler => mehler_spec(cfg)?,
            PropagateKernel::VanVleck => KernelSpec::new(KernelKind::VanVleck(cfg.potential.clone()), cfg.system.clone())
                .map_err(at("propagators", "KernelSpec::new"))?,
            _ => ks_spec(cfg, o.quadrature_nodes)?,
        };
        time_slice_evolve(&spec, &psi0, &w, o.norm_drift_bound).map_err(at("propagators", "time_slice_evolve"))?.field
    };
    let mut t = ResultTable::new(&["x", "re", "im", "density"]);
    for (i, v) in out.values().iter().enumerate() {
        t.push(vec![grid.x(i).into(), v.re.into(), v.im.into(), v.norm_sqr().into()]);
    }
    Ok(t)
}

fn guidance(cfg: &ScenarioConfig, o: &BohmOptions, w: &TimeWindow) -> Result<Box<dyn GuidanceField>> {
    Ok(match o.guidance {
        Guidance::Grid => {
            let psi0 = initial_field(cfg, grid(cfg)?)?;
            Box::new(
                GridEvolution::from_reference(&cfg.potential, &psi0, w, o.record_every, o.node_eps, &cfg.system)
                    .map_err(at("bohm", "GridEvolution::from_reference"))?,
            )
        }
        Guidance::Gaussian => Box::new(
            GaussianGuidance::new(initial_gaussian(cfg)?, &cfg.potential, w, &cfg.system).map_err(at("bohm", "GaussianGuidance::new"))?,
        ),
    })
}

fn termination(t: Termination) -> Cell {
    Cell::Text(
        match t {
            Termination::Completed => "completed",
            Termination::Node => "node",
            Termination::Boundary => "boundary",
        }
        .into(),
    )
}

fn bohm(cfg: &ScenarioConfig, o: &BohmOptions) -> Result<ResultTable> {
    let w = window(cfg)?;
    match o.output {
        BohmOutput::Trajectories => {
            let field = guidance(cfg, o, &w)?;
            let mut t = ResultTable::new(&["start", "t", "x", "p", "q", "termination"]);
            for &x0 in &o.starts {
                let traj = integrate_bohm_trajectory(field.as_ref(), x0, &cfg.system).map_err(at("bohm", "integrate_bohm_trajectory"))?;
                let last = traj.positions.len() - 1;
                for k in 0..=last {
                    let end = if k == last { termination(traj.termination) } else { Cell::Empty };
                    t.push(vec![
                        x0.into(),
                        traj.times[k].into(),
                        traj.positions[k].into(),
                        traj.momenta[k].into(),
                        traj.quantum_potential[k].into(),
                        end,
                    ]);
                }
            }
            Ok(t)
        }
        BohmOutput::ShortTimeLaws => {
            let mut t = ResultTable::new(&["start", "dt", "position_deviation", "momentum_deviation", "position_order", "momentum_order"]);
            for &x0 in &o.starts {
                let (mut pos, mut mom) = (Vec::new(), Vec::new());
                for &dt in &o.dt {
                    let wdt = TimeWindow::new(w.t0, w.t0 + dt, w.steps).map_err(at("numerics", "TimeWindow::new"))?;
                    let field = guidance(cfg, o, &wdt)?;
                    let traj = integrate_bohm_trajectory(field.as_ref(), x0, &cfg.system).map_err(at("bohm", "integrate_bohm_trajectory"))?;
                    let dev = short_time_deviations(&traj, &cfg.potential, &cfg.system).map_err(at("bohm", "short_time_deviations"))?;
                    let last = dev.last().ok_or_else(|| cli_error("time.steps must be at least 2 for the short-time laws"))?;
                    pos.push((dt.abs(), last.position));
                    mom.push((dt.abs(), last.momentum));
                    t.push(vec![x0.into(), dt.into(), last.position.into(), last.momentum.into(), Cell::Empty, Cell::Empty]);
                }
                if let (Some(pp), Some(pm)) = (fit(&pos)?, fit(&mom)?) {
                    t.push(vec![x0.into(), Cell::Empty, Cell::Empty, Cell::Empty, pp.into(), pm.into()]);
                }
            }
            Ok(t)
        }
        BohmOutput::Drift => {
            let field = guidance(cfg, o, &w)?;
            let mut t = ResultTable::new(&["start", "elapsed", "q_drift", "fitted_order"]);
            for &x0 in &o.starts {
                let traj = integrate_bohm_trajectory(field.as_ref(), x0, &cfg.system).map_err(at("bohm", "integrate_bohm_trajectory"))?;
                let drift = quantum_potential_drift(&traj).map_err(at("bohm", "quantum_potential_drift"))?;
                for &(dt, d) in &drift.samples {
                    t.push(vec![x0.into(), dt.into(), d.into(), Cell::Empty]);
                }
                t.push(vec![x0.into(), Cell::Empty, Cell::Empty, drift.order.into()]);
            }
            Ok(t)
        }
    }
}

/// Appends `(sweep, error)` rows and the summary row; the order is fitted
/// against `h(sweep)`.
fn sweep_table(columns: [&str; 3], rows: Vec<(Cell, f64, f64)>) -> Result<ResultTable> {
    let mut t = ResultTable::new(&columns);
    let samples: Vec<(f64, f64)> = rows.iter().map(|(_, h, e)| (*h, *e)).collect();
    for (key, _, e) in rows {
        t.push(vec![key, e.into(), Cell::Empty]);
    }
    if let Some(p) = fit(&samples)? {
        t.push(vec![Cell::Empty, Cell::Empty, p.into()]);
    }
    Ok(t)
}

fn convergence(cfg: &ScenarioConfig, o: &ConvergenceOptions) -> Result<ResultTable> {
    let t0 = cfg.time.map_or(0.0, |w| w.t0);
    match o.study {
        Study::Kernel => {
            let (ks, mehler) = (ks_spec(cfg, o.quadrature_nodes)?, mehler_spec(cfg)?);
            let rows = o
                .dt
                .iter()
                .map(|&dt| {
                    let a = kernel(&ks, &[o.x], &[o.x0], t0 + dt, t0).map_err(at("propagators", "kernel"))?;
                    let b = kernel(&mehler, &[o.x], &[o.x0], t0 + dt, t0).map_err(at("propagators", "kernel"))?;
                    Ok((dt.into(), dt.abs(), (a - b).norm()))
                })
                .collect::<Result<Vec<_>>>()?;
            sweep_table(["dt", "abs_error", "fitted_order"], rows)
        }
        Study::Action => {
            let avg = AveragedPotential::new(cfg.potential.clone(), o.quadrature_nodes).map_err(at("potentials", "AveragedPotential::new"))?;
            let rows = o
                .dt
                .iter()
                .map(|&dt| {
                    let e = exact_action(&cfg.potential, &[o.x], &[o.x0], t0 + dt, t0, &cfg.system).map_err(at("action", "exact_action"))?;
                    let s = short_time_action(&avg, &[o.x], &[o.x0], t0 + dt, t0, &cfg.system).map_err(at("action", "short_time_action"))?;
                    Ok((dt.into(), dt.abs(), (e.value - s.value).abs()))
                })
                .collect::<Result<Vec<_>>>()?;
            sweep_table(["dt", "abs_error", "fitted_order"], rows)
        }
        Study::SingleSlice => {
            let psi0 = initial_field(cfg, grid(cfg)?)?;
            let ks = ks_spec(cfg, o.quadrature_nodes)?;
            let rows = o
                .dt
                .iter()
                .map(|&dt| {
                    let slice = apply_kernel(&ks, &psi0, t0 + dt, t0).map_err(at("propagators", "apply_kernel"))?;
                    let reference = reference_field(cfg, o, &psi0, t0, t0 + dt, o.reference_steps)?;
                    let e = slice.l2_distance(&reference).map_err(at("numerics", "l2_distance"))?;
                    Ok((dt.into(), dt.abs(), e))
                })
                .collect::<Result<Vec<_>>>()?;
            sweep_table(["dt", "l2_error", "fitted_order"], rows)
        }
        Study::TimeSlicing => {
            let w = window(cfg)?;
            let psi0 = initial_field(cfg, grid(cfg)?)?;
            let ks = ks_spec(cfg, o.quadrature_nodes)?;
            let reference = reference_field(cfg, o, &psi0, w.t0, w.t, o.reference_steps)?;
            let rows = o
                .slices
                .iter()
                .map(|&n| {
                    let wn = TimeWindow::new(w.t0, w.t, n).map_err(at("numerics", "TimeWindow::new"))?;
                    let out = time_slice_evolve(&ks, &psi0, &wn, o.norm_drift_bound).map_err(at("propagators", "time_slice_evolve"))?;
                    let e = out.field.l2_distance(&reference).map_err(at("numerics", "l2_distance"))?;
                    Ok((n.into(), 1.0 / n as f64, e))
                })
                .collect::<Result<Vec<_>>>()?;
            sweep_table(["n", "l2_error", "fitted_order"], rows)
        }
        Study::FlowGap => {
            let packet = initial_gaussian(cfg)?;
            let mass = cfg.system.mass(0);
            let q = GaussianQuantumTerm::new(vec![packet], &cfg.potential, t0, segment_q(o.quantum), &cfg.system)
                .map_err(at("flows", "GaussianQuantumTerm::new"))?;
            let hq = HamiltonianSpec::with_quantum(cfg.potential.clone(), cfg.system.clone(), Arc::new(q));
            let hc = HamiltonianSpec::classical(cfg.potential.clone(), cfg.system.clone());
            let p = o.start_p.unwrap_or_else(|| mass * packet.velocity(o.start_x, mass, cfg.system.hbar));
            let z0 = PhaseSpacePoint::one_d(o.start_x, p).map_err(at("flows", "PhaseSpacePoint::new"))?;
            let rows = o
                .dt
                .iter()
                .map(|&dt| {
                    let w = TimeWindow::new(t0, t0 + dt, o.flow_steps).map_err(at("numerics", "TimeWindow::new"))?;
                    let a = quantum_flow(&hq, &z0, &w).map_err(at("flows", "quantum_flow"))?;
                    let b = classical_flow(&hc, &z0, &w).map_err(at("flows", "classical_flow"))?;
                    Ok((dt.into(), dt.abs(), a.endpoint().distance(b.endpoint())))
                })
                .collect::<Result<Vec<_>>>()?;
            sweep_table(["dt", "phase_space_gap", "fitted_order"], rows)
        }
        Study::EulerComposition => {
            let w = window(cfg)?;
            let h = HamiltonianSpec::classical(cfg.potential.clone(), cfg.system.clone());
            let z0 = PhaseSpacePoint::one_d(o.start_x, o.start_p.unwrap_or(0.0)).map_err(at("flows", "PhaseSpacePoint::new"))?;
            let fine = TimeWindow::new(w.t0, w.t, EULER_REFERENCE_STEPS).map_err(at("numerics", "TimeWindow::new"))?;
            let target = classical_flow(&h, &z0, &fine).map_err(at("flows", "classical_flow"))?.endpoint().clone();
            let alg = euler_step_algorithm(&h);
            let mut t = ResultTable::new(&["n", "endpoint_x", "endpoint_p", "endpoint_error", "fitted_order"]);
            let mut samples = Vec::new();
            for &n in &o.slices {
                let wn = TimeWindow::new(w.t0, w.t, n).map_err(at("numerics", "TimeWindow::new"))?;
                let end = trotter_compose(&alg, &z0, &wn).map_err(at("flows", "trotter_compose"))?;
                let e = end.distance(&target);
                samples.push((1.0 / n as f64, e));
                t.push(vec![n.into(), end.x[0].into(), end.p[0].into(), e.into(), Cell::Empty]);
            }
            if let Some(p) = fit(&samples)? {
                t.push(vec![Cell::Empty, Cell::Empty, Cell::Empty, Cell::Empty, p.into()]);
            }
            Ok(t)
        }
        Study::Continuity => {
            let w = window(cfg)?;
            let base = grid(cfg)?;
            let packet = initial_gaussian(cfg)?;
            let rows = o
                .points
                .iter()
                .map(|&m| {
                    let g = SpatialGrid::new(base.x_min(), base.x_max(), m).map_err(at("numerics", "SpatialGrid::new"))?;
                    let psi0 = packet.to_field(g, cfg.system.hbar).map_err(at("propagators", "GaussianParams::to_field"))?;
                    let steps = ((m as f64 * o.steps_per_point).round() as usize).max(2);
                    let dt = w.duration() / steps as f64;
                    let cn = CrankNicolson::new(&cfg.potential, g, dt, &cfg.system).map_err(at("propagators", "CrankNicolson::new"))?;
                    let mut values = psi0.into_values();
                    for _ in 0..steps - 1 {
                        cn.step(&mut values);
                    }
                    let before = ComplexField::new(g, values.clone()).map_err(at("numerics", "ComplexField::new"))?;
                    cn.step(&mut values);
                    let after = ComplexField::new(g, values).map_err(at("numerics", "ComplexField::new"))?;
                    let r = continuity_residual(&before, &after, dt, qtraj::bohm::DEFAULT_NODE_EPS, &cfg.system)
                        .map_err(at("bohm", "continuity_residual"))?;
                    Ok((g.dx().into(), g.dx(), r.relative))
                })
                .collect::<Result<Vec<_>>>()?;
            sweep_table(["dx", "relative_residual", "fitted_order"], rows)
        }
    }
}

fn reference_field(cfg: &ScenarioConfig, o: &ConvergenceOptions, psi0: &ComplexField, t0: f64, t: f64, steps: usize) -> Result<ComplexField> {
    match o.reference {
        Reference::CrankNicolson => {
            let w = TimeWindow::new(t0, t, steps).map_err(at("numerics", "TimeWindow::new"))?;
            reference_evolve(&cfg.potential, psi0, &w, &cfg.system).map_err(at("propagators", "reference_evolve"))
        }
        Reference::Mehler => apply_kernel(&mehler_spec(cfg)?, psi0, t, t0).map_err(at("propagators", "apply_kernel")),
    }
}

fn endpoint_columns(dof: usize) -> Vec<String> {
    if dof == 1 {
        return vec!["endpoint_x".into(), "endpoint_p".into()];
    }
    let xs = (0..dof).map(|j| format!("endpoint_x{j}"));
    let ps = (0..dof).map(|j| format!("endpoint_p{j}"));
    xs.chain(ps).collect()
}

fn zeno(cfg: &ScenarioConfig, o: &ZenoOptions) -> Result<ResultTable> {
    let w = window(cfg)?;
    let h = HamiltonianSpec::classical(cfg.potential.clone(), cfg.system.clone());
    let mut columns = vec!["sigma_meas".to_string(), "n".to_string()];
    columns.extend(endpoint_columns(cfg.system.dof()));
    columns.push("classical_error".into());
    let mut t = ResultTable::with_columns(columns);
    let psi0 = match o.mode {
        ZenoMode::Wavefunction => Some(initial_field(cfg, grid(cfg)?)?),
        ZenoMode::Flow => None,
    };
    for &sigma in &o.sigma_meas {
        for &n in &o.intervals {
            let schedule = MeasurementSchedule::new(n, sigma)
                .and_then(|s| s.with_substeps(o.substeps))
                .map_err(at("zeno", "MeasurementSchedule::new"))?
                .with_segment_q(segment_q(o.segment_q));
            let run = match &psi0 {
                None => {
                    let z0 = PhaseSpacePoint::new(o.x0.clone(), o.p0.clone()).map_err(at("flows", "PhaseSpacePoint::new"))?;
                    zeno_run_flow(&h, &schedule, &z0, &w).map_err(at("zeno", "zeno_run_flow"))?
                }
                Some(psi0) => {
                    let schedule = schedule.with_mode(ObservationMode::WavefunctionLevel);
                    zeno_run_wavefunction(&h, &schedule, psi0, o.x0[0], &w, o.node_eps).map_err(at("zeno", "zeno_run_wavefunction"))?
                }
            };
            let mut row: Vec<Cell> = vec![sigma.into(), n.into()];
            row.extend(run.endpoint.x.iter().chain(&run.endpoint.p).map(|v| Cell::Float(*v)));
            row.push(run.error.into());
            t.push(row);
        }
    }
    Ok(t)
}

fn mott(cfg: &ScenarioConfig, o: &MottOptions) -> Result<ResultTable> {
    let seed = cfg.seed.ok_or_else(|| cli_error("task mott needs a seed (config `seed` or --seed)"))?;
    let w = window(cfg)?;
    let h = HamiltonianSpec::classical(cfg.potential.clone(), cfg.system.clone());
    let schedule = MeasurementSchedule::new(o.intervals, o.sigma_meas).map_err(at("zeno", "MeasurementSchedule::new"))?;
    let mut t = ResultTable::new(&["seed", "direction", "straightness", "endpoint_x", "endpoint_y"]);
    for k in 0..o.tracks as u64 {
        let s = seed.wrapping_add(k);
        let track = mott_track_demo(&h, &schedule, o.speed, s, &w).map_err(at("zeno", "mott_track_demo"))?;
        let end = track.points.last().copied().unwrap_or([0.0, 0.0]);
        t.push(vec![s.into(), track.direction.into(), track.straightness.into(), end[0].into(), end[1].into()]);
    }
    Ok(t)
}
