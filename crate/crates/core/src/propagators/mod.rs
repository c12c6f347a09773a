//! Propagator kernels `K(x, x0, t, t0)`, their action on sampled wavefunctions,
//! time slicing, and a Crank–Nicolson reference integrator.
//!
//! Square-root branches follow the physical continuation from `dt -> 0+`:
//! the free amplitude carries `exp(-i pi/4 sign dt)`, and the harmonic one an
//! extra `exp(-i pi/2 sign dt)` per caustic crossed.

mod gaussian;
mod reference;

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use num_complex::Complex64;
use rayon::prelude::*;

pub use gaussian::{gaussian_ks_closed_form, GaussianParams, QuadraticKernel};
pub use reference::{reference_evolve, reference_evolve_with, CrankNicolson, ReferenceOptions};

use crate::action::{checked_sin, exact_action, exact_action_partials, frequency, short_time_action};
use crate::error::{Error, Result};
use crate::numerics::{ComplexField, SystemConfig, TimeWindow};
use crate::potentials::{AveragedPotential, PotentialSpec};

/// Samples with `|psi| <= SUPPORT_CUTOFF * max|psi|` are dropped from kernel sums.
pub const SUPPORT_CUTOFF: f64 = 1e-12;
/// Default bound on the per-slice relative norm change.
pub const DEFAULT_NORM_DRIFT_BOUND: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub enum KernelKind {
    ExactFree,
    /// Exact harmonic propagator for the well `V = mass ω² x² / 2`.
    Mehler { mass: f64, omega: f64 },
    /// Exact action and trajectory density; quadratic potentials only.
    VanVleck(PotentialSpec),
    /// Short-time kernel built on the segment-averaged potential.
    KernerSutcliffe(AveragedPotential),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub cfg: SystemConfig,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, cfg: SystemConfig) -> Result<Self> {
        match &kind {
            KernelKind::Mehler { mass, omega } => {
                PotentialSpec::harmonic(*mass, *omega)?;
            }
            KernelKind::VanVleck(spec) if !spec.is_quadratic() => {
                return Err(Error::InvalidInput(
                    "Van Vleck kernel needs a free or harmonic potential (exact action)".into(),
                ))
            }
            _ => {}
        }
        Ok(Self { kind, cfg })
    }

    /// Stiffness of the quadratic well, when the kernel has one.
    fn stiffness(&self) -> Option<f64> {
        match &self.kind {
            KernelKind::ExactFree => Some(0.0),
            KernelKind::Mehler { mass, omega } => Some(mass * omega * omega),
            KernelKind::VanVleck(spec) => spec.stiffness(),
            KernelKind::KernerSutcliffe(_) => None,
        }
    }
}

fn time_step(t: f64, t0: f64) -> Result<f64> {
    let dt = t - t0;
    if dt == 0.0 {
        Err(Error::ZeroTimeStep)
    } else {
        Ok(dt)
    }
}

/// Number of caustics `ω|dt| = kπ` passed.
fn winding(omega: f64, dt: f64) -> f64 {
    (omega * dt.abs() / PI).floor()
}

/// `|density / (2 pi hbar)|^{1/2}` with the continued phase.
fn amplitude(density: f64, hbar: f64, windings: f64, dt: f64) -> Complex64 {
    let phase = -dt.signum() * (FRAC_PI_4 + FRAC_PI_2 * windings);
    Complex64::from_polar((density.abs() / (2.0 * PI * hbar)).sqrt(), phase)
}

/// Kernel value for `n`-dimensional endpoints.
pub fn kernel(spec: &KernelSpec, x: &[f64], x0: &[f64], t: f64, t0: f64) -> Result<Complex64> {
    let dt = time_step(t, t0)?;
    let cfg = &spec.cfg;
    let hbar = cfg.hbar;
    match &spec.kind {
        KernelKind::ExactFree => {
            let s = exact_action(&PotentialSpec::Free, x, x0, t, t0, cfg)?.value;
            let amp: Complex64 = cfg.masses.iter().map(|m| amplitude(m / dt, hbar, 0.0, dt)).product();
            Ok(amp * Complex64::from_polar(1.0, s / hbar))
        }
        KernelKind::Mehler { mass, omega } => {
            let k = mass * omega * omega;
            let mut value = Complex64::new(1.0, 0.0);
            for j in 0..cfg.dof() {
                let m = cfg.masses[j];
                let w = frequency(k, m);
                let s = checked_sin(w, dt)?;
                let c = (w * dt).cos();
                let exponent = m * w / (2.0 * hbar * s) * ((x[j] * x[j] + x0[j] * x0[j]) * c - 2.0 * x[j] * x0[j]);
                value *= amplitude(m * w / s, hbar, winding(w, dt), dt) * Complex64::from_polar(1.0, exponent);
            }
            Ok(value)
        }
        KernelKind::VanVleck(pot) => {
            let s = exact_action(pot, x, x0, t, t0, cfg)?.value;
            let partials = exact_action_partials(pot, x, x0, t, t0, cfg)?;
            let k = pot.stiffness().expect("validated quadratic");
            let mut amp = Complex64::new(1.0, 0.0);
            for (j, mixed) in partials.mixed.iter().enumerate() {
                let w = frequency(k, cfg.masses[j]);
                amp *= amplitude(-mixed, hbar, winding(w, dt), dt);
            }
            Ok(amp * Complex64::from_polar(1.0, s / hbar))
        }
        KernelKind::KernerSutcliffe(avg) => {
            let s = short_time_action(avg, x, x0, t, t0, cfg)?.value;
            let amp: Complex64 = cfg.masses.iter().map(|m| amplitude(m / dt, hbar, 0.0, dt)).product();
            Ok(amp * Complex64::from_polar(1.0, s / hbar))
        }
    }
}

/// Allocation-free one-dimensional kernel used inside the quadrature loops.
/// Short-time kernels over a quadratic well have a quadratic exponent; the
/// segment average of such a well is evaluated in closed form there.
enum PairKernel<'a> {
    Quadratic { amp: Complex64, d1: f64, d0: f64, b: f64, hbar: f64 },
    ShortTime { amp: Complex64, half_m_over_dt: f64, dt: f64, hbar: f64, avg: &'a AveragedPotential },
}

impl<'a> PairKernel<'a> {
    fn new(spec: &'a KernelSpec, dt: f64) -> Result<Self> {
        let m = spec.cfg.single_mass()?;
        let hbar = spec.cfg.hbar;
        let short_quadratic = |k: f64| -> Result<Self> {
            let q = QuadraticKernel::short_time(k, m, hbar, dt)?;
            Ok(Self::Quadratic { amp: amplitude(m / dt, hbar, 0.0, dt), d1: q.d1, d0: q.d0, b: q.b, hbar })
        };
        match &spec.kind {
            KernelKind::KernerSutcliffe(avg) => match avg.base().stiffness() {
                Some(k) => short_quadratic(k),
                None => Ok(Self::ShortTime {
                    amp: amplitude(m / dt, hbar, 0.0, dt),
                    half_m_over_dt: 0.5 * m / dt,
                    dt,
                    hbar,
                    avg,
                }),
            },
            _ => {
                let k = spec.stiffness().expect("quadratic kernels");
                if k == 0.0 {
                    return short_quadratic(0.0);
                }
                let q = QuadraticKernel::exact(k, m, hbar, dt)?;
                Ok(Self::Quadratic { amp: amplitude(q.b, hbar, winding(frequency(k, m), dt), dt), d1: q.d1, d0: q.d0, b: q.b, hbar })
            }
        }
    }

    #[inline]
    fn eval(&self, x: f64, x0: f64) -> Result<Complex64> {
        match *self {
            Self::Quadratic { amp, d1, d0, b, hbar } => {
                Ok(amp * Complex64::from_polar(1.0, (d1 * x * x + d0 * x0 * x0 - b * x * x0) / hbar))
            }
            Self::ShortTime { amp, half_m_over_dt, dt, hbar, avg } => {
                let d = x - x0;
                let s = half_m_over_dt * d * d - avg.value_1d(x, x0)? * dt;
                Ok(amp * Complex64::from_polar(1.0, s / hbar))
            }
        }
    }

    /// `∂S/∂x0` at the pair.
    fn phase_gradient(&self, x: f64, x0: f64) -> Result<f64> {
        match *self {
            Self::Quadratic { d0, b, .. } => Ok(2.0 * d0 * x0 - b * x),
            Self::ShortTime { half_m_over_dt, dt, avg, .. } => {
                Ok(-2.0 * half_m_over_dt * (x - x0) - avg.gradient_x0_1d(x, x0)? * dt)
            }
        }
    }
}

/// Contiguous index range holding every sample above the support cutoff.
fn support(psi: &ComplexField) -> Option<(usize, usize)> {
    let max = psi.max_abs();
    if max == 0.0 {
        return None;
    }
    let inside = |z: &Complex64| z.norm() > SUPPORT_CUTOFF * max;
    let lo = psi.values().iter().position(inside)?;
    let hi = psi.values().iter().rposition(inside)?;
    Some((lo, hi))
}

fn strided(lo: usize, hi: usize, max_samples: usize) -> impl Iterator<Item = usize> {
    let stride = ((hi - lo) / max_samples).max(1);
    (lo..=hi).step_by(stride).chain(std::iter::once(hi))
}

/// Largest phase increment `|∂S/∂x0| dx / hbar` between neighbouring
/// quadrature points, over the whole output grid and the input support.
fn phase_step(pair: &PairKernel, psi: &ComplexField, lo: usize, hi: usize, hbar: f64) -> Result<f64> {
    let grid = psi.grid();
    let mut worst: f64 = 0.0;
    for i in strided(0, grid.len() - 1, 256) {
        for j in strided(lo, hi, 256) {
            worst = worst.max(pair.phase_gradient(grid.x(i), grid.x(j))?.abs());
        }
    }
    Ok(worst * grid.dx() / hbar)
}

fn resolution_check(spec: &KernelSpec, psi: &ComplexField, lo: usize, hi: usize, dt: f64) -> Result<()> {
    let hbar = spec.cfg.hbar;
    let step = phase_step(&PairKernel::new(spec, dt)?, psi, lo, hi, hbar)?;
    if step < PI {
        return Ok(());
    }
    // Kinetic estimate of the admissible step, then widened until the check passes.
    let grid = psi.grid();
    let m = spec.cfg.single_mass()?;
    let reach = (grid.x(lo) - grid.x_max()).abs().max((grid.x(hi) - grid.x_min()).abs());
    let mut min_dt = m * reach * grid.dx() / (PI * hbar);
    for _ in 0..200 {
        let trial = min_dt * dt.signum();
        match PairKernel::new(spec, trial).and_then(|p| phase_step(&p, psi, lo, hi, hbar)) {
            Ok(s) if s < PI => break,
            _ => min_dt *= 1.01,
        }
    }
    Err(Error::Unresolved { phase_step: step, min_dt })
}

/// `psibar(x) = ∫ K(x, x0) psi0(x0) dx0` by the trapezoid rule on the grid of `psi0`.
pub fn apply_kernel(spec: &KernelSpec, psi0: &ComplexField, t: f64, t0: f64) -> Result<ComplexField> {
    let dt = time_step(t, t0)?;
    let grid = *psi0.grid();
    let Some((lo, hi)) = support(psi0) else {
        return ComplexField::new(grid, vec![Complex64::new(0.0, 0.0); grid.len()]);
    };
    resolution_check(spec, psi0, lo, hi, dt)?;
    let pair = PairKernel::new(spec, dt)?;
    let dx = grid.dx();
    let last = grid.len() - 1;
    let weighted: Vec<(f64, Complex64)> = (lo..=hi)
        .map(|j| {
            let w = if j == 0 || j == last { 0.5 * dx } else { dx };
            (grid.x(j), psi0.values()[j] * w)
        })
        .collect();
    let values = match pair {
        PairKernel::Quadratic { amp, d1, d0, b, hbar } => {
            // exp(-i b x x0 / hbar) advances by a fixed factor per input point;
            // the recurrence is re-anchored every block to bound round-off.
            const BLOCK: usize = 64;
            let chirped: Vec<Complex64> =
                weighted.iter().map(|&(x0, v)| v * Complex64::from_polar(1.0, d0 * x0 * x0 / hbar)).collect();
            (0..grid.len())
                .into_par_iter()
                .map(|i| {
                    let x = grid.x(i);
                    let step = Complex64::from_polar(1.0, -b * x * dx / hbar);
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (block, chunk) in chirped.chunks(BLOCK).enumerate() {
                        let x0 = weighted[block * BLOCK].0;
                        let mut phase = Complex64::from_polar(1.0, -b * x * x0 / hbar);
                        for g in chunk {
                            acc += g * phase;
                            phase *= step;
                        }
                    }
                    Ok(amp * Complex64::from_polar(1.0, d1 * x * x / hbar) * acc)
                })
                .collect::<Result<Vec<_>>>()?
        }
        PairKernel::ShortTime { .. } => (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let x = grid.x(i);
                let mut acc = Complex64::new(0.0, 0.0);
                for &(x0, v) in &weighted {
                    acc += pair.eval(x, x0)? * v;
                }
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()?,
    };
    ComplexField::new(grid, values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlicedEvolution {
    pub field: ComplexField,
    /// `|‖psi_{j+1}‖ - ‖psi_j‖| / ‖psi_0‖` for every slice.
    pub norm_drift: Vec<f64>,
}

/// Composes `N` single-slice kernel applications over the subdivision of `window`.
pub fn time_slice_evolve(
    spec: &KernelSpec,
    psi0: &ComplexField,
    window: &TimeWindow,
    norm_drift_bound: f64,
) -> Result<SlicedEvolution> {
    let norm0 = psi0.norm();
    let mut field = psi0.clone();
    let mut prev = norm0;
    let mut norm_drift = Vec::with_capacity(window.steps);
    for j in 0..window.steps {
        field = apply_kernel(spec, &field, window.time(j + 1), window.time(j))
            .map_err(|e| Error::Subinterval { index: j, source: Box::new(e) })?;
        let norm = field.norm();
        let drift = if norm0 > 0.0 { (norm - prev).abs() / norm0 } else { 0.0 };
        if drift > norm_drift_bound {
            return Err(Error::NormDrift { slice: j, drift, bound: norm_drift_bound });
        }
        norm_drift.push(drift);
        prev = norm;
    }
    Ok(SlicedEvolution { field, norm_drift })
}
