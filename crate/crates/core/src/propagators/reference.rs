//! Crank–Nicolson reference integrator with homogeneous Dirichlet walls.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{ComplexField, SpatialGrid, SystemConfig, TimeWindow};
use crate::potentials::{eval_potential, PotentialSpec};

/// Thresholds of the grid-quality monitor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceOptions {
    /// Largest accepted fraction of `|psi|²` in the boundary layers.
    pub boundary_mass: f64,
    /// Largest accepted relative gap between 3- and 5-point kinetic energies.
    pub kinetic_gap: f64,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self { boundary_mass: 1e-8, kinetic_gap: 1e-2 }
    }
}

/// One Cayley step `(1 + i H dt / 2 hbar) psi' = (1 - i H dt / 2 hbar) psi` on
/// the interior points, with the tridiagonal factorization cached.
#[derive(Debug, Clone)]
pub struct CrankNicolson {
    grid: SpatialGrid,
    /// `i hbar dt / (4 m dx²)`.
    r: Complex64,
    /// Diagonal of the right-hand operator.
    rhs_diag: Vec<Complex64>,
    /// Thomas sweep coefficients.
    c_prime: Vec<Complex64>,
    inv_denom: Vec<Complex64>,
}

impl CrankNicolson {
    pub fn new(spec: &PotentialSpec, grid: SpatialGrid, dt: f64, cfg: &SystemConfig) -> Result<Self> {
        if dt == 0.0 {
            return Err(Error::ZeroTimeStep);
        }
        let m = cfg.single_mass()?;
        let hbar = cfg.hbar;
        let dx = grid.dx();
        let r = Complex64::new(0.0, hbar * dt / (4.0 * m * dx * dx));
        let n = grid.len() - 2;
        let mut lhs_diag = Vec::with_capacity(n);
        let mut rhs_diag = Vec::with_capacity(n);
        for i in 1..=n {
            let v = eval_potential(spec, &[grid.x(i)])?;
            let pot = Complex64::new(0.0, dt * v / (2.0 * hbar));
            lhs_diag.push(1.0 + 2.0 * r + pot);
            rhs_diag.push(1.0 - 2.0 * r - pot);
        }
        // Off-diagonals of the left operator are all -r.
        let mut c_prime = vec![Complex64::new(0.0, 0.0); n];
        let mut inv_denom = vec![Complex64::new(0.0, 0.0); n];
        let mut prev_c = Complex64::new(0.0, 0.0);
        for i in 0..n {
            let denom = lhs_diag[i] + r * prev_c;
            inv_denom[i] = 1.0 / denom;
            c_prime[i] = -r * inv_denom[i];
            prev_c = c_prime[i];
        }
        Ok(Self { grid, r, rhs_diag, c_prime, inv_denom })
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    /// Advances `values` (full grid, boundary samples forced to zero) by one step.
    pub fn step(&self, values: &mut [Complex64]) {
        let n = self.rhs_diag.len();
        let last = values.len() - 1;
        values[0] = Complex64::new(0.0, 0.0);
        values[last] = Complex64::new(0.0, 0.0);
        let mut d = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            d[i] = self.rhs_diag[i] * values[i + 1] + self.r * (values[i] + values[i + 2]);
        }
        let mut prev = Complex64::new(0.0, 0.0);
        for i in 0..n {
            d[i] = (d[i] + self.r * prev) * self.inv_denom[i];
            prev = d[i];
        }
        for i in (0..n - 1).rev() {
            let next = d[i + 1];
            d[i] -= self.c_prime[i] * next;
        }
        values[1..=n].copy_from_slice(&d);
    }
}

fn check_grid_quality(psi: &[Complex64], grid: &SpatialGrid, opts: &ReferenceOptions, when: &str) -> Result<()> {
    let total: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
    if total == 0.0 {
        return Ok(());
    }
    let m = psi.len();
    let layer = (m / 32).max(2);
    let edge: f64 = psi[..layer].iter().chain(&psi[m - layer..]).map(|z| z.norm_sqr()).sum();
    if edge > opts.boundary_mass * total {
        return Err(Error::Underresolved(format!(
            "{when}: {:.3e} of the probability lies within {layer} points of the walls",
            edge / total
        )));
    }
    // <psi| -d²/dx² |psi> with 3- and 5-point stencils.
    let dx2 = grid.dx() * grid.dx();
    let (mut k3, mut k5) = (0.0, 0.0);
    for i in 2..m - 2 {
        let lap3 = psi[i + 1] - 2.0 * psi[i] + psi[i - 1];
        let lap5 = (-psi[i + 2] + 16.0 * psi[i + 1] - 30.0 * psi[i] + 16.0 * psi[i - 1] - psi[i - 2]) / 12.0;
        k3 -= (psi[i].conj() * lap3).re;
        k5 -= (psi[i].conj() * lap5).re;
    }
    let scale = k5.abs().max(total * dx2 / (grid.x_max() - grid.x_min()).powi(2));
    if (k3 - k5).abs() > opts.kinetic_gap * scale {
        return Err(Error::Underresolved(format!(
            "{when}: kinetic energy differs by {:.3e} (relative) between 3- and 5-point stencils",
            (k3 - k5).abs() / scale
        )));
    }
    Ok(())
}

/// Crank–Nicolson evolution over `window` with the default monitor thresholds.
pub fn reference_evolve(
    spec: &PotentialSpec,
    psi0: &ComplexField,
    window: &TimeWindow,
    cfg: &SystemConfig,
) -> Result<ComplexField> {
    reference_evolve_with(spec, psi0, window, cfg, ReferenceOptions::default())
}

pub fn reference_evolve_with(
    spec: &PotentialSpec,
    psi0: &ComplexField,
    window: &TimeWindow,
    cfg: &SystemConfig,
    opts: ReferenceOptions,
) -> Result<ComplexField> {
    let grid = *psi0.grid();
    let stepper = CrankNicolson::new(spec, grid, window.dt(), cfg)?;
    let mut values = psi0.values().to_vec();
    check_grid_quality(&values, &grid, &opts, "initial state")?;
    for _ in 0..window.steps {
        stepper.step(&mut values);
    }
    check_grid_quality(&values, &grid, &opts, "final state")?;
    ComplexField::new(grid, values)
}
