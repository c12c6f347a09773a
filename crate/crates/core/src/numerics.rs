//! Grids, sampled fields, quadrature, finite differences and convergence-order
//! fitting shared by every other module.
//!
//! Everything here is 64-bit and value-typed; fields are immutable once built.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Physical constants of the system: reduced Planck constant and one mass per
/// degree of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub hbar: f64,
    pub masses: Vec<f64>,
}

impl SystemConfig {
    pub fn new(hbar: f64, masses: Vec<f64>) -> Result<Self> {
        if !(hbar.is_finite() && hbar > 0.0) {
            return Err(Error::InvalidInput(format!("hbar must be > 0, got {hbar}")));
        }
        if masses.is_empty() {
            return Err(Error::InvalidInput("at least one degree of freedom is required".into()));
        }
        if let Some(m) = masses.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::InvalidInput(format!("masses must be > 0, got {m}")));
        }
        Ok(Self { hbar, masses })
    }

    /// hbar = 1 and unit masses.
    pub fn natural(dof: usize) -> Self {
        Self { hbar: 1.0, masses: vec![1.0; dof.max(1)] }
    }

    pub fn dof(&self) -> usize {
        self.masses.len()
    }

    pub fn mass(&self, j: usize) -> f64 {
        self.masses[j]
    }

    /// Mass of a one-dimensional system; errors when `dof != 1`.
    pub fn single_mass(&self) -> Result<f64> {
        if self.dof() == 1 {
            Ok(self.masses[0])
        } else {
            Err(Error::InvalidInput(format!(
                "wavefunction grids are one-dimensional, config has {} degrees of freedom",
                self.dof()
            )))
        }
    }
}

/// Uniform one-dimensional grid with `points` samples including both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGrid {
    x_min: f64,
    x_max: f64,
    points: usize,
}

pub const MIN_GRID_POINTS: usize = 8;

impl SpatialGrid {
    pub fn new(x_min: f64, x_max: f64, points: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite()) || x_max <= x_min {
            return Err(Error::InvalidInput(format!(
                "grid requires finite x_min < x_max, got [{x_min}, {x_max}]"
            )));
        }
        if points < MIN_GRID_POINTS {
            return Err(Error::InvalidInput(format!(
                "grid requires at least {MIN_GRID_POINTS} points, got {points}"
            )));
        }
        Ok(Self { x_min, x_max, points })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn len(&self) -> usize {
        self.points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.points - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        if i + 1 == self.points {
            self.x_max
        } else {
            self.x_min + i as f64 * self.dx()
        }
    }

    pub fn coordinates(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.x(i)).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min && x <= self.x_max
    }

    /// Index of the cell `[x_i, x_{i+1}]` holding `x` and the local coordinate in `[0, 1]`.
    pub fn locate(&self, x: f64) -> Option<(usize, f64)> {
        if !self.contains(x) {
            return None;
        }
        let s = (x - self.x_min) / self.dx();
        let i = (s.floor() as usize).min(self.points - 2);
        Some((i, s - i as f64))
    }
}

/// Time interval `[t0, t]` divided into `steps` equal subintervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeWindow {
    pub t0: f64,
    pub t: f64,
    pub steps: usize,
}

impl TimeWindow {
    pub fn new(t0: f64, t: f64, steps: usize) -> Result<Self> {
        if !(t0.is_finite() && t.is_finite()) {
            return Err(Error::NonFinite("time window".into()));
        }
        if t == t0 {
            return Err(Error::ZeroTimeStep);
        }
        if steps == 0 {
            return Err(Error::InvalidInput("time window needs at least one step".into()));
        }
        Ok(Self { t0, t, steps })
    }

    pub fn duration(&self) -> f64 {
        self.t - self.t0
    }

    pub fn dt(&self) -> f64 {
        self.duration() / self.steps as f64
    }

    /// `t_j = t0 + j (t - t0) / N`; the last node is exactly `t`.
    pub fn time(&self, j: usize) -> f64 {
        if j == self.steps {
            self.t
        } else {
            self.t0 + j as f64 * self.duration() / self.steps as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|j| self.time(j)).collect()
    }
}

/// Complex samples of a wavefunction on a [`SpatialGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: SpatialGrid,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(grid: SpatialGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "field has {} samples, grid has {}",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite("complex field".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: SpatialGrid, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(grid.x(i))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn density(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// L2 norm by the trapezoid rule.
    pub fn norm(&self) -> f64 {
        trapezoid_real(&self.density(), self.grid.dx()).sqrt()
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|z| z * factor).collect() }
    }

    /// L2 distance to another field on the same grid.
    pub fn l2_distance(&self, other: &ComplexField) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::InvalidInput("fields live on different grids".into()));
        }
        let diff: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm_sqr())
            .collect();
        Ok(trapezoid_real(&diff, self.grid.dx()).sqrt())
    }

    /// L2 distance after removing the best-fitting global phase.
    pub fn l2_distance_mod_phase(&self, other: &ComplexField) -> Result<f64> {
        let overlap: Complex64 = self.values.iter().zip(&other.values).map(|(a, b)| a.conj() * b).sum();
        let phase = if overlap.norm() > 0.0 { overlap / overlap.norm() } else { Complex64::new(1.0, 0.0) };
        self.scaled(phase).l2_distance(other)
    }
}

/// Composite trapezoid rule over the whole grid.
pub fn trapezoid_integrate(field: &ComplexField) -> Result<Complex64> {
    let v = field.values();
    let dx = field.grid().dx();
    let inner: Complex64 = v[1..v.len() - 1].iter().sum();
    let total = (inner + 0.5 * (v[0] + v[v.len() - 1])) * dx;
    if total.re.is_finite() && total.im.is_finite() {
        Ok(total)
    } else {
        Err(Error::NonFinite("trapezoid integral".into()))
    }
}

pub fn trapezoid_real(values: &[f64], dx: f64) -> f64 {
    match values {
        [] => 0.0,
        [_] => 0.0,
        [first, inner @ .., last] => (inner.iter().sum::<f64>() + 0.5 * (first + last)) * dx,
    }
}

/// Number of points at each end of the grid whose derivatives come from
/// one-sided stencils. Diagnostics that differentiate skip them.
pub const BOUNDARY_POINTS: usize = 2;

/// Derivative samples; `reduced_accuracy[i]` marks the one-sided boundary stencils.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeField {
    pub field: ComplexField,
    pub reduced_accuracy: Vec<bool>,
}

/// First or second derivative with second-order stencils: central in the
/// interior, one-sided at the two end points.
pub fn finite_difference(field: &ComplexField, order: u8) -> Result<DerivativeField> {
    let dx = field.grid().dx();
    let values = match order {
        1 => first_derivative(field.values(), dx),
        2 => second_derivative(field.values(), dx),
        other => {
            return Err(Error::InvalidInput(format!(
                "finite-difference order must be 1 or 2, got {other}"
            )))
        }
    };
    let n = values.len();
    let reduced_accuracy = (0..n).map(|i| i == 0 || i + 1 == n).collect();
    Ok(DerivativeField { field: ComplexField::new(*field.grid(), values)?, reduced_accuracy })
}

pub(crate) fn first_derivative<T>(v: &[T], dx: f64) -> Vec<T>
where
    T: Copy + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>,
{
    let n = v.len();
    let mut out = Vec::with_capacity(n);
    out.push((v[1] * 4.0 - v[0] * 3.0 - v[2]) * (0.5 / dx));
    for i in 1..n - 1 {
        out.push((v[i + 1] - v[i - 1]) * (0.5 / dx));
    }
    out.push((v[n - 1] * 3.0 - v[n - 2] * 4.0 + v[n - 3]) * (0.5 / dx));
    out
}

pub(crate) fn second_derivative<T>(v: &[T], dx: f64) -> Vec<T>
where
    T: Copy + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>,
{
    let n = v.len();
    let inv = 1.0 / (dx * dx);
    let mut out = Vec::with_capacity(n);
    out.push((v[0] * 2.0 - v[1] * 5.0 + v[2] * 4.0 - v[3]) * inv);
    for i in 1..n - 1 {
        out.push((v[i + 1] - v[i] * 2.0 + v[i - 1]) * inv);
    }
    out.push((v[n - 1] * 2.0 - v[n - 2] * 5.0 + v[n - 3] * 4.0 - v[n - 4]) * inv);
    out
}

/// Least-squares slope of `ln e` against `ln h`.
///
/// A zero error anywhere means the two routes agree exactly at that step; the
/// order is then reported as `f64::INFINITY`.
pub fn fit_convergence_order(samples: &[(f64, f64)]) -> Result<f64> {
    if samples.len() < 3 {
        return Err(Error::TooFewSamples { needed: 3, have: samples.len() });
    }
    for &(h, e) in samples {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidInput(format!("step sizes must be > 0, got {h}")));
        }
        if !e.is_finite() || e < 0.0 {
            return Err(Error::InvalidInput(format!("errors must be finite and >= 0, got {e}")));
        }
    }
    if samples.iter().any(|&(_, e)| e == 0.0) {
        return Ok(f64::INFINITY);
    }
    let n = samples.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = samples.iter().map(|&(h, e)| (h.ln(), e.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("step sizes must not all be equal".into()));
    }
    Ok(sxy / sxx)
}

/// C1 piecewise-cubic Hermite interpolant on a uniform grid. Node slopes come
/// from the second-order stencils of [`finite_difference`], so quadratics are
/// reproduced exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicInterpolant {
    grid: SpatialGrid,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl CubicInterpolant {
    pub fn new(grid: SpatialGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "{} samples for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("interpolation samples".into()));
        }
        let slopes = first_derivative(&values, grid.dx());
        Ok(Self { grid, values, slopes })
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn eval(&self, x: f64) -> Option<f64> {
        let (i, s) = self.grid.locate(x)?;
        let h = self.grid.dx();
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        Some(
            (2.0 * s3 - 3.0 * s2 + 1.0) * y0
                + (s3 - 2.0 * s2 + s) * m0
                + (-2.0 * s3 + 3.0 * s2) * y1
                + (s3 - s2) * m1,
        )
    }

    pub fn derivative(&self, x: f64) -> Option<f64> {
        let (i, s) = self.grid.locate(x)?;
        let h = self.grid.dx();
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let s2 = s * s;
        let d = (6.0 * s2 - 6.0 * s) * y0
            + (3.0 * s2 - 4.0 * s + 1.0) * m0
            + (-6.0 * s2 + 6.0 * s) * y1
            + (3.0 * s2 - 2.0 * s) * m1;
        Some(d / h)
    }
}

/// Gauss–Legendre rule mapped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("quadrature needs at least one node".into()));
        }
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for k in 0..n.div_ceil(2) {
            // Newton on P_n from the Chebyshev-like initial guess.
            let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let step = p / d;
                x -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[k] = 0.5 * (1.0 - x);
            nodes[n - 1 - k] = 0.5 * (1.0 + x);
            weights[k] = 0.5 * w;
            weights[n - 1 - k] = 0.5 * w;
        }
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `(tau, weight)` pairs on `[0, 1]`.
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}
