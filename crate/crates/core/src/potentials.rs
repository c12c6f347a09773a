//! Potentials `V(x)`, their gradients and the segment average
//!
//! ```text
//! Vbar(x, x0) = ∫_0^1 V(tau x + (1 - tau) x0) dtau
//! ```
//!
//! All closed-form variants are separable sums over the coordinates. The
//! tabulated variant is one-dimensional.

use crate::error::{Error, Result};
use crate::numerics::{CubicInterpolant, GaussLegendre, SpatialGrid};

/// Default node count of the `tau` quadrature.
pub const DEFAULT_QUADRATURE_NODES: usize = 16;
/// Smallest accepted node count.
pub const MIN_QUADRATURE_NODES: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialSpec {
    Free,
    /// `V = Σ mass ω² x_j² / 2`.
    Harmonic { mass: f64, omega: f64 },
    /// `V = Σ coefficient x_j⁴`.
    Quartic { coefficient: f64 },
    Tabulated(TabulatedPotential),
}

/// Samples on a uniform grid, interpolated by C1 cubic Hermite pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedPotential {
    interp: CubicInterpolant,
}

impl TabulatedPotential {
    pub fn new(grid: SpatialGrid, samples: Vec<f64>) -> Result<Self> {
        Ok(Self { interp: CubicInterpolant::new(grid, samples)? })
    }

    pub fn from_fn(grid: SpatialGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.coordinates().into_iter().map(f).collect())
    }

    pub fn grid(&self) -> &SpatialGrid {
        self.interp.grid()
    }

    fn value(&self, x: f64) -> Result<f64> {
        self.interp
            .eval(x)
            .ok_or_else(|| Error::Domain(format!("x = {x} outside tabulated range")))
    }

    /// Second-order difference quotient of the interpolant; central where
    /// possible, one-sided within `h` of the table edges.
    fn derivative(&self, x: f64, order: u8) -> Result<f64> {
        let g = self.grid();
        if !g.contains(x) {
            return Err(Error::Domain(format!("x = {x} outside tabulated range")));
        }
        let h = 1e-3 * g.dx();
        let f = |y: f64| self.value(y);
        match order {
            1 => {
                if x - h >= g.x_min() && x + h <= g.x_max() {
                    Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
                } else if x - h < g.x_min() {
                    Ok((-3.0 * f(x)? + 4.0 * f(x + h)? - f(x + 2.0 * h)?) / (2.0 * h))
                } else {
                    Ok((3.0 * f(x)? - 4.0 * f(x - h)? + f(x - 2.0 * h)?) / (2.0 * h))
                }
            }
            _ => {
                // Curvature is piecewise linear; a wider stencil avoids cancellation.
                let h = 0.25 * g.dx();
                let c = x.clamp(g.x_min() + h, g.x_max() - h);
                Ok((f(c + h)? - 2.0 * f(c)? + f(c - h)?) / (h * h))
            }
        }
    }
}

impl PotentialSpec {
    pub fn harmonic(mass: f64, omega: f64) -> Result<Self> {
        if !(mass.is_finite() && mass > 0.0 && omega.is_finite() && omega > 0.0) {
            return Err(Error::InvalidInput(format!(
                "harmonic potential needs mass > 0 and omega > 0, got mass = {mass}, omega = {omega}"
            )));
        }
        Ok(Self::Harmonic { mass, omega })
    }

    pub fn quartic(coefficient: f64) -> Result<Self> {
        if !coefficient.is_finite() {
            return Err(Error::InvalidInput("quartic coefficient must be finite".into()));
        }
        Ok(Self::Quartic { coefficient })
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self, Self::Free | Self::Harmonic { .. })
    }

    /// Stiffness `k` of `V = k x² / 2` for quadratic variants.
    pub fn stiffness(&self) -> Option<f64> {
        match self {
            Self::Free => Some(0.0),
            Self::Harmonic { mass, omega } => Some(mass * omega * omega),
            _ => None,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.is_empty() {
            return Err(Error::InvalidInput("empty position vector".into()));
        }
        if matches!(self, Self::Tabulated(_)) && x.len() != 1 {
            return Err(Error::InvalidInput(format!(
                "tabulated potentials are one-dimensional, got {} coordinates",
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("position".into()));
        }
        Ok(())
    }

    fn component(&self, x: f64) -> Result<f64> {
        match self {
            Self::Free => Ok(0.0),
            Self::Harmonic { mass, omega } => Ok(0.5 * mass * omega * omega * x * x),
            Self::Quartic { coefficient } => Ok(coefficient * x.powi(4)),
            Self::Tabulated(t) => t.value(x),
        }
    }

    fn component_gradient(&self, x: f64) -> Result<f64> {
        match self {
            Self::Free => Ok(0.0),
            Self::Harmonic { mass, omega } => Ok(mass * omega * omega * x),
            Self::Quartic { coefficient } => Ok(4.0 * coefficient * x.powi(3)),
            Self::Tabulated(t) => t.derivative(x, 1),
        }
    }

    fn component_curvature(&self, x: f64) -> Result<f64> {
        match self {
            Self::Free => Ok(0.0),
            Self::Harmonic { mass, omega } => Ok(mass * omega * omega),
            Self::Quartic { coefficient } => Ok(12.0 * coefficient * x * x),
            Self::Tabulated(t) => t.derivative(x, 2),
        }
    }
}

fn domain_checked(v: f64, x: &[f64]) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Domain(format!("potential is not finite at {x:?}")))
    }
}

pub fn eval_potential(spec: &PotentialSpec, x: &[f64]) -> Result<f64> {
    spec.check_dim(x)?;
    let mut v = 0.0;
    for &xj in x {
        v += spec.component(xj)?;
    }
    domain_checked(v, x)
}

pub fn grad_potential(spec: &PotentialSpec, x: &[f64]) -> Result<Vec<f64>> {
    spec.check_dim(x)?;
    x.iter()
        .map(|&xj| spec.component_gradient(xj).and_then(|g| domain_checked(g, x)))
        .collect()
}

/// Diagonal of the Hessian (the closed-form variants are separable).
pub fn hessian_diagonal(spec: &PotentialSpec, x: &[f64]) -> Result<Vec<f64>> {
    spec.check_dim(x)?;
    x.iter()
        .map(|&xj| spec.component_curvature(xj).and_then(|g| domain_checked(g, x)))
        .collect()
}

/// A potential together with the quadrature used for its segment average.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedPotential {
    base: PotentialSpec,
    rule: GaussLegendre,
}

impl AveragedPotential {
    pub fn new(base: PotentialSpec, quadrature_nodes: usize) -> Result<Self> {
        if quadrature_nodes < MIN_QUADRATURE_NODES {
            return Err(Error::InvalidInput(format!(
                "averaged potential needs at least {MIN_QUADRATURE_NODES} quadrature nodes, got {quadrature_nodes}"
            )));
        }
        Ok(Self { base, rule: GaussLegendre::new(quadrature_nodes)? })
    }

    pub fn with_default_nodes(base: PotentialSpec) -> Self {
        Self::new(base, DEFAULT_QUADRATURE_NODES).expect("default node count is valid")
    }

    pub fn base(&self) -> &PotentialSpec {
        &self.base
    }

    pub fn quadrature_nodes(&self) -> usize {
        self.rule.len()
    }

    fn segment<F>(&self, x: &[f64], x0: &[f64], mut f: F) -> Result<()>
    where
        F: FnMut(f64, f64, &[f64]) -> Result<()>,
    {
        if x.len() != x0.len() {
            return Err(Error::InvalidInput(format!(
                "endpoint dimensions differ: {} vs {}",
                x.len(),
                x0.len()
            )));
        }
        let mut y = vec![0.0; x.len()];
        for (tau, w) in self.rule.iter() {
            for ((yj, &a), &b) in y.iter_mut().zip(x).zip(x0) {
                *yj = tau * a + (1.0 - tau) * b;
            }
            f(tau, w, &y)?;
        }
        Ok(())
    }
}

impl AveragedPotential {
    /// Scalar path of [`averaged_potential`] for one degree of freedom.
    pub fn value_1d(&self, x: f64, x0: f64) -> Result<f64> {
        if let PotentialSpec::Free = self.base {
            return Ok(0.0);
        }
        let mut acc = 0.0;
        for (tau, w) in self.rule.iter() {
            acc += w * self.base.component(tau * x + (1.0 - tau) * x0)?;
        }
        domain_checked(acc, &[x, x0])
    }

    /// Scalar path of [`averaged_potential_gradient_x0`].
    pub fn gradient_x0_1d(&self, x: f64, x0: f64) -> Result<f64> {
        if let PotentialSpec::Free = self.base {
            return Ok(0.0);
        }
        let mut acc = 0.0;
        for (tau, w) in self.rule.iter() {
            acc += w * (1.0 - tau) * self.base.component_gradient(tau * x + (1.0 - tau) * x0)?;
        }
        domain_checked(acc, &[x, x0])
    }
}

pub fn averaged_potential(avg: &AveragedPotential, x: &[f64], x0: &[f64]) -> Result<f64> {
    if let PotentialSpec::Free = avg.base {
        avg.base.check_dim(x)?;
        return Ok(0.0);
    }
    let mut acc = 0.0;
    avg.segment(x, x0, |_, w, y| {
        acc += w * eval_potential(&avg.base, y)?;
        Ok(())
    })?;
    Ok(acc)
}

/// `∂Vbar/∂x = ∫ tau ∇V(tau x + (1 - tau) x0) dtau`.
pub fn averaged_potential_gradient(avg: &AveragedPotential, x: &[f64], x0: &[f64]) -> Result<Vec<f64>> {
    weighted_gradient(avg, x, x0, |tau| tau)
}

/// `∂Vbar/∂x0 = ∫ (1 - tau) ∇V(tau x + (1 - tau) x0) dtau`.
pub fn averaged_potential_gradient_x0(avg: &AveragedPotential, x: &[f64], x0: &[f64]) -> Result<Vec<f64>> {
    weighted_gradient(avg, x, x0, |tau| 1.0 - tau)
}

fn weighted_gradient(
    avg: &AveragedPotential,
    x: &[f64],
    x0: &[f64],
    weight: impl Fn(f64) -> f64,
) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; x.len()];
    if let PotentialSpec::Free = avg.base {
        avg.base.check_dim(x)?;
        return Ok(acc);
    }
    avg.segment(x, x0, |tau, w, y| {
        let g = grad_potential(&avg.base, y)?;
        for (a, gj) in acc.iter_mut().zip(g) {
            *a += w * weight(tau) * gj;
        }
        Ok(())
    })?;
    Ok(acc)
}
