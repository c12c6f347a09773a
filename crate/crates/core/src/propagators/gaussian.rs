//! Gaussian wavepackets
//!
//! ```text
//! psi(x) = exp(-alpha (x - q)² + i p (x - q) / hbar + log_amp)
//! ```
//!
//! Quadratic Hamiltonians map this family onto itself, so every kernel of the
//! form `F exp(i (d1 x² + d0 x0² - b x x0) / hbar)` acts on it in closed form.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{ComplexField, SpatialGrid, SystemConfig};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// One-dimensional Gaussian; multi-dimensional packets are products of these.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    pub center: f64,
    pub momentum: f64,
    /// Complex width parameter; `Re(alpha) = 1 / (4 sigma²)`.
    pub alpha: Complex64,
    /// Complex log-amplitude carrying the global phase and the norm.
    pub log_amp: Complex64,
}

impl GaussianParams {
    pub fn new(center: f64, momentum: f64, alpha: Complex64, log_amp: Complex64) -> Result<Self> {
        let g = Self { center, momentum, alpha, log_amp };
        g.validate()?;
        Ok(g)
    }

    /// Unit-norm packet of position spread `sigma` and zero global phase.
    pub fn normalized(center: f64, momentum: f64, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidInput(format!("width must be > 0, got {sigma}")));
        }
        let alpha = Complex64::new(1.0 / (4.0 * sigma * sigma), 0.0);
        let log_amp = Complex64::new(-0.25 * (2.0 * std::f64::consts::PI * sigma * sigma).ln(), 0.0);
        Self::new(center, momentum, alpha, log_amp)
    }

    fn validate(&self) -> Result<()> {
        let parts = [self.center, self.momentum, self.alpha.re, self.alpha.im, self.log_amp.re, self.log_amp.im];
        if parts.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gaussian parameters".into()));
        }
        if self.alpha.re <= 0.0 {
            return Err(Error::Domain(format!("Re(alpha) = {} is not positive", self.alpha.re)));
        }
        Ok(())
    }

    /// Position spread of `|psi|²`.
    pub fn sigma(&self) -> f64 {
        0.5 / self.alpha.re.sqrt()
    }

    pub fn norm(&self) -> f64 {
        ((2.0 * self.log_amp.re).exp() * (std::f64::consts::PI / (2.0 * self.alpha.re)).sqrt()).sqrt()
    }

    pub fn eval(&self, x: f64, hbar: f64) -> Complex64 {
        let y = x - self.center;
        (-self.alpha * y * y + I * (self.momentum * y / hbar) + self.log_amp).exp()
    }

    pub fn to_field(&self, grid: SpatialGrid, hbar: f64) -> Result<ComplexField> {
        ComplexField::from_fn(grid, |x| self.eval(x, hbar))
    }

    /// `Q = (hbar² Re α / m)(1 - 2 Re α y²)`.
    pub fn quantum_potential(&self, x: f64, mass: f64, hbar: f64) -> f64 {
        let a = self.alpha.re;
        let y = x - self.center;
        hbar * hbar * a / mass * (1.0 - 2.0 * a * y * y)
    }

    /// `∂Q/∂x`.
    pub fn quantum_potential_gradient(&self, x: f64, mass: f64, hbar: f64) -> f64 {
        let a = self.alpha.re;
        -4.0 * hbar * hbar * a * a / mass * (x - self.center)
    }

    /// Guidance velocity `(p - 2 hbar Im α y) / m`.
    pub fn velocity(&self, x: f64, mass: f64, hbar: f64) -> f64 {
        (self.momentum - 2.0 * hbar * self.alpha.im * (x - self.center)) / mass
    }

    /// `∂v/∂x`.
    pub fn velocity_gradient(&self, mass: f64, hbar: f64) -> f64 {
        -2.0 * hbar * self.alpha.im / mass
    }

    /// Coefficients of `exp(-a x² + b x + c)`.
    fn polynomial(&self, hbar: f64) -> (Complex64, Complex64, Complex64) {
        let q = self.center;
        let b = 2.0 * self.alpha * q + I * (self.momentum / hbar);
        let c = self.log_amp - self.alpha * q * q - I * (self.momentum * q / hbar);
        (self.alpha, b, c)
    }

    fn from_polynomial(a: Complex64, b: Complex64, c: Complex64, hbar: f64) -> Result<Self> {
        if !(a.re > 0.0) {
            return Err(Error::Domain(format!("propagated Gaussian is not normalizable: Re(alpha) = {}", a.re)));
        }
        let q = b.re / (2.0 * a.re);
        let p = hbar * (b.im - 2.0 * a.im * q);
        let log_amp = c + a * q * q + I * (p * q / hbar);
        Self::new(q, p, a, log_amp)
    }

    /// Exact evolution under `H = p²/2m + k x²/2` for time `dt`.
    pub fn evolve_exact(&self, stiffness: f64, mass: f64, hbar: f64, dt: f64) -> Result<Self> {
        let (q0, p0, a0) = (self.center, self.momentum, self.alpha);
        let (q, p, z, zdot) = if stiffness == 0.0 {
            let z = 1.0 + 2.0 * I * hbar * a0 * dt / mass;
            (q0 + p0 * dt / mass, p0, z, 2.0 * I * hbar * a0 / mass)
        } else {
            let w = (stiffness / mass).sqrt();
            let (s, c) = (w * dt).sin_cos();
            let beta = 2.0 * I * hbar * a0 / (mass * w);
            let z = c + beta * s;
            let zdot = -w * s + beta * w * c;
            (q0 * c + p0 / (mass * w) * s, p0 * c - mass * w * q0 * s, z, zdot)
        };
        let alpha = mass / (2.0 * I * hbar) * zdot / z;
        let winding = if stiffness == 0.0 { 0.0 } else { ((stiffness / mass).sqrt() * dt / std::f64::consts::PI).floor() };
        let log_amp = self.log_amp + I * (0.5 * (p * q - p0 * q0) / hbar) - 0.5 * continuous_log(z, winding);
        Self::new(q, p, alpha, log_amp)
    }
}

/// `ln z` with `arg z` continued through `winding` half-turns; `z` lies in the
/// upper half plane for even windings and the lower one for odd windings.
fn continuous_log(z: Complex64, winding: f64) -> Complex64 {
    let sign = if winding.rem_euclid(2.0) == 0.0 { 1.0 } else { -1.0 };
    let w = z * sign;
    let mut arg = w.im.atan2(w.re);
    if arg < -std::f64::consts::FRAC_PI_2 {
        // Rounding pushed a point on the negative real axis below it.
        arg += 2.0 * std::f64::consts::PI;
    }
    Complex64::new(z.norm().ln(), arg + winding * std::f64::consts::PI)
}

/// Kernel `prefactor * exp(i (d1 x² + d0 x0² - b x x0) / hbar)` for one degree
/// of freedom; `prefactor_sq` is the square of the amplitude so the branch of
/// the Gaussian integral can be taken on `prefactor² pi / P`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticKernel {
    pub d1: f64,
    pub d0: f64,
    pub b: f64,
    pub prefactor_sq: Complex64,
}

impl QuadraticKernel {
    /// Short-time kernel with segment-averaged potential for `V = k x² / 2`.
    pub fn short_time(stiffness: f64, mass: f64, hbar: f64, dt: f64) -> Result<Self> {
        if dt == 0.0 {
            return Err(Error::ZeroTimeStep);
        }
        let kappa = stiffness * dt / 6.0;
        Ok(Self {
            d1: mass / (2.0 * dt) - kappa,
            d0: mass / (2.0 * dt) - kappa,
            b: mass / dt + kappa,
            prefactor_sq: mass / (2.0 * std::f64::consts::PI * I * hbar * dt),
        })
    }

    /// Exact propagator of `H = p²/2m + k x²/2` (free for `k = 0`).
    pub fn exact(stiffness: f64, mass: f64, hbar: f64, dt: f64) -> Result<Self> {
        if stiffness == 0.0 {
            return Self::short_time(0.0, mass, hbar, dt);
        }
        if dt == 0.0 {
            return Err(Error::ZeroTimeStep);
        }
        let w = (stiffness / mass).sqrt();
        let s = crate::action::checked_sin(w, dt)?;
        let c = (w * dt).cos();
        Ok(Self {
            d1: mass * w * c / (2.0 * s),
            d0: mass * w * c / (2.0 * s),
            b: mass * w / s,
            prefactor_sq: mass * w / (2.0 * std::f64::consts::PI * I * hbar * s),
        })
    }

    /// Closed-form action on a Gaussian. The square-root branch is principal
    /// on `prefactor² pi / P`, which tends to 1 as `dt -> 0`; kernels past a
    /// caustic need the winding phase applied separately.
    pub fn apply(&self, g: &GaussianParams, hbar: f64) -> Result<GaussianParams> {
        let (a, b, c) = g.polynomial(hbar);
        let p = a - I * (self.d0 / hbar);
        let u = -I * (self.b / hbar);
        let a1 = -(I * (self.d1 / hbar) + u * u / (4.0 * p));
        let b1 = b * u / (2.0 * p);
        let c1 = c + b * b / (4.0 * p) + 0.5 * (self.prefactor_sq * std::f64::consts::PI / p).ln();
        GaussianParams::from_polynomial(a1, b1, c1, hbar)
    }
}

/// A Gaussian propagated by one short-time kernel slice with the averaged
/// potential, for free or harmonic `V`.
pub fn gaussian_ks_closed_form(
    g: &GaussianParams,
    spec: &crate::potentials::PotentialSpec,
    t: f64,
    t0: f64,
    cfg: &SystemConfig,
) -> Result<GaussianParams> {
    let k = spec
        .stiffness()
        .ok_or_else(|| Error::InvalidInput("closed-form slice needs a free or harmonic potential".into()))?;
    let mass = cfg.single_mass()?;
    QuadraticKernel::short_time(k, mass, cfg.hbar, t - t0)?.apply(g, cfg.hbar)
}
