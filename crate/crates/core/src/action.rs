//! Classical action `S(x, x0, t, t0)`: closed forms for quadratic potentials,
//! shooting for general ones, and the short-time approximation
//! `Sbar = S0 / dt + S1 dt` with `S0 = Σ m_j (x_j - x0_j)² / 2`, `S1 = -Vbar`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::SystemConfig;
use crate::potentials::{averaged_potential, eval_potential, grad_potential, hessian_diagonal, AveragedPotential, PotentialSpec};

/// `|sin ωt|` below this is treated as a caustic.
pub const CAUSTIC_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMethod {
    Exact,
    Shooting,
    ShortTime,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionValue {
    pub value: f64,
    pub method: ActionMethod,
}

fn check_points(x: &[f64], x0: &[f64], cfg: &SystemConfig) -> Result<()> {
    if x.len() != cfg.dof() || x0.len() != cfg.dof() {
        return Err(Error::InvalidInput(format!(
            "endpoints have {} and {} coordinates, system has {}",
            x.len(),
            x0.len(),
            cfg.dof()
        )));
    }
    if x.iter().chain(x0).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("action endpoints".into()));
    }
    Ok(())
}

fn step(t: f64, t0: f64) -> Result<f64> {
    let dt = t - t0;
    if dt == 0.0 {
        Err(Error::ZeroTimeStep)
    } else if !dt.is_finite() {
        Err(Error::NonFinite("time step".into()))
    } else {
        Ok(dt)
    }
}

/// Free generating function `Σ m_j (x_j - x0_j)² / 2`.
pub fn s0(x: &[f64], x0: &[f64], cfg: &SystemConfig) -> f64 {
    x.iter()
        .zip(x0)
        .zip(&cfg.masses)
        .map(|((a, b), m)| 0.5 * m * (a - b) * (a - b))
        .sum()
}

/// First correction `-Vbar(x, x0)`.
pub fn s1(avg: &AveragedPotential, x: &[f64], x0: &[f64]) -> Result<f64> {
    Ok(-averaged_potential(avg, x, x0)?)
}

pub fn short_time_action(
    avg: &AveragedPotential,
    x: &[f64],
    x0: &[f64],
    t: f64,
    t0: f64,
    cfg: &SystemConfig,
) -> Result<ActionValue> {
    check_points(x, x0, cfg)?;
    let dt = step(t, t0)?;
    let value = s0(x, x0, cfg) / dt + s1(avg, x, x0)? * dt;
    Ok(ActionValue { value, method: ActionMethod::ShortTime })
}

/// Angular frequency of coordinate `j` for a harmonic well of stiffness `k`.
pub(crate) fn frequency(k: f64, mass: f64) -> f64 {
    (k / mass).sqrt()
}

pub(crate) fn checked_sin(omega: f64, dt: f64) -> Result<f64> {
    let s = (omega * dt).sin();
    if s.abs() < CAUSTIC_GUARD {
        Err(Error::Caustic { t: dt, sin: s })
    } else {
        Ok(s)
    }
}

fn quadratic_stiffness(spec: &PotentialSpec) -> Result<f64> {
    spec.stiffness().ok_or_else(|| {
        Error::InvalidInput("closed-form action is available only for free and harmonic potentials".into())
    })
}

/// Closed-form action for free and harmonic potentials.
pub fn exact_action(
    spec: &PotentialSpec,
    x: &[f64],
    x0: &[f64],
    t: f64,
    t0: f64,
    cfg: &SystemConfig,
) -> Result<ActionValue> {
    check_points(x, x0, cfg)?;
    let dt = step(t, t0)?;
    let k = quadratic_stiffness(spec)?;
    let mut value = 0.0;
    for ((&a, &b), &m) in x.iter().zip(x0).zip(&cfg.masses) {
        value += if k == 0.0 {
            0.5 * m * (a - b) * (a - b) / dt
        } else {
            let w = frequency(k, m);
            let s = checked_sin(w, dt)?;
            let c = (w * dt).cos();
            m * w / (2.0 * s) * ((a * a + b * b) * c - 2.0 * a * b)
        };
    }
    Ok(ActionValue { value, method: ActionMethod::Exact })
}

/// Analytic first partials of the closed-form action and the diagonal of the
/// mixed Hessian `∂²S/∂x_j∂x0_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionPartials {
    pub d_x: Vec<f64>,
    pub d_x0: Vec<f64>,
    pub d_t: f64,
    pub mixed: Vec<f64>,
}

pub fn exact_action_partials(
    spec: &PotentialSpec,
    x: &[f64],
    x0: &[f64],
    t: f64,
    t0: f64,
    cfg: &SystemConfig,
) -> Result<ActionPartials> {
    check_points(x, x0, cfg)?;
    let dt = step(t, t0)?;
    let k = quadratic_stiffness(spec)?;
    let n = cfg.dof();
    let mut out = ActionPartials { d_x: vec![0.0; n], d_x0: vec![0.0; n], d_t: 0.0, mixed: vec![0.0; n] };
    for j in 0..n {
        let (a, b, m) = (x[j], x0[j], cfg.masses[j]);
        if k == 0.0 {
            out.d_x[j] = m * (a - b) / dt;
            out.d_x0[j] = -m * (a - b) / dt;
            out.d_t -= 0.5 * m * (a - b) * (a - b) / (dt * dt);
            out.mixed[j] = -m / dt;
        } else {
            let w = frequency(k, m);
            let s = checked_sin(w, dt)?;
            let c = (w * dt).cos();
            out.d_x[j] = m * w / s * (a * c - b);
            out.d_x0[j] = m * w / s * (b * c - a);
            out.d_t -= m * w * w / (2.0 * s * s) * ((a * a + b * b) - 2.0 * a * b * c);
            out.mixed[j] = -m * w / s;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShootingOptions {
    /// RK4 steps across the interval; the Lagrangian is integrated on the same grid.
    pub steps: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self { steps: 512, tolerance: 1e-12, max_iterations: 50 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShootingResult {
    pub momentum: Vec<f64>,
    pub times: Vec<f64>,
    pub positions: Vec<Vec<f64>>,
    pub momenta: Vec<Vec<f64>>,
    pub action: ActionValue,
    pub residual: f64,
    pub iterations: usize,
}

struct Path {
    positions: Vec<Vec<f64>>,
    momenta: Vec<Vec<f64>>,
}

fn integrate_path(spec: &PotentialSpec, x0: &[f64], p0: &[f64], dt: f64, steps: usize, cfg: &SystemConfig) -> Result<Path> {
    let n = x0.len();
    let h = dt / steps as f64;
    let field = |x: &[f64], p: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let g = grad_potential(spec, x)?;
        Ok(((0..n).map(|j| p[j] / cfg.masses[j]).collect(), g.into_iter().map(|v| -v).collect()))
    };
    let shift = |a: &[f64], d: &[f64], s: f64| -> Vec<f64> { a.iter().zip(d).map(|(u, v)| u + s * v).collect() };
    let mut positions = Vec::with_capacity(steps + 1);
    let mut momenta = Vec::with_capacity(steps + 1);
    let (mut x, mut p) = (x0.to_vec(), p0.to_vec());
    positions.push(x.clone());
    momenta.push(p.clone());
    for _ in 0..steps {
        let (k1x, k1p) = field(&x, &p)?;
        let (k2x, k2p) = field(&shift(&x, &k1x, 0.5 * h), &shift(&p, &k1p, 0.5 * h))?;
        let (k3x, k3p) = field(&shift(&x, &k2x, 0.5 * h), &shift(&p, &k2p, 0.5 * h))?;
        let (k4x, k4p) = field(&shift(&x, &k3x, h), &shift(&p, &k3p, h))?;
        for j in 0..n {
            x[j] += h / 6.0 * (k1x[j] + 2.0 * k2x[j] + 2.0 * k3x[j] + k4x[j]);
            p[j] += h / 6.0 * (k1p[j] + 2.0 * k2p[j] + 2.0 * k3p[j] + k4p[j]);
        }
        if x.iter().chain(&p).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("shooting trajectory".into()));
        }
        positions.push(x.clone());
        momenta.push(p.clone());
    }
    Ok(Path { positions, momenta })
}

/// Largest `|V''|/m` sampled along the straight segment between the endpoints.
fn curvature_scale(spec: &PotentialSpec, x: &[f64], x0: &[f64], cfg: &SystemConfig) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..=16 {
        let tau = i as f64 / 16.0;
        let y: Vec<f64> = x.iter().zip(x0).map(|(a, b)| tau * a + (1.0 - tau) * b).collect();
        for (h, m) in hessian_diagonal(spec, &y)?.into_iter().zip(&cfg.masses) {
            worst = worst.max(h.abs() / m);
        }
    }
    Ok(worst)
}

/// Solves the two-point problem `x(t0) = x0, x(t) = x` by Newton iteration on
/// the initial momentum, then integrates the Lagrangian along the trajectory.
pub fn action_by_shooting(
    spec: &PotentialSpec,
    x: &[f64],
    x0: &[f64],
    t: f64,
    t0: f64,
    cfg: &SystemConfig,
    opts: ShootingOptions,
) -> Result<ShootingResult> {
    check_points(x, x0, cfg)?;
    let dt = step(t, t0)?;
    if opts.steps < 2 {
        return Err(Error::InvalidInput("shooting needs at least 2 steps".into()));
    }
    let scale = curvature_scale(spec, x, x0, cfg)?;
    if dt.abs() * scale.sqrt() >= std::f64::consts::FRAC_PI_2 {
        return Err(Error::Domain(format!(
            "interval {dt} too long for unique shooting: dt * sqrt(max|V''|/m) = {:.3} >= pi/2",
            dt.abs() * scale.sqrt()
        )));
    }
    let n = cfg.dof();
    let mut p: Vec<f64> = (0..n).map(|j| cfg.masses[j] * (x[j] - x0[j]) / dt).collect();
    let target_scale = 1.0 + x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let endpoint_miss = |p: &[f64]| -> Result<DVector<f64>> {
        let path = integrate_path(spec, x0, p, dt, opts.steps, cfg)?;
        let end = path.positions.last().expect("non-empty path");
        Ok(DVector::from_iterator(n, end.iter().zip(x).map(|(a, b)| a - b)))
    };
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        let r = endpoint_miss(&p)?;
        residual = r.amax();
        if residual <= opts.tolerance * target_scale {
            break;
        }
        iterations += 1;
        let mut jac = DMatrix::zeros(n, n);
        for k in 0..n {
            let h = 1e-6 * (1.0 + p[k].abs());
            let mut hi = p.clone();
            let mut lo = p.clone();
            hi[k] += h;
            lo[k] -= h;
            let col = (endpoint_miss(&hi)? - endpoint_miss(&lo)?) / (2.0 * h);
            jac.set_column(k, &col);
        }
        let delta = jac
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::Domain("singular shooting Jacobian (caustic)".into()))?;
        for k in 0..n {
            p[k] -= delta[k];
        }
    }
    if residual > opts.tolerance * target_scale {
        return Err(Error::NoConvergence { iterations, residual });
    }
    let path = integrate_path(spec, x0, &p, dt, opts.steps, cfg)?;
    let h = dt / opts.steps as f64;
    let lagrangian = path
        .positions
        .iter()
        .zip(&path.momenta)
        .map(|(q, mom)| {
            let kinetic: f64 = mom.iter().zip(&cfg.masses).map(|(pj, m)| 0.5 * pj * pj / m).sum();
            Ok(kinetic - eval_potential(spec, q)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    // Trapezoid with the Euler-Maclaurin end correction; dL/dt = -2 ∇V·v is
    // available in closed form along the trajectory.
    let dl_dt = |i: usize| -> Result<f64> {
        let g = grad_potential(spec, &path.positions[i])?;
        Ok(-2.0 * g.iter().zip(&path.momenta[i]).zip(&cfg.masses).map(|((gj, pj), m)| gj * pj / m).sum::<f64>())
    };
    let trapezoid = (lagrangian[1..opts.steps].iter().sum::<f64>() + 0.5 * (lagrangian[0] + lagrangian[opts.steps])) * h;
    let value = trapezoid - h * h / 12.0 * (dl_dt(opts.steps)? - dl_dt(0)?);
    let times = (0..=opts.steps).map(|i| t0 + i as f64 * h).collect();
    Ok(ShootingResult {
        momentum: p,
        times,
        positions: path.positions,
        momenta: path.momenta,
        action: ActionValue { value, method: ActionMethod::Shooting },
        residual,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::fit_convergence_order;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn one() -> SystemConfig {
        SystemConfig::natural(1)
    }

    fn harmonic() -> PotentialSpec {
        PotentialSpec::harmonic(1.0, 1.0).unwrap()
    }

    #[test]
    fn short_time_examples() {
        let free = AveragedPotential::with_default_nodes(PotentialSpec::Free);
        assert_abs_diff_eq!(short_time_action(&free, &[1.0], &[0.0], 0.5, 0.0, &one()).unwrap().value, 1.0);
        let h = AveragedPotential::with_default_nodes(harmonic());
        let s = short_time_action(&h, &[1.0], &[0.0], 0.1, 0.0, &one()).unwrap().value;
        assert_abs_diff_eq!(s, 5.0 - 0.1 / 6.0, epsilon = 1e-13);
        let q = AveragedPotential::with_default_nodes(PotentialSpec::quartic(0.3).unwrap());
        let s = short_time_action(&q, &[0.7], &[0.7], 0.2, 0.0, &one()).unwrap().value;
        assert_abs_diff_eq!(s, -0.3 * 0.7f64.powi(4) * 0.2, epsilon = 1e-14);
        assert_eq!(short_time_action(&h, &[1.0], &[0.0], 1.0, 1.0, &one()), Err(Error::ZeroTimeStep));
    }

    #[test]
    fn exact_examples() {
        assert_abs_diff_eq!(exact_action(&PotentialSpec::Free, &[1.0], &[0.0], 0.5, 0.0, &one()).unwrap().value, 1.0);
        let s = exact_action(&harmonic(), &[1.0], &[0.0], 0.1, 0.0, &one()).unwrap().value;
        assert_abs_diff_eq!(s, 0.1f64.cos() / (2.0 * 0.1f64.sin()), epsilon = 1e-13);
        assert!(matches!(
            exact_action(&harmonic(), &[1.0], &[0.0], std::f64::consts::PI, 0.0, &one()),
            Err(Error::Caustic { .. })
        ));
        assert!(exact_action(&PotentialSpec::quartic(1.0).unwrap(), &[1.0], &[0.0], 0.1, 0.0, &one()).is_err());
    }

    #[test]
    fn exact_minus_short_time_is_second_order() {
        let avg = AveragedPotential::with_default_nodes(harmonic());
        let samples: Vec<(f64, f64)> = [0.2, 0.1, 0.05, 0.025]
            .iter()
            .map(|&dt| {
                let e = exact_action(&harmonic(), &[1.0], &[0.0], dt, 0.0, &one()).unwrap().value;
                let s = short_time_action(&avg, &[1.0], &[0.0], dt, 0.0, &one()).unwrap().value;
                (dt, (e - s).abs())
            })
            .collect();
        assert!(fit_convergence_order(&samples).unwrap() >= 1.9);
    }

    #[test]
    fn shooting_matches_closed_forms() {
        let free = action_by_shooting(&PotentialSpec::Free, &[1.3], &[-0.4], 0.7, 0.0, &one(), Default::default()).unwrap();
        let exact = exact_action(&PotentialSpec::Free, &[1.3], &[-0.4], 0.7, 0.0, &one()).unwrap().value;
        assert_abs_diff_eq!(free.action.value, exact, epsilon = 1e-10);
        let h = action_by_shooting(&harmonic(), &[1.0], &[0.0], 0.1, 0.0, &one(), Default::default()).unwrap();
        assert_abs_diff_eq!(h.action.value, 0.1f64.cos() / (2.0 * 0.1f64.sin()), epsilon = 1e-10);
        assert_eq!(h.action.method, ActionMethod::Shooting);
    }

    #[test]
    fn shooting_quartic_agrees_with_short_time_at_second_order() {
        let spec = PotentialSpec::quartic(0.1).unwrap();
        let avg = AveragedPotential::with_default_nodes(spec.clone());
        let samples: Vec<(f64, f64)> = [0.05, 0.025, 0.0125, 0.00625]
            .iter()
            .map(|&dt| {
                let s = action_by_shooting(&spec, &[0.5], &[0.0], dt, 0.0, &one(), Default::default()).unwrap();
                let sbar = short_time_action(&avg, &[0.5], &[0.0], dt, 0.0, &one()).unwrap().value;
                (dt, (s.action.value - sbar).abs())
            })
            .collect();
        assert!(fit_convergence_order(&samples).unwrap() >= 1.9, "{samples:?}");
    }

    #[test]
    fn shooting_momentum_is_minus_x0_derivative() {
        let spec = PotentialSpec::quartic(0.4).unwrap();
        let cfg = SystemConfig::new(1.0, vec![1.5]).unwrap();
        let (x, x0, t) = (0.8, 0.1, 0.3);
        let opts = ShootingOptions { steps: 2048, ..Default::default() };
        let base = action_by_shooting(&spec, &[x], &[x0], t, 0.0, &cfg, opts).unwrap();
        let h = 1e-4;
        let hi = action_by_shooting(&spec, &[x], &[x0 + h], t, 0.0, &cfg, opts).unwrap().action.value;
        let lo = action_by_shooting(&spec, &[x], &[x0 - h], t, 0.0, &cfg, opts).unwrap().action.value;
        assert_abs_diff_eq!(-(hi - lo) / (2.0 * h), base.momentum[0], epsilon = 1e-6);
    }

    #[test]
    fn shooting_refuses_long_intervals() {
        let stiff = PotentialSpec::harmonic(1.0, 10.0).unwrap();
        assert!(matches!(
            action_by_shooting(&stiff, &[1.0], &[0.0], 1.0, 0.0, &one(), Default::default()),
            Err(Error::Domain(_))
        ));
    }

    proptest! {
        #[test]
        fn time_reversal_symmetry(x in -3.0f64..3.0, x0 in -3.0f64..3.0, dt in 0.05f64..1.5, w in 0.2f64..2.0) {
            let cfg = SystemConfig::new(1.0, vec![1.0]).unwrap();
            for spec in [PotentialSpec::Free, PotentialSpec::Harmonic { mass: 1.0, omega: w }] {
                let a = exact_action(&spec, &[x], &[x0], dt, 0.0, &cfg).unwrap().value;
                let b = exact_action(&spec, &[x0], &[x], dt, 0.0, &cfg).unwrap().value;
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }

        #[test]
        fn hamilton_jacobi_residual(x in -3.0f64..3.0, x0 in -3.0f64..3.0, dt in 0.05f64..2.5, m in 0.5f64..2.0, w in 0.3f64..1.2) {
            let cfg = SystemConfig::new(1.0, vec![m]).unwrap();
            let spec = PotentialSpec::Harmonic { mass: m, omega: w };
            let d = exact_action_partials(&spec, &[x], &[x0], dt, 0.0, &cfg).unwrap();
            let v = eval_potential(&spec, &[x]).unwrap();
            let residual = d.d_t + d.d_x[0] * d.d_x[0] / (2.0 * m) + v;
            let scale = d.d_t.abs().max(1.0);
            prop_assert!(residual.abs() <= 1e-8 * scale);
        }

        #[test]
        fn expansion_is_exact_by_construction(x in -3.0f64..3.0, x0 in -3.0f64..3.0, dt in 0.01f64..1.0) {
            let cfg = SystemConfig::natural(1);
            let avg = AveragedPotential::with_default_nodes(PotentialSpec::Quartic { coefficient: 0.5 });
            let s = short_time_action(&avg, &[x], &[x0], dt, 0.0, &cfg).unwrap().value;
            let parts = s0(&[x], &[x0], &cfg) / dt + s1(&avg, &[x], &[x0]).unwrap() * dt;
            prop_assert_eq!(s, parts);
            prop_assert!(s0(&[x], &[x0], &cfg) >= 0.0);
        }
    }
}
