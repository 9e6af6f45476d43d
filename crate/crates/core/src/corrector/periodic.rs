//! Symmetric periodic orbits, their monodromy, and initial guesses for
//! quasi-periodic motion along a center mode.

use std::f64::consts::TAU;

use nalgebra::{Complex, DMatrix, DVector, Matrix6, Vector6};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::Dynamics;
use crate::error::{FdcError, Result};
use crate::linalg::min_norm_solve;
use crate::propagation::{propagate_stm, propagate_with_stm, IntegratorOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub state: Vector6<f64>,
    pub period: f64,
}

impl PeriodicOrbit {
    pub fn frequency(&self) -> f64 {
        TAU / self.period
    }
}

/// Free variables and half-period conditions of a mirror-symmetric orbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricSetup {
    /// State components varied.
    pub free: Vec<usize>,
    /// Whether the period is varied too.
    pub vary_period: bool,
    /// Components that vanish at the half period.
    pub crossing: Vec<usize>,
    pub tol: f64,
    pub max_iter: usize,
}

impl SymmetricSetup {
    /// Planar orbit crossing `y = 0` perpendicularly, fixed period,
    /// varying `x` and `y'`.
    pub fn planar_fixed_period() -> Self {
        Self { free: vec![0, 4], vary_period: false, crossing: vec![1, 3], tol: 1e-12, max_iter: 30 }
    }

    /// Spatial orbit symmetric about the `xz` plane, fixed period, varying
    /// `x`, `z` and `y'`.
    pub fn spatial_fixed_period() -> Self {
        Self { free: vec![0, 2, 4], vary_period: false, crossing: vec![1, 3, 5], tol: 1e-12, max_iter: 30 }
    }
}

/// Newton correction of a symmetric periodic orbit from its half-period
/// crossing conditions, with minimum-norm steps.
pub fn correct_symmetric(
    model: &dyn Dynamics,
    guess: &PeriodicOrbit,
    setup: &SymmetricSetup,
    opts: &IntegratorOptions,
) -> Result<PeriodicOrbit> {
    let mut x = guess.state;
    let mut period = guess.period;
    let ncols = setup.free.len() + usize::from(setup.vary_period);
    if ncols < setup.crossing.len() || setup.crossing.is_empty() {
        return Err(FdcError::Config("symmetric correction needs at least as many free variables as conditions".into()));
    }
    let mut residual = f64::INFINITY;
    for _ in 0..=setup.max_iter {
        let (xh, phi) = propagate_stm(model, &x, 0.0, 0.5 * period, opts)?;
        let f = DVector::from_iterator(setup.crossing.len(), setup.crossing.iter().map(|&c| xh[c]));
        residual = f.amax();
        if residual < setup.tol {
            return Ok(PeriodicOrbit { state: x, period });
        }
        let mut j = DMatrix::zeros(setup.crossing.len(), ncols);
        for (r, &c) in setup.crossing.iter().enumerate() {
            for (k, &v) in setup.free.iter().enumerate() {
                j[(r, k)] = phi[(c, v)];
            }
        }
        if setup.vary_period {
            let xdot = model.derivative(0.5 * period, &xh)?;
            for (r, &c) in setup.crossing.iter().enumerate() {
                j[(r, ncols - 1)] = 0.5 * xdot[c];
            }
        }
        let dx = -min_norm_solve(&j, &f, "symmetric orbit correction")?;
        for (k, &v) in setup.free.iter().enumerate() {
            x[v] += dx[k];
        }
        if setup.vary_period {
            period += dx[ncols - 1];
        }
    }
    Err(FdcError::NotConverged { iterations: setup.max_iter, residual })
}

/// State transition matrix over one period.
pub fn monodromy(model: &dyn Dynamics, orbit: &PeriodicOrbit, opts: &IntegratorOptions) -> Result<Matrix6<f64>> {
    Ok(propagate_stm(model, &orbit.state, 0.0, orbit.period, opts)?.1)
}

/// A center eigenvalue `λ = e^{iσ}` of the monodromy matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CenterMode {
    pub eigenvalue: Complex64,
    pub eigenvector: [Complex64; 6],
    /// Rotation number `σ = atan2(|Im λ|, Re λ)`.
    pub rotation: f64,
    /// `ν_C = 2π/T`.
    pub nu_c: f64,
    /// `ν_Q = σ ν_C / 2π`.
    pub nu_q: f64,
}

/// Eigenvalues of a real 6×6 matrix.
pub fn eigenvalues(m: &Matrix6<f64>) -> Vec<Complex64> {
    m.complex_eigenvalues().iter().map(|z| Complex64::new(z.re, z.im)).collect()
}

/// Eigenvector for a known eigenvalue by shifted inverse iteration,
/// normalized so that its largest entry is real and positive.
fn eigenvector(m: &Matrix6<f64>, lambda: Complex64) -> Result<[Complex64; 6]> {
    let shift = lambda * (1.0 + 1e-10);
    let a = DMatrix::<Complex<f64>>::from_fn(6, 6, |r, c| {
        let v = Complex::new(m[(r, c)], 0.0);
        if r == c {
            v - Complex::new(shift.re, shift.im)
        } else {
            v
        }
    });
    let lu = a.lu();
    let mut v = DVector::<Complex<f64>>::from_element(6, Complex::new(1.0, 0.5));
    for _ in 0..4 {
        v = lu
            .solve(&v)
            .ok_or_else(|| FdcError::SingularMatrix { what: "eigenvector iteration".into(), cond: f64::INFINITY })?;
        let n = v.norm();
        v /= Complex::new(n, 0.0);
    }
    let big = (0..6).max_by(|&a, &b| v[a].norm().total_cmp(&v[b].norm())).expect("nonempty");
    let rot = v[big].conj() / v[big].norm();
    let mut out = [Complex64::new(0.0, 0.0); 6];
    for k in 0..6 {
        let z = v[k] * rot;
        out[k] = Complex64::new(z.re, z.im);
    }
    Ok(out)
}

/// Center modes (unit-modulus, non-real eigenvalues with positive imaginary
/// part), ordered by rotation number.
pub fn center_modes(m: &Matrix6<f64>, period: f64) -> Result<Vec<CenterMode>> {
    let nu_c = TAU / period;
    let mut modes = Vec::new();
    for lambda in eigenvalues(m) {
        if (lambda.norm() - 1.0).abs() < 1e-5 && lambda.im > 1e-6 {
            let rotation = lambda.im.abs().atan2(lambda.re);
            modes.push(CenterMode {
                eigenvalue: lambda,
                eigenvector: eigenvector(m, lambda)?,
                rotation,
                nu_c,
                nu_q: rotation * nu_c / TAU,
            });
        }
    }
    if modes.is_empty() {
        return Err(FdcError::Singularity("monodromy matrix has no center pair".into()));
    }
    modes.sort_by(|a, b| a.rotation.total_cmp(&b.rotation));
    Ok(modes)
}

/// States displaced along the linear flow of a center mode,
/// `x(t) = x_p(s) + ε Re(e^{iφ} λ^k Φ(s) v)` with `t = kT + s`, at each
/// requested time measured from the orbit's initial state. The eigenvector
/// is scaled so that the displacement at `t = 0, φ = 0` has norm `ε`.
pub fn seed_from_eigenstructure(
    model: &dyn Dynamics,
    orbit: &PeriodicOrbit,
    mode: &CenterMode,
    amplitude: f64,
    phase: f64,
    times: &[f64],
    opts: &IntegratorOptions,
) -> Result<Vec<Vector6<f64>>> {
    let traj = propagate_with_stm(model, &orbit.state, 0.0, orbit.period, opts)?;
    let v: Vec<Complex64> = mode.eigenvector.to_vec();
    let re_norm = v.iter().map(|z| z.re * z.re).sum::<f64>().sqrt();
    if re_norm == 0.0 {
        return Err(FdcError::Singularity("center eigenvector has no real part".into()));
    }
    let rot = Complex64::from_polar(amplitude / re_norm, phase);
    times
        .iter()
        .map(|&t| {
            let k = (t / orbit.period).floor();
            let s = (t - k * orbit.period).clamp(0.0, orbit.period);
            let (xp, phi) = traj.state_and_stm(s)?;
            let coef = rot * mode.eigenvalue.powf(k);
            let mut x = xp;
            for r in 0..6 {
                let mut z = Complex64::new(0.0, 0.0);
                for c in 0..6 {
                    z += v[c] * phi[(r, c)];
                }
                x[r] += (coef * z).re;
            }
            Ok(x)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Cr3bp;

    const MU: f64 = 0.012_150_584_269_940_356;

    fn dro() -> PeriodicOrbit {
        let guess = PeriodicOrbit {
            state: Vector6::new(0.9298, 0.0, 0.0, 0.0, 0.5226, 0.0),
            period: TAU / 8.663_312_798_369_873,
        };
        correct_symmetric(&Cr3bp::new(MU), &guess, &SymmetricSetup::planar_fixed_period(), &IntegratorOptions::default())
            .unwrap()
    }

    #[test]
    fn corrected_dro_is_periodic() {
        let o = dro();
        let m = Cr3bp::new(MU);
        let x = crate::propagation::propagate_state(&m, &o.state, 0.0, o.period, &IntegratorOptions::default()).unwrap();
        assert!((x - o.state).amax() < 1e-9, "{}", (x - o.state).amax());
    }

    #[test]
    fn monodromy_is_symplectic_and_has_a_center_pair() {
        let o = dro();
        let m = monodromy(&Cr3bp::new(MU), &o, &IntegratorOptions::default()).unwrap();
        assert!((m.determinant() - 1.0).abs() < 1e-8);
        let modes = center_modes(&m, o.period).unwrap();
        let c = modes.iter().find(|c| c.eigenvalue.re > 0.5).unwrap();
        // Eigenpair residual.
        let mut worst: f64 = 0.0;
        for r in 0..6 {
            let mut z = Complex64::new(0.0, 0.0);
            for k in 0..6 {
                z += c.eigenvector[k] * m[(r, k)];
            }
            worst = worst.max((z - c.eigenvalue * c.eigenvector[r]).norm());
        }
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn zero_amplitude_reproduces_the_orbit() {
        let o = dro();
        let m = Cr3bp::new(MU);
        let opts = IntegratorOptions::default();
        let mono = monodromy(&m, &o, &opts).unwrap();
        let mode = center_modes(&mono, o.period).unwrap()[0];
        let s = seed_from_eigenstructure(&m, &o, &mode, 0.0, 0.0, &[0.0], &opts).unwrap();
        assert_eq!(s[0], o.state);
    }

    #[test]
    fn seeded_patchpoints_are_nearly_continuous() {
        let o = dro();
        let m = Cr3bp::new(MU);
        let opts = IntegratorOptions::default();
        let mono = monodromy(&m, &o, &opts).unwrap();
        let mode = center_modes(&mono, o.period).unwrap()[0];
        let eps = 1e-4;
        let times: Vec<f64> = (0..7).map(|k| k as f64 * o.period / 3.0).collect();
        let seeds = seed_from_eigenstructure(&m, &o, &mode, eps, 0.3, &times, &opts).unwrap();
        let at0 = seed_from_eigenstructure(&m, &o, &mode, eps, 0.0, &[0.0], &opts).unwrap();
        assert!(((at0[0] - o.state).norm() - eps).abs() < 1e-15);
        for k in 0..6 {
            let x = crate::propagation::propagate_state(&m, &seeds[k], times[k], times[k + 1], &opts).unwrap();
            // Linear flow: defects are second order in the displacement.
            assert!((x - seeds[k + 1]).amax() < 1e-6, "{k}: {}", (x - seeds[k + 1]).amax());
        }
    }
}
