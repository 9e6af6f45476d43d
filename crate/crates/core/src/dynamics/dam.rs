//! Doubly averaged model: mean elements of a lunar orbiter under the
//! averaged quadrupole perturbation of the Earth.
//!
//! The state is `[a, e, i, Ω, ω, M]` with `a` in units of `l*`.

use nalgebra::{Matrix6, Vector6};

use super::{Dynamics, ModelId};
use crate::constants::SystemConstants;
use crate::error::{FdcError, Result};
use crate::frames::{FrameTag, KeplerElements};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dam {
    pub constants: SystemConstants,
}

impl Dam {
    pub fn new(constants: SystemConstants) -> Self {
        Self { constants }
    }

    /// Nondimensional mean motion of the orbiter.
    pub fn mean_motion(&self, a: f64) -> f64 {
        (self.constants.mu_moon / (a * a * a)).sqrt()
    }

    fn rates(&self, x: &Vector6<f64>) -> Result<Vector6<f64>> {
        let [a, e, i, _raan, w, _m] = [x[0], x[1], x[2], x[3], x[4], x[5]];
        if !(a > 0.0) {
            return Err(FdcError::DegenerateElements(format!("a = {a}")));
        }
        if !(e > 0.0 && e < 1.0) {
            return Err(FdcError::DegenerateElements(format!("e = {e}")));
        }
        if i.sin() == 0.0 {
            return Err(FdcError::DegenerateElements("sin i = 0".into()));
        }
        let c = &self.constants;
        let n_bar = self.mean_motion(a);
        let n_e = c.n_earth * c.t_star_s;
        let k = (1.0 - c.mu) * n_e * n_e / n_bar;
        let e2 = e * e;
        let eta = (1.0 - e2).sqrt();
        let (s2w, c2w) = (2.0 * w).sin_cos();
        let (si, ci) = i.sin_cos();
        let c2i = (2.0 * i).cos();
        let s2i = (2.0 * i).sin();
        Ok(Vector6::new(
            0.0,
            15.0 / 8.0 * k * e * eta * si * si * s2w,
            -15.0 / 16.0 * k * e2 / eta * s2i * s2w,
            3.0 / 8.0 * k / eta * (5.0 * e2 * c2w - 3.0 * e2 - 2.0) * ci,
            3.0 / 16.0 * k / eta * ((3.0 + 2.0 * e2 + 5.0 * c2i) + 5.0 * (1.0 - 2.0 * e2 - c2i) * c2w),
            n_bar,
        ))
    }
}

/// Mean-element rates per nd time, ordered `[a, e, i, Ω, ω, M]`.
pub fn dam_rates(oe: &KeplerElements, c: &SystemConstants) -> Result<[f64; 6]> {
    let r = Dam::new(*c).rates(&Vector6::from(oe.to_array()))?;
    Ok([r[0], r[1], r[2], r[3], r[4], r[5]])
}

/// Frozen-orbit eccentricity for inclination `i` (with `ω = π/2` or `3π/2`).
pub fn frozen_eccentricity(i: f64) -> Result<f64> {
    let e2 = 1.0 - 5.0 / 3.0 * i.cos().powi(2);
    if e2 <= 0.0 {
        return Err(FdcError::DegenerateElements(format!(
            "no frozen orbit at inclination {i} rad"
        )));
    }
    Ok(e2.sqrt())
}

impl Dynamics for Dam {
    fn id(&self) -> ModelId {
        ModelId::Dam
    }

    fn frame(&self) -> Option<FrameTag> {
        None
    }

    fn derivative(&self, _t: f64, x: &Vector6<f64>) -> Result<Vector6<f64>> {
        self.rates(x)
    }

    fn jacobian(&self, _t: f64, _x: &Vector6<f64>) -> Result<Matrix6<f64>> {
        Err(FdcError::Config("the doubly averaged model has no variational equations".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn equilibrium_at_45_degrees() {
        let c = SystemConstants::default();
        let i = 45f64.to_radians();
        let e = frozen_eccentricity(i).unwrap();
        assert!((e - (1.0f64 / 6.0).sqrt()).abs() < 1e-15);
        assert!((e - 0.4082).abs() < 5e-5);
        let oe = KeplerElements::new(c.km_to_nd(10_000.0), e, i, 0.3, FRAC_PI_2, 1.0).unwrap();
        let r = dam_rates(&oe, &c).unwrap();
        assert_eq!(r[0], 0.0);
        assert!(r[1].abs() < 1e-14 && r[2].abs() < 1e-14 && r[4].abs() < 1e-14, "{r:?}");
        assert!(r[3] < 0.0);
    }

    #[test]
    fn degenerate_inputs_are_flagged() {
        let c = SystemConstants::default();
        let oe = KeplerElements::new(0.03, 0.0, 0.5, 0.0, 0.0, 0.0).unwrap();
        assert!(dam_rates(&oe, &c).is_err());
        let oe = KeplerElements::new(0.03, 0.1, 0.0, 0.0, 0.0, 0.0).unwrap();
        assert!(dam_rates(&oe, &c).is_err());
    }

    #[test]
    fn semimajor_axis_rate_is_structurally_zero() {
        let c = SystemConstants::default();
        for k in 0..20 {
            let f = k as f64;
            let oe = KeplerElements::new(0.01 + 0.001 * f, 0.05 + 0.04 * f, 0.1 + 0.14 * f, f, 2.0 * f, 3.0 * f).unwrap();
            assert_eq!(dam_rates(&oe, &c).unwrap()[0], 0.0);
        }
    }
}
