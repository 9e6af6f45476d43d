use std::sync::Arc;

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use super::cr3bp::point_mass_gradient;
use super::ephemeris::EphemerisProvider;
use super::{Dynamics, ModelId};
use crate::error::{FdcError, Result};
use crate::frames::{FrameTag, StateVector6};

/// Moon-centred point-mass model with third-body perturbations from the
/// provider's bodies, integrated in MCI coordinates.
#[derive(Debug, Clone)]
pub struct Hfem {
    pub mu_moon: f64,
    pub ephemeris: Arc<dyn EphemerisProvider>,
    /// States closer than this to the Moon's centre are rejected.
    pub collision_radius: f64,
}

impl Hfem {
    pub fn new(mu_moon: f64, ephemeris: Arc<dyn EphemerisProvider>) -> Self {
        Self { mu_moon, ephemeris, collision_radius: 0.0 }
    }

    pub fn with_collision_radius(mut self, radius: f64) -> Self {
        self.collision_radius = radius;
        self
    }

    fn check_radius(&self, t: f64, r: &Vector3<f64>) -> Result<f64> {
        let n = r.norm();
        if !(n > self.collision_radius) || n == 0.0 {
            return Err(FdcError::Singularity(format!("lunar collision at t = {t} (R = {n:e})")));
        }
        Ok(n)
    }

    pub fn accel(&self, t: f64, r: &Vector3<f64>) -> Result<Vector3<f64>> {
        let n = self.check_radius(t, r)?;
        let mut a = -r * (self.mu_moon / (n * n * n));
        for &(body, mu_j) in self.ephemeris.perturbers() {
            let p = self.ephemeris.body_position(body, t)?;
            let sc = r - p;
            let sc3 = sc.norm().powi(3);
            let pm3 = p.norm().powi(3);
            // Direct term on the spacecraft minus the same pull on the Moon.
            a += (-p / pm3 - sc / sc3) * mu_j;
        }
        Ok(a)
    }

    pub fn gravity_gradient(&self, t: f64, r: &Vector3<f64>) -> Result<Matrix3<f64>> {
        self.check_radius(t, r)?;
        let mut g = -point_mass_gradient(r, self.mu_moon);
        for &(body, mu_j) in self.ephemeris.perturbers() {
            let p = self.ephemeris.body_position(body, t)?;
            g -= point_mass_gradient(&(r - p), mu_j);
        }
        Ok(g)
    }
}

pub fn hfem_accel(s: &StateVector6, model: &Hfem) -> Result<Vector3<f64>> {
    s.require(FrameTag::Mci)?;
    model.accel(s.epoch, &s.position)
}

pub fn hfem_jacobian(s: &StateVector6, model: &Hfem) -> Result<Matrix6<f64>> {
    s.require(FrameTag::Mci)?;
    model.jacobian(s.epoch, &s.to_vector())
}

impl Dynamics for Hfem {
    fn id(&self) -> ModelId {
        ModelId::Hfem
    }

    fn frame(&self) -> Option<FrameTag> {
        Some(FrameTag::Mci)
    }

    fn derivative(&self, t: f64, x: &Vector6<f64>) -> Result<Vector6<f64>> {
        let a = self.accel(t, &Vector3::new(x[0], x[1], x[2]))?;
        Ok(Vector6::new(x[3], x[4], x[5], a.x, a.y, a.z))
    }

    fn jacobian(&self, t: f64, x: &Vector6<f64>) -> Result<Matrix6<f64>> {
        let g = self.gravity_gradient(t, &Vector3::new(x[0], x[1], x[2]))?;
        let mut a = Matrix6::zeros();
        a.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
        a.fixed_view_mut::<3, 3>(3, 0).copy_from(&g);
        Ok(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::SystemConstants;
    use crate::dynamics::ephemeris::{BicircularProvider, CircularProvider};
    use crate::dynamics::fd_jacobian;
    use proptest::prelude::*;

    #[test]
    fn two_body_limit() {
        let m = Hfem::new(0.0121, Arc::new(CircularProvider::two_body()));
        let a = m.accel(0.0, &Vector3::new(0.02, 0.0, 0.0)).unwrap();
        assert!((a.x + 0.0121 / 0.0004).abs() < 1e-12);
        assert!(m.accel(0.0, &Vector3::zeros()).is_err());
    }

    #[test]
    fn collision_radius_is_enforced() {
        let m = Hfem::new(0.0121, Arc::new(CircularProvider::two_body())).with_collision_radius(0.0045);
        assert!(m.accel(0.0, &Vector3::new(0.004, 0.0, 0.0)).is_err());
    }

    proptest! {
        #[test]
        fn jacobian_matches_finite_differences(
            x in prop::array::uniform6(-0.3f64..0.3),
            t in -30.0f64..30.0,
        ) {
            let c = SystemConstants::default();
            let m = Hfem::new(c.mu_moon, Arc::new(BicircularProvider::new(&c, 1.0)));
            let x = Vector6::from(x);
            prop_assume!(x.fixed_rows::<3>(0).norm() > 0.02);
            let f = |y: &Vector6<f64>| m.derivative(t, y).unwrap();
            let fd = fd_jacobian(&f, &x, 1e-7);
            let an = m.jacobian(t, &x).unwrap();
            prop_assert!((fd - an).norm() < 1e-7 * an.norm(), "{}", (fd - an).norm() / an.norm());
        }
    }
}
