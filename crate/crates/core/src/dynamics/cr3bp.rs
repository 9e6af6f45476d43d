use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use super::{Dynamics, ModelId};
use crate::error::{FdcError, Result};
use crate::frames::{FrameTag, StateVector6};

/// Circular restricted three-body problem in the barycentric rotating frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cr3bp {
    pub mu: f64,
}

impl Cr3bp {
    pub fn new(mu: f64) -> Self {
        Self { mu }
    }

    fn primary_offsets(&self, r: &Vector3<f64>) -> Result<(Vector3<f64>, Vector3<f64>)> {
        let d = r - Vector3::new(-self.mu, 0.0, 0.0);
        let m = r - Vector3::new(1.0 - self.mu, 0.0, 0.0);
        if d.norm() == 0.0 || m.norm() == 0.0 {
            return Err(FdcError::Singularity("state at a primary".into()));
        }
        Ok((d, m))
    }

    /// Gradient of the pseudo-potential `V = (x²+y²)/2 + (1-μ)/d + μ/r`.
    pub fn potential_gradient(&self, r: &Vector3<f64>) -> Result<Vector3<f64>> {
        let (d, m) = self.primary_offsets(r)?;
        let d3 = d.norm().powi(3);
        let m3 = m.norm().powi(3);
        Ok(Vector3::new(r.x, r.y, 0.0) - d * ((1.0 - self.mu) / d3) - m * (self.mu / m3))
    }

    pub fn accel(&self, x: &Vector6<f64>) -> Result<Vector3<f64>> {
        let r = Vector3::new(x[0], x[1], x[2]);
        let g = self.potential_gradient(&r)?;
        Ok(g + Vector3::new(2.0 * x[4], -2.0 * x[3], 0.0))
    }

    pub fn jacobi_constant(&self, x: &Vector6<f64>) -> Result<f64> {
        let r = Vector3::new(x[0], x[1], x[2]);
        let (d, m) = self.primary_offsets(&r)?;
        let v2 = x[3] * x[3] + x[4] * x[4] + x[5] * x[5];
        Ok(r.x * r.x + r.y * r.y + 2.0 * (1.0 - self.mu) / d.norm() + 2.0 * self.mu / m.norm() - v2)
    }

    /// Collinear Lagrange point `k ∈ {1, 2, 3}` on the x-axis.
    pub fn collinear_point(&self, k: u8) -> Result<f64> {
        let mu = self.mu;
        let mut x = match k {
            1 => 1.0 - mu - (mu / 3.0).cbrt(),
            2 => 1.0 - mu + (mu / 3.0).cbrt(),
            3 => -1.0 - 5.0 * mu / 12.0,
            _ => return Err(FdcError::Config(format!("no collinear point L{k}"))),
        };
        for _ in 0..100 {
            let r = Vector3::new(x, 0.0, 0.0);
            let g = self.potential_gradient(&r)?.x;
            let dg = self.hessian(&r)?[(0, 0)];
            let step = g / dg;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        Ok(x)
    }

    fn hessian(&self, r: &Vector3<f64>) -> Result<Matrix3<f64>> {
        let (d, m) = self.primary_offsets(r)?;
        let mut h = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0));
        h -= point_mass_gradient(&d, 1.0 - self.mu);
        h -= point_mass_gradient(&m, self.mu);
        Ok(h)
    }

    pub fn state_jacobian(&self, x: &Vector6<f64>) -> Result<Matrix6<f64>> {
        let r = Vector3::new(x[0], x[1], x[2]);
        let mut a = Matrix6::zeros();
        a.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
        a.fixed_view_mut::<3, 3>(3, 0).copy_from(&self.hessian(&r)?);
        a[(3, 4)] = 2.0;
        a[(4, 3)] = -2.0;
        Ok(a)
    }
}

/// `μ (I/r³ - 3 r rᵀ / r⁵)`, the negated gradient of `-μ r / r³`.
pub(crate) fn point_mass_gradient(r: &Vector3<f64>, mu: f64) -> Matrix3<f64> {
    let n2 = r.norm_squared();
    let n = n2.sqrt();
    let n3 = n2 * n;
    (Matrix3::identity() - r * r.transpose() * (3.0 / n2)) * (mu / n3)
}

pub fn cr3bp_accel(s: &StateVector6, mu: f64) -> Result<Vector3<f64>> {
    s.require(FrameTag::Brf)?;
    Cr3bp::new(mu).accel(&s.to_vector())
}

pub fn cr3bp_jacobian(s: &StateVector6, mu: f64) -> Result<Matrix6<f64>> {
    s.require(FrameTag::Brf)?;
    Cr3bp::new(mu).state_jacobian(&s.to_vector())
}

impl Dynamics for Cr3bp {
    fn id(&self) -> ModelId {
        ModelId::Cr3bp
    }

    fn frame(&self) -> Option<FrameTag> {
        Some(FrameTag::Brf)
    }

    fn derivative(&self, _t: f64, x: &Vector6<f64>) -> Result<Vector6<f64>> {
        let a = self.accel(x)?;
        Ok(Vector6::new(x[3], x[4], x[5], a.x, a.y, a.z))
    }

    fn jacobian(&self, _t: f64, x: &Vector6<f64>) -> Result<Matrix6<f64>> {
        self.state_jacobian(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::fd_jacobian;
    use proptest::prelude::*;

    const MU: f64 = 0.012_150_584_269_940_356;

    #[test]
    fn lagrange_points_are_equilibria() {
        let m = Cr3bp::new(MU);
        for k in 1..=3 {
            let x = m.collinear_point(k).unwrap();
            let a = m.accel(&Vector6::new(x, 0.0, 0.0, 0.0, 0.0, 0.0)).unwrap();
            assert!(a.norm() < 1e-13, "L{k}: {a}");
        }
        let l1 = m.collinear_point(1).unwrap();
        assert!((l1 - 0.836_915).abs() < 1e-5);
    }

    #[test]
    fn primaries_are_singular() {
        let m = Cr3bp::new(MU);
        assert!(m.accel(&Vector6::new(1.0 - MU, 0.0, 0.0, 0.0, 0.0, 0.0)).is_err());
        assert!(m.accel(&Vector6::new(-MU, 0.0, 0.0, 0.0, 0.0, 0.0)).is_err());
    }

    proptest! {
        #[test]
        fn jacobian_matches_finite_differences(
            x in prop::array::uniform6(-1.2f64..1.2),
        ) {
            let x = Vector6::from(x);
            let m = Cr3bp::new(MU);
            let d = (x.fixed_rows::<3>(0) - Vector3::new(-MU, 0.0, 0.0)).norm();
            let r = (x.fixed_rows::<3>(0) - Vector3::new(1.0 - MU, 0.0, 0.0)).norm();
            prop_assume!(d > 0.05 && r > 0.05);
            let f = |y: &Vector6<f64>| m.derivative(0.0, y).unwrap();
            let fd = fd_jacobian(&f, &x, 1e-6);
            let an = m.jacobian(0.0, &x).unwrap();
            prop_assert!((fd - an).norm() < 1e-7 * an.norm());
        }
    }
}
