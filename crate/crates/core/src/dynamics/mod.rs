//! Equations of motion and their linearizations.

pub mod cr3bp;
pub mod dam;
pub mod ephemeris;
pub mod hfem;

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::frames::FrameTag;

pub use cr3bp::Cr3bp;
pub use dam::Dam;
pub use ephemeris::{BicircularProvider, Body, CircularProvider, EphemerisProvider};
pub use hfem::Hfem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelId {
    Dam,
    Cr3bp,
    Hfem,
}

/// A six-dimensional first-order system `x' = f(t, x)`.
pub trait Dynamics: Send + Sync {
    fn id(&self) -> ModelId;

    /// Frame of the Cartesian state, `None` for element-space models.
    fn frame(&self) -> Option<FrameTag>;

    fn derivative(&self, t: f64, x: &Vector6<f64>) -> Result<Vector6<f64>>;

    /// `∂f/∂x`, the variational-equation matrix.
    fn jacobian(&self, t: f64, x: &Vector6<f64>) -> Result<Matrix6<f64>>;
}

#[cfg(test)]
pub(crate) fn fd_jacobian(
    f: &dyn Fn(&Vector6<f64>) -> Vector6<f64>,
    x: &Vector6<f64>,
    h: f64,
) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    for j in 0..6 {
        let mut xp = *x;
        let mut xm = *x;
        xp[j] += h;
        xm[j] -= h;
        m.set_column(j, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    m
}
