//! Refinement by maximizing the continuous-frequency DFT magnitude and
//! matching the DFT of a single tone to that of the signal at `ν`.

use nalgebra::{Matrix3, Vector3};

use crate::error::{FdcError, Result};
use crate::propagation::SampledSignal;
use crate::refine::FrequencyComponent;
use crate::spectrum::{dft_basis, dft_continuous, BasisDft, ContinuousDft};

/// Everything the constraints and their Jacobian need at one `ξ`.
#[derive(Debug, Clone, Copy)]
pub struct LnaffPoint {
    pub dft: ContinuousDft,
    pub basis: BasisDft,
}

impl LnaffPoint {
    pub fn at(signal: &SampledSignal, nu: f64) -> Result<Self> {
        let dft = dft_continuous(signal, nu)?;
        if dft.magnitude() == 0.0 {
            return Err(FdcError::Singularity(format!("|F| vanishes at ν = {nu}")));
        }
        Ok(Self { dft, basis: dft_basis(signal.len(), signal.dt, nu, nu) })
    }

    pub fn constraints(&self, xi: &FrequencyComponent) -> Vector3<f64> {
        let d = &self.dft;
        let b = &self.basis;
        let (ac, as_) = xi.cos_sin();
        let m = d.magnitude();
        Vector3::new(
            (d.c * d.dc + d.s * d.ds) / (2.0 * m),
            ac * b.cc - as_ * b.cs - d.c,
            ac * b.sc - as_ * b.ss - d.s,
        )
    }

    pub fn jacobian(&self, xi: &FrequencyComponent) -> Matrix3<f64> {
        let d = &self.dft;
        let b = &self.basis;
        let (ac, as_) = xi.cos_sin();
        let (c, s) = (xi.phase.cos(), xi.phase.sin());
        let m = d.magnitude();
        let l1 = d.c * d.dc + d.s * d.ds;
        let f_nu = -l1 * l1 / (2.0 * m * m * m)
            + (d.dc * d.dc + d.ds * d.ds + d.c * d.d2c + d.s * d.d2s) / (2.0 * m);
        let [dcc, dcs, dsc, dss] = b.diagonal_derivative();
        Matrix3::new(
            f_nu,
            0.0,
            0.0,
            ac * dcc - as_ * dcs - d.dc,
            c * b.cc - s * b.cs,
            -as_ * b.cc - ac * b.cs,
            ac * dsc - as_ * dss - d.ds,
            c * b.sc - s * b.ss,
            -as_ * b.sc - ac * b.ss,
        )
    }
}

/// Constraint vector at `ξ` for a signal whose earlier components have
/// already been removed.
pub fn lnaff_constraints(signal: &SampledSignal, xi: &FrequencyComponent) -> Result<Vector3<f64>> {
    Ok(LnaffPoint::at(signal, xi.nu)?.constraints(xi))
}

pub fn lnaff_jacobian(signal: &SampledSignal, xi: &FrequencyComponent) -> Result<Matrix3<f64>> {
    Ok(LnaffPoint::at(signal, xi.nu)?.jacobian(xi))
}
