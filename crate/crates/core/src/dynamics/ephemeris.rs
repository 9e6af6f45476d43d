//! Analytic ephemeris providers for the Moon-centred force model.
//!
//! Positions are nd and expressed in the Moon-centred inertial (MCI) frame.
//! The rotating-frame direction cosine matrix `C = [x̂ ŷ ẑ]` maps barycentric
//! rotating axes into MCI axes; both analytic providers use `C(0) = I`.

use std::fmt::Debug;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::constants::SystemConstants;
use crate::error::{FdcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Body {
    Earth,
    Sun,
}

/// Source of perturbing-body positions and of the rotating-frame geometry.
///
/// Implementations must be immutable after construction. An adapter for a
/// tabulated ephemeris would implement this trait; only analytic providers
/// ship with the crate.
pub trait EphemerisProvider: Debug + Send + Sync {
    fn name(&self) -> &str;

    /// Perturbing bodies and their nd gravitational parameters.
    fn perturbers(&self) -> &[(Body, f64)];

    /// Position of `body` relative to the Moon, MCI axes.
    fn body_position(&self, body: Body, t: f64) -> Result<Vector3<f64>>;

    /// Instantaneous Earth–Moon distance in units of `l*`, and its rate.
    fn earth_moon_distance(&self, t: f64) -> Result<(f64, f64)>;

    /// `C(t)` and `dC/dt`.
    fn rotating_dcm(&self, t: f64) -> Result<(Matrix3<f64>, Matrix3<f64>)>;
}

/// Rotation about `ẑ` by angle `t` and its derivative with respect to `t`.
pub fn plane_rotation(t: f64) -> (Matrix3<f64>, Matrix3<f64>) {
    let (s, c) = t.sin_cos();
    let rot = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
    let drot = Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0);
    (rot, drot)
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(FdcError::Ephemeris { t, reason: "non-finite epoch".into() })
    }
}

/// Moon on a circular orbit of unit radius and unit rate; Earth is the only perturber.
#[derive(Debug, Clone)]
pub struct CircularProvider {
    perturbers: Vec<(Body, f64)>,
}

impl CircularProvider {
    pub fn new(c: &SystemConstants) -> Self {
        Self { perturbers: vec![(Body::Earth, c.mu_earth)] }
    }

    /// No perturbers at all: pure lunar two-body motion.
    pub fn two_body() -> Self {
        Self { perturbers: Vec::new() }
    }
}

impl EphemerisProvider for CircularProvider {
    fn name(&self) -> &str {
        "circular"
    }

    fn perturbers(&self) -> &[(Body, f64)] {
        &self.perturbers
    }

    fn body_position(&self, body: Body, t: f64) -> Result<Vector3<f64>> {
        check_time(t)?;
        match body {
            Body::Earth => {
                let (s, c) = t.sin_cos();
                Ok(Vector3::new(-c, -s, 0.0))
            }
            Body::Sun => Err(FdcError::Ephemeris {
                t,
                reason: "the circular provider has no Sun".into(),
            }),
        }
    }

    fn earth_moon_distance(&self, t: f64) -> Result<(f64, f64)> {
        check_time(t)?;
        Ok((1.0, 0.0))
    }

    fn rotating_dcm(&self, t: f64) -> Result<(Matrix3<f64>, Matrix3<f64>)> {
        check_time(t)?;
        Ok(plane_rotation(t))
    }
}

/// Circular Earth–Moon motion plus a Sun on a circular orbit about the
/// barycenter in the same plane.
#[derive(Debug, Clone)]
pub struct BicircularProvider {
    perturbers: Vec<(Body, f64)>,
    mu: f64,
    sun_distance: f64,
    sun_rate: f64,
    sun_phase: f64,
}

impl BicircularProvider {
    /// `sun_phase` is the inertial Sun angle at `t = 0`, measured from the
    /// initial Earth–Moon line.
    pub fn new(c: &SystemConstants, sun_phase: f64) -> Self {
        Self {
            perturbers: vec![(Body::Earth, c.mu_earth), (Body::Sun, c.mu_sun)],
            mu: c.mu,
            sun_distance: c.sun_distance,
            sun_rate: c.sun_rate,
            sun_phase,
        }
    }
}

impl EphemerisProvider for BicircularProvider {
    fn name(&self) -> &str {
        "bicircular"
    }

    fn perturbers(&self) -> &[(Body, f64)] {
        &self.perturbers
    }

    fn body_position(&self, body: Body, t: f64) -> Result<Vector3<f64>> {
        check_time(t)?;
        let (s, c) = t.sin_cos();
        match body {
            Body::Earth => Ok(Vector3::new(-c, -s, 0.0)),
            Body::Sun => {
                let (ss, cs) = (self.sun_phase + self.sun_rate * t).sin_cos();
                // Sun about the barycenter, shifted to the Moon.
                let barycenter = Vector3::new(-c, -s, 0.0) * (1.0 - self.mu);
                Ok(Vector3::new(cs, ss, 0.0) * self.sun_distance + barycenter)
            }
        }
    }

    fn earth_moon_distance(&self, t: f64) -> Result<(f64, f64)> {
        check_time(t)?;
        Ok((1.0, 0.0))
    }

    fn rotating_dcm(&self, t: f64) -> Result<(Matrix3<f64>, Matrix3<f64>)> {
        check_time(t)?;
        Ok(plane_rotation(t))
    }
}
