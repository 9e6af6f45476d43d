//! Reference frames, frame transformations, and Keplerian elements.
//!
//! * BRF: barycentric rotating frame of the Earth–Moon system, Moon at `(1-μ, 0, 0)`.
//! * EOF: Moon-centred frame obtained by rotating BRF axes at unit negative rate
//!   about `ẑ`, so that `R_E = C_E(t)(ρ - ρ_M)` with `C_E(0) = I`.
//! * MCI: Moon-centred inertial frame, `R = (l/l*) C (ρ - ρ_M)` with `C` from an
//!   ephemeris provider.
//!
//! Every transformation here is affine in the state, so each one is exposed as
//! a [`FrameMap`] whose linear part doubles as the state Jacobian used by the
//! signal extractors.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::dynamics::ephemeris::{plane_rotation, EphemerisProvider};
use crate::error::{FdcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FrameTag {
    Brf,
    Eof,
    Mci,
}

impl std::fmt::Display for FrameTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FrameTag::Brf => "BRF",
            FrameTag::Eof => "EOF",
            FrameTag::Mci => "MCI",
        };
        f.write_str(s)
    }
}

/// Position and velocity in a tagged frame, nd units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateVector6 {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub frame: FrameTag,
    pub epoch: f64,
}

impl StateVector6 {
    pub fn new(
        position: Vector3<f64>,
        velocity: Vector3<f64>,
        frame: FrameTag,
        epoch: f64,
    ) -> Result<Self> {
        let s = Self { position, velocity, frame, epoch };
        if s.to_vector().iter().all(|v| v.is_finite()) && epoch.is_finite() {
            Ok(s)
        } else {
            Err(FdcError::Config("state has non-finite components".into()))
        }
    }

    pub fn from_vector(x: &Vector6<f64>, frame: FrameTag, epoch: f64) -> Result<Self> {
        Self::new(x.fixed_rows::<3>(0).into(), x.fixed_rows::<3>(3).into(), frame, epoch)
    }

    pub fn from_array(x: [f64; 6], frame: FrameTag, epoch: f64) -> Result<Self> {
        Self::from_vector(&Vector6::from(x), frame, epoch)
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let p = &self.position;
        let v = &self.velocity;
        Vector6::new(p.x, p.y, p.z, v.x, v.y, v.z)
    }

    pub fn require(&self, frame: FrameTag) -> Result<()> {
        if self.frame == frame {
            Ok(())
        } else {
            Err(FdcError::FrameMismatch { expected: frame, found: self.frame })
        }
    }

    /// Componentwise difference; both states must share a frame.
    pub fn difference(&self, other: &StateVector6) -> Result<Vector6<f64>> {
        other.require(self.frame)?;
        Ok(self.to_vector() - other.to_vector())
    }
}

/// Affine state map `x_to = matrix · x_from + offset` at one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMap {
    pub from: FrameTag,
    pub to: FrameTag,
    pub matrix: Matrix6<f64>,
    pub offset: Vector6<f64>,
}

impl FrameMap {
    pub fn identity(frame: FrameTag) -> Self {
        Self { from: frame, to: frame, matrix: Matrix6::identity(), offset: Vector6::zeros() }
    }

    pub fn apply(&self, s: &StateVector6) -> Result<StateVector6> {
        s.require(self.from)?;
        StateVector6::from_vector(&(self.matrix * s.to_vector() + self.offset), self.to, s.epoch)
    }

    pub fn apply_vector(&self, x: &Vector6<f64>) -> Vector6<f64> {
        self.matrix * x + self.offset
    }

    /// Map that is applied after `self`.
    pub fn then(&self, next: &FrameMap) -> Result<FrameMap> {
        if next.from != self.to {
            return Err(FdcError::FrameMismatch { expected: self.to, found: next.from });
        }
        Ok(FrameMap {
            from: self.from,
            to: next.to,
            matrix: next.matrix * self.matrix,
            offset: next.matrix * self.offset + next.offset,
        })
    }
}

fn moon_position(mu: f64) -> Vector6<f64> {
    Vector6::new(1.0 - mu, 0.0, 0.0, 0.0, 0.0, 0.0)
}

/// `[[s C, 0], [s' C + s Ċ, s C]]`
fn rotation_block(c: &Matrix3<f64>, dc: &Matrix3<f64>, s: f64, ds: f64) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    let pos = c * s;
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&pos);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&pos);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&(c * ds + dc * s));
    m
}

fn centring_map(from: FrameTag, to: FrameTag, matrix: Matrix6<f64>, mu: f64) -> FrameMap {
    FrameMap { from, to, offset: -(matrix * moon_position(mu)), matrix }
}

fn uncentring_map(from: FrameTag, to: FrameTag, matrix: Matrix6<f64>, mu: f64) -> FrameMap {
    FrameMap { from, to, offset: moon_position(mu), matrix }
}

/// `C_E(t)` and its time derivative.
pub fn eof_dcm(t: f64) -> (Matrix3<f64>, Matrix3<f64>) {
    plane_rotation(t)
}

pub fn brf_to_eof_map(t: f64, mu: f64) -> FrameMap {
    let (c, dc) = eof_dcm(t);
    centring_map(FrameTag::Brf, FrameTag::Eof, rotation_block(&c, &dc, 1.0, 0.0), mu)
}

pub fn eof_to_brf_map(t: f64, mu: f64) -> FrameMap {
    let (c, dc) = eof_dcm(t);
    let ct = c.transpose();
    uncentring_map(FrameTag::Eof, FrameTag::Brf, rotation_block(&ct, &dc.transpose(), 1.0, 0.0), mu)
}

pub fn brf_to_mci_map(t: f64, eph: &dyn EphemerisProvider, mu: f64) -> Result<FrameMap> {
    let (l, dl) = eph.earth_moon_distance(t)?;
    let (c, dc) = eph.rotating_dcm(t)?;
    Ok(centring_map(FrameTag::Brf, FrameTag::Mci, rotation_block(&c, &dc, l, dl), mu))
}

pub fn mci_to_brf_map(t: f64, eph: &dyn EphemerisProvider, mu: f64) -> Result<FrameMap> {
    let (l, dl) = eph.earth_moon_distance(t)?;
    if !(l > 0.0) {
        return Err(FdcError::Ephemeris { t, reason: format!("Earth–Moon distance {l}") });
    }
    let (c, dc) = eph.rotating_dcm(t)?;
    let inv = 1.0 / l;
    let m = rotation_block(&c.transpose(), &dc.transpose(), inv, -dl * inv * inv);
    Ok(uncentring_map(FrameTag::Mci, FrameTag::Brf, m, mu))
}

/// BRF to EOF at the state's epoch.
pub fn brf_to_eof(s: &StateVector6, mu: f64) -> Result<StateVector6> {
    brf_to_eof_map(s.epoch, mu).apply(s)
}

pub fn eof_to_brf(s: &StateVector6, mu: f64) -> Result<StateVector6> {
    eof_to_brf_map(s.epoch, mu).apply(s)
}

pub fn brf_to_mci(s: &StateVector6, eph: &dyn EphemerisProvider, mu: f64) -> Result<StateVector6> {
    s.require(FrameTag::Brf)?;
    brf_to_mci_map(s.epoch, eph, mu)?.apply(s)
}

pub fn mci_to_brf(s: &StateVector6, eph: &dyn EphemerisProvider, mu: f64) -> Result<StateVector6> {
    s.require(FrameTag::Mci)?;
    mci_to_brf_map(s.epoch, eph, mu)?.apply(s)
}

/// Map from `from` to `to` at epoch `t`.
pub fn frame_map(
    from: FrameTag,
    to: FrameTag,
    t: f64,
    eph: &dyn EphemerisProvider,
    mu: f64,
) -> Result<FrameMap> {
    use FrameTag::*;
    match (from, to) {
        (a, b) if a == b => Ok(FrameMap::identity(a)),
        (Brf, Eof) => Ok(brf_to_eof_map(t, mu)),
        (Eof, Brf) => Ok(eof_to_brf_map(t, mu)),
        (Brf, Mci) => brf_to_mci_map(t, eph, mu),
        (Mci, Brf) => mci_to_brf_map(t, eph, mu),
        (Eof, Mci) => eof_to_brf_map(t, mu).then(&brf_to_mci_map(t, eph, mu)?),
        (Mci, Eof) => mci_to_brf_map(t, eph, mu)?.then(&brf_to_eof_map(t, mu)),
        _ => unreachable!(),
    }
}

/// Wrap an angle into `[0, 2π)`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Wrap an angle difference into `(-π, π]`.
pub fn wrap_pi(a: f64) -> f64 {
    let r = normalize_angle(a);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Threshold below which eccentricity or inclination is treated as zero.
pub const DEGENERATE_TOL: f64 = 1e-11;

/// Classical elements. Angles in radians; `a` in the caller's length unit.
///
/// For circular orbits `ω = 0` and `M` is measured from the node; for
/// equatorial orbits `Ω = 0` and `ω` is measured from `X̂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeplerElements {
    pub a: f64,
    pub e: f64,
    pub i: f64,
    pub raan: f64,
    pub argp: f64,
    pub mean_anomaly: f64,
}

impl KeplerElements {
    pub fn new(a: f64, e: f64, i: f64, raan: f64, argp: f64, mean_anomaly: f64) -> Result<Self> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(FdcError::DegenerateElements(format!("semi-major axis {a}")));
        }
        if !(0.0..1.0).contains(&e) {
            return Err(FdcError::Unbound(e));
        }
        if !(0.0..=PI).contains(&i) {
            return Err(FdcError::DegenerateElements(format!("inclination {i}")));
        }
        Ok(Self {
            a,
            e,
            i,
            raan: normalize_angle(raan),
            argp: normalize_angle(argp),
            mean_anomaly: normalize_angle(mean_anomaly),
        })
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.a, self.e, self.i, self.raan, self.argp, self.mean_anomaly]
    }

    pub fn from_array(x: [f64; 6]) -> Result<Self> {
        Self::new(x[0], x[1], x[2], x[3], x[4], x[5])
    }

    /// Semi-latus rectum.
    pub fn p(&self) -> f64 {
        self.a * (1.0 - self.e * self.e)
    }
}

/// Solve Kepler's equation `E - e sin E = M` for the eccentric anomaly.
pub fn eccentric_anomaly(m: f64, e: f64) -> f64 {
    let m = wrap_pi(m);
    let mut big_e = if e < 0.8 { m } else { PI.copysign(m) };
    for _ in 0..60 {
        let f = big_e - e * big_e.sin() - m;
        let df = 1.0 - e * big_e.cos();
        let step = f / df;
        big_e -= step;
        if step.abs() < 1e-16 * (1.0 + big_e.abs()) {
            break;
        }
    }
    big_e
}

pub fn true_from_mean(m: f64, e: f64) -> f64 {
    let big_e = eccentric_anomaly(m, e);
    let (s, c) = (0.5 * big_e).sin_cos();
    normalize_angle(2.0 * ((1.0 + e).sqrt() * s).atan2((1.0 - e).sqrt() * c))
}

pub fn mean_from_true(nu: f64, e: f64) -> f64 {
    let big_e = ((1.0 - e * e).sqrt() * nu.sin()).atan2(e + nu.cos());
    normalize_angle(big_e - e * big_e.sin())
}

/// Signed angle from `from` to `to` about axis `axis` (unit vector).
fn angle_about(from: &Vector3<f64>, to: &Vector3<f64>, axis: &Vector3<f64>) -> f64 {
    normalize_angle(from.cross(to).dot(axis).atan2(from.dot(to)))
}

/// Osculating elements of a Moon-centred state (EOF or MCI) with lunar
/// gravitational parameter `mu_moon`.
pub fn cartesian_to_kepler(s: &StateVector6, mu_moon: f64) -> Result<KeplerElements> {
    if s.frame == FrameTag::Brf {
        return Err(FdcError::FrameMismatch { expected: FrameTag::Eof, found: s.frame });
    }
    let r = s.position;
    let v = s.velocity;
    let rn = r.norm();
    let h = r.cross(&v);
    let hn = h.norm();
    if rn == 0.0 || hn == 0.0 {
        return Err(FdcError::DegenerateElements("rectilinear or zero state".into()));
    }
    let energy = 0.5 * v.norm_squared() - mu_moon / rn;
    let e_vec = ((v.norm_squared() - mu_moon / rn) * r - r.dot(&v) * v) / mu_moon;
    let mut e = e_vec.norm();
    if e >= 1.0 || energy >= 0.0 {
        return Err(FdcError::Unbound(e));
    }
    let a = -mu_moon / (2.0 * energy);
    let h_hat = h / hn;
    let mut i = h_hat.z.clamp(-1.0, 1.0).acos();
    let equatorial = i < DEGENERATE_TOL || PI - i < DEGENERATE_TOL;
    let circular = e < DEGENERATE_TOL;
    if circular {
        e = 0.0;
    }
    if i < DEGENERATE_TOL {
        i = 0.0;
    } else if PI - i < DEGENERATE_TOL {
        i = PI;
    }
    let x_hat = Vector3::x();
    let node = if equatorial { x_hat } else { Vector3::z().cross(&h_hat).normalize() };
    let raan = if equatorial { 0.0 } else { node.y.atan2(node.x) };
    let (argp, nu) = if circular {
        (0.0, angle_about(&node, &r, &h_hat))
    } else {
        (angle_about(&node, &e_vec, &h_hat), angle_about(&e_vec, &r, &h_hat))
    };
    KeplerElements::new(a, e, i, raan, argp, mean_from_true(nu, e))
}

/// Inverse of [`cartesian_to_kepler`]; the output is tagged `frame` at `epoch`.
pub fn kepler_to_cartesian(
    oe: &KeplerElements,
    mu_moon: f64,
    frame: FrameTag,
    epoch: f64,
) -> Result<StateVector6> {
    if frame == FrameTag::Brf {
        return Err(FdcError::FrameMismatch { expected: FrameTag::Eof, found: frame });
    }
    let nu = true_from_mean(oe.mean_anomaly, oe.e);
    let p = oe.p();
    let (sn, cn) = nu.sin_cos();
    let r = p / (1.0 + oe.e * cn);
    let r_pf = Vector3::new(r * cn, r * sn, 0.0);
    let k = (mu_moon / p).sqrt();
    let v_pf = Vector3::new(-k * sn, k * (oe.e + cn), 0.0);
    let q = rot_z(oe.raan) * rot_x(oe.i) * rot_z(oe.argp);
    StateVector6::new(q * r_pf, q * v_pf, frame, epoch)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}
