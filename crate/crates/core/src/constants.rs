//! Physical constants and the nondimensional (nd) scaling of the Earth–Moon system.
//!
//! Lengths are scaled by the mean Earth–Moon distance `l*`, gravitational
//! parameters by `GM_E + GM_M`, and time by `t* = sqrt(l*^3 / (GM_E + GM_M))`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FdcError, Result};

/// Environment variable naming a TOML or JSON constants file.
pub const CONSTANTS_ENV: &str = "FDC_CONSTANTS";

pub const SECONDS_PER_DAY: f64 = 86_400.0;
pub const DAYS_PER_YEAR: f64 = 365.25;

/// Dimensional inputs from which every nd quantity is derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsFile {
    #[serde(default = "defaults::gm_earth")]
    pub gm_earth_km3_s2: f64,
    #[serde(default = "defaults::gm_moon")]
    pub gm_moon_km3_s2: f64,
    #[serde(default = "defaults::gm_sun")]
    pub gm_sun_km3_s2: f64,
    #[serde(default = "defaults::l_star")]
    pub l_star_km: f64,
    #[serde(default = "defaults::au")]
    pub au_km: f64,
}

mod defaults {
    // DE430/DE440 point-mass values.
    pub fn gm_earth() -> f64 {
        398_600.435_436_095_9
    }
    pub fn gm_moon() -> f64 {
        4_902.800_066_163_796
    }
    pub fn gm_sun() -> f64 {
        132_712_440_041.939_38
    }
    pub fn l_star() -> f64 {
        384_400.0
    }
    pub fn au() -> f64 {
        149_597_870.7
    }
}

impl Default for ConstantsFile {
    fn default() -> Self {
        Self {
            gm_earth_km3_s2: defaults::gm_earth(),
            gm_moon_km3_s2: defaults::gm_moon(),
            gm_sun_km3_s2: defaults::gm_sun(),
            l_star_km: defaults::l_star(),
            au_km: defaults::au(),
        }
    }
}

/// Derived nd constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConstants {
    /// Earth–Moon mass ratio `μ = μ_M / (μ_E + μ_M)`.
    pub mu: f64,
    pub l_star_km: f64,
    pub t_star_s: f64,
    pub mu_earth: f64,
    pub mu_moon: f64,
    pub mu_sun: f64,
    /// Dimensional mean angular rate of the Earth about the Moon (rad/s).
    pub n_earth: f64,
    /// Sun distance from the Earth–Moon barycenter (nd).
    pub sun_distance: f64,
    /// Inertial angular rate of the Sun about the barycenter (nd).
    pub sun_rate: f64,
}

impl SystemConstants {
    pub fn from_file(c: &ConstantsFile) -> Result<Self> {
        let all = [c.gm_earth_km3_s2, c.gm_moon_km3_s2, c.gm_sun_km3_s2, c.l_star_km, c.au_km];
        if all.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(FdcError::Config("constants must be finite and positive".into()));
        }
        let gm_sum = c.gm_earth_km3_s2 + c.gm_moon_km3_s2;
        let t_star = (c.l_star_km.powi(3) / gm_sum).sqrt();
        let mu_sun = c.gm_sun_km3_s2 / gm_sum;
        let sun_distance = c.au_km / c.l_star_km;
        Ok(Self {
            mu: c.gm_moon_km3_s2 / gm_sum,
            l_star_km: c.l_star_km,
            t_star_s: t_star,
            mu_earth: c.gm_earth_km3_s2 / gm_sum,
            mu_moon: c.gm_moon_km3_s2 / gm_sum,
            mu_sun,
            n_earth: 1.0 / t_star,
            sun_distance,
            sun_rate: ((mu_sun + 1.0) / sun_distance.powi(3)).sqrt(),
        })
    }

    /// Load from a `.toml` or `.json` file; missing keys take defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: ConstantsFile = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)
                .map_err(|e| FdcError::Config(format!("{}: {e}", path.display())))?,
            _ => toml::from_str(&text)
                .map_err(|e| FdcError::Config(format!("{}: {e}", path.display())))?,
        };
        Self::from_file(&file)
    }

    /// Defaults, overridden by the file named in `FDC_CONSTANTS` when set.
    pub fn from_env() -> Result<Self> {
        match std::env::var_os(CONSTANTS_ENV) {
            Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
            _ => Ok(Self::default()),
        }
    }

    pub fn km_to_nd(&self, km: f64) -> f64 {
        km / self.l_star_km
    }

    pub fn seconds_to_nd(&self, s: f64) -> f64 {
        s / self.t_star_s
    }

    pub fn years_to_nd(&self, years: f64) -> f64 {
        self.seconds_to_nd(years * DAYS_PER_YEAR * SECONDS_PER_DAY)
    }

    pub fn days_to_nd(&self, days: f64) -> f64 {
        self.seconds_to_nd(days * SECONDS_PER_DAY)
    }

    /// Angular rate of the Sun as seen in the rotating frame (nd).
    pub fn synodic_rate(&self) -> f64 {
        1.0 - self.sun_rate
    }
}

impl Default for SystemConstants {
    fn default() -> Self {
        Self::from_file(&ConstantsFile::default()).expect("default constants are valid")
    }
}
