//! Frequency-domain targets on refined components.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FdcError, Result};
use crate::frames::{normalize_angle, wrap_pi};
use crate::refine::{FrequencyComponent, Refinement};
use crate::sensitivity::FrequencySensitivity;

/// How a targeted mode is found among the refined components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSelector {
    /// Position in the refined list on the first evaluation; tracked by
    /// frequency afterwards.
    Index(usize),
    /// Component nearest to a prior frequency estimate (nd).
    NearestNu(f64),
}

/// Quantity of a component: `ν`, `A` or `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Nu,
    Amplitude,
    Phase,
}

impl Quantity {
    /// Row of the sensitivity matrix.
    pub fn row(self) -> usize {
        match self {
            Quantity::Nu => 0,
            Quantity::Amplitude => 1,
            Quantity::Phase => 2,
        }
    }

    pub fn value(self, xi: &FrequencyComponent) -> f64 {
        xi.to_array()[self.row()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyTarget {
    /// Index of the signal in the recipe.
    #[serde(default)]
    pub signal: usize,
    pub mode: ModeSelector,
    #[serde(default, rename = "nu_nd", skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, rename = "amplitude_nd", skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, rename = "theta_rad", skip_serializing_if = "Option::is_none")]
    pub phase: Option<f64>,
    /// Upper bound on the amplitude, reported but never enforced.
    #[serde(default, rename = "amplitude_cap_nd", skip_serializing_if = "Option::is_none")]
    pub amplitude_cap: Option<f64>,
}

impl FrequencyTarget {
    pub fn new(signal: usize, mode: ModeSelector) -> Self {
        Self { signal, mode, nu: None, amplitude: None, phase: None, amplitude_cap: None }
    }

    pub fn nu(mut self, nu: f64) -> Self {
        self.nu = Some(nu);
        self
    }

    pub fn amplitude(mut self, a: f64) -> Self {
        self.amplitude = Some(a);
        self
    }

    pub fn phase(mut self, theta: f64) -> Self {
        self.phase = Some(theta);
        self
    }

    pub fn amplitude_cap(mut self, cap: f64) -> Self {
        self.amplitude_cap = Some(cap);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.nu.is_some() && self.amplitude.is_some() {
            return Err(FdcError::Config(
                "a target may constrain ν or A of a mode, not both (over-constrained)".into(),
            ));
        }
        if self.constrained().is_empty() && self.amplitude_cap.is_none() {
            return Err(FdcError::Config("target constrains nothing".into()));
        }
        let values = [self.nu, self.amplitude, self.phase, self.amplitude_cap];
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(FdcError::Config("non-finite target value".into()));
        }
        if let ModeSelector::NearestNu(nu) = self.mode {
            if !(nu > 0.0) {
                return Err(FdcError::Config(format!("prior frequency {nu} must be positive")));
            }
        }
        Ok(())
    }

    /// Constrained quantities with their target values, in `ν, A, θ` order.
    pub fn constrained(&self) -> Vec<(Quantity, f64)> {
        [(Quantity::Nu, self.nu), (Quantity::Amplitude, self.amplitude), (Quantity::Phase, self.phase)]
            .into_iter()
            .filter_map(|(q, v)| v.map(|v| (q, v)))
            .collect()
    }

    pub fn rows(&self) -> usize {
        self.constrained().len()
    }

    pub fn is_monitor_only(&self) -> bool {
        self.rows() == 0
    }

    /// Residuals of the constrained quantities; phases are compared modulo `2π`.
    pub fn residuals(&self, xi: &FrequencyComponent) -> Vec<f64> {
        self.constrained()
            .into_iter()
            .map(|(q, v)| match q {
                Quantity::Phase => wrap_pi(xi.phase - v),
                _ => q.value(xi) - v,
            })
            .collect()
    }

    /// Jacobian rows picked from the component sensitivity.
    pub fn jacobian(&self, sens: &FrequencySensitivity) -> DMatrix<f64> {
        let c = self.constrained();
        let mut j = DMatrix::zeros(c.len(), sens.rows.ncols());
        for (r, (q, _)) in c.iter().enumerate() {
            j.row_mut(r).copy_from(&sens.rows.row(q.row()));
        }
        j
    }
}

/// Outcome of one target after a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub target: FrequencyTarget,
    /// Index of the matched component in its signal's refinement.
    pub component: usize,
    pub xi: FrequencyComponent,
    pub residuals: Vec<f64>,
    /// `None` without an amplitude cap.
    pub within_cap: Option<bool>,
}

impl TargetReport {
    pub fn new(target: &FrequencyTarget, component: usize, xi: FrequencyComponent) -> Self {
        Self {
            target: *target,
            component,
            xi,
            residuals: target.residuals(&xi),
            within_cap: target.amplitude_cap.map(|cap| xi.amplitude < cap),
        }
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

/// Locate a target's component in a fresh refinement.
///
/// `previous` is the component frequency from the last accepted evaluation.
/// The nearest frequency within `guard` (nd) wins; an index selector falls
/// back to amplitude rank when nothing is close enough.
pub fn identify(
    target: &FrequencyTarget,
    refinement: &Refinement,
    previous: Option<f64>,
    guard: f64,
) -> Result<usize> {
    let comps = refinement.components();
    let prior = previous.or(match target.mode {
        ModeSelector::NearestNu(nu) => Some(nu),
        ModeSelector::Index(_) => None,
    });
    if let (None, ModeSelector::Index(j)) = (prior, target.mode) {
        return if j < comps.len() {
            Ok(j)
        } else {
            Err(FdcError::PeakLost(format!("component {j} requested, {} refined", comps.len())))
        };
    }
    let nu = prior.expect("prior frequency present");
    if let Some(k) = refinement.model.nearest(nu) {
        if (comps[k].nu - nu).abs() <= guard {
            return Ok(k);
        }
    }
    match target.mode {
        ModeSelector::Index(j) => {
            let mut rank: Vec<usize> = (0..comps.len()).collect();
            rank.sort_by(|&a, &b| comps[b].amplitude.total_cmp(&comps[a].amplitude));
            rank.get(j).copied().ok_or_else(|| {
                FdcError::PeakLost(format!("no component within {guard:e} of ν = {nu} and rank {j} unavailable"))
            })
        }
        ModeSelector::NearestNu(_) => Err(FdcError::PeakLost(format!(
            "no refined component within {guard:e} of ν = {nu}"
        ))),
    }
}

/// Absolute phase target for a follower given the reference phase.
pub fn relative_phase_target(reference: f64, offset: f64) -> f64 {
    normalize_angle(reference + offset)
}
