//! Constellation phasing: the reference satellite is corrected first, then
//! each follower matches its frequencies and holds a phase offset from it.

use nalgebra::Vector6;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::shooting::{run, ShootingProblem, ShootingSolution};
use super::target::relative_phase_target;
use crate::dynamics::Dynamics;
use crate::error::{FdcError, Result};
use crate::frames::{cartesian_to_kepler, wrap_pi, FrameTag, StateVector6};
use crate::propagation::{propagate, IntegratorOptions};

/// Phase offset of one follower target from the same target of the reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelativePhase {
    /// Index into the satellite's target list.
    pub target: usize,
    #[serde(rename = "offset_rad")]
    pub offset: f64,
}

#[derive(Debug, Clone)]
pub struct ConstellationProblem {
    /// Every satellite's problem. Followers list the same targets, in the
    /// same order, as the reference.
    pub satellites: Vec<ShootingProblem>,
    pub reference: usize,
    /// Offsets per satellite; the reference entry is ignored.
    pub offsets: Vec<Vec<RelativePhase>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FollowerOutcome {
    pub satellite: usize,
    pub solution: Option<ShootingSolution>,
    pub error: Option<String>,
    /// Achieved `wrap(θ_f - θ_ref - Δθ)` for each offset.
    pub phase_errors: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstellationSolution {
    pub reference: ShootingSolution,
    pub followers: Vec<FollowerOutcome>,
}

impl ConstellationSolution {
    pub fn all_converged(&self) -> bool {
        self.reference.converged && self.followers.iter().all(|f| f.solution.as_ref().is_some_and(|s| s.converged))
    }

    /// Converged states of every satellite in problem order; the reference
    /// first is not implied.
    pub fn states(&self, reference: usize) -> Vec<Option<Vector6<f64>>> {
        let n = self.followers.len() + 1;
        let mut out = vec![None; n];
        out[reference] = self.reference.states.first().copied();
        for f in &self.followers {
            out[f.satellite] = f.solution.as_ref().and_then(|s| s.states.first().copied());
        }
        out
    }
}

fn follower_problem(
    base: &ShootingProblem,
    reference: &ShootingProblem,
    solved: &ShootingSolution,
    offsets: &[RelativePhase],
) -> Result<ShootingProblem> {
    let mut p = base.clone();
    if p.targets.len() != reference.targets.len() {
        return Err(FdcError::Config("followers must list the reference's targets".into()));
    }
    for (k, t) in p.targets.iter_mut().enumerate() {
        if reference.targets[k].nu.is_some() {
            t.nu = Some(solved.targets[k].xi.nu);
        }
    }
    for o in offsets {
        let theta = solved
            .targets
            .get(o.target)
            .ok_or_else(|| FdcError::Config(format!("offset refers to missing target {}", o.target)))?
            .xi
            .phase;
        p.targets[o.target].phase = Some(relative_phase_target(theta, o.offset));
    }
    Ok(p)
}

/// Solve the reference, then the followers concurrently. A follower that
/// fails is reported without affecting the others.
pub fn solve_constellation(problem: &ConstellationProblem) -> Result<ConstellationSolution> {
    let n = problem.satellites.len();
    if problem.reference >= n || problem.offsets.len() != n {
        return Err(FdcError::Config(format!(
            "reference {} and {} offset lists for {n} satellites",
            problem.reference,
            problem.offsets.len()
        )));
    }
    let refp = &problem.satellites[problem.reference];
    let reference = run(refp)?;
    if !reference.converged {
        return Err(FdcError::NotConverged {
            iterations: reference.log.len().saturating_sub(1),
            residual: reference.frequency.max(reference.continuity),
        });
    }
    let followers = (0..n)
        .into_par_iter()
        .filter(|&s| s != problem.reference)
        .map(|s| {
            let offsets = &problem.offsets[s];
            let outcome = follower_problem(&problem.satellites[s], refp, &reference, offsets).and_then(|p| run(&p));
            match outcome {
                Ok(sol) => {
                    let phase_errors = offsets
                        .iter()
                        .map(|o| {
                            wrap_pi(sol.targets[o.target].xi.phase - reference.targets[o.target].xi.phase - o.offset)
                        })
                        .collect();
                    let error = (!sol.converged).then(|| "did not converge".to_string());
                    FollowerOutcome { satellite: s, solution: Some(sol), error, phase_errors }
                }
                Err(e) => FollowerOutcome { satellite: s, solution: None, error: Some(e.to_string()), phase_errors: vec![] },
            }
        })
        .collect();
    Ok(ConstellationSolution { reference, followers })
}

/// Relative mean anomaly and node of each satellite with respect to the
/// reference over time, from osculating elements about the Moon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub times: Vec<f64>,
    /// `[satellite][sample]`, unwrapped, rad. The reference row is zero.
    pub delta_mean_anomaly: Vec<Vec<f64>>,
    pub delta_raan: Vec<Vec<f64>>,
    /// Least-squares rates of the rows above (rad per nd time).
    pub mean_anomaly_rate: Vec<f64>,
    pub raan_rate: Vec<f64>,
}

impl DriftReport {
    /// Largest accumulated secular change over the report span.
    pub fn secular_change(&self) -> f64 {
        let span = self.times.last().copied().unwrap_or(0.0) - self.times.first().copied().unwrap_or(0.0);
        self.mean_anomaly_rate
            .iter()
            .chain(&self.raan_rate)
            .fold(0.0, |m, r| m.max((r * span).abs()))
    }
}

fn unwrap(series: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut prev = match series.first() {
        Some(&v) => v,
        None => return out,
    };
    let mut acc = prev;
    out.push(acc);
    for &v in &series[1..] {
        acc += wrap_pi(v - prev);
        prev = v;
        out.push(acc);
    }
    out
}

fn slope(t: &[f64], y: &[f64]) -> f64 {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let num: f64 = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    let den: f64 = t.iter().map(|a| (a - tm) * (a - tm)).sum();
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Propagate every satellite from `t0` and difference its osculating `M`
/// and `Ω` against the reference at `samples` equally spaced times.
#[allow(clippy::too_many_arguments)]
pub fn phase_drift(
    model: &dyn Dynamics,
    states: &[Vector6<f64>],
    reference: usize,
    t0: f64,
    span: f64,
    samples: usize,
    mu_moon: f64,
    opts: &IntegratorOptions,
) -> Result<DriftReport> {
    let frame = model.frame().ok_or_else(|| FdcError::Config("drift needs a Cartesian model".into()))?;
    if frame == FrameTag::Brf {
        return Err(FdcError::Config("drift needs Moon-centred states".into()));
    }
    if samples < 2 || reference >= states.len() {
        return Err(FdcError::Config("drift needs two samples and a valid reference".into()));
    }
    let times: Vec<f64> = (0..samples).map(|k| t0 + span * (k as f64 / (samples - 1) as f64)).collect();
    let elements: Vec<Vec<(f64, f64)>> = states
        .par_iter()
        .map(|x0| {
            let traj = propagate(model, x0, t0, t0 + span, opts)?;
            times
                .iter()
                .map(|&t| {
                    let s = StateVector6::from_vector(&traj.at(t)?, frame, t)?;
                    let oe = cartesian_to_kepler(&s, mu_moon)?;
                    Ok((oe.mean_anomaly, oe.raan))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let rel = |sat: usize, pick: fn(&(f64, f64)) -> f64| {
        let d: Vec<f64> =
            elements[sat].iter().zip(&elements[reference]).map(|(a, b)| wrap_pi(pick(a) - pick(b))).collect();
        unwrap(&d)
    };
    let delta_mean_anomaly: Vec<Vec<f64>> = (0..states.len()).map(|s| rel(s, |e| e.0)).collect();
    let delta_raan: Vec<Vec<f64>> = (0..states.len()).map(|s| rel(s, |e| e.1)).collect();
    Ok(DriftReport {
        mean_anomaly_rate: delta_mean_anomaly.iter().map(|y| slope(&times, y)).collect(),
        raan_rate: delta_raan.iter().map(|y| slope(&times, y)).collect(),
        times,
        delta_mean_anomaly,
        delta_raan,
    })
}

/// Drift curves as CSV: `t`, then `dM_k`, `dRAAN_k` per satellite.
pub fn write_drift_csv<W: std::io::Write>(r: &DriftReport, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| FdcError::Io(std::io::Error::other(e));
    let n = r.delta_mean_anomaly.len();
    let mut header = vec!["t".to_string()];
    for k in 0..n {
        header.push(format!("dM_{k}"));
        header.push(format!("dRAAN_{k}"));
    }
    wr.write_record(&header).map_err(io)?;
    for (i, t) in r.times.iter().enumerate() {
        let mut row = vec![t.to_string()];
        for k in 0..n {
            row.push(r.delta_mean_anomaly[k][i].to_string());
            row.push(r.delta_raan[k][i].to_string());
        }
        wr.write_record(&row).map_err(io)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unwrap_removes_branch_jumps() {
        let y = [3.0, -3.0, -2.5];
        let u = unwrap(&y);
        assert!((u[1] - (std::f64::consts::TAU - 3.0)).abs() < 1e-12);
        assert!((u[2] - u[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn slope_of_a_line() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        assert!((slope(&t, &y) - 2.0).abs() < 1e-14);
    }
}
