//! Single- and multiple-shooting Newton correctors on continuity and
//! frequency-domain constraints.
//!
//! The free variables are the patchpoint states `X = [x_0 .. x_{n_p-1}]` at
//! fixed epochs. Each iteration re-propagates every segment, re-samples the
//! signals, refines their spectra from scratch, and takes the minimum-norm
//! step `ΔX = -Jᵀ(J Jᵀ)⁻¹ F`.

use std::f64::consts::FRAC_PI_4;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use super::target::{identify, FrequencyTarget, Quantity, TargetReport};
use crate::dynamics::Dynamics;
use crate::error::{FdcError, Result};
use crate::frames::wrap_pi;
use crate::linalg::min_norm_solve;
use crate::propagation::{
    sample_segments, ExtractionContext, Extractor, IntegratorOptions, PatchpointSchedule, SampledSignal,
    SignalRequest,
};
use crate::refine::{refine_strict, Method, RefineOptions, Refinement};
use crate::sensitivity::{sensitivities, FrequencySensitivity};
use crate::spectrum::PeakOptions;

/// One refined signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    pub extractor: Extractor,
    pub method: Method,
    /// Number of components refined.
    pub m: usize,
}

/// Signals sampled from the patchpoint trajectory, sharing `N` and `Δt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalRecipe {
    pub signals: Vec<SignalSpec>,
    pub n: usize,
    #[serde(rename = "dt_nd")]
    pub dt: f64,
    #[serde(default)]
    pub peaks: PeakOptions,
}

impl SignalRecipe {
    pub fn request(&self) -> SignalRequest {
        SignalRequest { extractors: self.signals.iter().map(|s| s.extractor).collect(), n: self.n, dt: self.dt }
    }

    pub fn span(&self) -> f64 {
        self.dt * self.n as f64
    }

    pub fn bin_width(&self) -> f64 {
        std::f64::consts::TAU / self.span()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Frequency-constraint tolerance (nd, rad).
    pub tol: f64,
    /// Continuity tolerance per state component.
    pub continuity_tol: f64,
    pub max_iter: usize,
    /// Step halvings tried before giving up on an iteration.
    pub max_backtracks: usize,
    /// Largest phase change requested by one step (rad).
    pub max_phase_step: f64,
    /// Peak-identity guard band in DFT bins.
    pub guard_bins: f64,
    pub refine_tol: f64,
    pub refine_max_iter: usize,
    /// Permit `ν` targets with more than one patchpoint.
    pub allow_frequency_targets: bool,
    pub integrator: IntegratorOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            continuity_tol: 1e-10,
            max_iter: 30,
            max_backtracks: 10,
            max_phase_step: FRAC_PI_4,
            guard_bins: 10.0,
            refine_tol: 1e-12,
            refine_max_iter: 50,
            allow_frequency_targets: false,
            integrator: IntegratorOptions::default(),
        }
    }
}

#[derive(Clone)]
pub struct ShootingProblem {
    pub model: Arc<dyn Dynamics>,
    pub context: ExtractionContext,
    pub schedule: PatchpointSchedule,
    pub states: Vec<Vector6<f64>>,
    pub recipe: SignalRecipe,
    pub targets: Vec<FrequencyTarget>,
    pub options: SolverOptions,
}

impl std::fmt::Debug for ShootingProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ShootingProblem")
            .field("model", &self.model.id())
            .field("schedule", &self.schedule)
            .field("states", &self.states)
            .field("recipe", &self.recipe)
            .field("targets", &self.targets)
            .field("options", &self.options)
            .finish()
    }
}

impl ShootingProblem {
    pub fn patchpoints(&self) -> usize {
        self.states.len()
    }

    pub fn validate(&self) -> Result<()> {
        let np = self.patchpoints();
        if np == 0 || np != self.schedule.segment_count() {
            return Err(FdcError::Config(format!(
                "{np} patchpoint states for {} segments",
                self.schedule.segment_count()
            )));
        }
        if self.recipe.signals.is_empty() && !self.targets.is_empty() {
            return Err(FdcError::Config("targets given without any signal".into()));
        }
        for t in &self.targets {
            t.validate()?;
            if t.signal >= self.recipe.signals.len() {
                return Err(FdcError::Config(format!("target refers to missing signal {}", t.signal)));
            }
            if np > 1 && t.nu.is_some() && !self.options.allow_frequency_targets {
                return Err(FdcError::Config(
                    "ν targets with fixed-epoch multiple shooting over-constrain the problem; \
                     set allow_frequency_targets to override"
                        .into(),
                ));
            }
        }
        let rows = 6 * (np - 1) + self.targets.iter().map(|t| t.rows()).sum::<usize>();
        if rows > 6 * np {
            return Err(FdcError::Config(format!("{rows} constraints exceed {} free variables", 6 * np)));
        }
        let o = &self.options;
        if !(o.tol > 0.0 && o.continuity_tol > 0.0 && o.max_phase_step > 0.0 && o.guard_bins > 0.0) {
            return Err(FdcError::Config("solver tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Largest continuity defect.
    pub continuity: f64,
    /// Largest frequency-constraint residual.
    pub frequency: f64,
    /// Infinity norm of the accepted step (0 on the last record).
    pub step_norm: f64,
    /// Backtracking factor of the accepted step.
    pub step_scale: f64,
    /// `‖J ΔX + F‖∞` of the linear solve.
    pub linear_residual: f64,
    /// Matched component of each target.
    pub components: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ShootingSolution {
    pub states: Vec<Vector6<f64>>,
    pub refinements: Vec<Refinement>,
    pub targets: Vec<TargetReport>,
    pub log: Vec<IterationRecord>,
    pub converged: bool,
    pub continuity: f64,
    pub frequency: f64,
}

/// Everything evaluated at one set of patchpoints.
struct Evaluation {
    signals: Vec<SampledSignal>,
    refinements: Vec<Refinement>,
    defects: Vec<Vector6<f64>>,
    stms: Vec<Matrix6<f64>>,
    components: Vec<usize>,
    reports: Vec<TargetReport>,
}

impl Evaluation {
    fn continuity(&self) -> f64 {
        self.defects.iter().fold(0.0, |m, d| m.max(d.amax()))
    }

    fn frequency(&self) -> f64 {
        self.reports.iter().fold(0.0, |m, r| m.max(r.max_residual()))
    }

    /// Worst residual against targets moved by `shift` (the part of each
    /// row the homotopy defers), in stacked row order.
    fn merit(&self, shift: &[f64]) -> f64 {
        let rows = self.reports.iter().flat_map(|r| r.target.constrained().into_iter().zip(&r.residuals));
        let worst = rows.zip(shift).fold(0.0_f64, |m, (((q, _), &r), &d)| {
            let e = if q == Quantity::Phase { wrap_pi(r - d) } else { r - d };
            m.max(e.abs())
        });
        self.continuity().max(worst)
    }
}

fn evaluate(p: &ShootingProblem, states: &[Vector6<f64>], previous: &[Option<f64>]) -> Result<Evaluation> {
    let sampling = sample_segments(
        p.model.as_ref(),
        &p.context,
        &p.schedule,
        states,
        &p.recipe.request(),
        true,
        &p.options.integrator,
    )?;
    let mut defects = Vec::with_capacity(states.len().saturating_sub(1));
    let mut stms = Vec::with_capacity(states.len());
    for (s, (end, stm)) in sampling.endpoints.iter().enumerate() {
        stms.push(stm.expect("partials requested"));
        if s + 1 < states.len() {
            defects.push(end - states[s + 1]);
        }
    }
    let refinements = p
        .recipe
        .signals
        .iter()
        .zip(&sampling.signals)
        .map(|(spec, sig)| {
            let mut opts = RefineOptions::new(spec.method, spec.m);
            opts.tol = p.options.refine_tol;
            opts.max_iter = p.options.refine_max_iter;
            opts.peaks = p.recipe.peaks;
            refine_strict(sig, &opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let guard = p.options.guard_bins * p.recipe.bin_width();
    let mut components = Vec::with_capacity(p.targets.len());
    let mut reports = Vec::with_capacity(p.targets.len());
    for (k, t) in p.targets.iter().enumerate() {
        let r = &refinements[t.signal];
        let j = identify(t, r, previous.get(k).copied().flatten(), guard)?;
        components.push(j);
        reports.push(TargetReport::new(t, j, r.components()[j]));
    }
    Ok(Evaluation { signals: sampling.signals, refinements, defects, stms, components, reports })
}

/// Stacked residual (phase rows clamped to the homotopy step) and Jacobian.
fn linear_system(p: &ShootingProblem, ev: &Evaluation) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let np = p.patchpoints();
    let rows = 6 * (np - 1) + p.targets.iter().map(|t| t.rows()).sum::<usize>();
    let mut f = DVector::zeros(rows);
    let mut j = DMatrix::zeros(rows, 6 * np);
    for s in 0..np - 1 {
        f.rows_mut(6 * s, 6).copy_from(&ev.defects[s]);
        j.view_mut((6 * s, 6 * s), (6, 6)).copy_from(&ev.stms[s]);
        j.view_mut((6 * s, 6 * (s + 1)), (6, 6)).copy_from(&(-Matrix6::identity()));
    }
    // Sensitivities of every component up to the last one targeted, per signal.
    let mut sens: Vec<Vec<FrequencySensitivity>> = Vec::with_capacity(ev.signals.len());
    for (i, (sig, r)) in ev.signals.iter().zip(&ev.refinements).enumerate() {
        let count = p
            .targets
            .iter()
            .zip(&ev.components)
            .filter(|(t, _)| t.signal == i && !t.is_monitor_only())
            .map(|(_, &c)| c + 1)
            .max()
            .unwrap_or(0);
        sens.push(if count > 0 { sensitivities(sig, r, count)? } else { Vec::new() });
    }
    let mut row = 6 * (np - 1);
    for (k, t) in p.targets.iter().enumerate() {
        if t.is_monitor_only() {
            continue;
        }
        let jt = t.jacobian(&sens[t.signal][ev.components[k]]);
        let res = &ev.reports[k].residuals;
        for (q, (quantity, _)) in t.constrained().iter().enumerate() {
            f[row + q] = match quantity {
                Quantity::Phase => res[q].clamp(-p.options.max_phase_step, p.options.max_phase_step),
                _ => res[q],
            };
        }
        j.view_mut((row, 0), (jt.nrows(), jt.ncols())).copy_from(&jt);
        row += jt.nrows();
    }
    Ok((f, j))
}

/// Stacked residual and Jacobian at `states`, with components identified
/// afresh. Phase rows are clamped as in the solver.
pub fn linearize(problem: &ShootingProblem, states: &[Vector6<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    problem.validate()?;
    if states.len() != problem.patchpoints() {
        return Err(FdcError::Config(format!("{} states for {} patchpoints", states.len(), problem.patchpoints())));
    }
    let ev = evaluate(problem, states, &[])?;
    linear_system(problem, &ev)
}

fn converged(p: &ShootingProblem, ev: &Evaluation) -> bool {
    ev.continuity() < p.options.continuity_tol && ev.frequency() < p.options.tol
}

fn record(iteration: usize, ev: &Evaluation, step_norm: f64, step_scale: f64, linear_residual: f64) -> IterationRecord {
    IterationRecord {
        iteration,
        continuity: ev.continuity(),
        frequency: ev.frequency(),
        step_norm,
        step_scale,
        linear_residual,
        components: ev.components.clone(),
    }
}

fn finish(states: Vec<Vector6<f64>>, ev: Evaluation, log: Vec<IterationRecord>, converged: bool) -> ShootingSolution {
    ShootingSolution {
        states,
        continuity: ev.continuity(),
        frequency: ev.frequency(),
        refinements: ev.refinements,
        targets: ev.reports,
        log,
        converged,
    }
}

/// Run the corrector; a solve that stops short of the tolerances is
/// returned with `converged == false` so that its log can be inspected.
pub fn run(problem: &ShootingProblem) -> Result<ShootingSolution> {
    problem.validate()?;
    let mut states = problem.states.clone();
    let mut ev = evaluate(problem, &states, &[])?;
    let mut log = Vec::new();
    for it in 0..=problem.options.max_iter {
        if converged(problem, &ev) {
            log.push(record(it, &ev, 0.0, 0.0, 0.0));
            return Ok(finish(states, ev, log, true));
        }
        if it == problem.options.max_iter {
            break;
        }
        let (f, j) = linear_system(problem, &ev)?;
        let dx = -min_norm_solve(&j, &f, "shooting Jacobian")?;
        let linear_residual = (&j * &dx + &f).amax();
        let previous: Vec<Option<f64>> = ev.reports.iter().map(|r| Some(r.xi.nu)).collect();
        let np = problem.patchpoints();
        let unclamped = ev.reports.iter().flat_map(|r| r.residuals.iter().copied());
        let shift: Vec<f64> = unclamped.zip(f.rows(6 * (np - 1), f.len() - 6 * (np - 1)).iter()).map(|(r, c)| r - c).collect();
        let merit = ev.merit(&shift);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=problem.options.max_backtracks {
            let trial: Vec<Vector6<f64>> = states
                .iter()
                .enumerate()
                .map(|(s, x)| x + scale * dx.fixed_rows::<6>(6 * s).into_owned())
                .collect();
            if let Ok(next) = evaluate(problem, &trial, &previous) {
                if next.merit(&shift) < merit {
                    accepted = Some((trial, next));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((trial, next)) = accepted else {
            log.push(record(it, &ev, 0.0, 0.0, linear_residual));
            return Ok(finish(states, ev, log, false));
        };
        log.push(record(it, &ev, scale * dx.amax(), scale, linear_residual));
        states = trial;
        ev = next;
    }
    log.push(record(problem.options.max_iter, &ev, 0.0, 0.0, 0.0));
    Ok(finish(states, ev, log, false))
}

fn strict(sol: ShootingSolution) -> Result<ShootingSolution> {
    if sol.converged {
        Ok(sol)
    } else {
        Err(FdcError::NotConverged {
            iterations: sol.log.len().saturating_sub(1),
            residual: sol.continuity.max(sol.frequency),
        })
    }
}

/// Single-shooting solve from one initial state.
pub fn solve_single(problem: &ShootingProblem) -> Result<ShootingSolution> {
    if problem.patchpoints() != 1 {
        return Err(FdcError::Config(format!(
            "single shooting takes one patchpoint, got {}",
            problem.patchpoints()
        )));
    }
    strict(run(problem)?)
}

/// Multiple-shooting solve over the patchpoint schedule.
pub fn solve_multi(problem: &ShootingProblem) -> Result<ShootingSolution> {
    strict(run(problem)?)
}

/// Re-propagate and re-refine converged patchpoints from scratch, without
/// seeding, and report every target against it.
pub fn verify(problem: &ShootingProblem, states: &[Vector6<f64>]) -> Result<Vec<TargetReport>> {
    let sampling = sample_segments(
        problem.model.as_ref(),
        &problem.context,
        &problem.schedule,
        states,
        &problem.recipe.request(),
        false,
        &problem.options.integrator,
    )?;
    let guard = problem.options.guard_bins * problem.recipe.bin_width();
    let mut refs = Vec::new();
    for (spec, sig) in problem.recipe.signals.iter().zip(&sampling.signals) {
        let mut opts = RefineOptions::new(spec.method, spec.m);
        opts.peaks = problem.recipe.peaks;
        refs.push(refine_strict(sig, &opts)?);
    }
    problem
        .targets
        .iter()
        .map(|t| {
            let r = &refs[t.signal];
            let prior = t.nu.or(match t.mode {
                super::ModeSelector::NearestNu(nu) => Some(nu),
                super::ModeSelector::Index(_) => None,
            });
            let j = identify(t, r, prior, guard)?;
            Ok(TargetReport::new(t, j, r.components()[j]))
        })
        .collect()
}

/// Iteration log as CSV.
pub fn write_log_csv<W: std::io::Write>(log: &[IterationRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| FdcError::Io(std::io::Error::other(e));
    wr.write_record(["iteration", "continuity", "frequency", "step_norm", "step_scale", "linear_residual", "components"])
        .map_err(io)?;
    for r in log {
        let comps: Vec<String> = r.components.iter().map(|c| c.to_string()).collect();
        wr.write_record([
            r.iteration.to_string(),
            format!("{:e}", r.continuity),
            format!("{:e}", r.frequency),
            format!("{:e}", r.step_norm),
            r.step_scale.to_string(),
            format!("{:e}", r.linear_residual),
            comps.join(";"),
        ])
        .map_err(io)?;
    }
    wr.flush()?;
    Ok(())
}
