//! Frequency refinement of a sampled signal into a truncated quasi-periodic
//! series `q(t) ≈ A₀ + Σ A_j cos(ν_j t + θ_j)`, with `t` measured from the
//! first sample.

pub mod gmsc;
pub mod lnaff;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use gmsc::{gmsc_constraints, gmsc_jacobian, gmsc_system, select_row, Collocation, CsRow};
pub use lnaff::{lnaff_constraints, lnaff_jacobian, LnaffPoint};

use crate::error::{FdcError, Result};
use crate::frames::normalize_angle;
use crate::linalg::solve_vector;
use crate::propagation::SampledSignal;
use crate::spectrum::{dft_at_bins, detect_peaks, initial_guess, PeakOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lnaff,
    Gmsc,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Lnaff => "L-NAFF",
            Method::Gmsc => "GMS-C",
        })
    }
}

impl FromStr for Method {
    type Err = FdcError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "lnaff" => Ok(Method::Lnaff),
            "gmsc" => Ok(Method::Gmsc),
            _ => Err(FdcError::Config(format!("unknown refinement method '{s}' (lnaff | gmsc)"))),
        }
    }
}

/// One tone `A cos(ν t + θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyComponent {
    pub nu: f64,
    #[serde(rename = "A")]
    pub amplitude: f64,
    #[serde(rename = "theta")]
    pub phase: f64,
}

impl FrequencyComponent {
    pub fn new(nu: f64, amplitude: f64, phase: f64) -> Self {
        Self { nu, amplitude, phase }
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.nu, self.amplitude, self.phase]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (self.nu * t + self.phase).cos()
    }

    /// `(A cos θ, A sin θ)`.
    pub fn cos_sin(&self) -> (f64, f64) {
        let (s, c) = self.phase.sin_cos();
        (self.amplitude * c, self.amplitude * s)
    }

    /// `∂/∂(ν, A, θ)` of the tone at `t`.
    pub fn partials(&self, t: f64) -> [f64; 3] {
        let (s, c) = (self.nu * t + self.phase).sin_cos();
        [-self.amplitude * t * s, c, -self.amplitude * s]
    }

    /// Non-negative amplitude and phase in `[0, 2π)`.
    pub fn canonical(self) -> Self {
        if self.amplitude < 0.0 {
            Self::new(self.nu, -self.amplitude, normalize_angle(self.phase + std::f64::consts::PI))
        } else {
            Self::new(self.nu, self.amplitude, normalize_angle(self.phase))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiPeriodicModel {
    #[serde(rename = "A0")]
    pub a0: f64,
    pub components: Vec<FrequencyComponent>,
}

impl QuasiPeriodicModel {
    pub fn m(&self) -> usize {
        self.components.len()
    }

    /// Evaluate at local time `t`.
    pub fn eval(&self, t: f64) -> f64 {
        self.a0 + self.components.iter().map(|c| c.eval(t)).sum::<f64>()
    }

    pub fn synthesize(&self, n: usize, dt: f64, t0: f64) -> Result<SampledSignal> {
        SampledSignal::new((0..n).map(|i| self.eval(dt * i as f64)).collect(), dt, t0)
    }

    /// Index of the component whose frequency is closest to `nu`.
    pub fn nearest(&self, nu: f64) -> Option<usize> {
        self.components
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1.nu - nu).abs().total_cmp(&(b.1.nu - nu).abs()))
            .map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub index: usize,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub method: Method,
    pub components: Vec<ComponentReport>,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineOptions {
    pub method: Method,
    pub m: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub peaks: PeakOptions,
}

impl RefineOptions {
    pub fn new(method: Method, m: usize) -> Self {
        Self { method, m, tol: 1e-12, max_iter: 50, peaks: PeakOptions::default() }
    }
}

/// Refined model together with what is needed to differentiate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub method: Method,
    pub model: QuasiPeriodicModel,
    pub report: RefineReport,
    /// Collocation bins, one per component (collocation method only).
    pub collocation: Vec<Collocation>,
}

impl Refinement {
    pub fn components(&self) -> &[FrequencyComponent] {
        &self.model.components
    }
}

#[derive(Debug, Clone)]
struct NewtonOutcome {
    x: DVector<f64>,
    iterations: usize,
    residual: f64,
    converged: bool,
}

/// Relative correction size treated as the round-off floor.
const STEP_FLOOR: f64 = 1e-14;

/// Full Newton steps with halving on the residual norm.
fn newton<F>(x0: DVector<f64>, eval: F, tol: f64, max_iter: usize, what: &str) -> Result<NewtonOutcome>
where
    F: Fn(&DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>,
{
    let mut x = x0;
    let (mut f, mut j) = eval(&x)?;
    let mut r = f.norm();
    for it in 0..=max_iter {
        if r < tol {
            return Ok(NewtonOutcome { x, iterations: it, residual: r, converged: true });
        }
        if it == max_iter {
            break;
        }
        let dx = solve_vector(&j, &(-&f), what)?;
        if dx.amax() <= STEP_FLOOR * x.amax().max(1.0) {
            return Ok(NewtonOutcome { x, iterations: it, residual: r, converged: true });
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let xt = &x + step * &dx;
            if let Ok((ft, jt)) = eval(&xt) {
                if ft.norm() < r {
                    accepted = Some((xt, ft, jt));
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((xt, ft, jt)) => {
                x = xt;
                f = ft;
                j = jt;
                r = f.norm();
            }
            // No descent along the Newton direction: the residual sits at
            // its round-off floor.
            None => {
                let floor = dx.amax() <= 1e3 * STEP_FLOOR * x.amax().max(1.0);
                return Ok(NewtonOutcome { x, iterations: it + 1, residual: r, converged: floor });
            }
        }
    }
    Ok(NewtonOutcome { x, iterations: max_iter, residual: r, converged: false })
}

fn pack(comps: &[FrequencyComponent]) -> DVector<f64> {
    DVector::from_iterator(3 * comps.len(), comps.iter().flat_map(|c| c.to_array()))
}

fn unpack(x: &DVector<f64>) -> Vec<FrequencyComponent> {
    x.as_slice().chunks(3).map(|c| FrequencyComponent::new(c[0], c[1], c[2])).collect()
}

fn centered(signal: &SampledSignal) -> Result<(f64, SampledSignal)> {
    let a0 = signal.mean();
    Ok((a0, SampledSignal::new(signal.values.iter().map(|v| v - a0).collect(), signal.dt, signal.t0)?))
}

fn subtract(signal: &SampledSignal, xi: &FrequencyComponent) -> Result<SampledSignal> {
    let v = signal.values.iter().enumerate().map(|(i, q)| q - xi.eval(signal.local_time(i))).collect();
    SampledSignal::new(v, signal.dt, signal.t0)
}

fn next_peak(
    residual: &SampledSignal,
    taken: &[f64],
    opts: &RefineOptions,
) -> Result<Option<crate::spectrum::Peak>> {
    let dft = dft_at_bins(residual)?;
    let df = dft.bin_width();
    let peaks = detect_peaks(&dft, usize::MAX, &opts.peaks);
    Ok(peaks.into_iter().find(|p| taken.iter().all(|nu| (p.frequency - nu).abs() > 1.5 * df)))
}

fn refine_one_lnaff(
    residual: &SampledSignal,
    guess: FrequencyComponent,
    opts: &RefineOptions,
    index: usize,
) -> Result<(FrequencyComponent, ComponentReport)> {
    let eval = |x: &DVector<f64>| {
        let xi = FrequencyComponent::new(x[0], x[1], x[2]);
        let p = LnaffPoint::at(residual, xi.nu)?;
        let f = p.constraints(&xi);
        let j = p.jacobian(&xi);
        Ok((DVector::from_column_slice(f.as_slice()), DMatrix::from_column_slice(3, 3, j.as_slice())))
    };
    let out = newton(pack(&[guess]), eval, opts.tol, opts.max_iter, "L-NAFF Jacobian")?;
    let xi = unpack(&out.x)[0].canonical();
    Ok((xi, ComponentReport { index, iterations: out.iterations, residual: out.residual, converged: out.converged }))
}

fn lnaff(signal: &SampledSignal, seed: Option<&[FrequencyComponent]>, opts: &RefineOptions) -> Result<Refinement> {
    let (a0, mut residual) = centered(signal)?;
    let mut comps = Vec::new();
    let mut reports = Vec::new();
    let m = seed.map_or(opts.m, |s| s.len());
    for j in 0..m {
        let guess = match seed {
            Some(s) => s[j],
            None => {
                let taken: Vec<f64> = comps.iter().map(|c: &FrequencyComponent| c.nu).collect();
                match next_peak(&residual, &taken, opts)? {
                    Some(p) => initial_guess(&p),
                    None => break,
                }
            }
        };
        let (xi, rep) = refine_one_lnaff(&residual, guess, opts, j)?;
        let ok = rep.converged;
        residual = subtract(&residual, &xi)?;
        comps.push(xi);
        reports.push(rep);
        if !ok {
            break;
        }
    }
    Ok(finish(Method::Lnaff, a0, comps, reports, Vec::new(), m))
}

fn solve_gmsc(
    centered: &SampledSignal,
    dft: &crate::spectrum::WindowedDft,
    comps: &[FrequencyComponent],
    colloc: &[Collocation],
    opts: &RefineOptions,
) -> Result<NewtonOutcome> {
    let rhs = gmsc::signal_rows(dft, colloc);
    let n = centered.len();
    let dt = centered.dt;
    let eval = |x: &DVector<f64>| Ok(gmsc_system(n, dt, &rhs, &unpack(x), colloc));
    newton(pack(comps), eval, opts.tol, opts.max_iter, "GMS-C Jacobian")
}

fn gmsc_refine(signal: &SampledSignal, seed: Option<&Refinement>, opts: &RefineOptions) -> Result<Refinement> {
    let (a0, q) = centered(signal)?;
    let dft = dft_at_bins(&q)?;
    if let Some(prior) = seed {
        let out = solve_gmsc(&q, &dft, prior.components(), &prior.collocation, opts)?;
        let comps: Vec<_> = unpack(&out.x).into_iter().map(|c| c.canonical()).collect();
        let reports = (0..comps.len())
            .map(|index| ComponentReport {
                index,
                iterations: out.iterations,
                residual: out.residual,
                converged: out.converged,
            })
            .collect();
        let m = comps.len();
        return Ok(finish(Method::Gmsc, a0, comps, reports, prior.collocation.clone(), m));
    }
    let mut comps: Vec<FrequencyComponent> = Vec::new();
    let mut colloc: Vec<Collocation> = Vec::new();
    let mut reports = Vec::new();
    let mut residual = q.clone();
    for j in 0..opts.m {
        let taken: Vec<f64> = comps.iter().map(|c| c.nu).collect();
        let Some(peak) = next_peak(&residual, &taken, opts)? else { break };
        let guess = initial_guess(&peak);
        let neighbor = Collocation::neighbor_of(&dft, peak.k);
        let row = select_row(q.len(), q.dt, &guess, peak.k, neighbor);
        colloc.push(Collocation { peak: peak.k, neighbor, row });
        comps.push(guess);
        let out = solve_gmsc(&q, &dft, &comps, &colloc, opts)?;
        comps = unpack(&out.x).into_iter().map(|c| c.canonical()).collect();
        reports.push(ComponentReport { index: j, iterations: out.iterations, residual: out.residual, converged: out.converged });
        if !out.converged {
            break;
        }
        residual = comps.iter().try_fold(q.clone(), |r, c| subtract(&r, c))?;
    }
    Ok(finish(Method::Gmsc, a0, comps, reports, colloc, opts.m))
}

fn finish(
    method: Method,
    a0: f64,
    comps: Vec<FrequencyComponent>,
    reports: Vec<ComponentReport>,
    collocation: Vec<Collocation>,
    m: usize,
) -> Refinement {
    let converged = comps.len() == m && reports.iter().all(|r| r.converged);
    Refinement {
        method,
        model: QuasiPeriodicModel { a0, components: comps },
        report: RefineReport { method, components: reports, converged },
        collocation,
    }
}

/// Detect and refine `m` components. A component that fails to converge
/// ends the loop; the partial model is returned with the report flagged.
pub fn refine_sequential(signal: &SampledSignal, opts: &RefineOptions) -> Result<Refinement> {
    if opts.m == 0 {
        return Err(FdcError::Config("at least one component must be refined".into()));
    }
    match opts.method {
        Method::Lnaff => lnaff(signal, None, opts),
        Method::Gmsc => gmsc_refine(signal, None, opts),
    }
}

/// Re-refine starting from a previous solution, reusing its frequency
/// ordering and collocation bins so that the same roots are tracked.
pub fn refine_seeded(signal: &SampledSignal, prior: &Refinement, opts: &RefineOptions) -> Result<Refinement> {
    match prior.method {
        Method::Lnaff => lnaff(signal, Some(prior.components()), opts),
        Method::Gmsc => gmsc_refine(signal, Some(prior), opts),
    }
}

/// Like [`refine_sequential`] but turns a non-converged report into an error.
pub fn refine_strict(signal: &SampledSignal, opts: &RefineOptions) -> Result<Refinement> {
    let r = refine_sequential(signal, opts)?;
    if let Some(bad) = r.report.components.iter().find(|c| !c.converged) {
        return Err(FdcError::RefineFailed { component: bad.index, residual: bad.residual });
    }
    Ok(r)
}
