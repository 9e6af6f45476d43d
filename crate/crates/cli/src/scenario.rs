//! Scenario files (TOML or JSON) and the problems built from them.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use fdc_core::constants::{ConstantsFile, SystemConstants};
use fdc_core::corrector::{
    center_modes, correct_symmetric, monodromy, seed_from_eigenstructure, ConstellationProblem, PeriodicOrbit,
    SymmetricSetup, FrequencyTarget, RelativePhase, ShootingProblem, SignalRecipe, SignalSpec, SolverOptions,
};
use fdc_core::dynamics::{BicircularProvider, CircularProvider, Cr3bp, Dam, Dynamics, EphemerisProvider, Hfem, ModelId};
use fdc_core::frames::{frame_map, kepler_to_cartesian, FrameTag, KeplerElements};
use fdc_core::propagation::{propagate, ExtractionContext, Extractor, IntegratorOptions, PatchpointSchedule};
use fdc_core::refine::Method;
use fdc_core::spectrum::PeakOptions;
use nalgebra::Vector6;
use serde::Deserialize;

use crate::error::CliError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub format_version: u32,
    #[serde(default)]
    pub name: Option<String>,
    pub model: ModelSpec,
    /// Inline constants; when absent, `FDC_CONSTANTS` or the defaults apply.
    #[serde(default)]
    pub constants: Option<ConstantsFile>,
    /// Overrides `solver.integrator` when present.
    #[serde(default)]
    pub integrator: Option<IntegratorOptions>,
    #[serde(default, rename = "satellite")]
    pub satellites: Vec<SatelliteSpec>,
    pub sampling: SamplingSpec,
    #[serde(default, rename = "signal")]
    pub signals: Vec<SignalEntry>,
    #[serde(default, rename = "target")]
    pub targets: Vec<FrequencyTarget>,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub constellation: Option<ConstellationSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    Circular,
    Bicircular,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelId,
    /// Ephemeris of the Earth and Sun (HFEM), also used for frame changes.
    #[serde(default)]
    pub provider: Option<Provider>,
    #[serde(default)]
    pub sun_phase_rad: f64,
    #[serde(default)]
    pub epoch_nd: f64,
}

/// Osculating Moon-centred elements.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementsSpec {
    pub a_km: f64,
    pub e: f64,
    pub i_deg: f64,
    pub raan_deg: f64,
    pub argp_deg: f64,
    pub mean_anomaly_deg: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SatelliteSpec {
    /// Frame of `state_nd` and `patchpoints_nd`; defaults to the model frame.
    #[serde(default)]
    pub frame: Option<FrameTag>,
    #[serde(default)]
    pub state_nd: Option<[f64; 6]>,
    #[serde(default)]
    pub elements: Option<ElementsSpec>,
    /// Explicit patchpoints at uniform epochs `segment_nd` apart.
    #[serde(default)]
    pub patchpoints_nd: Option<Vec<[f64; 6]>>,
    #[serde(default)]
    pub segment_nd: Option<f64>,
    /// Patchpoints sliced from one propagation of the initial state.
    #[serde(default)]
    pub segments: Option<usize>,
    /// Patchpoints displaced from a periodic orbit along a center mode.
    #[serde(default)]
    pub seed: Option<SeedSpec>,
}

/// Center-mode seeding about a mirror-symmetric CR3BP orbit. The orbit is
/// corrected first; patchpoints are spread `per_revolution` to a period.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    /// Guess of the periodic orbit's crossing state, BRF.
    pub periodic_state_nd: [f64; 6],
    pub period_nd: f64,
    /// State components varied by the orbit correction.
    pub free: Vec<usize>,
    /// Components that vanish at the half period.
    pub crossing: Vec<usize>,
    #[serde(default)]
    pub vary_period: bool,
    /// Index among the center modes, ordered by rotation number.
    #[serde(default)]
    pub mode: usize,
    pub amplitude_nd: f64,
    #[serde(default)]
    pub phase_rad: f64,
    pub per_revolution: usize,
    pub revolutions: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSpec {
    pub n: usize,
    /// Span of the signals; all three may be omitted when satellite 0 is
    /// seeded, which then sets the span.
    #[serde(default)]
    pub span_nd: Option<f64>,
    #[serde(default)]
    pub span_days: Option<f64>,
    #[serde(default)]
    pub span_years: Option<f64>,
    #[serde(default)]
    pub peaks: PeakOptions,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalEntry {
    pub frame: FrameTag,
    /// `x`, `y`, `z`, `vx`, `vy` or `vz`.
    pub component: String,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_m")]
    pub m: usize,
}

fn default_method() -> Method {
    Method::Lnaff
}

fn default_m() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstellationSpec {
    #[serde(default)]
    pub reference: usize,
    /// One list per satellite; the reference's list is ignored.
    pub offsets: Vec<Vec<RelativePhase>>,
    #[serde(default)]
    pub drift_span_years: Option<f64>,
    #[serde(default = "default_drift_samples")]
    pub drift_samples: usize,
}

fn default_drift_samples() -> usize {
    400
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

impl ScenarioFile {
    /// Parse by extension: `.json` as JSON, anything else as TOML.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let parsed: Self = if path.extension().and_then(|e| e.to_str()) == Some("json") {
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}:\n{e}", path.display())))?
        };
        if parsed.format_version != FORMAT_VERSION {
            return Err(CliError::Config(format!(
                "{}: format_version {} is not supported (expected {FORMAT_VERSION})",
                path.display(),
                parsed.format_version
            )));
        }
        Ok(parsed)
    }
}

/// Everything a command needs, resolved from a scenario.
pub struct Setup {
    pub file: ScenarioFile,
    pub constants: SystemConstants,
    pub model: Arc<dyn Dynamics>,
    /// Provider for HFEM and for frame changes.
    pub ephemeris: Arc<dyn EphemerisProvider>,
    pub t0: f64,
    pub span: f64,
    pub recipe: Option<SignalRecipe>,
    pub options: SolverOptions,
    seeded: Vec<Option<(PatchpointSchedule, Vec<Vector6<f64>>)>>,
}

fn config(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl Setup {
    pub fn new(file: ScenarioFile) -> Result<Self, CliError> {
        let constants = match &file.constants {
            Some(c) => SystemConstants::from_file(c)?,
            None => SystemConstants::from_env()?,
        };
        let ephemeris: Arc<dyn EphemerisProvider> = match file.model.provider {
            Some(Provider::Bicircular) => Arc::new(BicircularProvider::new(&constants, file.model.sun_phase_rad)),
            Some(Provider::Circular) | None => Arc::new(CircularProvider::new(&constants)),
        };
        let model: Arc<dyn Dynamics> = match file.model.kind {
            ModelId::Cr3bp => Arc::new(Cr3bp::new(constants.mu)),
            ModelId::Hfem => {
                if file.model.provider.is_none() {
                    return Err(config("model.provider is required for hfem (circular | bicircular)"));
                }
                Arc::new(Hfem::new(constants.mu_moon, ephemeris.clone()))
            }
            ModelId::Dam => Arc::new(Dam::new(constants)),
        };
        let mut options = file.solver;
        if let Some(i) = file.integrator {
            options.integrator = i;
        }
        let t0 = file.model.epoch_nd;
        let seeded = file
            .satellites
            .iter()
            .enumerate()
            .map(|(k, sat)| {
                sat.seed
                    .as_ref()
                    .map(|seed| {
                        seed_patchpoints(seed, &model, &ephemeris, &constants, t0, &options.integrator)
                            .map_err(|e| e.context(&format!("satellite {k} seed")))
                    })
                    .transpose()
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let s = &file.sampling;
        let span = match (s.span_nd, s.span_days, s.span_years) {
            (Some(v), None, None) => v,
            (None, Some(d), None) => constants.days_to_nd(d),
            (None, None, Some(y)) => constants.years_to_nd(y),
            (None, None, None) => match seeded.first() {
                Some(Some((schedule, _))) => schedule.end() - schedule.start(),
                _ => return Err(config("sampling: give one of span_nd, span_days, span_years")),
            },
            _ => return Err(config("sampling: give only one of span_nd, span_days, span_years")),
        };
        if !(span.is_finite() && span >= 0.0) {
            return Err(config(format!("sampling: span {span} must be finite and non-negative")));
        }
        if s.n == 0 {
            return Err(config("sampling.n must be positive"));
        }
        let recipe = if file.signals.is_empty() {
            None
        } else {
            let signals = file
                .signals
                .iter()
                .enumerate()
                .map(|(k, e)| {
                    let extractor = Extractor::parse(e.frame, &e.component)
                        .map_err(|err| config(format!("signal[{k}]: {err}")))?;
                    Ok(SignalSpec { extractor, method: e.method, m: e.m })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            Some(SignalRecipe { signals, n: s.n, dt: span / s.n as f64, peaks: s.peaks })
        };
        Ok(Self { file, constants, model, ephemeris, t0, span, recipe, options, seeded })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::new(ScenarioFile::load(path)?)
    }

    pub fn integrator(&self) -> &IntegratorOptions {
        &self.options.integrator
    }

    pub fn satellite(&self, k: usize) -> Result<&SatelliteSpec, CliError> {
        self.file
            .satellites
            .get(k)
            .ok_or_else(|| config(format!("satellite {k} requested, scenario has {}", self.file.satellites.len())))
    }

    pub fn recipe(&self) -> Result<&SignalRecipe, CliError> {
        self.recipe.as_ref().ok_or_else(|| config("scenario defines no [[signal]]"))
    }

    pub fn context(&self) -> Result<ExtractionContext, CliError> {
        Ok(ExtractionContext::new(self.model.as_ref(), Some(self.ephemeris.clone()), self.constants.mu)?)
    }

    /// Map a state given in `from` at epoch `t` into the model frame.
    fn to_model_frame(&self, x: [f64; 6], from: Option<FrameTag>, t: f64) -> Result<Vector6<f64>, CliError> {
        let x = Vector6::from(x);
        match (self.model.frame(), from) {
            (None, None) => Ok(x),
            (None, Some(f)) => Err(config(format!("the dam model takes elements, not {f} states"))),
            (Some(_), None) => Ok(x),
            (Some(to), Some(f)) => {
                Ok(frame_map(f, to, t, self.ephemeris.as_ref(), self.constants.mu)?.apply_vector(&x))
            }
        }
    }

    /// Initial state of satellite `k` in the model frame.
    pub fn initial_state(&self, k: usize) -> Result<Vector6<f64>, CliError> {
        let sat = self.satellite(k)?;
        let given = [sat.state_nd.is_some(), sat.elements.is_some(), sat.patchpoints_nd.is_some(), sat.seed.is_some()];
        if given.iter().filter(|g| **g).count() != 1 {
            return Err(config(format!(
                "satellite {k}: give exactly one of state_nd, elements, patchpoints_nd, seed"
            )));
        }
        if let Some((_, states)) = &self.seeded[k] {
            return Ok(states[0]);
        }
        if let Some(x) = sat.state_nd {
            return self.to_model_frame(x, sat.frame, self.t0);
        }
        if let Some(p) = &sat.patchpoints_nd {
            let first = p.first().ok_or_else(|| config(format!("satellite {k}: patchpoints_nd is empty")))?;
            return self.to_model_frame(*first, sat.frame, self.t0);
        }
        let el = sat.elements.expect("checked above");
        let d = std::f64::consts::PI / 180.0;
        let oe = KeplerElements::new(
            self.constants.km_to_nd(el.a_km),
            el.e,
            el.i_deg * d,
            el.raan_deg * d,
            el.argp_deg * d,
            el.mean_anomaly_deg * d,
        )
        .map_err(|e| config(format!("satellite {k}: {e}")))?;
        match self.model.frame() {
            None => Ok(Vector6::from(oe.to_array())),
            Some(frame) => {
                let mci = kepler_to_cartesian(&oe, self.constants.mu_moon, FrameTag::Mci, self.t0)?.to_vector();
                Ok(frame_map(FrameTag::Mci, frame, self.t0, self.ephemeris.as_ref(), self.constants.mu)?
                    .apply_vector(&mci))
            }
        }
    }

    /// Patchpoint schedule and states of satellite `k` in the model frame.
    pub fn patchpoints(&self, k: usize) -> Result<(PatchpointSchedule, Vec<Vector6<f64>>), CliError> {
        let sat = self.satellite(k)?;
        if let Some(seeded) = &self.seeded[k] {
            return Ok(seeded.clone());
        }
        if let Some(points) = &sat.patchpoints_nd {
            let seg = sat
                .segment_nd
                .ok_or_else(|| config(format!("satellite {k}: patchpoints_nd needs segment_nd")))?;
            let schedule = PatchpointSchedule::uniform(self.t0, seg, points.len())?;
            let states = points
                .iter()
                .zip(schedule.epochs())
                .map(|(x, &t)| self.to_model_frame(*x, sat.frame, t))
                .collect::<Result<_, _>>()?;
            return Ok((schedule, states));
        }
        let count = sat.segments.unwrap_or(1);
        if count == 0 {
            return Err(config(format!("satellite {k}: segments must be positive")));
        }
        let x0 = self.initial_state(k)?;
        let seg = self.span / count as f64;
        let schedule = PatchpointSchedule::uniform(self.t0, seg, count)?;
        if count == 1 {
            return Ok((schedule, vec![x0]));
        }
        let traj = propagate(self.model.as_ref(), &x0, self.t0, self.t0 + self.span, self.integrator())?;
        let states = schedule.epochs()[..count].iter().map(|&t| traj.at(t)).collect::<Result<_, _>>()?;
        Ok((schedule, states))
    }

    /// Shooting problem for satellite `k` with the scenario's targets.
    pub fn shooting_problem(&self, k: usize) -> Result<ShootingProblem, CliError> {
        let (schedule, states) = self.patchpoints(k)?;
        let problem = ShootingProblem {
            model: self.model.clone(),
            context: self.context()?,
            schedule,
            states,
            recipe: self.recipe()?.clone(),
            targets: self.file.targets.clone(),
            options: self.options,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn constellation_problem(&self) -> Result<ConstellationProblem, CliError> {
        let spec = self.file.constellation.as_ref().ok_or_else(|| config("scenario has no [constellation] table"))?;
        let n = self.file.satellites.len();
        if n < 2 {
            return Err(config("a constellation needs at least two satellites"));
        }
        if spec.offsets.len() != n {
            return Err(config(format!("constellation.offsets has {} entries for {n} satellites", spec.offsets.len())));
        }
        let satellites = (0..n).map(|k| self.shooting_problem(k)).collect::<Result<_, _>>()?;
        Ok(ConstellationProblem { satellites, reference: spec.reference, offsets: spec.offsets.clone() })
    }

    /// Output directory: the command line wins, then the scenario, relative
    /// to the scenario file.
    pub fn output_dir(&self, cli: Option<&Path>, scenario_path: &Path) -> PathBuf {
        if let Some(p) = cli {
            return p.to_path_buf();
        }
        match &self.file.output.dir {
            Some(d) if d.is_absolute() => d.clone(),
            Some(d) => scenario_path.parent().unwrap_or(Path::new(".")).join(d),
            None => PathBuf::from("."),
        }
    }
}

/// Correct the periodic orbit, pick its center mode and displace
/// patchpoints along it; states are mapped from BRF to the model frame.
fn seed_patchpoints(
    seed: &SeedSpec,
    model: &Arc<dyn Dynamics>,
    eph: &Arc<dyn EphemerisProvider>,
    c: &SystemConstants,
    t0: f64,
    opts: &IntegratorOptions,
) -> Result<(PatchpointSchedule, Vec<Vector6<f64>>), CliError> {
    let frame = model.frame().ok_or_else(|| config("seeding needs a Cartesian model"))?;
    if seed.per_revolution == 0 || seed.revolutions == 0 {
        return Err(config("per_revolution and revolutions must be positive"));
    }
    let cr = Cr3bp::new(c.mu);
    let guess = PeriodicOrbit { state: Vector6::from(seed.periodic_state_nd), period: seed.period_nd };
    let setup = SymmetricSetup {
        free: seed.free.clone(),
        vary_period: seed.vary_period,
        crossing: seed.crossing.clone(),
        tol: 1e-12,
        max_iter: 30,
    };
    let orbit = correct_symmetric(&cr, &guess, &setup, opts)?;
    let modes = center_modes(&monodromy(&cr, &orbit, opts)?, orbit.period)?;
    let mode = modes
        .get(seed.mode)
        .ok_or_else(|| config(format!("center mode {} requested, orbit has {}", seed.mode, modes.len())))?;
    let np = seed.per_revolution * seed.revolutions;
    let seg = orbit.period / seed.per_revolution as f64;
    let times: Vec<f64> = (0..np).map(|k| k as f64 * seg).collect();
    let brf = seed_from_eigenstructure(&cr, &orbit, mode, seed.amplitude_nd, seed.phase_rad, &times, opts)?;
    let states = brf
        .iter()
        .zip(&times)
        .map(|(x, &t)| Ok(frame_map(FrameTag::Brf, frame, t0 + t, eph.as_ref(), c.mu)?.apply_vector(x)))
        .collect::<Result<_, CliError>>()?;
    Ok((PatchpointSchedule::uniform(t0, seg, np)?, states))
}
