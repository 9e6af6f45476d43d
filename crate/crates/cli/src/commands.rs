//! Subcommand implementations.

use std::f64::consts::TAU;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use fdc_core::corrector::{phase_drift, run, solve_constellation, write_drift_csv, write_log_csv, ShootingProblem, ShootingSolution};
use fdc_core::frames::{frame_map, FrameTag};
use fdc_core::propagation::export::{read_signal_csv, SampleTable, STATE_COLUMNS};
use fdc_core::propagation::{propagate, sample_segments, PatchpointSchedule, SampledSignal, StateTrajectory};
use fdc_core::refine::{refine_sequential, FrequencyComponent, Method, RefineOptions, Refinement};
use fdc_core::spectrum::{dft_at_bins, detect_peaks, PeakOptions};
use nalgebra::Vector6;
use serde_json::{json, Value};

use crate::error::CliError;
use crate::output::OutputDir;
use crate::scenario::Setup;

const ELEMENT_COLUMNS: [&str; 7] = ["t", "a", "e", "i", "raan", "argp", "M"];
/// Rows of the plotted BRF geometry.
const PLOT_ROWS: usize = 2001;

/// Flags shared by every subcommand.
pub struct Common {
    pub out: Option<PathBuf>,
    pub emit_plots: bool,
    pub quiet: bool,
}

fn vec6(x: &Vector6<f64>) -> Vec<f64> {
    x.iter().copied().collect()
}

fn is_csv(p: &Path) -> bool {
    p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// A signal read from `t,q` CSV, or sampled from a scenario.
fn load_signal(input: &Path, signal: usize, satellite: usize) -> Result<(SampledSignal, Option<Setup>), CliError> {
    if is_csv(input) {
        let f = File::open(input).map_err(|e| CliError::Config(format!("{}: {e}", input.display())))?;
        let s = read_signal_csv(BufReader::new(f)).map_err(|e| CliError::from(e).context(&input.display().to_string()))?;
        return Ok((s, None));
    }
    let setup = Setup::load(input)?;
    let recipe = setup.recipe()?;
    if signal >= recipe.signals.len() {
        return Err(CliError::Config(format!("signal {signal} requested, scenario has {}", recipe.signals.len())));
    }
    let (schedule, states) = setup.patchpoints(satellite)?;
    let sampling = sample_segments(
        setup.model.as_ref(),
        &setup.context()?,
        &schedule,
        &states,
        &recipe.request(),
        false,
        setup.integrator(),
    )?;
    let s = sampling.signals.into_iter().nth(signal).expect("one signal per extractor");
    Ok((s, Some(setup)))
}

fn out_dir(common: &Common, setup: Option<&Setup>, input: &Path) -> Result<OutputDir, CliError> {
    let root = match setup {
        Some(s) => s.output_dir(common.out.as_deref(), input),
        None => common.out.clone().unwrap_or_else(|| PathBuf::from(".")),
    };
    let mut out = OutputDir::create(root)?;
    out.scenario = setup.and_then(|s| s.file.name.clone());
    Ok(out)
}

fn spectrum_rows(s: &SampledSignal) -> Result<Vec<Vec<f64>>, CliError> {
    let dft = dft_at_bins(s)?;
    Ok(dft
        .amplitudes()
        .iter()
        .enumerate()
        .map(|(k, a)| vec![dft.frequency(k), *a, a.max(f64::MIN_POSITIVE).log10()])
        .collect())
}

fn write_spectrum(out: &mut OutputDir, name: &str, s: &SampledSignal) -> Result<(), CliError> {
    out.csv(name, &["nu", "amplitude", "log10_amplitude"], spectrum_rows(s)?)
}

fn write_peaks(out: &mut OutputDir, name: &str, comps: &[FrequencyComponent]) -> Result<(), CliError> {
    let rows = comps.iter().map(|c| vec![c.nu, c.amplitude, c.phase, c.amplitude.abs().log10()]);
    out.csv(name, &["nu", "amplitude", "theta", "log10_amplitude"], rows)
}

fn refinement_json(r: &Refinement) -> Value {
    json!({
        "method": r.method,
        "A0": r.model.a0,
        "components": r.model.components,
        "report": r.report,
    })
}

pub fn spectrum(common: &Common, input: &Path, signal: usize, satellite: usize, max_peaks: usize) -> Result<(), CliError> {
    let (s, setup) = load_signal(input, signal, satellite)?;
    let peak_opts = setup.as_ref().map_or_else(PeakOptions::default, |st| st.file.sampling.peaks);
    let dft = dft_at_bins(&s)?;
    let peaks: Vec<Value> = detect_peaks(&dft, max_peaks, &peak_opts)
        .iter()
        .map(|p| json!({ "k": p.k, "nu": p.frequency, "amplitude": 2.0 * p.magnitude() }))
        .collect();
    let mut out = out_dir(common, setup.as_ref(), input)?;
    out.json(
        "spectrum.json",
        json!({
            "n": s.len(),
            "t0_nd": s.t0,
            "dt_nd": s.dt,
            "bin_width_nd": dft.bin_width(),
            "bins": (0..dft.bins.len()).map(|k| dft.frequency(k)).collect::<Vec<_>>(),
            "amplitudes": dft.amplitudes(),
            "peaks": peaks,
        }),
    )?;
    write_spectrum(&mut out, "spectrum.csv", &s)?;
    out.report(common.quiet);
    Ok(())
}

pub fn refine(
    common: &Common,
    input: &Path,
    method: Option<Method>,
    m: Option<usize>,
    signal: usize,
    satellite: usize,
) -> Result<(), CliError> {
    let (s, setup) = load_signal(input, signal, satellite)?;
    let from_scenario = setup.as_ref().and_then(|st| st.recipe.as_ref()).map(|r| r.signals[signal]);
    let method = method.or(from_scenario.map(|x| x.method)).unwrap_or(Method::Lnaff);
    let m = m.or(from_scenario.map(|x| x.m)).unwrap_or(1);
    let mut opts = RefineOptions::new(method, m);
    if let Some(st) = &setup {
        opts.peaks = st.file.sampling.peaks;
    }
    let r = refine_sequential(&s, &opts)?;
    let mut out = out_dir(common, setup.as_ref(), input)?;
    let mut body = refinement_json(&r);
    body["n"] = s.len().into();
    body["t0_nd"] = s.t0.into();
    body["dt_nd"] = s.dt.into();
    out.json("refine.json", body)?;
    if common.emit_plots {
        write_spectrum(&mut out, "plots/spectrum.csv", &s)?;
        write_peaks(&mut out, "plots/peaks.csv", r.components())?;
    }
    out.report(common.quiet);
    if !r.report.converged {
        return Err(CliError::Numeric(format!("refinement did not converge: {:?}", r.report.components)));
    }
    Ok(())
}

pub fn propagate_cmd(
    common: &Common,
    scenario: &Path,
    satellite: usize,
    frame: Option<FrameTag>,
    cache: bool,
) -> Result<(), CliError> {
    let setup = Setup::load(scenario)?;
    let x0 = setup.initial_state(satellite)?;
    let model_frame = setup.model.frame();
    let columns: &[&str] = match (model_frame, frame) {
        (None, Some(f)) => return Err(CliError::Config(format!("the dam model has no {f} states"))),
        (None, None) => &ELEMENT_COLUMNS,
        (Some(_), _) => &STATE_COLUMNS,
    };
    let (t0, span) = (setup.t0, setup.span);
    let traj = propagate(setup.model.as_ref(), &x0, t0, t0 + span, setup.integrator())?;
    let rows = if span == 0.0 { 1 } else { setup.file.sampling.n + 1 };
    let dt = if rows > 1 { span / (rows - 1) as f64 } else { 0.0 };
    let mut table = SampleTable::new(t0, dt, columns.iter().map(|c| c.to_string()).collect());
    for i in 0..rows {
        let t = if i + 1 == rows { t0 + span } else { t0 + dt * i as f64 };
        let mut x = traj.at(t)?;
        if let (Some(from), Some(to)) = (model_frame, frame) {
            x = frame_map(from, to, t, setup.ephemeris.as_ref(), setup.constants.mu)?.apply_vector(&x);
        }
        let mut row = vec![t];
        row.extend(x.iter());
        table.push(row)?;
    }
    let mut out = out_dir(common, Some(&setup), scenario)?;
    out.csv_with("trajectory.csv", |w| table.write_csv(w))?;
    if cache {
        out.bytes("trajectory.bin", |w| table.write_binary(w))?;
    }
    if common.emit_plots && model_frame.is_some() {
        let schedule = PatchpointSchedule::single(t0, t0 + span)?;
        let segs = Segments { setup: &setup, schedule, trajs: vec![traj] };
        out.csv("plots/trajectory_brf.csv", &["t", "x", "y", "z"], segs.brf_rows(PLOT_ROWS)?)?;
    }
    out.report(common.quiet);
    Ok(())
}

/// Dense segments of a shooting solution, for plot output.
struct Segments<'a> {
    setup: &'a Setup,
    schedule: PatchpointSchedule,
    trajs: Vec<StateTrajectory>,
}

impl<'a> Segments<'a> {
    fn new(setup: &'a Setup, schedule: &PatchpointSchedule, states: &[Vector6<f64>]) -> Result<Self, CliError> {
        let trajs = states
            .iter()
            .enumerate()
            .map(|(s, x)| {
                let (a, b) = schedule.segment(s);
                propagate(setup.model.as_ref(), x, a, b, setup.integrator())
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { setup, schedule: schedule.clone(), trajs })
    }

    /// BRF position at `t`, from the segment that owns it.
    fn brf_position(&self, t: f64) -> Result<[f64; 3], CliError> {
        let epochs = self.schedule.epochs();
        let s = epochs[1..self.trajs.len()].iter().take_while(|e| **e <= t).count();
        let x = self.trajs[s].at(t)?;
        let from = self.setup.model.frame().ok_or_else(|| CliError::Config("no Cartesian states".into()))?;
        let y = frame_map(from, FrameTag::Brf, t, self.setup.ephemeris.as_ref(), self.setup.constants.mu)?
            .apply_vector(&x);
        Ok([y[0], y[1], y[2]])
    }

    fn brf_rows(&self, rows: usize) -> Result<Vec<Vec<f64>>, CliError> {
        let (a, b) = (self.schedule.start(), self.schedule.end());
        let rows = if b > a { rows.max(2) } else { 1 };
        (0..rows)
            .map(|i| {
                let t = if i + 1 == rows { b } else { a + (b - a) * i as f64 / (rows - 1) as f64 };
                let p = self.brf_position(t)?;
                Ok(vec![t, p[0], p[1], p[2]])
            })
            .collect()
    }

    /// Returns to the section `t0 + kT`.
    fn strobe_rows(&self, period: f64) -> Result<Vec<Vec<f64>>, CliError> {
        let (a, b) = (self.schedule.start(), self.schedule.end());
        let count = ((b - a) / period).floor() as usize;
        (0..=count)
            .map(|k| {
                let t = a + period * k as f64;
                let p = self.brf_position(t)?;
                Ok(vec![t, p[0], p[1], p[2]])
            })
            .collect()
    }
}

fn solution_json(problem: &ShootingProblem, sol: &ShootingSolution) -> Value {
    json!({
        "model": problem.model.id(),
        "frame": problem.context.model_frame,
        "converged": sol.converged,
        "iterations": sol.log.len().saturating_sub(1),
        "continuity": sol.continuity,
        "frequency": sol.frequency,
        "epochs_nd": problem.schedule.epochs(),
        "states_nd": sol.states.iter().map(vec6).collect::<Vec<_>>(),
    })
}

fn frequency_json(problem: &ShootingProblem, sol: &ShootingSolution) -> Value {
    let signals: Vec<Value> = problem
        .recipe
        .signals
        .iter()
        .zip(&sol.refinements)
        .map(|(spec, r)| {
            let mut v = refinement_json(r);
            v["signal"] = spec.extractor.name().into();
            v
        })
        .collect();
    json!({
        "n": problem.recipe.n,
        "dt_nd": problem.recipe.dt,
        "targets": sol.targets,
        "signals": signals,
    })
}

fn shooting_plots(
    out: &mut OutputDir,
    setup: &Setup,
    problem: &ShootingProblem,
    sol: &ShootingSolution,
    prefix: &str,
) -> Result<(), CliError> {
    let sampling = sample_segments(
        problem.model.as_ref(),
        &problem.context,
        &problem.schedule,
        &sol.states,
        &problem.recipe.request(),
        false,
        &problem.options.integrator,
    )?;
    for (k, (s, r)) in sampling.signals.iter().zip(&sol.refinements).enumerate() {
        write_spectrum(out, &format!("plots/{prefix}spectrum_{k}.csv"), s)?;
        write_peaks(out, &format!("plots/{prefix}peaks_{k}.csv"), r.components())?;
    }
    let segs = Segments::new(setup, &problem.schedule, &sol.states)?;
    out.csv(&format!("plots/{prefix}trajectory_brf.csv"), &["t", "x", "y", "z"], segs.brf_rows(PLOT_ROWS)?)?;
    if let Some(dominant) = sol.refinements.first().and_then(|r| r.components().first()) {
        if dominant.nu > 0.0 {
            out.csv(&format!("plots/{prefix}strobe.csv"), &["t", "x", "y", "z"], segs.strobe_rows(TAU / dominant.nu)?)?;
        }
    }
    Ok(())
}

fn not_converged(sol: &ShootingSolution) -> CliError {
    CliError::Numeric(format!(
        "corrector did not converge after {} iterations (continuity {:e}, frequency {:e})",
        sol.log.len().saturating_sub(1),
        sol.continuity,
        sol.frequency
    ))
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Shooting {
    Single,
    Multi,
}

pub fn correct(common: &Common, scenario: &Path, satellite: usize, kind: Shooting) -> Result<(), CliError> {
    let setup = Setup::load(scenario)?;
    let problem = setup.shooting_problem(satellite)?;
    match kind {
        Shooting::Single if problem.patchpoints() != 1 => {
            return Err(CliError::Config(format!(
                "correct-single takes one patchpoint, satellite {satellite} has {}",
                problem.patchpoints()
            )))
        }
        Shooting::Multi if problem.patchpoints() < 2 => {
            return Err(CliError::Config(format!(
                "correct-multi needs at least two patchpoints; set segments or patchpoints_nd on satellite {satellite}"
            )))
        }
        _ => {}
    }
    let sol = run(&problem)?;
    let mut out = out_dir(common, Some(&setup), scenario)?;
    out.json("states.json", solution_json(&problem, &sol))?;
    out.csv_with("log.csv", |w| write_log_csv(&sol.log, w))?;
    out.json("frequency.json", frequency_json(&problem, &sol))?;
    if common.emit_plots {
        shooting_plots(&mut out, &setup, &problem, &sol, "")?;
    }
    out.report(common.quiet);
    if !sol.converged {
        return Err(not_converged(&sol));
    }
    Ok(())
}

pub fn constellation(common: &Common, scenario: &Path) -> Result<(), CliError> {
    let setup = Setup::load(scenario)?;
    let problem = setup.constellation_problem()?;
    let spec = setup.file.constellation.as_ref().expect("checked by constellation_problem");
    let sol = solve_constellation(&problem)?;
    let mut out = out_dir(common, Some(&setup), scenario)?;

    let mut satellites = vec![Value::Null; problem.satellites.len()];
    let reference = problem.reference;
    satellites[reference] = json!({
        "index": reference,
        "converged": sol.reference.converged,
        "states_nd": sol.reference.states.iter().map(vec6).collect::<Vec<_>>(),
        "targets": sol.reference.targets,
    });
    out.csv_with(&format!("sat{reference}_log.csv"), |w| write_log_csv(&sol.reference.log, w))?;
    for f in &sol.followers {
        let s = f.solution.as_ref();
        satellites[f.satellite] = json!({
            "index": f.satellite,
            "converged": s.is_some_and(|s| s.converged),
            "error": f.error,
            "phase_errors_rad": f.phase_errors,
            "states_nd": s.map(|s| s.states.iter().map(vec6).collect::<Vec<_>>()),
            "targets": s.map(|s| &s.targets),
        });
        if let Some(s) = s {
            out.csv_with(&format!("sat{}_log.csv", f.satellite), |w| write_log_csv(&s.log, w))?;
        }
    }
    let mut body = json!({
        "reference": reference,
        "converged": sol.all_converged(),
        "satellites": satellites,
    });

    let states: Option<Vec<Vector6<f64>>> = sol.states(reference).into_iter().collect();
    if let (Some(states), true) = (states, common.emit_plots || spec.drift_span_years.is_some()) {
        let span = spec.drift_span_years.map_or(setup.span, |y| setup.constants.years_to_nd(y));
        let report = phase_drift(
            setup.model.as_ref(),
            &states,
            reference,
            setup.t0,
            span,
            spec.drift_samples,
            setup.constants.mu_moon,
            setup.integrator(),
        )?;
        body["drift"] = json!({
            "span_nd": span,
            "secular_change_rad": report.secular_change(),
            "mean_anomaly_rate": report.mean_anomaly_rate,
            "raan_rate": report.raan_rate,
        });
        if common.emit_plots {
            out.csv_with("plots/drift.csv", |w| write_drift_csv(&report, w))?;
        }
    }
    out.json("constellation.json", body)?;
    if common.emit_plots {
        for (k, p) in problem.satellites.iter().enumerate() {
            let s = if k == reference { Some(&sol.reference) } else { sol.followers.iter().find(|f| f.satellite == k).and_then(|f| f.solution.as_ref()) };
            if let Some(s) = s {
                shooting_plots(&mut out, &setup, p, s, &format!("sat{k}_"))?;
            }
        }
    }
    out.report(common.quiet);
    if !sol.all_converged() {
        let failed: Vec<String> = sol
            .followers
            .iter()
            .filter_map(|f| f.error.as_ref().map(|e| format!("satellite {}: {e}", f.satellite)))
            .collect();
        return Err(CliError::Numeric(format!("constellation not converged: {}", failed.join("; "))));
    }
    Ok(())
}
