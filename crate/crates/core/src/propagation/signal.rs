//! Uniformly sampled scalar signals `q(t_i)`, `t_i = t0 + Δt·i`, and their
//! partials with respect to shooting states.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{Matrix6, RowVector6, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dop853::{self, IntegratorOptions};
use super::{pack, state_rhs, unpack, variational_options, variational_rhs, StateTrajectory, VariationalTrajectory};
use crate::dynamics::{Dynamics, EphemerisProvider, ModelId};
use crate::error::{FdcError, Result};
use crate::frames::{brf_to_eof_map, eof_to_brf_map, frame_map, FrameTag};

const COMPONENT_NAMES: [&str; 6] = ["x", "y", "z", "vx", "vy", "vz"];

/// One Cartesian component of the state expressed in `frame`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extractor {
    pub frame: FrameTag,
    pub component: usize,
}

impl Extractor {
    pub fn new(frame: FrameTag, component: usize) -> Result<Self> {
        if component >= 6 {
            return Err(FdcError::Config(format!("state component {component} out of range")));
        }
        Ok(Self { frame, component })
    }

    /// Parse names such as `x`, `vz`.
    pub fn parse(frame: FrameTag, name: &str) -> Result<Self> {
        match COMPONENT_NAMES.iter().position(|n| *n == name) {
            Some(c) => Ok(Self { frame, component: c }),
            None => Err(FdcError::Config(format!(
                "unknown signal component '{name}' (expected one of {COMPONENT_NAMES:?})"
            ))),
        }
    }

    pub fn name(&self) -> String {
        format!("{}:{}", self.frame, COMPONENT_NAMES[self.component])
    }
}

/// Everything needed to map model states into extractor frames.
#[derive(Debug, Clone)]
pub struct ExtractionContext {
    pub model: ModelId,
    pub model_frame: FrameTag,
    pub ephemeris: Option<Arc<dyn EphemerisProvider>>,
    pub mu: f64,
}

impl ExtractionContext {
    pub fn new(
        model: &dyn Dynamics,
        ephemeris: Option<Arc<dyn EphemerisProvider>>,
        mu: f64,
    ) -> Result<Self> {
        let model_frame = model
            .frame()
            .ok_or_else(|| FdcError::Config("signals require a Cartesian model".into()))?;
        Ok(Self { model: model.id(), model_frame, ephemeris, mu })
    }

    /// `(row, offset)` with `q = row · x + offset` at epoch `t`.
    pub fn linear_form(&self, ex: &Extractor, t: f64) -> Result<(RowVector6<f64>, f64)> {
        use FrameTag::*;
        let map = match (self.model_frame, ex.frame) {
            (a, b) if a == b => {
                let mut row = RowVector6::zeros();
                row[ex.component] = 1.0;
                return Ok((row, 0.0));
            }
            (Brf, Eof) => brf_to_eof_map(t, self.mu),
            (Eof, Brf) => eof_to_brf_map(t, self.mu),
            (from, to) => {
                let eph = self.ephemeris.as_deref().ok_or_else(|| {
                    FdcError::Config(format!("{from} to {to} signals need an ephemeris provider"))
                })?;
                frame_map(from, to, t, eph, self.mu)?
            }
        };
        Ok((map.matrix.row(ex.component).into_owned(), map.offset[ex.component]))
    }
}

/// Partials `dq(t_i)/dx_s` of each sample with respect to the patchpoint of
/// the segment that contains it.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePartials {
    pub grads: Vec<Vector6<f64>>,
    /// Sample index range of each segment; the ranges partition `0..N`.
    pub segments: Vec<Range<usize>>,
}

impl StatePartials {
    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalSource {
    pub model: ModelId,
    pub extractor: Extractor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<f64>,
    pub source: Option<SignalSource>,
    pub partials: Option<StatePartials>,
}

impl SampledSignal {
    pub fn new(values: Vec<f64>, dt: f64, t0: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(FdcError::InvalidSignal(format!("sample spacing {dt}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FdcError::InvalidSignal("non-finite sample".into()));
        }
        Ok(Self { t0, dt, values, source: None, partials: None })
    }

    /// Sample `f` at `t_i = t0 + Δt·i`.
    pub fn from_fn(n: usize, dt: f64, t0: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new((0..n).map(|i| f(t0 + dt * i as f64)).collect(), dt, t0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Time since the first sample, `Δt·i`.
    pub fn local_time(&self, i: usize) -> f64 {
        self.dt * i as f64
    }

    pub fn epoch(&self, i: usize) -> f64 {
        self.t0 + self.local_time(i)
    }

    /// `T = Δt·N`.
    pub fn span(&self) -> f64 {
        self.dt * self.len() as f64
    }

    pub fn bin_width(&self) -> f64 {
        std::f64::consts::TAU / self.span()
    }

    pub fn mean(&self) -> f64 {
        crate::spectrum::pairwise_sum(self.len(), |i| self.values[i]) / self.len() as f64
    }

    pub fn map_values(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        Self { values: self.values.iter().enumerate().map(|(i, v)| f(i, *v)).collect(), ..self.clone() }
    }
}

/// Fixed epochs `τ_0 < τ_1 < … < τ_np`; segment `s` spans `[τ_s, τ_s+1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchpointSchedule {
    epochs: Vec<f64>,
}

impl PatchpointSchedule {
    pub fn new(epochs: Vec<f64>) -> Result<Self> {
        if epochs.len() < 2 {
            return Err(FdcError::Config("a schedule needs at least two epochs".into()));
        }
        if epochs.iter().any(|t| !t.is_finite()) || epochs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(FdcError::Config("schedule epochs must be finite and strictly increasing".into()));
        }
        Ok(Self { epochs })
    }

    pub fn single(t0: f64, t1: f64) -> Result<Self> {
        Self::new(vec![t0, t1])
    }

    /// `count` segments of equal length starting at `t0`.
    pub fn uniform(t0: f64, segment: f64, count: usize) -> Result<Self> {
        Self::new((0..=count).map(|k| t0 + segment * k as f64).collect())
    }

    pub fn epochs(&self) -> &[f64] {
        &self.epochs
    }

    pub fn segment_count(&self) -> usize {
        self.epochs.len() - 1
    }

    pub fn segment(&self, s: usize) -> (f64, f64) {
        (self.epochs[s], self.epochs[s + 1])
    }

    pub fn start(&self) -> f64 {
        self.epochs[0]
    }

    pub fn end(&self) -> f64 {
        *self.epochs.last().expect("non-empty")
    }

    /// Sample index sets `{ i | τ_s ≤ t_i < τ_s+1 }`; the last set also takes
    /// samples at `τ_np`.
    pub fn index_sets(&self, n: usize, dt: f64) -> Result<Vec<Range<usize>>> {
        let t0 = self.start();
        let first_at_or_after = |tau: f64| -> usize {
            let mut i = ((tau - t0) / dt).ceil().max(0.0) as usize;
            while i > 0 && t0 + dt * (i - 1) as f64 >= tau {
                i -= 1;
            }
            while t0 + dt * (i as f64) < tau {
                i += 1;
            }
            i.min(n)
        };
        if n > 0 {
            let last = t0 + dt * (n - 1) as f64;
            if last > self.end() + 1e-12 * self.end().abs().max(1.0) {
                return Err(FdcError::SpanExceeded(format!(
                    "last sample at {last} beyond schedule end {}",
                    self.end()
                )));
            }
        }
        let mut bounds: Vec<usize> = self.epochs[..self.segment_count()].iter().map(|&t| first_at_or_after(t)).collect();
        bounds.push(n);
        Ok(bounds.windows(2).map(|w| w[0]..w[1]).collect())
    }
}

/// Which signals to sample: one per extractor, sharing `N` and `Δt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalRequest {
    pub extractors: Vec<Extractor>,
    pub n: usize,
    pub dt: f64,
}

#[derive(Debug, Clone)]
pub struct SegmentSampling {
    pub signals: Vec<SampledSignal>,
    /// Endpoint state of every segment, and its STM when partials were requested.
    pub endpoints: Vec<(Vector6<f64>, Option<Matrix6<f64>>)>,
}

struct SegmentChunk {
    values: Vec<Vec<f64>>,
    grads: Vec<Vec<Vector6<f64>>>,
    end: Vector6<f64>,
    stm: Option<Matrix6<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn sample_one_segment(
    model: &dyn Dynamics,
    ctx: &ExtractionContext,
    req: &SignalRequest,
    t0: f64,
    (a, b): (f64, f64),
    x0: &Vector6<f64>,
    range: Range<usize>,
    with_partials: bool,
    opts: &IntegratorOptions,
) -> Result<SegmentChunk> {
    let m = req.extractors.len();
    let count = range.len();
    let mut values = vec![Vec::with_capacity(count); m];
    let mut grads = vec![Vec::with_capacity(if with_partials { count } else { 0 }); m];
    let mut next = range.start;
    let time = |i: usize| t0 + req.dt * i as f64;

    let mut record = |t: f64, x: &Vector6<f64>, phi: Option<&Matrix6<f64>>| -> Result<()> {
        for (k, ex) in req.extractors.iter().enumerate() {
            let (row, off) = ctx.linear_form(ex, t)?;
            values[k].push((row * x)[0] + off);
            if let Some(phi) = phi {
                grads[k].push((row * phi).transpose());
            }
        }
        Ok(())
    };

    if next < range.end && time(next) == a {
        record(a, x0, with_partials.then_some(&Matrix6::identity()))?;
        next += 1;
    }

    let (end, stm) = if with_partials {
        let y0 = pack(x0, &Matrix6::identity());
        let (y, _) = dop853::integrate(
            &variational_rhs(model),
            a,
            y0,
            b,
            &variational_options(opts),
            count > 0,
            |s| {
                while next < range.end && time(next) <= s.t_new {
                    let t = time(next);
                    let (x, phi) = unpack(&s.dense.expect("dense").eval(t));
                    record(t, &x, Some(&phi))?;
                    next += 1;
                }
                Ok(())
            },
        )?;
        let (x, phi) = unpack(&y);
        (x, Some(phi))
    } else {
        let (y, _) = dop853::integrate(&state_rhs(model), a, *x0, b, opts, count > 0, |s| {
            while next < range.end && time(next) <= s.t_new {
                let t = time(next);
                record(t, &s.dense.expect("dense").eval(t), None)?;
                next += 1;
            }
            Ok(())
        })?;
        (y, None)
    };
    if next != range.end {
        return Err(FdcError::SpanExceeded(format!(
            "samples {next}..{} not reached in segment ending at {b}",
            range.end
        )));
    }
    Ok(SegmentChunk { values, grads, end, stm })
}

/// Propagate every segment from its own patchpoint and sample the requested
/// signals on the uniform grid starting at `τ_0`. Segments run in parallel;
/// results are assembled in segment order.
pub fn sample_segments(
    model: &dyn Dynamics,
    ctx: &ExtractionContext,
    schedule: &PatchpointSchedule,
    states: &[Vector6<f64>],
    req: &SignalRequest,
    with_partials: bool,
    opts: &IntegratorOptions,
) -> Result<SegmentSampling> {
    if states.len() != schedule.segment_count() {
        return Err(FdcError::Config(format!(
            "{} patchpoints for {} segments",
            states.len(),
            schedule.segment_count()
        )));
    }
    if !(req.dt > 0.0) {
        return Err(FdcError::Config(format!("sample spacing {}", req.dt)));
    }
    let t0 = schedule.start();
    let sets = schedule.index_sets(req.n, req.dt)?;
    let chunks: Vec<SegmentChunk> = (0..states.len())
        .into_par_iter()
        .map(|s| {
            let (a, mut b) = schedule.segment(s);
            if s + 1 == states.len() && req.n > 0 {
                // Tolerate a final sample a rounding error past the last epoch.
                b = b.max(t0 + req.dt * (req.n - 1) as f64);
            }
            sample_one_segment(
                model,
                ctx,
                req,
                t0,
                (a, b),
                &states[s],
                sets[s].clone(),
                with_partials,
                opts,
            )
            .map_err(|e| FdcError::Segment { segment: s, source: Box::new(e) })
        })
        .collect::<Result<_>>()?;

    let mut signals = Vec::with_capacity(req.extractors.len());
    for (k, ex) in req.extractors.iter().enumerate() {
        let values: Vec<f64> = chunks.iter().flat_map(|c| c.values[k].iter().copied()).collect();
        let partials = with_partials.then(|| StatePartials {
            grads: chunks.iter().flat_map(|c| c.grads[k].iter().copied()).collect(),
            segments: sets.clone(),
        });
        signals.push(SampledSignal {
            t0,
            dt: req.dt,
            values,
            source: Some(SignalSource { model: ctx.model, extractor: *ex }),
            partials,
        });
    }
    let endpoints = chunks.iter().map(|c| (c.end, c.stm)).collect();
    Ok(SegmentSampling { signals, endpoints })
}

/// Uniform samples read from a stored trajectory.
pub fn sample_trajectory(
    traj: &StateTrajectory,
    ctx: &ExtractionContext,
    ex: &Extractor,
    n: usize,
    dt: f64,
) -> Result<SampledSignal> {
    let t0 = traj.t0;
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let t = t0 + dt * i as f64;
        let (row, off) = ctx.linear_form(ex, t)?;
        values.push((row * traj.at(t)?)[0] + off);
    }
    let mut s = SampledSignal::new(values, dt, t0)?;
    s.source = Some(SignalSource { model: ctx.model, extractor: *ex });
    Ok(s)
}

/// Uniform samples with partials with respect to the initial state.
pub fn sample_variational(
    traj: &VariationalTrajectory,
    ctx: &ExtractionContext,
    ex: &Extractor,
    n: usize,
    dt: f64,
) -> Result<SampledSignal> {
    let t0 = traj.t0;
    let mut values = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(n);
    for i in 0..n {
        let t = t0 + dt * i as f64;
        let (row, off) = ctx.linear_form(ex, t)?;
        let (x, phi) = traj.state_and_stm(t)?;
        values.push((row * x)[0] + off);
        grads.push((row * phi).transpose());
    }
    let mut s = SampledSignal::new(values, dt, t0)?;
    s.source = Some(SignalSource { model: ctx.model, extractor: *ex });
    s.partials = Some(StatePartials { grads, segments: vec![0..n] });
    Ok(s)
}

/// Samples at integer multiples of `period` from the trajectory start.
pub fn stroboscopic_sample(
    traj: &StateTrajectory,
    ctx: &ExtractionContext,
    ex: &Extractor,
    period: f64,
    n: usize,
) -> Result<SampledSignal> {
    if !(period > 0.0) {
        return Err(FdcError::Config(format!("stroboscopic period {period}")));
    }
    sample_trajectory(traj, ctx, ex, n, period)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::SystemConstants;
    use crate::dynamics::{CircularProvider, Cr3bp, Hfem};
    use crate::frames::{brf_to_mci, StateVector6};
    use crate::propagation::{propagate, propagate_state, propagate_with_stm};

    const MU: f64 = 0.012_150_584_269_940_356;

    fn qdro() -> Vector6<f64> {
        Vector6::new(0.929_817_046_666_844, 0.0, 0.0, 0.01, 0.522_717_065_584_611, 0.0)
    }

    #[test]
    fn index_sets_partition_samples() {
        let s = PatchpointSchedule::new(vec![0.0, 0.35, 1.0, 1.7]).unwrap();
        let sets = s.index_sets(17, 0.1).unwrap();
        assert_eq!(sets, vec![0..4, 4..10, 10..17]);
        assert!(s.index_sets(19, 0.1).is_err());
        assert!(PatchpointSchedule::new(vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn segmented_sampling_matches_single_propagation() {
        let m = Cr3bp::new(MU);
        let ctx = ExtractionContext::new(&m, None, MU).unwrap();
        let opts = IntegratorOptions::with_tolerance(1e-13);
        let ex = Extractor::new(FrameTag::Brf, 0).unwrap();
        let req = SignalRequest { extractors: vec![ex], n: 64, dt: 0.05 };
        let single = PatchpointSchedule::single(0.0, 3.2).unwrap();
        let a = sample_segments(&m, &ctx, &single, &[qdro()], &req, false, &opts).unwrap();

        let sched = PatchpointSchedule::new(vec![0.0, 1.1, 2.3, 3.2]).unwrap();
        let traj = propagate(&m, &qdro(), 0.0, 3.2, &opts).unwrap();
        let states: Vec<_> = sched.epochs()[..3].iter().map(|&t| traj.at(t).unwrap()).collect();
        let b = sample_segments(&m, &ctx, &sched, &states, &req, true, &opts).unwrap();
        for (u, v) in a.signals[0].values.iter().zip(&b.signals[0].values) {
            assert!((u - v).abs() < 1e-11);
        }
        for s in 0..2 {
            assert!((b.endpoints[s].0 - states[s + 1]).amax() < 1e-11);
        }
        let p = b.signals[0].partials.as_ref().unwrap();
        assert_eq!(p.segments.len(), 3);
        assert_eq!(p.grads[0], Vector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn partials_match_finite_differences() {
        let m = Cr3bp::new(MU);
        let ctx = ExtractionContext::new(&m, None, MU).unwrap();
        let opts = IntegratorOptions::with_tolerance(1e-13);
        let ex = Extractor::new(FrameTag::Brf, 1).unwrap();
        let req = SignalRequest { extractors: vec![ex], n: 32, dt: 0.09 };
        let sched = PatchpointSchedule::single(0.0, 3.0).unwrap();
        let x0 = Vector6::new(0.93, 0.01, 0.02, 0.01, 0.52, -0.01);
        let base = sample_segments(&m, &ctx, &sched, &[x0], &req, true, &opts).unwrap();
        let p = base.signals[0].partials.clone().unwrap();
        for j in 0..6 {
            let h = 1e-7;
            let mut xp = x0;
            let mut xm = x0;
            xp[j] += h;
            xm[j] -= h;
            let sp = sample_segments(&m, &ctx, &sched, &[xp], &req, false, &opts).unwrap();
            let sm = sample_segments(&m, &ctx, &sched, &[xm], &req, false, &opts).unwrap();
            for i in [5, 17, 31] {
                let fd = (sp.signals[0].values[i] - sm.signals[0].values[i]) / (2.0 * h);
                let an = p.grads[i][j];
                assert!((fd - an).abs() < 1e-5 * an.abs().max(1e-2), "i={i} j={j}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn mci_signal_partials_use_rotated_rows() {
        let c = SystemConstants::default();
        let eph: Arc<dyn EphemerisProvider> = Arc::new(CircularProvider::new(&c));
        let m = Hfem::new(c.mu_moon, eph.clone());
        let ctx = ExtractionContext::new(&m, Some(eph.clone()), c.mu).unwrap();
        let ex = Extractor::new(FrameTag::Brf, 0).unwrap();
        let t = 0.8;
        let (row, off) = ctx.linear_form(&ex, t).unwrap();
        let (cdcm, _) = eph.rotating_dcm(t).unwrap();
        let expect = cdcm.transpose().row(0).into_owned();
        assert!((row.fixed_columns::<3>(0) - expect).norm() < 1e-15);
        assert!(row.fixed_columns::<3>(3).norm() < 1e-15);
        assert!((off - (1.0 - c.mu)).abs() < 1e-15);
    }

    #[test]
    fn circular_hfem_matches_cr3bp() {
        let c = SystemConstants::default();
        let eph: Arc<dyn EphemerisProvider> = Arc::new(CircularProvider::new(&c));
        let hf = Hfem::new(c.mu_moon, eph.clone());
        let cr = Cr3bp::new(c.mu);
        let opts = IntegratorOptions::with_tolerance(1e-13);
        let x0 = Vector6::new(0.883_749_964_899_239, 0.0, 0.0, 0.0, 0.470_425_740_470_053, 0.0);
        let s0 = StateVector6::from_vector(&x0, FrameTag::Brf, 0.0).unwrap();
        let r0 = brf_to_mci(&s0, eph.as_ref(), c.mu).unwrap();
        let xb = propagate_state(&cr, &x0, 0.0, 1.6, &opts).unwrap();
        let xm = propagate_state(&hf, &r0.to_vector(), 0.0, 1.6, &opts).unwrap();
        let back = crate::frames::mci_to_brf(
            &StateVector6::from_vector(&xm, FrameTag::Mci, 1.6).unwrap(),
            eph.as_ref(),
            c.mu,
        )
        .unwrap();
        assert!((back.to_vector() - xb).amax() < 1e-6);
    }

    #[test]
    fn strobe_of_periodic_orbit_is_constant() {
        let m = Cr3bp::new(MU);
        let ctx = ExtractionContext::new(&m, None, MU).unwrap();
        let x0 = Vector6::new(0.883_749_964_899_239, 0.0, 0.0, 0.0, 0.470_425_740_470_053, 0.0);
        let traj = propagate(&m, &x0, 0.0, 16.0, &IntegratorOptions::default()).unwrap();
        let ex = Extractor::new(FrameTag::Brf, 0).unwrap();
        let s = stroboscopic_sample(&traj, &ctx, &ex, 1.6, 11).unwrap();
        assert!(s.values.iter().all(|v| (v - x0[0]).abs() < 1e-9));
    }

    #[test]
    fn variational_trajectory_sampling() {
        let m = Cr3bp::new(MU);
        let ctx = ExtractionContext::new(&m, None, MU).unwrap();
        let traj = propagate_with_stm(&m, &qdro(), 0.0, 2.0, &IntegratorOptions::default()).unwrap();
        let ex = Extractor::new(FrameTag::Brf, 0).unwrap();
        let s = sample_variational(&traj, &ctx, &ex, 20, 0.1).unwrap();
        let p = s.partials.unwrap();
        assert_eq!(p.grads[0], Vector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
    }
}
