//! Numerical propagation of states and state transition matrices, uniform
//! signal sampling, and segment chaining for multiple shooting.

pub mod dop853;
pub mod export;
pub mod signal;

use nalgebra::{Matrix6, SVector, Vector6};

pub use dop853::{DenseStep, IntegrationStats, IntegratorOptions};
pub use signal::{
    sample_segments, sample_trajectory, sample_variational, stroboscopic_sample, Extractor, ExtractionContext, PatchpointSchedule,
    SampledSignal, SegmentSampling, SignalRequest, StatePartials,
};

use crate::dynamics::Dynamics;
use crate::error::{FdcError, Result};

/// State plus STM packed column-major after the six state entries.
pub type Augmented = SVector<f64, 42>;

pub fn pack(x: &Vector6<f64>, phi: &Matrix6<f64>) -> Augmented {
    let mut y = Augmented::zeros();
    y.fixed_rows_mut::<6>(0).copy_from(x);
    y.fixed_rows_mut::<36>(6).copy_from_slice(phi.as_slice());
    y
}

pub fn unpack(y: &Augmented) -> (Vector6<f64>, Matrix6<f64>) {
    let x = Vector6::from_column_slice(&y.as_slice()[..6]);
    let phi = Matrix6::from_column_slice(&y.as_slice()[6..]);
    (x, phi)
}

pub(crate) fn state_rhs<'a>(
    model: &'a dyn Dynamics,
) -> impl Fn(f64, &Vector6<f64>) -> Result<Vector6<f64>> + Sync + 'a {
    move |t, x| model.derivative(t, x)
}

pub(crate) fn variational_rhs<'a>(
    model: &'a dyn Dynamics,
) -> impl Fn(f64, &Augmented) -> Result<Augmented> + Sync + 'a {
    move |t, y| {
        let (x, phi) = unpack(y);
        let dx = model.derivative(t, &x)?;
        let a = model.jacobian(t, &x)?;
        Ok(pack(&dx, &(a * phi)))
    }
}

/// Error control on the state only, so that attaching the STM does not
/// change the state trajectory.
pub(crate) fn variational_options(opts: &IntegratorOptions) -> IntegratorOptions {
    IntegratorOptions { error_dims: 6, ..*opts }
}

/// Dense solution over `[t0, t1]`.
#[derive(Debug, Clone)]
pub struct Trajectory<const D: usize> {
    pub t0: f64,
    pub t1: f64,
    pub initial: SVector<f64, D>,
    pub stats: IntegrationStats,
    steps: Vec<DenseStep<D>>,
}

impl<const D: usize> Trajectory<D> {
    pub fn final_state(&self) -> SVector<f64, D> {
        match self.steps.last() {
            Some(s) => s.eval(s.t_new()),
            None => self.initial,
        }
    }

    pub fn steps(&self) -> &[DenseStep<D>] {
        &self.steps
    }

    pub fn contains(&self, t: f64) -> bool {
        let (a, b) = if self.t1 >= self.t0 { (self.t0, self.t1) } else { (self.t1, self.t0) };
        t >= a && t <= b
    }

    /// Interpolated solution at `t`.
    pub fn at(&self, t: f64) -> Result<SVector<f64, D>> {
        if !self.contains(t) {
            return Err(FdcError::SpanExceeded(format!(
                "t = {t} outside [{}, {}]",
                self.t0, self.t1
            )));
        }
        if self.steps.is_empty() || t == self.t0 {
            return Ok(self.initial);
        }
        let forward = self.t1 >= self.t0;
        let idx = self.steps.partition_point(|s| {
            if forward {
                s.t_new() < t
            } else {
                s.t_new() > t
            }
        });
        let step = &self.steps[idx.min(self.steps.len() - 1)];
        Ok(step.eval(t))
    }
}

pub type StateTrajectory = Trajectory<6>;

/// Trajectory with the STM attached.
pub type VariationalTrajectory = Trajectory<42>;

impl VariationalTrajectory {
    pub fn state_and_stm(&self, t: f64) -> Result<(Vector6<f64>, Matrix6<f64>)> {
        Ok(unpack(&self.at(t)?))
    }
}

fn propagate_dense<const D: usize, F: dop853::OdeRhs<D>>(
    f: &F,
    y0: SVector<f64, D>,
    t0: f64,
    t1: f64,
    opts: &IntegratorOptions,
) -> Result<Trajectory<D>> {
    let mut steps = Vec::new();
    let (_, stats) = dop853::integrate(f, t0, y0, t1, opts, true, |s| {
        steps.push(s.dense.expect("dense output requested").clone());
        Ok(())
    })?;
    Ok(Trajectory { t0, t1, initial: y0, stats, steps })
}

/// Propagate with dense output.
pub fn propagate(
    model: &dyn Dynamics,
    x0: &Vector6<f64>,
    t0: f64,
    t1: f64,
    opts: &IntegratorOptions,
) -> Result<StateTrajectory> {
    propagate_dense(&state_rhs(model), *x0, t0, t1, opts)
}

/// Propagate the state and STM with dense output (`Φ(t0) = I`).
pub fn propagate_with_stm(
    model: &dyn Dynamics,
    x0: &Vector6<f64>,
    t0: f64,
    t1: f64,
    opts: &IntegratorOptions,
) -> Result<VariationalTrajectory> {
    let y0 = pack(x0, &Matrix6::identity());
    propagate_dense(&variational_rhs(model), y0, t0, t1, &variational_options(opts))
}

/// Endpoint state only.
pub fn propagate_state(
    model: &dyn Dynamics,
    x0: &Vector6<f64>,
    t0: f64,
    t1: f64,
    opts: &IntegratorOptions,
) -> Result<Vector6<f64>> {
    Ok(dop853::integrate(&state_rhs(model), t0, *x0, t1, opts, false, |_| Ok(()))?.0)
}

/// Endpoint state and STM.
pub fn propagate_stm(
    model: &dyn Dynamics,
    x0: &Vector6<f64>,
    t0: f64,
    t1: f64,
    opts: &IntegratorOptions,
) -> Result<(Vector6<f64>, Matrix6<f64>)> {
    let y0 = pack(x0, &Matrix6::identity());
    let (y, _) =
        dop853::integrate(&variational_rhs(model), t0, y0, t1, &variational_options(opts), false, |_| Ok(()))?;
    Ok(unpack(&y))
}

/// Endpoint of every segment of a schedule, each started from its own
/// patchpoint, with the segment STM.
pub fn propagate_segments(
    model: &dyn Dynamics,
    schedule: &PatchpointSchedule,
    states: &[Vector6<f64>],
    opts: &IntegratorOptions,
) -> Result<Vec<(Vector6<f64>, Matrix6<f64>)>> {
    use rayon::prelude::*;
    if states.len() != schedule.segment_count() {
        return Err(FdcError::Config(format!(
            "{} patchpoints for {} segments",
            states.len(),
            schedule.segment_count()
        )));
    }
    (0..states.len())
        .into_par_iter()
        .map(|s| {
            let (a, b) = schedule.segment(s);
            propagate_stm(model, &states[s], a, b, opts)
                .map_err(|e| FdcError::Segment { segment: s, source: Box::new(e) })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Cr3bp;

    const MU: f64 = 0.012_150_584_269_940_356;

    fn dro() -> Vector6<f64> {
        Vector6::new(0.883_749_964_899_239, 0.0, 0.0, 0.0, 0.470_425_740_470_053, 0.0)
    }

    #[test]
    fn dro_closes_after_one_period() {
        let m = Cr3bp::new(MU);
        let x = propagate_state(&m, &dro(), 0.0, 1.6, &IntegratorOptions::default()).unwrap();
        assert!((x - dro()).amax() < 1e-10, "{}", (x - dro()).amax());
    }

    #[test]
    fn jacobi_constant_is_conserved() {
        let m = Cr3bp::new(MU);
        let traj = propagate(&m, &dro(), 0.0, 1.6, &IntegratorOptions::default()).unwrap();
        let c0 = m.jacobi_constant(&dro()).unwrap();
        for k in 0..=32 {
            let x = traj.at(1.6 * k as f64 / 32.0).unwrap();
            let dc = (m.jacobi_constant(&x).unwrap() - c0).abs();
            assert!(dc < 1e-10, "{dc}");
        }
    }

    #[test]
    fn stm_matches_finite_differences() {
        let m = Cr3bp::new(MU);
        let x0 = Vector6::new(0.93, 0.0, 0.01, 0.01, 0.52, 0.002);
        let opts = IntegratorOptions::with_tolerance(1e-13);
        let (_, phi) = propagate_stm(&m, &x0, 0.0, 1.2, &opts).unwrap();
        for j in 0..6 {
            let h = 1e-8;
            let mut xp = x0;
            let mut xm = x0;
            xp[j] += h;
            xm[j] -= h;
            let fd = (propagate_state(&m, &xp, 0.0, 1.2, &opts).unwrap()
                - propagate_state(&m, &xm, 0.0, 1.2, &opts).unwrap())
                / (2.0 * h);
            let col = phi.column(j);
            assert!((fd - col).norm() < 1e-5 * col.norm(), "column {j}");
        }
    }

    #[test]
    fn stm_starts_at_identity_and_is_symplectic() {
        let m = Cr3bp::new(MU);
        let traj = propagate_with_stm(&m, &dro(), 0.0, 1.6, &IntegratorOptions::default()).unwrap();
        let (_, phi0) = traj.state_and_stm(0.0).unwrap();
        assert_eq!(phi0, Matrix6::identity());
        let (_, mono) = traj.state_and_stm(1.6).unwrap();
        assert!((mono.determinant() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn stm_state_matches_plain_propagation_bitwise() {
        let m = Cr3bp::new(MU);
        let opts = IntegratorOptions::default();
        let a = propagate_state(&m, &dro(), 0.0, 5.0, &opts).unwrap();
        let (b, _) = propagate_stm(&m, &dro(), 0.0, 5.0, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_span_and_span_checks() {
        let m = Cr3bp::new(MU);
        let traj = propagate(&m, &dro(), 0.3, 0.3, &IntegratorOptions::default()).unwrap();
        assert_eq!(traj.final_state(), dro());
        assert!(traj.at(0.4).is_err());
    }
}
