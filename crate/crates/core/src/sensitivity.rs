//! Sensitivities of refined frequency components with respect to the
//! shooting states, by the implicit function theorem applied to the
//! refinement constraints.
//!
//! For a converged `ξ` with `F(ξ, X) = 0`, `dξ/dX = -(∂F/∂ξ)⁻¹ ∂F/∂X`. The
//! constraints depend on `X` only through the samples, so `∂F/∂X` is a
//! weighted sum of the per-sample partials `dq(t_i)/dx_s`, restricted to the
//! samples of each segment and normalized by the full sample count `N`.
//!
//! In the sequential method the `j`-th constraint acts on the residual
//! `q - A₀ - Σ_{a<j} q̃_a`, so the sensitivities of the mean and of every
//! earlier component are chained in.

use std::ops::Range;

use nalgebra::{DMatrix, RowDVector};
use serde::Serialize;

use crate::error::{FdcError, Result};
use crate::linalg::solve;
use crate::propagation::{PatchpointSchedule, SampledSignal, StatePartials};
use crate::refine::{
    gmsc_jacobian, CsRow, FrequencyComponent, LnaffPoint, Method, Refinement,
};
use crate::spectrum::{pairwise_sums, pairwise_sums_in, window};

/// `∂(ν, A, θ)/∂X` of one component; three rows over `6·n_p` columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencySensitivity {
    pub component: usize,
    pub method: Method,
    pub rows: DMatrix<f64>,
}

impl FrequencySensitivity {
    pub fn d_nu(&self) -> RowDVector<f64> {
        self.rows.row(0).into_owned()
    }

    pub fn d_amplitude(&self) -> RowDVector<f64> {
        self.rows.row(1).into_owned()
    }

    pub fn d_phase(&self) -> RowDVector<f64> {
        self.rows.row(2).into_owned()
    }

    /// Block belonging to patchpoint `s`.
    pub fn block(&self, s: usize) -> DMatrix<f64> {
        self.rows.columns(6 * s, 6).into_owned()
    }
}

/// Per-segment sample index sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SegmentIndexSet {
    pub ranges: Vec<Range<usize>>,
}

impl SegmentIndexSet {
    pub fn from_schedule(schedule: &PatchpointSchedule, n: usize, dt: f64) -> Result<Self> {
        Ok(Self { ranges: schedule.index_sets(n, dt)? })
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.ranges.iter().map(|r| r.len()).collect()
    }

    /// Segments whose sample set is empty; their blocks are zero.
    pub fn empty_segments(&self) -> Vec<usize> {
        self.ranges.iter().enumerate().filter(|(_, r)| r.is_empty()).map(|(s, _)| s).collect()
    }
}

/// Gradients with respect to `X` of the four linear functionals
/// `Σ w_i r_i` with `w_i ∈ {c_i, s_i, t_i c_i, t_i s_i}`,
/// `c_i = (2/N) h(i) cos(f t_i)`, `s_i = (2/N) h(i) sin(f t_i)`, for
/// `r_i = q_i - mean(q)`.
struct Functionals {
    rows: [RowDVector<f64>; 4],
}

fn partials_of(signal: &SampledSignal) -> Result<&StatePartials> {
    signal
        .partials
        .as_ref()
        .ok_or_else(|| FdcError::Config("sensitivities need a signal sampled with partials".into()))
}

fn weights(n: usize, dt: f64, f: f64, i: usize) -> [f64; 4] {
    let t = dt * i as f64;
    let w = 2.0 / n as f64 * window(i, n);
    let (sn, cs) = (f * t).sin_cos();
    [w * cs, w * sn, t * w * cs, t * w * sn]
}

fn functionals(signal: &SampledSignal, p: &StatePartials, f: f64) -> Functionals {
    let n = signal.len();
    let dt = signal.dt;
    let nx = 6 * p.segments.len();
    let totals: [f64; 4] = pairwise_sums(n, |i| weights(n, dt, f, i));
    let mut rows = [RowDVector::zeros(nx), RowDVector::zeros(nx), RowDVector::zeros(nx), RowDVector::zeros(nx)];
    for (s, range) in p.segments.iter().enumerate() {
        let sums: [f64; 24] = pairwise_sums_in(range.start, range.end, |i| {
            let w = weights(n, dt, f, i);
            let g = &p.grads[i];
            let mut out = [0.0; 24];
            for k in 0..4 {
                for c in 0..6 {
                    out[6 * k + c] = w[k] * g[c];
                }
            }
            out
        });
        let gsum: [f64; 6] = pairwise_sums_in(range.start, range.end, |i| {
            let g = &p.grads[i];
            [g[0], g[1], g[2], g[3], g[4], g[5]]
        });
        for k in 0..4 {
            for c in 0..6 {
                rows[k][6 * s + c] = sums[6 * k + c] - totals[k] * gsum[c] / n as f64;
            }
        }
    }
    Functionals { rows }
}

/// `Σ_i w_i ∂q̃_a(t_i)/∂ξ_a` for the four weight families: a 4×3 matrix.
fn tone_functionals(n: usize, dt: f64, f: f64, xi: &FrequencyComponent) -> DMatrix<f64> {
    let sums: [f64; 12] = pairwise_sums(n, |i| {
        let w = weights(n, dt, f, i);
        let d = xi.partials(dt * i as f64);
        let mut out = [0.0; 12];
        for k in 0..4 {
            for c in 0..3 {
                out[3 * k + c] = w[k] * d[c];
            }
        }
        out
    });
    DMatrix::from_row_slice(4, 3, &sums)
}

fn centered_residuals(signal: &SampledSignal, refinement: &Refinement, upto: usize) -> Result<Vec<SampledSignal>> {
    let a0 = refinement.model.a0;
    let mut r = SampledSignal::new(signal.values.iter().map(|v| v - a0).collect(), signal.dt, signal.t0)?;
    let mut out = Vec::with_capacity(upto);
    for xi in refinement.components().iter().take(upto) {
        let next: Vec<f64> =
            r.values.iter().enumerate().map(|(i, q)| q - xi.eval(r.local_time(i))).collect();
        out.push(r);
        r = SampledSignal::new(next, signal.dt, signal.t0)?;
    }
    Ok(out)
}

/// `∂F/∂ξ` and `∂F/∂X` of the sequential method at component `j`, given the
/// sensitivities of all earlier components.
pub fn lnaff_system(
    signal: &SampledSignal,
    residual: &SampledSignal,
    earlier: &[(FrequencyComponent, &DMatrix<f64>)],
    xi: &FrequencyComponent,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = partials_of(signal)?;
    let n = signal.len();
    let dt = signal.dt;
    let point = LnaffPoint::at(residual, xi.nu)?;
    let mut fx = functionals(signal, p, xi.nu).rows;
    for (a, sens) in earlier {
        let e = tone_functionals(n, dt, xi.nu, a);
        let chain = &e * *sens;
        for k in 0..4 {
            fx[k] -= chain.row(k);
        }
    }
    let [gc, gs, gtc, gts] = fx;
    let d = &point.dft;
    // dC/dX, dS/dX, d(dC/dν)/dX, d(dS/dν)/dX
    let dc = gc;
    let ds = gs;
    let ddc = -gts;
    let dds = gtc;
    let m = d.magnitude();
    let l1 = d.c * d.dc + d.s * d.ds;
    let l2 = &dc * d.c + &ds * d.s;
    let l3 = &dc * d.dc + &ds * d.ds;
    let l4 = &ddc * d.c + &dds * d.s;
    let row0 = &l2 * (-l1 / (2.0 * m * m * m)) + (l3 + l4) / (2.0 * m);
    let nx = row0.len();
    let mut dfdx = DMatrix::zeros(3, nx);
    dfdx.row_mut(0).copy_from(&row0);
    dfdx.row_mut(1).copy_from(&(-dc));
    dfdx.row_mut(2).copy_from(&(-ds));
    let j = point.jacobian(xi);
    Ok((DMatrix::from_column_slice(3, 3, j.as_slice()), dfdx))
}

/// `∂F/∂ξ` (all components jointly) and `∂F/∂X` of the collocation method.
pub fn gmsc_system_partials(signal: &SampledSignal, refinement: &Refinement) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = partials_of(signal)?;
    let n = signal.len();
    let dt = signal.dt;
    let comps = refinement.components();
    let colloc = &refinement.collocation;
    if colloc.len() != comps.len() {
        return Err(FdcError::Config("collocation bins missing from refinement".into()));
    }
    let df = signal.bin_width();
    let nx = 6 * p.segments.len();
    let mut dfdx = DMatrix::zeros(3 * comps.len(), nx);
    for (l, c) in colloc.iter().enumerate() {
        let peak = functionals(signal, p, df * c.peak as f64).rows;
        let nb = functionals(signal, p, df * c.neighbor as f64).rows;
        dfdx.row_mut(3 * l).copy_from(&(-&peak[0]));
        dfdx.row_mut(3 * l + 1).copy_from(&(-&peak[1]));
        let r = match c.row {
            CsRow::Cosine => &nb[0],
            CsRow::Sine => &nb[1],
        };
        dfdx.row_mut(3 * l + 2).copy_from(&(-r));
    }
    Ok((gmsc_jacobian(n, dt, comps, colloc), dfdx))
}

/// Sensitivities of the first `count` components.
pub fn sensitivities(signal: &SampledSignal, refinement: &Refinement, count: usize) -> Result<Vec<FrequencySensitivity>> {
    let m = refinement.components().len();
    if count > m {
        return Err(FdcError::Config(format!("{count} sensitivities requested from {m} components")));
    }
    let p = partials_of(signal)?;
    if p.grads.len() != signal.len() {
        return Err(FdcError::Config("partials do not match the signal length".into()));
    }
    let method = refinement.method;
    match method {
        Method::Lnaff => {
            let residuals = centered_residuals(signal, refinement, count)?;
            let mut out: Vec<FrequencySensitivity> = Vec::with_capacity(count);
            for j in 0..count {
                let earlier: Vec<(FrequencyComponent, &DMatrix<f64>)> =
                    (0..j).map(|a| (refinement.components()[a], &out[a].rows)).collect();
                let (jxi, dfdx) = lnaff_system(signal, &residuals[j], &earlier, &refinement.components()[j])?;
                let rows = -solve(&jxi, &dfdx, "L-NAFF Jacobian")?;
                out.push(FrequencySensitivity { component: j, method, rows });
            }
            Ok(out)
        }
        Method::Gmsc => {
            let (jxi, dfdx) = gmsc_system_partials(signal, refinement)?;
            let all = -solve(&jxi, &dfdx, "GMS-C Jacobian")?;
            Ok((0..count)
                .map(|j| FrequencySensitivity { component: j, method, rows: all.rows(3 * j, 3).into_owned() })
                .collect())
        }
    }
}

fn single(signal: &SampledSignal, refinement: &Refinement, j: usize, method: Method) -> Result<FrequencySensitivity> {
    if refinement.method != method {
        return Err(FdcError::Config(format!("refinement used {}, expected {method}", refinement.method)));
    }
    if partials_of(signal)?.segments.len() != 1 {
        return Err(FdcError::Config("single-shooting sensitivity needs exactly one segment".into()));
    }
    Ok(sensitivities(signal, refinement, j + 1)?.swap_remove(j))
}

/// 3×6 sensitivity of component `j` from the sequential method.
pub fn lnaff_sensitivity_single(signal: &SampledSignal, refinement: &Refinement, j: usize) -> Result<FrequencySensitivity> {
    single(signal, refinement, j, Method::Lnaff)
}

/// 3×6 sensitivity of component `j` from the collocation method.
pub fn gmsc_sensitivity_single(signal: &SampledSignal, refinement: &Refinement, j: usize) -> Result<FrequencySensitivity> {
    single(signal, refinement, j, Method::Gmsc)
}

/// 3×6n_p sensitivity of component `j` over all patchpoints.
pub fn sensitivity_multi(signal: &SampledSignal, refinement: &Refinement, j: usize) -> Result<FrequencySensitivity> {
    Ok(sensitivities(signal, refinement, j + 1)?.swap_remove(j))
}

/// `(∂F/∂ξ)·S + ∂F/∂X` for the component systems, which vanishes when the
/// sensitivities are consistent.
pub fn implicit_residual(signal: &SampledSignal, refinement: &Refinement, sens: &[FrequencySensitivity]) -> Result<f64> {
    match refinement.method {
        Method::Lnaff => {
            let residuals = centered_residuals(signal, refinement, sens.len())?;
            let mut worst: f64 = 0.0;
            for j in 0..sens.len() {
                let earlier: Vec<_> = (0..j).map(|a| (refinement.components()[a], &sens[a].rows)).collect();
                let (jxi, dfdx) = lnaff_system(signal, &residuals[j], &earlier, &refinement.components()[j])?;
                let r = &jxi * &sens[j].rows + &dfdx;
                worst = worst.max(r.amax() / dfdx.amax().max(1.0));
            }
            Ok(worst)
        }
        Method::Gmsc => {
            let (jxi, dfdx) = gmsc_system_partials(signal, refinement)?;
            let mut all = DMatrix::zeros(jxi.ncols(), dfdx.ncols());
            for s in sens {
                all.rows_mut(3 * s.component, 3).copy_from(&s.rows);
            }
            let r = &jxi * &all + &dfdx;
            Ok(r.amax() / dfdx.amax().max(1.0))
        }
    }
}

/// Dense `N × 6n_p` matrix of per-sample partials, for debugging dumps.
pub fn sample_partials_matrix(signal: &SampledSignal) -> Result<DMatrix<f64>> {
    let p = partials_of(signal)?;
    let mut m = DMatrix::zeros(signal.len(), 6 * p.segments.len());
    for (s, r) in p.segments.iter().enumerate() {
        for i in r.clone() {
            for c in 0..6 {
                m[(i, 6 * s + c)] = p.grads[i][c];
            }
        }
    }
    Ok(m)
}

/// Write a sensitivity matrix as CSV, one row per `(ν, A, θ)`.
pub fn write_sensitivity_csv<W: std::io::Write>(s: &FrequencySensitivity, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let header: Vec<String> = std::iter::once("quantity".to_string())
        .chain((0..s.rows.ncols()).map(|c| format!("x{}_{}", c / 6, c % 6)))
        .collect();
    wr.write_record(&header).map_err(|e| FdcError::Config(format!("csv: {e}")))?;
    for (r, name) in ["nu", "A", "theta"].iter().enumerate() {
        let rec: Vec<String> =
            std::iter::once(name.to_string()).chain(s.rows.row(r).iter().map(|v| format!("{v:.17e}"))).collect();
        wr.write_record(&rec).map_err(|e| FdcError::Config(format!("csv: {e}")))?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Cr3bp;
    use crate::frames::{wrap_pi, FrameTag};
    use crate::propagation::{sample_segments, Extractor, ExtractionContext, IntegratorOptions, SignalRequest};
    use crate::refine::{refine_seeded, refine_sequential, RefineOptions};
    use nalgebra::Vector6;

    const MU: f64 = 0.012_150_584_269_940_356;
    const N: usize = 1024;

    fn setup() -> (Cr3bp, ExtractionContext, Vector6<f64>, IntegratorOptions, f64) {
        let m = Cr3bp::new(MU);
        let ctx = ExtractionContext::new(&m, None, MU).unwrap();
        let x0 = Vector6::new(0.93, 0.0, 0.0, 0.0, 0.525, 0.0);
        (m, ctx, x0, IntegratorOptions::with_tolerance(1e-13), 40.0)
    }

    fn sample(states: &[Vector6<f64>], schedule: &PatchpointSchedule, ex: Extractor, partials: bool) -> SampledSignal {
        let (m, ctx, _, opts, span) = setup();
        let req = SignalRequest { extractors: vec![ex], n: N, dt: span / N as f64 };
        sample_segments(&m, &ctx, schedule, states, &req, partials, &opts).unwrap().signals.remove(0)
    }

    fn x_signal() -> Extractor {
        Extractor::new(FrameTag::Brf, 0).unwrap()
    }

    fn fd_oracle(method: Method, comps: usize) {
        let (_, _, x0, _, span) = setup();
        let sched = PatchpointSchedule::single(0.0, span).unwrap();
        let s = sample(&[x0], &sched, x_signal(), true);
        let opts = RefineOptions::new(method, comps);
        let r = refine_sequential(&s, &opts).unwrap();
        assert!(r.report.converged, "{:?}", r.report);
        let sens = sensitivities(&s, &r, comps).unwrap();
        assert!(implicit_residual(&s, &r, &sens).unwrap() < 1e-10);
        let h = 1e-7;
        for c in [0, 1, 3, 4] {
            let mut xp = x0;
            let mut xm = x0;
            xp[c] += h;
            xm[c] -= h;
            let rp = refine_seeded(&sample(&[xp], &sched, x_signal(), false), &r, &opts).unwrap();
            let rm = refine_seeded(&sample(&[xm], &sched, x_signal(), false), &r, &opts).unwrap();
            for j in 0..comps {
                let (p, q) = (rp.components()[j].to_array(), rm.components()[j].to_array());
                let fd = [(p[0] - q[0]) / (2.0 * h), (p[1] - q[1]) / (2.0 * h), wrap_pi(p[2] - q[2]) / (2.0 * h)];
                for k in 0..3 {
                    let an = sens[j].rows[(k, c)];
                    let scale = sens[j].rows.row(k).amax().max(1e-8);
                    assert!(
                        (fd[k] - an).abs() < 1e-3 * scale,
                        "{method} comp {j} row {k} col {c}: fd {} vs {an}",
                        fd[k]
                    );
                }
            }
        }
    }

    #[test]
    fn lnaff_matches_re_refinement() {
        fd_oracle(Method::Lnaff, 2);
    }

    #[test]
    fn gmsc_matches_re_refinement() {
        fd_oracle(Method::Gmsc, 2);
    }

    #[test]
    fn planar_signal_ignores_out_of_plane_states() {
        let (_, _, x0, _, span) = setup();
        let sched = PatchpointSchedule::single(0.0, span).unwrap();
        let s = sample(&[x0], &sched, x_signal(), true);
        for method in [Method::Lnaff, Method::Gmsc] {
            let r = refine_sequential(&s, &RefineOptions::new(method, 1)).unwrap();
            let sens = sensitivities(&s, &r, 1).unwrap().remove(0);
            let scale = sens.rows.amax();
            for k in 0..3 {
                assert!(sens.rows[(k, 2)].abs() < 1e-12 * scale);
                assert!(sens.rows[(k, 5)].abs() < 1e-12 * scale);
            }
        }
    }

    #[test]
    fn scaling_the_signal_scales_only_amplitude() {
        let (_, _, x0, _, span) = setup();
        let sched = PatchpointSchedule::single(0.0, span).unwrap();
        let s = sample(&[x0], &sched, x_signal(), true);
        let mut s2 = s.map_values(|_, v| 3.0 * v);
        if let Some(p) = s2.partials.as_mut() {
            p.grads.iter_mut().for_each(|g| *g *= 3.0);
        }
        for method in [Method::Lnaff, Method::Gmsc] {
            let opts = RefineOptions::new(method, 1);
            let a = sensitivities(&s, &refine_sequential(&s, &opts).unwrap(), 1).unwrap().remove(0);
            let b = sensitivities(&s2, &refine_sequential(&s2, &opts).unwrap(), 1).unwrap().remove(0);
            let close = |x: RowDVector<f64>, y: RowDVector<f64>| (x.clone() - y).amax() < 1e-6 * x.amax();
            assert!(close(a.d_nu(), b.d_nu()));
            assert!(close(a.d_phase(), b.d_phase()));
            assert!(close(a.d_amplitude() * 3.0, b.d_amplitude()));
        }
    }

    #[test]
    fn methods_agree_on_the_dominant_component() {
        let (_, _, x0, _, span) = setup();
        let sched = PatchpointSchedule::single(0.0, span).unwrap();
        let s = sample(&[x0], &sched, x_signal(), true);
        let a = lnaff_sensitivity_single(&s, &refine_sequential(&s, &RefineOptions::new(Method::Lnaff, 1)).unwrap(), 0).unwrap();
        let b = gmsc_sensitivity_single(&s, &refine_sequential(&s, &RefineOptions::new(Method::Gmsc, 1)).unwrap(), 0).unwrap();
        let d = (a.d_nu() - b.d_nu()).amax() / a.d_nu().amax();
        assert!(d < 1e-2, "{d}");
    }

    fn chained(x0: Vector6<f64>, sched: &PatchpointSchedule) -> (Vec<Vector6<f64>>, Vec<nalgebra::Matrix6<f64>>) {
        let (m, _, _, opts, _) = setup();
        let mut states = vec![x0];
        let mut stms = vec![nalgebra::Matrix6::identity()];
        for s in 0..sched.segment_count() - 1 {
            let (a, b) = sched.segment(s);
            let (x, phi) = crate::propagation::propagate_stm(&m, states.last().unwrap(), a, b, &opts).unwrap();
            states.push(x);
            stms.push(phi * stms.last().unwrap());
        }
        (states, stms)
    }

    #[test]
    fn multi_shooting_chain_rule() {
        let (_, _, x0, _, span) = setup();
        let single_sched = PatchpointSchedule::single(0.0, span).unwrap();
        let multi = PatchpointSchedule::uniform(0.0, span / 4.0, 4).unwrap();
        let (states, stms) = chained(x0, &multi);
        let s1 = sample(&[x0], &single_sched, x_signal(), true);
        let s4 = sample(&states, &multi, x_signal(), true);
        for method in [Method::Lnaff, Method::Gmsc] {
            let opts = RefineOptions::new(method, 2);
            let r1 = refine_sequential(&s1, &opts).unwrap();
            let r4 = refine_seeded(&s4, &r1, &opts).unwrap();
            let a = sensitivity_multi(&s1, &r1, 1).unwrap();
            let b = sensitivity_multi(&s4, &r4, 1).unwrap();
            // Pushing the multi-shooting blocks back to x0 through the chain
            // of STMs recovers the single-shooting row.
            let mut pushed = DMatrix::zeros(3, 6);
            for (s, phi) in stms.iter().enumerate() {
                pushed += b.block(s) * DMatrix::from_column_slice(6, 6, phi.as_slice());
            }
            let err = (&pushed - &a.rows).amax() / a.rows.amax();
            assert!(err < 1e-8, "{method}: {err}");
        }
    }

    #[test]
    fn single_segment_multi_equals_single() {
        let (_, _, x0, _, span) = setup();
        let sched = PatchpointSchedule::single(0.0, span).unwrap();
        let s = sample(&[x0], &sched, x_signal(), true);
        let r = refine_sequential(&s, &RefineOptions::new(Method::Gmsc, 1)).unwrap();
        assert_eq!(gmsc_sensitivity_single(&s, &r, 0).unwrap(), sensitivity_multi(&s, &r, 0).unwrap());
    }

    #[test]
    fn empty_segment_gives_zero_block() {
        let (_, _, x0, _, span) = setup();
        let dt = span / N as f64;
        // The middle segment is shorter than one sample spacing.
        let sched = PatchpointSchedule::new(vec![0.0, 10.0 * dt + 0.1 * dt, 10.0 * dt + 0.5 * dt, span]).unwrap();
        let sets = SegmentIndexSet::from_schedule(&sched, N, dt).unwrap();
        assert_eq!(sets.empty_segments(), vec![1]);
        let (states, _) = chained(x0, &sched);
        let s = sample(&states, &sched, x_signal(), true);
        let r = refine_sequential(&s, &RefineOptions::new(Method::Lnaff, 1)).unwrap();
        let sens = sensitivity_multi(&s, &r, 0).unwrap();
        assert_eq!(sens.block(1).amax(), 0.0);
        assert!(sens.block(2).amax() > 0.0);
    }

    #[test]
    fn index_sets_partition_samples() {
        let sched = PatchpointSchedule::uniform(0.0, 1.3, 7).unwrap();
        let sets = SegmentIndexSet::from_schedule(&sched, 900, 0.01).unwrap();
        assert_eq!(sets.cardinalities().iter().sum::<usize>(), 900);
        for w in sets.ranges.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
    }
}
