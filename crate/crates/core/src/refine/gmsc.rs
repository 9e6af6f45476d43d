//! Collocation refinement: the DFT of the tone model must match the DFT of
//! the signal at the peak bin (both rows) and at one adjacent bin (one row).
//! All components enter every constraint, so they are solved jointly.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::inverse_norm;
use crate::refine::FrequencyComponent;
use crate::spectrum::{dft_basis_at_bins, BasisDft, WindowedDft};

/// Which row of the adjacent-bin DFT match is enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsRow {
    Cosine,
    Sine,
}

/// Collocation bins of one component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Collocation {
    pub peak: usize,
    pub neighbor: usize,
    pub row: CsRow,
}

impl Collocation {
    /// Adjacent bin with the larger signal magnitude, lower bin on ties.
    pub fn neighbor_of(dft: &WindowedDft, peak: usize) -> usize {
        crate::spectrum::larger_neighbor(peak, dft.magnitude(peak - 1), dft.magnitude(peak + 1))
    }
}

/// Signal-side values `C_q`, `S_q` at the peak and the selected row at the
/// neighbor, stacked per component.
pub fn signal_rows(dft: &WindowedDft, colloc: &[Collocation]) -> DVector<f64> {
    let mut v = DVector::zeros(3 * colloc.len());
    for (l, c) in colloc.iter().enumerate() {
        v[3 * l] = dft.c(c.peak);
        v[3 * l + 1] = dft.s(c.peak);
        v[3 * l + 2] = match c.row {
            CsRow::Cosine => dft.c(c.neighbor),
            CsRow::Sine => dft.s(c.neighbor),
        };
    }
    v
}

/// Basis DFTs of every component at both bins of every collocation,
/// indexed `[l][a] -> (peak, neighbor)`.
pub(crate) fn basis_table(
    n: usize,
    dt: f64,
    comps: &[FrequencyComponent],
    colloc: &[Collocation],
) -> Vec<Vec<(BasisDft, BasisDft)>> {
    let bins: Vec<usize> = colloc.iter().flat_map(|c| [c.peak, c.neighbor]).collect();
    let per_comp: Vec<Vec<BasisDft>> = comps.par_iter().map(|a| dft_basis_at_bins(n, dt, a.nu, &bins)).collect();
    (0..colloc.len())
        .map(|l| per_comp.iter().map(|b| (b[2 * l], b[2 * l + 1])).collect())
        .collect()
}

/// Model rows and their partials with respect to `(ν, A, θ)` for one tone.
fn tone_rows(xi: &FrequencyComponent, peak: &BasisDft, nb: &BasisDft, row: CsRow) -> ([f64; 3], [[f64; 3]; 3]) {
    let (ac, as_) = xi.cos_sin();
    let (c, s) = (xi.phase.cos(), xi.phase.sin());
    let entry = |x_c: f64, x_s: f64, dx_c: f64, dx_s: f64| {
        (ac * x_c - as_ * x_s, [ac * dx_c - as_ * dx_s, c * x_c - s * x_s, -as_ * x_c - ac * x_s])
    };
    let (v0, d0) = entry(peak.cc, peak.cs, peak.d_nu[0], peak.d_nu[1]);
    let (v1, d1) = entry(peak.sc, peak.ss, peak.d_nu[2], peak.d_nu[3]);
    let (v2, d2) = match row {
        CsRow::Cosine => entry(nb.cc, nb.cs, nb.d_nu[0], nb.d_nu[1]),
        CsRow::Sine => entry(nb.sc, nb.ss, nb.d_nu[2], nb.d_nu[3]),
    };
    ([v0, v1, v2], [d0, d1, d2])
}

/// Stacked residuals and the full cross-coupled Jacobian for the components
/// refined jointly.
pub fn gmsc_system(
    n: usize,
    dt: f64,
    signal: &DVector<f64>,
    comps: &[FrequencyComponent],
    colloc: &[Collocation],
) -> (DVector<f64>, DMatrix<f64>) {
    let m = comps.len();
    let table = basis_table(n, dt, comps, colloc);
    let mut f = -signal.clone();
    let mut jac = DMatrix::zeros(3 * m, 3 * m);
    for (l, c) in colloc.iter().enumerate() {
        for (a, xi) in comps.iter().enumerate() {
            let (bp, bn) = &table[l][a];
            let (v, d) = tone_rows(xi, bp, bn, c.row);
            for r in 0..3 {
                f[3 * l + r] += v[r];
                for k in 0..3 {
                    jac[(3 * l + r, 3 * a + k)] = d[r][k];
                }
            }
        }
    }
    (f, jac)
}

pub fn gmsc_constraints(
    dft: &WindowedDft,
    comps: &[FrequencyComponent],
    colloc: &[Collocation],
) -> DVector<f64> {
    gmsc_system(dft.n, dft.dt, &signal_rows(dft, colloc), comps, colloc).0
}

pub fn gmsc_jacobian(n: usize, dt: f64, comps: &[FrequencyComponent], colloc: &[Collocation]) -> DMatrix<f64> {
    gmsc_system(n, dt, &DVector::zeros(3 * comps.len()), comps, colloc).1
}

/// Choose the adjacent-bin row whose single-component Jacobian has the
/// smaller inverse norm at the guess.
pub fn select_row(n: usize, dt: f64, xi: &FrequencyComponent, peak: usize, neighbor: usize) -> CsRow {
    let norm = |row| {
        let c = Collocation { peak, neighbor, row };
        inverse_norm(&gmsc_jacobian(n, dt, std::slice::from_ref(xi), &[c]))
    };
    if norm(CsRow::Sine) < norm(CsRow::Cosine) {
        CsRow::Sine
    } else {
        CsRow::Cosine
    }
}
