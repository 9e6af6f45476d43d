//! Windowed discrete Fourier analysis of uniformly sampled signals.
//!
//! With `t_i = Δt·i`, `T = Δt·N` and the order-two Hann window
//! `h(i) = (2/3)(1 - cos(2πi/N))²`, the transform is
//!
//! ```text
//! F(f) = (1/N) Σ q(t_i) h(i) exp(-i f t_i)
//! ```
//!
//! and the cosine/sine coefficients are `C_q = 2 Re F`, `S_q = -2 Im F`, so a
//! tone `A cos(ν t + θ)` has `C_q(ν) ≈ A cos θ` and `S_q(ν) ≈ -A sin θ`.
//!
//! All sums use a fixed pairwise reduction tree, so results are bit-identical
//! regardless of thread count.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{FdcError, Result};
use crate::propagation::SampledSignal;
use crate::refine::FrequencyComponent;

const LEAF: usize = 128;
const PARALLEL_THRESHOLD: usize = 8192;

fn pairwise_range<const K: usize, F>(lo: usize, hi: usize, f: &F) -> [f64; K]
where
    F: Fn(usize) -> [f64; K] + Sync,
{
    let n = hi - lo;
    if n <= LEAF {
        let mut acc = [0.0; K];
        for i in lo..hi {
            let v = f(i);
            for k in 0..K {
                acc[k] += v[k];
            }
        }
        return acc;
    }
    let mid = lo + n / 2;
    let (a, b) = if n >= PARALLEL_THRESHOLD {
        rayon::join(|| pairwise_range(lo, mid, f), || pairwise_range(mid, hi, f))
    } else {
        (pairwise_range(lo, mid, f), pairwise_range(mid, hi, f))
    };
    let mut out = a;
    for k in 0..K {
        out[k] += b[k];
    }
    out
}

/// Pairwise sums of `K` terms over `0..n`.
pub fn pairwise_sums<const K: usize, F>(n: usize, f: F) -> [f64; K]
where
    F: Fn(usize) -> [f64; K] + Sync,
{
    pairwise_range(0, n, &f)
}

/// Pairwise sums of `K` terms over `lo..hi`.
pub fn pairwise_sums_in<const K: usize, F>(lo: usize, hi: usize, f: F) -> [f64; K]
where
    F: Fn(usize) -> [f64; K] + Sync,
{
    pairwise_range(lo, hi, &f)
}

pub fn pairwise_sum<F: Fn(usize) -> f64 + Sync>(n: usize, f: F) -> f64 {
    pairwise_range(0, n, &|i| [f(i)])[0]
}

/// Order-two Hann window with unit mean.
pub fn window(i: usize, n: usize) -> f64 {
    let c = 1.0 - (TAU * i as f64 / n as f64).cos();
    2.0 / 3.0 * c * c
}

pub fn window_values(n: usize) -> Vec<f64> {
    (0..n).map(|i| window(i, n)).collect()
}

fn check_signal(s: &SampledSignal) -> Result<()> {
    let n = s.len();
    if n < 8 {
        return Err(FdcError::InvalidSignal(format!("{n} samples is too few")));
    }
    if n % 2 != 0 {
        return Err(FdcError::InvalidSignal(format!("N = {n} must be even")));
    }
    Ok(())
}

/// Windowed DFT at the bins `f_k = 2πk/T`, `0 ≤ k ≤ N/2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowedDft {
    pub n: usize,
    pub dt: f64,
    pub bins: Vec<Complex64>,
}

impl WindowedDft {
    pub fn bin_width(&self) -> f64 {
        TAU / (self.dt * self.n as f64)
    }

    pub fn frequency(&self, k: usize) -> f64 {
        self.bin_width() * k as f64
    }

    pub fn c(&self, k: usize) -> f64 {
        2.0 * self.bins[k].re
    }

    pub fn s(&self, k: usize) -> f64 {
        -2.0 * self.bins[k].im
    }

    pub fn magnitude(&self, k: usize) -> f64 {
        self.bins[k].norm()
    }

    /// Single-sided amplitude spectrum `2|F(f_k)|`.
    pub fn amplitudes(&self) -> Vec<f64> {
        self.bins.iter().map(|b| 2.0 * b.norm()).collect()
    }
}

pub fn dft_at_bins(signal: &SampledSignal) -> Result<WindowedDft> {
    check_signal(signal)?;
    let n = signal.len();
    let scale = 1.0 / n as f64;
    let mut buf: Vec<Complex64> =
        signal.values.iter().enumerate().map(|(i, q)| Complex64::new(q * window(i, n) * scale, 0.0)).collect();
    let fft = FftPlanner::new().plan_fft_forward(n);
    fft.process(&mut buf);
    buf.truncate(n / 2 + 1);
    Ok(WindowedDft { n, dt: signal.dt, bins: buf })
}

/// `C_q`, `S_q` at a continuous frequency and their first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContinuousDft {
    pub c: f64,
    pub s: f64,
    pub dc: f64,
    pub ds: f64,
    pub d2c: f64,
    pub d2s: f64,
}

impl ContinuousDft {
    pub fn magnitude(&self) -> f64 {
        self.c.hypot(self.s)
    }
}

pub fn dft_continuous(signal: &SampledSignal, f: f64) -> Result<ContinuousDft> {
    check_signal(signal)?;
    let n = signal.len();
    let q = &signal.values;
    let dt = signal.dt;
    let [c, s, dc, ds, d2c, d2s] = pairwise_sums(n, |i| {
        let t = dt * i as f64;
        let w = q[i] * window(i, n);
        let (sn, cs) = (f * t).sin_cos();
        let wc = w * cs;
        let ws = w * sn;
        [wc, ws, -t * ws, t * wc, -t * t * wc, -t * t * ws]
    });
    let k = 2.0 / n as f64;
    Ok(ContinuousDft { c: k * c, s: k * s, dc: k * dc, ds: k * ds, d2c: k * d2c, d2s: k * d2s })
}

/// Windowed DFTs of `cos(νt)` and `sin(νt)` evaluated at `f`:
/// `cc = C_{c(ν)}(f)`, `cs = C_{s(ν)}(f)`, `sc = S_{c(ν)}(f)`, `ss = S_{s(ν)}(f)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BasisDft {
    pub cc: f64,
    pub cs: f64,
    pub sc: f64,
    pub ss: f64,
    /// Partial derivatives with respect to `ν` at fixed `f`.
    pub d_nu: [f64; 4],
    /// Partial derivatives with respect to `f` at fixed `ν`.
    pub d_f: [f64; 4],
}

impl BasisDft {
    /// Total derivative along `f = ν`, ordered `[cc, cs, sc, ss]`.
    pub fn diagonal_derivative(&self) -> [f64; 4] {
        [0, 1, 2, 3].map(|k| self.d_nu[k] + self.d_f[k])
    }
}

pub fn dft_basis(n: usize, dt: f64, nu: f64, f: f64) -> BasisDft {
    let sums = pairwise_sums(n, |i| {
        let t = dt * i as f64;
        let h = window(i, n);
        let (sv, cv) = (nu * t).sin_cos();
        let (sf, cf) = (f * t).sin_cos();
        let th = t * h;
        [
            cv * cf * h,
            sv * cf * h,
            cv * sf * h,
            sv * sf * h,
            -sv * cf * th,
            cv * cf * th,
            -sv * sf * th,
            cv * sf * th,
            -cv * sf * th,
            -sv * sf * th,
            cv * cf * th,
            sv * cf * th,
        ]
    });
    let k = 2.0 / n as f64;
    let v: [f64; 12] = sums.map(|x| x * k);
    BasisDft {
        cc: v[0],
        cs: v[1],
        sc: v[2],
        ss: v[3],
        d_nu: [v[4], v[5], v[6], v[7]],
        d_f: [v[8], v[9], v[10], v[11]],
    }
}

/// [`dft_basis`] at bin frequencies `f = 2πk/T`, from two FFTs of the
/// windowed tone `h e^{iνt}` and its time-weighted copy.
pub fn dft_basis_at_bins(n: usize, dt: f64, nu: f64, bins: &[usize]) -> Vec<BasisDft> {
    let mut z = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for i in 0..n {
        let t = dt * i as f64;
        let h = window(i, n);
        let (sv, cv) = (nu * t).sin_cos();
        z.push(Complex64::new(h * cv, h * sv));
        w.push(Complex64::new(t * h * cv, t * h * sv));
    }
    let fft = FftPlanner::new().plan_fft_forward(n);
    fft.process(&mut z);
    fft.process(&mut w);
    let k = 2.0 / n as f64;
    // Split the packed transform of `a + ib` into the transforms of the
    // real sequences `a` and `b`: returns `[C_a, C_b, S_a, S_b]`.
    let split = |x: &[Complex64], b: usize| {
        let p = x[b];
        let q = x[(n - b) % n].conj();
        let ta = (p + q) * 0.5;
        let tb = (p - q) * Complex64::new(0.0, -0.5);
        [k * ta.re, k * tb.re, -k * ta.im, -k * tb.im]
    };
    bins.iter()
        .map(|&b| {
            let [cc, cs, sc, ss] = split(&z, b);
            let [ccw, csw, scw, ssw] = split(&w, b);
            BasisDft { cc, cs, sc, ss, d_nu: [-csw, ccw, -ssw, scw], d_f: [-scw, -ssw, ccw, csw] }
        })
        .collect()
}

/// Adjacent bin of `k` with the larger magnitude; magnitudes equal to
/// round-off count as a tie, which goes to the lower bin.
pub fn larger_neighbor(k: usize, below: f64, above: f64) -> usize {
    if above - below > 1e-12 * above.max(below) {
        k + 1
    } else {
        k - 1
    }
}

/// A local maximum of `|F(f_k)|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Peak {
    pub k: usize,
    pub frequency: f64,
    pub value: Complex64,
    pub below: Complex64,
    pub above: Complex64,
    /// Index of the adjacent bin with the larger magnitude (lower on ties).
    pub neighbor: usize,
    pub bin_width: f64,
}

impl Peak {
    pub fn magnitude(&self) -> f64 {
        self.value.norm()
    }

    pub fn neighbor_frequency(&self) -> f64 {
        self.bin_width * self.neighbor as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakOptions {
    /// Bins this close to DC or Nyquist are ignored.
    pub edge_bins: usize,
    /// Peaks below this fraction of the largest peak are dropped.
    pub relative_floor: f64,
    /// Peaks below this fraction of the largest bin, DC included, are
    /// treated as round-off noise.
    pub noise_floor: f64,
}

impl Default for PeakOptions {
    fn default() -> Self {
        Self { edge_bins: 2, relative_floor: 0.0, noise_floor: 1e-12 }
    }
}

/// Local maxima sorted by decreasing magnitude, at most `max_count` of them.
pub fn detect_peaks(dft: &WindowedDft, max_count: usize, opts: &PeakOptions) -> Vec<Peak> {
    let nyq = dft.n / 2;
    let lo = opts.edge_bins + 1;
    let hi = nyq.saturating_sub(opts.edge_bins + 1);
    let mag: Vec<f64> = dft.bins.iter().map(|b| b.norm()).collect();
    let noise = opts.noise_floor * mag.iter().cloned().fold(0.0, f64::max);
    let mut peaks = Vec::new();
    for k in lo.max(1)..=hi {
        let (a, m, b) = (mag[k - 1], mag[k], mag[k + 1]);
        if m >= a && m >= b && (m > a || m > b) && m > noise {
            let neighbor = larger_neighbor(k, a, b);
            peaks.push(Peak {
                k,
                frequency: dft.frequency(k),
                value: dft.bins[k],
                below: dft.bins[k - 1],
                above: dft.bins[k + 1],
                neighbor,
                bin_width: dft.bin_width(),
            });
        }
    }
    peaks.sort_by(|p, q| q.magnitude().total_cmp(&p.magnitude()).then(p.k.cmp(&q.k)));
    if let Some(top) = peaks.first().map(|p| p.magnitude()) {
        peaks.retain(|p| p.magnitude() >= opts.relative_floor * top);
    }
    peaks.truncate(max_count);
    peaks
}

/// DFT-seeded triplet: `ν = f_k`, `A = 2|F|`, `θ = atan2(-S_q, C_q)`.
pub fn initial_guess(peak: &Peak) -> FrequencyComponent {
    let c = 2.0 * peak.value.re;
    let s = -2.0 * peak.value.im;
    FrequencyComponent { nu: peak.frequency, amplitude: c.hypot(s), phase: (-s).atan2(c) }
}
