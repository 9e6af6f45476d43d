//! Scenario builders shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::f64::consts::{FRAC_PI_4, PI, TAU};
use std::sync::Arc;

use fdc_core::constants::SystemConstants;
use fdc_core::corrector::{
    center_modes, correct_symmetric, monodromy, seed_from_eigenstructure, CenterMode, ConstellationProblem,
    FrequencyTarget, ModeSelector, PeriodicOrbit, RelativePhase, ShootingProblem, SignalRecipe, SignalSpec,
    SolverOptions, SymmetricSetup,
};
use fdc_core::dynamics::{BicircularProvider, CircularProvider, Cr3bp, Dynamics, EphemerisProvider, Hfem};
use fdc_core::frames::{brf_to_mci, kepler_to_cartesian, FrameTag, KeplerElements, StateVector6};
use fdc_core::propagation::{ExtractionContext, Extractor, IntegratorOptions, PatchpointSchedule};
use fdc_core::refine::Method;
use nalgebra::{Matrix6, Vector6};

pub const MU: f64 = 0.012_150_584_269_940_356;

/// Periodic DRO with a 1.6 period.
pub const DRO_PERIODIC: [f64; 6] = [0.883_749_964_899_239, 0.0, 0.0, 0.0, 0.470_425_740_470_053, 0.0];
/// Planar quasi-DRO initial guess.
pub const DRO_GUESS: [f64; 6] = [0.929_817_046_666_844, 0.0, 0.0, 0.01, 0.522_717_065_584_611, 0.0];
pub const DRO_NU_C: f64 = 8.663_312_798_369_873;
pub const DRO_A_Q: f64 = 0.01;
pub const DRO_THETA_Q: f64 = FRAC_PI_4;

pub fn x_brf() -> Extractor {
    Extractor::new(FrameTag::Brf, 0).unwrap()
}

pub fn z_brf() -> Extractor {
    Extractor::new(FrameTag::Brf, 2).unwrap()
}

pub fn cr3bp() -> Arc<dyn Dynamics> {
    Arc::new(Cr3bp::new(MU))
}

pub fn single(model: Arc<dyn Dynamics>, eph: Option<Arc<dyn EphemerisProvider>>, x0: Vector6<f64>, recipe: SignalRecipe) -> ShootingProblem {
    let context = ExtractionContext::new(model.as_ref(), eph, MU).unwrap();
    ShootingProblem {
        context,
        model,
        schedule: PatchpointSchedule::single(0.0, recipe.span()).unwrap(),
        states: vec![x0],
        recipe,
        targets: vec![],
        options: SolverOptions::default(),
    }
}

/// Quasi-DRO single-shooting problem: `ν_C`, `θ_C = π` on the dominant
/// component and `A_Q`, `θ_Q` on the component near the monodromy estimate.
pub fn dro_problem(n: usize, span: f64) -> ShootingProblem {
    let recipe = SignalRecipe {
        signals: vec![SignalSpec { extractor: x_brf(), method: Method::Lnaff, m: 2 }],
        n,
        dt: span / n as f64,
        peaks: Default::default(),
    };
    let mut p = single(cr3bp(), None, Vector6::from(DRO_GUESS), recipe);
    p.targets = vec![
        FrequencyTarget::new(0, ModeSelector::Index(0)).nu(DRO_NU_C).phase(PI),
        FrequencyTarget::new(0, ModeSelector::NearestNu(1.0249)).amplitude(DRO_A_Q).phase(DRO_THETA_Q),
    ];
    p
}

/// Periodic DRO at the quasi-DRO's `ν_C`.
pub fn dro_orbit() -> PeriodicOrbit {
    let guess = PeriodicOrbit { state: Vector6::new(0.9298, 0.0, 0.0, 0.0, 0.5226, 0.0), period: TAU / DRO_NU_C };
    correct_symmetric(&Cr3bp::new(MU), &guess, &SymmetricSetup::planar_fixed_period(), &IntegratorOptions::default())
        .unwrap()
}

/// 9:2 halo-like orbit about L2, corrected with its period free.
pub fn nrho_orbit() -> PeriodicOrbit {
    let guess = PeriodicOrbit { state: Vector6::new(1.0221, 0.0, -0.1821, 0.0, -0.1033, 0.0), period: 1.50916 };
    let setup = SymmetricSetup { free: vec![0, 4], vary_period: true, crossing: vec![1, 3, 5], tol: 1e-12, max_iter: 30 };
    correct_symmetric(&Cr3bp::new(MU), &guess, &setup, &IntegratorOptions::default()).unwrap()
}

pub struct NrhoSetup {
    pub orbit: PeriodicOrbit,
    pub monodromy: Matrix6<f64>,
    pub mode: CenterMode,
    pub problem: ShootingProblem,
}

/// Multiple-shooting problem in the circular-provider HFEM: patchpoints
/// three per revolution, seeded along the center mode and mapped to MCI.
/// Targets are left empty.
pub fn nrho_setup(revs: usize, n: usize, eps: f64, m: usize) -> NrhoSetup {
    let c = SystemConstants::default();
    let opts = IntegratorOptions::default();
    let cr = Cr3bp::new(MU);
    let orbit = nrho_orbit();
    let mono = monodromy(&cr, &orbit, &opts).unwrap();
    let mode = center_modes(&mono, orbit.period).unwrap()[0];
    let np = 3 * revs;
    let seg = orbit.period / 3.0;
    let times: Vec<f64> = (0..np).map(|k| k as f64 * seg).collect();
    let brf = seed_from_eigenstructure(&cr, &orbit, &mode, eps, 0.0, &times, &opts).unwrap();
    let eph: Arc<dyn EphemerisProvider> = Arc::new(CircularProvider::new(&c));
    let states = brf
        .iter()
        .zip(&times)
        .map(|(x, &t)| {
            brf_to_mci(&StateVector6::from_vector(x, FrameTag::Brf, t).unwrap(), eph.as_ref(), MU).unwrap().to_vector()
        })
        .collect();
    let model: Arc<dyn Dynamics> = Arc::new(Hfem::new(c.mu_moon, eph.clone()));
    let context = ExtractionContext::new(model.as_ref(), Some(eph), MU).unwrap();
    let span = np as f64 * seg;
    let problem = ShootingProblem {
        context,
        model,
        schedule: PatchpointSchedule::uniform(0.0, seg, np).unwrap(),
        states,
        recipe: SignalRecipe {
            signals: vec![SignalSpec { extractor: x_brf(), method: Method::Lnaff, m }],
            n,
            dt: span / n as f64,
            peaks: Default::default(),
        },
        targets: vec![],
        options: SolverOptions::default(),
    };
    NrhoSetup { orbit, monodromy: mono, mode, problem }
}

pub const ELFO_NU_S: f64 = 26.1685;
pub const ELFO_NU_M: f64 = 1.0341;

/// Three ELFO satellites in the bicircular HFEM. Signal 0 is BRF `x`
/// (medium period), signal 1 is BRF `z` (short period).
pub fn elfo_constellation(n: usize, dt: f64, m: usize) -> (ConstellationProblem, Arc<dyn Dynamics>) {
    let c = SystemConstants::default();
    let eph: Arc<dyn EphemerisProvider> = Arc::new(BicircularProvider::new(&c, 0.0));
    let model: Arc<dyn Dynamics> = Arc::new(Hfem::new(c.mu_moon, eph.clone()));
    let d = PI / 180.0;
    let recipe = SignalRecipe {
        signals: vec![
            SignalSpec { extractor: x_brf(), method: Method::Gmsc, m },
            SignalSpec { extractor: z_brf(), method: Method::Gmsc, m },
        ],
        n,
        dt,
        peaks: Default::default(),
    };
    let satellites = [(0.0, 180.0), (120.0, 300.0), (240.0, 60.0)]
        .iter()
        .map(|&(raan, ma)| {
            let oe = KeplerElements::new(c.km_to_nd(10_000.0), 0.4082, 45.0 * d, raan * d, 90.0 * d, ma * d).unwrap();
            let x = kepler_to_cartesian(&oe, c.mu_moon, FrameTag::Mci, 0.0).unwrap().to_vector();
            let mut p = single(model.clone(), Some(eph.clone()), x, recipe.clone());
            p.targets = vec![
                FrequencyTarget::new(1, ModeSelector::Index(0)).nu(ELFO_NU_S),
                FrequencyTarget::new(0, ModeSelector::Index(1)).nu(ELFO_NU_M),
            ];
            p
        })
        .collect();
    // The x-signal phase of the medium-period mode falls as the node rises.
    let offsets = vec![
        vec![],
        vec![RelativePhase { target: 0, offset: 120.0 * d }, RelativePhase { target: 1, offset: -120.0 * d }],
        vec![RelativePhase { target: 0, offset: -120.0 * d }, RelativePhase { target: 1, offset: 120.0 * d }],
    ];
    (ConstellationProblem { satellites, reference: 0, offsets }, model)
}
