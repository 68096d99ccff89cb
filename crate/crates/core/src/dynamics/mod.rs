//! Pulse-level propagation of the three-mode system and the phase and
//! leakage quantities extracted from it.

mod full;
mod phase;
mod rwa;
mod sweep;

use nalgebra::{DMatrix, Matrix4};
use serde::{Deserialize, Serialize};

pub use full::FullModel;
pub use phase::{conditional_phase, cphase, unwrap_near, virtual_z_correct, wrap_pi, PhaseReport};
pub use rwa::RwaModel;
pub(crate) use sweep::Predictor;
pub use sweep::{
    dynamic_phase_linearity, leakage_sweep, phase_vs_length, write_leakage_csv, write_phase_csv, LeakagePoint,
    LeakageSweep, LinearityFit, PhaseRow, PhaseSweep, PulseTemplate,
};

use crate::device::{DeviceParams, FockLabel, COMPUTATIONAL, TRACKED};
use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::pulse::FluxPulse;

/// Hamiltonian used for propagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    /// Full charge coupling with the configured Fock truncation per mode.
    Full,
    /// Excitation-conserving couplings between the three lowest local
    /// levels of each mode.
    Rwa,
}

impl std::str::FromStr for Frame {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "full-n8" => Ok(Frame::Full),
            "rwa" | "rwa-n3" => Ok(Frame::Rwa),
            other => Err(Error::Configuration(format!("unknown frame '{other}' (expected full or rwa)"))),
        }
    }
}

impl std::fmt::Display for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Frame::Full => "full",
            Frame::Rwa => "rwa",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Integrator step in ns; `None` picks the frame default.
    pub dt: Option<f64>,
    /// Repeat with half the step and compare.
    pub check_convergence: bool,
    /// Largest tolerated change of any reported matrix element on halving.
    pub tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { dt: None, check_convergence: true, tolerance: 1e-6 }
    }
}

impl SolverOptions {
    /// No halving check; the full frame then defaults to a 5 ps step, which
    /// moves φ_c of the CZ pulse by about 1e-6 rad.
    pub fn fast() -> Self {
        Self { check_convergence: false, ..Self::default() }
    }

    pub fn step(&self, frame: Frame) -> f64 {
        self.dt.unwrap_or(match (frame, self.check_convergence) {
            (Frame::Full, true) => full::DEFAULT_STEP,
            (Frame::Full, false) => full::FAST_STEP,
            (Frame::Rwa, _) => rwa::DEFAULT_STEP,
        })
    }
}

/// Populations left in tracked non-computational states for one input.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeakageRecord {
    pub initial: FockLabel,
    /// `1 - Σ_j |⟨j|U|initial⟩|²` over the computational states.
    pub total: f64,
    pub tracked: Vec<(FockLabel, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropagationResult {
    /// `⟨j|U|k⟩` on |00⟩, |01⟩, |10⟩, |11⟩ in the frame rotating with the
    /// idle dressed energies.
    pub u: Matrix4<C64>,
    pub leakage: Vec<LeakageRecord>,
    /// Largest entry of `Ψ†Ψ - 1` over the propagated states.
    pub unitarity_defect: f64,
    pub frame: Frame,
    pub truncation: usize,
    pub dt: f64,
    pub duration: f64,
    /// Largest element change observed when halving the step.
    pub convergence_delta: Option<f64>,
}

impl PropagationResult {
    /// Mean leaked population over the four computational inputs.
    pub fn mean_leakage(&self) -> f64 {
        self.leakage.iter().map(|l| l.total).sum::<f64>() / self.leakage.len() as f64
    }
}

/// Raw propagation output shared by both frames.
#[doc(hidden)]
pub struct RawRun {
    /// `⟨dressed label|ψ_k(T)⟩` in the lab frame, rows ordered as `TRACKED`,
    /// columns as `COMPUTATIONAL`.
    pub amplitudes: DMatrix<C64>,
    pub unitarity_defect: f64,
}

/// Common interface of the two propagators.
pub trait Propagator: Sync {
    fn frame(&self) -> Frame;
    fn truncation(&self) -> usize;
    /// Absolute idle ground energy and ground-referenced energies of the
    /// tracked dressed states, in GHz.
    fn energies(&self) -> (f64, [f64; TRACKED.len()]);
    #[doc(hidden)]
    fn run(&self, pulse: &FluxPulse, dt: f64) -> Result<RawRun>;

    /// Propagate `pulse` (excursion from the idle flux) and report the
    /// computational block and leakage.
    fn evolve(&self, pulse: &FluxPulse, opts: &SolverOptions) -> Result<PropagationResult> {
        let dt = opts.step(self.frame());
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Parameter(format!("integrator step must be positive, got {dt}")));
        }
        let first = self.assemble(pulse, dt, self.run(pulse, dt)?);
        if !opts.check_convergence {
            return Ok(first);
        }
        let mut fine = self.assemble(pulse, dt / 2.0, self.run(pulse, dt / 2.0)?);
        let delta = (fine.u - first.u).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if delta > opts.tolerance {
            return Err(Error::Convergence { delta, tolerance: opts.tolerance });
        }
        fine.convergence_delta = Some(delta);
        Ok(fine)
    }

    #[doc(hidden)]
    fn assemble(&self, pulse: &FluxPulse, dt: f64, raw: RawRun) -> PropagationResult {
        let duration = pulse.duration();
        let (ground, energies) = self.energies();
        let row = |l: FockLabel| TRACKED.iter().position(|&t| t == l).unwrap();
        let mut u = Matrix4::zeros();
        // |11⟩ rotates at the sum of the qubit frequencies, so the idle ZZ
        // shift stays visible as a conditional phase.
        let frame_energy = |l: FockLabel| match l {
            FockLabel([1, 1, 0]) => energies[row(FockLabel([1, 0, 0]))] + energies[row(FockLabel([0, 1, 0]))],
            _ => energies[row(l)],
        };
        for (j, &lj) in COMPUTATIONAL.iter().enumerate() {
            let rj = row(lj);
            let phase = C64::from_polar(1.0, std::f64::consts::TAU * (ground + frame_energy(lj)) * duration);
            for k in 0..4 {
                u[(j, k)] = raw.amplitudes[(rj, k)] * phase;
            }
        }
        let leakage = COMPUTATIONAL
            .iter()
            .enumerate()
            .map(|(k, &init)| {
                let kept: f64 = (0..4).map(|j| u[(j, k)].norm_sqr()).sum();
                let tracked = TRACKED
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| !COMPUTATIONAL.contains(l))
                    .map(|(r, &l)| (l, raw.amplitudes[(r, k)].norm_sqr()))
                    .collect();
                LeakageRecord { initial: init, total: (1.0 - kept).max(0.0), tracked }
            })
            .collect();
        PropagationResult {
            u,
            leakage,
            unitarity_defect: raw.unitarity_defect,
            frame: self.frame(),
            truncation: self.truncation(),
            dt,
            duration,
            convergence_delta: None,
        }
    }
}

/// Build the propagator for `frame` at the idle point of `params`.
pub fn propagator(params: &DeviceParams, frame: Frame) -> Result<Box<dyn Propagator>> {
    Ok(match frame {
        Frame::Full => Box::new(FullModel::new(params)?),
        Frame::Rwa => Box::new(RwaModel::new(params)?),
    })
}

/// One-shot propagation of `pulse` in the chosen frame.
pub fn time_evolve(
    params: &DeviceParams,
    pulse: &FluxPulse,
    frame: Frame,
    opts: &SolverOptions,
) -> Result<PropagationResult> {
    propagator(params, frame)?.evolve(pulse, opts)
}
