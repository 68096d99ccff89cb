use rayon::prelude::*;
use serde::Serialize;

use crate::device::DeviceParams;
use crate::dynamics::{conditional_phase, propagator, Frame, PulseTemplate, SolverOptions};
use crate::error::{Error, Result};
use crate::pulse::{design_iir, distort, ExpTerm, FilterChain, FluxPulse, TransferModel};

/// Flux drive line: an optional predistortion chain followed by the line's
/// transfer model.
#[derive(Debug, Clone)]
pub struct FluxLine {
    pub transfer: TransferModel,
    pub chain: Option<FilterChain>,
    pub dt: f64,
}

impl FluxLine {
    pub fn new(transfer: TransferModel, predistort: bool, dt: f64) -> Result<Self> {
        transfer.validate()?;
        let chain = if predistort { Some(design_iir(&transfer, dt)?) } else { None };
        Ok(Self { transfer, chain, dt })
    }

    /// Line whose filters were designed from `design_model` but which
    /// actually behaves like `transfer`.
    pub fn mismatched(transfer: TransferModel, design_model: &TransferModel, dt: f64) -> Result<Self> {
        transfer.validate()?;
        Ok(Self { transfer, chain: Some(design_iir(design_model, dt)?), dt })
    }

    pub fn apply_samples(&self, x: &[f64]) -> Vec<f64> {
        let pre = match &self.chain {
            Some(c) => c.apply(x),
            None => x.to_vec(),
        };
        distort(&self.transfer, &pre, self.dt)
    }

    /// The flux seen by the coupler when `pulse` is programmed.
    pub fn apply(&self, pulse: &FluxPulse) -> Result<FluxPulse> {
        if (pulse.dt - self.dt).abs() > 1e-12 * self.dt {
            return Err(Error::Interface(format!("pulse dt {} differs from line dt {}", pulse.dt, self.dt)));
        }
        Ok(pulse.with_samples(self.apply_samples(&pulse.samples)))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PredistortReport {
    pub samples_checked: usize,
    /// Largest `|y - 1|` of the predistorted unit step after the first five
    /// samples.
    pub corrected_step_deviation: f64,
    /// Same for the uncorrected line.
    pub raw_step_deviation: f64,
    pub pulses: usize,
    /// Per-pulse conditional-phase error against an ideal line, in degrees.
    pub corrected_errors_deg: Vec<f64>,
    pub raw_errors_deg: Vec<f64>,
    /// Filters designed from a model with every amplitude scaled by 1.1.
    pub mismatched_errors_deg: Vec<f64>,
    pub step: Vec<(f64, f64, f64)>,
}

impl PredistortReport {
    pub fn max_corrected_error_deg(&self) -> f64 {
        self.corrected_errors_deg.iter().map(|e| e.abs()).fold(0.0, f64::max)
    }
}

/// Step flatness of the predistorted line and the per-gate phase error of a
/// train of identical pulses.
pub fn predistort_check(
    params: &DeviceParams,
    transfer: &TransferModel,
    template: &PulseTemplate,
    amplitude: f64,
    tau: f64,
    pulses: usize,
    frame: Frame,
) -> Result<PredistortReport> {
    let dt = template.dt;
    let longest = transfer.terms.iter().map(|t| t.tau).fold(0.0, f64::max);
    let n = ((3.0 * longest / dt).ceil() as usize).max(64);
    let ones = vec![1.0; n];
    let corrected = FluxLine::new(transfer.clone(), true, dt)?;
    let raw = FluxLine::new(transfer.clone(), false, dt)?;
    let yc = corrected.apply_samples(&ones);
    let yr = raw.apply_samples(&ones);
    let dev = |y: &[f64]| y.iter().skip(5).map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    let stride = (n / 2000).max(1);
    let step = (0..n).step_by(stride).map(|k| (k as f64 * dt, yr[k], yc[k])).collect();

    let single = template.pulse(params, amplitude, tau)?;
    let per = single.samples.len();
    let mut train = Vec::with_capacity(per * pulses + 1);
    for _ in 0..pulses {
        train.extend_from_slice(&single.samples);
    }
    train.push(0.0);
    let segment = |samples: &[f64], k: usize| -> FluxPulse {
        let mut p = single.with_samples(samples[k * per..=(k + 1) * per].to_vec());
        p.core = per as f64 * dt - 2.0 * p.buffer;
        p
    };
    let prop = propagator(params, frame)?;
    let opts = SolverOptions::fast();
    let phase = |p: &FluxPulse| -> Result<f64> { Ok(conditional_phase(&prop.evolve(p, &opts)?.u)?.phi_c) };
    let reference = phase(&segment(&train, 0))?;
    let mismatched_model = TransferModel {
        terms: transfer.terms.iter().map(|t| ExpTerm { amplitude: 1.1 * t.amplitude, tau: t.tau }).collect(),
        gain: transfer.gain,
    };
    let mismatched = FluxLine::mismatched(transfer.clone(), &mismatched_model, dt)?;
    let mut errors = Vec::new();
    for line in [&corrected, &raw, &mismatched] {
        let out = line.apply_samples(&train);
        let errs: Vec<f64> = (0..pulses)
            .into_par_iter()
            .map(|k| phase(&segment(&out, k)).map(|p| crate::dynamics::wrap_pi(p - reference).to_degrees()))
            .collect::<Result<_>>()?;
        errors.push(errs);
    }
    let mismatched_errors_deg = errors.pop().unwrap();
    let raw_errors_deg = errors.pop().unwrap();
    let corrected_errors_deg = errors.pop().unwrap();
    Ok(PredistortReport {
        samples_checked: n,
        corrected_step_deviation: dev(&yc),
        raw_step_deviation: dev(&yr),
        pulses,
        corrected_errors_deg,
        raw_errors_deg,
        mismatched_errors_deg,
        step,
    })
}
