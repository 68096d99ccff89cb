use serde::Serialize;

use super::line::FluxLine;
use crate::device::DeviceParams;
use crate::dynamics::{
    conditional_phase, propagator, unwrap_near, Frame, Predictor, PropagationResult, Propagator, PulseTemplate,
    SolverOptions,
};
use crate::error::{Error, Result};
use crate::pulse::FluxPulse;

/// π, 3π/2, 2π, 5π/2 and 3π.
pub const TARGET_PHASES: [f64; 5] = [
    std::f64::consts::PI,
    1.5 * std::f64::consts::PI,
    2.0 * std::f64::consts::PI,
    2.5 * std::f64::consts::PI,
    3.0 * std::f64::consts::PI,
];

#[derive(Debug, Clone)]
pub struct CalibrationOptions {
    pub template: PulseTemplate,
    pub frame: Frame,
    pub solver: SolverOptions,
    /// Accepted `|φ_c - target|` in radians.
    pub tolerance: f64,
    pub max_length: f64,
    pub line: Option<FluxLine>,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            template: PulseTemplate::default(),
            frame: Frame::Full,
            solver: SolverOptions::fast(),
            tolerance: 0.2f64.to_radians(),
            max_length: 200.0,
            line: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Calibration {
    pub target: f64,
    pub amplitude: f64,
    /// Total pulse length in ns.
    pub tau: f64,
    /// Unwrapped conditional phase reached at `tau`.
    pub phi_c: f64,
    pub error_deg: f64,
    pub p_leak: f64,
    pub evaluations: usize,
    /// The target lies below the phase of the shortest pulse; `tau` is the
    /// two buffers alone.
    pub clamped_to_minimum: bool,
}

/// Pulse actually seen by the coupler for plateau `amplitude` and length `tau`.
pub fn realized_pulse(params: &DeviceParams, amplitude: f64, tau: f64, opts: &CalibrationOptions) -> Result<FluxPulse> {
    let pulse = opts.template.pulse(params, amplitude, tau)?;
    match &opts.line {
        Some(line) => line.apply(&pulse),
        None => Ok(pulse),
    }
}

/// Pulse length giving conditional phase `target` at plateau flux
/// `amplitude`, by false position (Illinois) on the unwrapped φ_c(τ).
pub fn cz_calibrate(
    params: &DeviceParams,
    target: f64,
    amplitude: f64,
    opts: &CalibrationOptions,
) -> Result<Calibration> {
    let prop = propagator(params, opts.frame)?;
    cz_calibrate_with(prop.as_ref(), params, target, amplitude, opts).map(|(c, _)| c)
}

pub(crate) fn cz_calibrate_with(
    prop: &dyn Propagator,
    params: &DeviceParams,
    target: f64,
    amplitude: f64,
    opts: &CalibrationOptions,
) -> Result<(Calibration, PropagationResult)> {
    if !target.is_finite() || target < 0.0 {
        return Err(Error::Parameter(format!("target phase must be finite and non-negative, got {target}")));
    }
    let tmin = opts.template.min_length();
    let tmax = opts.max_length;
    if tmax <= tmin {
        return Err(Error::Parameter(format!("maximum length {tmax} ns does not exceed the buffers ({tmin} ns)")));
    }
    let predictor = Predictor::new(params, amplitude);
    let estimate = |tau: f64| -> Result<f64> {
        Ok(match &predictor {
            Some(p) => p.phases(&opts.template.pulse(params, amplitude, tau)?)[0],
            None => 0.0,
        })
    };
    let evaluations = std::cell::Cell::new(0usize);
    let run = |tau: f64| -> Result<(f64, PropagationResult)> {
        evaluations.set(evaluations.get() + 1);
        let r = prop.evolve(&realized_pulse(params, amplitude, tau, opts)?, &opts.solver)?;
        Ok((conditional_phase(&r.u)?.phi_c, r))
    };
    let finish = |tau: f64, phi: f64, r: PropagationResult, evaluations: usize, clamped: bool| {
        let c = Calibration {
            target,
            amplitude,
            tau,
            phi_c: phi,
            error_deg: (phi - target).to_degrees(),
            p_leak: r.mean_leakage(),
            evaluations,
            clamped_to_minimum: clamped,
        };
        (c, r)
    };

    let (w, r) = run(tmin)?;
    let e0 = estimate(tmin)?;
    let phi0 = unwrap_near(w, e0);
    let mut offset = phi0 - e0;
    if (phi0 - target).abs() < opts.tolerance || target < phi0 {
        let clamped = (phi0 - target).abs() >= opts.tolerance;
        return Ok(finish(tmin, phi0, r, evaluations.get(), clamped));
    }
    // Invert the (monotone) estimate shifted by the observed offset.
    let guess = |offset: f64, lo: f64, hi: f64| -> Result<f64> {
        let (mut a, mut b) = (lo, hi);
        if estimate(b)? + offset < target {
            return Ok(b);
        }
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            if estimate(m)? + offset < target {
                a = m;
            } else {
                b = m;
            }
        }
        Ok(0.5 * (a + b))
    };
    let mut lo = (tmin, phi0);
    let mut hi: Option<(f64, f64)> = None;
    let mut tau = guess(offset, tmin, tmax)?;
    let mut side = 0i32;
    for _ in 0..40 {
        let (w, r) = run(tau)?;
        let e = estimate(tau)?;
        let phi = unwrap_near(w, e + offset);
        offset = phi - e;
        if (phi - target).abs() < opts.tolerance {
            return Ok(finish(tau, phi, r, evaluations.get(), false));
        }
        if phi < target {
            if tau >= tmax {
                return Err(Error::Range(format!(
                    "target {target:.4} rad unreachable at amplitude {amplitude}: φ_c({tmax} ns) = {phi:.4} rad"
                )));
            }
            lo = (tau, phi);
            if side == -1 {
                side = -2;
            } else {
                side = -1;
            }
        } else {
            hi = Some((tau, phi));
            if side == 1 {
                side = 2;
            } else {
                side = 1;
            }
        }
        tau = match hi {
            None => guess(offset, lo.0, tmax)?.max(lo.0 + 1e-6).min(tmax),
            Some((th, ph)) => {
                // Illinois: halve the weight of an end point retained twice.
                let (mut fl, mut fh) = (lo.1 - target, ph - target);
                if side == -2 {
                    fh *= 0.5;
                }
                if side == 2 {
                    fl *= 0.5;
                }
                let t = lo.0 - fl * (th - lo.0) / (fh - fl);
                if t > lo.0 && t < th {
                    t
                } else {
                    0.5 * (lo.0 + th)
                }
            }
        };
    }
    Err(Error::Numerical(format!("calibration for target {target:.4} rad did not converge")))
}
