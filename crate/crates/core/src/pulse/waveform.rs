use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaussian filter width used for the CZ pulses, in ns.
pub const DEFAULT_SIGMA: f64 = 2.23;
/// Sample period of a 2.4 GSa/s waveform generator, in ns.
pub const DEFAULT_DT: f64 = 1.0 / 2.4;

/// How the flux between samples is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseShape {
    /// Evaluate the closed-form expression at any time.
    Analytic,
    /// Samples were altered (filtered); interpolate linearly between them.
    Sampled,
}

/// Flat-top Gaussian flux pulse. Samples are the excursion from the idle
/// bias in flux quanta, taken at `t_k = k dt` for `t_k ≤ τ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxPulse {
    pub amplitude: f64,
    pub core: f64,
    pub buffer: f64,
    pub sigma: f64,
    pub dt: f64,
    pub shape: PulseShape,
    pub samples: Vec<f64>,
}

fn erf_edge(amplitude: f64, core: f64, buffer: f64, sigma: f64, t: f64) -> f64 {
    let s = std::f64::consts::SQRT_2 * sigma;
    0.5 * amplitude * (libm::erf((t - buffer) / s) - libm::erf((t - core - buffer) / s))
}

/// Sample `Φ/2 [erf((t-τ_b)/√2σ) - erf((t-τ_c-τ_b)/√2σ)]` on `[0, τ_c + 2τ_b]`.
pub fn flat_top_gaussian(amplitude: f64, core: f64, buffer: f64, sigma: f64, dt: f64) -> Result<FluxPulse> {
    if !(core >= 0.0 && buffer >= 0.0 && core.is_finite() && buffer.is_finite()) {
        return Err(Error::Parameter(format!("pulse lengths must be non-negative, got core {core} buffer {buffer}")));
    }
    if !(sigma > 0.0 && dt > 0.0 && sigma.is_finite() && dt.is_finite()) {
        return Err(Error::Parameter(format!("sigma and dt must be positive, got {sigma}, {dt}")));
    }
    if !amplitude.is_finite() {
        return Err(Error::Parameter("amplitude must be finite".into()));
    }
    let total = core + 2.0 * buffer;
    let count = (total / dt + 1e-9).floor() as usize + 1;
    if count < 2 {
        return Err(Error::DegeneratePulse { samples: count });
    }
    let samples = (0..count).map(|k| erf_edge(amplitude, core, buffer, sigma, k as f64 * dt)).collect();
    Ok(FluxPulse { amplitude, core, buffer, sigma, dt, shape: PulseShape::Analytic, samples })
}

impl FluxPulse {
    pub fn duration(&self) -> f64 {
        self.core + 2.0 * self.buffer
    }

    /// Flux excursion at time `t` (zero outside the pulse window).
    pub fn value_at(&self, t: f64) -> f64 {
        if t < 0.0 || t > self.duration() {
            return 0.0;
        }
        match self.shape {
            PulseShape::Analytic => erf_edge(self.amplitude, self.core, self.buffer, self.sigma, t),
            PulseShape::Sampled => {
                let x = t / self.dt;
                let k = x.floor() as usize;
                let last = self.samples.len() - 1;
                if k >= last {
                    return self.samples[last];
                }
                let w = x - k as f64;
                self.samples[k] * (1.0 - w) + self.samples[k + 1] * w
            }
        }
    }

    /// Replace the samples, switching to interpolated evaluation.
    pub fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self { samples, shape: PulseShape::Sampled, ..self.clone() }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(move |k| k as f64 * self.dt)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_ns", "flux_phi0"])?;
        for (t, v) in self.times().zip(&self.samples) {
            w.write_record([format!("{t:.6}"), format!("{v:.12e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}
