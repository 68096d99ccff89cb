use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpTerm {
    pub amplitude: f64,
    /// Time constant in ns.
    pub tau: f64,
}

/// Flux-line response modeled as a DC gain times one plus decaying
/// exponentials: `s(t) = g (1 + Σ a_k e^{-t/τ_k})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferModel {
    #[serde(default)]
    pub terms: Vec<ExpTerm>,
    #[serde(default = "unit_gain")]
    pub gain: f64,
}

fn unit_gain() -> f64 {
    1.0
}

impl Default for TransferModel {
    fn default() -> Self {
        Self { terms: Vec::new(), gain: 1.0 }
    }
}

impl TransferModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain.is_finite() && self.gain != 0.0) {
            return Err(Error::Parameter(format!("transfer gain must be finite and non-zero, got {}", self.gain)));
        }
        for t in &self.terms {
            if !(t.tau > 0.0 && t.tau.is_finite() && t.amplitude.is_finite()) {
                return Err(Error::Parameter(format!("invalid settling term {t:?}")));
            }
        }
        Ok(())
    }

    /// Eight undershooting terms with time constants log-spaced from 10 ns
    /// to 10 µs, representative of a coaxial flux line.
    pub fn eight_term_example() -> Self {
        let amps = [-0.03, -0.02, -0.015, -0.01, -0.01, -0.008, -0.005, -0.004];
        let terms = amps
            .iter()
            .enumerate()
            .map(|(k, &a)| ExpTerm { amplitude: a, tau: 10.0 * 1000f64.powf(k as f64 / 7.0) })
            .collect();
        Self { terms, gain: 1.0 }
    }

    pub fn step_at(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        self.gain * (1.0 + self.terms.iter().map(|e| e.amplitude * (-t / e.tau).exp()).sum::<f64>())
    }
}

/// Sampled step response `s(k dt)` for `k dt ≤ duration`.
pub fn step_response(model: &TransferModel, duration: f64, dt: f64) -> Vec<f64> {
    let count = (duration / dt + 1e-9).floor() as usize + 1;
    (0..count).map(|k| model.step_at(k as f64 * dt)).collect()
}

/// Pass a zero-order-held waveform through the line. The output at each
/// sample instant is the superposition of step responses to the input
/// increments, computed recursively per exponential term.
pub fn distort(model: &TransferModel, x: &[f64], dt: f64) -> Vec<f64> {
    let poles: Vec<f64> = model.terms.iter().map(|e| (-dt / e.tau).exp()).collect();
    let mut v = vec![0.0; poles.len()];
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(x.len());
    for &xn in x {
        let dx = xn - prev;
        let mut acc = xn;
        for (k, e) in model.terms.iter().enumerate() {
            v[k] = dx + poles[k] * v[k];
            acc += e.amplitude * v[k];
        }
        out.push(model.gain * acc);
        prev = xn;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_without_terms() {
        let s = step_response(&TransferModel::default(), 10.0, 0.5);
        assert_eq!(s.len(), 21);
        assert!(s.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn single_term_closed_form() {
        let m = TransferModel { terms: vec![ExpTerm { amplitude: -0.1, tau: 100.0 }], gain: 1.0 };
        let s = step_response(&m, 5000.0, 1.0);
        assert!((s[0] - 0.9).abs() < 1e-15);
        assert!((s.last().unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn eight_term_settles_monotonically() {
        let m = TransferModel::eight_term_example();
        assert_eq!(m.terms.len(), 8);
        assert!((m.terms[0].tau - 10.0).abs() < 1e-12 && (m.terms[7].tau - 10_000.0).abs() < 1e-9);
        let s = step_response(&m, 60_000.0, 1.0);
        assert!(s.windows(2).all(|w| w[1] >= w[0]));
        assert!((s.last().unwrap() - 1.0).abs() < 1e-2);
    }

    #[test]
    fn distortion_of_step_matches_sampled_response() {
        let m = TransferModel::eight_term_example();
        let dt = 0.5;
        let y = distort(&m, &vec![1.0; 400], dt);
        let s = step_response(&m, 399.0 * dt, dt);
        for (a, b) in y.iter().zip(&s) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}
