use serde::{Deserialize, Serialize};

use super::{FluxPulse, TransferModel};
use crate::error::{Error, Result};

/// `y[n] = b0 x[n] + b1 x[n-1] - a1 y[n-1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IirSection {
    pub b0: f64,
    pub b1: f64,
    pub a1: f64,
}

impl IirSection {
    pub fn run(&self, x: &[f64]) -> Vec<f64> {
        let (mut xp, mut yp) = (0.0, 0.0);
        x.iter()
            .map(|&xn| {
                let y = self.b0 * xn + self.b1 * xp - self.a1 * yp;
                xp = xn;
                yp = y;
                y
            })
            .collect()
    }

    pub fn is_stable(&self) -> bool {
        self.a1.abs() < 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterChain {
    pub dt: f64,
    pub sections: Vec<IirSection>,
}

impl FilterChain {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            y = s.run(&y);
        }
        y
    }
}

/// Design the predistortion cascade that inverts `model` exactly at the
/// sample instants for zero-order-held input.
///
/// In `u = 1 - z` the line is `g F(u)` with `F(u) = 1 - Σ a_k u/(s_k - u)` and
/// `s_k = 1 - e^{-dt/τ_k}`. Each section cancels one pole `s_k` and places a
/// new pole on one zero of `F`; the zeros are bracketed between consecutive
/// poles and refined by bisection on the numerator polynomial.
pub fn design_iir(model: &TransferModel, dt: f64) -> Result<FilterChain> {
    model.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Parameter(format!("sample period must be positive, got {dt}")));
    }
    for t in &model.terms {
        if t.amplitude.abs() >= 1.0 {
            return Err(Error::NonInvertibleModel(format!(
                "settling amplitude {} is not perturbative (|a| >= 1)",
                t.amplitude
            )));
        }
    }
    let mut terms: Vec<(f64, f64)> =
        model.terms.iter().filter(|t| t.amplitude != 0.0).map(|t| (-(-dt / t.tau).exp_m1(), t.amplitude)).collect();
    terms.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Equal time constants share a pole.
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (s, a) in terms {
        match merged.last_mut() {
            Some(last) if last.0 == s => last.1 += a,
            _ => merged.push((s, a)),
        }
    }
    merged.retain(|t| t.1 != 0.0);
    if merged.is_empty() {
        let mut sections = Vec::new();
        if model.gain != 1.0 {
            sections.push(IirSection { b0: 1.0 / model.gain, b1: 0.0, a1: 0.0 });
        }
        return Ok(FilterChain { dt, sections });
    }

    let numerator = |u: f64| -> f64 {
        let mut prod = 1.0;
        for &(s, _) in &merged {
            prod *= s - u;
        }
        let mut sum = 0.0;
        for (k, &(_, a)) in merged.iter().enumerate() {
            let mut p = a * u;
            for (j, &(s, _)) in merged.iter().enumerate() {
                if j != k {
                    p *= s - u;
                }
            }
            sum += p;
        }
        prod - sum
    };
    let mut edges = vec![0.0];
    edges.extend(merged.iter().map(|t| t.0));
    edges.push(2.0);
    let mut roots = Vec::with_capacity(merged.len());
    for w in edges.windows(2) {
        let (mut lo, mut hi) = (w[0], w[1]);
        let (flo, fhi) = (numerator(lo), numerator(hi));
        if flo == 0.0 || fhi == 0.0 || flo.signum() == fhi.signum() {
            continue;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if numerator(mid).signum() == flo.signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        roots.push(0.5 * (lo + hi));
    }
    if roots.len() != merged.len() {
        return Err(Error::NonInvertibleModel(format!(
            "found {} of {} stable inverse poles",
            roots.len(),
            merged.len()
        )));
    }
    let mut sections = Vec::with_capacity(merged.len());
    for (k, (&(s, _), &u)) in merged.iter().zip(&roots).enumerate() {
        let p = 1.0 - s;
        let q = 1.0 - u;
        let mut scale = u / s;
        if k == 0 {
            scale /= model.gain;
        }
        let sec = IirSection { b0: scale, b1: -p * scale, a1: -q };
        if !sec.is_stable() {
            return Err(Error::NonInvertibleModel(format!("section pole {q} is not inside the unit circle")));
        }
        sections.push(sec);
    }
    Ok(FilterChain { dt, sections })
}

/// Run the cascade over the pulse samples.
pub fn apply_chain(pulse: &FluxPulse, chain: &FilterChain) -> Result<FluxPulse> {
    if (pulse.dt - chain.dt).abs() > 1e-12 * pulse.dt.max(chain.dt) {
        return Err(Error::Interface(format!(
            "pulse sampled at {} ns but filters designed for {} ns",
            pulse.dt, chain.dt
        )));
    }
    if chain.sections.is_empty() {
        return Ok(pulse.clone());
    }
    Ok(pulse.with_samples(chain.apply(&pulse.samples)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulse::{distort, flat_top_gaussian, ExpTerm, DEFAULT_DT};

    fn round_trip_error(model: &TransferModel, dt: f64, n: usize) -> f64 {
        let chain = design_iir(model, dt).unwrap();
        let y = distort(model, &chain.apply(&vec![1.0; n]), dt);
        y[5..].iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn empty_model_gives_identity() {
        let c = design_iir(&TransferModel::default(), DEFAULT_DT).unwrap();
        assert!(c.sections.is_empty());
        let p = flat_top_gaussian(0.1, 14.0, 12.0, 2.23, DEFAULT_DT).unwrap();
        assert_eq!(apply_chain(&p, &c).unwrap().samples, p.samples);
    }

    #[test]
    fn single_term_inverse() {
        let m = TransferModel { terms: vec![ExpTerm { amplitude: -0.05, tau: 200.0 }], gain: 1.0 };
        assert!(round_trip_error(&m, DEFAULT_DT, 5000) < 1e-3);
        assert!(round_trip_error(&m, DEFAULT_DT, 5000) < 1e-12);
        let c = design_iir(&m, DEFAULT_DT).unwrap();
        assert!(c.sections.iter().all(IirSection::is_stable));
    }

    #[test]
    fn eight_terms_and_gain() {
        let mut m = TransferModel::eight_term_example();
        assert!(round_trip_error(&m, DEFAULT_DT, 60_000) < 1e-9);
        m.gain = 0.8;
        assert!(round_trip_error(&m, DEFAULT_DT, 2000) < 1e-9);
        let c = design_iir(&m, DEFAULT_DT).unwrap();
        assert_eq!(c.sections.len(), 8);
    }

    #[test]
    fn overshooting_terms() {
        let m = TransferModel {
            terms: vec![ExpTerm { amplitude: 0.1, tau: 30.0 }, ExpTerm { amplitude: 0.05, tau: 300.0 }],
            gain: 1.0,
        };
        assert!(round_trip_error(&m, 1.0, 4000) < 1e-9);
    }

    #[test]
    fn non_perturbative_rejected() {
        let m = TransferModel { terms: vec![ExpTerm { amplitude: -1.0, tau: 20.0 }], gain: 1.0 };
        assert!(matches!(design_iir(&m, 1.0), Err(Error::NonInvertibleModel(_))));
    }

    #[test]
    fn dt_mismatch() {
        let m = TransferModel::eight_term_example();
        let c = design_iir(&m, 0.5).unwrap();
        let p = flat_top_gaussian(0.1, 14.0, 12.0, 2.23, DEFAULT_DT).unwrap();
        assert!(matches!(apply_chain(&p, &c), Err(Error::Interface(_))));
    }
}
