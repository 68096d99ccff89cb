use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

struct LmOutput {
    params: Vec<f64>,
    covariance: DMatrix<f64>,
    residuals: Vec<f64>,
    chi2: f64,
}

/// Weighted Levenberg-Marquardt for small models. `model(x, p)` returns the
/// value and its gradient with respect to `p`. With `absolute` weights the
/// covariance is `(JᵀWJ)⁻¹`, otherwise it is rescaled by the reduced χ².
fn levenberg_marquardt<F>(x: &[f64], y: &[f64], w: &[f64], p0: &[f64], absolute: bool, model: F) -> Result<LmOutput>
where
    F: Fn(f64, &[f64]) -> (f64, Vec<f64>),
{
    let n = x.len();
    let np = p0.len();
    let eval = |p: &[f64]| -> (DVector<f64>, DMatrix<f64>, f64) {
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, np);
        for i in 0..n {
            let (f, g) = model(x[i], p);
            r[i] = y[i] - f;
            for k in 0..np {
                j[(i, k)] = g[k];
            }
        }
        let cost = (0..n).map(|i| w[i] * r[i] * r[i]).sum();
        (r, j, cost)
    };
    let mut p = p0.to_vec();
    let (mut r, mut j, mut cost) = eval(&p);
    let mut mu = 1e-3;
    let mut converged = false;
    for _ in 0..1000 {
        let wj = DMatrix::from_fn(n, np, |i, k| w[i] * j[(i, k)]);
        let a = j.transpose() * &wj;
        let g = wj.transpose() * &r;
        let mut damped = a.clone();
        for k in 0..np {
            damped[(k, k)] += mu * a[(k, k)].max(1e-300);
        }
        let Some(step) = damped.lu().solve(&g) else {
            mu *= 10.0;
            continue;
        };
        let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let (tr, tj, tcost) = eval(&trial);
        if tcost.is_finite() && tcost <= cost {
            let small = step.iter().zip(&p).all(|(s, v)| s.abs() <= 1e-12 * (v.abs() + 1e-12));
            let flat = cost - tcost <= 1e-15 * cost.max(1e-300);
            p = trial;
            r = tr;
            j = tj;
            cost = tcost;
            mu = (mu / 3.0).max(1e-15);
            if small || flat || cost < 1e-30 {
                converged = true;
                break;
            }
        } else {
            mu *= 2.0;
            if mu > 1e16 {
                converged = true;
                break;
            }
        }
    }
    if !converged || p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit(format!("no convergence; last parameters {p:?}, weighted cost {cost:.3e}")));
    }
    let wj = DMatrix::from_fn(n, np, |i, k| w[i] * j[(i, k)]);
    let a = j.transpose() * wj;
    let mut covariance =
        a.try_inverse().ok_or_else(|| Error::Fit(format!("singular normal matrix at parameters {p:?}")))?;
    if !absolute && n > np {
        covariance *= cost / (n - np) as f64;
    }
    Ok(LmOutput { params: p, covariance, residuals: r.iter().copied().collect(), chi2: cost })
}

fn weights(errors: &[f64], n: usize) -> (Vec<f64>, bool) {
    let positive: Vec<f64> = errors.iter().copied().filter(|e| *e > 0.0 && e.is_finite()).collect();
    if errors.len() != n || positive.is_empty() {
        return (vec![1.0; n], false);
    }
    let floor = positive.iter().copied().fold(f64::INFINITY, f64::min);
    (errors.iter().map(|&e| 1.0 / if e > 0.0 && e.is_finite() { e } else { floor }.powi(2)).collect(), true)
}

fn check_inputs(lengths: &[f64], values: &[f64]) -> Result<()> {
    if lengths.len() != values.len() {
        return Err(Error::Fit(format!("{} lengths but {} values", lengths.len(), values.len())));
    }
    let mut distinct = lengths.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 distinct lengths, got {}", distinct.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite data".into()));
    }
    Ok(())
}

fn pow_grad(base: f64, n: f64) -> f64 {
    if n == 0.0 {
        0.0
    } else {
        n * base.powf(n - 1.0)
    }
}

/// Fit of `A·r^N + B`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub a: f64,
    pub b: f64,
    pub r: f64,
    pub sigma_a: f64,
    pub sigma_b: f64,
    pub sigma_r: f64,
    pub residuals: Vec<f64>,
    pub chi2: f64,
    pub b_fixed: bool,
}

/// Weighted least squares of `A·r^N + B`. Starting point: `A = max - min`,
/// `B = min`, `r` from the log-slope between the two shortest lengths.
pub fn fit_decay(lengths: &[f64], means: &[f64], errors: &[f64]) -> Result<DecayFit> {
    check_inputs(lengths, means)?;
    let (lo, hi) = means.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo <= 1e-12 * hi.abs().max(1.0) {
        return Err(Error::Fit("constant data: decay rate is unidentifiable".into()));
    }
    let (w, absolute) = weights(errors, means.len());
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by(|&i, &j| lengths[i].total_cmp(&lengths[j]));
    let (i1, i2) = (order[0], order.iter().copied().find(|&i| lengths[i] > lengths[order[0]]).unwrap());
    let (b0, a0) = (lo, hi - lo);
    let ratio = (means[i2] - b0) / (means[i1] - b0);
    let r0 = if ratio > 0.0 && ratio.is_finite() {
        ratio.powf(1.0 / (lengths[i2] - lengths[i1])).clamp(1e-3, 1.0)
    } else {
        0.9
    };
    let model = |n: f64, p: &[f64]| (p[0] * p[2].powf(n) + p[1], vec![p[2].powf(n), 1.0, p[0] * pow_grad(p[2], n)]);
    let out = levenberg_marquardt(lengths, means, &w, &[a0, b0, r0], absolute, model)?;
    let s = |k: usize| out.covariance[(k, k)].max(0.0).sqrt();
    Ok(DecayFit {
        a: out.params[0],
        b: out.params[1],
        r: out.params[2],
        sigma_a: s(0),
        sigma_b: s(1),
        sigma_r: s(2),
        residuals: out.residuals,
        chi2: out.chi2,
        b_fixed: false,
    })
}

/// Fit of `A·r^N + b` with the floor held at `b`.
pub fn fit_decay_fixed_b(lengths: &[f64], means: &[f64], errors: &[f64], b: f64) -> Result<DecayFit> {
    check_inputs(lengths, means)?;
    let (w, absolute) = weights(errors, means.len());
    let i0 = (0..lengths.len()).min_by(|&i, &j| lengths[i].total_cmp(&lengths[j])).unwrap();
    let a0 = if (means[i0] - b).abs() > 1e-12 { means[i0] - b } else { 1.0 };
    let model = |n: f64, p: &[f64]| (p[0] * p[1].powf(n) + b, vec![p[1].powf(n), p[0] * pow_grad(p[1], n)]);
    let out = levenberg_marquardt(lengths, means, &w, &[a0, 0.99], absolute, model)?;
    let s = |k: usize| out.covariance[(k, k)].max(0.0).sqrt();
    Ok(DecayFit {
        a: out.params[0],
        b,
        r: out.params[1],
        sigma_a: s(0),
        sigma_b: 0.0,
        sigma_r: s(1),
        residuals: out.residuals,
        chi2: out.chi2,
        b_fixed: true,
    })
}

/// Fit of the accumulated leakage `p_∞·(1 - λ^N)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeakageFit {
    pub p_inf: f64,
    pub lambda: f64,
    /// Leakage per sequence step, `p_∞·(1 - λ)`.
    pub per_step: f64,
    pub sigma_p_inf: f64,
    pub sigma_lambda: f64,
    pub sigma_per_step: f64,
    pub residuals: Vec<f64>,
    /// All data were zero; the rates are reported as zero.
    pub degenerate: bool,
}

pub fn fit_leakage(lengths: &[f64], means: &[f64], errors: Option<&[f64]>) -> Result<LeakageFit> {
    check_inputs(lengths, means)?;
    if means.iter().all(|v| v.abs() <= 1e-15) {
        return Ok(LeakageFit {
            p_inf: 0.0,
            lambda: 1.0,
            per_step: 0.0,
            sigma_p_inf: 0.0,
            sigma_lambda: 0.0,
            sigma_per_step: 0.0,
            residuals: vec![0.0; means.len()],
            degenerate: true,
        });
    }
    let (w, absolute) = weights(errors.unwrap_or(&[]), means.len());
    // Seed λ on a logarithmic grid of 1 - λ with the linear amplitude solved
    // exactly at each node.
    let mut best = (f64::INFINITY, 0.0, 0.5);
    for k in 0..=240 {
        let lam = 1.0 - 10f64.powf(-7.0 + 7.0 * k as f64 / 240.0);
        let f: Vec<f64> = lengths.iter().map(|&n| 1.0 - lam.powf(n)).collect();
        let den: f64 = (0..f.len()).map(|i| w[i] * f[i] * f[i]).sum();
        if den <= 0.0 {
            continue;
        }
        let p = (0..f.len()).map(|i| w[i] * f[i] * means[i]).sum::<f64>() / den;
        let cost: f64 = (0..f.len()).map(|i| w[i] * (means[i] - p * f[i]).powi(2)).sum();
        if cost < best.0 {
            best = (cost, p, lam);
        }
    }
    let model = |n: f64, p: &[f64]| (p[0] * (1.0 - p[1].powf(n)), vec![1.0 - p[1].powf(n), -p[0] * pow_grad(p[1], n)]);
    let out = levenberg_marquardt(lengths, means, &w, &[best.1, best.2], absolute, model)?;
    let (p_inf, lambda) = (out.params[0], out.params[1]);
    let c = &out.covariance;
    let g = [1.0 - lambda, -p_inf];
    let var = g[0] * g[0] * c[(0, 0)] + 2.0 * g[0] * g[1] * c[(0, 1)] + g[1] * g[1] * c[(1, 1)];
    Ok(LeakageFit {
        p_inf,
        lambda,
        per_step: p_inf * (1.0 - lambda),
        sigma_p_inf: c[(0, 0)].max(0.0).sqrt(),
        sigma_lambda: c[(1, 1)].max(0.0).sqrt(),
        sigma_per_step: var.max(0.0).sqrt(),
        residuals: out.residuals,
        degenerate: false,
    })
}

/// Leakage attributed to the interleaved gate: the difference of the
/// per-step rates, with its standard error.
pub fn per_gate_leakage(rb: &LeakageFit, irb: &LeakageFit) -> (f64, f64) {
    (irb.per_step - rb.per_step, rb.sigma_per_step.hypot(irb.sigma_per_step))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IrbFidelity {
    pub fidelity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Gate fidelity `1 - (d-1)/d·(1 - r_irb/r_rb)` with `d = 4`.
pub fn irb_fidelity(r_rb: f64, r_irb: f64) -> Result<IrbFidelity> {
    for (name, r) in [("r_rb", r_rb), ("r_irb", r_irb)] {
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::Parameter(format!("{name} must lie in (0, 1], got {r}")));
        }
    }
    let warning =
        (r_irb > r_rb).then(|| format!("r_irb = {r_irb} exceeds r_rb = {r_rb}: the inferred gate error is negative"));
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Ok(IrbFidelity { fidelity: 1.0 - 0.75 * (1.0 - r_irb / r_rb), warning })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const LENGTHS: [f64; 9] = [1.0, 2.0, 4.0, 8.0, 12.0, 16.0, 24.0, 32.0, 48.0];

    #[test]
    fn exact_decay_is_recovered() {
        let y: Vec<f64> = LENGTHS.iter().map(|&n| 0.9 * 0.94f64.powf(n) + 0.05).collect();
        let f = fit_decay(&LENGTHS, &y, &[]).unwrap();
        assert!((f.a - 0.9).abs() < 1e-6 && (f.b - 0.05).abs() < 1e-6 && (f.r - 0.94).abs() < 1e-6, "{f:?}");
        assert!(f.residuals.iter().all(|r| r.abs() < 1e-9));
    }

    #[test]
    fn constant_data_is_rejected() {
        assert!(matches!(fit_decay(&LENGTHS, &[0.7; 9], &[]), Err(Error::Fit(_))));
        assert!(matches!(fit_decay(&[1.0, 2.0, 2.0], &[0.9, 0.8, 0.8], &[]), Err(Error::Fit(_))));
    }

    #[test]
    fn noisy_decay_is_covered_by_three_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let mut covered = 0;
        for _ in 0..100 {
            let y: Vec<f64> = LENGTHS.iter().map(|&n| 0.9 * 0.94f64.powf(n) + 0.05 + noise.sample(&mut rng)).collect();
            let f = fit_decay(&LENGTHS, &y, &[0.01; 9]).unwrap();
            if (f.r - 0.94).abs() <= 3.0 * f.sigma_r {
                covered += 1;
            }
        }
        assert!(covered >= 95, "{covered}");
    }

    #[test]
    fn leakage_model_is_recovered() {
        let lengths = [1.0, 5.0, 10.0, 20.0, 40.0, 80.0, 160.0];
        let (p_inf, lam) = (0.5, 0.98f64);
        let y: Vec<f64> = lengths.iter().map(|&n| p_inf * (1.0 - lam.powf(n))).collect();
        let f = fit_leakage(&lengths, &y, None).unwrap();
        assert!((f.p_inf - 0.5).abs() < 0.025 && (f.lambda - 0.98).abs() < 1e-6, "{f:?}");

        let rb: Vec<f64> = lengths.iter().map(|&n| 0.2 * (1.0 - 0.995f64.powf(n))).collect();
        let irb: Vec<f64> = lengths
            .iter()
            .map(|&n| {
                let l1 = 0.001 + 0.0014;
                let lam: f64 = 1.0 - l1 / 0.2;
                0.2 * (1.0 - lam.powf(n))
            })
            .collect();
        let (a, b) = (fit_leakage(&lengths, &rb, None).unwrap(), fit_leakage(&lengths, &irb, None).unwrap());
        let (per_gate, _) = per_gate_leakage(&a, &b);
        assert!((per_gate - 0.0014).abs() < 0.2 * 0.0014, "{per_gate}");
    }

    #[test]
    fn zero_leakage_is_degenerate() {
        let f = fit_leakage(&LENGTHS, &[0.0; 9], None).unwrap();
        assert!(f.degenerate && f.per_step == 0.0);
    }

    #[test]
    fn irb_formula() {
        assert!((irb_fidelity(0.94, 0.91).unwrap().fidelity - 0.976_063_829_787_234).abs() < 1e-12);
        assert_eq!(irb_fidelity(0.9, 0.9).unwrap().fidelity, 1.0);
        assert_eq!(irb_fidelity(1.0, 0.25).unwrap().fidelity, 0.4375);
        assert!(irb_fidelity(0.9, 0.95).unwrap().warning.is_some());
        assert!(irb_fidelity(0.0, 0.5).is_err());
    }
}
