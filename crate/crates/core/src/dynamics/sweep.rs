use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::phase::{conditional_phase, unwrap_near};
use super::{propagator, Frame, Propagator, SolverOptions};
use crate::device::{build_hamiltonian, label_subset, DeviceParams, FockLabel, COMPUTATIONAL, TRACKED};
use crate::error::{Error, Result};
use crate::linalg::{linear_fit, LinearFit};
use crate::pulse::{flat_top_gaussian, FluxPulse, DEFAULT_DT, DEFAULT_SIGMA};

/// Shape parameters shared by every pulse of a sweep. Pulses are specified
/// by their plateau coupler flux and total length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PulseTemplate {
    pub buffer: f64,
    pub sigma: f64,
    pub dt: f64,
}

impl Default for PulseTemplate {
    fn default() -> Self {
        Self { buffer: 12.0, sigma: DEFAULT_SIGMA, dt: DEFAULT_DT }
    }
}

impl PulseTemplate {
    pub fn min_length(&self) -> f64 {
        2.0 * self.buffer
    }

    /// Pulse reaching applied coupler flux `plateau` with total length `tau`.
    pub fn pulse(&self, params: &DeviceParams, plateau: f64, tau: f64) -> Result<FluxPulse> {
        if tau < self.min_length() - 1e-12 {
            return Err(Error::Parameter(format!(
                "pulse length {tau} ns is shorter than the two buffers ({} ns)",
                self.min_length()
            )));
        }
        let core = (tau - self.min_length()).max(0.0);
        flat_top_gaussian(plateau - params.idle_flux, core, self.buffer, self.sigma, self.dt)
    }
}

/// Adiabatic estimate of the accumulated phases, used to pick 2π branches.
pub(crate) struct Predictor {
    flux: Vec<f64>,
    /// (α_ZZ, ω1 - ω1_idle, ω2 - ω2_idle) in GHz.
    rates: Vec<[f64; 3]>,
    idle: f64,
}

impl Predictor {
    pub(crate) fn new(params: &DeviceParams, plateau: f64) -> Option<Self> {
        const POINTS: usize = 17;
        let idle = params.idle_flux;
        let wanted = [COMPUTATIONAL[0], COMPUTATIONAL[1], COMPUTATIONAL[2], COMPUTATIONAL[3]];
        let mut flux = Vec::with_capacity(POINTS);
        let mut raw = Vec::with_capacity(POINTS);
        for k in 0..POINTS {
            let f = idle + (plateau - idle) * k as f64 / (POINTS - 1) as f64;
            let m = build_hamiltonian(params, f).ok()?;
            let map = label_subset(&m, &wanted).ok()?;
            let e = |l: FockLabel| map.energy(&m, l).unwrap();
            let (w01, w10, w11) = (e(wanted[1]), e(wanted[2]), e(wanted[3]));
            flux.push(f);
            raw.push([w11 - w10 - w01, w10, w01]);
        }
        let base = raw[0];
        let rates = raw.iter().map(|r| [r[0], r[1] - base[1], r[2] - base[2]]).collect();
        Some(Self { flux, rates, idle })
    }

    fn rates_at(&self, f: f64) -> [f64; 3] {
        let (a, b) = (self.flux[0], *self.flux.last().unwrap());
        if a == b {
            return self.rates[0];
        }
        let x = ((f - a) / (b - a)).clamp(0.0, 1.0) * (self.flux.len() - 1) as f64;
        let k = (x.floor() as usize).min(self.flux.len() - 2);
        let w = x - k as f64;
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = self.rates[k][i] * (1.0 - w) + self.rates[k + 1][i] * w;
        }
        out
    }

    /// Estimated (φ_c, θ1, θ2) for `pulse`.
    pub(crate) fn phases(&self, pulse: &FluxPulse) -> [f64; 3] {
        let n = ((pulse.duration() / 0.05).ceil() as usize).max(1);
        let h = pulse.duration() / n as f64;
        let mut acc = [0.0; 3];
        for k in 0..n {
            let r = self.rates_at(self.idle + pulse.value_at((k as f64 + 0.5) * h));
            for i in 0..3 {
                acc[i] += r[i] * h;
            }
        }
        acc.map(|x| -std::f64::consts::TAU * x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseRow {
    pub tau: f64,
    /// Conditional phase unwrapped across the sweep.
    pub phi_c: f64,
    /// Dynamic phases unwrapped across the sweep.
    pub theta1: f64,
    pub theta2: f64,
    /// Mean leakage over the computational inputs.
    pub p_leak: f64,
    /// Leakage out of |11⟩.
    pub p_leak_11: f64,
    pub residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PhaseRow {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseSweep {
    pub amplitude: f64,
    pub frame: Frame,
    pub rows: Vec<PhaseRow>,
    /// Linear fit of φ_c(τ) over `τ ≥ fit_from`; absent with fewer than two
    /// usable points.
    pub fit: Option<LinearFit>,
    pub fit_from: f64,
}

/// Unwrapped conditional and dynamic phases versus total pulse length at
/// plateau flux `amplitude`.
pub fn phase_vs_length(
    params: &DeviceParams,
    amplitude: f64,
    taus: &[f64],
    template: &PulseTemplate,
    frame: Frame,
    opts: &SolverOptions,
) -> Result<PhaseSweep> {
    let prop = propagator(params, frame)?;
    phase_vs_length_with(prop.as_ref(), params, amplitude, taus, template, opts, 38.0)
}

pub(crate) fn phase_vs_length_with(
    prop: &dyn Propagator,
    params: &DeviceParams,
    amplitude: f64,
    taus: &[f64],
    template: &PulseTemplate,
    opts: &SolverOptions,
    fit_from: f64,
) -> Result<PhaseSweep> {
    let mut sorted: Vec<f64> = taus.to_vec();
    sorted.sort_by(f64::total_cmp);
    let predictor = Predictor::new(params, amplitude);
    let raw: Vec<(f64, Result<(super::PhaseReport, f64, f64, [f64; 3])>)> = sorted
        .par_iter()
        .map(|&tau| {
            let res = (|| {
                let pulse = template.pulse(params, amplitude, tau)?;
                let r = prop.evolve(&pulse, opts)?;
                let ph = conditional_phase(&r.u)?;
                let est = predictor.as_ref().map_or([0.0; 3], |p| p.phases(&pulse));
                Ok((ph, r.mean_leakage(), r.leakage[3].total, est))
            })();
            (tau, res)
        })
        .collect();

    let mut rows = Vec::with_capacity(raw.len());
    let mut prev: Option<([f64; 3], [f64; 3])> = None;
    for (tau, res) in raw {
        match res {
            Ok((ph, leak, leak11, est)) => {
                let wrapped = [ph.phi_c, ph.theta1, ph.theta2];
                let reference = match prev {
                    Some((pu, pe)) => [0, 1, 2].map(|i| pu[i] + est[i] - pe[i]),
                    None => est,
                };
                let unwrapped = [0, 1, 2].map(|i| unwrap_near(wrapped[i], reference[i]));
                prev = Some((unwrapped, est));
                rows.push(PhaseRow {
                    tau,
                    phi_c: unwrapped[0],
                    theta1: unwrapped[1],
                    theta2: unwrapped[2],
                    p_leak: leak,
                    p_leak_11: leak11,
                    residual: ph.residual,
                    error: None,
                });
            }
            Err(e) => rows.push(PhaseRow {
                tau,
                phi_c: f64::NAN,
                theta1: f64::NAN,
                theta2: f64::NAN,
                p_leak: f64::NAN,
                p_leak_11: f64::NAN,
                residual: f64::NAN,
                error: Some(e.to_string()),
            }),
        }
    }
    let (x, y): (Vec<f64>, Vec<f64>) =
        rows.iter().filter(|r| r.ok() && r.tau >= fit_from).map(|r| (r.tau, r.phi_c)).unzip();
    let fit = linear_fit(&x, &y);
    Ok(PhaseSweep { amplitude, frame: prop.frame(), rows, fit, fit_from })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearityFit {
    /// θ1 against φ_c.
    pub theta1: Option<LinearFit>,
    /// θ2 against φ_c.
    pub theta2: Option<LinearFit>,
}

/// Fit the dynamic phases linearly against the conditional phase.
pub fn dynamic_phase_linearity(rows: &[PhaseRow]) -> LinearityFit {
    let ok: Vec<&PhaseRow> = rows.iter().filter(|r| r.ok()).collect();
    let phi: Vec<f64> = ok.iter().map(|r| r.phi_c).collect();
    let t1: Vec<f64> = ok.iter().map(|r| r.theta1).collect();
    let t2: Vec<f64> = ok.iter().map(|r| r.theta2).collect();
    LinearityFit { theta1: linear_fit(&phi, &t1), theta2: linear_fit(&phi, &t2) }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeakagePoint {
    pub amplitude: f64,
    /// Mean over pulse lengths of the mean leakage over computational inputs.
    pub mean: f64,
    /// Sample standard deviation over pulse lengths.
    pub std: f64,
    /// Mean population per tracked leakage state, averaged over inputs and
    /// lengths.
    pub per_state: Vec<(FockLabel, f64)>,
    pub evaluated: usize,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeakageSweep {
    pub frame: Frame,
    pub taus: Vec<f64>,
    pub points: Vec<LeakagePoint>,
}

/// Leakage versus plateau amplitude, aggregated over the pulse lengths.
pub fn leakage_sweep(
    params: &DeviceParams,
    amplitudes: &[f64],
    taus: &[f64],
    template: &PulseTemplate,
    frame: Frame,
    opts: &SolverOptions,
) -> Result<LeakageSweep> {
    let prop = propagator(params, frame)?;
    let grid: Vec<(usize, f64)> = (0..amplitudes.len()).flat_map(|a| taus.iter().map(move |&t| (a, t))).collect();
    let results: Vec<Result<super::PropagationResult>> = grid
        .par_iter()
        .map(|&(a, tau)| {
            let pulse = template.pulse(params, amplitudes[a], tau)?;
            prop.evolve(&pulse, opts)
        })
        .collect();
    let leak_labels: Vec<FockLabel> = TRACKED.iter().copied().filter(|l| !COMPUTATIONAL.contains(l)).collect();
    let mut points = Vec::with_capacity(amplitudes.len());
    for (a, &amp) in amplitudes.iter().enumerate() {
        let mut values = Vec::new();
        let mut per_state = vec![0.0; leak_labels.len()];
        let mut failures = Vec::new();
        for ((ga, tau), res) in grid.iter().zip(&results) {
            if *ga != a {
                continue;
            }
            match res {
                Ok(r) => {
                    values.push(r.mean_leakage());
                    for rec in &r.leakage {
                        for (k, (_, p)) in rec.tracked.iter().enumerate() {
                            per_state[k] += p / r.leakage.len() as f64;
                        }
                    }
                }
                Err(e) => failures.push(format!("tau {tau} ns: {e}")),
            }
        }
        let n = values.len();
        let mean = if n > 0 { values.iter().sum::<f64>() / n as f64 } else { f64::NAN };
        let std =
            if n > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        let per_state =
            leak_labels.iter().zip(per_state).map(|(&l, s)| (l, if n > 0 { s / n as f64 } else { f64::NAN })).collect();
        points.push(LeakagePoint { amplitude: amp, mean, std, per_state, evaluated: n, failures });
    }
    Ok(LeakageSweep { frame, taus: taus.to_vec(), points })
}

pub fn write_phase_csv<W: Write>(sweep: &PhaseSweep, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tau_ns", "phi_c_rad", "theta1_rad", "theta2_rad", "p_leak", "p_leak_11", "residual", "ok"])?;
    for r in &sweep.rows {
        w.write_record([
            format!("{:.6}", r.tau),
            format!("{:.9}", r.phi_c),
            format!("{:.9}", r.theta1),
            format!("{:.9}", r.theta2),
            format!("{:.9e}", r.p_leak),
            format!("{:.9e}", r.p_leak_11),
            format!("{:.9e}", r.residual),
            r.ok().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_leakage_csv<W: Write>(sweep: &LeakageSweep, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["amplitude_phi0".to_string(), "mean_p_leak".into(), "std_p_leak".into(), "n_ok".into()];
    if let Some(p) = sweep.points.first() {
        for (l, _) in &p.per_state {
            header.push(format!("p_{}{}{}", l.0[0], l.0[1], l.0[2]));
        }
    }
    w.write_record(&header)?;
    for p in &sweep.points {
        let mut rec = vec![
            format!("{:.6}", p.amplitude),
            format!("{:.9e}", p.mean),
            format!("{:.9e}", p.std),
            p.evaluated.to_string(),
        ];
        rec.extend(p.per_state.iter().map(|(_, v)| format!("{v:.9e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
