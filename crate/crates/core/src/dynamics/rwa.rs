use nalgebra::{DMatrix, DVector};

use super::{Frame, Propagator, RawRun};
use crate::device::{assign_labels, charge_y, mode_data, squid_ej, DeviceParams, FockLabel, ModeData, TRACKED};
use crate::error::Result;
use crate::linalg::{expm_from_eigen, sym_eigen, unitarity_defect, C64};
use crate::pulse::FluxPulse;

pub(crate) const DEFAULT_STEP: f64 = 0.02;

/// Levels kept per mode.
const LEVELS: usize = 3;
const DIM: usize = LEVELS * LEVELS * LEVELS;

/// Gauss nodes and weights of the fourth-order commutator-free exponential
/// integrator.
const C1: f64 = 0.5 - 0.288_675_134_594_812_9;
const C2: f64 = 0.5 + 0.288_675_134_594_812_9;
const A_LO: f64 = 0.25 - 0.288_675_134_594_812_9;
const A_HI: f64 = 0.25 + 0.288_675_134_594_812_9;

/// Rotating-wave propagator on three levels per mode.
///
/// Each mode is diagonalized on its own in the full truncation (the coupler
/// at the instantaneous flux); the lowest three eigenstates are kept and
/// only the excitation-conserving parts of the charge couplings survive.
pub struct RwaModel {
    params: DeviceParams,
    idle_modes: [ModeData; 3],
    g: [[f64; 3]; 3],
    ej_idle: f64,
    v_coupler: DMatrix<f64>,
    y: DMatrix<f64>,
    qubits: [(Vec<f64>, DMatrix<f64>); 2],
    ground_energy: f64,
    energies: [f64; TRACKED.len()],
    dressed: Vec<DVector<f64>>,
}

fn row(l: FockLabel) -> Option<usize> {
    l.0.iter()
        .all(|&k| (k as usize) < LEVELS)
        .then(|| (l.0[0] as usize * LEVELS + l.0[1] as usize) * LEVELS + l.0[2] as usize)
}

impl RwaModel {
    pub fn new(params: &DeviceParams) -> Result<Self> {
        let (modes, g) = mode_data(params, params.idle_flux)?;
        let y = charge_y(params.truncation);
        let local = |m: &DMatrix<f64>| -> (Vec<f64>, DMatrix<f64>) {
            let (vals, vecs) = sym_eigen(m.clone());
            let raise = (vecs.transpose() * &y * &vecs).view((0, 0), (LEVELS, LEVELS)).lower_triangle();
            (vals.iter().take(LEVELS).copied().collect(), raise)
        };
        let qubits = [local(&modes[0].h_local), local(&modes[1].h_local)];
        let mut model = Self {
            params: params.clone(),
            ej_idle: modes[2].ej,
            v_coupler: modes[2].cosine_shift_operator(),
            idle_modes: modes,
            g,
            y,
            qubits,
            ground_energy: 0.0,
            energies: [0.0; TRACKED.len()],
            dressed: Vec::new(),
        };
        let (vals, vecs) = sym_eigen(model.hamiltonian(0.0));
        let entries = assign_labels(&vecs, &TRACKED, row)?;
        model.ground_energy = vals[0];
        for (k, e) in entries.iter().enumerate() {
            model.energies[k] = vals[e.index] - vals[0];
            model.dressed.push(vecs.column(e.index).into_owned());
        }
        Ok(model)
    }

    /// RWA Hamiltonian for a coupler Josephson energy shifted by `delta`.
    pub fn hamiltonian(&self, delta: f64) -> DMatrix<f64> {
        let hc = &self.idle_modes[2].h_local + &self.v_coupler * delta;
        let (vals, vecs) = sym_eigen(hc);
        let raise_c = (vecs.transpose() * &self.y * &vecs).view((0, 0), (LEVELS, LEVELS)).lower_triangle();
        let e: [&[f64]; 3] = [&self.qubits[0].0, &self.qubits[1].0, &vals.as_slice()[..LEVELS]];
        let r: [&DMatrix<f64>; 3] = [&self.qubits[0].1, &self.qubits[1].1, &raise_c];
        let idx = |o: [usize; 3]| (o[0] * LEVELS + o[1]) * LEVELS + o[2];
        let mut h = DMatrix::zeros(DIM, DIM);
        for a in 0..LEVELS {
            for b in 0..LEVELS {
                for c in 0..LEVELS {
                    let occ = [a, b, c];
                    let i = idx(occ);
                    h[(i, i)] = e[0][a] + e[1][b] + e[2][c];
                    // g (R_p R_qᵀ + R_pᵀ R_q): raise p, lower q and vice versa.
                    for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
                        let gpq = self.g[p][q];
                        if occ[p] + 1 < LEVELS && occ[q] >= 1 {
                            let mut to = occ;
                            to[p] += 1;
                            to[q] -= 1;
                            let v = gpq * r[p][(to[p], occ[p])] * r[q][(occ[q], to[q])];
                            h[(idx(to), i)] += v;
                            h[(i, idx(to))] += v;
                        }
                    }
                }
            }
        }
        h
    }

    fn delta_at(&self, pulse: &FluxPulse, t: f64) -> f64 {
        let p = &self.params;
        squid_ej(p.e_jc, p.r, p.coupler_loop_flux(p.idle_flux + pulse.value_at(t))) - self.ej_idle
    }
}

impl Propagator for RwaModel {
    fn frame(&self) -> Frame {
        Frame::Rwa
    }

    fn truncation(&self) -> usize {
        LEVELS
    }

    fn energies(&self) -> (f64, [f64; TRACKED.len()]) {
        (self.ground_energy, self.energies)
    }

    fn run(&self, pulse: &FluxPulse, dt: f64) -> Result<RawRun> {
        let duration = pulse.duration();
        let steps = ((duration / dt).ceil() as usize).max(1);
        let h = duration / steps as f64;
        let mut u = DMatrix::<C64>::identity(DIM, DIM);
        for k in 0..steps {
            let t = k as f64 * h;
            let h1 = self.hamiltonian(self.delta_at(pulse, t + C1 * h));
            let h2 = self.hamiltonian(self.delta_at(pulse, t + C2 * h));
            let (v1, e1) = sym_eigen(&h1 * A_HI + &h2 * A_LO);
            let (v2, e2) = sym_eigen(&h1 * A_LO + &h2 * A_HI);
            u = expm_from_eigen(&v2, &e2, h) * (expm_from_eigen(&v1, &e1, h) * u);
        }
        let defect = unitarity_defect(&u);
        let comp: Vec<usize> =
            crate::device::COMPUTATIONAL.iter().map(|l| TRACKED.iter().position(|t| t == l).unwrap()).collect();
        let mut amplitudes = DMatrix::<C64>::zeros(TRACKED.len(), 4);
        for (r, vr) in self.dressed.iter().enumerate() {
            for (c, &k) in comp.iter().enumerate() {
                let vk = &self.dressed[k];
                let mut acc = C64::new(0.0, 0.0);
                for i in 0..DIM {
                    for j in 0..DIM {
                        acc += u[(i, j)] * (vr[i] * vk[j]);
                    }
                }
                amplitudes[(r, c)] = acc;
            }
        }
        Ok(RawRun { amplitudes, unitarity_defect: defect })
    }
}
