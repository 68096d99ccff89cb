use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{Frame, Propagator, RawRun};
use crate::device::{build_hamiltonian, charge_y, label_subset, squid_ej, DeviceParams, HamiltonianModel, TRACKED};
use crate::error::Result;
use crate::linalg::{sym_eigen, C64};
use crate::pulse::FluxPulse;

pub(crate) const DEFAULT_STEP: f64 = 0.0025;
pub(crate) const FAST_STEP: f64 = 0.005;

/// Sixth-order symmetric composition of the second-order splitting.
const WEIGHTS: [f64; 7] = [
    0.784_513_610_477_560,
    0.235_573_213_359_357,
    -1.177_679_984_178_87,
    1.315_186_320_683_91,
    -1.177_679_984_178_87,
    0.235_573_213_359_357,
    0.784_513_610_477_560,
];

/// Full-truncation propagator.
///
/// The Hamiltonian is kept in the idle harmonic basis, where only the coupler
/// term changes with flux: `H(t) = H_idle + ΔE_J(t) V_c`. Time steps split
/// `H` into the local part, a Kronecker sum of single-mode blocks, and the
/// charge coupling, which is diagonal in the product eigenbasis of the three
/// charge operators. Both pieces are exponentiated exactly.
pub struct FullModel {
    params: DeviceParams,
    n: usize,
    idle: HamiltonianModel,
    ej_idle: f64,
    /// Local mode Hamiltonians at idle.
    h_local: [DMatrix<f64>; 3],
    v_coupler: DMatrix<f64>,
    /// Eigenvectors of `i Y_k` (columns) and the eigenvalues.
    w: [DMatrix<C64>; 3],
    /// Coupling energy on the charge product basis.
    coupling_diag: Vec<f64>,
    dressed: Vec<DVector<f64>>,
    energies: [f64; TRACKED.len()],
}

/// State with separate real and imaginary planes, index `basis * cols + col`.
struct State {
    re: Vec<f64>,
    im: Vec<f64>,
    cols: usize,
}

impl FullModel {
    pub fn new(params: &DeviceParams) -> Result<Self> {
        let idle = build_hamiltonian(params, params.idle_flux)?;
        let labels = label_subset(&idle, &TRACKED)?;
        let n = params.truncation;
        let h_local = [idle.modes[0].h_local.clone(), idle.modes[1].h_local.clone(), idle.modes[2].h_local.clone()];
        let v_coupler = idle.modes[2].cosine_shift_operator();
        let y = charge_y(n).map(|x| C64::new(x, 0.0));
        let iy = y * C64::new(0.0, 1.0);
        let eig = SymmetricEigen::new(iy);
        let x: DVector<f64> = eig.eigenvalues.clone();
        let wk = eig.eigenvectors;
        let w = [wk.clone(), wk.clone(), wk];
        let mut coupling_diag = vec![0.0; n * n * n];
        for m1 in 0..n {
            for m2 in 0..n {
                for mc in 0..n {
                    let occ = [x[m1], x[m2], x[mc]];
                    let mut b = 0.0;
                    for (p, q) in [(0, 1), (0, 2), (1, 2)] {
                        // -g Y_p Y_q = g (iY_p)(iY_q)
                        b += idle.g[p][q] * occ[p] * occ[q];
                    }
                    coupling_diag[(m1 * n + m2) * n + mc] = b;
                }
            }
        }
        let mut energies = [0.0; TRACKED.len()];
        let mut dressed = Vec::with_capacity(TRACKED.len());
        for (k, l) in TRACKED.iter().enumerate() {
            let e = labels.get(*l).expect("tracked label");
            energies[k] = idle.energies[e.index];
            dressed.push(idle.eigenvectors.column(e.index).into_owned());
        }
        Ok(Self {
            params: params.clone(),
            n,
            ej_idle: idle.modes[2].ej,
            idle,
            h_local,
            v_coupler,
            w,
            coupling_diag,
            dressed,
            energies,
        })
    }

    pub fn idle_model(&self) -> &HamiltonianModel {
        &self.idle
    }

    fn coupler_ej(&self, excursion: f64) -> f64 {
        let p = &self.params;
        squid_ej(p.e_jc, p.r, p.coupler_loop_flux(p.idle_flux + excursion))
    }

    /// `W† exp(-2πi h τ) W` for one mode.
    fn local_exp(&self, mode: usize, h: &DMatrix<f64>, tau: f64) -> DMatrix<C64> {
        let (vals, vecs) = sym_eigen(h.clone());
        let g = self.w[mode].adjoint() * vecs.map(|x| C64::new(x, 0.0));
        let n = self.n;
        let mut out = DMatrix::<C64>::zeros(n, n);
        for k in 0..n {
            let ph = C64::from_polar(1.0, -std::f64::consts::TAU * vals[k] * tau);
            for i in 0..n {
                let gik = g[(i, k)] * ph;
                for j in 0..n {
                    out[(i, j)] += gik * g[(j, k)].conj();
                }
            }
        }
        out
    }

    fn diag_phases(&self, tau: f64) -> (Vec<f64>, Vec<f64>) {
        self.coupling_diag
            .iter()
            .map(|&b| {
                let (s, c) = (-std::f64::consts::TAU * b * tau).sin_cos();
                (c, s)
            })
            .unzip()
    }

    fn apply_diag(state: &mut State, ph: &(Vec<f64>, Vec<f64>)) {
        let m = state.cols;
        for (i, (&c, &s)) in ph.0.iter().zip(&ph.1).enumerate() {
            for col in 0..m {
                let k = i * m + col;
                let (r, q) = (state.re[k], state.im[k]);
                state.re[k] = c * r - s * q;
                state.im[k] = c * q + s * r;
            }
        }
    }

    /// Apply an `n×n` operator to one mode of the state.
    fn apply_mode(&self, op: &DMatrix<C64>, mode: usize, state: &mut State, scratch: &mut State) {
        let n = self.n;
        let stride = n.pow(2 - mode as u32) * state.cols;
        let outer = n.pow(mode as u32);
        scratch.re.fill(0.0);
        scratch.im.fill(0.0);
        for o in 0..outer {
            let base = o * n * stride;
            for a in 0..n {
                let dst = base + a * stride;
                let dr = &mut scratch.re[dst..dst + stride];
                let di = &mut scratch.im[dst..dst + stride];
                for b in 0..n {
                    let e = op[(a, b)];
                    let src = base + b * stride;
                    let sr = &state.re[src..src + stride];
                    let si = &state.im[src..src + stride];
                    for k in 0..stride {
                        dr[k] += e.re * sr[k] - e.im * si[k];
                        di[k] += e.re * si[k] + e.im * sr[k];
                    }
                }
            }
        }
        std::mem::swap(state, scratch);
    }
}

impl Propagator for FullModel {
    fn frame(&self) -> Frame {
        Frame::Full
    }

    fn truncation(&self) -> usize {
        self.n
    }

    fn energies(&self) -> (f64, [f64; TRACKED.len()]) {
        (self.idle.ground_energy, self.energies)
    }

    fn run(&self, pulse: &FluxPulse, dt: f64) -> Result<RawRun> {
        let n = self.n;
        let dim = n * n * n;
        let cols = 4;
        let duration = pulse.duration();
        let steps = ((duration / dt).ceil() as usize).max(1);
        let h = duration / steps as f64;

        // Initial dressed computational states, moved to the charge basis.
        let mut state = State { re: vec![0.0; dim * cols], im: vec![0.0; dim * cols], cols };
        for (c, l) in crate::device::COMPUTATIONAL.iter().enumerate() {
            let r = TRACKED.iter().position(|t| t == l).unwrap();
            for i in 0..dim {
                state.re[i * cols + c] = self.dressed[r][i];
            }
        }
        let mut scratch = State { re: vec![0.0; dim * cols], im: vec![0.0; dim * cols], cols };
        for k in 0..3 {
            self.apply_mode(&self.w[k].adjoint(), k, &mut state, &mut scratch);
        }

        let mut distinct: Vec<f64> = Vec::new();
        for w in WEIGHTS {
            if !distinct.contains(&w) {
                distinct.push(w);
            }
        }
        let qubit_exp: Vec<[DMatrix<C64>; 2]> = distinct
            .iter()
            .map(|&w| [self.local_exp(0, &self.h_local[0], w * h), self.local_exp(1, &self.h_local[1], w * h)])
            .collect();
        let slot = |w: f64| distinct.iter().position(|&d| d == w).unwrap();
        let half_first = self.diag_phases(0.5 * WEIGHTS[0] * h);
        let between: Vec<_> = (0..WEIGHTS.len())
            .map(|s| {
                let next = WEIGHTS[(s + 1) % WEIGHTS.len()];
                self.diag_phases(0.5 * (WEIGHTS[s] + next) * h)
            })
            .collect();
        let half_last = self.diag_phases(0.5 * WEIGHTS[WEIGHTS.len() - 1] * h);

        Self::apply_diag(&mut state, &half_first);
        let mut t = 0.0;
        for step in 0..steps {
            for (s, &w) in WEIGHTS.iter().enumerate() {
                let tau = w * h;
                let delta = self.coupler_ej(pulse.value_at(t + 0.5 * tau)) - self.ej_idle;
                let hc = &self.h_local[2] + &self.v_coupler * delta;
                let ec = self.local_exp(2, &hc, tau);
                let q = &qubit_exp[slot(w)];
                self.apply_mode(&q[0], 0, &mut state, &mut scratch);
                self.apply_mode(&q[1], 1, &mut state, &mut scratch);
                self.apply_mode(&ec, 2, &mut state, &mut scratch);
                t += tau;
                let last = s == WEIGHTS.len() - 1 && step + 1 == steps;
                Self::apply_diag(&mut state, if last { &half_last } else { &between[s] });
            }
        }

        for k in 0..3 {
            self.apply_mode(&self.w[k], k, &mut state, &mut scratch);
        }
        let psi = DMatrix::from_fn(dim, cols, |i, c| C64::new(state.re[i * cols + c], state.im[i * cols + c]));
        let gram = psi.adjoint() * &psi;
        let mut defect: f64 = 0.0;
        for i in 0..cols {
            for j in 0..cols {
                let target = if i == j { 1.0 } else { 0.0 };
                defect = defect.max((gram[(i, j)] - C64::new(target, 0.0)).norm());
            }
        }
        let mut amplitudes = DMatrix::<C64>::zeros(TRACKED.len(), cols);
        for (r, v) in self.dressed.iter().enumerate() {
            for c in 0..cols {
                let mut acc = C64::new(0.0, 0.0);
                for i in 0..dim {
                    acc += psi[(i, c)] * v[i];
                }
                amplitudes[(r, c)] = acc;
            }
        }
        Ok(RawRun { amplitudes, unitarity_defect: defect })
    }
}
