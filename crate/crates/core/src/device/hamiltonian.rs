use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::circuit::{capacitance_matrix, charging_energies, squid_ej};
use super::labels::{label_states, LabelMap};
use super::DeviceParams;
use crate::error::{Error, Result};
use crate::linalg::{annihilation, sym_eigen};

/// Single-mode data in the local harmonic basis.
#[derive(Debug, Clone, Serialize)]
pub struct ModeData {
    pub ec: f64,
    pub ej: f64,
    /// Plasma frequency `√(8 E_J E_C)` in GHz.
    pub omega_p: f64,
    pub phi_zpf: f64,
    pub n_zpf: f64,
    /// `ω_p a†a + E_J(-φ⁴/24 + φ⁶/720)` in GHz.
    #[serde(skip)]
    pub h_local: DMatrix<f64>,
    /// Truncated phase operator `φ_zpf (a + a†)`.
    #[serde(skip)]
    pub phi: DMatrix<f64>,
}

impl ModeData {
    pub fn new(ec: f64, ej: f64, n: usize) -> Result<Self> {
        if !(ej > 0.0) {
            return Err(Error::Model(format!("Josephson energy {ej} GHz is not positive")));
        }
        let omega_p = (8.0 * ej * ec).sqrt();
        let phi_zpf = (2.0 * ec / ej).powf(0.25);
        let n_zpf = (ej / (32.0 * ec)).powf(0.25);
        let a = annihilation(n);
        let ad = a.transpose();
        let phi = (&a + &ad) * phi_zpf;
        let p2 = &phi * &phi;
        let p4 = &p2 * &p2;
        let p6 = &p4 * &p2;
        let h_local = &ad * &a * omega_p + (p4 * (-1.0 / 24.0) + p6 * (1.0 / 720.0)) * ej;
        Ok(Self { ec, ej, omega_p, phi_zpf, n_zpf, h_local, phi })
    }

    /// Non-quadratic part of `-cos φ` relative to a basis built at fixed `E_J`:
    /// `φ²/2 - φ⁴/24 + φ⁶/720`. Multiplying by `ΔE_J` gives the change of the
    /// mode Hamiltonian when the Josephson energy moves away from `ej`.
    pub fn cosine_shift_operator(&self) -> DMatrix<f64> {
        let p2 = &self.phi * &self.phi;
        let p4 = &p2 * &p2;
        let p6 = &p4 * &p2;
        p2 * 0.5 - p4 * (1.0 / 24.0) + p6 * (1.0 / 720.0)
    }
}

/// Charge-type operator `Y = a† - a` on `n` levels; `n̂ = i n_zpf Y`.
pub fn charge_y(n: usize) -> DMatrix<f64> {
    let a = annihilation(n);
    a.transpose() - a
}

/// Dense three-mode Hamiltonian with its eigen-decomposition.
#[derive(Debug, Clone)]
pub struct HamiltonianModel {
    /// Applied coupler flux.
    pub flux: f64,
    pub truncation: usize,
    pub modes: [ModeData; 3],
    /// `g_ij = c_ij n_zpf,i n_zpf,j` in GHz; the coupling term is
    /// `-g_ij Y_i Y_j`.
    pub g: [[f64; 3]; 3],
    pub hamiltonian: DMatrix<f64>,
    /// Absolute ground energy in GHz.
    pub ground_energy: f64,
    /// Ground-referenced eigenvalues, ascending.
    pub energies: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
    /// Present when all tracked labels could be assigned.
    pub labels: Option<LabelMap>,
}

impl HamiltonianModel {
    pub fn dim(&self) -> usize {
        self.truncation.pow(3)
    }

    pub fn index(&self, n1: usize, n2: usize, nc: usize) -> usize {
        let n = self.truncation;
        (n1 * n + n2) * n + nc
    }

    /// Largest `|H - Hᵀ|` relative to the largest `|H|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let h = &self.hamiltonian;
        let scale = h.amax().max(f64::MIN_POSITIVE);
        (h - h.transpose()).amax() / scale
    }
}

/// Assemble `Σ_k h_k + Σ_{i<j} -g_ij Y_i Y_j` on the product space.
pub(crate) fn assemble(modes: &[ModeData; 3], g: &[[f64; 3]; 3], n: usize) -> DMatrix<f64> {
    let dim = n * n * n;
    let idx = |a: usize, b: usize, c: usize| (a * n + b) * n + c;
    let y = charge_y(n);
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for i1 in 0..n {
        for i2 in 0..n {
            for ic in 0..n {
                let row = idx(i1, i2, ic);
                for k in 0..n {
                    h[(row, idx(k, i2, ic))] += modes[0].h_local[(i1, k)];
                    h[(row, idx(i1, k, ic))] += modes[1].h_local[(i2, k)];
                    h[(row, idx(i1, i2, k))] += modes[2].h_local[(ic, k)];
                }
            }
        }
    }
    // Y is bidiagonal, so each coupling touches at most four columns per row.
    let pairs = [(0usize, 1usize), (0, 2), (1, 2)];
    for i1 in 0..n {
        for i2 in 0..n {
            for ic in 0..n {
                let row = idx(i1, i2, ic);
                let occ = [i1, i2, ic];
                for &(p, q) in &pairs {
                    let gpq = g[p][q];
                    if gpq == 0.0 {
                        continue;
                    }
                    for dp in [-1i64, 1] {
                        let kp = occ[p] as i64 + dp;
                        if kp < 0 || kp >= n as i64 {
                            continue;
                        }
                        for dq in [-1i64, 1] {
                            let kq = occ[q] as i64 + dq;
                            if kq < 0 || kq >= n as i64 {
                                continue;
                            }
                            let mut col = occ;
                            col[p] = kp as usize;
                            col[q] = kq as usize;
                            let v = y[(occ[p], col[p])] * y[(occ[q], col[q])];
                            h[(row, idx(col[0], col[1], col[2]))] -= gpq * v;
                        }
                    }
                }
            }
        }
    }
    h
}

/// Diagonalize using the conserved total excitation parity to split the
/// problem into two half-size blocks.
pub(crate) fn diagonalize(h: &DMatrix<f64>, n: usize) -> (DVector<f64>, DMatrix<f64>) {
    let dim = h.nrows();
    let parity = |k: usize| (k / (n * n) + (k / n) % n + k % n) % 2;
    let blocks: Vec<Vec<usize>> = (0..2).map(|p| (0..dim).filter(|&k| parity(k) == p).collect()).collect();
    let mut pairs: Vec<(f64, DVector<f64>)> = Vec::with_capacity(dim);
    for idx in &blocks {
        let m = idx.len();
        let sub = DMatrix::from_fn(m, m, |a, b| h[(idx[a], idx[b])]);
        let (vals, vecs) = sym_eigen(sub);
        for c in 0..m {
            let mut v = DVector::zeros(dim);
            for (a, &k) in idx.iter().enumerate() {
                v[k] = vecs[(a, c)];
            }
            pairs.push((vals[c], v));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let vals = DVector::from_iterator(dim, pairs.iter().map(|p| p.0));
    let mut vecs = DMatrix::zeros(dim, dim);
    for (c, (_, v)) in pairs.iter().enumerate() {
        vecs.column_mut(c).copy_from(v);
    }
    (vals, vecs)
}

pub(crate) fn mode_data(params: &DeviceParams, flux: f64) -> Result<([ModeData; 3], [[f64; 3]; 3])> {
    params.validate()?;
    let ce = charging_energies(&capacitance_matrix(params)?)?;
    let n = params.truncation;
    let ejc = squid_ej(params.e_jc, params.r, params.coupler_loop_flux(flux));
    let modes = [
        ModeData::new(ce.ec[0], params.e_j1, n)?,
        ModeData::new(ce.ec[1], params.e_j2, n)?,
        ModeData::new(ce.ec[2], ejc, n)?,
    ];
    let mut g = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                g[i][j] = ce.coupling[i][j] * modes[i].n_zpf * modes[j].n_zpf;
            }
        }
    }
    Ok((modes, g))
}

/// Build and diagonalize the Hamiltonian at applied coupler flux `flux`.
pub fn build_hamiltonian(params: &DeviceParams, flux: f64) -> Result<HamiltonianModel> {
    let (modes, g) = mode_data(params, flux)?;
    let n = params.truncation;
    let hamiltonian = assemble(&modes, &g, n);
    let (vals, eigenvectors) = diagonalize(&hamiltonian, n);
    let ground_energy = vals[0];
    let energies = vals.add_scalar(-ground_energy);
    let mut model = HamiltonianModel {
        flux,
        truncation: n,
        modes,
        g,
        hamiltonian,
        ground_energy,
        energies,
        eigenvectors,
        labels: None,
    };
    model.labels = label_states(&model).ok();
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::FockLabel;

    fn single_mode_levels(ec: f64, ej: f64, n: usize) -> Vec<f64> {
        // Independent construction: explicit ladder matrices and powers.
        let wp = (8.0 * ej * ec).sqrt();
        let pz = (2.0 * ec / ej).powf(0.25);
        let phi = DMatrix::from_fn(n, n, |i, j| {
            if j == i + 1 {
                pz * (j as f64).sqrt()
            } else if i == j + 1 {
                pz * (i as f64).sqrt()
            } else {
                0.0
            }
        });
        let p4 = phi.pow(4);
        let p6 = phi.pow(6);
        let h = DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { wp * i as f64 } else { 0.0 };
            diag - ej * p4[(i, j)] / 24.0 + ej * p6[(i, j)] / 720.0
        });
        let mut v: Vec<f64> = nalgebra::SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        v.iter().map(|x| x - v[0]).collect()
    }

    #[test]
    fn hermitian_and_sorted() {
        let p = DeviceParams::default();
        let m = build_hamiltonian(&p, p.idle_flux).unwrap();
        assert!(m.hermiticity_defect() < 1e-10);
        assert_eq!(m.energies[0], 0.0);
        assert!(m.energies.as_slice().windows(2).all(|w| w[0] <= w[1]));
        let labels = m.labels.as_ref().unwrap();
        assert_eq!(labels.get(FockLabel::new(0, 0, 0)).unwrap().index, 0);
    }

    #[test]
    fn decoupled_spectrum_is_sum_of_single_modes() {
        let p = DeviceParams::default().decoupled();
        let m = build_hamiltonian(&p, p.idle_flux).unwrap();
        let labels = m.labels.as_ref().unwrap();
        for (k, mode) in m.modes.iter().enumerate() {
            let levels = single_mode_levels(mode.ec, mode.ej, p.truncation);
            for exc in 1..=2u8 {
                let mut occ = [0u8; 3];
                occ[k] = exc;
                let e = labels.energy(&m, FockLabel::new(occ[0], occ[1], occ[2])).unwrap();
                // 1 kHz
                assert!(
                    (e - levels[exc as usize]).abs() < 1e-6,
                    "mode {k} level {exc}: {e} vs {}",
                    levels[exc as usize]
                );
            }
        }
        for label in crate::device::TRACKED {
            assert!(labels.get(label).unwrap().overlap > 0.9);
        }
    }

    #[test]
    fn too_small_truncation() {
        let p = DeviceParams { truncation: 2, ..Default::default() };
        assert!(matches!(build_hamiltonian(&p, 0.0), Err(Error::Truncation { .. })));
    }

    #[test]
    fn nonpositive_coupler_energy_is_model_error() {
        let p = DeviceParams { r: 1.0, ..Default::default() };
        assert!(matches!(build_hamiltonian(&p, 0.5), Err(Error::Model(_))));
    }
}
