use nalgebra::Matrix3;
use serde::Serialize;

use super::DeviceParams;
use crate::error::{Error, Result};

/// `e²/(2h)` in GHz·fF: the charging energy of a 1 fF capacitor.
pub const E2H: f64 = 1.602_176_634e-19 * 1.602_176_634e-19 / (2.0 * 6.626_070_15e-34) / 1e-15 / 1e9;

/// Node capacitance matrix in fF, node order (Q1, Q2, C).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapacitanceMatrix(pub Matrix3<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChargingEnergies {
    /// `E_C,i = e²/(2h) (C⁻¹)_ii` in GHz.
    pub ec: [f64; 3],
    /// Coefficient of `n_i n_j` in the Hamiltonian, `4e²/h (C⁻¹)_ij` in GHz.
    pub coupling: [[f64; 3]; 3],
    pub inverse: Matrix3<f64>,
}

pub fn capacitance_matrix(p: &DeviceParams) -> Result<CapacitanceMatrix> {
    p.validate()?;
    let m = Matrix3::new(
        p.c_s1 + p.c_12 + p.c_1c,
        -p.c_12,
        -p.c_1c,
        -p.c_12,
        p.c_s2 + p.c_12 + p.c_2c,
        -p.c_2c,
        -p.c_1c,
        -p.c_2c,
        p.c_sc + p.c_1c + p.c_2c,
    );
    Ok(CapacitanceMatrix(m))
}

pub fn charging_energies(cm: &CapacitanceMatrix) -> Result<ChargingEnergies> {
    let chol = nalgebra::Cholesky::new(cm.0)
        .ok_or_else(|| Error::Numerical("capacitance matrix is not positive definite".into()))?;
    let inv = chol.inverse();
    let mut ec = [0.0; 3];
    let mut coupling = [[0.0; 3]; 3];
    for i in 0..3 {
        ec[i] = E2H * inv[(i, i)];
        for j in 0..3 {
            if i != j {
                coupling[i][j] = 8.0 * E2H * inv[(i, j)];
            }
        }
    }
    Ok(ChargingEnergies { ec, coupling, inverse: inv })
}

/// Effective Josephson energy of an asymmetric SQUID threaded by `flux`
/// (in flux quanta): `E_Jc/(r+1) √(1 + r² + 2r cos 2πΦ)`.
pub fn squid_ej(e_jc: f64, r: f64, flux: f64) -> f64 {
    let x = std::f64::consts::TAU * flux.rem_euclid(1.0);
    let s = (1.0 + r * r + 2.0 * r * x.cos()).max(0.0).sqrt();
    e_jc / (r + 1.0) * s
}
