use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::hamiltonian::{build_hamiltonian, mode_data, HamiltonianModel};
use super::labels::{label_states, label_subset, FockLabel};
use super::DeviceParams;
use crate::error::{Error, Result};

const L100: FockLabel = FockLabel::new(1, 0, 0);
const L010: FockLabel = FockLabel::new(0, 1, 0);
const L001: FockLabel = FockLabel::new(0, 0, 1);
const L110: FockLabel = FockLabel::new(1, 1, 0);

/// Dressed frequencies and anharmonicities of the three modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DressedSummary {
    /// (ω1, ω2, ωc)/2π in GHz.
    pub frequency_ghz: [f64; 3],
    /// (α1, α2, αc)/2π in MHz.
    pub anharmonicity_mhz: [f64; 3],
    pub alpha_zz_mhz: f64,
}

pub fn dressed_summary(model: &HamiltonianModel) -> Result<DressedSummary> {
    let map = label_states(model)?;
    let e = |l| map.energy(model, l);
    let f = [e(L100)?, e(L010)?, e(L001)?];
    let second = [e(FockLabel::new(2, 0, 0))?, e(FockLabel::new(0, 2, 0))?, e(FockLabel::new(0, 0, 2))?];
    let mut anh = [0.0; 3];
    for k in 0..3 {
        anh[k] = (second[k] - 2.0 * f[k]) * 1e3;
    }
    Ok(DressedSummary { frequency_ghz: f, anharmonicity_mhz: anh, alpha_zz_mhz: (e(L110)? - f[0] - f[1]) * 1e3 })
}

const ZZ_LABELS: [FockLabel; 4] = [FockLabel::new(0, 0, 0), L100, L010, L110];

fn alpha_from_model(model: &HamiltonianModel) -> Result<f64> {
    let map = label_subset(model, &ZZ_LABELS)?;
    let e = |l| map.energy(model, l);
    Ok((e(L110)? - e(L100)? - e(L010)?) * 1e3)
}

/// `α_ZZ/2π = (E_110 - E_100 - E_010)/h` in MHz at applied coupler flux `flux`.
pub fn alpha_zz(params: &DeviceParams, flux: f64) -> Result<f64> {
    alpha_from_model(&build_hamiltonian(params, flux)?)
}

fn j_from_model(model: &HamiltonianModel) -> Result<f64> {
    let i100 = model.index(1, 0, 0);
    let i010 = model.index(0, 1, 0);
    let v = &model.eigenvectors;
    // The two eigenvectors carrying most of the single-excitation qubit
    // subspace; with degenerate bare qubits these are the symmetric and
    // antisymmetric combinations.
    let mut weight: Vec<(usize, f64)> =
        (0..model.dim()).map(|c| (c, v[(i100, c)].powi(2) + v[(i010, c)].powi(2))).collect();
    weight.sort_by(|a, b| b.1.total_cmp(&a.1));
    let (a, wa) = weight[0];
    let (b, wb) = weight[1];
    if wb < 0.5 {
        return Err(Error::AmbiguousLabel { label: if wa < 0.5 { L100 } else { L010 }, overlap: wb.min(wa) });
    }
    let sym_a = (v[(i100, a)] + v[(i010, a)]).powi(2);
    let sym_b = (v[(i100, b)] + v[(i010, b)]).powi(2);
    let (sym, anti) = if sym_a >= sym_b { (a, b) } else { (b, a) };
    Ok((model.energies[sym] - model.energies[anti]) / 2.0 * 1e3)
}

/// Exchange rate `J/2π` in MHz.
///
/// Both qubits get the mean Josephson energy so that their bare levels are
/// degenerate; J is half the splitting of the symmetric and antisymmetric
/// single-excitation eigenstates, signed so that an effective coupling
/// `J(σ⁺σ⁻ + h.c.)` with `J > 0` pushes the symmetric state up.
pub fn j_rate(params: &DeviceParams, flux: f64) -> Result<f64> {
    let ej = 0.5 * (params.e_j1 + params.e_j2);
    let sym = DeviceParams { e_j1: ej, e_j2: ej, ..params.clone() };
    j_from_model(&build_hamiltonian(&sym, flux)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BareCouplings {
    pub g12_mhz: f64,
    pub g1c_mhz: f64,
    pub g2c_mhz: f64,
}

/// Transverse coupling rates `4e²(C⁻¹)_ij n_zpf,i n_zpf,j / h` at the idle
/// flux, in MHz.
pub fn bare_couplings(params: &DeviceParams) -> Result<BareCouplings> {
    let (_, g) = mode_data(params, params.idle_flux)?;
    Ok(BareCouplings { g12_mhz: g[0][1] * 1e3, g1c_mhz: g[0][2] * 1e3, g2c_mhz: g[1][2] * 1e3 })
}

/// Applied flux in `[lo, hi]` at which the dressed coupler frequency equals
/// `target_ghz`, assuming the frequency decreases monotonically there.
pub fn flux_for_coupler_frequency(params: &DeviceParams, target_ghz: f64, lo: f64, hi: f64) -> Result<f64> {
    let wc = |f: f64| -> Result<f64> {
        let m = build_hamiltonian(params, f)?;
        let map = label_subset(&m, &[L001])?;
        map.energy(&m, L001)
    };
    let (mut a, mut b) = (lo, hi);
    let (fa, fb) = (wc(a)? - target_ghz, wc(b)? - target_ghz);
    if fa.signum() == fb.signum() {
        return Err(Error::Range(format!("coupler frequency {target_ghz} GHz not bracketed by flux [{lo}, {hi}]")));
    }
    while b - a > 1e-9 {
        let m = 0.5 * (a + b);
        let fm = wc(m)? - target_ghz;
        if fm.signum() == fa.signum() {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumPoint {
    pub flux_phi0: f64,
    /// Dressed coupler frequency, NaN when |001⟩ could not be labeled.
    pub omega_c_ghz: f64,
    pub alpha_zz_mhz: f64,
    pub j_mhz: f64,
    pub label_ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn sweep_point(params: &DeviceParams, flux: f64) -> SpectrumPoint {
    let mut pt = SpectrumPoint {
        flux_phi0: flux,
        omega_c_ghz: f64::NAN,
        alpha_zz_mhz: f64::NAN,
        j_mhz: f64::NAN,
        label_ok: false,
        error: None,
    };
    let mut errors = Vec::new();
    match build_hamiltonian(params, flux) {
        Ok(model) => {
            match label_subset(&model, &[L001]) {
                Ok(map) => pt.omega_c_ghz = map.energy(&model, L001).unwrap_or(f64::NAN),
                Err(e) => errors.push(e.to_string()),
            }
            match alpha_from_model(&model) {
                Ok(a) => pt.alpha_zz_mhz = a,
                Err(e) => errors.push(e.to_string()),
            }
            match j_rate(params, flux) {
                Ok(j) => pt.j_mhz = j,
                Err(e) => errors.push(format!("J: {e}")),
            }
        }
        Err(e) => errors.push(e.to_string()),
    }
    pt.label_ok = errors.is_empty();
    if !errors.is_empty() {
        pt.error = Some(errors.join("; "));
    }
    pt
}

/// Evaluate ω_c, α_ZZ and J on a flux grid. Points where labeling fails are
/// kept with `label_ok = false`.
pub fn spectrum_sweep(params: &DeviceParams, grid: &[f64]) -> Vec<SpectrumPoint> {
    grid.par_iter().map(|&f| sweep_point(params, f)).collect()
}

pub fn write_spectrum_csv<W: Write>(points: &[SpectrumPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["flux_phi0", "omega_c_GHz", "alpha_zz_MHz", "J_MHz", "label_ok"])?;
    for p in points {
        w.write_record([
            format!("{:.6}", p.flux_phi0),
            format!("{:.9}", p.omega_c_ghz),
            format!("{:.9}", p.alpha_zz_mhz),
            format!("{:.9}", p.j_mhz),
            p.label_ok.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decoupled_rates_vanish() {
        let p = DeviceParams::default().decoupled();
        assert!(alpha_zz(&p, 0.3).unwrap().abs() < 1e-6);
        assert!(j_rate(&p, 0.3).unwrap().abs() < 1e-6);
        let g = bare_couplings(&p).unwrap();
        assert_eq!((g.g12_mhz, g.g1c_mhz, g.g2c_mhz), (0.0, 0.0, 0.0));
    }

    #[test]
    fn empty_sweep() {
        assert!(spectrum_sweep(&DeviceParams::default(), &[]).is_empty());
    }

    #[test]
    fn csv_header() {
        let pts = spectrum_sweep(&DeviceParams { truncation: 4, ..Default::default() }, &[0.2]);
        let mut buf = Vec::new();
        write_spectrum_csv(&pts, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("flux_phi0,omega_c_GHz,alpha_zz_MHz,J_MHz,label_ok\n"));
    }
}
