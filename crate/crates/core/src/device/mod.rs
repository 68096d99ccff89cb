//! Circuit quantization of the two-transmon plus coupler system and the
//! static quantities derived from its spectrum.

mod circuit;
mod hamiltonian;
mod labels;
mod params;
mod spectrum;

pub use circuit::{capacitance_matrix, charging_energies, squid_ej, CapacitanceMatrix, ChargingEnergies, E2H};
pub(crate) use hamiltonian::mode_data;
pub use hamiltonian::{build_hamiltonian, charge_y, HamiltonianModel, ModeData};
pub use labels::{assign_labels, label_states, label_subset, FockLabel, LabelEntry, LabelMap, COMPUTATIONAL, TRACKED};
pub use params::DeviceParams;
pub use spectrum::{
    alpha_zz, bare_couplings, dressed_summary, flux_for_coupler_frequency, j_rate, spectrum_sweep, write_spectrum_csv,
    BareCouplings, DressedSummary, SpectrumPoint,
};
