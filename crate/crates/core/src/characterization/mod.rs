//! Gate metrology on simulated or injected channels: Clifford randomized
//! benchmarking with leakage, process tomography with CPTP projection, and
//! readout mitigation.

mod channel;
mod clifford;
mod fit;
mod qpt;
mod rb;
mod readout;

use rand::Rng;
use rand_distr::{Binomial, Distribution};

pub use channel::Channel;
pub use clifford::{clifford_group, equal_up_to_phase, phase_key, CliffordElement, CliffordGroup, Gate};
pub use fit::{
    fit_decay, fit_decay_fixed_b, fit_leakage, irb_fidelity, per_gate_leakage, DecayFit, IrbFidelity, LeakageFit,
};
pub use qpt::{
    choi, fidelity_avg, pauli2, project_cptp, ptm_from_choi, ptm_of_channel, ptm_of_unitary, qpt,
    standard_preparations, write_ptm_csv, ProcessMatrix, QptResult, QptSettings,
};
pub use rb::{rb_sequence, run_rb, write_rb_csv, Interleave, RbConfig, RbResult, RbSequence};
pub use readout::{project_simplex, readout_correct, AssignmentMatrix, ReadoutCorrection, READOUT_STATES};

/// Multinomial draw by sequential binomials; `probs` need not be normalized.
pub(crate) fn multinomial<R: Rng + ?Sized>(rng: &mut R, n: u64, probs: &[f64]) -> Vec<u64> {
    let mut left = n;
    let mut mass: f64 = probs.iter().map(|p| p.max(0.0)).sum();
    let mut out = Vec::with_capacity(probs.len());
    for (k, &p) in probs.iter().enumerate() {
        let p = p.max(0.0);
        let c = if k + 1 == probs.len() {
            left
        } else if left == 0 || mass <= 0.0 {
            0
        } else {
            let q = (p / mass).clamp(0.0, 1.0);
            Binomial::new(left, q).unwrap().sample(rng)
        };
        out.push(c);
        left -= c;
        mass -= p;
    }
    out
}
