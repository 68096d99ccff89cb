//! Flux waveforms, the flux-line transfer model and IIR predistortion.

mod iir;
mod transfer;
mod waveform;

pub use iir::{apply_chain, design_iir, FilterChain, IirSection};
pub use transfer::{distort, step_response, ExpTerm, TransferModel};
pub use waveform::{flat_top_gaussian, FluxPulse, PulseShape, DEFAULT_DT, DEFAULT_SIGMA};
