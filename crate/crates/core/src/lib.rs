//! Simulation of a linear-optical polarization Bell state analyzer (BSA) driven by
//! phase-randomized weak coherent pulses (WCP) or single photons, together with the
//! count-statistics deduction that recovers single-photon Bell state measurement
//! behaviour from WCP data and the MDI / reference-frame-independent MDI-QKD
//! observables built on top of it.
//!
//! The crate is split along the data flow:
//!
//! * [`fock_optics`]: exact propagation of few-photon Fock states through the
//!   beamsplitter + polarizing beamsplitter network and threshold detection.
//! * [`sources`]: polarization encodings, photon-number mixtures, loss and frame
//!   rotation.
//! * [`experiment`]: the three measurement configurations (both arms, Alice only,
//!   Bob only) in exact-rate or sampled form.
//! * [`deduction`]: single-photon coincidence recovery from the three records.
//! * [`qkd_analysis`]: QBERs, the `C` parameter, visibilities and bootstrap errors.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod deduction;
pub mod error;
pub mod experiment;
pub mod fock_optics;
pub mod qkd_analysis;
pub mod sources;

pub use error::{Error, Result};
