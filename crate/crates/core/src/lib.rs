//! Error-correcting neural network (ECNN) ensembles.
//!
//! The crate is organised bottom-up:
//!
//! * [`codebook`] holds the q-ary code matrix, its row (Hamming) and column
//!   (variation of information) distances, and the annealing energy.
//! * [`annealer`] searches for code matrices by simulated annealing.
//! * [`netcore`] is a small dense-network engine with explicit reverse mode.
//! * [`ecnn`] wires a shared front network, per-column branches and a shared
//!   linear head into an encoder, plus the correlation decoder and losses.
//! * [`attacks`] implements the white-box L∞/L0/L2 attack suite.
//! * [`trainer`] covers datasets, mini-batch training, adversarial training,
//!   evaluation and the branch transferability study.
//! * [`lemmalab`] runs finite-sample linear-algebra checks of the
//!   feature-sharing results.

pub mod annealer;
pub mod attacks;
pub mod codebook;
pub mod ecnn;
pub mod error;
pub mod lemmalab;
pub mod netcore;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
