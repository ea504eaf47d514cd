//! Time-domain target speech extraction with attention-based scaling adaptation.

pub mod adaptation;
pub mod autodiff;
pub mod dsp;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod losses;
pub mod net;
pub mod synth;

pub use error::{Error, Result};
