use super::Waveform;
use crate::autodiff::SisdrParts;
use crate::error::{arg_err, Result};

pub const SISDR_CLAMP_DB: f64 = 60.0;

/// Scale-invariant SDR of `estimate` against `reference`, in dB, clamped to ±60.
///
/// Both signals are mean-removed; the distortion energy carries a `1e-8` floor.
/// Not symmetric in its arguments.
pub fn sisdr(estimate: &Waveform, reference: &Waveform) -> Result<f64> {
    if estimate.len() != reference.len() {
        return arg_err(format!("SiSDR length mismatch: {} vs {}", estimate.len(), reference.len()));
    }
    let p = SisdrParts::new(&estimate.samples, &reference.samples)?;
    let db = 10.0 * (p.target_energy / (p.noise_energy + crate::autodiff::SISDR_EPS)).log10();
    Ok(if db.is_nan() { -SISDR_CLAMP_DB } else { db.clamp(-SISDR_CLAMP_DB, SISDR_CLAMP_DB) })
}
