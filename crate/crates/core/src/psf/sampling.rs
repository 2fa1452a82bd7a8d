use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingCheck {
    pub passed: bool,
    /// Smallest admissible sampling interval, `sqrt(distance·λ / N)`.
    pub threshold: f64,
}

/// Alias-free condition for spectral-method propagation over `distance`:
/// `distance ≤ N·Δx²/λ`, i.e. `Δx ≥ sqrt(distance·λ/N)`.
pub fn validate_sampling(
    distance: f64,
    sample_interval: f64,
    n_samples: usize,
    wavelength: f64,
) -> Result<SamplingCheck> {
    if !(distance.is_finite() && distance >= 0.0) {
        return Err(Error::argument(format!(
            "propagation distance must be non-negative, got {distance}"
        )));
    }
    if !(sample_interval.is_finite() && sample_interval > 0.0) {
        return Err(Error::argument(format!(
            "sample interval must be positive, got {sample_interval}"
        )));
    }
    if !(wavelength.is_finite() && wavelength > 0.0) {
        return Err(Error::argument(format!(
            "wavelength must be positive, got {wavelength}"
        )));
    }
    if n_samples == 0 {
        return Err(Error::argument("sample count must be positive"));
    }
    let threshold = (distance * wavelength / n_samples as f64).sqrt();
    Ok(SamplingCheck {
        passed: sample_interval >= threshold,
        threshold,
    })
}
