//! N-level binary digitization of a light-field image.
//!
//! Pixels are scaled so the peak maps to `2^N − 1`, rounded half-up to an
//! integer `P = Σ aᵢ 2ⁱ`, and split into N bit-plane images.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::forward::LightFieldImage;

pub const MAX_LEVELS: u32 = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryPlaneSet {
    /// `planes[i]` holds bit `aᵢ` (weight `2ⁱ`).
    pub planes: Vec<Array2<bool>>,
    pub n_levels: u32,
    /// Image peak that was mapped to `2^N − 1`.
    pub peak: f64,
    pub pixel_pitch: f64,
}

impl BinaryPlaneSet {
    pub fn max_level(&self) -> u64 {
        (1u64 << self.n_levels) - 1
    }

    pub fn shape(&self) -> (usize, usize) {
        self.planes.first().map_or((0, 0), |p| p.dim())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_levels == 0 || self.n_levels > MAX_LEVELS {
            return Err(Error::argument(format!(
                "level count must be in 1..={MAX_LEVELS}"
            )));
        }
        if self.planes.len() != self.n_levels as usize {
            return Err(Error::argument(format!(
                "{} planes for {} levels",
                self.planes.len(),
                self.n_levels
            )));
        }
        let shape = self.shape();
        if self.planes.iter().any(|p| p.dim() != shape) {
            return Err(Error::argument("bit planes differ in shape"));
        }
        if !(self.peak.is_finite() && self.peak >= 0.0) {
            return Err(Error::argument("peak must be finite and nonnegative"));
        }
        Ok(())
    }

    /// Integer pixel values `P`.
    pub fn levels(&self) -> Array2<u64> {
        let mut out = Array2::zeros(self.shape());
        for (i, plane) in self.planes.iter().enumerate() {
            out.zip_mut_with(plane, |p, &bit| {
                if bit {
                    *p |= 1u64 << i
                }
            });
        }
        out
    }
}

/// Quantized level for one pixel: `floor(v·(2^N−1)/peak + 1/2)`.
pub fn quantize(v: f64, max_level: u64, peak: f64) -> u64 {
    let scaled = v * max_level as f64 / peak;
    ((scaled + 0.5).floor() as u64).min(max_level)
}

pub fn digitize(image: &LightFieldImage, n_levels: u32) -> Result<BinaryPlaneSet> {
    if n_levels == 0 || n_levels > MAX_LEVELS {
        return Err(Error::argument(format!(
            "level count must be in 1..={MAX_LEVELS}, got {n_levels}"
        )));
    }
    if image.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::argument("image values must be finite and nonnegative"));
    }
    let peak = image.peak();
    if peak <= 0.0 {
        return Err(Error::argument("cannot digitize an all-zero image"));
    }
    let max_level = (1u64 << n_levels) - 1;
    let p = image.values.mapv(|v| quantize(v, max_level, peak));
    let planes = (0..n_levels).map(|i| p.mapv(|x| (x >> i) & 1 == 1)).collect();
    Ok(BinaryPlaneSet {
        planes,
        n_levels,
        peak,
        pixel_pitch: image.pixel_pitch,
    })
}

/// `Σ aᵢ 2ⁱ · peak / (2^N − 1)`.
pub fn reassemble(set: &BinaryPlaneSet) -> Result<LightFieldImage> {
    set.validate()?;
    let max_level = set.max_level() as f64;
    let values = set.levels().mapv(|p| p as f64 * set.peak / max_level);
    LightFieldImage::new(values, set.pixel_pitch)
}
