//! Decryption by multiplicative deconvolution,
//! `g ← g ⊙ (HᵀO) ⊘ (HᵀH g)`, and the key-perturbation attack.

use log::warn;
use ndarray::{Array2, Array3, Zip};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::{check_image_shape, ForwardOperator, LightFieldImage, Volume, VolumeGrid};
use crate::psf::PsfKey;
use crate::rng::{SeededStream, Stream};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Initialization {
    #[default]
    UniformOnes,
    /// Start from `HᵀO`.
    Adjoint,
}

/// How occluded pixels enter the fit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum OcclusionHandling {
    /// Occluded pixels are left out of both `Hᵀ` applications.
    #[default]
    Masked,
    /// Occluded pixels are treated as measured zeros.
    AsZeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeconvSettings {
    pub iterations: usize,
    /// Denominator floor, relative to the denominator's own maximum.
    pub floor_relative: f64,
    /// Values below this fraction of the final maximum are zeroed.
    pub threshold_fraction: f64,
    pub initialization: Initialization,
    pub occlusion: OcclusionHandling,
}

impl Default for DeconvSettings {
    fn default() -> Self {
        Self {
            iterations: 8,
            floor_relative: 1e-12,
            threshold_fraction: 0.0,
            initialization: Initialization::UniformOnes,
            occlusion: OcclusionHandling::Masked,
        }
    }
}

impl DeconvSettings {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::argument("iterations must be at least 1"));
        }
        if !(self.floor_relative > 0.0 && self.floor_relative.is_finite()) {
            return Err(Error::argument("floor must be positive"));
        }
        if !(0.0..1.0).contains(&self.threshold_fraction) {
            return Err(Error::argument("threshold fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Diagnostics for one iterate, emitted before it is updated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `‖O − H g‖²` over valid pixels.
    pub residual: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub volume: Volume,
    pub records: Vec<IterationRecord>,
    pub warning: Option<String>,
}

pub fn decrypt(
    image: &LightFieldImage,
    key: &PsfKey,
    grid: &VolumeGrid,
    settings: &DeconvSettings,
) -> Result<Reconstruction> {
    decrypt_with(image, key, grid, settings, None, &mut |_| {})
}

/// [`decrypt`] with an explicit starting volume and a per-iteration observer.
pub fn decrypt_with(
    image: &LightFieldImage,
    key: &PsfKey,
    grid: &VolumeGrid,
    settings: &DeconvSettings,
    start: Option<&Array3<f64>>,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<Reconstruction> {
    settings.validate()?;
    if image.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::argument("image values must be finite and nonnegative"));
    }
    let op = ForwardOperator::new(key, grid)?;
    check_image_shape(image, &op)?;

    let valid: Option<Array2<f64>> = match (settings.occlusion, &image.mask) {
        (OcclusionHandling::Masked, Some(m)) => Some(m.mapv(|ok| if ok { 1.0 } else { 0.0 })),
        _ => None,
    };
    let data = image.masked_values();
    if data.iter().all(|&v| v == 0.0) {
        let msg = "image has no signal; returning an empty volume".to_string();
        warn!("{msg}");
        return Ok(Reconstruction {
            volume: Volume::zeros(grid.clone()),
            records: Vec::new(),
            warning: Some(msg),
        });
    }

    let numerator = op.adjoint(&data);
    let mut g = match start {
        Some(s) => {
            if s.dim() != grid.shape() {
                return Err(Error::argument("starting volume has the wrong shape"));
            }
            if s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::argument("starting volume must be nonnegative"));
            }
            s.clone()
        }
        None => match settings.initialization {
            Initialization::UniformOnes => Array3::ones(grid.shape()),
            Initialization::Adjoint => numerator.clone(),
        },
    };

    let mut records = Vec::with_capacity(settings.iterations);
    for iteration in 0..settings.iterations {
        let mut hg = op.forward(&g);
        if let Some(v) = &valid {
            hg *= v;
        }
        let residual = Zip::from(&data).and(&hg).fold(0.0, |acc, &o, &p| {
            let d = o - p;
            acc + d * d
        });
        let rec = IterationRecord {
            iteration,
            residual,
            min: g.iter().copied().fold(f64::INFINITY, f64::min),
            max: g.iter().copied().fold(0.0, f64::max),
        };
        observer(&rec);
        records.push(rec);

        let denom = op.adjoint(&hg);
        let floor = settings.floor_relative * denom.iter().copied().fold(0.0, f64::max);
        let floor = if floor > 0.0 { floor } else { f64::MIN_POSITIVE };
        Zip::from(&mut g)
            .and(&numerator)
            .and(&denom)
            .for_each(|g, &n, &d| *g *= n / d.max(floor));
    }

    if settings.threshold_fraction > 0.0 {
        let cut = settings.threshold_fraction * g.iter().copied().fold(0.0, f64::max);
        g.mapv_inplace(|v| if v < cut { 0.0 } else { v });
    }
    Ok(Reconstruction {
        volume: Volume {
            values: g,
            grid: grid.clone(),
        },
        records,
        warning: None,
    })
}

/// Multiplies every stored PSF value by `1 + fraction·u`, `u ~ U[-1, 1)`,
/// clamping at zero. PSFs are deliberately not renormalized.
pub fn perturb_key(key: &PsfKey, fraction: f64, seed: u64) -> Result<PsfKey> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::argument(format!(
            "perturbation fraction must be in [0, 1), got {fraction}"
        )));
    }
    if fraction == 0.0 {
        return Ok(key.clone());
    }
    let mut s = SeededStream::new(seed, Stream::KeyPerturbation);
    key.derive(
        format!(
            "perturbed fraction={fraction:e} seed={seed} parent={}",
            key.checksum()
        ),
        |_, v| (v * (1.0 + fraction * s.uniform(-1.0, 1.0))).max(0.0),
    )
}
