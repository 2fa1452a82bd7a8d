use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::psf::sampling::validate_sampling;

/// Physical parameters of the objective / microlens / sensor system.
///
/// All lengths are in meters. `mask_pixel` is also the simulation sampling
/// interval at the lenslet plane; when it is finer than `sensor_pixel` the
/// simulated intensity is area-binned onto sensor pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticalSystemConfig {
    pub na: f64,
    pub magnification: f64,
    pub refractive_index: f64,
    pub wavelength: f64,
    pub lenslet_pitch: f64,
    pub lenslet_focal: f64,
    pub mask_pixel: f64,
    pub sensor_pixel: f64,
    /// Lateral sample count of the simulated PSF window (odd).
    pub psf_samples: usize,
    /// Side length of the (square) sensor in pixels.
    pub sensor_pixels: usize,
    /// Gauss–Legendre nodes over the aperture angle.
    pub theta_nodes: usize,
}

impl Default for OpticalSystemConfig {
    fn default() -> Self {
        Self {
            na: 0.5,
            magnification: 20.0,
            refractive_index: 1.0,
            wavelength: 532e-9,
            lenslet_pitch: 150e-6,
            lenslet_focal: 3e-3,
            mask_pixel: 10e-6,
            sensor_pixel: 10e-6,
            psf_samples: 151,
            sensor_pixels: 128,
            theta_nodes: 256,
        }
    }
}

/// `a / b` if it is (within rounding) a positive integer.
pub(crate) fn integer_ratio(a: f64, b: f64) -> Option<usize> {
    if !(a > 0.0 && b > 0.0) {
        return None;
    }
    let r = a / b;
    let n = r.round();
    if n >= 1.0 && (r - n).abs() <= 1e-9 * n.max(1.0) {
        Some(n as usize)
    } else {
        None
    }
}

impl OpticalSystemConfig {
    /// Checks every invariant. The sampling gate runs first so an aliasing
    /// configuration is always reported as such.
    pub fn validate(&self) -> Result<()> {
        let lengths = [
            ("wavelength", self.wavelength),
            ("lenslet_pitch", self.lenslet_pitch),
            ("lenslet_focal", self.lenslet_focal),
            ("mask_pixel", self.mask_pixel),
            ("sensor_pixel", self.sensor_pixel),
        ];
        for (name, v) in lengths {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("na", self.na),
            ("magnification", self.magnification),
            ("refractive_index", self.refractive_index),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.na >= self.refractive_index {
            return Err(Error::config(format!(
                "na ({}) must be below the refractive index ({})",
                self.na, self.refractive_index
            )));
        }
        if self.psf_samples == 0 || self.psf_samples.is_multiple_of(2) {
            return Err(Error::config(format!(
                "psf_samples must be odd, got {}",
                self.psf_samples
            )));
        }
        if self.theta_nodes == 0 {
            return Err(Error::config(format!(
                "theta_nodes must be positive, got {}",
                self.theta_nodes
            )));
        }
        if self.sensor_pixels == 0 {
            return Err(Error::config("sensor_pixels must be positive"));
        }

        let check = validate_sampling(
            self.lenslet_focal,
            self.mask_pixel,
            self.psf_samples,
            self.wavelength,
        )?;
        if !check.passed {
            return Err(Error::Sampling {
                interval: self.mask_pixel,
                threshold: check.threshold,
                distance: self.lenslet_focal,
                samples: self.psf_samples,
            });
        }

        if integer_ratio(self.lenslet_pitch, self.mask_pixel).is_none() {
            return Err(Error::config(format!(
                "lenslet_pitch {} is not an integer multiple of mask_pixel {}",
                self.lenslet_pitch, self.mask_pixel
            )));
        }
        if integer_ratio(self.lenslet_pitch, self.sensor_pixel).is_none() {
            return Err(Error::config(format!(
                "lenslet_pitch {} is not an integer multiple of sensor_pixel {}",
                self.lenslet_pitch, self.sensor_pixel
            )));
        }
        let bin = self.binning_factor().ok_or_else(|| {
            Error::config(format!(
                "sensor_pixel {} is not an integer multiple of mask_pixel {}",
                self.sensor_pixel, self.mask_pixel
            ))
        })?;
        if !self.psf_samples.is_multiple_of(bin) || (self.psf_samples / bin).is_multiple_of(2) {
            return Err(Error::config(format!(
                "psf_samples {} must split into an odd number of {}-sample sensor bins",
                self.psf_samples, bin
            )));
        }
        Ok(())
    }

    /// Half-angle of the objective's acceptance cone, object side.
    pub fn alpha(&self) -> f64 {
        (self.na / self.refractive_index).asin()
    }

    /// Object-side wavenumber `2πn/λ`.
    pub fn wavenumber(&self) -> f64 {
        2.0 * PI * self.refractive_index / self.wavelength
    }

    /// Wavenumber behind the objective (air), used by the lenslet phase.
    pub fn image_wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    /// Simulation samples across one lenslet.
    pub fn samples_per_lenslet(&self) -> Option<usize> {
        integer_ratio(self.lenslet_pitch, self.mask_pixel)
    }

    /// Sensor pixels across one lenslet.
    pub fn pixels_per_lenslet(&self) -> Option<usize> {
        integer_ratio(self.lenslet_pitch, self.sensor_pixel)
    }

    /// Simulation samples per sensor pixel along one axis.
    pub fn binning_factor(&self) -> Option<usize> {
        integer_ratio(self.sensor_pixel, self.mask_pixel)
    }

    /// Side of the stored PSF window in sensor pixels.
    pub fn psf_window(&self) -> usize {
        self.psf_samples / self.binning_factor().unwrap_or(1)
    }

    /// Lenslet period referred to object space, `d / M`.
    pub fn object_period(&self) -> f64 {
        self.lenslet_pitch / self.magnification
    }

    /// Number of voxels across one object-space lenslet period.
    pub fn offsets_per_period(&self, voxel_pitch: f64) -> Result<usize> {
        integer_ratio(self.object_period(), voxel_pitch).ok_or_else(|| {
            Error::config(format!(
                "voxel pitch {voxel_pitch} does not tile the object-space lenslet period {}",
                self.object_period()
            ))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_defaults_validate() {
        let c = OpticalSystemConfig::default();
        c.validate().unwrap();
        assert_eq!(c.samples_per_lenslet(), Some(15));
        assert_eq!(c.pixels_per_lenslet(), Some(15));
        assert_eq!(c.binning_factor(), Some(1));
        assert_eq!(c.psf_window(), 151);
        assert_eq!(c.offsets_per_period(0.25e-6).unwrap(), 30);
        assert!((c.alpha() - PI / 6.0).abs() < 1e-15);
    }

    #[test]
    fn coarse_sampling_is_reported_first() {
        let c = OpticalSystemConfig {
            mask_pixel: 3e-6,
            ..Default::default()
        };
        match c.validate() {
            Err(Error::Sampling { threshold, .. }) => {
                assert!((threshold - 3.251e-6).abs() < 1e-9)
            }
            other => panic!("expected sampling error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_invariants() {
        let even = OpticalSystemConfig {
            psf_samples: 150,
            ..Default::default()
        };
        assert!(matches!(even.validate(), Err(Error::Config(_))));
        let na = OpticalSystemConfig {
            na: 1.2,
            ..Default::default()
        };
        assert!(matches!(na.validate(), Err(Error::Config(_))));
        let pitch = OpticalSystemConfig {
            lenslet_pitch: 155e-6,
            ..Default::default()
        };
        assert!(matches!(pitch.validate(), Err(Error::Config(_))));
        assert!(OpticalSystemConfig::default()
            .offsets_per_period(0.33e-6)
            .is_err());
    }

    #[test]
    fn binning_needs_odd_window() {
        // 5 µm simulation grid onto 10 µm pixels: 151 samples do not split.
        let c = OpticalSystemConfig {
            mask_pixel: 5e-6,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = OpticalSystemConfig {
            mask_pixel: 10e-6 / 3.0,
            sensor_pixel: 10e-6,
            psf_samples: 453,
            ..Default::default()
        };
        c.validate().unwrap();
        assert_eq!(c.psf_window(), 151);
    }
}
