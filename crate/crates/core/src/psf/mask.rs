use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::psf::config::{integer_ratio, OpticalSystemConfig};
use crate::psf::field::{ComplexField, Grid};
use crate::psf::lenslet::cell_local_indices;
use crate::rng::{SeededStream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    None,
    RandomPhase,
    RandomAmplitude,
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskKind::None => "none",
            MaskKind::RandomPhase => "random_phase",
            MaskKind::RandomAmplitude => "random_amplitude",
        })
    }
}

impl FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(MaskKind::None),
            "random_phase" | "phase" => Ok(MaskKind::RandomPhase),
            "random_amplitude" | "amplitude" => Ok(MaskKind::RandomAmplitude),
            other => Err(Error::argument(format!("unknown mask kind '{other}'"))),
        }
    }
}

/// Value law for amplitude masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeLaw {
    /// 0 or 1 with equal probability.
    Bernoulli,
    /// Uniform on [0, 1).
    Uniform,
}

impl fmt::Display for AmplitudeLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AmplitudeLaw::Bernoulli => "bernoulli",
            AmplitudeLaw::Uniform => "uniform",
        })
    }
}

impl FromStr for AmplitudeLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli" => Ok(AmplitudeLaw::Bernoulli),
            "uniform" => Ok(AmplitudeLaw::Uniform),
            other => Err(Error::argument(format!("unknown amplitude law '{other}'"))),
        }
    }
}

/// Random mask description. The seed fully determines the realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub seed: u64,
    /// Feature size of the mask, meters. Must divide the lenslet pitch.
    pub mask_pixel: f64,
    pub amplitude_law: AmplitudeLaw,
    /// Seed of the second amplitude mask in front of the sensor, if any.
    pub sensor_mask_seed: Option<u64>,
}

impl MaskSpec {
    pub fn none() -> Self {
        Self {
            kind: MaskKind::None,
            seed: 0,
            mask_pixel: 10e-6,
            amplitude_law: AmplitudeLaw::Bernoulli,
            sensor_mask_seed: None,
        }
    }

    pub fn phase(seed: u64, mask_pixel: f64) -> Self {
        Self {
            kind: MaskKind::RandomPhase,
            seed,
            mask_pixel,
            ..Self::none()
        }
    }

    pub fn amplitude(seed: u64, mask_pixel: f64, sensor_mask_seed: Option<u64>) -> Self {
        Self {
            kind: MaskKind::RandomAmplitude,
            seed,
            mask_pixel,
            sensor_mask_seed,
            ..Self::none()
        }
    }

    fn pixels_per_lenslet(&self, config: &OpticalSystemConfig) -> Result<usize> {
        integer_ratio(config.lenslet_pitch, self.mask_pixel).ok_or_else(|| {
            Error::config(format!(
                "mask pixel {} does not divide the lenslet pitch {}",
                self.mask_pixel, config.lenslet_pitch
            ))
        })
    }

    fn draw_amplitude(&self, s: &mut SeededStream) -> f64 {
        match self.amplitude_law {
            AmplitudeLaw::Bernoulli => {
                if s.bernoulli_half() {
                    1.0
                } else {
                    0.0
                }
            }
            AmplitudeLaw::Uniform => s.unit(),
        }
    }

    /// One lenslet's worth of mask pixels, row-major from the stream.
    pub fn lenslet_pattern(&self, config: &OpticalSystemConfig) -> Result<Array2<Complex64>> {
        let m = self.pixels_per_lenslet(config)?;
        let mut s = SeededStream::new(self.seed, Stream::LensletMask);
        let pattern = match self.kind {
            MaskKind::None => Array2::from_elem((m, m), Complex64::new(1.0, 0.0)),
            MaskKind::RandomPhase => Array2::from_shape_simple_fn((m, m), || {
                let beta = s.uniform(-0.5, 0.5);
                Complex64::from_polar(1.0, -std::f64::consts::PI * beta)
            }),
            MaskKind::RandomAmplitude => {
                Array2::from_shape_simple_fn((m, m), || Complex64::new(self.draw_amplitude(&mut s), 0.0))
            }
        };
        Ok(pattern)
    }

    /// Per-lenslet pattern of the sensor-plane amplitude mask, if configured.
    pub fn sensor_pattern(&self, config: &OpticalSystemConfig) -> Result<Option<Array2<f64>>> {
        let Some(seed) = self.sensor_mask_seed else {
            return Ok(None);
        };
        let m = self.pixels_per_lenslet(config)?;
        let mut s = SeededStream::new(seed, Stream::SensorMask);
        Ok(Some(Array2::from_shape_simple_fn((m, m), || {
            self.draw_amplitude(&mut s)
        })))
    }
}

/// Maps grid samples to mask pixels of a pattern tiled with the lenslet pitch.
fn tile<T: Copy>(
    pattern: &Array2<T>,
    mask_pixel: f64,
    grid: &Grid,
    config: &OpticalSystemConfig,
) -> Result<Array2<T>> {
    let (per_cell, local) = cell_local_indices(grid, config.lenslet_pitch)?;
    let per_pixel = integer_ratio(mask_pixel, grid.interval).ok_or_else(|| {
        Error::config(format!(
            "mask pixel {mask_pixel} is not a multiple of the grid interval {}",
            grid.interval
        ))
    })? as i64;
    let half = per_cell as i64 / 2;
    let idx: Vec<usize> = local.iter().map(|&l| ((l + half) / per_pixel) as usize).collect();
    let n = grid.samples;
    Ok(Array2::from_shape_fn((n, n), |(r, c)| pattern[[idx[r], idx[c]]]))
}

/// The lenslet-plane mask `R(x)` on `grid`, identical behind every lenslet.
pub fn random_mask(spec: &MaskSpec, grid: &Grid, config: &OpticalSystemConfig) -> Result<ComplexField> {
    let pattern = spec.lenslet_pattern(config)?;
    Ok(ComplexField {
        values: tile(&pattern, spec.mask_pixel, grid, config)?,
        sample_interval: grid.interval,
        center: grid.center,
    })
}

/// Sensor-plane amplitude mask on `grid`, or `None` when not configured.
pub fn sensor_mask(
    spec: &MaskSpec,
    grid: &Grid,
    config: &OpticalSystemConfig,
) -> Result<Option<Array2<f64>>> {
    match spec.sensor_pattern(config)? {
        Some(p) => Ok(Some(tile(&p, spec.mask_pixel, grid, config)?)),
        None => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Kolmogorov–Smirnov distance of `xs` from U[lo, hi].
    fn ks_uniform(mut xs: Vec<f64>, lo: f64, hi: f64) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
                f64::max(f - i as f64 / n, (i + 1) as f64 / n - f)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn phase_values_are_uniform() {
        let c = OpticalSystemConfig::default();
        let spec = MaskSpec::phase(2024, 1e-6);
        let pattern = spec.lenslet_pattern(&c).unwrap();
        assert_eq!(pattern.len(), 150 * 150);
        // R = exp(-iπβ), so β = -arg(R)/π
        let beta: Vec<f64> = pattern.iter().map(|z| -z.arg() / PI).collect();
        assert!(beta.iter().all(|b| (-0.5..=0.5).contains(b)));
        let n = beta.len() as f64;
        // 1% critical value of the one-sample KS statistic
        assert!(ks_uniform(beta, -0.5, 0.5) < 1.63 / n.sqrt());
    }

    #[test]
    fn uniform_amplitudes_are_uniform() {
        let c = OpticalSystemConfig::default();
        let mut spec = MaskSpec::amplitude(77, 1e-6, None);
        spec.amplitude_law = AmplitudeLaw::Uniform;
        let values: Vec<f64> = spec.lenslet_pattern(&c).unwrap().iter().map(|z| z.re).collect();
        let n = values.len() as f64;
        assert!(ks_uniform(values, 0.0, 1.0) < 1.63 / n.sqrt());
    }

    #[test]
    fn same_seed_same_mask() {
        let c = OpticalSystemConfig::default();
        let grid = Grid::centered(151, c.mask_pixel);
        let spec = MaskSpec::phase(42, 10e-6);
        let a = random_mask(&spec, &grid, &c).unwrap();
        let b = random_mask(&spec, &grid, &c).unwrap();
        assert_eq!(a, b);
        let other = random_mask(&MaskSpec::phase(43, 10e-6), &grid, &c).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn phase_mask_is_unit_modulus_and_tiled() {
        let c = OpticalSystemConfig::default();
        let grid = Grid::centered(151, c.mask_pixel);
        let r = random_mask(&MaskSpec::phase(3, 10e-6), &grid, &c).unwrap();
        assert!(r.values.iter().all(|z| (z.norm() - 1.0).abs() < 1e-15));
        for row in 0..151 {
            for col in 0..136 {
                assert_eq!(r.values[[row, col]], r.values[[row, col + 15]]);
                if row < 136 {
                    assert_eq!(r.values[[row, col]], r.values[[row + 15, col]]);
                }
            }
        }
    }

    #[test]
    fn coarse_mask_pixels_cover_several_samples() {
        let c = OpticalSystemConfig::default();
        let grid = Grid::centered(151, c.mask_pixel);
        let r = random_mask(&MaskSpec::phase(3, 50e-6), &grid, &c).unwrap();
        // cell spans local indices -7..=7 → columns 68..=82 around the middle
        let row = 75;
        for col in 68..73 {
            assert_eq!(r.values[[row, col]], r.values[[row, 68]]);
        }
        assert_ne!(r.values[[row, 68]], r.values[[row, 73]]);
    }

    #[test]
    fn no_mask_is_all_ones() {
        let c = OpticalSystemConfig::default();
        let r = random_mask(&MaskSpec::none(), &Grid::centered(31, c.mask_pixel), &c).unwrap();
        assert!(r.values.iter().all(|&z| z == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn amplitude_masks_follow_their_law() {
        let c = OpticalSystemConfig::default();
        let mut spec = MaskSpec::amplitude(9, 1e-6, Some(10));
        let p = spec.lenslet_pattern(&c).unwrap();
        assert!(p.iter().all(|z| z.im == 0.0 && (z.re == 0.0 || z.re == 1.0)));
        let ones = p.iter().filter(|z| z.re == 1.0).count() as f64 / p.len() as f64;
        assert!((ones - 0.5).abs() < 0.02, "{ones}");
        let sensor = spec.sensor_pattern(&c).unwrap().unwrap();
        assert_ne!(sensor, p.mapv(|z| z.re));

        spec.amplitude_law = AmplitudeLaw::Uniform;
        let p = spec.lenslet_pattern(&c).unwrap();
        assert!(p.iter().all(|z| (0.0..1.0).contains(&z.re)));
    }

    #[test]
    fn unknown_kind_is_an_argument_error() {
        assert!(matches!(
            "holographic".parse::<MaskKind>(),
            Err(Error::Argument(_))
        ));
        assert_eq!("random_phase".parse::<MaskKind>().unwrap(), MaskKind::RandomPhase);
    }

    #[test]
    fn mask_pixel_must_divide_pitch() {
        let c = OpticalSystemConfig::default();
        let grid = Grid::centered(31, c.mask_pixel);
        assert!(random_mask(&MaskSpec::phase(1, 40e-6), &grid, &c).is_err());
    }
}
