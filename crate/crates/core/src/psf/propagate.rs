use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::psf::config::OpticalSystemConfig;
use crate::psf::field::{fft_index, ComplexField, Fft2};
use crate::psf::sampling::validate_sampling;

/// Angular-spectrum transfer function
/// `exp[i2π (z/λ) sqrt(1 − (λf_x)² − (λf_y)²)]` in FFT bin order, with
/// `f = m / (N Δx)`. Evanescent bins are zero.
pub fn transfer_function(samples: usize, interval: f64, distance: f64, wavelength: f64) -> Array2<Complex64> {
    let df = 1.0 / (samples as f64 * interval);
    let lam_f: Vec<f64> = (0..samples)
        .map(|k| wavelength * fft_index(k, samples) as f64 * df)
        .collect();
    let phase_scale = 2.0 * PI * distance / wavelength;
    Array2::from_shape_fn((samples, samples), |(r, c)| {
        let arg = 1.0 - lam_f[r] * lam_f[r] - lam_f[c] * lam_f[c];
        if arg < 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::from_polar(1.0, phase_scale * arg.sqrt())
        }
    })
}

/// Reusable propagator for one grid shape and distance.
#[derive(Clone)]
pub struct Propagator {
    fft: Fft2,
    transfer: Array2<Complex64>,
}

impl Propagator {
    pub fn new(samples: usize, interval: f64, distance: f64, wavelength: f64) -> Result<Self> {
        let check = validate_sampling(distance.abs(), interval, samples, wavelength)?;
        if !check.passed {
            return Err(Error::Sampling {
                interval,
                threshold: check.threshold,
                distance: distance.abs(),
                samples,
            });
        }
        Ok(Self {
            fft: Fft2::new(samples, samples),
            transfer: transfer_function(samples, interval, distance, wavelength),
        })
    }

    pub fn apply(&self, values: &mut Array2<Complex64>) {
        self.fft.forward(values);
        *values *= &self.transfer;
        self.fft.inverse(values);
        let norm = 1.0 / values.len() as f64;
        values.mapv_inplace(|z| z * norm);
    }
}

/// Free-space propagation of `field` over `distance` (may be negative).
pub fn propagate(field: &ComplexField, distance: f64, config: &OpticalSystemConfig) -> Result<ComplexField> {
    let (rows, cols) = field.values.dim();
    if rows != cols {
        return Err(Error::argument(format!(
            "field must be square, got {rows}x{cols}"
        )));
    }
    let prop = Propagator::new(rows, field.sample_interval, distance, config.wavelength)?;
    let mut values = field.values.as_standard_layout().into_owned();
    prop.apply(&mut values);
    Ok(ComplexField {
        values,
        sample_interval: field.sample_interval,
        center: field.center,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeededStream, Stream};

    fn random_field(n: usize, seed: u64) -> ComplexField {
        let mut s = SeededStream::new(seed, Stream::Occlusion);
        ComplexField {
            values: Array2::from_shape_simple_fn((n, n), || {
                Complex64::new(s.uniform(-1.0, 1.0), s.uniform(-1.0, 1.0))
            }),
            sample_interval: 10e-6,
            center: [0.0, 0.0],
        }
    }

    fn max_diff(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn zero_distance_is_identity() {
        let c = OpticalSystemConfig::default();
        let f = random_field(151, 1);
        let g = propagate(&f, 0.0, &c).unwrap();
        assert!(max_diff(&f.values, &g.values) < 1e-12);
    }

    #[test]
    fn plane_wave_only_picks_up_a_phase() {
        let c = OpticalSystemConfig::default();
        let f = ComplexField {
            values: Array2::from_elem((151, 151), Complex64::new(0.3, -0.4)),
            sample_interval: 10e-6,
            center: [0.0, 0.0],
        };
        let g = propagate(&f, c.lenslet_focal, &c).unwrap();
        let ratio = g.values[[0, 0]] / f.values[[0, 0]];
        assert!((ratio.norm() - 1.0).abs() < 1e-12);
        for (a, b) in f.values.iter().zip(g.values.iter()) {
            assert!((a * ratio - b).norm() < 1e-12);
        }
        assert!((g.energy() / f.energy() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn evanescent_bins_are_dropped() {
        // 0.2 µm sampling at 532 nm puts the outer bins past cutoff.
        let h = transfer_function(64, 0.2e-6, 1e-6, 532e-9);
        assert_eq!(h[[32, 32]], Complex64::new(0.0, 0.0));
        assert!((h[[0, 0]].norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_aliasing_distance() {
        let c = OpticalSystemConfig::default();
        let f = random_field(151, 2);
        assert!(matches!(propagate(&f, 1.0, &c), Err(Error::Sampling { .. })));
    }

    /// Random field whose spectrum is confined to the inner half of the band.
    fn band_limited(n: usize, seed: u64) -> ComplexField {
        let mut f = random_field(n, seed);
        let fft = Fft2::new(n, n);
        fft.forward(&mut f.values);
        for ((r, c), v) in f.values.indexed_iter_mut() {
            let (kr, kc) = (fft_index(r, n).abs(), fft_index(c, n).abs());
            if 4 * kr.max(kc) as usize > n {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        fft.inverse(&mut f.values);
        let norm = 1.0 / (n * n) as f64;
        f.values.mapv_inplace(|z| z * norm);
        f
    }

    fn energy(a: &Array2<Complex64>) -> f64 {
        a.iter().map(|z| z.norm_sqr()).sum()
    }

    #[test]
    fn propagation_conserves_energy() {
        let c = OpticalSystemConfig::default();
        for seed in 0..3 {
            let f = band_limited(151, seed);
            let out = propagate(&f, c.lenslet_focal, &c).unwrap();
            let (e0, e1) = (energy(&f.values), energy(&out.values));
            assert!((e1 - e0).abs() <= 1e-9 * e0, "{e0} -> {e1}");
        }
    }

    #[test]
    fn backward_propagation_inverts_forward() {
        let c = OpticalSystemConfig::default();
        for seed in 10..13 {
            let f = band_limited(151, seed);
            let there = propagate(&f, c.lenslet_focal, &c).unwrap();
            let back = propagate(&there, -c.lenslet_focal, &c).unwrap();
            let scale = f.values.iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(max_diff(&back.values, &f.values) <= 1e-9 * scale);
        }
    }
}
