//! Scalar Debye field of a point emitter at the native image plane.
//!
//! `U(v, u) = exp(-iu / (4 sin²(α/2))) ∫₀^α cos^½θ · exp(iu sin²(θ/2) / (2 sin²(α/2)))
//!            · J₀(v sinθ / sinα) · sinθ dθ`
//!
//! with `v = k·r·sinα` (r the object-referred lateral distance) and
//! `u = 4k·z·sin²(α/2)`. The constant `M / (f_obj² λ²)` in front is dropped;
//! PSFs are normalized later.

use std::collections::HashMap;
use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::psf::config::OpticalSystemConfig;
use crate::psf::field::{ComplexField, Grid};
use crate::psf::sampling::validate_sampling;

/// Gauss–Legendre nodes on `[-1, 1]`, by Newton iteration on the
/// three-term recurrence. Returns `(nodes, weights)` in increasing order.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut t = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, t);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let (p, pm1) = if n == 1 { (t, 1.0) } else { (p1, p0) };
            dp = n as f64 * (t * p - pm1) / (t * t - 1.0);
            let step = p / dp;
            t -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let wt = 2.0 / ((1.0 - t * t) * dp * dp);
        x[n - 1 - i] = t;
        x[i] = -t;
        w[i] = wt;
        w[n - 1 - i] = wt;
    }
    (x, w)
}

/// Gauss–Legendre nodes over `[0, α]` with the z-independent part of the
/// integrand folded into the weights.
#[derive(Debug, Clone)]
pub struct DebyeQuadrature {
    sin2_half_alpha: f64,
    /// `w · cos^½θ · sinθ`
    weights: Vec<f64>,
    /// `sin²(θ/2) / (2 sin²(α/2))`
    defocus: Vec<f64>,
    /// `sinθ / sinα`
    radial: Vec<f64>,
}

impl DebyeQuadrature {
    pub fn new(alpha: f64, nodes: usize) -> Self {
        assert!(nodes >= 1, "quadrature needs at least one node");
        let sin_alpha = alpha.sin();
        let sin2_half_alpha = (alpha / 2.0).sin().powi(2);
        let (xs, ws) = gauss_legendre(nodes);
        let mut weights = Vec::with_capacity(nodes);
        let mut defocus = Vec::with_capacity(nodes);
        let mut radial = Vec::with_capacity(nodes);
        for (x, w) in xs.into_iter().zip(ws) {
            let theta = alpha / 2.0 * (x + 1.0);
            weights.push(w * alpha / 2.0 * theta.cos().sqrt() * theta.sin());
            defocus.push((theta / 2.0).sin().powi(2) / (2.0 * sin2_half_alpha));
            radial.push(theta.sin() / sin_alpha);
        }
        Self {
            sin2_half_alpha,
            weights,
            defocus,
            radial,
        }
    }

    pub fn for_config(config: &OpticalSystemConfig) -> Self {
        Self::new(config.alpha(), config.theta_nodes)
    }

    /// Specializes the quadrature to one axial coordinate `u`.
    pub fn plane(&self, u: f64) -> DebyePlane {
        let coeffs = self
            .weights
            .iter()
            .zip(&self.defocus)
            .map(|(&w, &s)| Complex64::from_polar(w, u * s))
            .collect();
        DebyePlane {
            prefactor: Complex64::from_polar(1.0, -u / (4.0 * self.sin2_half_alpha)),
            coeffs,
            radial: self.radial.clone(),
        }
    }
}

/// Debye integral at a fixed `u`, as a function of `v` only.
#[derive(Debug, Clone)]
pub struct DebyePlane {
    prefactor: Complex64,
    coeffs: Vec<Complex64>,
    radial: Vec<f64>,
}

impl DebyePlane {
    pub fn eval(&self, v: f64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        if v == 0.0 {
            for c in &self.coeffs {
                acc += c;
            }
        } else {
            for (c, &rho) in self.coeffs.iter().zip(&self.radial) {
                acc += c * libm::j0(v * rho);
            }
        }
        self.prefactor * acc
    }
}

/// Normalized axial coordinate of a point at depth `z` (object side).
pub fn axial_coordinate(z: f64, config: &OpticalSystemConfig) -> f64 {
    4.0 * config.wavenumber() * z * (config.alpha() / 2.0).sin().powi(2)
}

/// `v` per meter of object-referred lateral distance.
pub fn radial_scale(config: &OpticalSystemConfig) -> f64 {
    config.wavenumber() * config.alpha().sin()
}

/// Field of a point source at `p = (x, y, z)` (object space, meters) sampled
/// on `grid` (lenslet-plane coordinates, meters). Sensor-side coordinates are
/// divided by the magnification before comparison with `p`.
pub fn debye_field(p: [f64; 3], grid: &Grid, config: &OpticalSystemConfig) -> Result<ComplexField> {
    grid.validate()?;
    if p.iter().any(|c| !c.is_finite()) {
        return Err(Error::argument(format!("point {p:?} is not finite")));
    }
    if config.na >= config.refractive_index {
        return Err(Error::config("na must be below the refractive index"));
    }
    let check = validate_sampling(
        config.lenslet_focal,
        grid.interval,
        grid.samples,
        config.wavelength,
    )?;
    if !check.passed {
        return Err(Error::Sampling {
            interval: grid.interval,
            threshold: check.threshold,
            distance: config.lenslet_focal,
            samples: grid.samples,
        });
    }
    let plane = DebyeQuadrature::for_config(config).plane(axial_coordinate(p[2], config));
    let values = sample_point(&plane, p, grid, config);
    if let Some(bad) = values.iter().find(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::Numerical(format!(
            "Debye quadrature produced {bad} for point {p:?}"
        )));
    }
    Ok(ComplexField {
        values,
        sample_interval: grid.interval,
        center: grid.center,
    })
}

/// Evaluates `plane` on the grid, sharing work between samples at equal radius.
pub(crate) fn sample_point(
    plane: &DebyePlane,
    p: [f64; 3],
    grid: &Grid,
    config: &OpticalSystemConfig,
) -> Array2<Complex64> {
    let n = grid.samples;
    let m = config.magnification;
    let scale = radial_scale(config);
    let dx: Vec<f64> = (0..n).map(|c| grid.x(c) / m - p[0]).collect();
    let dy: Vec<f64> = (0..n).map(|r| grid.y(r) / m - p[1]).collect();
    let mut cache: HashMap<u64, Complex64> = HashMap::new();
    Array2::from_shape_fn((n, n), |(r, c)| {
        let r2 = dx[c] * dx[c] + dy[r] * dy[r];
        *cache
            .entry(r2.to_bits())
            .or_insert_with(|| plane.eval(scale * r2.sqrt()))
    })
}

/// Integer lattice shared by simulation samples and voxel offsets.
///
/// When the object-referred sample spacing `Δ/M` and the voxel pitch are
/// commensurate, every distance between a sample and a voxel offset is
/// `q·sqrt(X² + Y²)` for integers `X, Y`, so one table over `X² + Y²` serves a
/// whole z-plane.
#[derive(Debug, Clone)]
pub(crate) struct OffsetLattice {
    /// Lattice unit in object space, meters.
    pub unit: f64,
    /// Lattice coordinate of sample `i` relative to offset `a`: `[a][i]`.
    pub coords: Vec<Vec<i64>>,
    /// Squared radii that occur, flagged by index.
    pub needed: Vec<bool>,
}

impl OffsetLattice {
    pub fn new(samples: usize, sample_obj: f64, voxel_pitch: f64, offsets: usize) -> Option<Self> {
        let ratio = sample_obj / voxel_pitch;
        let denom = (1..=1000u32).find(|&s| {
            let t = ratio * s as f64;
            (t - t.round()).abs() <= 1e-9 * t.max(1.0)
        })? as i64;
        let numer = (ratio * denom as f64).round() as i64;
        // Offsets sit at half-integer multiples of the pitch, hence the 2.
        let unit = voxel_pitch / (2 * denom) as f64;
        let mid = (samples / 2) as i64;
        let coords: Vec<Vec<i64>> = (0..offsets as i64)
            .map(|a| {
                let off = (2 * a + 1 - offsets as i64) * denom;
                (0..samples as i64).map(|i| (i - mid) * 2 * numer - off).collect()
            })
            .collect();
        let mut distinct: Vec<i64> = coords.iter().flatten().map(|x| x.abs()).collect();
        distinct.sort_unstable();
        distinct.dedup();
        let max = *distinct.last()?;
        let len = usize::try_from(2 * max * max + 1).ok()?;
        if len > 1 << 26 {
            return None;
        }
        let mut needed = vec![false; len];
        for &x in &distinct {
            for &y in &distinct {
                needed[(x * x + y * y) as usize] = true;
            }
        }
        Some(Self { unit, coords, needed })
    }

    /// Field values for every needed squared radius on one z-plane.
    pub fn table(&self, plane: &DebyePlane, config: &OpticalSystemConfig) -> Vec<Complex64> {
        use rayon::prelude::*;
        let scale = radial_scale(config) * self.unit;
        self.needed
            .par_iter()
            .enumerate()
            .map(|(n2, &need)| {
                if need {
                    plane.eval(scale * (n2 as f64).sqrt())
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect()
    }

    /// Field for offset `(a, b)` (column, row) read from a plane table.
    pub fn field(&self, table: &[Complex64], a: usize, b: usize) -> Array2<Complex64> {
        let xs = &self.coords[a];
        let ys = &self.coords[b];
        Array2::from_shape_fn((ys.len(), xs.len()), |(r, c)| {
            table[(xs[c] * xs[c] + ys[r] * ys[r]) as usize]
        })
    }
}
