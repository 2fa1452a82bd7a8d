//! Reconstruction quality: zero-mean normalized cross-correlation and the
//! occlusion / key-perturbation attack suite.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::{encrypt, occlude, Occlusion, OcclusionMode, SensorOptions, Volume};
use crate::inverse::{decrypt, perturb_key, DeconvSettings};
use crate::psf::PsfKey;

/// Peak of the normalized cross-correlation surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ncc {
    /// Correlation peak `C`, in [-1, 1].
    pub c: f64,
    /// Shift (rows, cols) of the reconstruction relative to the reference at the peak.
    pub offset: [i64; 2],
}

/// Default shift search radius for an axis of length `n`.
pub fn default_max_shift(n: usize) -> usize {
    (n / 8).max(1)
}

/// Inclusive-exclusive summed-area table with a zero border.
fn summed_area(a: &ArrayView2<f64>, f: impl Fn(f64) -> f64) -> Array2<f64> {
    let (h, w) = a.dim();
    let mut t = Array2::zeros((h + 1, w + 1));
    for r in 0..h {
        let mut row = 0.0;
        for c in 0..w {
            row += f(a[[r, c]]);
            t[[r + 1, c + 1]] = t[[r, c + 1]] + row;
        }
    }
    t
}

fn window_sum(t: &Array2<f64>, r0: usize, r1: usize, c0: usize, c1: usize) -> f64 {
    t[[r1, c1]] - t[[r0, c1]] - t[[r1, c0]] + t[[r0, c0]]
}

/// `C(s) = Σ(a−ā)(b_s−b̄_s) / (‖a−ā‖ ‖b_s−b̄_s‖)` over the overlap of `a`
/// and `b` shifted by `s`, maximized over `|s| ≤ max_shift` per axis.
/// Means are taken over the overlap.
pub fn normalized_correlation_within(
    reference: ArrayView2<f64>,
    reconstruction: ArrayView2<f64>,
    max_shift: [usize; 2],
) -> Result<Ncc> {
    let (h, w) = reference.dim();
    if reconstruction.dim() != (h, w) {
        return Err(Error::argument(format!(
            "shape mismatch: reference {:?}, reconstruction {:?}",
            reference.dim(),
            reconstruction.dim()
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::argument("empty arrays"));
    }
    let mean = |x: &ArrayView2<f64>| x.sum() / x.len() as f64;
    let (ma, mb) = (mean(&reference), mean(&reconstruction));
    let a = reference.mapv(|v| v - ma);
    let b = reconstruction.mapv(|v| v - mb);
    if a.iter().all(|&v| v == 0.0) || a.iter().any(|v| !v.is_finite()) {
        return Err(Error::argument("reference has zero variance"));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::argument("reconstruction is not finite"));
    }
    let (sa, saa) = (summed_area(&a.view(), |v| v), summed_area(&a.view(), |v| v * v));
    let (sb, sbb) = (summed_area(&b.view(), |v| v), summed_area(&b.view(), |v| v * v));
    let my = max_shift[0].min(h - 1) as i64;
    let mx = max_shift[1].min(w - 1) as i64;
    let shifts: Vec<(i64, i64)> = (-my..=my)
        .flat_map(|dy| (-mx..=mx).map(move |dx| (dy, dx)))
        .collect();
    let scores: Vec<f64> = shifts
        .par_iter()
        .map(|&(dy, dx)| {
            // a[r, c] pairs with b[r + dy, c + dx]
            let ar0 = (-dy).max(0) as usize;
            let ar1 = (h as i64 - dy).min(h as i64) as usize;
            let ac0 = (-dx).max(0) as usize;
            let ac1 = (w as i64 - dx).min(w as i64) as usize;
            let (br0, bc0) = ((ar0 as i64 + dy) as usize, (ac0 as i64 + dx) as usize);
            let (br1, bc1) = ((ar1 as i64 + dy) as usize, (ac1 as i64 + dx) as usize);
            let n = ((ar1 - ar0) * (ac1 - ac0)) as f64;
            let s_a = window_sum(&sa, ar0, ar1, ac0, ac1);
            let s_b = window_sum(&sb, br0, br1, bc0, bc1);
            let var_a = window_sum(&saa, ar0, ar1, ac0, ac1) - s_a * s_a / n;
            let var_b = window_sum(&sbb, br0, br1, bc0, bc1) - s_b * s_b / n;
            let mut s_ab = 0.0;
            for r in ar0..ar1 {
                let ra = a.row(r);
                let rb = b.row((r as i64 + dy) as usize);
                let (ra, rb) = (ra.as_slice().unwrap(), rb.as_slice().unwrap());
                s_ab += ra[ac0..ac1]
                    .iter()
                    .zip(&rb[bc0..bc1])
                    .map(|(x, y)| x * y)
                    .sum::<f64>();
            }
            let cov = s_ab - s_a * s_b / n;
            let denom = (var_a * var_b).sqrt();
            if denom > 1e-300 && var_a > 0.0 && var_b > 0.0 {
                (cov / denom).clamp(-1.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    let (best, &c) =
        scores.iter().enumerate().fold(
            (0, &f64::NEG_INFINITY),
            |acc, (i, s)| if *s > *acc.1 { (i, s) } else { acc },
        );
    let (dy, dx) = shifts[best];
    Ok(Ncc { c, offset: [dy, dx] })
}

/// [`normalized_correlation_within`] with the default search window.
pub fn normalized_correlation(reference: ArrayView2<f64>, reconstruction: ArrayView2<f64>) -> Result<Ncc> {
    let (h, w) = reference.dim();
    normalized_correlation_within(
        reference,
        reconstruction,
        [default_max_shift(h), default_max_shift(w)],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaneCorrelation {
    pub plane: usize,
    pub z: f64,
    pub c: f64,
    pub offset: [i64; 2],
}

/// Per-plane correlation of a reconstruction against a reference volume.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub planes: Vec<PlaneCorrelation>,
}

impl CorrelationReport {
    pub fn values(&self) -> Vec<f64> {
        self.planes.iter().map(|p| p.c).collect()
    }
}

/// Correlates every plane on which the reference has structure; constant
/// reference planes are skipped.
pub fn correlate_volumes(reference: &Volume, reconstruction: &Volume) -> Result<CorrelationReport> {
    if reference.values.dim() != reconstruction.values.dim() {
        return Err(Error::argument("volumes differ in shape"));
    }
    let mut planes = Vec::new();
    for (z, &zpos) in reference.grid.axial_positions.iter().enumerate() {
        let r = reference.values.index_axis(ndarray::Axis(0), z);
        let first = r[[0, 0]];
        if r.iter().all(|&v| v == first) {
            continue;
        }
        let ncc = normalized_correlation(r, reconstruction.values.index_axis(ndarray::Axis(0), z))?;
        planes.push(PlaneCorrelation {
            plane: z,
            z: zpos,
            c: ncc.c,
            offset: ncc.offset,
        });
    }
    Ok(CorrelationReport { planes })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSettings {
    pub deconv: DeconvSettings,
    pub occlusion_fractions: Vec<f64>,
    pub occlusion_mode: OcclusionMode,
    pub perturbation_fractions: Vec<f64>,
    pub perturbation_seed: u64,
}

impl Default for AttackSettings {
    fn default() -> Self {
        Self {
            deconv: DeconvSettings::default(),
            occlusion_fractions: vec![0.25, 0.375],
            occlusion_mode: OcclusionMode::Corner,
            perturbation_fractions: vec![0.05],
            perturbation_seed: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "attack", rename_all = "snake_case")]
pub enum Attack {
    Baseline,
    Occlusion { fraction: f64 },
    KeyPerturbation { fraction: f64, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct AttackEntry {
    pub name: String,
    pub attack: Attack,
    pub correlation: CorrelationReport,
    pub reconstruction: Volume,
}

#[derive(Debug, Clone, Serialize)]
struct EntryRecord<'a> {
    entry: &'a str,
    parameters: &'a Attack,
    planes: &'a [PlaneCorrelation],
    files: &'a [String],
}

impl AttackEntry {
    /// One line of the line-delimited JSON report.
    pub fn record_line(&self, files: &[String]) -> String {
        serde_json::to_string(&EntryRecord {
            entry: &self.name,
            parameters: &self.attack,
            planes: &self.correlation.planes,
            files,
        })
        .expect("report records serialize")
    }
}

/// Encrypts `scene` with the correct key, then decrypts it under each attack.
/// Entries come back in a fixed order: baseline, occlusions, perturbations.
pub fn run_attack_suite(scene: &Volume, key: &PsfKey, settings: &AttackSettings) -> Result<Vec<AttackEntry>> {
    let image = encrypt(scene, key, SensorOptions::default())?;
    let mut attacks = vec![Attack::Baseline];
    attacks.extend(
        settings
            .occlusion_fractions
            .iter()
            .map(|&fraction| Attack::Occlusion { fraction }),
    );
    attacks.extend(
        settings
            .perturbation_fractions
            .iter()
            .map(|&fraction| Attack::KeyPerturbation {
                fraction,
                seed: settings.perturbation_seed,
            }),
    );
    attacks
        .into_par_iter()
        .map(|attack| {
            let (name, volume) = match attack {
                Attack::Baseline => (
                    "baseline".to_string(),
                    decrypt(&image, key, &scene.grid, &settings.deconv)?.volume,
                ),
                Attack::Occlusion { fraction } => {
                    let img = if fraction == 0.0 {
                        image.clone()
                    } else {
                        occlude(&image, Occlusion::Fraction(fraction), settings.occlusion_mode)?
                    };
                    (
                        format!("occlusion_{fraction}"),
                        decrypt(&img, key, &scene.grid, &settings.deconv)?.volume,
                    )
                }
                Attack::KeyPerturbation { fraction, seed } => {
                    let bad = perturb_key(key, fraction, seed)?;
                    (
                        format!("perturbed_key_{fraction}"),
                        decrypt(&image, &bad, &scene.grid, &settings.deconv)?.volume,
                    )
                }
            };
            Ok(AttackEntry {
                name,
                attack,
                correlation: correlate_volumes(scene, &volume)?,
                reconstruction: volume,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeededStream, Stream};
    use proptest::prelude::*;

    fn noise(h: usize, w: usize, seed: u64) -> Array2<f64> {
        let mut s = SeededStream::new(seed, Stream::Occlusion);
        Array2::from_shape_simple_fn((h, w), || s.unit())
    }

    fn blob(h: usize, w: usize) -> Array2<f64> {
        Array2::from_shape_fn((h, w), |(r, c)| {
            let (y, x) = (r as f64 - h as f64 * 0.4, c as f64 - w as f64 * 0.55);
            (-(x * x + y * y) / 20.0).exp() + if (r / 3 + c / 5) % 2 == 0 { 0.3 } else { 0.0 }
        })
    }

    #[test]
    fn self_correlation_is_one_at_zero_shift() {
        let a = blob(32, 40);
        let r = normalized_correlation(a.view(), a.view()).unwrap();
        assert!((r.c - 1.0).abs() < 1e-12);
        assert_eq!(r.offset, [0, 0]);
    }

    #[test]
    fn affine_invariant() {
        let a = blob(32, 32);
        let b = a.mapv(|v| 2.5 * v + 7.0);
        let r = normalized_correlation(a.view(), b.view()).unwrap();
        assert!((r.c - 1.0).abs() < 1e-9);
    }

    #[test]
    fn finds_a_shifted_copy() {
        let a = blob(40, 40);
        let mut b = Array2::zeros((40, 40));
        for r in 0..40 {
            for c in 0..40 {
                if r >= 2 && c + 3 < 40 {
                    b[[r, c]] = a[[r - 2, c + 3]];
                }
            }
        }
        let res = normalized_correlation(a.view(), b.view()).unwrap();
        assert_eq!(res.offset, [2, -3]);
        assert!((res.c - 1.0).abs() < 1e-9);
    }

    #[test]
    fn independent_noise_correlates_weakly() {
        let reference = blob(128, 128);
        let trials = 100;
        let total: f64 = (0..trials)
            .map(|t| {
                normalized_correlation(reference.view(), noise(128, 128, t).view())
                    .unwrap()
                    .c
            })
            .sum();
        let mean = total / trials as f64;
        assert!(mean < 0.2, "mean C under the null = {mean}");
    }

    #[test]
    fn constant_reference_is_rejected() {
        let a = Array2::from_elem((8, 8), 3.0);
        assert!(matches!(
            normalized_correlation(a.view(), blob(8, 8).view()),
            Err(Error::Argument(_))
        ));
        assert!(normalized_correlation(blob(8, 8).view(), blob(8, 9).view()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn positive_affine_maps_do_not_change_c(
            seed in 0u64..1000,
            (sa, oa, sb, ob) in (0.1f64..10.0, -5.0f64..5.0, 0.1f64..10.0, -5.0f64..5.0),
        ) {
            let a = noise(16, 16, seed);
            let b = noise(16, 16, seed + 1000).mapv(|v| v + 0.5) + &a;
            let base = normalized_correlation(a.view(), b.view()).unwrap();
            let moved = normalized_correlation(
                a.mapv(|v| sa * v + oa).view(),
                b.mapv(|v| sb * v + ob).view(),
            ).unwrap();
            prop_assert!((base.c - moved.c).abs() < 1e-9);
            prop_assert!(base.c <= 1.0);
        }

        #[test]
        fn symmetric_up_to_offset_negation(seed in 0u64..1000) {
            let a = noise(12, 12, seed);
            let b = noise(12, 12, seed + 7).mapv(|v| 0.5 * v) + &a.mapv(|v| v * v);
            let ab = normalized_correlation(a.view(), b.view()).unwrap();
            let ba = normalized_correlation(b.view(), a.view()).unwrap();
            prop_assert!((ab.c - ba.c).abs() < 1e-9);
            prop_assert_eq!(ab.offset, [-ba.offset[0], -ba.offset[1]]);
        }
    }
}
