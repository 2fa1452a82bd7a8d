//! Flat `key = value` run configuration.
//!
//! Lengths are in meters. Lines starting with `#` are comments. Keys not
//! present keep their defaults, which reproduce the reference system:
//!
//! | key | meaning |
//! |-----|---------|
//! | `optics.na` | numerical aperture of the objective |
//! | `optics.magnification` | objective magnification |
//! | `optics.refractive_index` | immersion index |
//! | `optics.wavelength` | emission wavelength |
//! | `optics.lenslet_pitch` | microlens pitch |
//! | `optics.lenslet_focal` | microlens focal length (lenslet to sensor distance) |
//! | `optics.sample_interval` | simulation sampling interval at the lenslet plane |
//! | `optics.sensor_pixel` | camera pixel size |
//! | `optics.psf_samples` | lateral samples of the simulated window (odd) |
//! | `optics.sensor_pixels` | camera side length in pixels |
//! | `optics.theta_nodes` | quadrature nodes over the aperture angle |
//! | `mask.kind` | `none`, `phase` or `amplitude` |
//! | `mask.seed` | mask seed |
//! | `mask.pixel` | mask feature size |
//! | `mask.amplitude_law` | `bernoulli` or `uniform` |
//! | `mask.sensor_seed` | seed of the sensor-side amplitude mask, or `none` |
//! | `volume.nx`, `volume.ny` | lateral voxel counts |
//! | `volume.pitch` | lateral voxel pitch |
//! | `volume.z_start`, `volume.z_step`, `volume.planes` | axial sampling |
//! | `volume.z_positions` | explicit comma-separated plane positions, or `none`; replaces the three keys above |
//! | `deconv.iterations` | deconvolution iterations |
//! | `deconv.floor` | denominator floor relative to its maximum |
//! | `deconv.threshold` | final threshold as a fraction of the maximum |
//! | `deconv.init` | `ones` or `adjoint` |
//! | `deconv.occlusion` | `masked` or `zeros` |
//! | `sensor.bits` | camera bit depth, or `none` for floating point |

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::forward::VolumeGrid;
use crate::inverse::{DeconvSettings, Initialization, OcclusionHandling};
use crate::psf::{MaskSpec, OpticalSystemConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeSpec {
    pub nx: usize,
    pub ny: usize,
    pub pitch: f64,
    pub z_start: f64,
    pub z_step: f64,
    pub planes: usize,
    pub z_positions: Option<Vec<f64>>,
}

impl Default for VolumeSpec {
    fn default() -> Self {
        Self {
            nx: 128,
            ny: 128,
            pitch: 0.25e-6,
            z_start: -60e-6,
            z_step: 2e-6,
            planes: 26,
            z_positions: None,
        }
    }
}

impl VolumeSpec {
    pub fn z_planes(&self) -> Vec<f64> {
        if let Some(z) = &self.z_positions {
            return z.clone();
        }
        (0..self.planes)
            .map(|i| self.z_start + i as f64 * self.z_step)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub optics: OpticalSystemConfig,
    pub mask: MaskSpec,
    pub volume: VolumeSpec,
    pub deconv: DeconvSettings,
    pub sensor_bits: Option<u32>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            optics: OpticalSystemConfig::default(),
            mask: MaskSpec::phase(1, 10e-6),
            volume: VolumeSpec::default(),
            deconv: DeconvSettings::default(),
            sensor_bits: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("cannot parse {key} = '{value}'")))
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let o = &mut self.optics;
        match key {
            "optics.na" => o.na = parse(key, value)?,
            "optics.magnification" => o.magnification = parse(key, value)?,
            "optics.refractive_index" => o.refractive_index = parse(key, value)?,
            "optics.wavelength" => o.wavelength = parse(key, value)?,
            "optics.lenslet_pitch" => o.lenslet_pitch = parse(key, value)?,
            "optics.lenslet_focal" => o.lenslet_focal = parse(key, value)?,
            "optics.sample_interval" => o.mask_pixel = parse(key, value)?,
            "optics.sensor_pixel" => o.sensor_pixel = parse(key, value)?,
            "optics.psf_samples" => o.psf_samples = parse(key, value)?,
            "optics.sensor_pixels" => o.sensor_pixels = parse(key, value)?,
            "optics.theta_nodes" => o.theta_nodes = parse(key, value)?,
            "mask.kind" => {
                self.mask.kind = value
                    .parse()
                    .map_err(|_| Error::config(format!("unknown mask kind '{value}'")))?
            }
            "mask.seed" => self.mask.seed = parse(key, value)?,
            "mask.pixel" => self.mask.mask_pixel = parse(key, value)?,
            "mask.amplitude_law" => {
                self.mask.amplitude_law = value
                    .parse()
                    .map_err(|_| Error::config(format!("unknown amplitude law '{value}'")))?
            }
            "mask.sensor_seed" => self.mask.sensor_mask_seed = optional(key, value)?,
            "volume.nx" => self.volume.nx = parse(key, value)?,
            "volume.ny" => self.volume.ny = parse(key, value)?,
            "volume.pitch" => self.volume.pitch = parse(key, value)?,
            "volume.z_start" => self.volume.z_start = parse(key, value)?,
            "volume.z_step" => self.volume.z_step = parse(key, value)?,
            "volume.planes" => self.volume.planes = parse(key, value)?,
            "volume.z_positions" => {
                self.volume.z_positions = match value {
                    "none" => None,
                    list => Some(
                        list.split(',')
                            .map(|z| parse(key, z.trim()))
                            .collect::<Result<_>>()?,
                    ),
                }
            }
            "deconv.iterations" => self.deconv.iterations = parse(key, value)?,
            "deconv.floor" => self.deconv.floor_relative = parse(key, value)?,
            "deconv.threshold" => self.deconv.threshold_fraction = parse(key, value)?,
            "deconv.init" => {
                self.deconv.initialization = match value {
                    "ones" => Initialization::UniformOnes,
                    "adjoint" => Initialization::Adjoint,
                    _ => {
                        return Err(Error::config(format!(
                            "deconv.init must be ones or adjoint, got '{value}'"
                        )))
                    }
                }
            }
            "deconv.occlusion" => {
                self.deconv.occlusion = match value {
                    "masked" => OcclusionHandling::Masked,
                    "zeros" => OcclusionHandling::AsZeros,
                    _ => {
                        return Err(Error::config(format!(
                            "deconv.occlusion must be masked or zeros, got '{value}'"
                        )))
                    }
                }
            }
            "sensor.bits" => self.sensor_bits = optional(key, value)?,
            _ => return Err(Error::config(format!("unknown configuration key '{key}'"))),
        }
        Ok(())
    }

    /// Renders every key; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let o = &self.optics;
        let m = &self.mask;
        let v = &self.volume;
        let d = &self.deconv;
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        put("optics.na", o.na.to_string());
        put("optics.magnification", o.magnification.to_string());
        put("optics.refractive_index", o.refractive_index.to_string());
        put("optics.wavelength", format!("{:e}", o.wavelength));
        put("optics.lenslet_pitch", format!("{:e}", o.lenslet_pitch));
        put("optics.lenslet_focal", format!("{:e}", o.lenslet_focal));
        put("optics.sample_interval", format!("{:e}", o.mask_pixel));
        put("optics.sensor_pixel", format!("{:e}", o.sensor_pixel));
        put("optics.psf_samples", o.psf_samples.to_string());
        put("optics.sensor_pixels", o.sensor_pixels.to_string());
        put("optics.theta_nodes", o.theta_nodes.to_string());
        put("mask.kind", m.kind.to_string());
        put("mask.seed", m.seed.to_string());
        put("mask.pixel", format!("{:e}", m.mask_pixel));
        put("mask.amplitude_law", m.amplitude_law.to_string());
        put(
            "mask.sensor_seed",
            m.sensor_mask_seed.map_or("none".into(), |s| s.to_string()),
        );
        put("volume.nx", v.nx.to_string());
        put("volume.ny", v.ny.to_string());
        put("volume.pitch", format!("{:e}", v.pitch));
        put("volume.z_start", format!("{:e}", v.z_start));
        put("volume.z_step", format!("{:e}", v.z_step));
        put("volume.planes", v.planes.to_string());
        put(
            "volume.z_positions",
            v.z_positions.as_ref().map_or("none".into(), |z| {
                z.iter().map(|p| format!("{p:e}")).collect::<Vec<_>>().join(",")
            }),
        );
        put("deconv.iterations", d.iterations.to_string());
        put("deconv.floor", format!("{:e}", d.floor_relative));
        put("deconv.threshold", d.threshold_fraction.to_string());
        put(
            "deconv.init",
            match d.initialization {
                Initialization::UniformOnes => "ones",
                Initialization::Adjoint => "adjoint",
            }
            .into(),
        );
        put(
            "deconv.occlusion",
            match d.occlusion {
                OcclusionHandling::Masked => "masked",
                OcclusionHandling::AsZeros => "zeros",
            }
            .into(),
        );
        put(
            "sensor.bits",
            self.sensor_bits.map_or("none".into(), |b| b.to_string()),
        );
        s
    }

    /// Runs the optical checks (sampling gate first), then the volume and
    /// deconvolution checks. Nothing expensive happens before this passes.
    pub fn validate(&self) -> Result<()> {
        self.optics.validate()?;
        self.optics.offsets_per_period(self.volume.pitch)?;
        if self.volume.z_positions.is_none() && self.volume.planes == 0 {
            return Err(Error::config("volume.planes must be at least 1"));
        }
        if self.volume.z_positions.is_none()
            && (self.volume.z_step.is_nan() || self.volume.z_step <= 0.0)
            && self.volume.planes > 1
        {
            return Err(Error::config("volume.z_step must be positive"));
        }
        self.volume_grid()?.validate()?;
        if let Some(b) = self.sensor_bits {
            if b == 0 || b > 32 {
                return Err(Error::config(format!("sensor.bits must be in 1..=32, got {b}")));
            }
        }
        self.deconv.validate().map_err(|e| Error::config(e.to_string()))
    }

    pub fn z_planes(&self) -> Vec<f64> {
        self.volume.z_planes()
    }

    /// Voxel grid centered on the optical axis.
    pub fn volume_grid(&self) -> Result<VolumeGrid> {
        let offsets = self.optics.offsets_per_period(self.volume.pitch)?;
        Ok(VolumeGrid::centered(
            self.volume.nx,
            self.volume.ny,
            self.volume.pitch,
            self.z_planes(),
            offsets,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psf::mask::MaskKind;

    #[test]
    fn defaults_are_the_reference_system() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let grid = cfg.volume_grid().unwrap();
        assert_eq!(grid.shape(), (26, 128, 128));
        assert!((grid.axial_positions[0] + 60e-6).abs() < 1e-15);
        assert!((grid.axial_positions[25] + 10e-6).abs() < 1e-15);
        assert_eq!(cfg.optics.offsets_per_period(cfg.volume.pitch).unwrap(), 30);
    }

    #[test]
    fn text_roundtrip() {
        let mut cfg = RunConfig::default();
        cfg.set("mask.kind", "amplitude").unwrap();
        cfg.set("mask.sensor_seed", "9").unwrap();
        cfg.set("deconv.init", "adjoint").unwrap();
        cfg.set("sensor.bits", "12").unwrap();
        cfg.set("volume.nx", "64").unwrap();
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.mask.kind, MaskKind::RandomAmplitude);
    }

    #[test]
    fn comments_and_partial_files() {
        let cfg = RunConfig::parse("# tweak\n\nvolume.planes = 3\n  mask.seed=7 \n").unwrap();
        assert_eq!(cfg.volume.planes, 3);
        assert_eq!(cfg.mask.seed, 7);
        assert_eq!(cfg.optics, OpticalSystemConfig::default());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(
            RunConfig::parse("optics.foo = 1"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::parse("optics.na = half"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::parse("no equals sign"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::parse("deconv.init = zeros"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn sampling_gate_fires_first() {
        let mut cfg = RunConfig::default();
        cfg.set("optics.sample_interval", "3e-6").unwrap();
        cfg.set("volume.pitch", "0.3e-6").unwrap();
        match cfg.validate() {
            Err(Error::Sampling { threshold, .. }) => assert!((threshold - 3.251e-6).abs() < 1e-9),
            other => panic!("expected sampling error, got {other:?}"),
        }
    }

    #[test]
    fn incommensurate_voxel_pitch_is_rejected() {
        let mut cfg = RunConfig::default();
        cfg.set("volume.pitch", "0.33e-6").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn explicit_plane_positions() {
        let mut cfg = RunConfig::default();
        cfg.set("volume.z_positions", "-60e-6, -34e-6,-10e-6").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.z_planes(), vec![-60e-6, -34e-6, -10e-6]);
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        cfg.set("volume.z_positions", "-10e-6,-60e-6").unwrap();
        assert!(cfg.validate().is_err());
        cfg.set("volume.z_positions", "none").unwrap();
        assert_eq!(cfg.z_planes().len(), 26);
    }
}
