//! PSF key: one sensor-resolution PSF per (z-plane, sub-period offset).

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead as _, Read as _, Write as _};
use std::path::Path;

use log::debug;
use ndarray::{s, Array2};
use num_complex::Complex64;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::psf::config::OpticalSystemConfig;
use crate::psf::debye::{axial_coordinate, sample_point, DebyeQuadrature, OffsetLattice};
use crate::psf::field::Grid;
use crate::psf::lenslet::lenslet_modulation;
use crate::psf::mask::{random_mask, sensor_mask, AmplitudeLaw, MaskKind, MaskSpec};
use crate::psf::propagate::Propagator;

pub const KEY_MAGIC: &str = "LFPK1";
pub const KEY_FORMAT_VERSION: u32 = 1;

/// Values below this fraction of a PSF's peak are not stored.
pub const CROP_RELATIVE: f64 = 1e-8;

/// Everything downstream of the Debye field that is shared by all points:
/// lenslet/mask modulation, propagation to the sensor, the sensor mask and
/// binning onto sensor pixels.
pub struct PsfPipeline {
    grid: Grid,
    modulation: Array2<Complex64>,
    sensor_power: Option<Array2<f64>>,
    propagator: Propagator,
    bin: usize,
}

impl PsfPipeline {
    pub fn new(config: &OpticalSystemConfig, mask: &MaskSpec) -> Result<Self> {
        config.validate()?;
        let grid = Grid::centered(config.psf_samples, config.mask_pixel);
        let phi = lenslet_modulation(&grid, config)?;
        let r = random_mask(mask, &grid, config)?;
        let sensor_power = sensor_mask(mask, &grid, config)?.map(|a| a.mapv(|v| v * v));
        Ok(Self {
            grid,
            modulation: phi.values * &r.values,
            sensor_power,
            propagator: Propagator::new(
                config.psf_samples,
                config.mask_pixel,
                config.lenslet_focal,
                config.wavelength,
            )?,
            bin: config.binning_factor().unwrap_or(1),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Sensor intensity for a field arriving at the lenslet plane, binned to
    /// sensor pixels and normalized to unit sum.
    pub fn intensity(&self, mut field: Array2<Complex64>) -> Result<Array2<f64>> {
        field *= &self.modulation;
        self.propagator.apply(&mut field);
        let mut power = field.mapv(|z| z.norm_sqr());
        if let Some(a2) = &self.sensor_power {
            power *= a2;
        }
        let binned = bin_sum(&power, self.bin);
        normalize(binned)
    }
}

fn bin_sum(a: &Array2<f64>, bin: usize) -> Array2<f64> {
    if bin == 1 {
        return a.clone();
    }
    let n = a.nrows() / bin;
    Array2::from_shape_fn((n, n), |(r, c)| {
        a.slice(s![r * bin..(r + 1) * bin, c * bin..(c + 1) * bin]).sum()
    })
}

fn normalize(mut a: Array2<f64>) -> Result<Array2<f64>> {
    let total: f64 = a.sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::Numerical(format!("PSF has total energy {total}")));
    }
    a.mapv_inplace(|v| v / total);
    Ok(a)
}

/// A sensor-resolution PSF for one point, centered on the sensor pixel below
/// the center of `lenslet` (x, y lenslet indices).
#[derive(Debug, Clone, PartialEq)]
pub struct PointPsf {
    pub intensity: Array2<f64>,
    pub lenslet: [i64; 2],
}

/// Intensity PSF of a point `p` (object space, meters).
///
/// The simulation window is centered on the lenslet nearest to the point's
/// image, so points one object-space lenslet period apart give the same
/// array with `lenslet` advanced by one.
pub fn compute_point_psf(p: [f64; 3], config: &OpticalSystemConfig, mask: &MaskSpec) -> Result<PointPsf> {
    if p.iter().any(|c| !c.is_finite()) {
        return Err(Error::argument(format!("point {p:?} is not finite")));
    }
    let pipeline = PsfPipeline::new(config, mask)?;
    let period = config.object_period();
    let lx = (p[0] / period).round();
    let ly = (p[1] / period).round();
    let local = [p[0] - lx * period, p[1] - ly * period, p[2]];
    let plane = DebyeQuadrature::for_config(config).plane(axial_coordinate(p[2], config));
    let field = sample_point(&plane, local, pipeline.grid(), config);
    if field.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::Numerical(format!(
            "non-finite Debye field for point {p:?}"
        )));
    }
    Ok(PointPsf {
        intensity: pipeline.intensity(field)?,
        lenslet: [lx as i64, ly as i64],
    })
}

/// A PSF cropped to its support. `origin` is the (row, col) of `values[[0, 0]]`
/// relative to the window center pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePsf {
    pub origin: [i32; 2],
    pub values: Array2<f64>,
}

impl SparsePsf {
    /// Drops pixels below `CROP_RELATIVE` of the peak, trims to the bounding
    /// box of what is left and renormalizes to unit sum.
    pub fn from_dense(dense: &Array2<f64>) -> Result<Self> {
        let peak = dense.iter().copied().fold(0.0, f64::max);
        let cut = peak * CROP_RELATIVE;
        let (n_rows, n_cols) = dense.dim();
        let (mut r0, mut r1, mut c0, mut c1) = (n_rows, 0, n_cols, 0);
        for ((r, c), &v) in dense.indexed_iter() {
            if v >= cut && v > 0.0 {
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
            }
        }
        if r0 > r1 {
            return Err(Error::Numerical("PSF has no support".into()));
        }
        let values = dense
            .slice(s![r0..=r1, c0..=c1])
            .mapv(|v| if v >= cut { v } else { 0.0 });
        Ok(Self {
            origin: [r0 as i32 - (n_rows / 2) as i32, c0 as i32 - (n_cols / 2) as i32],
            values: normalize(values)?,
        })
    }

    /// Wraps an already-cropped block as-is (used for synthetic keys).
    pub fn raw(origin: [i32; 2], values: Array2<f64>) -> Self {
        Self { origin, values }
    }

    pub fn to_dense(&self, window: usize) -> Array2<f64> {
        let mut out = Array2::zeros((window, window));
        let half = (window / 2) as i32;
        for ((r, c), &v) in self.values.indexed_iter() {
            let rr = self.origin[0] + r as i32 + half;
            let cc = self.origin[1] + c as i32 + half;
            if (0..window as i32).contains(&rr) && (0..window as i32).contains(&cc) {
                out[[rr as usize, cc as usize]] = v;
            }
        }
        out
    }
}

/// The encryption/decryption key. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfKey {
    config: OpticalSystemConfig,
    mask: MaskSpec,
    z_planes: Vec<f64>,
    voxel_pitch: f64,
    offsets: usize,
    psfs: Vec<SparsePsf>,
    lineage: Vec<String>,
    checksum: String,
}

impl PsfKey {
    /// Assembles a key from explicit PSFs, ordered `[z][row offset][col offset]`.
    pub fn from_psfs(
        config: OpticalSystemConfig,
        mask: MaskSpec,
        z_planes: Vec<f64>,
        voxel_pitch: f64,
        psfs: Vec<SparsePsf>,
    ) -> Result<Self> {
        Self::assemble(config, mask, z_planes, voxel_pitch, psfs, Vec::new())
    }

    fn assemble(
        config: OpticalSystemConfig,
        mask: MaskSpec,
        z_planes: Vec<f64>,
        voxel_pitch: f64,
        psfs: Vec<SparsePsf>,
        lineage: Vec<String>,
    ) -> Result<Self> {
        let offsets = config.offsets_per_period(voxel_pitch)?;
        check_planes(&z_planes)?;
        if config.pixels_per_lenslet().is_none() {
            return Err(Error::config(
                "lenslet pitch is not a whole number of sensor pixels",
            ));
        }
        let expected = z_planes.len() * offsets * offsets;
        if psfs.len() != expected {
            return Err(Error::config(format!(
                "key needs {expected} PSFs, got {}",
                psfs.len()
            )));
        }
        for (i, p) in psfs.iter().enumerate() {
            if p.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Numerical(format!(
                    "PSF {i} has negative or non-finite values"
                )));
            }
        }
        let mut key = Self {
            config,
            mask,
            z_planes,
            voxel_pitch,
            offsets,
            psfs,
            lineage,
            checksum: String::new(),
        };
        key.checksum = key.compute_checksum();
        Ok(key)
    }

    pub fn config(&self) -> &OpticalSystemConfig {
        &self.config
    }

    pub fn mask(&self) -> &MaskSpec {
        &self.mask
    }

    pub fn z_planes(&self) -> &[f64] {
        &self.z_planes
    }

    pub fn voxel_pitch(&self) -> f64 {
        self.voxel_pitch
    }

    /// Sub-period offsets per lateral axis.
    pub fn offsets_per_axis(&self) -> usize {
        self.offsets
    }

    pub fn psf_count(&self) -> usize {
        self.psfs.len()
    }

    pub fn psfs(&self) -> &[SparsePsf] {
        &self.psfs
    }

    pub fn lineage(&self) -> &[String] {
        &self.lineage
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn sensor_pixels(&self) -> usize {
        self.config.sensor_pixels
    }

    pub fn pixels_per_lenslet(&self) -> usize {
        self.config
            .pixels_per_lenslet()
            .expect("validated at construction")
    }

    /// PSF for plane `z`, column offset `a`, row offset `b`.
    pub fn psf(&self, z: usize, a: usize, b: usize) -> &SparsePsf {
        &self.psfs[(z * self.offsets + b) * self.offsets + a]
    }

    /// Object-space coordinate of sub-period offset `a`, relative to a
    /// lenslet center.
    pub fn offset_position(&self, a: usize) -> f64 {
        (a as f64 + 0.5 - self.offsets as f64 / 2.0) * self.voxel_pitch
    }

    /// Splits a lateral object-space coordinate into (lenslet, offset index).
    /// `None` if the coordinate is off the key's voxel lattice.
    pub fn locate(&self, coord: f64) -> Option<(i64, usize)> {
        let t = (coord - self.offset_position(0)) / self.voxel_pitch;
        let ti = t.round();
        if (t - ti).abs() > 1e-6 {
            return None;
        }
        let ti = ti as i64;
        let n = self.offsets as i64;
        Some((ti.div_euclid(n), ti.rem_euclid(n) as usize))
    }

    /// Builds a key whose every value passes through `f(index, value)`.
    pub(crate) fn derive(&self, note: String, mut f: impl FnMut(usize, f64) -> f64) -> Result<Self> {
        let mut psfs = self.psfs.clone();
        let mut idx = 0usize;
        for p in &mut psfs {
            p.values.mapv_inplace(|v| {
                let out = f(idx, v);
                idx += 1;
                out
            });
        }
        let mut lineage = self.lineage.clone();
        lineage.push(note);
        Self::assemble(
            self.config.clone(),
            self.mask.clone(),
            self.z_planes.clone(),
            self.voxel_pitch,
            psfs,
            lineage,
        )
    }

    fn header_body(&self) -> String {
        let c = &self.config;
        let m = &self.mask;
        let mut h = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(h, "{k}={v}");
        };
        kv("format_version", KEY_FORMAT_VERSION.to_string());
        kv("na", format!("{:e}", c.na));
        kv("magnification", format!("{:e}", c.magnification));
        kv("refractive_index", format!("{:e}", c.refractive_index));
        kv("wavelength", format!("{:e}", c.wavelength));
        kv("lenslet_pitch", format!("{:e}", c.lenslet_pitch));
        kv("lenslet_focal", format!("{:e}", c.lenslet_focal));
        kv("mask_pixel", format!("{:e}", c.mask_pixel));
        kv("sensor_pixel", format!("{:e}", c.sensor_pixel));
        kv("psf_samples", c.psf_samples.to_string());
        kv("sensor_pixels", c.sensor_pixels.to_string());
        kv("theta_nodes", c.theta_nodes.to_string());
        kv("mask_kind", m.kind.to_string());
        kv("mask_seed", m.seed.to_string());
        kv("mask_feature_pixel", format!("{:e}", m.mask_pixel));
        kv("mask_amplitude_law", m.amplitude_law.to_string());
        kv(
            "sensor_mask_seed",
            m.sensor_mask_seed.map_or("none".into(), |s| s.to_string()),
        );
        kv("voxel_pitch", format!("{:e}", self.voxel_pitch));
        kv("offsets_per_axis", self.offsets.to_string());
        kv(
            "z_planes",
            self.z_planes
                .iter()
                .map(|z| format!("{z:e}"))
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("psf_count", self.psfs.len().to_string());
        for l in &self.lineage {
            kv("lineage", l.clone());
        }
        h
    }

    /// Streams the PSF blocks: per PSF, origin (2 × i32), shape (2 × u32),
    /// then row-major f64 values, all little-endian.
    fn write_payload(&self, w: &mut impl io::Write) -> io::Result<()> {
        let mut buf = Vec::new();
        for p in &self.psfs {
            buf.clear();
            buf.extend_from_slice(&p.origin[0].to_le_bytes());
            buf.extend_from_slice(&p.origin[1].to_le_bytes());
            buf.extend_from_slice(&(p.values.nrows() as u32).to_le_bytes());
            buf.extend_from_slice(&(p.values.ncols() as u32).to_le_bytes());
            for v in p.values.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    fn compute_checksum(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.header_body().as_bytes());
        self.write_payload(&mut hasher).expect("hashing cannot fail");
        hex(&hasher.finalize())
    }

    fn write_to(&self, w: &mut impl io::Write) -> io::Result<()> {
        writeln!(w, "{KEY_MAGIC}")?;
        w.write_all(self.header_body().as_bytes())?;
        write!(w, "checksum={}\nend_header\n", self.checksum)?;
        self.write_payload(w)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory cannot fail");
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = io::BufWriter::new(f);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(io::BufReader::new(f)).map_err(|e| match e {
            ReadError::Io(e) => Error::io(path, e),
            ReadError::Format(reason) => Error::format(path, reason),
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        Self::read_from(bytes).map_err(|e| match e {
            ReadError::Io(e) => e.to_string(),
            ReadError::Format(reason) => reason,
        })
    }

    fn read_from(mut r: impl io::BufRead) -> std::result::Result<Self, ReadError> {
        let mut header = String::new();
        let mut line = String::new();
        let mut first = true;
        loop {
            line.clear();
            let n = read_text_line(&mut r, &mut line)?;
            if n == 0 {
                return Err(ReadError::Format(if first {
                    "missing magic line".into()
                } else {
                    "missing end_header".into()
                }));
            }
            if first {
                if line.trim_end_matches('\n') != KEY_MAGIC {
                    return Err(ReadError::Format(format!("bad magic, expected {KEY_MAGIC}")));
                }
                first = false;
                continue;
            }
            if line == "end_header\n" {
                break;
            }
            header.push_str(&line);
        }
        let h = crate::io::HeaderMap::parse(&header)?;
        let config = OpticalSystemConfig {
            na: h.get("na")?,
            magnification: h.get("magnification")?,
            refractive_index: h.get("refractive_index")?,
            wavelength: h.get("wavelength")?,
            lenslet_pitch: h.get("lenslet_pitch")?,
            lenslet_focal: h.get("lenslet_focal")?,
            mask_pixel: h.get("mask_pixel")?,
            sensor_pixel: h.get("sensor_pixel")?,
            psf_samples: h.get("psf_samples")?,
            sensor_pixels: h.get("sensor_pixels")?,
            theta_nodes: h.get("theta_nodes")?,
        };
        let version: u32 = h.get("format_version")?;
        if version != KEY_FORMAT_VERSION {
            return Err(format!("unsupported key format version {version}").into());
        }
        let sensor_mask_seed = match h.raw("sensor_mask_seed")? {
            "none" => None,
            s => Some(s.parse().map_err(|_| format!("bad sensor_mask_seed '{s}'"))?),
        };
        let mask = MaskSpec {
            kind: h
                .raw("mask_kind")?
                .parse::<MaskKind>()
                .map_err(|e| e.to_string())?,
            seed: h.get("mask_seed")?,
            mask_pixel: h.get("mask_feature_pixel")?,
            amplitude_law: h
                .raw("mask_amplitude_law")?
                .parse::<AmplitudeLaw>()
                .map_err(|e| e.to_string())?,
            sensor_mask_seed,
        };
        let voxel_pitch: f64 = h.get("voxel_pitch")?;
        let z_planes = h.list("z_planes")?;
        let count: usize = h.get("psf_count")?;
        let expected_sum = h.raw("checksum")?.to_string();
        let window = config.psf_window();

        let truncated = |e: io::Error| match e.kind() {
            io::ErrorKind::UnexpectedEof => ReadError::Format("truncated PSF payload".into()),
            _ => ReadError::Io(e),
        };
        let mut psfs = Vec::with_capacity(count.min(1 << 20));
        let mut raw = Vec::new();
        for _ in 0..count {
            let mut hdr = [0u8; 16];
            r.read_exact(&mut hdr).map_err(truncated)?;
            let word = |i: usize| [hdr[i], hdr[i + 1], hdr[i + 2], hdr[i + 3]];
            let r0 = i32::from_le_bytes(word(0));
            let c0 = i32::from_le_bytes(word(4));
            let rows = u32::from_le_bytes(word(8)) as usize;
            let cols = u32::from_le_bytes(word(12)) as usize;
            if rows > window || cols > window {
                return Err(format!("PSF block {rows}×{cols} exceeds the {window}-pixel window").into());
            }
            raw.resize(rows * cols * 8, 0);
            r.read_exact(&mut raw).map_err(truncated)?;
            let vals: Vec<f64> = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let values = Array2::from_shape_vec((rows, cols), vals).map_err(|e| e.to_string())?;
            psfs.push(SparsePsf::raw([r0, c0], values));
        }
        let mut tail = [0u8; 1];
        if r.read(&mut tail).map_err(ReadError::Io)? != 0 {
            return Err("trailing bytes after PSF payload".to_string().into());
        }
        let key = Self::assemble(config, mask, z_planes, voxel_pitch, psfs, h.all("lineage"))
            .map_err(|e| e.to_string())?;
        if key.checksum != expected_sum {
            return Err(format!(
                "checksum mismatch: header {expected_sum}, content {}",
                key.checksum
            )
            .into());
        }
        Ok(key)
    }
}

enum ReadError {
    Io(io::Error),
    Format(String),
}

impl From<String> for ReadError {
    fn from(s: String) -> Self {
        ReadError::Format(s)
    }
}

/// Reads one `\n`-terminated header line, refusing runaway lines.
fn read_text_line(r: &mut impl io::BufRead, line: &mut String) -> std::result::Result<usize, ReadError> {
    let mut bytes = Vec::new();
    let n = r
        .by_ref()
        .take(1 << 16)
        .read_until(b'\n', &mut bytes)
        .map_err(ReadError::Io)?;
    if n > 0 && !bytes.ends_with(b"\n") {
        return Err(ReadError::Format("header line too long or unterminated".into()));
    }
    line.push_str(std::str::from_utf8(&bytes).map_err(|_| ReadError::Format("header is not UTF-8".into()))?);
    Ok(n)
}

fn check_planes(z: &[f64]) -> Result<()> {
    if z.is_empty() {
        return Err(Error::config("at least one z-plane is required"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("z-planes must be finite"));
    }
    if z.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("z-planes must be strictly increasing"));
    }
    Ok(())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes
        .iter()
        .fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Computes every (z, sub-period offset) PSF of the system.
///
/// `voxel_pitch` must tile the object-space lenslet period `d/M`. Cells are
/// independent and evaluated in parallel; results are collected in index
/// order, so the key does not depend on the schedule.
pub fn build_psf_key(
    config: &OpticalSystemConfig,
    mask: &MaskSpec,
    z_planes: &[f64],
    voxel_pitch: f64,
) -> Result<PsfKey> {
    let pipeline = PsfPipeline::new(config, mask)?;
    let offsets = config.offsets_per_period(voxel_pitch)?;
    check_planes(z_planes)?;
    let quad = DebyeQuadrature::for_config(config);
    let grid = *pipeline.grid();
    let lattice = OffsetLattice::new(
        grid.samples,
        grid.interval / config.magnification,
        voxel_pitch,
        offsets,
    );
    let offset_pos = |a: usize| (a as f64 + 0.5 - offsets as f64 / 2.0) * voxel_pitch;

    let mut psfs = Vec::with_capacity(z_planes.len() * offsets * offsets);
    for (zi, &z) in z_planes.iter().enumerate() {
        let plane = quad.plane(axial_coordinate(z, config));
        let table = lattice.as_ref().map(|l| l.table(&plane, config));
        let cells: Result<Vec<SparsePsf>> = (0..offsets * offsets)
            .into_par_iter()
            .map(|cell| {
                let (b, a) = (cell / offsets, cell % offsets);
                let field = match (&lattice, &table) {
                    (Some(l), Some(t)) => l.field(t, a, b),
                    _ => sample_point(&plane, [offset_pos(a), offset_pos(b), z], &grid, config),
                };
                if field.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
                    return Err(Error::Numerical(format!(
                        "non-finite Debye field at offset ({a}, {b}), z = {z}"
                    )));
                }
                SparsePsf::from_dense(&pipeline.intensity(field)?)
            })
            .collect();
        psfs.extend(cells?);
        debug!("z-plane {}/{} done", zi + 1, z_planes.len());
    }
    PsfKey::assemble(
        config.clone(),
        mask.clone(),
        z_planes.to_vec(),
        voxel_pitch,
        psfs,
        Vec::new(),
    )
}
