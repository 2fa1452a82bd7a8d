//! Linear forward model `O = H g`, applied matrix-free.
//!
//! Every voxel maps to a lenslet index and a sub-period offset. Its column of
//! `H` is the key PSF of its (z, offset) class, shifted by whole lenslet
//! periods on the sensor. PSFs falling off the sensor are cropped.

use ndarray::{Array2, Array3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::psf::PsfKey;
use crate::rng::{SeededStream, Stream};

/// Geometry of a voxel grid in object space.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeGrid {
    pub nx: usize,
    pub ny: usize,
    pub lateral_pitch: f64,
    /// z of each plane, meters, strictly increasing.
    pub axial_positions: Vec<f64>,
    /// (x, y) of voxel `[.., 0, 0]`, meters.
    pub origin: [f64; 2],
}

impl VolumeGrid {
    /// A grid centered on the optical axis and aligned with the key lattice
    /// for `offsets` voxels per lenslet period.
    pub fn centered(
        nx: usize,
        ny: usize,
        lateral_pitch: f64,
        axial_positions: Vec<f64>,
        offsets: usize,
    ) -> Self {
        Self {
            nx,
            ny,
            lateral_pitch,
            axial_positions,
            origin: [
                centered_origin(nx, lateral_pitch, offsets),
                centered_origin(ny, lateral_pitch, offsets),
            ],
        }
    }

    pub fn nz(&self) -> usize {
        self.axial_positions.len()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.nz(), self.ny, self.nx)
    }

    pub fn voxels(&self) -> usize {
        self.nz() * self.ny * self.nx
    }

    pub fn x(&self, ix: usize) -> f64 {
        self.origin[0] + ix as f64 * self.lateral_pitch
    }

    pub fn y(&self, iy: usize) -> f64 {
        self.origin[1] + iy as f64 * self.lateral_pitch
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.axial_positions.is_empty() {
            return Err(Error::config("volume grid must be non-empty"));
        }
        if !(self.lateral_pitch.is_finite() && self.lateral_pitch > 0.0) {
            return Err(Error::config("lateral pitch must be positive"));
        }
        if self.axial_positions.iter().any(|z| !z.is_finite())
            || self.axial_positions.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::config(
                "axial positions must be finite and strictly increasing",
            ));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::config("volume origin must be finite"));
        }
        Ok(())
    }
}

/// Origin coordinate placing voxel `n/2` on sub-period offset `offsets/2`
/// of the lenslet on the optical axis.
pub fn centered_origin(n: usize, pitch: f64, offsets: usize) -> f64 {
    let first_offset = (0.5 - offsets as f64 / 2.0) * pitch;
    ((offsets / 2) as f64 - (n / 2) as f64) * pitch + first_offset
}

/// Nonnegative voxel intensities `g`, indexed `[z, y, x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub values: Array3<f64>,
    pub grid: VolumeGrid,
}

impl Volume {
    pub fn new(values: Array3<f64>, grid: VolumeGrid) -> Result<Self> {
        grid.validate()?;
        if values.dim() != grid.shape() {
            return Err(Error::config(format!(
                "volume values {:?} do not match grid {:?}",
                values.dim(),
                grid.shape()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::argument("volume values must be finite and nonnegative"));
        }
        Ok(Self { values, grid })
    }

    pub fn zeros(grid: VolumeGrid) -> Self {
        let values = Array3::zeros(grid.shape());
        Self { values, grid }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Sensor image `O`, indexed `[row, col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LightFieldImage {
    pub values: Array2<f64>,
    pub pixel_pitch: f64,
    /// `true` marks a valid pixel; `None` means every pixel is valid.
    pub mask: Option<Array2<bool>>,
    /// Counts per unit intensity when the image was quantized.
    pub scale: Option<f64>,
}

impl LightFieldImage {
    pub fn new(values: Array2<f64>, pixel_pitch: f64) -> Result<Self> {
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::argument("image values must be finite and nonnegative"));
        }
        Ok(Self {
            values,
            pixel_pitch,
            mask: None,
            scale: None,
        })
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Values in physical units (undoes quantization scaling).
    pub fn rescaled(&self) -> Array2<f64> {
        match self.scale {
            Some(s) => self.values.mapv(|v| v / s),
            None => self.values.clone(),
        }
    }

    /// Image with occluded pixels zeroed.
    pub fn masked_values(&self) -> Array2<f64> {
        match &self.mask {
            Some(m) => {
                let mut v = self.values.clone();
                v.zip_mut_with(m, |x, &ok| {
                    if !ok {
                        *x = 0.0
                    }
                });
                v
            }
            None => self.values.clone(),
        }
    }
}

/// A volume grid bound to a key: every voxel row/column resolved to its
/// lenslet and sub-period offset.
pub struct ForwardOperator<'k> {
    key: &'k PsfKey,
    grid: VolumeGrid,
    cols: Vec<(i64, usize)>,
    rows: Vec<(i64, usize)>,
    sensor: usize,
}

impl<'k> ForwardOperator<'k> {
    pub fn new(key: &'k PsfKey, grid: &VolumeGrid) -> Result<Self> {
        grid.validate()?;
        let rel = (grid.lateral_pitch - key.voxel_pitch()).abs() / key.voxel_pitch();
        if rel > 1e-9 {
            return Err(Error::config(format!(
                "volume pitch {} differs from key pitch {}",
                grid.lateral_pitch,
                key.voxel_pitch()
            )));
        }
        let kz = key.z_planes();
        if kz.len() != grid.nz()
            || kz
                .iter()
                .zip(&grid.axial_positions)
                .any(|(a, b)| (a - b).abs() > 1e-12)
        {
            return Err(Error::config("volume z-planes do not match the key's z-planes"));
        }
        let locate = |coord: f64| {
            key.locate(coord).ok_or_else(|| {
                Error::config(format!(
                    "voxel coordinate {coord} is off the key's lateral lattice"
                ))
            })
        };
        let cols = (0..grid.nx).map(|i| locate(grid.x(i))).collect::<Result<_>>()?;
        let rows = (0..grid.ny).map(|i| locate(grid.y(i))).collect::<Result<_>>()?;
        Ok(Self {
            key,
            grid: grid.clone(),
            cols,
            rows,
            sensor: key.sensor_pixels(),
        })
    }

    pub fn grid(&self) -> &VolumeGrid {
        &self.grid
    }

    pub fn key(&self) -> &PsfKey {
        self.key
    }

    pub fn sensor_shape(&self) -> (usize, usize) {
        (self.sensor, self.sensor)
    }

    /// Sensor position of the top-left PSF value for voxel `(z, iy, ix)`,
    /// plus that PSF.
    fn placement(&self, z: usize, iy: usize, ix: usize) -> (i64, i64, &crate::psf::SparsePsf) {
        let (lx, a) = self.cols[ix];
        let (ly, b) = self.rows[iy];
        let psf = self.key.psf(z, a, b);
        let ppl = self.key.pixels_per_lenslet() as i64;
        let anchor = (self.sensor / 2) as i64;
        (
            anchor + ly * ppl + psf.origin[0] as i64,
            anchor + lx * ppl + psf.origin[1] as i64,
            psf,
        )
    }

    /// Visits the on-sensor part of a voxel's PSF as (row, col range start,
    /// psf column start, length) runs.
    fn for_each_run(&self, z: usize, iy: usize, ix: usize, mut f: impl FnMut(usize, usize, &[f64])) {
        let (r0, c0, psf) = self.placement(z, iy, ix);
        let s = self.sensor as i64;
        let (pr, pc) = psf.values.dim();
        let c_lo = c0.max(0);
        let c_hi = (c0 + pc as i64).min(s);
        if c_lo >= c_hi {
            return;
        }
        let data = psf.values.as_slice().expect("PSF blocks are contiguous");
        for r in 0..pr {
            let sr = r0 + r as i64;
            if sr < 0 || sr >= s {
                continue;
            }
            let start = r * pc + (c_lo - c0) as usize;
            let len = (c_hi - c_lo) as usize;
            f(sr as usize, c_lo as usize, &data[start..start + len]);
        }
    }

    pub fn forward(&self, g: &Array3<f64>) -> Array2<f64> {
        assert_eq!(g.dim(), self.grid.shape(), "volume shape mismatch");
        let s = self.sensor;
        let partials: Vec<Array2<f64>> = (0..self.grid.nz())
            .into_par_iter()
            .map(|z| {
                let mut out = Array2::<f64>::zeros((s, s));
                let buf = out.as_slice_mut().unwrap();
                for iy in 0..self.grid.ny {
                    for ix in 0..self.grid.nx {
                        let w = g[[z, iy, ix]];
                        if w == 0.0 {
                            continue;
                        }
                        self.for_each_run(z, iy, ix, |row, col, vals| {
                            let dst = &mut buf[row * s + col..row * s + col + vals.len()];
                            for (d, v) in dst.iter_mut().zip(vals) {
                                *d += w * v;
                            }
                        });
                    }
                }
                out
            })
            .collect();
        tree_sum(partials).unwrap_or_else(|| Array2::zeros((s, s)))
    }

    pub fn adjoint(&self, image: &Array2<f64>) -> Array3<f64> {
        let s = self.sensor;
        assert_eq!(image.dim(), (s, s), "image shape mismatch");
        let img = image.as_standard_layout();
        let buf = img.as_slice().unwrap();
        let (nz, ny, nx) = self.grid.shape();
        let values: Vec<f64> = (0..nz * ny)
            .into_par_iter()
            .flat_map_iter(|zy| {
                let (z, iy) = (zy / ny, zy % ny);
                (0..nx).map(move |ix| {
                    let mut acc = 0.0;
                    self.for_each_run(z, iy, ix, |row, col, vals| {
                        let src = &buf[row * s + col..row * s + col + vals.len()];
                        acc += src.iter().zip(vals).map(|(a, b)| a * b).sum::<f64>();
                    });
                    acc
                })
            })
            .collect();
        Array3::from_shape_vec((nz, ny, nx), values).expect("shape computed above")
    }

    /// Explicit `H` (pixels × voxels) for small instances.
    pub fn dense(&self, cap: usize) -> Result<Array2<f64>> {
        let pixels = self.sensor * self.sensor;
        let voxels = self.grid.voxels();
        let required = pixels.saturating_mul(voxels);
        if required > cap {
            return Err(Error::CapExceeded { required, cap });
        }
        let mut h = Array2::zeros((pixels, voxels));
        let (_, ny, nx) = self.grid.shape();
        for z in 0..self.grid.nz() {
            for iy in 0..ny {
                for ix in 0..nx {
                    let k = (z * ny + iy) * nx + ix;
                    self.for_each_run(z, iy, ix, |row, col, vals| {
                        for (j, v) in vals.iter().enumerate() {
                            h[[row * self.sensor + col + j, k]] = *v;
                        }
                    });
                }
            }
        }
        Ok(h)
    }
}

/// Pairwise sum in a fixed association order.
fn tree_sum(mut parts: Vec<Array2<f64>>) -> Option<Array2<f64>> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a += &b;
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop()
}

pub const DEFAULT_DENSE_CAP: usize = 1 << 24;

pub fn apply_forward(volume: &Volume, key: &PsfKey) -> Result<LightFieldImage> {
    let op = ForwardOperator::new(key, &volume.grid)?;
    LightFieldImage::new(op.forward(&volume.values), key.config().sensor_pixel)
}

/// `Hᵀ O`; occluded pixels contribute nothing.
pub fn apply_adjoint(image: &LightFieldImage, key: &PsfKey, grid: &VolumeGrid) -> Result<Volume> {
    let op = ForwardOperator::new(key, grid)?;
    check_image_shape(image, &op)?;
    Ok(Volume {
        values: op.adjoint(&image.masked_values()),
        grid: grid.clone(),
    })
}

pub(crate) fn check_image_shape(image: &LightFieldImage, op: &ForwardOperator) -> Result<()> {
    if image.values.dim() != op.sensor_shape() {
        return Err(Error::config(format!(
            "image is {:?}, key sensor is {:?}",
            image.values.dim(),
            op.sensor_shape()
        )));
    }
    if let Some(m) = &image.mask {
        if m.dim() != image.values.dim() {
            return Err(Error::config("occlusion mask shape differs from image"));
        }
    }
    Ok(())
}

/// Explicit measurement matrix, rows = sensor pixels (row-major), columns =
/// voxels in `[z, y, x]` order.
pub fn dense_operator(key: &PsfKey, grid: &VolumeGrid, cap: usize) -> Result<Array2<f64>> {
    ForwardOperator::new(key, grid)?.dense(cap)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SensorOptions {
    /// Camera bit depth; `None` keeps the floating-point image.
    pub bits: Option<u32>,
}

/// Forward model plus optional B-bit camera quantization.
pub fn encrypt(volume: &Volume, key: &PsfKey, opts: SensorOptions) -> Result<LightFieldImage> {
    let mut img = apply_forward(volume, key)?;
    if let Some(bits) = opts.bits {
        if bits == 0 || bits > 32 {
            return Err(Error::argument(format!(
                "bit depth must be in 1..=32, got {bits}"
            )));
        }
        let peak = img.peak();
        let scale = if peak > 0.0 {
            ((1u64 << bits) - 1) as f64 / peak
        } else {
            1.0
        };
        img.values.mapv_inplace(|v| (v * scale + 0.5).floor());
        img.scale = Some(scale);
    }
    Ok(img)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Occlusion {
    /// Fraction of the image area, in (0, 1).
    Fraction(f64),
    /// Explicit rectangle.
    Rect {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum OcclusionMode {
    /// Contiguous block anchored at the top-left corner.
    #[default]
    Corner,
    /// Scattered pixels chosen by a seeded stream.
    Random { seed: u64 },
}

/// Blocks part of the image: blocked pixels become 0 and are marked invalid.
pub fn occlude(image: &LightFieldImage, region: Occlusion, mode: OcclusionMode) -> Result<LightFieldImage> {
    let (h, w) = image.values.dim();
    let mut blocked = Array2::from_elem((h, w), false);
    match region {
        Occlusion::Rect { row, col, rows, cols } => {
            if row + rows > h || col + cols > w {
                return Err(Error::argument(format!(
                    "occlusion rectangle exceeds the {h}x{w} image"
                )));
            }
            blocked
                .slice_mut(ndarray::s![row..row + rows, col..col + cols])
                .fill(true);
        }
        Occlusion::Fraction(f) => {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::argument(format!(
                    "occlusion fraction must be in (0, 1), got {f}"
                )));
            }
            let count = (f * (h * w) as f64).floor() as usize;
            match mode {
                OcclusionMode::Corner => {
                    let width = ((f.sqrt() * w as f64).ceil() as usize).clamp(1, w);
                    for i in 0..count {
                        blocked[[i / width, i % width]] = true;
                    }
                }
                OcclusionMode::Random { seed } => {
                    let mut s = SeededStream::new(seed, Stream::Occlusion);
                    let mut idx: Vec<usize> = (0..h * w).collect();
                    for i in 0..count {
                        let j = i + s.below((h * w - i) as u64) as usize;
                        idx.swap(i, j);
                        blocked[[idx[i] / w, idx[i] % w]] = true;
                    }
                }
            }
        }
    }
    let mut out = image.clone();
    let mut mask = image
        .mask
        .clone()
        .unwrap_or_else(|| Array2::from_elem((h, w), true));
    for ((r, c), &b) in blocked.indexed_iter() {
        if b {
            out.values[[r, c]] = 0.0;
            mask[[r, c]] = false;
        }
    }
    out.mask = Some(mask);
    Ok(out)
}
