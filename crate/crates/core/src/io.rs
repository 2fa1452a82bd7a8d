//! File formats: self-describing text headers followed by little-endian
//! binary payloads, plus PNG import/export.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{DynamicImage, ImageBuffer, Luma};
use ndarray::{Array2, Array3};
use sha2::{Digest, Sha256};

use crate::digitize::BinaryPlaneSet;
use crate::error::{Error, Result as CoreResult};
use crate::forward::{LightFieldImage, Volume, VolumeGrid};
use crate::psf::key::hex;

pub const VOLUME_MAGIC: &str = "LFVOL1";
pub const IMAGE_MAGIC: &str = "LFIMG1";
pub const PLANES_MAGIC: &str = "LFBP1";
pub const PNG_SIDECAR_MAGIC: &str = "LFPNG1";

/// Splits `MAGIC\n<key=value lines>end_header\n<payload>`.
pub(crate) fn split_header<'a>(bytes: &'a [u8], magic: &str) -> Result<(String, &'a [u8]), String> {
    let first = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or("missing magic line")?;
    if &bytes[..first] != magic.as_bytes() {
        return Err(format!("bad magic, expected {magic}"));
    }
    let marker = b"end_header\n";
    let rest = &bytes[first + 1..];
    let mut line_start = 0;
    while line_start < rest.len() {
        if rest[line_start..].starts_with(marker) {
            let text =
                std::str::from_utf8(&rest[..line_start]).map_err(|_| "header is not UTF-8".to_string())?;
            return Ok((text.to_string(), &rest[line_start + marker.len()..]));
        }
        match rest[line_start..].iter().position(|&b| b == b'\n') {
            Some(p) => line_start += p + 1,
            None => break,
        }
    }
    Err("missing end_header".into())
}

/// Ordered `key=value` pairs of a header.
#[derive(Debug, Clone, Default)]
pub struct HeaderMap {
    entries: Vec<(String, String)>,
}

impl HeaderMap {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut entries = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("header line without '=': {line}"))?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Self { entries })
    }

    pub fn raw(&self, key: &str) -> Result<&str, String> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| format!("missing header field '{key}'"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, String> {
        let v = self.raw(key)?;
        v.parse()
            .map_err(|_| format!("cannot parse header field {key}='{v}'"))
    }

    pub fn list(&self, key: &str) -> Result<Vec<f64>, String> {
        let v = self.raw(key)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|s| s.trim().parse().map_err(|_| format!("bad number '{s}' in {key}")))
            .collect()
    }

    pub fn all(&self, key: &str) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(k, _)| k == key)
            .map(|(_, v)| v.clone())
            .collect()
    }
}

/// `path` with `.hdr` appended: `scene.vol` → `scene.vol.hdr`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

fn read_bytes(path: &Path) -> CoreResult<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CoreResult<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_sidecar(path: &Path, magic: &str) -> CoreResult<HeaderMap> {
    let hdr = sidecar_path(path);
    let text = fs::read_to_string(&hdr).map_err(|e| Error::io(&hdr, e))?;
    let (first, rest) = text.split_once('\n').unwrap_or((text.as_str(), ""));
    if first.trim() != magic {
        return Err(Error::format(&hdr, format!("expected magic {magic}")));
    }
    HeaderMap::parse(rest).map_err(|r| Error::format(&hdr, r))
}

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:e}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn f32_payload(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(|v| (v as f32).to_le_bytes()).collect()
}

fn parse_f32(path: &Path, bytes: &[u8], count: usize) -> CoreResult<Vec<f64>> {
    if bytes.len() != 4 * count {
        return Err(Error::format(
            path,
            format!("expected {} bytes of f32 data, found {}", 4 * count, bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Header fields describing a voxel grid, shared by volume and image files.
pub fn grid_fields(grid: &VolumeGrid) -> Vec<(String, String)> {
    vec![
        ("nx".into(), grid.nx.to_string()),
        ("ny".into(), grid.ny.to_string()),
        ("lateral_pitch".into(), format!("{:e}", grid.lateral_pitch)),
        ("origin_x".into(), format!("{:e}", grid.origin[0])),
        ("origin_y".into(), format!("{:e}", grid.origin[1])),
        ("z_positions".into(), join_floats(&grid.axial_positions)),
    ]
}

/// Inverse of [`grid_fields`].
pub fn grid_from_header(h: &HeaderMap) -> Result<VolumeGrid, String> {
    Ok(VolumeGrid {
        nx: h.get("nx")?,
        ny: h.get("ny")?,
        lateral_pitch: h.get("lateral_pitch")?,
        axial_positions: h.list("z_positions")?,
        origin: [h.get("origin_x")?, h.get("origin_y")?],
    })
}

fn render_header(magic: &str, fields: &[(String, String)]) -> String {
    let mut s = format!("{magic}\n");
    for (k, v) in fields {
        let _ = writeln!(s, "{k}={v}");
    }
    s
}

/// Writes `values` as little-endian f32 in `[z, y, x]` order to `path` and
/// the grid description to `path.hdr`. `extra` fields are appended to the
/// header verbatim.
pub fn write_volume(path: impl AsRef<Path>, volume: &Volume, extra: &[(String, String)]) -> CoreResult<()> {
    let path = path.as_ref();
    let mut fields = vec![
        ("dtype".to_string(), "f32le".to_string()),
        ("order".to_string(), "z,y,x".to_string()),
    ];
    fields.extend(grid_fields(&volume.grid));
    fields.extend_from_slice(extra);
    write_bytes(path, &f32_payload(volume.values.iter().copied()))?;
    write_bytes(
        &sidecar_path(path),
        render_header(VOLUME_MAGIC, &fields).as_bytes(),
    )
}

pub fn read_volume(path: impl AsRef<Path>) -> CoreResult<(Volume, HeaderMap)> {
    let path = path.as_ref();
    let header = read_sidecar(path, VOLUME_MAGIC)?;
    let grid = grid_from_header(&header).map_err(|r| Error::format(sidecar_path(path), r))?;
    let values = parse_f32(path, &read_bytes(path)?, grid.voxels())?;
    let values = Array3::from_shape_vec(grid.shape(), values).expect("length checked");
    Ok((Volume::new(values, grid)?, header))
}

/// Loads 8- or 16-bit grayscale PNG/TIFF files, one per plane, mapping the
/// full integer range linearly onto [0, 1].
pub fn import_volume_stack<P: AsRef<Path>>(
    planes: &[P],
    lateral_pitch: f64,
    axial_positions: Vec<f64>,
    offsets: usize,
) -> CoreResult<Volume> {
    if planes.len() != axial_positions.len() {
        return Err(Error::argument(format!(
            "{} plane images for {} axial positions",
            planes.len(),
            axial_positions.len()
        )));
    }
    let mut layers = Vec::with_capacity(planes.len());
    for p in planes {
        let p = p.as_ref();
        let img = image::open(p)?;
        let layer = match img {
            DynamicImage::ImageLuma8(b) => {
                let (w, h) = b.dimensions();
                Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
                    b.get_pixel(c as u32, r as u32)[0] as f64 / 255.0
                })
            }
            DynamicImage::ImageLuma16(b) => {
                let (w, h) = b.dimensions();
                Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
                    b.get_pixel(c as u32, r as u32)[0] as f64 / 65535.0
                })
            }
            other => {
                return Err(Error::format(
                    p,
                    format!("expected 8- or 16-bit grayscale, found {:?}", other.color()),
                ))
            }
        };
        if let Some(first) = layers.first().map(|l: &Array2<f64>| l.dim()) {
            if layer.dim() != first {
                return Err(Error::format(p, "plane size differs from the first plane"));
            }
        }
        layers.push(layer);
    }
    let (ny, nx) = layers.first().map_or((0, 0), |l| l.dim());
    let grid = VolumeGrid::centered(nx, ny, lateral_pitch, axial_positions, offsets);
    let mut values = Array3::zeros(grid.shape());
    for (z, layer) in layers.iter().enumerate() {
        values.index_axis_mut(ndarray::Axis(0), z).assign(layer);
    }
    Volume::new(values, grid)
}

/// Writes the image as little-endian f32 rows with `path.hdr` alongside.
/// Occluded pixels are stored as NaN.
pub fn write_image(
    path: impl AsRef<Path>,
    image: &LightFieldImage,
    extra: &[(String, String)],
) -> CoreResult<()> {
    let path = path.as_ref();
    let (rows, cols) = image.values.dim();
    let occluded = image
        .mask
        .as_ref()
        .map_or(0, |m| m.iter().filter(|v| !**v).count());
    let mut fields = vec![
        ("dtype".to_string(), "f32le".to_string()),
        ("rows".to_string(), rows.to_string()),
        ("cols".to_string(), cols.to_string()),
        ("pixel_pitch".to_string(), format!("{:e}", image.pixel_pitch)),
        (
            "scale".to_string(),
            image.scale.map_or("none".into(), |s| format!("{s:e}")),
        ),
        ("occluded_pixels".to_string(), occluded.to_string()),
    ];
    fields.extend_from_slice(extra);
    let values = image.values.indexed_iter().map(|(ix, &v)| match &image.mask {
        Some(m) if !m[ix] => f64::NAN,
        _ => v,
    });
    write_bytes(path, &f32_payload(values))?;
    write_bytes(
        &sidecar_path(path),
        render_header(IMAGE_MAGIC, &fields).as_bytes(),
    )
}

pub fn read_image(path: impl AsRef<Path>) -> CoreResult<(LightFieldImage, HeaderMap)> {
    let path = path.as_ref();
    let header = read_sidecar(path, IMAGE_MAGIC)?;
    let bad = |r: String| Error::format(sidecar_path(path), r);
    let rows: usize = header.get("rows").map_err(bad)?;
    let cols: usize = header.get("cols").map_err(bad)?;
    let pitch: f64 = header.get("pixel_pitch").map_err(bad)?;
    let scale = match header.raw("scale").map_err(bad)? {
        "none" => None,
        s => Some(s.parse().map_err(|_| bad(format!("bad scale '{s}'")))?),
    };
    let raw = parse_f32(path, &read_bytes(path)?, rows * cols)?;
    let raw = Array2::from_shape_vec((rows, cols), raw).expect("length checked");
    let mask = raw.mapv(|v| !v.is_nan());
    let values = raw.mapv(|v| if v.is_nan() { 0.0 } else { v });
    let mut image = LightFieldImage::new(values, pitch)?;
    image.scale = scale;
    if mask.iter().any(|v| !v) {
        image.mask = Some(mask);
    }
    Ok((image, header))
}

/// 16-bit grayscale PNG, max-normalized; the peak goes to `path.hdr`.
pub fn export_image_png(path: impl AsRef<Path>, image: &LightFieldImage) -> CoreResult<()> {
    let path = path.as_ref();
    let (rows, cols) = image.values.dim();
    let peak = image.peak();
    let norm = if peak > 0.0 { 65535.0 / peak } else { 0.0 };
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(cols as u32, rows as u32, |c, r| {
        Luma([(image.values[[r as usize, c as usize]] * norm).round() as u16])
    });
    buf.save(path)?;
    let fields = vec![
        ("bits".to_string(), "16".to_string()),
        ("peak".to_string(), format!("{peak:e}")),
        ("pixel_pitch".to_string(), format!("{:e}", image.pixel_pitch)),
    ];
    write_bytes(
        &sidecar_path(path),
        render_header(PNG_SIDECAR_MAGIC, &fields).as_bytes(),
    )
}

fn pack_planes(set: &BinaryPlaneSet) -> Vec<u8> {
    let mut out = Vec::new();
    for plane in &set.planes {
        let bits: Vec<bool> = plane.iter().copied().collect();
        for chunk in bits.chunks(8) {
            let mut byte = 0u8;
            for (i, &b) in chunk.iter().enumerate() {
                if b {
                    byte |= 0x80 >> i;
                }
            }
            out.push(byte);
        }
    }
    out
}

/// Bit-plane container: magic, header, `end_header`, then each plane packed
/// MSB-first in row-major order, padded to a whole byte.
pub fn write_planes(path: impl AsRef<Path>, set: &BinaryPlaneSet) -> CoreResult<()> {
    set.validate()?;
    let path = path.as_ref();
    let (rows, cols) = set.shape();
    let payload = pack_planes(set);
    let mut out = format!(
        "{PLANES_MAGIC}\nrows={rows}\ncols={cols}\nlevels={}\npeak={:e}\npixel_pitch={:e}\nsha256={}\nend_header\n",
        set.n_levels,
        set.peak,
        set.pixel_pitch,
        hex(&Sha256::digest(&payload))
    )
    .into_bytes();
    out.extend_from_slice(&payload);
    write_bytes(path, &out)
}

pub fn read_planes(path: impl AsRef<Path>) -> CoreResult<BinaryPlaneSet> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let bad = |r: String| Error::format(path, r);
    let (text, payload) = split_header(&bytes, PLANES_MAGIC).map_err(bad)?;
    let h = HeaderMap::parse(&text).map_err(bad)?;
    let rows: usize = h.get("rows").map_err(bad)?;
    let cols: usize = h.get("cols").map_err(bad)?;
    let levels: u32 = h.get("levels").map_err(bad)?;
    let digest: String = h.get("sha256").map_err(bad)?;
    if hex(&Sha256::digest(payload)) != digest {
        return Err(bad("checksum mismatch".into()));
    }
    let per_plane = (rows * cols).div_ceil(8);
    if payload.len() != per_plane * levels as usize {
        return Err(bad(format!(
            "expected {} payload bytes, found {}",
            per_plane * levels as usize,
            payload.len()
        )));
    }
    let planes = payload
        .chunks_exact(per_plane.max(1))
        .take(levels as usize)
        .map(|chunk| {
            Array2::from_shape_fn((rows, cols), |(r, c)| {
                let i = r * cols + c;
                chunk[i / 8] & (0x80 >> (i % 8)) != 0
            })
        })
        .collect();
    let set = BinaryPlaneSet {
        planes,
        n_levels: levels,
        peak: h.get("peak").map_err(bad)?,
        pixel_pitch: h.get("pixel_pitch").map_err(bad)?,
    };
    set.validate()?;
    Ok(set)
}

/// Writes one black/white PNG per plane (`{stem}_bit{i}.png`, values 0 or
/// 255) and a manifest `{stem}.planes` listing them with the scale metadata.
/// Returns the manifest path.
pub fn export_planes_png(dir: impl AsRef<Path>, stem: &str, set: &BinaryPlaneSet) -> CoreResult<PathBuf> {
    set.validate()?;
    let dir = dir.as_ref();
    let (rows, cols) = set.shape();
    let mut fields = vec![
        ("rows".to_string(), rows.to_string()),
        ("cols".to_string(), cols.to_string()),
        ("levels".to_string(), set.n_levels.to_string()),
        ("peak".to_string(), format!("{:e}", set.peak)),
        ("pixel_pitch".to_string(), format!("{:e}", set.pixel_pitch)),
    ];
    for (i, plane) in set.planes.iter().enumerate() {
        let name = format!("{stem}_bit{i}.png");
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_fn(cols as u32, rows as u32, |c, r| {
            Luma([if plane[[r as usize, c as usize]] { 255 } else { 0 }])
        });
        buf.save(dir.join(&name))?;
        fields.push(("plane".to_string(), name));
    }
    let manifest = dir.join(format!("{stem}.planes"));
    write_bytes(&manifest, render_header(PLANES_MAGIC, &fields).as_bytes())?;
    Ok(manifest)
}

/// Reads a manifest written by [`export_planes_png`]. Plane images must be
/// 8-bit grayscale with only the values 0 and 255.
pub fn import_planes_png(manifest: impl AsRef<Path>) -> CoreResult<BinaryPlaneSet> {
    let manifest = manifest.as_ref();
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let bad = |r: String| Error::format(manifest, r);
    let (first, rest) = text.split_once('\n').unwrap_or((text.as_str(), ""));
    if first.trim() != PLANES_MAGIC {
        return Err(bad(format!("expected magic {PLANES_MAGIC}")));
    }
    let h = HeaderMap::parse(rest).map_err(bad)?;
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let mut planes = Vec::new();
    for name in h.all("plane") {
        let p = dir.join(&name);
        let img = image::open(&p)?;
        let DynamicImage::ImageLuma8(buf) = img else {
            return Err(Error::format(&p, "bit planes must be 8-bit grayscale"));
        };
        let (w, ht) = buf.dimensions();
        let mut plane = Array2::from_elem((ht as usize, w as usize), false);
        for (c, r, px) in buf.enumerate_pixels() {
            plane[[r as usize, c as usize]] = match px[0] {
                0 => false,
                255 => true,
                v => return Err(Error::format(&p, format!("pixel value {v} is neither 0 nor 255"))),
            };
        }
        planes.push(plane);
    }
    let set = BinaryPlaneSet {
        planes,
        n_levels: h.get("levels").map_err(bad)?,
        peak: h.get("peak").map_err(bad)?,
        pixel_pitch: h.get("pixel_pitch").map_err(bad)?,
    };
    set.validate()?;
    let want: (usize, usize) = (h.get("rows").map_err(bad)?, h.get("cols").map_err(bad)?);
    if set.shape() != want {
        return Err(bad(format!(
            "planes are {:?}, manifest says {want:?}",
            set.shape()
        )));
    }
    Ok(set)
}
