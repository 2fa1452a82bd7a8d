//! Built-in demo volumes.
//!
//! Glyphs are 1-bit 16×16 bitmaps, scaled by nearest-neighbour sampling to
//! three quarters of the lateral grid and centered. The continuous object of
//! the `multiplex` scene is an ellipsoid with a parabolic intensity profile.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::forward::{Volume, VolumeGrid};

const GLYPH_SIZE: usize = 16;

const GLYPH_S: [&str; GLYPH_SIZE] = [
    "................",
    ".....######.....",
    "...##########...",
    "..####....####..",
    "..###......##...",
    "..####..........",
    "...#######......",
    ".....#######....",
    ".........#####..",
    "...........###..",
    "..##.......###..",
    "..####....####..",
    "...##########...",
    ".....######.....",
    "................",
    "................",
];

const GLYPH_B: [&str; GLYPH_SIZE] = [
    "................",
    "..#########.....",
    "..###########...",
    "..###.....####..",
    "..###......###..",
    "..###.....####..",
    "..##########....",
    "..##########....",
    "..###.....####..",
    "..###......###..",
    "..###......###..",
    "..###.....####..",
    "..###########...",
    "..#########.....",
    "................",
    "................",
];

const GLYPH_U: [&str; GLYPH_SIZE] = [
    "................",
    "..###......###..",
    "..###......###..",
    "..###......###..",
    "..###......###..",
    "..###......###..",
    "..###......###..",
    "..###......###..",
    "..###......###..",
    "..###......###..",
    "..####....####..",
    "...##########...",
    "....########....",
    ".....######.....",
    "................",
    "................",
];

const GLYPH_DEER: [&str; GLYPH_SIZE] = [
    "..#.#...........",
    "..###.#.........",
    "...####.........",
    "....###.........",
    "....####........",
    "...#####........",
    "....#############",
    ".....############",
    ".....############",
    "......##########",
    "......##.....##.",
    "......#.#....#.#",
    "......#.#....#.#",
    "......#.#....#.#",
    "......#.#....#.#",
    "................",
];

const GLYPH_DOG: [&str; GLYPH_SIZE] = [
    "................",
    "................",
    "..##............",
    ".#####..........",
    "#######.........",
    "..#####........#",
    "...############.",
    "...############.",
    "...############.",
    "...###########..",
    "...##.......##..",
    "...##.......##..",
    "...##.......##..",
    "...##.......##..",
    "................",
    "................",
];

const GLYPH_BIRD: [&str; GLYPH_SIZE] = [
    "................",
    ".........###....",
    "........#####...",
    "........######..",
    ".......#####....",
    "..#...######....",
    "..###########...",
    "...###########..",
    "....##########..",
    ".....########...",
    "......######....",
    ".......#..#.....",
    ".......#..#.....",
    "......##.##.....",
    "................",
    "................",
];

fn bitmap(rows: &[&str; GLYPH_SIZE]) -> Array2<bool> {
    Array2::from_shape_fn((GLYPH_SIZE, GLYPH_SIZE), |(r, c)| {
        rows[r].as_bytes().get(c) == Some(&b'#')
    })
}

/// Glyph rasterized onto an `ny × nx` plane: true where the glyph is set.
fn raster(rows: &[&str; GLYPH_SIZE], ny: usize, nx: usize) -> Array2<bool> {
    let bits = bitmap(rows);
    let side = (ny.min(nx) * 3 / 4).max(1);
    let (r0, c0) = ((ny - side) / 2, (nx - side) / 2);
    let mut out = Array2::from_elem((ny, nx), false);
    for r in 0..side {
        for c in 0..side {
            out[[r0 + r, c0 + c]] = bits[[r * GLYPH_SIZE / side, c * GLYPH_SIZE / side]];
        }
    }
    out
}

/// Index of the plane nearest `z`.
fn nearest_plane(grid: &VolumeGrid, z: f64) -> usize {
    let mut best = 0;
    for (i, &p) in grid.axial_positions.iter().enumerate() {
        if (p - z).abs() < (grid.axial_positions[best] - z).abs() {
            best = i;
        }
    }
    best
}

/// Planes within half a thickness of `z`, or the nearest one when none is.
fn planes_around(grid: &VolumeGrid, z: f64, thickness: f64) -> Vec<usize> {
    let hits: Vec<usize> = (0..grid.nz())
        .filter(|&i| (grid.axial_positions[i] - z).abs() < thickness / 2.0 - 1e-12)
        .collect();
    if hits.is_empty() {
        vec![nearest_plane(grid, z)]
    } else {
        hits
    }
}

const SBU_DEPTHS: [f64; 3] = [-60e-6, -34e-6, -10e-6];
const LETTER_THICKNESS: f64 = 2e-6;

const MULTIPLEX_DEPTHS: [f64; 3] = [-60e-6, -54e-6, -48e-6];
/// Semi-axes (x, y, z) and center z of the continuous blob, meters.
const BLOB_SEMI_AXES: [f64; 3] = [15e-6, 15e-6, 25e-6];
const BLOB_CENTER_Z: f64 = -24e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scene {
    /// Letters S, B, U at −60, −34 and −10 µm.
    Sbu,
    /// Deer, dog and bird glyph planes plus an ellipsoidal blob.
    Multiplex,
    /// S/B/U letters drawn in gray levels {128, 255} of 255.
    Grayscale3,
    /// S/B/U letters drawn in gray levels {85, 170, 255} of 255.
    Grayscale4,
}

pub const SCENE_NAMES: [&str; 4] = ["sbu", "multiplex", "grayscale3", "grayscale4"];

impl fmt::Display for Scene {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Scene::Sbu => "sbu",
            Scene::Multiplex => "multiplex",
            Scene::Grayscale3 => "grayscale3",
            Scene::Grayscale4 => "grayscale4",
        };
        f.write_str(name)
    }
}

impl FromStr for Scene {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sbu" => Ok(Scene::Sbu),
            "multiplex" => Ok(Scene::Multiplex),
            "grayscale3" => Ok(Scene::Grayscale3),
            "grayscale4" => Ok(Scene::Grayscale4),
            other => Err(Error::argument(format!(
                "unknown scene '{other}', expected one of {}",
                SCENE_NAMES.join(", ")
            ))),
        }
    }
}

impl Scene {
    pub fn render(self, grid: &VolumeGrid) -> Result<Volume> {
        grid.validate()?;
        let (ny, nx) = (grid.ny, grid.nx);
        let mut values = Array3::zeros(grid.shape());
        match self {
            Scene::Sbu => {
                for (glyph, z) in [GLYPH_S, GLYPH_B, GLYPH_U].iter().zip(SBU_DEPTHS) {
                    let mask = raster(glyph, ny, nx);
                    for p in planes_around(grid, z, LETTER_THICKNESS) {
                        paint(&mut values, p, &mask, |_, _| 1.0);
                    }
                }
            }
            Scene::Grayscale3 | Scene::Grayscale4 => {
                let levels: &[f64] = if self == Scene::Grayscale3 {
                    &[128.0, 255.0]
                } else {
                    &[85.0, 170.0, 255.0]
                };
                let band = (nx / 8).max(1);
                for (glyph, z) in [GLYPH_S, GLYPH_B, GLYPH_U].iter().zip(SBU_DEPTHS) {
                    let mask = raster(glyph, ny, nx);
                    for p in planes_around(grid, z, LETTER_THICKNESS) {
                        paint(&mut values, p, &mask, |_, c| {
                            levels[(c / band) % levels.len()] / 255.0
                        });
                    }
                }
            }
            Scene::Multiplex => {
                for (glyph, z) in [GLYPH_DEER, GLYPH_DOG, GLYPH_BIRD].iter().zip(MULTIPLEX_DEPTHS) {
                    let mask = raster(glyph, ny, nx);
                    paint(&mut values, nearest_plane(grid, z), &mask, |_, _| 1.0);
                }
                let (cx, cy) = (
                    grid.x(0) + (nx - 1) as f64 * grid.lateral_pitch / 2.0,
                    grid.y(0) + (ny - 1) as f64 * grid.lateral_pitch / 2.0,
                );
                for ((p, r, c), v) in values.indexed_iter_mut() {
                    let q = ((grid.x(c) - cx) / BLOB_SEMI_AXES[0]).powi(2)
                        + ((grid.y(r) - cy) / BLOB_SEMI_AXES[1]).powi(2)
                        + ((grid.axial_positions[p] - BLOB_CENTER_Z) / BLOB_SEMI_AXES[2]).powi(2);
                    if q < 1.0 {
                        *v = f64::max(*v, 1.0 - q);
                    }
                }
            }
        }
        Volume::new(values, grid.clone())
    }
}

fn paint(values: &mut Array3<f64>, plane: usize, mask: &Array2<bool>, level: impl Fn(usize, usize) -> f64) {
    for ((r, c), &on) in mask.indexed_iter() {
        if on {
            values[[plane, r, c]] = level(r, c);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_grid(n: usize) -> VolumeGrid {
        let z = (0..26).map(|i| -60e-6 + 2e-6 * i as f64).collect();
        VolumeGrid::centered(n, n, 0.25e-6, z, 30)
    }

    #[test]
    fn glyph_rows_are_square() {
        for g in [GLYPH_S, GLYPH_B, GLYPH_U, GLYPH_DEER, GLYPH_DOG, GLYPH_BIRD] {
            assert!(g.iter().all(|row| row.len() >= GLYPH_SIZE));
            assert!(bitmap(&g).iter().filter(|&&b| b).count() > 20);
        }
    }

    #[test]
    fn sbu_occupies_exactly_three_planes() {
        let grid = reference_grid(128);
        let v = Scene::Sbu.render(&grid).unwrap();
        let occupied: Vec<f64> = (0..grid.nz())
            .filter(|&p| v.values.index_axis(ndarray::Axis(0), p).iter().any(|&x| x > 0.0))
            .map(|p| grid.axial_positions[p])
            .collect();
        assert_eq!(occupied.len(), 3);
        for (z, want) in occupied.iter().zip(SBU_DEPTHS) {
            assert!((z - want).abs() < 1e-12);
        }
    }

    #[test]
    fn grayscale4_has_four_levels() {
        let v = Scene::Grayscale4.render(&reference_grid(64)).unwrap();
        let mut levels: Vec<u32> = v.values.iter().map(|x| (x * 255.0).round() as u32).collect();
        levels.sort_unstable();
        levels.dedup();
        assert_eq!(levels, vec![0, 85, 170, 255]);

        let v = Scene::Grayscale3.render(&reference_grid(64)).unwrap();
        let mut levels: Vec<u32> = v.values.iter().map(|x| (x * 255.0).round() as u32).collect();
        levels.sort_unstable();
        levels.dedup();
        assert_eq!(levels, vec![0, 128, 255]);
    }

    #[test]
    fn multiplex_has_glyphs_and_a_continuous_blob() {
        let grid = reference_grid(64);
        let v = Scene::Multiplex.render(&grid).unwrap();
        assert!(v.max() <= 1.0);
        let distinct = v.values.iter().filter(|&&x| x > 0.0 && x < 1.0).count();
        assert!(distinct > 1000);
        let top = nearest_plane(&grid, -60e-6);
        assert!(v
            .values
            .index_axis(ndarray::Axis(0), top)
            .iter()
            .any(|&x| x == 1.0));
    }

    #[test]
    fn scene_names_roundtrip() {
        for name in SCENE_NAMES {
            assert_eq!(name.parse::<Scene>().unwrap().to_string(), name);
        }
        assert!(matches!("bunny".parse::<Scene>(), Err(Error::Argument(_))));
    }

    #[test]
    fn sbu_on_three_plane_grid() {
        let grid = VolumeGrid::centered(64, 64, 0.25e-6, SBU_DEPTHS.to_vec(), 30);
        let v = Scene::Sbu.render(&grid).unwrap();
        for p in 0..3 {
            let plane = v.values.index_axis(ndarray::Axis(0), p);
            let on = plane.iter().filter(|&&x| x > 0.0).count();
            assert!(on > 200 && on < 64 * 64 / 2, "plane {p}: {on}");
        }
    }
}
