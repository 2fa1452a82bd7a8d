use crate::forward::VolumeGrid;
use crate::psf::{build_psf_key, MaskSpec, OpticalSystemConfig, PsfKey};
use crate::rng::{SeededStream, Stream};
use ndarray::{Array2, Array3};

/// One 80 µm lenslet over an 8×8 sensor, 4 offsets per axis at 1 µm.
pub fn tiny_config() -> OpticalSystemConfig {
    OpticalSystemConfig {
        lenslet_pitch: 80e-6,
        lenslet_focal: 0.5e-3,
        psf_samples: 5,
        sensor_pixels: 8,
        ..Default::default()
    }
}

pub const TINY_PLANES: [f64; 2] = [-6e-6, 0.0];

pub fn tiny_key(mask: &MaskSpec) -> PsfKey {
    build_psf_key(&tiny_config(), mask, &TINY_PLANES, 1e-6).unwrap()
}

pub fn tiny_grid() -> VolumeGrid {
    VolumeGrid::centered(4, 4, 1e-6, TINY_PLANES.to_vec(), 4)
}

/// Three 150 µm lenslets across a 45-pixel sensor at 5 offsets per axis.
pub fn small_key() -> (PsfKey, VolumeGrid) {
    let config = OpticalSystemConfig {
        psf_samples: 31,
        sensor_pixels: 45,
        ..Default::default()
    };
    let z = vec![-20e-6, -10e-6];
    let key = build_psf_key(&config, &MaskSpec::phase(5, 10e-6), &z, 1.5e-6).unwrap();
    let grid = VolumeGrid::centered(12, 10, 1.5e-6, z, 5);
    (key, grid)
}

pub fn random_volume(shape: (usize, usize, usize), seed: u64) -> Array3<f64> {
    let mut s = SeededStream::new(seed, Stream::Occlusion);
    Array3::from_shape_simple_fn(shape, || s.unit())
}

pub fn random_image(shape: (usize, usize), seed: u64) -> Array2<f64> {
    let mut s = SeededStream::new(seed, Stream::Occlusion);
    Array2::from_shape_simple_fn(shape, || s.unit())
}
