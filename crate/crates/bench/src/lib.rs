//! Fixtures shared by the benchmarks.

use lfcrypt_core::forward::VolumeGrid;
use lfcrypt_core::scenes::Scene;
use lfcrypt_core::{build_psf_key, MaskSpec, OpticalSystemConfig, PsfKey, Volume};

/// Reference optics, one plane at −34 µm, 64×64 voxels at 0.25 µm.
pub fn single_plane() -> (PsfKey, Volume) {
    let config = OpticalSystemConfig::default();
    let z = vec![-34e-6];
    let key = build_psf_key(&config, &MaskSpec::phase(1, 10e-6), &z, 0.25e-6).expect("reference key");
    let grid = VolumeGrid::centered(64, 64, 0.25e-6, z, key.offsets_per_axis());
    let volume = Scene::Sbu.render(&grid).expect("scene renders");
    (key, volume)
}
