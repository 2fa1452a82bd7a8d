//! Volumetric light-field encryption.
//!
//! A 3D volume is encrypted into one 2D sensor image through a simulated
//! microscope with a microlens array and random phase/amplitude masks. The
//! bank of system PSFs ([`PsfKey`]) is the key: it drives the forward model
//! and the multiplicative deconvolution that recovers the volume.

pub mod analysis;
pub mod digitize;
pub mod error;
pub mod forward;
pub mod inverse;
pub mod io;
pub mod psf;
pub mod rng;
pub mod run_config;
pub mod scenes;
#[cfg(test)]
mod testkit;

pub use analysis::{normalized_correlation, run_attack_suite, AttackSettings, CorrelationReport};
pub use digitize::{digitize, reassemble, BinaryPlaneSet};
pub use error::{Error, Result};
pub use forward::{
    apply_adjoint, apply_forward, dense_operator, encrypt, occlude, LightFieldImage, Occlusion,
    OcclusionMode, SensorOptions, Volume,
};
pub use inverse::{decrypt, perturb_key, DeconvSettings, Initialization};
pub use psf::{build_psf_key, MaskSpec, OpticalSystemConfig, PsfKey};
pub use run_config::RunConfig;
