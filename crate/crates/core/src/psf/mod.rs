//! Wave-optics PSF engine: Debye field, lenslet and random-mask modulation,
//! spectral propagation to the sensor, and the PSF key built from them.

pub mod config;
pub mod debye;
pub mod field;
pub mod key;
pub mod lenslet;
pub mod mask;
pub mod propagate;
pub mod sampling;

pub use config::OpticalSystemConfig;
pub use debye::debye_field;
pub use field::{ComplexField, Grid};
pub use key::{build_psf_key, compute_point_psf, PointPsf, PsfKey, SparsePsf};
pub use lenslet::lenslet_modulation;
pub use mask::{random_mask, sensor_mask, AmplitudeLaw, MaskKind, MaskSpec};
pub use propagate::{propagate, transfer_function, Propagator};
pub use sampling::{validate_sampling, SamplingCheck};
