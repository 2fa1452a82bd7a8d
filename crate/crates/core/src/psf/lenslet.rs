use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::psf::config::{integer_ratio, OpticalSystemConfig};
use crate::psf::field::{ComplexField, Grid};

/// Position of each grid sample inside its lattice cell, as an integer
/// sample index in `[-s/2, s - s/2)` where `s` is samples per cell.
///
/// The grid must step an integer number of times per cell and have its
/// middle sample on a cell center.
pub(crate) fn cell_local_indices(grid: &Grid, cell: f64) -> Result<(usize, Vec<i64>)> {
    grid.validate()?;
    let per_cell = integer_ratio(cell, grid.interval).ok_or_else(|| {
        Error::config(format!(
            "grid interval {} does not divide the cell size {cell}",
            grid.interval
        ))
    })?;
    for c in grid.center {
        let k = c / cell;
        if (k - k.round()).abs() > 1e-9 {
            return Err(Error::config(format!(
                "grid center {c} is not on a lenslet center (pitch {cell})"
            )));
        }
    }
    let s = per_cell as i64;
    let half = s / 2;
    let local = (0..grid.samples)
        .map(|i| {
            let j = grid.rel(i);
            j - (j + half).div_euclid(s) * s
        })
        .collect();
    Ok((per_cell, local))
}

/// Microlens array transmission: each cell of side `d` carries the
/// paraxial lens phase `exp(-ik|x_local|² / (2 f))` about its own center.
pub fn lenslet_modulation(grid: &Grid, config: &OpticalSystemConfig) -> Result<ComplexField> {
    let (_, local) = cell_local_indices(grid, config.lenslet_pitch)?;
    let k = config.image_wavenumber();
    let coef = -k / (2.0 * config.lenslet_focal) * grid.interval * grid.interval;
    let n = grid.samples;
    let values = Array2::from_shape_fn((n, n), |(r, c)| {
        let (lx, ly) = (local[c] as f64, local[r] as f64);
        Complex64::from_polar(1.0, coef * (lx * lx + ly * ly))
    });
    Ok(ComplexField {
        values,
        sample_interval: grid.interval,
        center: grid.center,
    })
}
