use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// A square sampling grid: `samples` points per axis at `interval` spacing,
/// with the middle sample at `center` (x, y), in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub samples: usize,
    pub interval: f64,
    pub center: [f64; 2],
}

impl Grid {
    pub fn centered(samples: usize, interval: f64) -> Self {
        Self {
            samples,
            interval,
            center: [0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.samples.is_multiple_of(2) {
            return Err(Error::config(format!(
                "grid sample count must be odd, got {}",
                self.samples
            )));
        }
        if !(self.interval.is_finite() && self.interval > 0.0) {
            return Err(Error::config(format!(
                "grid interval must be positive, got {}",
                self.interval
            )));
        }
        Ok(())
    }

    pub fn mid(&self) -> usize {
        self.samples / 2
    }

    /// Signed sample index relative to the middle sample.
    pub fn rel(&self, index: usize) -> i64 {
        index as i64 - self.mid() as i64
    }

    /// Physical x of column `col`.
    pub fn x(&self, col: usize) -> f64 {
        self.center[0] + self.rel(col) as f64 * self.interval
    }

    /// Physical y of row `row`.
    pub fn y(&self, row: usize) -> f64 {
        self.center[1] + self.rel(row) as f64 * self.interval
    }
}

/// Complex amplitudes on a [`Grid`], indexed `[row (y), col (x)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub values: Array2<Complex64>,
    pub sample_interval: f64,
    pub center: [f64; 2],
}

impl ComplexField {
    pub fn grid(&self) -> Grid {
        Grid {
            samples: self.values.nrows(),
            interval: self.sample_interval,
            center: self.center,
        }
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn intensity(&self) -> Array2<f64> {
        self.values.mapv(|z| z.norm_sqr())
    }
}

/// Planned 2D FFT for a fixed shape. Unnormalized in both directions.
#[derive(Clone)]
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn forward(&self, data: &mut Array2<Complex64>) {
        self.run(data, &self.row_fwd, &self.col_fwd);
    }

    pub fn inverse(&self, data: &mut Array2<Complex64>) {
        self.run(data, &self.row_inv, &self.col_inv);
    }

    fn run(&self, data: &mut Array2<Complex64>, rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.dim(), (self.rows, self.cols), "FFT shape mismatch");
        let scratch_len = rows.get_inplace_scratch_len().max(cols.get_inplace_scratch_len());
        let mut scratch = vec![Complex64::new(0.0, 0.0); scratch_len];
        let slice = data.as_slice_mut().expect("FFT input must be in standard layout");
        rows.process_with_scratch(slice, &mut scratch);

        let mut column = vec![Complex64::new(0.0, 0.0); self.rows];
        for c in 0..self.cols {
            for r in 0..self.rows {
                column[r] = slice[r * self.cols + c];
            }
            cols.process_with_scratch(&mut column, &mut scratch);
            for r in 0..self.rows {
                slice[r * self.cols + c] = column[r];
            }
        }
    }
}

/// Signed FFT frequency index for bin `k` of an `n`-point transform.
pub(crate) fn fft_index(k: usize, n: usize) -> i64 {
    if k <= (n - 1) / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}
