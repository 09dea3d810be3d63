//! Shared domain types used across modules.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{MrfError, Result};

/// Image grid dimensions. Voxels are flattened row-major: `n = r * cols + c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
}

impl Grid {
    pub fn new(rows: usize, cols: usize) -> Self {
        Grid { rows, cols }
    }

    /// Number of voxels N.
    pub fn n(&self) -> usize {
        self.rows * self.cols
    }

    pub fn flat(&self, r: usize, c: usize) -> usize {
        r * self.cols + c
    }

    pub fn unflat(&self, n: usize) -> (usize, usize) {
        (n / self.cols, n % self.cols)
    }
}

impl std::fmt::Display for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// Contrast-weighted time series as an N x M matrix: rows are voxels,
/// columns are TR frames.
#[derive(Debug, Clone)]
pub struct CasoratiImage {
    pub c: Array2<Complex64>,
    pub grid: Grid,
}

impl CasoratiImage {
    pub fn new(c: Array2<Complex64>, grid: Grid) -> Result<Self> {
        if c.nrows() != grid.n() {
            return Err(MrfError::Shape(format!(
                "casorati matrix has {} rows, grid {} has {} voxels",
                c.nrows(),
                grid,
                grid.n()
            )));
        }
        Ok(CasoratiImage { c, grid })
    }

    pub fn n_frames(&self) -> usize {
        self.c.ncols()
    }
}

/// Spatial coefficients U of the factorization C = U * V: N x L.
#[derive(Debug, Clone)]
pub struct SpatialCoefficients {
    pub u: Array2<Complex64>,
    pub grid: Grid,
}

impl SpatialCoefficients {
    pub fn new(u: Array2<Complex64>, grid: Grid) -> Result<Self> {
        if u.nrows() != grid.n() {
            return Err(MrfError::Shape(format!(
                "coefficient matrix has {} rows, grid {} has {} voxels",
                u.nrows(),
                grid,
                grid.n()
            )));
        }
        Ok(SpatialCoefficients { u, grid })
    }

    pub fn zeros(grid: Grid, rank: usize) -> Self {
        SpatialCoefficients {
            u: Array2::zeros((grid.n(), rank)),
            grid,
        }
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    /// Expand to the full time series U * V (N x M).
    pub fn expand(&self, v: &crate::subspace::TemporalSubspace) -> Result<CasoratiImage> {
        if v.rank() != self.rank() {
            return Err(MrfError::Shape(format!(
                "coefficient rank {} does not match subspace rank {}",
                self.rank(),
                v.rank()
            )));
        }
        let c = crate::linalg::matmul(&self.u.view(), &v.v_hat.view());
        CasoratiImage::new(c, self.grid)
    }
}
