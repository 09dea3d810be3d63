//! Synthetic receive-coil sensitivity maps.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{MrfError, Result};
use crate::types::Grid;

/// Per-coil complex spatial weighting applied before Fourier encoding.
#[derive(Debug, Clone)]
pub struct CoilSensitivities {
    pub maps: Vec<Array2<Complex64>>,
    pub grid: Grid,
}

impl CoilSensitivities {
    pub fn uniform(grid: Grid) -> Self {
        CoilSensitivities {
            maps: vec![Array2::from_elem((grid.rows, grid.cols), Complex64::new(1.0, 0.0))],
            grid,
        }
    }

    pub fn n_coils(&self) -> usize {
        self.maps.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.maps.is_empty() {
            return Err(MrfError::Config("need at least one coil".into()));
        }
        for (c, m) in self.maps.iter().enumerate() {
            if m.dim() != (self.grid.rows, self.grid.cols) {
                return Err(MrfError::Shape(format!(
                    "coil {c} map does not match grid {}",
                    self.grid
                )));
            }
            if m.iter().any(|z| !z.is_finite()) {
                return Err(MrfError::Numerical(format!("coil {c} map has non-finite entries")));
            }
        }
        Ok(())
    }

    /// Sum over coils of |S_c|^2 per voxel, flattened row-major.
    pub fn sum_of_squares(&self) -> Vec<f64> {
        let n = self.grid.n();
        let mut sos = vec![0.0; n];
        for m in &self.maps {
            for (i, z) in m.iter().enumerate() {
                sos[i] += z.norm_sqr();
            }
        }
        sos
    }

    /// Flat row-major view of coil `c`.
    pub fn flat(&self, c: usize) -> &[Complex64] {
        self.maps[c].as_slice().expect("contiguous")
    }
}

/// Smooth Gaussian coil profiles centered on a ring around the FOV with a
/// gentle per-coil linear phase. With `normalize_sos` the maps are scaled
/// so that the sum of squares is exactly one everywhere.
pub fn make_coil_sensitivities(grid: Grid, n_coils: usize, normalize_sos: bool) -> Result<CoilSensitivities> {
    if n_coils == 0 {
        return Err(MrfError::Config("need at least one coil".into()));
    }
    if n_coils == 1 {
        return Ok(CoilSensitivities::uniform(grid));
    }
    let cy = grid.rows as f64 / 2.0;
    let cx = grid.cols as f64 / 2.0;
    let ring = 0.55 * grid.rows.max(grid.cols) as f64;
    let sigma = 0.6 * grid.rows.max(grid.cols) as f64;
    let mut maps = Vec::with_capacity(n_coils);
    for c in 0..n_coils {
        let ang = std::f64::consts::TAU * c as f64 / n_coils as f64;
        let py = cy + ring * ang.sin();
        let px = cx + ring * ang.cos();
        let mut map = Array2::zeros((grid.rows, grid.cols));
        for r in 0..grid.rows {
            for cc in 0..grid.cols {
                let y = r as f64 + 0.5;
                let x = cc as f64 + 0.5;
                let d2 = (y - py).powi(2) + (x - px).powi(2);
                let mag = (-d2 / (2.0 * sigma * sigma)).exp();
                let phase = 0.15 * ((x - cx) * ang.cos() + (y - cy) * ang.sin()) / sigma;
                map[[r, cc]] = Complex64::from_polar(mag, phase);
            }
        }
        maps.push(map);
    }
    if normalize_sos {
        let mut sos = Array2::<f64>::zeros((grid.rows, grid.cols));
        for m in &maps {
            for (s, z) in sos.iter_mut().zip(m.iter()) {
                *s += z.norm_sqr();
            }
        }
        for m in &mut maps {
            for (z, s) in m.iter_mut().zip(sos.iter()) {
                *z /= s.sqrt().max(1e-12);
            }
        }
    }
    let sens = CoilSensitivities { maps, grid };
    sens.validate()?;
    Ok(sens)
}
