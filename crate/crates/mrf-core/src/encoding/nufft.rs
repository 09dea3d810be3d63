//! Kaiser-Bessel gridded non-uniform Fourier transform.
//!
//! The forward map evaluates `F(k) = N^{-1/2} sum_x f(x) exp(-2 pi i k . x)`
//! (spatial coordinates centered on the grid) by de-apodizing, zero-padding
//! onto a 2x oversampled grid, taking a centered FFT, and interpolating with
//! a width-4 Kaiser-Bessel window. The adjoint is the exact conjugate
//! transpose of that composition (spread, inverse FFT, crop, de-apodize),
//! not an approximate inverse.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::types::Grid;

pub const OVERSAMPLING: f64 = 2.0;
pub const KERNEL_WIDTH: usize = 4;

/// Zeroth-order modified Bessel function of the first kind (power series;
/// plenty for the argument range of the gridding kernel).
pub fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    for k in 1..200 {
        term *= q / ((k * k) as f64);
        sum += term;
        if term < 1e-18 * sum {
            break;
        }
    }
    sum
}

/// Kaiser-Bessel interpolation kernel on |u| <= W/2.
fn kb_kernel(u: f64, width: f64, beta: f64) -> f64 {
    let ratio = 2.0 * u / width;
    let arg = 1.0 - ratio * ratio;
    if arg < 0.0 {
        return 0.0;
    }
    bessel_i0(beta * arg.sqrt())
}

/// Continuous Fourier transform of the kernel, used for de-apodization.
fn kb_transform(chi: f64, width: f64, beta: f64) -> f64 {
    let t = std::f64::consts::PI * width * chi;
    let d = beta * beta - t * t;
    if d > 0.0 {
        let s = d.sqrt();
        width * s.sinh() / s
    } else if d < 0.0 {
        let s = (-d).sqrt();
        width * s.sin() / s
    } else {
        width
    }
}

/// Standard near-optimal shape parameter for the given oversampling/width.
fn kb_beta(width: usize, oversampling: f64) -> f64 {
    let w = width as f64;
    let a = oversampling;
    std::f64::consts::PI * ((w / a) * (w / a) * (a - 0.5) * (a - 0.5) - 0.8).sqrt()
}

/// One interpolation tap: wrapped grid index and kernel weight.
#[derive(Debug, Clone, Copy)]
struct Tap {
    idx: usize,
    w: f64,
}

/// Precomputed taps for one sample (separable in y and x).
#[derive(Debug, Clone)]
struct SampleTaps {
    ys: Vec<Tap>,
    xs: Vec<Tap>,
}

fn taps_for(coord: f64, n_os: usize, width: f64, beta: f64) -> Vec<Tap> {
    // continuous index on the oversampled centered grid
    let t = coord * n_os as f64;
    let lo = (t - width / 2.0).ceil() as i64;
    let hi = (t + width / 2.0).floor() as i64;
    let half = n_os as i64 / 2;
    (lo..=hi)
        .map(|j| {
            let w = kb_kernel(t - j as f64, width, beta);
            let idx = (j + half).rem_euclid(n_os as i64) as usize;
            Tap { idx, w }
        })
        .collect()
}

/// Centered 2-D FFT helper. `forward` computes
/// `G[q] = sum_p g[p] exp(-2 pi i (q - n/2).(p - n/2) / n)` on even-sized
/// grids; `inverse` is its unnormalized conjugate transpose.
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
        assert!(rows % 2 == 0 && cols % 2 == 0, "centered FFT needs even sizes");
        let mut planner = FftPlanner::new();
        Fft2 {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    fn shift2(&self, buf: &mut [Complex64]) {
        let (r2, c2) = (self.rows / 2, self.cols / 2);
        for r in 0..r2 {
            for c in 0..self.cols {
                let rr = r + r2;
                let cc = (c + c2) % self.cols;
                buf.swap(r * self.cols + c, rr * self.cols + cc);
            }
        }
    }

    fn fft_axes(&self, buf: &mut [Complex64], forward: bool) {
        let row_plan = if forward { &self.row_fwd } else { &self.row_inv };
        let col_plan = if forward { &self.col_fwd } else { &self.col_inv };
        for r in 0..self.rows {
            row_plan.process(&mut buf[r * self.cols..(r + 1) * self.cols]);
        }
        let mut col = vec![Complex64::ZERO; self.rows];
        for c in 0..self.cols {
            for r in 0..self.rows {
                col[r] = buf[r * self.cols + c];
            }
            col_plan.process(&mut col);
            for r in 0..self.rows {
                buf[r * self.cols + c] = col[r];
            }
        }
    }

    pub fn forward_centered(&self, buf: &mut [Complex64]) {
        self.shift2(buf);
        self.fft_axes(buf, true);
        self.shift2(buf);
    }

    pub fn inverse_centered(&self, buf: &mut [Complex64]) {
        self.shift2(buf);
        self.fft_axes(buf, false);
        self.shift2(buf);
    }
}

/// Gridding machinery for one image geometry plus one trajectory.
pub struct Gridder {
    grid: Grid,
    os_rows: usize,
    os_cols: usize,
    /// de-apodization including the global N^{-1/2} scale
    deapod: Vec<f64>,
    fft: Fft2,
    /// per interleaf, per sample
    taps: Vec<Vec<SampleTaps>>,
}

impl Gridder {
    pub fn new(grid: Grid, interleaves: &[Vec<[f64; 2]>]) -> Self {
        assert!(grid.rows % 2 == 0 && grid.cols % 2 == 0, "gridding needs even image sizes");
        let os_rows = (grid.rows as f64 * OVERSAMPLING) as usize;
        let os_cols = (grid.cols as f64 * OVERSAMPLING) as usize;
        let beta = kb_beta(KERNEL_WIDTH, OVERSAMPLING);
        let width = KERNEL_WIDTH as f64;
        let scale = 1.0 / (grid.n() as f64).sqrt();
        let mut deapod = vec![0.0; grid.n()];
        for r in 0..grid.rows {
            let y = r as f64 - grid.rows as f64 / 2.0;
            let ay = kb_transform(y / os_rows as f64, width, beta);
            for c in 0..grid.cols {
                let x = c as f64 - grid.cols as f64 / 2.0;
                let ax = kb_transform(x / os_cols as f64, width, beta);
                deapod[r * grid.cols + c] = scale / (ay * ax);
            }
        }
        let taps = interleaves
            .iter()
            .map(|il| {
                il.iter()
                    .map(|k| SampleTaps {
                        ys: taps_for(k[1], os_rows, width, beta),
                        xs: taps_for(k[0], os_cols, width, beta),
                    })
                    .collect()
            })
            .collect();
        Gridder {
            grid,
            os_rows,
            os_cols,
            deapod,
            fft: Fft2::new(os_rows, os_cols),
            taps,
        }
    }

    fn pad_offsets(&self) -> (usize, usize) {
        ((self.os_rows - self.grid.rows) / 2, (self.os_cols - self.grid.cols) / 2)
    }

    pub fn forward(&self, image: &[Complex64], interleaf: usize) -> Vec<Complex64> {
        debug_assert_eq!(image.len(), self.grid.n());
        let mut work = vec![Complex64::ZERO; self.os_rows * self.os_cols];
        let (ro, co) = self.pad_offsets();
        for r in 0..self.grid.rows {
            for c in 0..self.grid.cols {
                let n = r * self.grid.cols + c;
                work[(r + ro) * self.os_cols + (c + co)] = image[n] * self.deapod[n];
            }
        }
        self.fft.forward_centered(&mut work);
        self.taps[interleaf]
            .iter()
            .map(|taps| {
                let mut acc = Complex64::ZERO;
                for ty in &taps.ys {
                    let row = &work[ty.idx * self.os_cols..(ty.idx + 1) * self.os_cols];
                    let mut inner = Complex64::ZERO;
                    for tx in &taps.xs {
                        inner += row[tx.idx] * tx.w;
                    }
                    acc += inner * ty.w;
                }
                acc
            })
            .collect()
    }

    pub fn adjoint(&self, samples: &[Complex64], interleaf: usize) -> Vec<Complex64> {
        debug_assert_eq!(samples.len(), self.taps[interleaf].len());
        let mut work = vec![Complex64::ZERO; self.os_rows * self.os_cols];
        for (s, taps) in samples.iter().zip(&self.taps[interleaf]) {
            for ty in &taps.ys {
                let base = ty.idx * self.os_cols;
                let sy = s * ty.w;
                for tx in &taps.xs {
                    work[base + tx.idx] += sy * tx.w;
                }
            }
        }
        self.fft.inverse_centered(&mut work);
        let (ro, co) = self.pad_offsets();
        let mut out = vec![Complex64::ZERO; self.grid.n()];
        for r in 0..self.grid.rows {
            for c in 0..self.grid.cols {
                let n = r * self.grid.cols + c;
                out[n] = work[(r + ro) * self.os_cols + (c + co)] * self.deapod[n];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_i0_reference_values() {
        // Abramowitz & Stegun 9.8
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.2660658777520084).abs() < 1e-12);
        assert!((bessel_i0(5.0) - 27.239871823604442).abs() < 1e-9);
    }

    #[test]
    fn kb_transform_matches_quadrature() {
        let beta = kb_beta(4, 2.0);
        let width = 4.0;
        for &chi in &[0.0, 0.05, 0.125, 0.24] {
            // midpoint rule on the defining integral
            let n = 20000;
            let mut acc = 0.0;
            for i in 0..n {
                let u = -width / 2.0 + width * (i as f64 + 0.5) / n as f64;
                acc += kb_kernel(u, width, beta)
                    * (std::f64::consts::TAU * u * chi).cos()
                    * (width / n as f64);
            }
            let closed = kb_transform(chi, width, beta);
            assert!(
                (acc - closed).abs() < 1e-6 * closed.abs(),
                "chi={chi}: {acc} vs {closed}"
            );
        }
    }

    #[test]
    fn centered_fft_matches_direct_sum() {
        let fft = Fft2::new(4, 4);
        let mut buf: Vec<Complex64> = (0..16)
            .map(|i| Complex64::new(i as f64 * 0.3 - 1.0, (i % 5) as f64 * 0.7))
            .collect();
        let orig = buf.clone();
        fft.forward_centered(&mut buf);
        for qy in 0..4i64 {
            for qx in 0..4i64 {
                let mut want = Complex64::ZERO;
                for py in 0..4i64 {
                    for px in 0..4i64 {
                        let ph = -std::f64::consts::TAU
                            * (((qy - 2) * (py - 2)) as f64 + ((qx - 2) * (px - 2)) as f64)
                            / 4.0;
                        want += orig[(py * 4 + px) as usize] * Complex64::from_polar(1.0, ph);
                    }
                }
                let got = buf[(qy * 4 + qx) as usize];
                assert!((got - want).norm() < 1e-12, "q=({qy},{qx}): {got} vs {want}");
            }
        }
    }
}
