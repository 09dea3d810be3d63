//! Forward model: per-TR undersampled Fourier encoding with coil
//! sensitivities, plus the precomputed per-interleaf Gram factorizations
//! used by the penalized per-TR least-squares solves.

mod coils;
mod nufft;
mod trajectory;

pub use coils::{make_coil_sensitivities, CoilSensitivities};
pub use nufft::{bessel_i0, Fft2, Gridder};
pub use trajectory::{
    make_cartesian_trajectory, make_spiral_trajectory, RotationRule, Trajectory,
};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::container::TensorFile;
use crate::error::{MrfError, Result};
use crate::linalg::{self, Cholesky};
use crate::subspace::TemporalSubspace;
use crate::types::{Grid, SpatialCoefficients};

/// Measured k-space data: one concatenated sample vector per coil plus the
/// per-TR block offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceData {
    pub per_coil: Vec<Vec<Complex64>>,
    /// M + 1 offsets; TR m occupies `layout[m]..layout[m+1]`.
    pub layout: Vec<usize>,
}

impl KSpaceData {
    pub fn n_coils(&self) -> usize {
        self.per_coil.len()
    }

    pub fn n_trs(&self) -> usize {
        self.layout.len().saturating_sub(1)
    }

    pub fn total_samples(&self) -> usize {
        *self.layout.last().unwrap_or(&0)
    }

    pub fn tr_slice(&self, coil: usize, m: usize) -> &[Complex64] {
        &self.per_coil[coil][self.layout[m]..self.layout[m + 1]]
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_coil.is_empty() {
            return Err(MrfError::Config("k-space data has no coils".into()));
        }
        if self.layout.len() < 2 || self.layout[0] != 0 {
            return Err(MrfError::Shape("layout must start at 0 and cover at least one TR".into()));
        }
        if self.layout.windows(2).any(|w| w[1] < w[0]) {
            return Err(MrfError::Shape("layout offsets must be nondecreasing".into()));
        }
        let total = self.total_samples();
        for (c, d) in self.per_coil.iter().enumerate() {
            if d.len() != total {
                return Err(MrfError::Shape(format!(
                    "coil {c} holds {} samples, layout says {total}",
                    d.len()
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: &serde_json::Value) -> Result<()> {
        let n_c = self.n_coils();
        let p = self.total_samples();
        let mut flat = Vec::with_capacity(n_c * p);
        for coil in &self.per_coil {
            flat.extend_from_slice(coil);
        }
        let mut tf = TensorFile::new();
        tf.put_c128("data", &[n_c as u64, p as u64], &flat);
        let layout: Vec<i64> = self.layout.iter().map(|&o| o as i64).collect();
        tf.put_i64("layout", &[layout.len() as u64], &layout);
        tf.put_meta(meta);
        tf.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, serde_json::Value)> {
        let tf = TensorFile::load(path)?;
        let dims = tf.dims("data")?.to_vec();
        if dims.len() != 2 {
            return Err(MrfError::Shape("data record must be N_c x P".into()));
        }
        let flat = tf.get_c128("data")?;
        let (n_c, p) = (dims[0] as usize, dims[1] as usize);
        let per_coil: Vec<Vec<Complex64>> =
            flat.chunks_exact(p).map(|c| c.to_vec()).collect();
        let layout: Vec<usize> = tf.get_i64("layout")?.into_iter().map(|o| o as usize).collect();
        let data = KSpaceData {
            per_coil: per_coil.into_iter().take(n_c).collect(),
            layout,
        };
        data.validate()?;
        Ok((data, tf.get_meta()?))
    }

    pub fn hash(&self) -> String {
        let mut bytes = Vec::new();
        for coil in &self.per_coil {
            for z in coil {
                bytes.extend_from_slice(&z.re.to_le_bytes());
                bytes.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        for &o in &self.layout {
            bytes.extend_from_slice(&(o as u64).to_le_bytes());
        }
        crate::container::sha256_hex(&bytes)
    }
}

/// How sample values are evaluated from the image grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncodingMode {
    /// Direct evaluation of the DFT sum at each sample (desk scale only).
    CartesianExact,
    /// Oversampled FFT with Kaiser-Bessel interpolation and de-apodization.
    GriddedNonuniform,
}

/// Cached Cholesky factorizations of
/// `(mu1/2)^2 I + (mu1/2) F_m F_m^H` per distinct interleaf.
pub struct GramCache {
    pub mu1: f64,
    factors: BTreeMap<usize, Cholesky>,
}

impl GramCache {
    pub fn factor(&self, interleaf: usize) -> Option<&Cholesky> {
        self.factors.get(&interleaf)
    }
}

/// Per-TR undersampled Fourier operator on one image geometry.
pub struct EncodingOperator {
    pub grid: Grid,
    pub trajectory: Trajectory,
    pub mode: EncodingMode,
    gridder: Option<Gridder>,
    pub gram: Option<GramCache>,
}

impl EncodingOperator {
    pub fn new(grid: Grid, trajectory: Trajectory, mode: EncodingMode) -> Result<Self> {
        trajectory.validate()?;
        if grid.rows % 2 != 0 || grid.cols % 2 != 0 {
            return Err(MrfError::Config(format!(
                "encoding grid must have even dimensions, got {grid}"
            )));
        }
        let gridder = match mode {
            EncodingMode::GriddedNonuniform => Some(Gridder::new(grid, &trajectory.interleaves)),
            EncodingMode::CartesianExact => None,
        };
        Ok(EncodingOperator {
            grid,
            trajectory,
            mode,
            gridder,
            gram: None,
        })
    }

    pub fn n_trs(&self) -> usize {
        self.trajectory.n_trs()
    }

    pub fn samples_per_tr(&self, m: usize) -> usize {
        self.trajectory.samples_at(m).len()
    }

    fn check_image(&self, image: &[Complex64]) -> Result<()> {
        if image.len() != self.grid.n() {
            return Err(MrfError::Shape(format!(
                "image has {} voxels, grid {} has {}",
                image.len(),
                self.grid,
                self.grid.n()
            )));
        }
        Ok(())
    }

    /// Non-uniform DFT of `image` at the sample coordinates of TR `m`.
    pub fn forward(&self, image: &[Complex64], m: usize) -> Result<Vec<Complex64>> {
        self.check_image(image)?;
        Ok(self.forward_interleaf(image, self.trajectory.assignment[m]))
    }

    /// Exact adjoint of `forward` for TR `m`.
    pub fn adjoint(&self, samples: &[Complex64], m: usize) -> Result<Vec<Complex64>> {
        let interleaf = self.trajectory.assignment[m];
        if samples.len() != self.trajectory.interleaves[interleaf].len() {
            return Err(MrfError::Shape(format!(
                "TR {m} expects {} samples, got {}",
                self.trajectory.interleaves[interleaf].len(),
                samples.len()
            )));
        }
        Ok(self.adjoint_interleaf(samples, interleaf))
    }

    pub fn forward_interleaf(&self, image: &[Complex64], interleaf: usize) -> Vec<Complex64> {
        match self.mode {
            EncodingMode::GriddedNonuniform => {
                self.gridder.as_ref().unwrap().forward(image, interleaf)
            }
            EncodingMode::CartesianExact => self.forward_exact(image, interleaf),
        }
    }

    pub fn adjoint_interleaf(&self, samples: &[Complex64], interleaf: usize) -> Vec<Complex64> {
        match self.mode {
            EncodingMode::GriddedNonuniform => {
                self.gridder.as_ref().unwrap().adjoint(samples, interleaf)
            }
            EncodingMode::CartesianExact => self.adjoint_exact(samples, interleaf),
        }
    }

    fn phase_tables(&self, k: &[f64; 2]) -> (Vec<Complex64>, Vec<Complex64>) {
        let rows = self.grid.rows;
        let cols = self.grid.cols;
        let rowp: Vec<Complex64> = (0..rows)
            .map(|r| {
                let y = r as f64 - rows as f64 / 2.0;
                Complex64::from_polar(1.0, -std::f64::consts::TAU * k[1] * y)
            })
            .collect();
        let colp: Vec<Complex64> = (0..cols)
            .map(|c| {
                let x = c as f64 - cols as f64 / 2.0;
                Complex64::from_polar(1.0, -std::f64::consts::TAU * k[0] * x)
            })
            .collect();
        (rowp, colp)
    }

    fn forward_exact(&self, image: &[Complex64], interleaf: usize) -> Vec<Complex64> {
        let cols = self.grid.cols;
        let scale = 1.0 / (self.grid.n() as f64).sqrt();
        self.trajectory.interleaves[interleaf]
            .iter()
            .map(|k| {
                let (rowp, colp) = self.phase_tables(k);
                let mut acc = Complex64::ZERO;
                for (r, rp) in rowp.iter().enumerate() {
                    let row = &image[r * cols..(r + 1) * cols];
                    let mut inner = Complex64::ZERO;
                    for (v, cp) in row.iter().zip(&colp) {
                        inner += v * cp;
                    }
                    acc += inner * rp;
                }
                acc * scale
            })
            .collect()
    }

    fn adjoint_exact(&self, samples: &[Complex64], interleaf: usize) -> Vec<Complex64> {
        let cols = self.grid.cols;
        let scale = 1.0 / (self.grid.n() as f64).sqrt();
        let mut out = vec![Complex64::ZERO; self.grid.n()];
        for (s, k) in samples.iter().zip(&self.trajectory.interleaves[interleaf]) {
            let (rowp, colp) = self.phase_tables(k);
            let sv = s * scale;
            for (r, rp) in rowp.iter().enumerate() {
                let w = sv * rp.conj();
                let row = &mut out[r * cols..(r + 1) * cols];
                for (v, cp) in row.iter_mut().zip(&colp) {
                    *v += w * cp.conj();
                }
            }
        }
        out
    }

    /// Assemble and factorize `(mu1/2)^2 I + (mu1/2) F_m F_m^H` for every
    /// interleaf referenced by the assignment. The Gram matrices are built
    /// through the operator's own forward/adjoint pair so the factorization
    /// matches the mode in use exactly.
    pub fn build_gram_cache(&mut self, mu1: f64) -> Result<()> {
        self.gram = Some(build_gram_cache(self, mu1)?);
        Ok(())
    }

    /// The cached factorization if it matches `mu1`.
    pub fn gram_for(&self, mu1: f64) -> Option<&GramCache> {
        self.gram.as_ref().filter(|g| g.mu1 == mu1)
    }

    /// Dense Gram matrix `F_m F_m^H` of one interleaf.
    pub fn interleaf_gram(&self, interleaf: usize) -> ndarray::Array2<Complex64> {
        let p = self.trajectory.interleaves[interleaf].len();
        let cols: Vec<Vec<Complex64>> = (0..p)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![Complex64::ZERO; p];
                e[j] = Complex64::new(1.0, 0.0);
                let img = self.adjoint_interleaf(&e, interleaf);
                self.forward_interleaf(&img, interleaf)
            })
            .collect();
        let mut g = ndarray::Array2::zeros((p, p));
        for (j, col) in cols.into_iter().enumerate() {
            for (i, v) in col.into_iter().enumerate() {
                g[[i, j]] = v;
            }
        }
        // enforce exact Hermitian symmetry before factorization
        for i in 0..p {
            for j in (i + 1)..p {
                let avg = 0.5 * (g[[i, j]] + g[[j, i]].conj());
                g[[i, j]] = avg;
                g[[j, i]] = avg.conj();
            }
            g[[i, i]] = Complex64::new(g[[i, i]].re, 0.0);
        }
        g
    }

    /// Solve `(F_m^H F_m + (mu1/2) I) h = rhs` through the cached Woodbury
    /// factorization: `h = (2/mu1) rhs - F^H K^{-1} F rhs`.
    pub fn solve_regularized_normal(
        &self,
        gram: &GramCache,
        interleaf: usize,
        rhs: &[Complex64],
    ) -> Result<Vec<Complex64>> {
        let chol = gram.factor(interleaf).ok_or_else(|| {
            MrfError::Numerical(format!("gram cache is missing interleaf {interleaf}"))
        })?;
        let mu = gram.mu1;
        let mut t = self.forward_interleaf(rhs, interleaf);
        chol.solve_in_place(&mut t);
        let y = self.adjoint_interleaf(&t, interleaf);
        Ok(rhs
            .iter()
            .zip(y)
            .map(|(r, yv)| r * (2.0 / mu) - yv)
            .collect())
    }

    /// Matrix-free conjugate-gradient solve of the same per-TR system,
    /// kept as a cross-check for the Woodbury path.
    pub fn solve_regularized_normal_cg(
        &self,
        mu1: f64,
        interleaf: usize,
        rhs: &[Complex64],
        tol: f64,
        max_iters: usize,
    ) -> Result<Vec<Complex64>> {
        let n = rhs.len();
        let apply = |v: &[Complex64]| -> Vec<Complex64> {
            let s = self.forward_interleaf(v, interleaf);
            let mut out = self.adjoint_interleaf(&s, interleaf);
            for (o, x) in out.iter_mut().zip(v) {
                *o += x * (mu1 / 2.0);
            }
            out
        };
        let mut x = vec![Complex64::ZERO; n];
        let mut r = rhs.to_vec();
        let rhs_norm = linalg::norm2(rhs);
        if rhs_norm == 0.0 {
            return Ok(x);
        }
        let mut p = r.clone();
        let mut rs = linalg::dotc(&r, &r).re;
        for _ in 0..max_iters {
            let ap = apply(&p);
            let denom = linalg::dotc(&p, &ap).re;
            if denom <= 0.0 {
                return Err(MrfError::Numerical("CG lost positive definiteness".into()));
            }
            let alpha = rs / denom;
            for i in 0..n {
                x[i] += p[i] * alpha;
                r[i] -= ap[i] * alpha;
            }
            let rs_new = linalg::dotc(&r, &r).re;
            if rs_new.sqrt() <= tol * rhs_norm {
                break;
            }
            let beta = rs_new / rs;
            rs = rs_new;
            for i in 0..n {
                p[i] = r[i] + p[i] * beta;
            }
        }
        Ok(x)
    }
}

fn build_gram_cache(op: &EncodingOperator, mu1: f64) -> Result<GramCache> {
    if !(mu1 > 0.0) {
        return Err(MrfError::Config(format!("mu1 must be positive, got {mu1}")));
    }
    let mut used: Vec<usize> = op.trajectory.assignment.clone();
    used.sort_unstable();
    used.dedup();
    let factors: Vec<(usize, Result<Cholesky>)> = used
        .iter()
        .map(|&interleaf| {
            let mut k = op.interleaf_gram(interleaf);
            let p = k.nrows();
            let half = mu1 / 2.0;
            for i in 0..p {
                for j in 0..p {
                    k[[i, j]] *= half;
                }
                k[[i, i]] += Complex64::new(half * half, 0.0);
            }
            (interleaf, Cholesky::factor(&k.view()))
        })
        .collect();
    let mut map = BTreeMap::new();
    for (interleaf, f) in factors {
        map.insert(
            interleaf,
            f.map_err(|e| {
                MrfError::Numerical(format!("gram factorization failed for interleaf {interleaf}: {e}"))
            })?,
        );
    }
    Ok(GramCache { mu1, factors: map })
}

/// Apply the full forward model `Omega(F S_c U V)`: for every coil and TR,
/// encode the sensitivity-weighted contrast image and concatenate the
/// blocks per the trajectory layout.
pub fn apply_full_model(
    op: &EncodingOperator,
    u: &SpatialCoefficients,
    v: &TemporalSubspace,
    sens: &CoilSensitivities,
) -> Result<KSpaceData> {
    sens.validate()?;
    if u.grid != op.grid || sens.grid != op.grid {
        return Err(MrfError::Shape("operator, coefficients, and coils must share a grid".into()));
    }
    if v.rank() != u.rank() {
        return Err(MrfError::Shape(format!(
            "coefficients have rank {}, subspace rank {}",
            u.rank(),
            v.rank()
        )));
    }
    let m_trs = op.n_trs();
    if v.n_frames() != m_trs {
        return Err(MrfError::Shape(format!(
            "subspace covers {} frames, trajectory {} TRs",
            v.n_frames(),
            m_trs
        )));
    }
    let layout = op.trajectory.layout();
    let n = op.grid.n();
    let l = u.rank();
    let u_flat = u.u.as_slice().expect("contiguous");
    let per_coil: Vec<Vec<Complex64>> = (0..sens.n_coils())
        .map(|c| {
            let s_map = sens.flat(c);
            let blocks: Vec<Vec<Complex64>> = (0..m_trs)
                .into_par_iter()
                .map(|m| {
                    let mut img = vec![Complex64::ZERO; n];
                    for (x, pix) in img.iter_mut().enumerate() {
                        let mut acc = Complex64::ZERO;
                        let urow = &u_flat[x * l..(x + 1) * l];
                        for (li, ul) in urow.iter().enumerate() {
                            acc += ul * v.v_hat[[li, m]];
                        }
                        *pix = acc * s_map[x];
                    }
                    op.forward_interleaf(&img, op.trajectory.assignment[m])
                })
                .collect();
            let mut data = Vec::with_capacity(*layout.last().unwrap());
            for b in blocks {
                data.extend(b);
            }
            data
        })
        .collect();
    let data = KSpaceData { per_coil, layout };
    data.validate()?;
    Ok(data)
}
