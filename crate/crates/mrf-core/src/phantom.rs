//! Procedural brain-like phantom, time-series synthesis, and noise.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::path::Path;

use crate::container::TensorFile;
use crate::encoding::KSpaceData;
use crate::error::{MrfError, Result};
use crate::spin::{simulate_fingerprint, AcquisitionSchedule, SimConfig, TissueParams};
use crate::types::{CasoratiImage, Grid};

/// Ground-truth parameter maps over the image grid.
///
/// `mask` marks the evaluation region (background and the CSF analogue are
/// excluded). `wm_ref` marks the white-matter reference region used to
/// calibrate the noise level.
#[derive(Debug, Clone)]
pub struct ParameterMaps {
    pub t1_map: Array2<f64>,
    pub t2_map: Array2<f64>,
    pub pd_map: Array2<Complex64>,
    pub mask: Array2<bool>,
    pub wm_ref: Option<Array2<bool>>,
    pub grid: Grid,
}

impl ParameterMaps {
    pub fn validate(&self) -> Result<()> {
        let shape = (self.grid.rows, self.grid.cols);
        for (name, ok) in [
            ("t1_ms", self.t1_map.dim() == shape),
            ("t2_ms", self.t2_map.dim() == shape),
            ("pd", self.pd_map.dim() == shape),
            ("mask", self.mask.dim() == shape),
        ] {
            if !ok {
                return Err(MrfError::Shape(format!(
                    "{name} map does not match grid {}",
                    self.grid
                )));
            }
        }
        if let Some(wm) = &self.wm_ref {
            if wm.dim() != shape {
                return Err(MrfError::Shape(format!(
                    "wm_ref map does not match grid {}",
                    self.grid
                )));
            }
        }
        for r in 0..self.grid.rows {
            for c in 0..self.grid.cols {
                if self.mask[[r, c]] {
                    let t1 = self.t1_map[[r, c]];
                    let t2 = self.t2_map[[r, c]];
                    if !(t1 > 0.0 && t2 > 0.0 && t2 <= t1) {
                        return Err(MrfError::Config(format!(
                            "voxel ({r}, {c}) violates 0 < t2 <= t1 inside the mask: t1 = {t1}, t2 = {t2}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let tf = self.to_tensor_file();
        let names: Vec<&str> = ["t1_ms", "t2_ms", "pd_real", "pd_imag", "mask"].to_vec();
        tf.hash_records(&names).unwrap()
    }

    fn to_tensor_file(&self) -> TensorFile {
        let mut tf = TensorFile::new();
        tf.put_f64_matrix("t1_ms", &self.t1_map);
        tf.put_f64_matrix("t2_ms", &self.t2_map);
        let re = self.pd_map.mapv(|z| z.re);
        let im = self.pd_map.mapv(|z| z.im);
        tf.put_f64_matrix("pd_real", &re);
        tf.put_f64_matrix("pd_imag", &im);
        let mask: Vec<u8> = self.mask.iter().map(|&b| b as u8).collect();
        tf.put_u8(
            "mask",
            &[self.grid.rows as u64, self.grid.cols as u64],
            &mask,
        );
        if let Some(wm) = &self.wm_ref {
            let wm_bytes: Vec<u8> = wm.iter().map(|&b| b as u8).collect();
            tf.put_u8(
                "wm_ref",
                &[self.grid.rows as u64, self.grid.cols as u64],
                &wm_bytes,
            );
        }
        tf
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut tf = self.to_tensor_file();
        tf.put_meta(&serde_json::json!({
            "kind": "parameter_maps",
            "grid": self.grid,
        }));
        tf.save(path)
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

/// Load and validate parameter maps from a tensor container.
pub fn load_parameter_maps(path: impl AsRef<Path>) -> Result<ParameterMaps> {
    let tf = TensorFile::load(path)?;
    let t1_map = tf.get_f64_matrix("t1_ms")?;
    let t2_map = tf.get_f64_matrix("t2_ms")?;
    let pd_real = tf.get_f64_matrix("pd_real")?;
    let pd_imag = tf.get_f64_matrix("pd_imag")?;
    let mask_dims = tf.dims("mask")?.to_vec();
    if mask_dims.len() != 2 {
        return Err(MrfError::Shape("mask record must be rank 2".into()));
    }
    let mask_raw = tf.get_u8("mask")?;
    let grid = Grid::new(t1_map.nrows(), t1_map.ncols());
    if (mask_dims[0] as usize, mask_dims[1] as usize) != (grid.rows, grid.cols) {
        return Err(MrfError::Shape(format!(
            "mask shape {}x{} does not match t1 map {}",
            mask_dims[0], mask_dims[1], grid
        )));
    }
    if pd_real.dim() != (grid.rows, grid.cols) || pd_imag.dim() != (grid.rows, grid.cols) {
        return Err(MrfError::Shape("pd maps do not match the t1 map shape".into()));
    }
    if t2_map.dim() != (grid.rows, grid.cols) {
        return Err(MrfError::Shape("t2 map does not match the t1 map shape".into()));
    }
    let mask = Array2::from_shape_vec((grid.rows, grid.cols), mask_raw)
        .map_err(|e| MrfError::Shape(e.to_string()))?
        .mapv(|b| b != 0);
    let wm_ref = if tf.contains("wm_ref") {
        let wm_raw = tf.get_u8("wm_ref")?;
        Some(
            Array2::from_shape_vec((grid.rows, grid.cols), wm_raw)
                .map_err(|e| MrfError::Shape(e.to_string()))?
                .mapv(|b| b != 0),
        )
    } else {
        None
    };
    let mut pd_map = Array2::zeros((grid.rows, grid.cols));
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            pd_map[[r, c]] = Complex64::new(pd_real[[r, c]], pd_imag[[r, c]]);
        }
    }
    let maps = ParameterMaps {
        t1_map,
        t2_map,
        pd_map,
        mask,
        wm_ref,
        grid,
    };
    maps.validate()?;
    Ok(maps)
}

struct TissueClass {
    t1: f64,
    t2: f64,
    pd: f64,
}

const WM: TissueClass = TissueClass { t1: 800.0, t2: 70.0, pd: 0.77 };
const GM: TissueClass = TissueClass { t1: 1300.0, t2: 90.0, pd: 0.86 };
const CSF: TissueClass = TissueClass { t1: 2500.0, t2: 300.0, pd: 1.0 };
const LESION: TissueClass = TissueClass { t1: 600.0, t2: 120.0, pd: 0.90 };

/// Build the procedural brain-like phantom: an elliptical head with a
/// cortical gray-matter ring, white-matter interior, CSF ventricles, deep
/// gray-matter nuclei, and seeded lesion inserts. Proton density varies
/// smoothly and carries a gentle spatial phase. The evaluation mask
/// excludes background and CSF.
pub fn make_phantom(grid: Grid, seed: u64) -> Result<ParameterMaps> {
    if grid.rows < 16 || grid.cols < 16 {
        return Err(MrfError::Config(format!(
            "phantom grid must be at least 16x16, got {grid}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = (grid.rows, grid.cols);
    let cy = rows as f64 / 2.0;
    let cx = cols as f64 / 2.0;
    let ry = 0.44 * rows as f64;
    let rx = 0.40 * cols as f64;

    let mut t1_map = Array2::zeros((rows, cols));
    let mut t2_map = Array2::zeros((rows, cols));
    let mut pd_mag = Array2::<f64>::zeros((rows, cols));
    let mut class_id = Array2::<u8>::zeros((rows, cols)); // 0 bg, 1 wm, 2 gm, 3 csf, 4 lesion
    let mut mask = Array2::from_elem((rows, cols), false);

    // Ventricles: two CSF ellipses beside the midline.
    let vent = [
        (cy - 0.02 * rows as f64, cx - 0.10 * cols as f64, 0.14 * rows as f64, 0.055 * cols as f64),
        (cy - 0.02 * rows as f64, cx + 0.10 * cols as f64, 0.14 * rows as f64, 0.055 * cols as f64),
    ];
    // Deep gray-matter nuclei below the ventricles.
    let deep_gm = [
        (cy + 0.16 * rows as f64, cx - 0.12 * cols as f64, 0.07 * rows as f64, 0.07 * cols as f64),
        (cy + 0.16 * rows as f64, cx + 0.12 * cols as f64, 0.07 * rows as f64, 0.07 * cols as f64),
    ];
    // White-matter reference disk, kept clear of lesions.
    let wm_ref_center = (cy - 0.24 * rows as f64, cx);
    let wm_ref_radius = 0.055 * rows as f64;

    // Seeded lesions in white matter, away from the reference region.
    let mut lesions: Vec<(f64, f64, f64)> = Vec::new();
    while lesions.len() < 3 {
        let ang = rng.gen_range(0.0..std::f64::consts::TAU);
        let rad = rng.gen_range(0.15..0.55);
        let ly = cy + rad * ry * ang.sin();
        let lx = cx + rad * rx * ang.cos();
        let lr = rng.gen_range(0.025..0.05) * rows as f64;
        let d_ref = ((ly - wm_ref_center.0).powi(2) + (lx - wm_ref_center.1).powi(2)).sqrt();
        if d_ref < lr + wm_ref_radius + 2.0 {
            continue;
        }
        if vent
            .iter()
            .any(|&(vy, vx, vry, vrx)| ((ly - vy) / vry).powi(2) + ((lx - vx) / vrx).powi(2) < 2.0)
        {
            continue;
        }
        lesions.push((ly, lx, lr));
    }

    let inside_ellipse = |y: f64, x: f64, ey: f64, ex: f64, sy: f64, sx: f64| -> bool {
        ((y - ey) / sy).powi(2) + ((x - ex) / sx).powi(2) <= 1.0
    };

    for r in 0..rows {
        for c in 0..cols {
            let y = r as f64 + 0.5;
            let x = c as f64 + 0.5;
            let e = ((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2);
            if e > 1.0 {
                continue; // background
            }
            let mut class = if e > 0.72 { &GM } else { &WM };
            let mut id = if e > 0.72 { 2u8 } else { 1u8 };
            if vent
                .iter()
                .any(|&(vy, vx, vry, vrx)| inside_ellipse(y, x, vy, vx, vry, vrx))
            {
                class = &CSF;
                id = 3;
            } else if deep_gm
                .iter()
                .any(|&(gy, gx, gry, grx)| inside_ellipse(y, x, gy, gx, gry, grx))
            {
                class = &GM;
                id = 2;
            } else if id == 1
                && lesions
                    .iter()
                    .any(|&(ly, lx, lr)| ((y - ly).powi(2) + (x - lx).powi(2)).sqrt() <= lr)
            {
                class = &LESION;
                id = 4;
            }
            t1_map[[r, c]] = class.t1;
            t2_map[[r, c]] = class.t2;
            pd_mag[[r, c]] = class.pd;
            class_id[[r, c]] = id;
            mask[[r, c]] = id != 3; // exclude CSF (and background stays false)
        }
    }

    // Smooth PD modulation and phase, seeded.
    let phase0 = rng.gen_range(0.0..std::f64::consts::TAU);
    let phase_gx = rng.gen_range(-0.6..0.6);
    let phase_gy = rng.gen_range(-0.6..0.6);
    let mut pd_map = Array2::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            if pd_mag[[r, c]] == 0.0 {
                continue;
            }
            let u = c as f64 / cols as f64;
            let v = r as f64 / rows as f64;
            let modulation =
                1.0 + 0.08 * (std::f64::consts::TAU * u + phase0).sin() * (std::f64::consts::TAU * v).cos();
            let phase = phase_gx * u + phase_gy * v + 0.3 * (u - 0.5) * (v - 0.5);
            pd_map[[r, c]] = Complex64::from_polar(pd_mag[[r, c]] * modulation, phase);
        }
    }

    let mut wm_ref = Array2::from_elem((rows, cols), false);
    for r in 0..rows {
        for c in 0..cols {
            let y = r as f64 + 0.5;
            let x = c as f64 + 0.5;
            let d = ((y - wm_ref_center.0).powi(2) + (x - wm_ref_center.1).powi(2)).sqrt();
            if d <= wm_ref_radius && class_id[[r, c]] == 1 {
                wm_ref[[r, c]] = true;
            }
        }
    }

    let maps = ParameterMaps {
        t1_map,
        t2_map,
        pd_map,
        mask,
        wm_ref: Some(wm_ref),
        grid,
    };
    maps.validate()?;
    Ok(maps)
}

/// Synthesize the noiseless contrast-weighted time series: row n of C is
/// rho(x_n) * phi_m(T1(x_n), T2(x_n)). Voxels sharing (T1, T2) reuse one
/// fingerprint evaluation.
pub fn synthesize_timeseries(
    maps: &ParameterMaps,
    sched: &AcquisitionSchedule,
    sim_cfg: &SimConfig,
) -> Result<CasoratiImage> {
    maps.validate()?;
    let grid = maps.grid;
    let n = grid.n();
    let m = sched.len();

    // Distinct (t1, t2) pairs keyed by exact bit patterns; sorted for a
    // deterministic simulation order.
    let mut distinct: BTreeMap<(u64, u64), usize> = BTreeMap::new();
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            if maps.pd_map[[r, c]] == Complex64::ZERO {
                continue;
            }
            let key = (maps.t1_map[[r, c]].to_bits(), maps.t2_map[[r, c]].to_bits());
            let next = distinct.len();
            distinct.entry(key).or_insert(next);
        }
    }
    let pairs: Vec<(f64, f64)> = {
        let mut v = vec![(0.0, 0.0); distinct.len()];
        for (&(b1, b2), &idx) in &distinct {
            v[idx] = (f64::from_bits(b1), f64::from_bits(b2));
        }
        v
    };
    let fingerprints: Vec<Result<Vec<Complex64>>> = pairs
        .par_iter()
        .enumerate()
        .map(|(idx, &(t1, t2))| {
            let tissue = TissueParams::new(t1, t2)
                .map_err(|e| MrfError::Config(format!("tissue cache entry {idx}: {e}")))?;
            Ok(simulate_fingerprint(&tissue, sched, sim_cfg)?.samples)
        })
        .collect();
    let mut cache: Vec<Vec<Complex64>> = Vec::with_capacity(fingerprints.len());
    for (idx, fp) in fingerprints.into_iter().enumerate() {
        cache.push(fp.map_err(|e| match e {
            MrfError::Simulation { t1_ms, t2_ms, reason, .. } => MrfError::Simulation {
                index: idx,
                t1_ms,
                t2_ms,
                reason,
            },
            other => other,
        })?);
    }

    let mut c_mat = Array2::<Complex64>::zeros((n, m));
    {
        let cols = grid.cols;
        let c_slice = c_mat.as_slice_mut().expect("contiguous");
        c_slice
            .par_chunks_mut(m)
            .enumerate()
            .for_each(|(vox, row)| {
                let (r, c) = (vox / cols, vox % cols);
                let rho = maps.pd_map[[r, c]];
                if rho == Complex64::ZERO {
                    return;
                }
                let key = (maps.t1_map[[r, c]].to_bits(), maps.t2_map[[r, c]].to_bits());
                let fp = &cache[distinct[&key]];
                for (j, s) in fp.iter().enumerate() {
                    row[j] = rho * s;
                }
            });
    }
    CasoratiImage::new(c_mat, grid)
}

/// Noise standard deviation implied by `SNR = 20 log10(s / sigma)`.
pub fn sigma_for_snr(snr_db: f64, signal_ref: f64) -> f64 {
    signal_ref / 10f64.powf(snr_db / 20.0)
}

/// Add i.i.d. complex Gaussian noise calibrated so that
/// `SNR = 20 log10(signal_ref / sigma)`, where `sigma` is the standard
/// deviation of the complex noise (each real component has std
/// `sigma / sqrt(2)`). An infinite `snr_db` leaves the data untouched.
pub fn add_noise(data: &KSpaceData, snr_db: f64, signal_ref: f64, seed: u64) -> Result<KSpaceData> {
    if !(signal_ref > 0.0) {
        return Err(MrfError::Config(format!(
            "signal reference must be positive, got {signal_ref}"
        )));
    }
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(data.clone());
    }
    if !snr_db.is_finite() {
        return Err(MrfError::Config(format!("bad snr value {snr_db}")));
    }
    let sigma = sigma_for_snr(snr_db, signal_ref);
    let comp = sigma / std::f64::consts::SQRT_2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = data.clone();
    for coil in &mut out.per_coil {
        for s in coil.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *s += Complex64::new(comp * re, comp * im);
        }
    }
    Ok(out)
}

/// Mean magnitude of the first contrast image over the white-matter
/// reference region; the caller feeds this into `add_noise`.
pub fn wm_signal_reference(c: &CasoratiImage, maps: &ParameterMaps) -> Result<f64> {
    let wm = maps
        .wm_ref
        .as_ref()
        .ok_or_else(|| MrfError::Config("phantom has no white-matter reference region".into()))?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for r in 0..maps.grid.rows {
        for cc in 0..maps.grid.cols {
            if wm[[r, cc]] {
                sum += c.c[[maps.grid.flat(r, cc), 0]].norm();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(MrfError::Config("white-matter reference region is empty".into()));
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::SimConfig;

    #[test]
    fn phantom_is_deterministic() {
        let grid = Grid::new(32, 32);
        let a = make_phantom(grid, 7).unwrap();
        let b = make_phantom(grid, 7).unwrap();
        assert_eq!(a.t1_map, b.t1_map);
        assert_eq!(a.pd_map, b.pd_map);
        assert_eq!(a.mask, b.mask);
        let c = make_phantom(grid, 8).unwrap();
        assert_ne!(a.pd_map, c.pd_map);
    }

    #[test]
    fn masked_voxels_satisfy_relaxation_order() {
        let maps = make_phantom(Grid::new(48, 48), 3).unwrap();
        for r in 0..48 {
            for c in 0..48 {
                if maps.mask[[r, c]] {
                    assert!(maps.t2_map[[r, c]] <= maps.t1_map[[r, c]]);
                    assert!(maps.t1_map[[r, c]] > 0.0);
                }
            }
        }
    }

    #[test]
    fn phantom_has_at_least_four_classes_and_wm_ref() {
        let maps = make_phantom(Grid::new(64, 64), 0).unwrap();
        let mut t1s: Vec<u64> = maps
            .t1_map
            .iter()
            .filter(|&&v| v > 0.0)
            .map(|v| v.to_bits())
            .collect();
        t1s.sort_unstable();
        t1s.dedup();
        assert!(t1s.len() >= 4, "found {} tissue classes", t1s.len());
        let wm = maps.wm_ref.as_ref().unwrap();
        let count = wm.iter().filter(|&&b| b).count();
        assert!(count > 10, "wm reference region too small: {count}");
        // reference region lies in white matter
        for r in 0..64 {
            for c in 0..64 {
                if wm[[r, c]] {
                    assert_eq!(maps.t1_map[[r, c]], 800.0);
                }
            }
        }
    }

    #[test]
    fn class_occupancy_regression_64x64_seed0() {
        // Frozen from the first run of this generator; guards against
        // accidental geometry changes.
        let maps = make_phantom(Grid::new(64, 64), 0).unwrap();
        let mut counts = [0usize; 5];
        for r in 0..64 {
            for c in 0..64 {
                let t1 = maps.t1_map[[r, c]];
                let idx = if maps.pd_map[[r, c]] == Complex64::ZERO {
                    0
                } else if t1 == WM.t1 {
                    1
                } else if t1 == GM.t1 {
                    2
                } else if t1 == CSF.t1 {
                    3
                } else {
                    4
                };
                counts[idx] += 1;
            }
        }
        assert_eq!(counts.iter().sum::<usize>(), 64 * 64);
        assert_eq!(counts, CLASS_HISTOGRAM_64_SEED0);
    }

    // Regenerate by printing `counts` above after intentional changes.
    const CLASS_HISTOGRAM_64_SEED0: [usize; 5] = [1860, 1169, 839, 160, 68];

    #[test]
    fn save_load_round_trip() {
        let maps = make_phantom(Grid::new(32, 32), 11).unwrap();
        let dir = std::env::temp_dir().join("mrf_phantom_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("maps.mrft");
        maps.save(&path).unwrap();
        let back = load_parameter_maps(&path).unwrap();
        assert_eq!(back.t1_map, maps.t1_map);
        assert_eq!(back.t2_map, maps.t2_map);
        assert_eq!(back.pd_map, maps.pd_map);
        assert_eq!(back.mask, maps.mask);
        assert_eq!(back.wm_ref, maps.wm_ref);
    }

    #[test]
    fn load_rejects_inverted_relaxation_times() {
        let mut maps = make_phantom(Grid::new(32, 32), 1).unwrap();
        // Corrupt one masked voxel.
        let (mut bad_r, mut bad_c) = (0, 0);
        'outer: for r in 0..32 {
            for c in 0..32 {
                if maps.mask[[r, c]] {
                    bad_r = r;
                    bad_c = c;
                    break 'outer;
                }
            }
        }
        maps.t2_map[[bad_r, bad_c]] = maps.t1_map[[bad_r, bad_c]] + 50.0;
        let dir = std::env::temp_dir().join("mrf_phantom_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.mrft");
        let mut tf = maps.to_tensor_file();
        tf.put_meta(&serde_json::json!({}));
        tf.save(&path).unwrap();
        let err = load_parameter_maps(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(&format!("({bad_r}, {bad_c})")), "{msg}");
    }

    #[test]
    fn load_rejects_mismatched_mask_shape() {
        let maps = make_phantom(Grid::new(32, 32), 1).unwrap();
        let mut tf = maps.to_tensor_file();
        let mask: Vec<u8> = vec![1; 16 * 16];
        tf.put_u8("mask", &[16, 16], &mask);
        tf.put_meta(&serde_json::json!({}));
        let dir = std::env::temp_dir().join("mrf_phantom_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("badmask.mrft");
        tf.save(&path).unwrap();
        assert!(matches!(load_parameter_maps(&path), Err(MrfError::Shape(_))));
    }

    #[test]
    fn grid_too_small() {
        assert!(make_phantom(Grid::new(8, 8), 0).is_err());
    }

    #[test]
    fn uniform_phantom_yields_rank_one_series() {
        let grid = Grid::new(16, 16);
        let mut maps = make_phantom(grid, 0).unwrap();
        maps.t1_map.fill(900.0);
        maps.t2_map.fill(80.0);
        for r in 0..16 {
            for c in 0..16 {
                maps.pd_map[[r, c]] = Complex64::new(0.5 + 0.01 * r as f64, 0.1);
            }
        }
        let sched = AcquisitionSchedule::default_train(30).unwrap();
        let c = synthesize_timeseries(&maps, &sched, &SimConfig::default()).unwrap();
        // every row is the same fingerprint scaled by PD
        let tissue = TissueParams::new(900.0, 80.0).unwrap();
        let fp = simulate_fingerprint(&tissue, &sched, &SimConfig::default()).unwrap();
        for n in 0..grid.n() {
            let (r, cc) = grid.unflat(n);
            let rho = maps.pd_map[[r, cc]];
            for j in 0..30 {
                assert!((c.c[[n, j]] - rho * fp.samples[j]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_pd_gives_zero_series() {
        let grid = Grid::new(16, 16);
        let mut maps = make_phantom(grid, 0).unwrap();
        maps.pd_map.fill(Complex64::ZERO);
        let sched = AcquisitionSchedule::default_train(10).unwrap();
        let c = synthesize_timeseries(&maps, &sched, &SimConfig::default()).unwrap();
        assert!(c.c.iter().all(|z| *z == Complex64::ZERO));
    }

    #[test]
    fn sigma_formula_inversion() {
        assert!((sigma_for_snr(20.0, 1.0) - 0.1).abs() < 1e-15);
        assert!((sigma_for_snr(40.0, 2.0) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn noise_is_seeded_and_calibrated() {
        let n_samples = 200_000;
        let data = KSpaceData {
            per_coil: vec![vec![Complex64::ZERO; n_samples]],
            layout: vec![0, n_samples],
        };
        let sigma = 0.25;
        let snr = 20.0 * (1.0f64 / sigma).log10();
        let noisy = add_noise(&data, snr, 1.0, 42).unwrap();
        let again = add_noise(&data, snr, 1.0, 42).unwrap();
        assert_eq!(noisy.per_coil, again.per_coil);
        let var: f64 = noisy.per_coil[0].iter().map(|z| z.norm_sqr()).sum::<f64>()
            / n_samples as f64;
        let emp_sigma = var.sqrt();
        assert!(
            (emp_sigma - sigma).abs() / sigma < 0.02,
            "empirical sigma {emp_sigma} vs {sigma}"
        );
    }

    #[test]
    fn infinite_snr_is_identity() {
        let data = KSpaceData {
            per_coil: vec![vec![Complex64::new(1.0, -2.0); 10]],
            layout: vec![0, 10],
        };
        let out = add_noise(&data, f64::INFINITY, 1.0, 0).unwrap();
        assert_eq!(out.per_coil, data.per_coil);
        assert!(add_noise(&data, 30.0, 0.0, 0).is_err());
    }
}
