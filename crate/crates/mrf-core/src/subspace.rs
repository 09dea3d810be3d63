//! Temporal subspace estimation from a simulated dictionary.

use ndarray::Array2;
use num_complex::Complex64;
use std::path::Path;

use crate::container::TensorFile;
use crate::error::{MrfError, Result};
use crate::linalg;
use crate::spin::Dictionary;
use crate::types::{CasoratiImage, SpatialCoefficients};

/// Top-L right singular subspace of the dictionary atom matrix.
///
/// `v_hat` is L x M with orthonormal rows, ordered by descending singular
/// value. The phase of each row is fixed so that its first entry of
/// significant magnitude is real and positive, making the decomposition
/// deterministic.
#[derive(Debug, Clone)]
pub struct TemporalSubspace {
    pub v_hat: Array2<Complex64>,
    pub singular_values: Vec<f64>,
    pub dictionary_hash: String,
}

impl TemporalSubspace {
    pub fn rank(&self) -> usize {
        self.v_hat.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.v_hat.ncols()
    }

    pub fn hash(&self) -> String {
        let mut tf = TensorFile::new();
        tf.put_c128_matrix("v_hat", &self.v_hat);
        tf.hash_records(&["v_hat"]).unwrap()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut tf = TensorFile::new();
        tf.put_c128_matrix("v_hat", &self.v_hat);
        tf.put_f64(
            "singular_values",
            &[self.singular_values.len() as u64],
            &self.singular_values,
        );
        tf.put_meta(&serde_json::json!({
            "kind": "subspace",
            "rank": self.rank(),
            "dictionary_hash": self.dictionary_hash,
        }));
        tf.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let tf = TensorFile::load(path)?;
        let v_hat = tf.get_c128_matrix("v_hat")?;
        let singular_values = tf.get_f64("singular_values")?;
        let meta = tf.get_meta()?;
        let dictionary_hash = meta["dictionary_hash"].as_str().unwrap_or_default().to_string();
        Ok(TemporalSubspace {
            v_hat,
            singular_values,
            dictionary_hash,
        })
    }
}

/// Estimate the rank-L temporal subspace of `dict` by singular value
/// decomposition of the K x M atom matrix.
///
/// For tall dictionaries the atoms are first reduced by a Householder QR
/// (the R factor shares the right singular vectors), then a one-sided
/// Jacobi SVD extracts the singular triplets.
pub fn estimate_temporal_subspace(dict: &Dictionary, rank: usize) -> Result<TemporalSubspace> {
    let k = dict.n_atoms();
    let m = dict.n_frames();
    let max_rank = k.min(m);
    if rank == 0 || rank > max_rank {
        return Err(MrfError::Config(format!(
            "subspace rank {rank} must lie in [1, min(K, M) = {max_rank}]"
        )));
    }
    if dict.atoms.iter().any(|a| !a.is_finite()) {
        return Err(MrfError::Numerical("dictionary atoms contain non-finite entries".into()));
    }
    // Reduce tall atom matrices before the Jacobi sweeps.
    let reduced: Array2<Complex64>;
    let work = if k > m {
        reduced = linalg::qr_r_factor(&dict.atoms.view());
        reduced.view()
    } else {
        dict.atoms.view()
    };
    let (sigma, v) = linalg::jacobi_svd(&work)?;
    let mut v_hat = Array2::<Complex64>::zeros((rank, m));
    for l in 0..rank {
        for j in 0..m {
            v_hat[[l, j]] = v[[j, l]].conj();
        }
    }
    fix_row_phases(&mut v_hat);
    Ok(TemporalSubspace {
        v_hat,
        singular_values: sigma,
        dictionary_hash: dict.hash(),
    })
}

/// Multiply each row by a unit phase so its first entry with magnitude
/// above 1e-12 of the row maximum becomes real and positive.
fn fix_row_phases(v_hat: &mut Array2<Complex64>) {
    let (rows, cols) = v_hat.dim();
    for r in 0..rows {
        let max_mag = (0..cols).map(|j| v_hat[[r, j]].norm()).fold(0.0, f64::max);
        if max_mag == 0.0 {
            continue;
        }
        let pivot = (0..cols)
            .map(|j| v_hat[[r, j]])
            .find(|z| z.norm() > 1e-12 * max_mag)
            .unwrap();
        let phase = (pivot / pivot.norm()).conj();
        for j in 0..cols {
            v_hat[[r, j]] *= phase;
        }
    }
}

/// Least-squares spatial factor U = C * V^H, exact for orthonormal rows
/// of V.
pub fn project_timeseries(
    c: &CasoratiImage,
    v: &TemporalSubspace,
) -> Result<SpatialCoefficients> {
    if c.n_frames() != v.n_frames() {
        return Err(MrfError::Shape(format!(
            "time series has {} frames, subspace has {}",
            c.n_frames(),
            v.n_frames()
        )));
    }
    let u = linalg::matmul_conj_b(&c.c.view(), &v.v_hat.view());
    SpatialCoefficients::new(u, c.grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{build_dictionary, AcquisitionSchedule, GridSpec, SimConfig};
    use crate::types::Grid;
    use ndarray::Array2;

    fn desk_dictionary(m: usize) -> Dictionary {
        let sched = AcquisitionSchedule::default_train(m).unwrap();
        build_dictionary(
            &GridSpec::new(vec![(300.0, 2100.0, 300.0)]).unwrap(),
            &GridSpec::new(vec![(30.0, 210.0, 30.0)]).unwrap(),
            &sched,
            &SimConfig::default(),
            true,
        )
        .unwrap()
    }

    #[test]
    fn rank_one_dictionary_is_exact() {
        let sched = AcquisitionSchedule::default_train(40).unwrap();
        let dict = build_dictionary(
            &GridSpec::single(1000.0).unwrap(),
            &GridSpec::single(90.0).unwrap(),
            &sched,
            &SimConfig::default(),
            true,
        )
        .unwrap();
        let sub = estimate_temporal_subspace(&dict, 1).unwrap();
        // V-hat equals the atom up to the fixed phase; projection residual 0.
        let proj = linalg::matmul_conj_b(&dict.atoms.view(), &sub.v_hat.view());
        let back = linalg::matmul(&proj.view(), &sub.v_hat.view());
        let resid = linalg::rel_frob_diff(&back.view(), &dict.atoms.view());
        assert!(resid < 1e-12);
        for j in 0..40 {
            assert!((sub.v_hat[[0, j]].norm() - dict.atoms[[0, j]].norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn full_rank_projection_residual_vanishes() {
        let dict = desk_dictionary(6);
        let sub = estimate_temporal_subspace(&dict, 6).unwrap();
        let proj = linalg::matmul_conj_b(&dict.atoms.view(), &sub.v_hat.view());
        let back = linalg::matmul(&proj.view(), &sub.v_hat.view());
        assert!(linalg::rel_frob_diff(&back.view(), &dict.atoms.view()) < 1e-10);
    }

    #[test]
    fn rows_are_orthonormal() {
        let dict = desk_dictionary(48);
        let sub = estimate_temporal_subspace(&dict, 8).unwrap();
        let g = linalg::matmul_conj_b(&sub.v_hat.view(), &sub.v_hat.view());
        for i in 0..8 {
            for j in 0..8 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (g[[i, j]] - Complex64::new(want, 0.0)).norm() < 1e-12,
                    "gram [{i},{j}] = {}",
                    g[[i, j]]
                );
            }
        }
    }

    #[test]
    fn deterministic_under_phase_convention() {
        let dict = desk_dictionary(32);
        let a = estimate_temporal_subspace(&dict, 4).unwrap();
        let b = estimate_temporal_subspace(&dict, 4).unwrap();
        assert_eq!(a.v_hat, b.v_hat);
    }

    #[test]
    fn rank_validation() {
        let dict = desk_dictionary(10);
        assert!(estimate_temporal_subspace(&dict, 0).is_err());
        assert!(estimate_temporal_subspace(&dict, 11).is_err());
    }

    #[test]
    fn projection_recovers_exact_factor() {
        let dict = desk_dictionary(24);
        let sub = estimate_temporal_subspace(&dict, 3).unwrap();
        let grid = Grid::new(4, 4);
        let mut u0 = Array2::<Complex64>::zeros((16, 3));
        for n in 0..16 {
            for l in 0..3 {
                u0[[n, l]] = Complex64::new((n * 3 + l) as f64 * 0.1 - 1.0, (l + 1) as f64 * 0.2);
            }
        }
        let c = linalg::matmul(&u0.view(), &sub.v_hat.view());
        let cas = CasoratiImage::new(c, grid).unwrap();
        let u = project_timeseries(&cas, &sub).unwrap();
        assert!(linalg::rel_frob_diff(&u.u.view(), &u0.view()) < 1e-12);

        let zero = CasoratiImage::new(Array2::zeros((16, 24)), grid).unwrap();
        let uz = project_timeseries(&zero, &sub).unwrap();
        assert!(uz.u.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn save_load_round_trip() {
        let dict = desk_dictionary(20);
        let sub = estimate_temporal_subspace(&dict, 3).unwrap();
        let dir = std::env::temp_dir().join("mrf_subspace_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("sub.mrft");
        sub.save(&path).unwrap();
        let back = TemporalSubspace::load(&path).unwrap();
        assert_eq!(back.v_hat, sub.v_hat);
        assert_eq!(back.dictionary_hash, sub.dictionary_hash);
    }
}
