//! k-space sampling trajectories.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::container::TensorFile;
use crate::error::{MrfError, Result};
use crate::types::Grid;

/// How interleaf `j` of a spiral set is rotated relative to interleaf 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationRule {
    /// 2 pi j / n_interleaves.
    Uniform,
    /// Golden-angle increments, pi (3 - sqrt 5) per interleaf.
    GoldenAngle,
}

/// Per-TR sampling pattern: a set of interleaves (sample coordinates in
/// cycles/FOV, each component in [-0.5, 0.5)) and the map from TR index to
/// interleaf index. `full_set_size` is the number of interleaves that
/// together constitute full sampling.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub interleaves: Vec<Vec<[f64; 2]>>,
    pub assignment: Vec<usize>,
    pub full_set_size: usize,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        if self.interleaves.is_empty() {
            return Err(MrfError::Config("trajectory has no interleaves".into()));
        }
        if self.assignment.is_empty() {
            return Err(MrfError::Config("trajectory assignment is empty".into()));
        }
        for (i, il) in self.interleaves.iter().enumerate() {
            if il.is_empty() {
                return Err(MrfError::Config(format!("interleaf {i} has no samples")));
            }
            for (s, k) in il.iter().enumerate() {
                if !(k[0].is_finite() && k[1].is_finite())
                    || k[0].abs() > 0.5
                    || k[1].abs() > 0.5
                    || k[0] == 0.5
                    || k[1] == 0.5
                {
                    return Err(MrfError::Config(format!(
                        "interleaf {i} sample {s} = ({}, {}) outside [-0.5, 0.5)",
                        k[0], k[1]
                    )));
                }
            }
        }
        let mut used: Vec<usize> = self.assignment.clone();
        used.sort_unstable();
        used.dedup();
        if let Some(&bad) = used.iter().find(|&&i| i >= self.interleaves.len()) {
            return Err(MrfError::Config(format!(
                "assignment references interleaf {bad}, only {} exist",
                self.interleaves.len()
            )));
        }
        if used.len() > self.full_set_size {
            return Err(MrfError::Config(format!(
                "assignment uses {} distinct interleaves, full set is {}",
                used.len(),
                self.full_set_size
            )));
        }
        Ok(())
    }

    pub fn n_trs(&self) -> usize {
        self.assignment.len()
    }

    pub fn samples_at(&self, m: usize) -> &[[f64; 2]] {
        &self.interleaves[self.assignment[m]]
    }

    /// Block offsets of each TR in the concatenated data vector (length M+1).
    pub fn layout(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.assignment.len() + 1);
        let mut acc = 0usize;
        offsets.push(0);
        for &i in &self.assignment {
            acc += self.interleaves[i].len();
            offsets.push(acc);
        }
        offsets
    }

    pub fn total_samples(&self) -> usize {
        self.assignment.iter().map(|&i| self.interleaves[i].len()).sum()
    }

    pub fn hash(&self) -> String {
        let mut bytes = Vec::new();
        for il in &self.interleaves {
            for k in il {
                bytes.extend_from_slice(&k[0].to_le_bytes());
                bytes.extend_from_slice(&k[1].to_le_bytes());
            }
        }
        for &a in &self.assignment {
            bytes.extend_from_slice(&(a as u64).to_le_bytes());
        }
        bytes.extend_from_slice(&(self.full_set_size as u64).to_le_bytes());
        crate::container::sha256_hex(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut tf = TensorFile::new();
        for (i, il) in self.interleaves.iter().enumerate() {
            let flat: Vec<f64> = il.iter().flat_map(|k| [k[0], k[1]]).collect();
            tf.put_f64(&format!("coords_{i:04}"), &[il.len() as u64, 2], &flat);
        }
        let assignment: Vec<i64> = self.assignment.iter().map(|&a| a as i64).collect();
        tf.put_i64("assignment", &[assignment.len() as u64], &assignment);
        tf.put_meta(&serde_json::json!({
            "kind": "trajectory",
            "n_interleaves": self.interleaves.len(),
            "full_set_size": self.full_set_size,
        }));
        tf.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let tf = TensorFile::load(path)?;
        let meta = tf.get_meta()?;
        let n = meta["n_interleaves"]
            .as_u64()
            .ok_or_else(|| MrfError::Format("trajectory metadata missing n_interleaves".into()))?
            as usize;
        let full_set_size = meta["full_set_size"]
            .as_u64()
            .ok_or_else(|| MrfError::Format("trajectory metadata missing full_set_size".into()))?
            as usize;
        let mut interleaves = Vec::with_capacity(n);
        for i in 0..n {
            let name = format!("coords_{i:04}");
            let dims = tf.dims(&name)?.to_vec();
            let flat = tf.get_f64(&name)?;
            if dims.len() != 2 || dims[1] != 2 {
                return Err(MrfError::Shape(format!("record {name} must be P x 2")));
            }
            interleaves.push(flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect());
        }
        let assignment: Vec<usize> = tf
            .get_i64("assignment")?
            .into_iter()
            .map(|a| a as usize)
            .collect();
        let traj = Trajectory {
            interleaves,
            assignment,
            full_set_size,
        };
        traj.validate()?;
        Ok(traj)
    }

    /// Collapse all interleaves into a single one acquired at every TR,
    /// i.e. full sampling for each contrast frame.
    pub fn to_fully_sampled(&self) -> Trajectory {
        let union: Vec<[f64; 2]> = self.interleaves.iter().flatten().copied().collect();
        Trajectory {
            interleaves: vec![union],
            assignment: vec![0; self.assignment.len()],
            full_set_size: 1,
        }
    }
}

/// Uniform-density Archimedean spiral set: radius grows linearly from 0 to
/// 0.5 over `samples_per_interleaf` samples, interleaf `j` rotated per
/// `rotation_rule`, and TR `m` acquires interleaf `m mod n_interleaves`.
pub fn make_spiral_trajectory(
    grid: Grid,
    n_trs: usize,
    n_interleaves: usize,
    samples_per_interleaf: usize,
    rotation_rule: RotationRule,
) -> Result<Trajectory> {
    if n_interleaves == 0 {
        return Err(MrfError::Config("need at least one interleaf".into()));
    }
    if samples_per_interleaf < 2 {
        return Err(MrfError::Config("need at least two samples per interleaf".into()));
    }
    if n_trs == 0 {
        return Err(MrfError::Config("trajectory needs at least one TR".into()));
    }
    let size = grid.rows.max(grid.cols) as f64;
    // Enough turns that the interleaved union satisfies the radial Nyquist
    // spacing 0.5 / (n_interleaves * n_turns) <= 1 / size.
    let n_turns = (size / (2.0 * n_interleaves as f64)).ceil().max(1.0);
    // Fixed offset keeps endpoints off the coordinate axes so every
    // component stays strictly inside [-0.5, 0.5).
    let theta0 = 0.02 * std::f64::consts::PI;
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    let mut interleaves = Vec::with_capacity(n_interleaves);
    for j in 0..n_interleaves {
        let rot = match rotation_rule {
            RotationRule::Uniform => std::f64::consts::TAU * j as f64 / n_interleaves as f64,
            RotationRule::GoldenAngle => golden * j as f64,
        };
        let mut samples = Vec::with_capacity(samples_per_interleaf);
        for s in 0..samples_per_interleaf {
            let t = s as f64 / (samples_per_interleaf - 1) as f64;
            let r = 0.5 * t;
            let theta = std::f64::consts::TAU * n_turns * t + theta0 + rot;
            samples.push([r * theta.cos(), r * theta.sin()]);
        }
        interleaves.push(samples);
    }
    let assignment: Vec<usize> = (0..n_trs).map(|m| m % n_interleaves).collect();
    let traj = Trajectory {
        interleaves,
        assignment,
        full_set_size: n_interleaves,
    };
    traj.validate()?;
    Ok(traj)
}

/// Exact Cartesian sampling: one interleaf holding every grid frequency,
/// acquired at every TR.
pub fn make_cartesian_trajectory(grid: Grid, n_trs: usize) -> Result<Trajectory> {
    if n_trs == 0 {
        return Err(MrfError::Config("trajectory needs at least one TR".into()));
    }
    let mut samples = Vec::with_capacity(grid.n());
    for r in 0..grid.rows {
        let ky = (r as f64 - grid.rows as f64 / 2.0) / grid.rows as f64;
        for c in 0..grid.cols {
            let kx = (c as f64 - grid.cols as f64 / 2.0) / grid.cols as f64;
            samples.push([kx, ky]);
        }
    }
    let traj = Trajectory {
        interleaves: vec![samples],
        assignment: vec![0; n_trs],
        full_set_size: 1,
    };
    traj.validate()?;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spiral_ends_at_half_radius() {
        let traj =
            make_spiral_trajectory(Grid::new(64, 64), 10, 48, 128, RotationRule::Uniform).unwrap();
        for il in &traj.interleaves {
            let last = il.last().unwrap();
            let r = (last[0] * last[0] + last[1] * last[1]).sqrt();
            assert!((r - 0.5).abs() < 1e-12);
            let first = il.first().unwrap();
            assert_eq!(first, &[0.0, 0.0]);
        }
    }

    #[test]
    fn uniform_interleaves_are_rotated_copies() {
        let traj =
            make_spiral_trajectory(Grid::new(64, 64), 10, 48, 64, RotationRule::Uniform).unwrap();
        let d = std::f64::consts::TAU / 48.0;
        let (c, s) = (d.cos(), d.sin());
        for j in 0..47 {
            for (a, b) in traj.interleaves[j].iter().zip(&traj.interleaves[j + 1]) {
                let rx = c * a[0] - s * a[1];
                let ry = s * a[0] + c * a[1];
                assert!((rx - b[0]).abs() < 1e-12 && (ry - b[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn assignment_cycles_interleaves() {
        let traj =
            make_spiral_trajectory(Grid::new(32, 32), 100, 48, 64, RotationRule::Uniform).unwrap();
        for m in 0..100 {
            assert_eq!(traj.assignment[m], m % 48);
        }
        assert_eq!(traj.full_set_size, 48);
    }

    #[test]
    fn layout_offsets_are_consistent() {
        let traj =
            make_spiral_trajectory(Grid::new(32, 32), 5, 3, 10, RotationRule::Uniform).unwrap();
        let layout = traj.layout();
        assert_eq!(layout, vec![0, 10, 20, 30, 40, 50]);
        assert_eq!(traj.total_samples(), 50);
    }

    #[test]
    fn fully_sampled_union() {
        let traj =
            make_spiral_trajectory(Grid::new(32, 32), 6, 4, 16, RotationRule::Uniform).unwrap();
        let full = traj.to_fully_sampled();
        assert_eq!(full.interleaves.len(), 1);
        assert_eq!(full.interleaves[0].len(), 64);
        assert_eq!(full.full_set_size, 1);
        assert!(full.validate().is_ok());
    }

    #[test]
    fn save_load_round_trip() {
        let traj =
            make_spiral_trajectory(Grid::new(32, 32), 7, 4, 16, RotationRule::GoldenAngle).unwrap();
        let dir = std::env::temp_dir().join("mrf_traj_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("traj.mrft");
        traj.save(&path).unwrap();
        let back = Trajectory::load(&path).unwrap();
        assert_eq!(back.assignment, traj.assignment);
        assert_eq!(back.full_set_size, traj.full_set_size);
        assert_eq!(back.interleaves, traj.interleaves);
        assert_eq!(back.hash(), traj.hash());
    }

    #[test]
    fn cartesian_covers_grid() {
        let grid = Grid::new(8, 8);
        let traj = make_cartesian_trajectory(grid, 3).unwrap();
        assert_eq!(traj.interleaves[0].len(), 64);
        assert!(traj.validate().is_ok());
    }

    #[test]
    fn validation_catches_bad_assignment() {
        let mut traj =
            make_spiral_trajectory(Grid::new(32, 32), 5, 4, 16, RotationRule::Uniform).unwrap();
        traj.assignment[0] = 9;
        assert!(traj.validate().is_err());
    }
}
