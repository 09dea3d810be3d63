//! Transient-state spin simulation and dictionary construction.
//!
//! Two spin models are implemented: an extended-phase-graph (EPG) simulator
//! for unbalanced gradient-echo trains (the accurate model, default 30
//! configuration states) and a single-isochromat ideal-spoiling model whose
//! closed forms are used by the analytic test oracles.

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::container::TensorFile;
use crate::error::{MrfError, Result};

/// Tissue relaxation parameters with a complex amplitude (proton density).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TissueParams {
    pub t1_ms: f64,
    pub t2_ms: f64,
    pub rho: Complex64,
}

impl TissueParams {
    pub fn new(t1_ms: f64, t2_ms: f64) -> Result<Self> {
        Self::with_rho(t1_ms, t2_ms, Complex64::new(1.0, 0.0))
    }

    pub fn with_rho(t1_ms: f64, t2_ms: f64, rho: Complex64) -> Result<Self> {
        if !(t1_ms > 0.0) || !t1_ms.is_finite() {
            return Err(MrfError::Config(format!("t1 must be positive, got {t1_ms}")));
        }
        if !(t2_ms > 0.0) || !t2_ms.is_finite() {
            return Err(MrfError::Config(format!("t2 must be positive, got {t2_ms}")));
        }
        if t2_ms > t1_ms {
            return Err(MrfError::Config(format!(
                "t2 ({t2_ms} ms) exceeds t1 ({t1_ms} ms)"
            )));
        }
        if !rho.is_finite() {
            return Err(MrfError::Config("rho must be finite".into()));
        }
        Ok(TissueParams { t1_ms, t2_ms, rho })
    }
}

/// Echo-timing convention: the signal is evaluated at the echo time of
/// each TR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EchoConvention {
    SignalAtTe,
}

/// Per-TR excitation train: flip angles, repetition and echo times, and the
/// delay between the initial inversion and the first pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionSchedule {
    pub flip_angles_rad: Vec<f64>,
    pub tr_ms: Vec<f64>,
    pub te_ms: Vec<f64>,
    pub inversion_delay_ms: f64,
    pub echo_convention: EchoConvention,
}

impl AcquisitionSchedule {
    pub fn new(
        flip_angles_rad: Vec<f64>,
        tr_ms: Vec<f64>,
        te_ms: Vec<f64>,
        inversion_delay_ms: f64,
    ) -> Result<Self> {
        let m = flip_angles_rad.len();
        if m == 0 {
            return Err(MrfError::Config("schedule must contain at least one TR".into()));
        }
        if tr_ms.len() != m || te_ms.len() != m {
            return Err(MrfError::Shape(format!(
                "schedule arrays disagree: {} flips, {} TRs, {} TEs",
                m,
                tr_ms.len(),
                te_ms.len()
            )));
        }
        for (i, &a) in flip_angles_rad.iter().enumerate() {
            if !(0.0..=std::f64::consts::PI).contains(&a) {
                return Err(MrfError::Config(format!(
                    "flip angle {i} = {a} rad outside [0, pi]"
                )));
            }
        }
        for i in 0..m {
            if !(te_ms[i] >= 0.0 && tr_ms[i] > te_ms[i]) {
                return Err(MrfError::Config(format!(
                    "TR {i}: need tr > te >= 0, got tr = {} te = {}",
                    tr_ms[i], te_ms[i]
                )));
            }
        }
        if !(inversion_delay_ms >= 0.0) {
            return Err(MrfError::Config(format!(
                "inversion delay must be nonnegative, got {inversion_delay_ms}"
            )));
        }
        Ok(AcquisitionSchedule {
            flip_angles_rad,
            tr_ms,
            te_ms,
            inversion_delay_ms,
            echo_convention: EchoConvention::SignalAtTe,
        })
    }

    pub fn len(&self) -> usize {
        self.flip_angles_rad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flip_angles_rad.is_empty()
    }

    /// Keep only the first `m` TRs.
    pub fn truncated(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.len() {
            return Err(MrfError::Config(format!(
                "cannot truncate a {}-TR schedule to {m} TRs",
                self.len()
            )));
        }
        AcquisitionSchedule::new(
            self.flip_angles_rad[..m].to_vec(),
            self.tr_ms[..m].to_vec(),
            self.te_ms[..m].to_vec(),
            self.inversion_delay_ms,
        )
    }

    /// Built-in transient-state train: inversion with a 20 ms delay, flip
    /// angles following alternating smooth sinusoidal lobes within
    /// [5, 70] degrees (lobe length 250 TRs, amplitudes 65 and 40 degrees),
    /// constant TR = 12 ms and TE = 2 ms. Truncatable to any M.
    pub fn default_train(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(MrfError::Config("schedule length must be at least 1".into()));
        }
        const LOBE: usize = 250;
        let flips: Vec<f64> = (0..m)
            .map(|i| {
                let lobe = (i / LOBE) % 2;
                let amp_deg = if lobe == 0 { 65.0 } else { 40.0 };
                let t = (i % LOBE) as f64 / LOBE as f64;
                let deg = 5.0 + amp_deg * (std::f64::consts::PI * t).sin();
                deg.to_radians()
            })
            .collect();
        AcquisitionSchedule::new(flips, vec![12.0; m], vec![2.0; m], 20.0)
    }

    /// Schedule hash for provenance tags on downstream files.
    pub fn hash(&self) -> String {
        let mut bytes = Vec::with_capacity(self.len() * 24 + 8);
        bytes.extend_from_slice(&self.inversion_delay_ms.to_le_bytes());
        for i in 0..self.len() {
            bytes.extend_from_slice(&self.flip_angles_rad[i].to_le_bytes());
            bytes.extend_from_slice(&self.tr_ms[i].to_le_bytes());
            bytes.extend_from_slice(&self.te_ms[i].to_le_bytes());
        }
        crate::container::sha256_hex(&bytes)
    }

    /// Plain-text schedule file: a header line `inversion_delay_ms <value>`,
    /// then one line per TR: `flip_deg tr_ms te_ms`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MrfError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| MrfError::Format("empty schedule file".into()))?;
        let mut parts = header.split_whitespace();
        match (parts.next(), parts.next()) {
            (Some("inversion_delay_ms"), Some(v)) => {
                let delay: f64 = v
                    .parse()
                    .map_err(|_| MrfError::Format(format!("bad inversion delay `{v}`")))?;
                let mut flips = Vec::new();
                let mut trs = Vec::new();
                let mut tes = Vec::new();
                for (i, line) in lines.enumerate() {
                    let vals: Vec<f64> = line
                        .split_whitespace()
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| {
                            MrfError::Format(format!("schedule line {}: `{line}`", i + 2))
                        })?;
                    if vals.len() != 3 {
                        return Err(MrfError::Format(format!(
                            "schedule line {} has {} fields, expected `flip_deg tr_ms te_ms`",
                            i + 2,
                            vals.len()
                        )));
                    }
                    flips.push(vals[0].to_radians());
                    trs.push(vals[1]);
                    tes.push(vals[2]);
                }
                AcquisitionSchedule::new(flips, trs, tes, delay)
            }
            _ => Err(MrfError::Format(
                "schedule file must start with `inversion_delay_ms <value>`".into(),
            )),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = format!("inversion_delay_ms {}\n", self.inversion_delay_ms);
        for i in 0..self.len() {
            text.push_str(&format!(
                "{} {} {}\n",
                self.flip_angles_rad[i].to_degrees(),
                self.tr_ms[i],
                self.te_ms[i]
            ));
        }
        std::fs::write(path, text).map_err(|e| MrfError::io(path, e))
    }
}

/// Spin model selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum SpinModel {
    /// Extended phase graph with the given number of configuration states.
    Epg { states: usize },
    /// Single isochromat with perfect spoiling of transverse magnetization
    /// at the end of every TR.
    IdealSpoiling,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: SpinModel,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            model: SpinModel::Epg { states: 30 },
        }
    }
}

impl SimConfig {
    pub fn ideal_spoiling() -> Self {
        SimConfig {
            model: SpinModel::IdealSpoiling,
        }
    }

    pub fn epg(states: usize) -> Self {
        SimConfig {
            model: SpinModel::Epg { states },
        }
    }

    fn validate(&self) -> Result<()> {
        if let SpinModel::Epg { states } = self.model {
            if states < 2 {
                return Err(MrfError::Config(format!(
                    "EPG needs at least 2 configuration states, got {states}"
                )));
            }
        }
        Ok(())
    }
}

/// Complex signal per TR for one tissue.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    pub samples: Vec<Complex64>,
}

impl Fingerprint {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn norm(&self) -> f64 {
        crate::linalg::norm2(&self.samples)
    }
}

/// EPG state triple per dephasing order.
struct EpgState {
    f_plus: Vec<Complex64>,
    f_minus: Vec<Complex64>,
    z: Vec<Complex64>,
}

impl EpgState {
    fn equilibrium(states: usize) -> Self {
        let mut z = vec![Complex64::ZERO; states];
        z[0] = Complex64::new(1.0, 0.0);
        EpgState {
            f_plus: vec![Complex64::ZERO; states],
            f_minus: vec![Complex64::ZERO; states],
            z,
        }
    }

    /// RF rotation by `alpha` about an axis with phase `phi`.
    fn rf(&mut self, alpha: f64, phi: f64) {
        let half = alpha / 2.0;
        let (ch, sh) = (half.cos(), half.sin());
        let sa = alpha.sin();
        let ca = alpha.cos();
        let e_ip = Complex64::from_polar(1.0, phi);
        let e_in = e_ip.conj();
        let e_2ip = Complex64::from_polar(1.0, 2.0 * phi);
        let e_2in = e_2ip.conj();
        let i = Complex64::new(0.0, 1.0);
        let t00 = Complex64::new(ch * ch, 0.0);
        let t01 = e_2ip * (sh * sh);
        let t02 = -i * e_ip * sa;
        let t10 = e_2in * (sh * sh);
        let t11 = Complex64::new(ch * ch, 0.0);
        let t12 = i * e_in * sa;
        let t20 = -i * e_in * (sa / 2.0);
        let t21 = i * e_ip * (sa / 2.0);
        let t22 = Complex64::new(ca, 0.0);
        for k in 0..self.z.len() {
            let fp = self.f_plus[k];
            let fm = self.f_minus[k];
            let z = self.z[k];
            self.f_plus[k] = t00 * fp + t01 * fm + t02 * z;
            self.f_minus[k] = t10 * fp + t11 * fm + t12 * z;
            self.z[k] = t20 * fp + t21 * fm + t22 * z;
        }
    }

    /// Relaxation over `dt_ms` with longitudinal regrowth into the k = 0 state.
    fn relax(&mut self, dt_ms: f64, t1_ms: f64, t2_ms: f64) {
        let e1 = (-dt_ms / t1_ms).exp();
        let e2 = (-dt_ms / t2_ms).exp();
        for k in 0..self.z.len() {
            self.f_plus[k] *= e2;
            self.f_minus[k] *= e2;
            self.z[k] *= e1;
        }
        self.z[0] += Complex64::new(1.0 - e1, 0.0);
    }

    /// Ideal 180-degree inversion about the x axis: exact state exchange,
    /// avoiding the rounding of sin(pi).
    fn invert(&mut self) {
        std::mem::swap(&mut self.f_plus, &mut self.f_minus);
        for z in &mut self.z {
            *z = -*z;
        }
    }

    /// Unbalanced gradient: shift transverse configuration orders by one.
    fn grad_shift(&mut self) {
        let n = self.z.len();
        for k in (1..n).rev() {
            self.f_plus[k] = self.f_plus[k - 1];
        }
        for k in 0..(n - 1) {
            self.f_minus[k] = self.f_minus[k + 1];
        }
        self.f_minus[n - 1] = Complex64::ZERO;
        self.f_plus[0] = self.f_minus[0].conj();
    }
}

/// Simulate the complex signal evolution of one tissue under `sched`.
///
/// The sequence starts from equilibrium, applies an ideal inversion pulse,
/// waits `inversion_delay_ms`, then plays the TR train. The signal is read
/// at the echo time of each TR.
pub fn simulate_fingerprint(
    tissue: &TissueParams,
    sched: &AcquisitionSchedule,
    sim_cfg: &SimConfig,
) -> Result<Fingerprint> {
    sim_cfg.validate()?;
    let samples = match sim_cfg.model {
        SpinModel::Epg { states } => simulate_epg(tissue, sched, states),
        SpinModel::IdealSpoiling => simulate_ideal(tissue, sched),
    };
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(MrfError::Simulation {
            index: 0,
            t1_ms: tissue.t1_ms,
            t2_ms: tissue.t2_ms,
            reason: "non-finite signal sample".into(),
        });
    }
    Ok(Fingerprint { samples })
}

fn simulate_epg(tissue: &TissueParams, sched: &AcquisitionSchedule, states: usize) -> Vec<Complex64> {
    let mut epg = EpgState::equilibrium(states);
    epg.rf(std::f64::consts::PI, 0.0); // inversion
    epg.relax(sched.inversion_delay_ms, tissue.t1_ms, tissue.t2_ms);
    let m = sched.len();
    let mut samples = Vec::with_capacity(m);
    for i in 0..m {
        epg.rf(sched.flip_angles_rad[i], 0.0);
        epg.relax(sched.te_ms[i], tissue.t1_ms, tissue.t2_ms);
        samples.push(tissue.rho * epg.f_plus[0]);
        epg.relax(sched.tr_ms[i] - sched.te_ms[i], tissue.t1_ms, tissue.t2_ms);
        epg.grad_shift();
    }
    samples
}

fn simulate_ideal(tissue: &TissueParams, sched: &AcquisitionSchedule) -> Vec<Complex64> {
    let mut mz = -1.0f64; // after inversion
    let e1_delay = (-sched.inversion_delay_ms / tissue.t1_ms).exp();
    mz = 1.0 + (mz - 1.0) * e1_delay;
    let m = sched.len();
    let mut samples = Vec::with_capacity(m);
    // Same phase convention as the EPG model: a pulse about the x axis tips
    // Mz into -i * sin(alpha) * Mz.
    let minus_i = Complex64::new(0.0, -1.0);
    for i in 0..m {
        let alpha = sched.flip_angles_rad[i];
        let e2_te = (-sched.te_ms[i] / tissue.t2_ms).exp();
        let signal = minus_i * (alpha.sin() * mz * e2_te);
        samples.push(tissue.rho * signal);
        let mz_after = mz * alpha.cos();
        let e1_tr = (-sched.tr_ms[i] / tissue.t1_ms).exp();
        mz = 1.0 + (mz_after - 1.0) * e1_tr;
    }
    samples
}

/// One segment of a parameter grid: `start, start + step, ...` up to `end`
/// inclusive (within a small tolerance).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSegment {
    pub start_ms: f64,
    pub end_ms: f64,
    pub step_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub segments: Vec<GridSegment>,
}

impl GridSpec {
    pub fn new(segments: Vec<(f64, f64, f64)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(MrfError::Config("grid spec needs at least one segment".into()));
        }
        for &(start, end, step) in &segments {
            if !(start > 0.0 && end >= start && step > 0.0) {
                return Err(MrfError::Config(format!(
                    "bad grid segment ({start}, {end}, {step})"
                )));
            }
        }
        Ok(GridSpec {
            segments: segments
                .into_iter()
                .map(|(start_ms, end_ms, step_ms)| GridSegment {
                    start_ms,
                    end_ms,
                    step_ms,
                })
                .collect(),
        })
    }

    pub fn single(value_ms: f64) -> Result<Self> {
        Self::new(vec![(value_ms, value_ms, 1.0)])
    }

    /// T1 grid matching the published discretization: 10 ms steps over
    /// [100, 1500] ms, then 20 ms steps up to 3000 ms. The second segment
    /// starts one step above the first segment's end (1520 ms).
    pub fn t1_default() -> Self {
        Self::new(vec![(100.0, 1500.0, 10.0), (1520.0, 3000.0, 20.0)]).unwrap()
    }

    /// T2 grid: 1 ms steps over [20, 200] ms, then 2 ms steps up to 350 ms
    /// (second segment starts at 202 ms).
    pub fn t2_default() -> Self {
        Self::new(vec![(20.0, 200.0, 1.0), (202.0, 350.0, 2.0)]).unwrap()
    }

    /// Coarser desk-scale grids that still contain the phantom tissue values.
    pub fn t1_desk() -> Self {
        Self::new(vec![(100.0, 3000.0, 25.0)]).unwrap()
    }

    pub fn t2_desk() -> Self {
        Self::new(vec![(20.0, 350.0, 5.0)]).unwrap()
    }

    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for seg in &self.segments {
            let count = ((seg.end_ms - seg.start_ms) / seg.step_ms + 1e-9).floor() as usize + 1;
            for k in 0..count {
                out.push(seg.start_ms + k as f64 * seg.step_ms);
            }
        }
        out
    }
}

/// Simulated fingerprint ensemble over a (T1, T2) grid.
#[derive(Debug, Clone)]
pub struct Dictionary {
    /// K x M complex atom matrix, one row per retained grid pair.
    pub atoms: Array2<Complex64>,
    /// Retained (t1_ms, t2_ms) pairs, row-major over the grid (t1 outer,
    /// t2 inner).
    pub grid: Vec<(f64, f64)>,
    pub normalized: bool,
    pub schedule_id: String,
    pub sim_cfg: SimConfig,
}

impl Dictionary {
    pub fn n_atoms(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.atoms.ncols()
    }

    /// Hash over atoms and grid, used for subspace/matching lineage.
    pub fn hash(&self) -> String {
        let mut tf = TensorFile::new();
        tf.put_c128_matrix("atoms", &self.atoms);
        let t1: Vec<f64> = self.grid.iter().map(|g| g.0).collect();
        let t2: Vec<f64> = self.grid.iter().map(|g| g.1).collect();
        tf.put_f64("t1_ms", &[t1.len() as u64], &t1);
        tf.put_f64("t2_ms", &[t2.len() as u64], &t2);
        tf.hash_records(&["atoms", "t1_ms", "t2_ms"]).unwrap()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut tf = TensorFile::new();
        tf.put_c128_matrix("atoms", &self.atoms);
        let t1: Vec<f64> = self.grid.iter().map(|g| g.0).collect();
        let t2: Vec<f64> = self.grid.iter().map(|g| g.1).collect();
        tf.put_f64("t1_ms", &[t1.len() as u64], &t1);
        tf.put_f64("t2_ms", &[t2.len() as u64], &t2);
        tf.put_meta(&serde_json::json!({
            "kind": "dictionary",
            "schedule_hash": self.schedule_id,
            "sim": self.sim_cfg,
            "normalized": self.normalized,
        }));
        tf.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let tf = TensorFile::load(path)?;
        let atoms = tf.get_c128_matrix("atoms")?;
        let t1 = tf.get_f64("t1_ms")?;
        let t2 = tf.get_f64("t2_ms")?;
        if t1.len() != atoms.nrows() || t2.len() != atoms.nrows() {
            return Err(MrfError::Shape(format!(
                "dictionary arrays disagree: {} atoms, {} t1, {} t2",
                atoms.nrows(),
                t1.len(),
                t2.len()
            )));
        }
        let meta = tf.get_meta()?;
        let normalized = meta["normalized"].as_bool().unwrap_or(false);
        let sim_cfg: SimConfig = serde_json::from_value(meta["sim"].clone())
            .map_err(|e| MrfError::Format(format!("dictionary sim metadata: {e}")))?;
        let schedule_id = meta["schedule_hash"].as_str().unwrap_or_default().to_string();
        Ok(Dictionary {
            atoms,
            grid: t1.into_iter().zip(t2).collect(),
            normalized,
            schedule_id,
            sim_cfg,
        })
    }
}

/// Simulate one atom per retained (t1, t2) pair. Pairs with t2 > t1 are
/// dropped at grid construction; remaining atoms are optionally normalized
/// to unit row norm. Simulation is parallel over grid points with results
/// written by grid position, so the output is independent of scheduling.
pub fn build_dictionary(
    t1_spec: &GridSpec,
    t2_spec: &GridSpec,
    sched: &AcquisitionSchedule,
    sim_cfg: &SimConfig,
    normalize: bool,
) -> Result<Dictionary> {
    sim_cfg.validate()?;
    let t1s = t1_spec.values();
    let t2s = t2_spec.values();
    let mut grid = Vec::with_capacity(t1s.len() * t2s.len());
    for &t1 in &t1s {
        for &t2 in &t2s {
            if t2 <= t1 {
                grid.push((t1, t2));
            }
        }
    }
    if grid.is_empty() {
        return Err(MrfError::Config(
            "parameter grid is empty after t2 <= t1 filtering".into(),
        ));
    }
    let m = sched.len();
    let rows: Vec<Result<Vec<Complex64>>> = grid
        .par_iter()
        .enumerate()
        .map(|(idx, &(t1, t2))| {
            let tissue = TissueParams::new(t1, t2)?;
            let fp = simulate_fingerprint(&tissue, sched, sim_cfg).map_err(|e| match e {
                MrfError::Simulation { t1_ms, t2_ms, reason, .. } => MrfError::Simulation {
                    index: idx,
                    t1_ms,
                    t2_ms,
                    reason,
                },
                other => other,
            })?;
            let mut row = fp.samples;
            if normalize {
                let n = crate::linalg::norm2(&row);
                if n == 0.0 {
                    return Err(MrfError::Simulation {
                        index: idx,
                        t1_ms: t1,
                        t2_ms: t2,
                        reason: "zero-norm fingerprint cannot be normalized".into(),
                    });
                }
                for s in &mut row {
                    *s /= n;
                }
            }
            Ok(row)
        })
        .collect();
    let mut atoms = Array2::zeros((grid.len(), m));
    for (idx, row) in rows.into_iter().enumerate() {
        let row = row?;
        for (j, v) in row.into_iter().enumerate() {
            atoms[[idx, j]] = v;
        }
    }
    Ok(Dictionary {
        atoms,
        grid,
        normalized: normalize,
        schedule_id: sched.hash(),
        sim_cfg: *sim_cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_flip_angles_give_zero_signal() {
        let sched =
            AcquisitionSchedule::new(vec![0.0; 10], vec![12.0; 10], vec![2.0; 10], 20.0).unwrap();
        let tissue = TissueParams::new(1000.0, 80.0).unwrap();
        for cfg in [SimConfig::default(), SimConfig::ideal_spoiling()] {
            let fp = simulate_fingerprint(&tissue, &sched, &cfg).unwrap();
            assert!(fp.samples.iter().all(|s| s.norm() == 0.0));
        }
    }

    #[test]
    fn inversion_recovery_closed_form() {
        // Single 90-degree pulse at TI after inversion:
        // |s| = |1 - 2 exp(-TI/T1)| * exp(-TE/T2).
        let t1 = 1000.0;
        let t2 = 80.0;
        let te = 3.0;
        let tissue = TissueParams::new(t1, t2).unwrap();
        for ti in [100.0, 693.1, 2000.0] {
            let sched = AcquisitionSchedule::new(
                vec![std::f64::consts::FRAC_PI_2],
                vec![te + 1.0],
                vec![te],
                ti,
            )
            .unwrap();
            let expect = (1.0 - 2.0 * (-ti / t1).exp()).abs() * (-te / t2).exp();
            for cfg in [SimConfig::default(), SimConfig::ideal_spoiling()] {
                let fp = simulate_fingerprint(&tissue, &sched, &cfg).unwrap();
                assert!(
                    (fp.samples[0].norm() - expect).abs() < 1e-8,
                    "model {cfg:?} TI {ti}: got {} want {expect}",
                    fp.samples[0].norm()
                );
            }
        }
    }

    #[test]
    fn spoiled_steady_state_closed_form() {
        // Constant flip angle with ideal spoiling converges to
        // |s| = sin(a) (1 - E1) / (1 - E1 cos(a)) * exp(-TE/T2).
        let t1 = 800.0;
        let t2 = 70.0;
        let alpha: f64 = 0.3;
        let tr = 12.0;
        let te = 2.0;
        let m = 4000;
        let sched =
            AcquisitionSchedule::new(vec![alpha; m], vec![tr; m], vec![te; m], 0.0).unwrap();
        let tissue = TissueParams::new(t1, t2).unwrap();
        let fp = simulate_fingerprint(&tissue, &sched, &SimConfig::ideal_spoiling()).unwrap();
        let e1 = (-tr / t1).exp();
        let expect = alpha.sin() * (1.0 - e1) / (1.0 - e1 * alpha.cos()) * (-te / t2).exp();
        assert!((fp.samples[m - 1].norm() - expect).abs() < 1e-8);
    }

    #[test]
    fn epg_signal_bounded_by_m0() {
        let sched = AcquisitionSchedule::default_train(300).unwrap();
        for &(t1, t2) in &[(300.0, 50.0), (1000.0, 100.0), (2500.0, 300.0), (100.0, 20.0)] {
            let tissue = TissueParams::new(t1, t2).unwrap();
            let fp = simulate_fingerprint(&tissue, &sched, &SimConfig::default()).unwrap();
            assert!(fp.samples.iter().all(|s| s.norm() <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn epg_converged_in_state_count() {
        let sched = AcquisitionSchedule::default_train(200).unwrap();
        for &(t1, t2) in &[(800.0, 70.0), (1300.0, 90.0), (2500.0, 300.0)] {
            let tissue = TissueParams::new(t1, t2).unwrap();
            let a = simulate_fingerprint(&tissue, &sched, &SimConfig::epg(30)).unwrap();
            let b = simulate_fingerprint(&tissue, &sched, &SimConfig::epg(60)).unwrap();
            let diff: f64 = a
                .samples
                .iter()
                .zip(&b.samples)
                .map(|(x, y)| (x - y).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(diff / a.norm() < 1e-8, "state truncation error {}", diff / a.norm());
        }
    }

    #[test]
    fn determinism_bit_identical() {
        let sched = AcquisitionSchedule::default_train(150).unwrap();
        let tissue = TissueParams::new(950.0, 85.0).unwrap();
        let a = simulate_fingerprint(&tissue, &sched, &SimConfig::default()).unwrap();
        let b = simulate_fingerprint(&tissue, &sched, &SimConfig::default()).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn default_grid_counts() {
        // 141 + 75 and 181 + 75 values with the documented second-segment
        // start convention (1520 ms / 202 ms).
        assert_eq!(GridSpec::t1_default().values().len(), 216);
        assert_eq!(GridSpec::t2_default().values().len(), 256);
        let t1 = GridSpec::t1_default().values();
        assert_eq!(t1[140], 1500.0);
        assert_eq!(t1[141], 1520.0);
        let t2 = GridSpec::t2_default().values();
        assert_eq!(t2[180], 200.0);
        assert_eq!(t2[181], 202.0);
    }

    #[test]
    fn singleton_grid_dictionary() {
        let sched = AcquisitionSchedule::default_train(50).unwrap();
        let cfg = SimConfig::default();
        let dict = build_dictionary(
            &GridSpec::single(900.0).unwrap(),
            &GridSpec::single(75.0).unwrap(),
            &sched,
            &cfg,
            true,
        )
        .unwrap();
        assert_eq!(dict.n_atoms(), 1);
        let tissue = TissueParams::new(900.0, 75.0).unwrap();
        let fp = simulate_fingerprint(&tissue, &sched, &cfg).unwrap();
        let n = fp.norm();
        for j in 0..50 {
            assert!((dict.atoms[[0, j]] - fp.samples[j] / n).norm() < 1e-12);
        }
    }

    #[test]
    fn normalized_rows_have_unit_norm() {
        let sched = AcquisitionSchedule::default_train(60).unwrap();
        let dict = build_dictionary(
            &GridSpec::new(vec![(400.0, 1200.0, 200.0)]).unwrap(),
            &GridSpec::new(vec![(40.0, 120.0, 20.0)]).unwrap(),
            &sched,
            &SimConfig::default(),
            true,
        )
        .unwrap();
        for i in 0..dict.n_atoms() {
            let row: Vec<Complex64> = dict.atoms.row(i).to_vec();
            assert!((crate::linalg::norm2(&row) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unphysical_pairs_are_filtered() {
        let sched = AcquisitionSchedule::default_train(20).unwrap();
        // All t2 > t1: grid empties out.
        let err = build_dictionary(
            &GridSpec::single(50.0).unwrap(),
            &GridSpec::single(100.0).unwrap(),
            &sched,
            &SimConfig::default(),
            false,
        )
        .unwrap_err();
        assert!(matches!(err, MrfError::Config(_)));
    }

    #[test]
    fn schedule_file_round_trip_and_errors() {
        let sched = AcquisitionSchedule::default_train(25).unwrap();
        let dir = std::env::temp_dir().join("mrf_sched_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("sched.txt");
        sched.save(&path).unwrap();
        let back = AcquisitionSchedule::load(&path).unwrap();
        assert_eq!(back.len(), 25);
        for i in 0..25 {
            assert!((back.flip_angles_rad[i] - sched.flip_angles_rad[i]).abs() < 1e-12);
        }
        assert!(AcquisitionSchedule::parse("flip 1 2\n").is_err());
        assert!(AcquisitionSchedule::parse("inversion_delay_ms 20\n1 2\n").is_err());
    }

    #[test]
    fn tissue_validation() {
        assert!(TissueParams::new(-1.0, 10.0).is_err());
        assert!(TissueParams::new(100.0, 0.0).is_err());
        assert!(TissueParams::new(50.0, 100.0).is_err());
        assert!(TissueParams::new(f64::NAN, 10.0).is_err());
    }
}
