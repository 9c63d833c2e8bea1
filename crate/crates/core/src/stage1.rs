//! Target search: angle and gain estimation from the echo of the chirp pilot,
//! plus the UE-side angle estimation and the uplink path identification.
//!
//! The BS sees the echo only through a reduced-dimension analog combiner
//! `W_RF` (`n_rf x n_tx`). MUSIC runs on the combined snapshots, APES then
//! estimates each reflection coefficient along the recovered angles.

use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array::{dl_received, radar_echo, steering_matrix, ul_received, ArrayConfig, NoiseConfig, Scene};
use crate::error::{check_dims, Error, Result};
use crate::linalg::{
    cis, complex_gaussian, diag, hermitian_condition, hermitian_eigen_desc, inverse, pinv_full_rank, solve_hpd,
    CMatrix, CVector,
};
use crate::pilot::lfm_pilot_unchecked;

/// Uniform angle grid in degrees, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleGrid {
    pub start_deg: f64,
    pub stop_deg: f64,
    pub step_deg: f64,
}

impl Default for AngleGrid {
    fn default() -> Self {
        Self { start_deg: -90.0, stop_deg: 90.0, step_deg: 0.1 }
    }
}

impl AngleGrid {
    pub fn new(start_deg: f64, stop_deg: f64, step_deg: f64) -> Self {
        Self { start_deg, stop_deg, step_deg }
    }

    pub fn points(&self) -> Vec<f64> {
        let n = ((self.stop_deg - self.start_deg) / self.step_deg + 1e-9).floor() as usize;
        (0..=n).map(|i| self.start_deg + i as f64 * self.step_deg).collect()
    }
}

/// How an analog combiner was built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CombinerMode {
    Random,
    Steered,
}

/// Phase-only receive combiner, `n_rf x n_tx`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalogCombiner {
    pub w_rf: CMatrix,
    pub mode: CombinerMode,
}

impl AnalogCombiner {
    pub fn n_rf(&self) -> usize {
        self.w_rf.nrows()
    }

    pub fn apply(&self, y: &CMatrix) -> Result<CMatrix> {
        check_dims("combiner input rows", (self.w_rf.ncols(), y.ncols()), y.shape())?;
        Ok(&self.w_rf * y)
    }
}

/// Combiner with i.i.d. uniform phases.
pub fn random_combiner<R: Rng + ?Sized>(n_rf: usize, n_tx: usize, rng: &mut R) -> Result<AnalogCombiner> {
    if n_rf == 0 || n_rf > n_tx {
        return Err(Error::InvalidConfig(format!("need 1 <= n_rf <= n_tx, got {n_rf} / {n_tx}")));
    }
    let w_rf = CMatrix::from_fn(n_rf, n_tx, |_, _| cis(rng.random::<f64>() * 2.0 * std::f64::consts::PI));
    Ok(AnalogCombiner { w_rf, mode: CombinerMode::Random })
}

/// Pseudo-spectrum sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MusicSpectrum {
    pub angles_deg: Vec<f64>,
    pub values: Vec<f64>,
}

impl MusicSpectrum {
    /// Writes `angle_deg,p_music` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["angle_deg", "p_music"]).map_err(io)?;
        for (a, v) in self.angles_deg.iter().zip(&self.values) {
            w.write_record([fmt_f64(*a), fmt_f64(*v)]).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Estimated angles (ascending) and the spectrum they were picked from.
#[derive(Debug, Clone, PartialEq)]
pub struct MusicEstimate {
    pub angles_deg: Vec<f64>,
    pub spectrum: MusicSpectrum,
}

/// Trailing eigenvectors of the sample covariance `(1/T) Y Y^H`.
pub fn noise_subspace(y: &CMatrix, sources: usize) -> Result<CMatrix> {
    let m = y.nrows();
    if sources >= m {
        return Err(Error::NoNoiseSubspace { sources, dimension: m });
    }
    let r = (y * y.adjoint()).unscale(y.ncols().max(1) as f64);
    let (_, vecs) = hermitian_eigen_desc(&r);
    Ok(vecs.columns(sources, m - sources).into_owned())
}

/// `1 / ||U_n^H g||^2` for every column `g` of `steering`.
pub fn music_values(noise: &CMatrix, steering: &CMatrix) -> Vec<f64> {
    let proj = noise.adjoint() * steering;
    proj.column_iter()
        .map(|c| 1.0 / c.norm_squared().max(f64::MIN_POSITIVE))
        .collect()
}

/// Indices of strict interior local maxima. Grid endpoints never count: at
/// +-90 deg the steering vector is stationary and an endpoint "peak" is an
/// edge artifact rather than a source.
pub fn local_maxima(values: &[f64]) -> Vec<usize> {
    (1..values.len().saturating_sub(1))
        .filter(|&i| values[i] > values[i - 1] && values[i] > values[i + 1])
        .collect()
}

/// Takes the `k` largest peaks, dropping any within `min_sep_deg` of a larger one.
pub fn pick_peaks(spectrum: &MusicSpectrum, k: usize, min_sep_deg: f64) -> Result<Vec<f64>> {
    let mut peaks = local_maxima(&spectrum.values);
    peaks.sort_by(|&a, &b| spectrum.values[b].total_cmp(&spectrum.values[a]).then(a.cmp(&b)));
    let mut chosen: Vec<f64> = Vec::with_capacity(k);
    for i in peaks {
        let th = spectrum.angles_deg[i];
        if chosen.iter().all(|c| (c - th).abs() >= min_sep_deg) {
            chosen.push(th);
            if chosen.len() == k {
                break;
            }
        }
    }
    if chosen.len() < k {
        return Err(Error::InsufficientPeaks { found: chosen.len(), wanted: k });
    }
    chosen.sort_by(f64::total_cmp);
    Ok(chosen)
}

const PEAK_MERGE_DEG: f64 = 0.5;

fn music_search(y: &CMatrix, steering: &CMatrix, grid_pts: Vec<f64>, k: usize) -> Result<MusicEstimate> {
    let noise = noise_subspace(y, k)?;
    let spectrum = MusicSpectrum { values: music_values(&noise, steering), angles_deg: grid_pts };
    let angles_deg = pick_peaks(&spectrum, k, PEAK_MERGE_DEG)?;
    Ok(MusicEstimate { angles_deg, spectrum })
}

/// MUSIC on combined BS snapshots with steering `W_RF a(theta)`.
pub fn music_aoa(
    y_combined: &CMatrix,
    combiner: &AnalogCombiner,
    k: usize,
    grid: &AngleGrid,
    spacing: f64,
) -> Result<MusicEstimate> {
    check_dims("combined snapshots", (combiner.n_rf(), y_combined.ncols()), y_combined.shape())?;
    let pts = grid.points();
    let steering = &combiner.w_rf * steering_matrix(&pts, combiner.w_rf.ncols(), spacing);
    music_search(y_combined, &steering, pts, k)
}

/// MUSIC on the full UE array.
pub fn ue_music(y_dl: &CMatrix, l: usize, grid: &AngleGrid, spacing: f64) -> Result<MusicEstimate> {
    let pts = grid.points();
    let steering = steering_matrix(&pts, y_dl.nrows(), spacing);
    music_search(y_dl, &steering, pts, l)
}

/// Reflection coefficient estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApesEstimate {
    pub gain: Complex64,
    /// Diagonal loading was applied because the covariance was ill-conditioned.
    pub regularized: bool,
}

const APES_COND_LIMIT: f64 = 1e12;

/// APES estimate of the reflection coefficient at `theta_deg`.
///
/// With `x = S^T a(theta)` the transmitted signal seen along `theta`,
/// `g = Y x^*`, `Q = R - g g^H / (T ||x||^2)` and
/// `alpha = w^H g / ||x||^2` where `w` is the Capon filter built from `Q`.
/// `||x||^2` equals `T P` for an orthogonal pilot, and the exact value keeps
/// the estimate unbiased when it is not.
pub fn apes_gain(
    y_combined: &CMatrix,
    s: &CMatrix,
    combiner: &AnalogCombiner,
    theta_deg: f64,
    spacing: f64,
) -> Result<ApesEstimate> {
    let n_rf = combiner.n_rf();
    let t = y_combined.ncols();
    check_dims("APES snapshots", (n_rf, s.ncols()), y_combined.shape())?;
    check_dims("APES waveform", (combiner.w_rf.ncols(), t), s.shape())?;
    // with fewer than N_RF snapshots Q is singular and gets regularized below
    if t == 0 {
        return Err(Error::InsufficientSnapshots { needed: 1, available: 0 });
    }
    let a = crate::array::steering_vector(theta_deg, combiner.w_rf.ncols(), spacing);
    let x: CVector = s.transpose() * &a;
    let xx = x.norm_squared();
    if xx <= 0.0 {
        return Err(Error::RankDeficient("pilot along theta"));
    }
    let g: CVector = y_combined * x.conjugate();
    let r = (y_combined * y_combined.adjoint()).unscale(t as f64);
    let mut q = r - (&g * g.adjoint()).unscale(t as f64 * xx);
    let mut regularized = false;
    if hermitian_condition(&q) > APES_COND_LIMIT {
        let eps = 1e-10 * q.trace().re / n_rf as f64;
        for i in 0..n_rf {
            q[(i, i)] += eps;
        }
        regularized = true;
    }
    let a_comb: CVector = &combiner.w_rf * &a;
    let qa = solve_hpd(&q, &CMatrix::from_column_slice(n_rf, 1, a_comb.as_slice()), "APES covariance")?;
    let denom = (a_comb.adjoint() * &qa)[(0, 0)];
    let num = (qa.adjoint() * &g)[(0, 0)];
    Ok(ApesEstimate { gain: num / (denom.conj() * xx), regularized })
}

/// Zero-forcing precoder `B^*(B^T B^*)^{-1}` for the estimated UE angles.
pub fn ue_zf_precoder(phi_deg: &[f64], n_rx: usize, spacing: f64) -> Result<CMatrix> {
    let b = steering_matrix(phi_deg, n_rx, spacing);
    let gram = b.transpose() * b.conjugate();
    match inverse(&gram, "B^T B^*") {
        Ok(inv) => Ok(b.conjugate() * inv),
        Err(_) => {
            let (i, j) = most_coherent_pair(&b);
            Err(Error::CollidingAngles(phi_deg[i], phi_deg[j]))
        }
    }
}

fn most_coherent_pair(b: &CMatrix) -> (usize, usize) {
    let mut best = (0, 1.min(b.ncols() - 1), -1.0);
    for i in 0..b.ncols() {
        for j in i + 1..b.ncols() {
            let c = b.column(i).dotc(&b.column(j)).norm();
            if c > best.2 {
                best = (i, j, c);
            }
        }
    }
    (best.0, best.1)
}

/// Selection of the communication paths among the estimated targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PathIdentification {
    /// Indices into the target list, one per UL stream (column order).
    pub indices: Vec<usize>,
    /// Received energy on every steered row.
    pub energies: Vec<f64>,
}

/// Steers a beam to every estimated target and keeps the `l` rows with the
/// most UL energy. Each UL stream is then paired with the selected angle
/// whose beam collects most of that stream (exhaustive search over pairings).
pub fn identify_paths(y_up: &CMatrix, theta_deg: &[f64], l: usize, spacing: f64) -> Result<PathIdentification> {
    if l > theta_deg.len() || l != y_up.ncols() {
        return Err(Error::InvalidConfig(format!(
            "{l} paths from {} targets and {} UL columns",
            theta_deg.len(),
            y_up.ncols()
        )));
    }
    let g = steering_matrix(theta_deg, y_up.nrows(), spacing).adjoint() * y_up;
    let energies: Vec<f64> = g.row_iter().map(|r| r.norm_squared()).collect();
    let mut order: Vec<usize> = (0..theta_deg.len()).collect();
    order.sort_by(|&a, &b| energies[b].total_cmp(&energies[a]).then(a.cmp(&b)));
    let mut selected = order[..l].to_vec();
    selected.sort_unstable();
    let score = |perm: &[usize]| -> f64 { perm.iter().enumerate().map(|(c, &r)| g[(r, c)].norm_sqr()).sum() };
    let mut best = selected.clone();
    let mut best_score = score(&best);
    for_each_permutation(&mut selected.clone(), 0, &mut |p| {
        let s = score(p);
        if s > best_score {
            best_score = s;
            best = p.to_vec();
        }
    });
    Ok(PathIdentification { indices: best, energies })
}

fn for_each_permutation(items: &mut [usize], start: usize, f: &mut impl FnMut(&[usize])) {
    if start == items.len() {
        f(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        for_each_permutation(items, start + 1, f);
        items.swap(start, i);
    }
}

/// Least-squares path gains.
#[derive(Debug, Clone, PartialEq)]
pub struct LsGains {
    pub gains: Vec<Complex64>,
    pub residual_norm: f64,
}

/// Fits `Y ~ A(theta_1) diag(beta)`; `theta_1` is listed in column order.
pub fn ls_comm_gains(y_up: &CMatrix, theta1_deg: &[f64], spacing: f64) -> Result<LsGains> {
    let a = steering_matrix(theta1_deg, y_up.nrows(), spacing);
    check_dims("UL pilot columns", (y_up.nrows(), theta1_deg.len()), y_up.shape())?;
    let coef = pinv_full_rank(&a, "A(theta_1)")? * y_up;
    let gains: Vec<Complex64> = (0..theta1_deg.len()).map(|i| coef[(i, i)]).collect();
    let residual_norm = (y_up - &a * diag(&gains)).norm();
    Ok(LsGains { gains, residual_norm })
}

/// Stage parameters. Noise variances are per link.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Config {
    pub t_slots: usize,
    pub power: f64,
    pub noise: NoiseConfig,
    pub grid: AngleGrid,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self { t_slots: 100, power: 1.0, noise: NoiseConfig::from_snr_db(10.0, 1.0), grid: AngleGrid::default() }
    }
}

/// Everything the target search stage learns about the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Report {
    /// Estimated target angles, ascending.
    pub bs_angles_deg: Vec<f64>,
    pub bs_gains: Vec<Complex64>,
    pub ue_angles_deg: Vec<f64>,
    /// For every UE stream, the index into `bs_angles_deg` of its path.
    pub comm_path_indices: Vec<usize>,
    pub comm_gains: Vec<Complex64>,
    pub spectrum: MusicSpectrum,
    pub apes_regularized: bool,
    pub ls_residual_norm: f64,
}

impl Stage1Report {
    /// BS-side angles of the comm paths in UE stream order.
    pub fn comm_aods_deg(&self) -> Vec<f64> {
        self.comm_path_indices.iter().map(|&i| self.bs_angles_deg[i]).collect()
    }

    /// Estimated scene, with the comm paths moved to the front.
    pub fn estimated_scene(&self) -> Scene {
        let mut order = self.comm_path_indices.clone();
        order.extend((0..self.bs_angles_deg.len()).filter(|i| !self.comm_path_indices.contains(i)));
        Scene {
            target_angles_deg: order.iter().map(|&i| self.bs_angles_deg[i]).collect(),
            target_gains: order.iter().map(|&i| self.bs_gains[i]).collect(),
            comm_path_count: self.comm_path_indices.len(),
            ue_aoas_deg: self.ue_angles_deg.clone(),
            comm_gains: self.comm_gains.clone(),
        }
    }

    /// `A diag(alpha) A^T` from the estimates.
    pub fn radar_channel(&self, arrays: &ArrayConfig) -> CMatrix {
        let a = arrays.tx_matrix(&self.bs_angles_deg);
        &a * diag(&self.bs_gains) * a.transpose()
    }

    /// `B(Phi) diag(beta) A^T(Theta_1)` from the estimates.
    pub fn comm_channel(&self, arrays: &ArrayConfig) -> CMatrix {
        let b = arrays.rx_matrix(&self.ue_angles_deg);
        let a1 = arrays.tx_matrix(&self.comm_aods_deg());
        b * diag(&self.comm_gains) * a1.transpose()
    }
}

/// Runs the whole target search stage against a known scene.
///
/// The BS radiates the chirp pilot and estimates angles and reflection
/// coefficients from its echo. The UE estimates its arrival angles from the
/// same transmission, then returns a zero-forced UL pilot that the BS uses to
/// pick out the comm paths and their gains.
pub fn run_stage1<R: Rng + ?Sized>(
    scene: &Scene,
    arrays: &ArrayConfig,
    cfg: &Stage1Config,
    rng: &mut R,
) -> Result<Stage1Report> {
    let k = scene.k();
    let l = scene.l();
    arrays.validate(k, l)?;
    let s = lfm_pilot_unchecked(arrays.n_tx, cfg.t_slots, cfg.power);

    let y_echo = radar_echo(scene, arrays, &s, cfg.noise.sigma2_radar, rng)?;
    let combiner = random_combiner(arrays.n_rf, arrays.n_tx, rng)?;
    let y_c = combiner.apply(&y_echo)?;
    let est = music_aoa(&y_c, &combiner, k, &cfg.grid, arrays.spacing)?;
    let mut bs_gains = Vec::with_capacity(k);
    let mut apes_regularized = false;
    for &th in &est.angles_deg {
        let g = apes_gain(&y_c, &s, &combiner, th, arrays.spacing)?;
        apes_regularized |= g.regularized;
        bs_gains.push(g.gain);
    }

    let y_dl = dl_received(scene, arrays, &s, cfg.noise.sigma2_dl, rng)?;
    let ue = ue_music(&y_dl, l, &cfg.grid, arrays.spacing)?;
    let f_ue = ue_zf_precoder(&ue.angles_deg, arrays.n_rx, arrays.spacing)?;
    // UL pilot is the identity, scaled to total power P over L slots
    let x_up = f_ue.scale((cfg.power * l as f64).sqrt() / f_ue.norm());
    let y_up = ul_received(scene, arrays, &x_up, cfg.noise.sigma2_ul, rng)?;
    // undo the power scaling so the columns carry beta directly
    let y_up = y_up.scale(f_ue.norm() / (cfg.power * l as f64).sqrt());
    let paths = identify_paths(&y_up, &est.angles_deg, l, arrays.spacing)?;
    let theta1: Vec<f64> = paths.indices.iter().map(|&i| est.angles_deg[i]).collect();
    let ls = ls_comm_gains(&y_up, &theta1, arrays.spacing)?;

    Ok(Stage1Report {
        bs_angles_deg: est.angles_deg,
        bs_gains,
        ue_angles_deg: ue.angles_deg,
        comm_path_indices: paths.indices,
        comm_gains: ls.gains,
        spectrum: est.spectrum,
        apes_regularized,
        ls_residual_norm: ls.residual_norm,
    })
}

/// Noise-free combined echo, exposed for oracle tests.
pub fn combined_echo(scene: &Scene, arrays: &ArrayConfig, s: &CMatrix, combiner: &AnalogCombiner) -> Result<CMatrix> {
    combiner.apply(&crate::array::echo_signal(scene, arrays, s)?)
}

/// Combined echo with receiver noise added before the combiner.
pub fn noisy_combined_echo<R: Rng + ?Sized>(
    scene: &Scene,
    arrays: &ArrayConfig,
    s: &CMatrix,
    combiner: &AnalogCombiner,
    sigma2: f64,
    rng: &mut R,
) -> Result<CMatrix> {
    let y = crate::array::echo_signal(scene, arrays, s)? + complex_gaussian(arrays.n_tx, s.ncols(), sigma2, rng);
    combiner.apply(&y)
}
