//! Target tracking and UL reception over a frame where the radar echo and
//! the UL block partly overlap.
//!
//! Frame layout in slots, `T_0 = T + T_c - dT` columns:
//!
//! ```text
//! | echo only: T - dT | echo + UL: dT | UL only: T_c - dT |
//! ```
//!
//! The BS steers half of its RF chains to the previous target angles,
//! re-runs MUSIC inside `+-delta_max` of each, re-estimates the reflection
//! coefficients on the clean echo window and cancels the reconstructed echo
//! from the overlapped window before zero-forcing the UL streams.

use std::io::Write;
use std::ops::Range;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array::{echo_signal, steering_matrix, steering_vector, ul_channel, ArrayConfig, NoiseConfig, Scene};
use crate::error::{check_dims, Error, Result};
use crate::linalg::{cis, complex_gaussian, complex_gaussian_vec, diag, hpd_logdet, null_space, pinv_full_rank, CMatrix};
use crate::stage1::{apes_gain, fmt_f64, local_maxima, music_values, noise_subspace, ue_zf_precoder, AnalogCombiner, CombinerMode};
use crate::stage2::{design_hybrid, HybridVariant};

/// Slot budget of one pulse repetition interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramePlan {
    pub t_radar: usize,
    pub t_ul: usize,
    pub overlap: usize,
    /// Guard period; bookkeeping only.
    pub guard: usize,
}

impl Default for FramePlan {
    fn default() -> Self {
        Self { t_radar: 140, t_ul: 140, overlap: 42, guard: 10 }
    }
}

impl FramePlan {
    /// Overlap given as a fraction of `T_c`, rounded to the nearest slot.
    pub fn with_ratio(t_radar: usize, t_ul: usize, ratio: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::InvalidConfig(format!("overlap ratio {ratio} outside [0, 1]")));
        }
        let plan = Self { t_radar, t_ul, overlap: (ratio * t_ul as f64).round() as usize, guard: 10 };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_radar == 0 || self.t_ul == 0 || self.overlap > self.t_radar.min(self.t_ul) {
            return Err(Error::InvalidConfig(format!(
                "frame needs 0 <= overlap <= min(T, T_c), got T={} T_c={} overlap={}",
                self.t_radar, self.t_ul, self.overlap
            )));
        }
        Ok(())
    }

    pub fn total_len(&self) -> usize {
        self.t_radar + self.t_ul - self.overlap
    }

    pub fn echo_only(&self) -> Range<usize> {
        0..self.t_radar - self.overlap
    }

    pub fn mixed(&self) -> Range<usize> {
        self.t_radar - self.overlap..self.t_radar
    }

    pub fn ul_only(&self) -> Range<usize> {
        self.t_radar..self.total_len()
    }

    /// Columns occupied by the UL block.
    pub fn ul_block(&self) -> Range<usize> {
        self.t_radar - self.overlap..self.total_len()
    }
}

/// Angle changes between two PRIs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftModel {
    pub delta_max: f64,
    /// One delta per target; the first `L` also move the comm AoDs.
    pub per_target_drift: Vec<f64>,
    pub ue_drift: Vec<f64>,
}

impl DriftModel {
    /// Uniform drifts in `[-delta_max, delta_max]`.
    pub fn sample<R: Rng + ?Sized>(k: usize, l: usize, delta_max: f64, rng: &mut R) -> Self {
        let mut draw = |n: usize| (0..n).map(|_| delta_max * (2.0 * rng.random::<f64>() - 1.0)).collect();
        let per_target_drift = draw(k);
        let ue_drift = draw(l);
        Self { delta_max, per_target_drift, ue_drift }
    }

    pub fn none(k: usize, l: usize) -> Self {
        Self { delta_max: 0.0, per_target_drift: vec![0.0; k], ue_drift: vec![0.0; l] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_target_drift.iter().chain(&self.ue_drift).any(|d| d.abs() > self.delta_max) {
            return Err(Error::InvalidConfig(format!("drift exceeds delta_max = {}", self.delta_max)));
        }
        Ok(())
    }

    /// Moves the scene angles, clamped to [-90, 90] deg. Gains are untouched.
    pub fn apply(&self, scene: &Scene) -> Result<Scene> {
        self.validate()?;
        if self.per_target_drift.len() != scene.k() || self.ue_drift.len() != scene.l() {
            return Err(Error::InvalidConfig("drift length does not match the scene".into()));
        }
        let mv = |a: &[f64], d: &[f64]| a.iter().zip(d).map(|(x, y)| (x + y).clamp(-90.0, 90.0)).collect();
        Ok(Scene {
            target_angles_deg: mv(&scene.target_angles_deg, &self.per_target_drift),
            ue_aoas_deg: mv(&scene.ue_aoas_deg, &self.ue_drift),
            ..scene.clone()
        })
    }
}

/// Received frame plus its noise-free parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub y0: CMatrix,
    /// Echo alone over its `T` slots.
    pub echo_clean: CMatrix,
    /// UL signal alone over its `T_c` slots.
    pub ul_clean: CMatrix,
    pub plan: FramePlan,
}

/// Builds `[Y_echo,1 | Y_m | Y_UL,2]`.
///
/// Echo-only columns carry radar noise, the rest UL noise.
pub fn assemble_frame<R: Rng + ?Sized>(
    scene: &Scene,
    arrays: &ArrayConfig,
    x_radar: &CMatrix,
    x_ul: &CMatrix,
    plan: &FramePlan,
    noise: &NoiseConfig,
    rng: &mut R,
) -> Result<Frame> {
    plan.validate()?;
    check_dims("radar block", (arrays.n_tx, plan.t_radar), x_radar.shape())?;
    check_dims("UL block", (arrays.n_rx, plan.t_ul), x_ul.shape())?;
    let echo_clean = echo_signal(scene, arrays, x_radar)?;
    let ul_clean = ul_channel(scene, arrays) * x_ul;
    let mut y0 = complex_gaussian(arrays.n_tx, plan.total_len(), 1.0, rng);
    for c in 0..plan.total_len() {
        let s2 = if c < plan.echo_only().end { noise.sigma2_radar } else { noise.sigma2_ul };
        y0.column_mut(c).scale_mut(s2.sqrt());
    }
    let mut echo_part = y0.columns_mut(0, plan.t_radar);
    echo_part += &echo_clean;
    let mut ul_part = y0.columns_mut(plan.ul_block().start, plan.t_ul);
    ul_part += &ul_clean;
    Ok(Frame { y0, echo_clean, ul_clean, plan: *plan })
}

/// First `K` rows steered to `theta_prev`, the rest random phases.
pub fn tracking_combiner<R: Rng + ?Sized>(
    theta_prev_deg: &[f64],
    n_rf: usize,
    n_tx: usize,
    spacing: f64,
    rng: &mut R,
) -> Result<AnalogCombiner> {
    let k = theta_prev_deg.len();
    if k > n_rf || n_rf > n_tx {
        return Err(Error::InvalidConfig(format!("need K <= n_rf <= n_tx, got {k} / {n_rf} / {n_tx}")));
    }
    let mut w_rf = CMatrix::zeros(n_rf, n_tx);
    for (r, &th) in theta_prev_deg.iter().enumerate() {
        w_rf.set_row(r, &steering_vector(th, n_tx, spacing).adjoint());
    }
    for r in k..n_rf {
        for c in 0..n_tx {
            w_rf[(r, c)] = cis(rng.random::<f64>() * 2.0 * std::f64::consts::PI);
        }
    }
    Ok(AnalogCombiner { w_rf, mode: CombinerMode::Steered })
}

/// Updated angles with a flag per target when the search fell back.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    pub angles_deg: Vec<f64>,
    /// No usable interior peak inside the search interval.
    pub flagged: Vec<bool>,
}

fn interval_points(center: f64, delta_max: f64, step: f64) -> Vec<f64> {
    let n = (2.0 * delta_max / step + 1e-9).floor() as usize;
    (0..=n)
        .map(|i| center - delta_max + i as f64 * step)
        .filter(|a| (-90.0..=90.0).contains(a))
        .collect()
}

/// Interval-restricted MUSIC around each previous angle.
///
/// `steer(points)` maps grid angles to steering columns in the observation
/// domain. Targets claim peaks greedily, strongest first, so two close
/// targets whose intervals overlap do not collapse onto one peak. A target
/// left without an unclaimed interior peak keeps its previous angle; a target
/// whose interval has no interior peak at all takes the interval argmax.
/// Both cases are flagged.
pub fn interval_music(
    y: &CMatrix,
    steer: impl Fn(&[f64]) -> CMatrix,
    theta_prev_deg: &[f64],
    sources: usize,
    delta_max: f64,
    grid_step: f64,
) -> Result<TrackResult> {
    let noise = noise_subspace(y, sources)?;
    struct Cand {
        peaks: Vec<(f64, f64)>,
        argmax: f64,
    }
    let cands: Vec<Cand> = theta_prev_deg
        .iter()
        .map(|&prev| {
            let pts = interval_points(prev, delta_max, grid_step);
            let vals = music_values(&noise, &steer(&pts));
            let mut peaks: Vec<(f64, f64)> = local_maxima(&vals)
                .into_iter()
                .map(|i| (pts[i], vals[i]))
                .collect();
            peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
            let imax = (0..vals.len()).max_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
            Cand { peaks, argmax: pts.get(imax).copied().unwrap_or(prev) }
        })
        .collect();

    let mut order: Vec<usize> = (0..cands.len()).collect();
    let best = |i: usize| cands[i].peaks.first().map_or(f64::NEG_INFINITY, |p| p.1);
    order.sort_by(|&a, &b| best(b).total_cmp(&best(a)).then(a.cmp(&b)));
    let mut angles = theta_prev_deg.to_vec();
    let mut flagged = vec![false; cands.len()];
    let mut claimed: Vec<f64> = Vec::new();
    for i in order {
        if cands[i].peaks.is_empty() {
            angles[i] = cands[i].argmax;
            flagged[i] = true;
            continue;
        }
        let free = cands[i].peaks.iter().find(|p| claimed.iter().all(|c| (c - p.0).abs() > 0.5 * grid_step));
        match free {
            Some(p) => {
                angles[i] = p.0;
                claimed.push(p.0);
            }
            None => flagged[i] = true,
        }
    }
    Ok(TrackResult { angles_deg: angles, flagged })
}

/// BS tracking on the combined frame.
pub fn track_angles(
    y0_combined: &CMatrix,
    combiner: &AnalogCombiner,
    theta_prev_deg: &[f64],
    delta_max: f64,
    grid_step: f64,
    spacing: f64,
) -> Result<TrackResult> {
    let n_tx = combiner.w_rf.ncols();
    interval_music(
        y0_combined,
        |pts| &combiner.w_rf * steering_matrix(pts, n_tx, spacing),
        theta_prev_deg,
        theta_prev_deg.len(),
        delta_max,
        grid_step,
    )
}

/// UE tracking of its arrival angles on the full array.
pub fn track_ue_angles(
    y_dl: &CMatrix,
    phi_prev_deg: &[f64],
    delta_max: f64,
    grid_step: f64,
    spacing: f64,
) -> Result<TrackResult> {
    let n = y_dl.nrows();
    interval_music(y_dl, |pts| steering_matrix(pts, n, spacing), phi_prev_deg, phi_prev_deg.len(), delta_max, grid_step)
}

/// Known UL prefix orthogonal to the radar waveform it overlaps.
///
/// Returns `L x len` rows that annihilate the radar columns sharing their
/// slots, each with squared norm `len`.
pub fn sync_prefix(x_radar: &CMatrix, plan: &FramePlan, l: usize, len: usize) -> Result<CMatrix> {
    if len > plan.t_ul {
        return Err(Error::InvalidConfig(format!("sync length {len} exceeds T_c = {}", plan.t_ul)));
    }
    let start = plan.ul_block().start;
    let mut win = CMatrix::zeros(x_radar.nrows(), len);
    for j in 0..len.min(plan.overlap) {
        win.set_column(j, &x_radar.column(start + j));
    }
    let ns = null_space(&win, 1e-10);
    if ns.ncols() < l {
        return Err(Error::InvalidConfig(format!(
            "sync length {len} leaves a {}-dimensional null space, need {l}",
            ns.ncols()
        )));
    }
    Ok(ns.columns(0, l).adjoint().scale((len as f64).sqrt()))
}

/// Result of echo cancellation and UL equalization.
#[derive(Debug, Clone, PartialEq)]
pub struct SicOutcome {
    /// `W_BB W_RF Y_UL`, one row per stream (`L x T_c`).
    pub equalized: CMatrix,
    pub refl_gains: Vec<Complex64>,
    /// Effective UL path gains, including the UE precoder scaling.
    pub comm_gains: Vec<Complex64>,
    pub w_bb: CMatrix,
    /// Reconstructed echo over the overlap window (`N_t x dT`), zero when
    /// nothing was cancelled.
    pub echo_reconstruction: CMatrix,
    pub cancelled: bool,
    pub apes_regularized: bool,
}

/// Gains supplied to [`sic_decode`] instead of being estimated.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownGains {
    pub refl: Vec<Complex64>,
    pub comm: Vec<Complex64>,
}

/// Cancels the echo from the overlapped window and equalizes the UL block.
///
/// `tracked_deg` lists all targets with the `l` comm paths first, in UL
/// stream order. `sync` is the known prefix of every stream. With
/// `cancel = false` the same receiver runs without subtraction. `known`
/// bypasses the APES and sync-based gain estimates.
#[allow(clippy::too_many_arguments)]
pub fn sic_decode(
    y0_combined: &CMatrix,
    x_radar: &CMatrix,
    combiner: &AnalogCombiner,
    tracked_deg: &[f64],
    l: usize,
    sync: &CMatrix,
    plan: &FramePlan,
    spacing: f64,
    cancel: bool,
    known: Option<&KnownGains>,
) -> Result<SicOutcome> {
    let n_rf = combiner.n_rf();
    let n_tx = combiner.w_rf.ncols();
    check_dims("combined frame", (n_rf, plan.total_len()), y0_combined.shape())?;
    let clean = plan.echo_only();
    let mixed = plan.mixed();

    let mut refl_gains = Vec::new();
    let mut apes_regularized = false;
    let mut echo_reconstruction = CMatrix::zeros(n_tx, plan.overlap);
    let mut cancelled = false;
    if cancel && plan.overlap > 0 {
        let y1 = y0_combined.columns(clean.start, clean.len()).into_owned();
        let x1 = x_radar.columns(clean.start, clean.len()).into_owned();
        let gains: Result<Vec<_>> = match known {
            Some(k) => Ok(k.refl.iter().map(|&gain| crate::stage1::ApesEstimate { gain, regularized: false }).collect()),
            None => tracked_deg.iter().map(|&th| apes_gain(&y1, &x1, combiner, th, spacing)).collect(),
        };
        // no clean snapshots at all: leave the overlap untouched
        if let Ok(gains) = gains {
            apes_regularized = gains.iter().any(|g| g.regularized);
            refl_gains = gains.iter().map(|g| g.gain).collect();
            let a = steering_matrix(tracked_deg, n_tx, spacing);
            let x2 = x_radar.columns(mixed.start, mixed.len());
            echo_reconstruction = &a * (diag(&refl_gains) * (a.transpose() * x2));
            cancelled = true;
        }
    }

    let mut y_ul = y0_combined.columns(plan.ul_block().start, plan.t_ul).into_owned();
    if cancelled {
        let sub = &combiner.w_rf * &echo_reconstruction;
        let mut head = y_ul.columns_mut(0, plan.overlap);
        head -= sub;
    }

    let len = sync.ncols();
    check_dims("sync prefix", (l, len), sync.shape())?;
    let ys = y0_combined.columns(plan.ul_block().start, len);
    let proj = ys * sync.adjoint() * crate::linalg::inverse(&(sync * sync.adjoint()), "sync gram")?;
    let m = &combiner.w_rf * steering_matrix(&tracked_deg[..l], n_tx, spacing);
    let coef = pinv_full_rank(&m, "W_RF A(theta_1)")? * proj;
    let comm_gains: Vec<Complex64> = match known {
        Some(k) => k.comm.clone(),
        None => (0..l).map(|i| coef[(i, i)]).collect(),
    };
    let w_bb = pinv_full_rank(&(m * diag(&comm_gains)), "W_RF A(theta_1) diag(beta)")?;
    let equalized = &w_bb * y_ul;
    Ok(SicOutcome { equalized, refl_gains, comm_gains, w_bb, echo_reconstruction, cancelled, apes_regularized })
}

/// UL spectral efficiencies over the overlapped and the clean windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UlSe {
    /// `None` without overlap.
    pub r1: Option<f64>,
    pub r2: f64,
    pub r_ul: f64,
}

fn ul_rate(g: &CMatrix, r_in: &CMatrix, rho: f64) -> Result<f64> {
    let l = g.nrows();
    let sig = (g * g.adjoint()).scale(rho / l as f64);
    Ok((hpd_logdet(&(r_in + sig), "R_in + signal")? - hpd_logdet(r_in, "R_in")?) / std::f64::consts::LN_2)
}

/// `R_UL = (dT/T_c) R_1 + (1 - dT/T_c) R_2`.
///
/// `h_ul` is the BS-side UL channel (`N_t x N_r`). `R_1` treats the residual
/// echo `y_res` (`N_t x dT`) as interference through its sample covariance,
/// `R_2` sees noise only.
#[allow(clippy::too_many_arguments)]
pub fn ul_se(
    h_ul: &CMatrix,
    f_ue: &CMatrix,
    w_rf: &CMatrix,
    w_bb: &CMatrix,
    y_res: &CMatrix,
    plan: &FramePlan,
    rho: f64,
    sigma2: f64,
) -> Result<UlSe> {
    check_dims("residual echo", (h_ul.nrows(), plan.overlap), y_res.shape())?;
    let w = w_bb * w_rf;
    let g = &w * h_ul * f_ue;
    let noise = (&w * w.adjoint()).scale(sigma2);
    let r2 = ul_rate(&g, &noise, rho)?;
    let r1 = if plan.overlap > 0 {
        let wy = &w * y_res;
        let r_in = (&wy * wy.adjoint()).unscale(plan.overlap as f64) + &noise;
        Some(ul_rate(&g, &r_in, rho)?)
    } else {
        None
    };
    let frac = plan.overlap as f64 / plan.t_ul as f64;
    let r_ul = frac * r1.unwrap_or(0.0) + (1.0 - frac) * r2;
    Ok(UlSe { r1, r2, r_ul })
}

/// Summary of one tracking PRI.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage3Report {
    pub tracked_angles: Vec<f64>,
    pub refl_gains: Vec<Complex64>,
    pub comm_gains: Vec<Complex64>,
    pub ul_se: f64,
    pub r1: Option<f64>,
    pub r2: f64,
    pub residual_norm: f64,
    pub tracking_flags: Vec<bool>,
    pub cancelled: bool,
    pub apes_regularized: bool,
}

/// Knobs for [`simulate_pri`].
#[derive(Debug, Clone, PartialEq)]
pub struct PriConfig {
    pub plan: FramePlan,
    pub noise: NoiseConfig,
    pub power: f64,
    pub delta_max: f64,
    pub grid_step: f64,
    pub sync_len: usize,
    pub variant: HybridVariant,
}

impl Default for PriConfig {
    fn default() -> Self {
        Self {
            plan: FramePlan::default(),
            noise: NoiseConfig::from_snr_db(10.0, 1.0),
            power: 1.0,
            delta_max: 1.0,
            grid_step: 0.01,
            sync_len: 16,
            variant: HybridVariant::HbfOpt,
        }
    }
}

/// One PRI with and without cancellation on the same received frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PriOutcome {
    /// Scene after drift and gain refresh.
    pub truth: Scene,
    pub sic: Stage3Report,
    pub no_sic: Stage3Report,
    pub ue_tracked: TrackResult,
}

/// Simulates one tracking PRI.
///
/// `prev` holds the parameters the BS and UE learned in the previous PRI;
/// they are taken as the truth there. Angles drift by `drift`, all gains are
/// redrawn, the BS transmits its hybrid beamformer output and the UE answers
/// with a zero-forced UL block starting with the sync prefix.
pub fn simulate_pri<R: Rng + ?Sized>(
    prev: &Scene,
    arrays: &ArrayConfig,
    drift: &DriftModel,
    cfg: &PriConfig,
    rng: &mut R,
) -> Result<PriOutcome> {
    simulate_pri_from_belief(prev, prev, arrays, drift, cfg, rng)
}

/// Like [`simulate_pri`], but the BS and UE act on `belief` (for example a
/// target search result, comm paths first) while the drift is applied to
/// `prev_truth`. Both scenes must list the targets in the same order.
pub fn simulate_pri_from_belief<R: Rng + ?Sized>(
    prev_truth: &Scene,
    belief: &Scene,
    arrays: &ArrayConfig,
    drift: &DriftModel,
    cfg: &PriConfig,
    rng: &mut R,
) -> Result<PriOutcome> {
    let prev = belief;
    let k = prev.k();
    let l = prev.l();
    check_dims("belief vs truth scene (K, L)", (k, l), (prev_truth.k(), prev_truth.l()))?;
    arrays.validate(k, l)?;
    let plan = cfg.plan;
    plan.validate()?;

    let mut truth = drift.apply(prev_truth)?;
    truth.target_gains = complex_gaussian_vec(k, 1.0, rng);
    truth.comm_gains = complex_gaussian_vec(l, 1.0, rng);

    let (bf, _) = design_hybrid(
        &prev.target_angles_deg,
        &prev.comm_gains,
        arrays.n_tx,
        arrays.spacing,
        cfg.variant,
        cfg.power,
    )?;
    let symbols = complex_gaussian(k, plan.t_radar, 1.0, rng);
    let x_radar = bf.precoder() * symbols;

    let f_ue_raw = ue_zf_precoder(&prev.ue_aoas_deg, arrays.n_rx, arrays.spacing)?;
    let f_ue = f_ue_raw.scale(cfg.power.sqrt() / f_ue_raw.norm());
    let sync = sync_prefix(&x_radar, &plan, l, cfg.sync_len)?;
    let mut data = complex_gaussian(l, plan.t_ul, 1.0, rng);
    data.columns_mut(0, cfg.sync_len).copy_from(&sync);
    let x_ul = &f_ue * &data;

    let frame = assemble_frame(&truth, arrays, &x_radar, &x_ul, &plan, &cfg.noise, rng)?;
    let combiner = tracking_combiner(&prev.target_angles_deg, arrays.n_rf, arrays.n_tx, arrays.spacing, rng)?;
    let y0c = combiner.apply(&frame.y0)?;
    let tracked = track_angles(&y0c, &combiner, &prev.target_angles_deg, cfg.delta_max, cfg.grid_step, arrays.spacing)?;

    let y_dl = crate::array::dl_received(&truth, arrays, &x_radar, cfg.noise.sigma2_dl, rng)?;
    let ue_tracked = track_ue_angles(&y_dl, &prev.ue_aoas_deg, cfg.delta_max, cfg.grid_step, arrays.spacing)?;

    let h_ul = ul_channel(&truth, arrays);
    let true_overlap = frame.echo_clean.columns(plan.mixed().start, plan.overlap).into_owned();
    let run = |cancel: bool| -> Result<Stage3Report> {
        let out = sic_decode(&y0c, &x_radar, &combiner, &tracked.angles_deg, l, &sync, &plan, arrays.spacing, cancel, None)?;
        let y_res = &true_overlap - &out.echo_reconstruction;
        let se = ul_se(&h_ul, &f_ue, &combiner.w_rf, &out.w_bb, &y_res, &plan, cfg.power, cfg.noise.sigma2_ul)?;
        Ok(Stage3Report {
            tracked_angles: tracked.angles_deg.clone(),
            refl_gains: out.refl_gains,
            comm_gains: out.comm_gains,
            ul_se: se.r_ul,
            r1: se.r1,
            r2: se.r2,
            residual_norm: y_res.norm(),
            tracking_flags: tracked.flagged.clone(),
            cancelled: out.cancelled,
            apes_regularized: out.apes_regularized,
        })
    };
    Ok(PriOutcome { sic: run(true)?, no_sic: run(false)?, truth, ue_tracked })
}

/// Writes the per-PRI report rows
/// `pri_index,target_index,true_angle,tracked_angle,err_deg,r1,r2,r_ul,residual_norm`.
pub fn write_pri_csv<W: Write>(out: W, rows: &[(usize, &[f64], &Stage3Report)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record([
        "pri_index", "target_index", "true_angle", "tracked_angle", "err_deg", "r1", "r2", "r_ul", "residual_norm",
    ])
    .map_err(io)?;
    for (pri, truth, rep) in rows {
        for (i, (t, e)) in truth.iter().zip(&rep.tracked_angles).enumerate() {
            w.write_record([
                pri.to_string(),
                i.to_string(),
                fmt_f64(*t),
                fmt_f64(*e),
                fmt_f64(e - t),
                rep.r1.map_or_else(|| "nan".to_string(), fmt_f64),
                fmt_f64(rep.r2),
                fmt_f64(rep.ul_se),
                fmt_f64(rep.residual_norm),
            ])
            .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::generate_scene;
    use crate::linalg::max_abs_diff;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arrays() -> ArrayConfig {
        ArrayConfig::default()
    }

    #[test]
    fn plan_windows_partition_the_frame() {
        let p = FramePlan { t_radar: 140, t_ul: 140, overlap: 0, guard: 10 };
        assert_eq!(p.total_len(), 280);
        assert!(p.mixed().is_empty());
        let p = FramePlan { t_radar: 140, t_ul: 140, overlap: 140, guard: 10 };
        assert_eq!(p.total_len(), 140);
        assert!(p.echo_only().is_empty() && p.ul_only().is_empty());
        assert!(FramePlan { t_radar: 10, t_ul: 20, overlap: 11, guard: 0 }.validate().is_err());
        assert_eq!(FramePlan::with_ratio(140, 140, 0.3).unwrap().overlap, 42);
    }

    #[test]
    fn combiner_rows_are_steered_then_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let th = [-40.0, -10.0, 5.0, 33.0, 51.0, 60.0, 70.0, 80.0];
        let c = tracking_combiner(&th, 16, 64, 0.5, &mut rng).unwrap();
        assert!(c.w_rf.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        for (r, &t) in th.iter().enumerate() {
            let want = steering_vector(t, 64, 0.5).adjoint();
            assert!((c.w_rf.row(r) - want).norm() < 1e-12);
        }
        let again = tracking_combiner(&th, 16, 64, 0.5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(c, again);
        assert!(tracking_combiner(&th, 4, 64, 0.5, &mut rng).is_err());
    }

    #[test]
    fn frame_oracle_noiseless() {
        let a = arrays();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = generate_scene(8, 4, 180, &mut rng).unwrap();
        let plan = FramePlan { t_radar: 30, t_ul: 25, overlap: 10, guard: 10 };
        let xr = complex_gaussian(64, 30, 1.0, &mut rng);
        let xu = complex_gaussian(10, 25, 1.0, &mut rng);
        let f = assemble_frame(&s, &a, &xr, &xu, &plan, &NoiseConfig::noiseless(), &mut rng).unwrap();
        assert_eq!(f.y0.ncols(), 45);
        let want_m = echo_signal(&s, &a, &xr).unwrap().columns(20, 10) + ul_channel(&s, &a) * xu.columns(0, 10);
        assert!(max_abs_diff(&f.y0.columns(20, 10).into_owned(), &want_m) < 1e-12);
    }

    #[test]
    fn sync_prefix_is_orthogonal_to_radar() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let plan = FramePlan { t_radar: 140, t_ul: 140, overlap: 140, guard: 10 };
        // rank-8 radar block, like K = 8 precoded streams
        let xr = complex_gaussian(64, 8, 1.0, &mut rng) * complex_gaussian(8, 140, 1.0, &mut rng);
        let sync = sync_prefix(&xr, &plan, 4, 16).unwrap();
        assert_eq!(sync.shape(), (4, 16));
        assert!((xr.columns(0, 16) * sync.adjoint()).norm() < 1e-9);
        assert!(max_abs_diff(&(&sync * sync.adjoint()), &CMatrix::identity(4, 4).scale(16.0)) < 1e-9);
        assert!(sync_prefix(&xr, &plan, 4, 10).is_err());
    }

    /// Injects the true angles and gains: equalization must be exact.
    fn oracle_sic_error(overlap: usize) -> f64 {
        let a = arrays();
        let mut rng = ChaCha8Rng::seed_from_u64(40 + overlap as u64);
        let s = generate_scene(8, 4, 180, &mut rng).unwrap();
        let plan = FramePlan { t_radar: 140, t_ul: 140, overlap, guard: 10 };
        let (bf, _) = design_hybrid(&s.target_angles_deg, &s.comm_gains, 64, 0.5, HybridVariant::HbfOpt, 1.0).unwrap();
        let xr = bf.precoder() * complex_gaussian(8, 140, 1.0, &mut rng);
        let f_ue = ue_zf_precoder(&s.ue_aoas_deg, 10, 0.5).unwrap();
        let sync = sync_prefix(&xr, &plan, 4, 16).unwrap();
        let mut d = complex_gaussian(4, 140, 1.0, &mut rng);
        d.columns_mut(0, 16).copy_from(&sync);
        let f = assemble_frame(&s, &a, &xr, &(&f_ue * &d), &plan, &NoiseConfig::noiseless(), &mut rng).unwrap();
        let comb = tracking_combiner(&s.target_angles_deg, 16, 64, 0.5, &mut rng).unwrap();
        let y0c = comb.apply(&f.y0).unwrap();
        let known = KnownGains { refl: s.target_gains.clone(), comm: s.comm_gains.clone() };
        let out = sic_decode(&y0c, &xr, &comb, &s.target_angles_deg, 4, &sync, &plan, 0.5, true, Some(&known)).unwrap();
        max_abs_diff(&out.equalized, &d)
    }

    #[test]
    fn sic_oracle_recovers_ul_exactly() {
        for ov in [0, 42, 100, 124, 140] {
            let e = oracle_sic_error(ov);
            assert!(e < 1e-8, "overlap {ov}: {e}");
        }
    }

    #[test]
    fn full_overlap_skips_cancellation() {
        // with no clean echo slots APES cannot run; the receiver must still decode
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = generate_scene(8, 4, 180, &mut rng).unwrap();
        let cfg = PriConfig { plan: FramePlan { t_radar: 140, t_ul: 140, overlap: 140, guard: 10 }, ..Default::default() };
        let out = simulate_pri(&s, &arrays(), &DriftModel::sample(8, 4, 1.0, &mut rng), &cfg, &mut rng).unwrap();
        assert!(!out.sic.cancelled);
        assert_eq!(out.sic.ul_se, out.no_sic.ul_se);
    }

    #[test]
    fn ul_se_limits() {
        let a = arrays();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let s = generate_scene(8, 4, 180, &mut rng).unwrap();
        let plan = FramePlan { t_radar: 140, t_ul: 140, overlap: 0, guard: 10 };
        let comb = tracking_combiner(&s.target_angles_deg, 16, 64, 0.5, &mut rng).unwrap();
        let m = &comb.w_rf * steering_matrix(s.comm_aods_deg(), 64, 0.5) * diag(&s.comm_gains);
        let w_bb = pinv_full_rank(&m, "m").unwrap();
        let f_ue = ue_zf_precoder(&s.ue_aoas_deg, 10, 0.5).unwrap();
        let h = ul_channel(&s, &a);
        let r = ul_se(&h, &f_ue, &comb.w_rf, &w_bb, &CMatrix::zeros(64, 0), &plan, 1.0, 0.1).unwrap();
        assert_eq!(r.r1, None);
        assert_eq!(r.r_ul, r.r2);
        let plan = FramePlan { overlap: 70, ..plan };
        let r = ul_se(&h, &f_ue, &comb.w_rf, &w_bb, &CMatrix::zeros(64, 70), &plan, 1.0, 0.1).unwrap();
        assert!((r.r1.unwrap() - r.r2).abs() < 1e-9);
        assert_eq!(r.r_ul, 0.5 * r.r1.unwrap() + 0.5 * r.r2);
    }

    #[test]
    fn zero_drift_noiseless_tracking_stays_put() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = generate_scene(8, 4, 180, &mut rng).unwrap();
        let cfg = PriConfig { noise: NoiseConfig::from_snr_db(80.0, 1.0), ..Default::default() };
        let out = simulate_pri(&s, &arrays(), &DriftModel::none(8, 4), &cfg, &mut rng).unwrap();
        // compare in sine space: near endfire a grid step in degrees is tiny in sin
        let close = |t: &f64, e: &f64| {
            (t.to_radians().sin() - e.to_radians().sin()).abs() <= cfg.grid_step.to_radians() + 1e-9
        };
        for (t, e) in s.target_angles_deg.iter().zip(&out.sic.tracked_angles) {
            assert!(close(t, e), "{t} vs {e}");
        }
        for (t, e) in s.ue_aoas_deg.iter().zip(&out.ue_tracked.angles_deg) {
            assert!(close(t, e), "{t} vs {e}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn frame_width_accounting(t in 1usize..300, tc in 1usize..300, frac in 0.0f64..=1.0) {
            let ov = (frac * t.min(tc) as f64) as usize;
            let p = FramePlan { t_radar: t, t_ul: tc, overlap: ov, guard: 10 };
            prop_assert!(p.validate().is_ok());
            prop_assert_eq!(p.total_len(), t + tc - ov);
            prop_assert_eq!(p.echo_only().len() + p.mixed().len() + p.ul_only().len(), p.total_len());
            prop_assert_eq!(p.ul_block().len(), tc);
        }

        #[test]
        fn drift_respects_bound(seed in 0u64..10_000, dmax in 0.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = DriftModel::sample(8, 4, dmax, &mut rng);
            prop_assert!(d.validate().is_ok());
        }
    }
}
