//! Joint transmit design for the DL data and radar tracking stage.
//!
//! The analog precoder steers one beam to every target. The digital precoder
//! solves an orthogonal Procrustes problem that pulls `F_RF F_BB` toward the
//! zero-forcing precoder on the communication streams, which cancels the
//! radar streams at the UE.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::steering_matrix;
use crate::error::{check_dims, Error, Result};
use crate::linalg::{diag, frob_sq, hpd_logdet, inverse, null_space, svd_sorted, CMatrix};
use crate::stage1::{fmt_f64, AngleGrid};

/// Which auxiliary target the radar streams are fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HybridVariant {
    /// Radar streams are left free (`F_aux = 0`).
    HbfOpt,
    /// Radar streams are pulled into the null space of the channel.
    HbfNull,
}

impl HybridVariant {
    pub fn tag(self) -> &'static str {
        match self {
            HybridVariant::HbfOpt => "hbf_opt",
            HybridVariant::HbfNull => "hbf_null",
        }
    }
}

/// `diag(beta) A^T(theta_1)`, the angular part of the DL channel (`L x n_tx`).
pub fn h_tilde(beta: &[Complex64], theta1_deg: &[f64], n_tx: usize, spacing: f64) -> CMatrix {
    diag(beta) * steering_matrix(theta1_deg, n_tx, spacing).transpose()
}

/// Zero-forcing precoder and UE combiner.
#[derive(Debug, Clone, PartialEq)]
pub struct ZfPair {
    pub f_bs: CMatrix,
    pub w_ue: CMatrix,
}

/// `F_BS = H~^H (H~ H~^H)^-1` and `W_UE = (B^H B)^-1 B^H`.
pub fn zf_pair(h_tilde: &CMatrix, b_phi: &CMatrix) -> Result<ZfPair> {
    let l = h_tilde.nrows();
    check_dims("UE steering matrix", (b_phi.nrows(), l), b_phi.shape())?;
    let f_bs = h_tilde.adjoint() * inverse(&(h_tilde * h_tilde.adjoint()), "h_tilde")?;
    let w_ue = inverse(&(b_phi.adjoint() * b_phi), "b_phi")? * b_phi.adjoint();
    Ok(ZfPair { f_bs, w_ue })
}

/// Column `i` is `a^*(theta_i)`.
pub fn analog_from_angles(theta_deg: &[f64], n_tx: usize, spacing: f64) -> CMatrix {
    steering_matrix(theta_deg, n_tx, spacing).conjugate()
}

/// Auxiliary target for the `K - L` radar streams.
///
/// For [`HybridVariant::HbfNull`] these are null-space vectors of `H~`,
/// keeping the ones the analog beams can reach best (`||F_RF^H f||`).
pub fn aux_matrix(variant: HybridVariant, h_tilde: &CMatrix, f_rf: &CMatrix) -> Result<CMatrix> {
    let n_tx = f_rf.nrows();
    let extra = f_rf.ncols().checked_sub(h_tilde.nrows()).ok_or_else(|| {
        Error::InvalidConfig("fewer analog beams than comm streams".into())
    })?;
    match variant {
        HybridVariant::HbfOpt => Ok(CMatrix::zeros(n_tx, extra)),
        HybridVariant::HbfNull => {
            let ns = null_space(h_tilde, 1e-10);
            if ns.ncols() < extra {
                return Err(Error::RankDeficient("null space of h_tilde"));
            }
            let reach = (f_rf.adjoint() * &ns).column_iter().map(|c| c.norm()).collect::<Vec<_>>();
            let mut order: Vec<usize> = (0..ns.ncols()).collect();
            order.sort_by(|&a, &b| reach[b].total_cmp(&reach[a]).then(a.cmp(&b)));
            let cols: Vec<_> = order[..extra].iter().map(|&i| ns.column(i).into_owned()).collect();
            Ok(if cols.is_empty() { CMatrix::zeros(n_tx, 0) } else { CMatrix::from_columns(&cols) })
        }
    }
}

/// Closed-form digital precoder `sqrt(P/(K N_t)) U V^H` from the SVD of
/// `F_RF^H target`, with `target = [F_BS, F_aux]`.
pub fn opp_digital(f_rf: &CMatrix, target: &CMatrix, power: f64) -> Result<CMatrix> {
    let (n_tx, k) = f_rf.shape();
    check_dims("Procrustes target", (n_tx, k), target.shape())?;
    let svd = svd_sorted(&(f_rf.adjoint() * target));
    let c = (power / (k * n_tx) as f64).sqrt();
    Ok((svd.u * svd.v.adjoint()).scale(c))
}

/// `||F_RF F_BB - target||_F^2`.
pub fn procrustes_objective(f_rf: &CMatrix, f_bb: &CMatrix, target: &CMatrix) -> f64 {
    frob_sq(&(f_rf * f_bb - target))
}

/// Smallest objective reachable by any `F_BB` with `F_BB F_BB^H = c^2 I`.
pub fn procrustes_minimum(f_rf: &CMatrix, target: &CMatrix, power: f64) -> f64 {
    let (n_tx, k) = f_rf.shape();
    let c2 = power / (k * n_tx) as f64;
    let sv_sum: f64 = svd_sorted(&(f_rf.adjoint() * target)).singular_values.iter().sum();
    frob_sq(target) + c2 * frob_sq(f_rf) - 2.0 * c2.sqrt() * sv_sum
}

/// Hybrid precoder `F_RF F_BB`; the first `l` digital columns carry data.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridBeamformer {
    pub f_rf: CMatrix,
    pub f_bb: CMatrix,
    pub variant: HybridVariant,
    pub power: f64,
    pub l: usize,
}

impl HybridBeamformer {
    pub fn k(&self) -> usize {
        self.f_rf.ncols()
    }

    pub fn precoder(&self) -> CMatrix {
        &self.f_rf * &self.f_bb
    }

    /// Comm part `F_RF F_BB,1`.
    pub fn comm_precoder(&self) -> CMatrix {
        &self.f_rf * self.f_bb.columns(0, self.l)
    }

    /// Radar part `F_RF F_BB,2`.
    pub fn radar_precoder(&self) -> CMatrix {
        &self.f_rf * self.f_bb.columns(self.l, self.k() - self.l)
    }
}

/// Designs the hybrid precoder from angle and gain estimates.
///
/// `theta_deg` lists all `K` targets with the `L` comm paths first, in the
/// same order as `beta`.
pub fn design_hybrid(
    theta_deg: &[f64],
    beta: &[Complex64],
    n_tx: usize,
    spacing: f64,
    variant: HybridVariant,
    power: f64,
) -> Result<(HybridBeamformer, CMatrix)> {
    let l = beta.len();
    if l == 0 || l > theta_deg.len() {
        return Err(Error::InvalidConfig(format!("{l} comm paths for {} targets", theta_deg.len())));
    }
    let ht = h_tilde(beta, &theta_deg[..l], n_tx, spacing);
    let f_bs = ht.adjoint() * inverse(&(&ht * ht.adjoint()), "h_tilde")?;
    let f_rf = analog_from_angles(theta_deg, n_tx, spacing);
    let aux = aux_matrix(variant, &ht, &f_rf)?;
    let mut target = CMatrix::zeros(n_tx, theta_deg.len());
    target.columns_mut(0, l).copy_from(&f_bs);
    target.columns_mut(l, aux.ncols()).copy_from(&aux);
    let f_bb = opp_digital(&f_rf, &target, power)?;
    Ok((HybridBeamformer { f_rf, f_bb, variant, power, l }, f_bs))
}

/// Fully digital ZF baseline: `F_BS` scaled to total power `P`.
pub fn fd_zf_precoder(f_bs: &CMatrix, power: f64) -> CMatrix {
    f_bs.scale(power.sqrt() / f_bs.norm())
}

/// `d(theta) = (P/(K N_t)) ||F_RF^H a^*(theta)||^2` on the grid.
pub fn beampattern(f_rf: &CMatrix, power: f64, grid: &AngleGrid, spacing: f64) -> Vec<f64> {
    let (n_tx, k) = f_rf.shape();
    let c2 = power / (k * n_tx) as f64;
    precoder_pattern(f_rf, grid, spacing).into_iter().map(|d| c2 * d).collect()
}

/// `a^T(theta) F F^H a^*(theta)` for any precoder `F`.
pub fn precoder_pattern(f: &CMatrix, grid: &AngleGrid, spacing: f64) -> Vec<f64> {
    let a = steering_matrix(&grid.points(), f.nrows(), spacing);
    let proj = a.transpose() * f;
    proj.row_iter().map(|r| r.norm_squared()).collect()
}

/// Writes `angle_deg,d_linear,d_db` rows.
pub fn write_beampattern_csv<W: Write>(out: W, grid: &AngleGrid, pattern: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["angle_deg", "d_linear", "d_db"]).map_err(io)?;
    for (a, d) in grid.points().iter().zip(pattern) {
        w.write_record([fmt_f64(*a), fmt_f64(*d), fmt_f64(10.0 * d.log10())]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// DL link quality.
#[derive(Debug, Clone, PartialEq)]
pub struct DlLinkReport {
    pub se_bits_per_hz: f64,
    /// Interference-plus-noise covariance after the UE combiner.
    pub r_in: CMatrix,
    /// `||W H F_2||_F / ||W H F_1||_F`, zero without radar streams.
    pub interference_ratio: f64,
}

/// SE of the comm streams with the radar streams as interference.
///
/// `f_comm` carries the `L` data streams, `f_radar` the remaining ones
/// (may have zero columns).
pub fn dl_se(
    h: &CMatrix,
    w_ue: &CMatrix,
    f_comm: &CMatrix,
    f_radar: &CMatrix,
    rho: f64,
    sigma2: f64,
) -> Result<DlLinkReport> {
    let l = f_comm.ncols();
    check_dims("UE combiner", (l, h.nrows()), w_ue.shape())?;
    let wh = w_ue * h;
    let g = &wh * f_comm;
    let i_f = &wh * f_radar;
    let r_in = (&i_f * i_f.adjoint()).scale(rho) + (w_ue * w_ue.adjoint()).scale(sigma2);
    let signal = (&g * g.adjoint()).scale(rho / l as f64);
    let se = (hpd_logdet(&(&r_in + signal), "R_in + signal")? - hpd_logdet(&r_in, "R_in")?)
        / std::f64::consts::LN_2;
    let gn = g.norm();
    Ok(DlLinkReport {
        se_bits_per_hz: se.max(0.0),
        r_in,
        interference_ratio: if gn > 0.0 { i_f.norm() / gn } else { 0.0 },
    })
}

/// Convenience wrapper for a [`HybridBeamformer`].
pub fn dl_se_hybrid(
    h: &CMatrix,
    w_ue: &CMatrix,
    bf: &HybridBeamformer,
    rho: f64,
    sigma2: f64,
) -> Result<DlLinkReport> {
    dl_se(h, w_ue, &bf.comm_precoder(), &bf.radar_precoder(), rho, sigma2)
}

/// Relative leakage of the radar streams into the DL channel.
pub fn nulling_ratio(h: &CMatrix, bf: &HybridBeamformer) -> f64 {
    let f2 = bf.radar_precoder();
    let denom = h.norm() * f2.norm();
    if denom == 0.0 {
        0.0
    } else {
        (h * f2).norm() / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{dl_channel, generate_scene, ArrayConfig};
    use crate::linalg::{complex_gaussian, max_abs_diff, numerical_rank};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_scaled_unitary(k: usize, c: f64, rng: &mut ChaCha8Rng) -> CMatrix {
        let m = complex_gaussian(k, k, 1.0, rng);
        let svd = svd_sorted(&m);
        (svd.u * svd.v.adjoint()).scale(c)
    }

    #[test]
    fn zf_single_path_is_scalar_pinv() {
        let ht = h_tilde(&[Complex64::new(0.5, 0.5)], &[20.0], 8, 0.5);
        let b = steering_matrix(&[-10.0], 4, 0.5);
        let zf = zf_pair(&ht, &b).unwrap();
        let want_f = ht.adjoint().unscale(frob_sq(&ht));
        let want_w = b.adjoint().unscale(frob_sq(&b));
        assert!(max_abs_diff(&zf.f_bs, &want_f) < 1e-12);
        assert!(max_abs_diff(&zf.w_ue, &want_w) < 1e-12);
    }

    #[test]
    fn zf_composite_is_identity_and_names_bad_factor() {
        let arrays = ArrayConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = generate_scene(8, 4, 180, &mut rng).unwrap();
        let ht = h_tilde(&s.comm_gains, s.comm_aods_deg(), 64, 0.5);
        let b = arrays.rx_matrix(&s.ue_aoas_deg);
        let zf = zf_pair(&ht, &b).unwrap();
        let h = dl_channel(&s, &arrays);
        assert!(max_abs_diff(&(&zf.w_ue * h * &zf.f_bs), &CMatrix::identity(4, 4)) < 1e-8);
        let dup = steering_matrix(&[1.0, 1.0, 2.0, 3.0], 10, 0.5);
        assert_eq!(zf_pair(&ht, &dup), Err(Error::RankDeficient("b_phi")));
    }

    #[test]
    fn analog_columns() {
        let f = analog_from_angles(&[0.0, 25.0, -25.0], 16, 0.5);
        assert!(f.column(0).iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        assert!((f.column(1).conjugate() - f.column(2)).norm() < 1e-12);
        assert!(f.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        assert_eq!(numerical_rank(&f, 1e-10), 3);
    }

    #[test]
    fn procrustes_identity_case() {
        // Square scaled-unitary F_RF with F_BS a positive multiple of it
        let n = 4;
        let f_rf = CMatrix::from_fn(n, n, |r, c| {
            crate::linalg::cis(2.0 * std::f64::consts::PI * (r * c) as f64 / n as f64)
        });
        let f_bb = opp_digital(&f_rf, &f_rf.scale(0.3), 1.0).unwrap();
        let c = (1.0 / (n * n) as f64).sqrt();
        assert!(max_abs_diff(&f_bb, &CMatrix::identity(n, n).scale(c)) < 1e-12);
    }

    #[test]
    fn procrustes_beats_random_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let s = generate_scene(4, 2, 180, &mut rng).unwrap();
            let (bf, f_bs) = design_hybrid(&s.target_angles_deg, &s.comm_gains, 8, 0.5, HybridVariant::HbfOpt, 1.0).unwrap();
            let mut target = CMatrix::zeros(8, 4);
            target.columns_mut(0, 2).copy_from(&f_bs);
            let best = procrustes_objective(&bf.f_rf, &bf.f_bb, &target);
            assert!((best - procrustes_minimum(&bf.f_rf, &target, 1.0)).abs() < 1e-9);
            let c = (1.0f64 / 32.0).sqrt();
            for _ in 0..200 {
                let q = random_scaled_unitary(4, c, &mut rng);
                assert!(best <= procrustes_objective(&bf.f_rf, &q, &target) + 1e-12);
            }
        }
    }

    #[test]
    fn hybrid_opt_nulls_radar_streams() {
        let arrays = ArrayConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let s = generate_scene(8, 4, 180, &mut rng).unwrap();
            let (bf, _) = design_hybrid(&s.target_angles_deg, &s.comm_gains, 64, 0.5, HybridVariant::HbfOpt, 1.0).unwrap();
            let h = dl_channel(&s, &arrays);
            assert!(nulling_ratio(&h, &bf) < 1e-8);
        }
    }

    #[test]
    fn null_variant_aux_lies_in_null_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = generate_scene(8, 4, 180, &mut rng).unwrap();
        let ht = h_tilde(&s.comm_gains, s.comm_aods_deg(), 64, 0.5);
        let f_rf = analog_from_angles(&s.target_angles_deg, 64, 0.5);
        let aux = aux_matrix(HybridVariant::HbfNull, &ht, &f_rf).unwrap();
        assert_eq!(aux.shape(), (64, 4));
        assert!((&ht * &aux).norm() < 1e-10);
    }

    #[test]
    fn beampattern_closed_forms() {
        let f = analog_from_angles(&[0.0], 16, 0.5);
        let grid = AngleGrid::new(-10.0, 10.0, 5.0);
        let d = beampattern(&f, 1.0, &grid, 0.5);
        assert!((d[2] - 16.0).abs() < 1e-10);
        let th = [-30.0, 10.0, 45.0];
        let f = analog_from_angles(&th, 32, 0.5);
        for t in th {
            let d = beampattern(&f, 1.0, &AngleGrid::new(t, t, 1.0), 0.5)[0];
            assert!(d >= 32.0 * 32.0 / (3.0 * 32.0) - 1e-9);
        }
    }

    #[test]
    fn zero_rho_gives_zero_rate() {
        let arrays = ArrayConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = generate_scene(8, 4, 180, &mut rng).unwrap();
        let (bf, _) = design_hybrid(&s.target_angles_deg, &s.comm_gains, 64, 0.5, HybridVariant::HbfNull, 1.0).unwrap();
        let zf = zf_pair(&h_tilde(&s.comm_gains, s.comm_aods_deg(), 64, 0.5), &arrays.rx_matrix(&s.ue_aoas_deg)).unwrap();
        let h = dl_channel(&s, &arrays);
        let r = dl_se_hybrid(&h, &zf.w_ue, &bf, 0.0, 0.1).unwrap();
        assert_eq!(r.se_bits_per_hz, 0.0);
        let r = dl_se_hybrid(&h, &zf.w_ue, &bf, 1.0, 0.1).unwrap();
        assert!(r.se_bits_per_hz > 0.0);
        assert!(crate::linalg::hermitian_condition(&r.r_in).is_finite());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn digital_precoder_is_scaled_unitary(seed in 0u64..100_000, p in 0.1f64..5.0, null in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = generate_scene(6, 3, 180, &mut rng).unwrap();
            let variant = if null { HybridVariant::HbfNull } else { HybridVariant::HbfOpt };
            let (bf, _) = design_hybrid(&s.target_angles_deg, &s.comm_gains, 24, 0.5, variant, p).unwrap();
            let c2 = p / (6.0 * 24.0);
            let gram = &bf.f_bb * bf.f_bb.adjoint();
            prop_assert!(max_abs_diff(&gram, &CMatrix::identity(6, 6).scale(c2)) < 1e-10);
            prop_assert!((frob_sq(&bf.precoder()) - p).abs() < 1e-8);
        }
    }
}
