//! Uniform linear arrays, target scenes and the received-signal models.
//!
//! Angles are given in degrees at every public boundary. The base station
//! (BS) has `n_tx` co-located transmit/receive elements, the user equipment
//! (UE) has `n_rx`. The first `comm_path_count` targets of a [`Scene`] are
//! the scatterers that also carry the downlink (DL) and uplink (UL) paths.

use std::path::Path;

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::linalg::{cis, complex_gaussian, complex_gaussian_vec, diag, CMatrix, CVector};

/// Geometry shared by the BS and UE arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_rf: usize,
    /// Element spacing in wavelengths.
    pub spacing: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self { n_tx: 64, n_rx: 10, n_rf: 16, spacing: 0.5 }
    }
}

impl ArrayConfig {
    /// Checks `n_tx >= n_rx >= l` and `k < n_rf <= n_tx`.
    pub fn validate(&self, k: usize, l: usize) -> Result<()> {
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::InvalidConfig(format!("spacing {} must be positive", self.spacing)));
        }
        if self.n_rx < l || self.n_tx < self.n_rx {
            return Err(Error::InvalidConfig(format!(
                "need n_tx >= n_rx >= L, got {} / {} / {}",
                self.n_tx, self.n_rx, l
            )));
        }
        if self.n_rf > self.n_tx || k >= self.n_rf {
            return Err(Error::InvalidConfig(format!(
                "need K < n_rf <= n_tx, got K={} n_rf={} n_tx={}",
                k, self.n_rf, self.n_tx
            )));
        }
        if l > k || l == 0 {
            return Err(Error::InvalidConfig(format!("need 1 <= L <= K, got L={l} K={k}")));
        }
        Ok(())
    }

    pub fn tx_steering(&self, angle_deg: f64) -> CVector {
        steering_vector(angle_deg, self.n_tx, self.spacing)
    }

    pub fn rx_steering(&self, angle_deg: f64) -> CVector {
        steering_vector(angle_deg, self.n_rx, self.spacing)
    }

    pub fn tx_matrix(&self, angles_deg: &[f64]) -> CMatrix {
        steering_matrix(angles_deg, self.n_tx, self.spacing)
    }

    pub fn rx_matrix(&self, angles_deg: &[f64]) -> CMatrix {
        steering_matrix(angles_deg, self.n_rx, self.spacing)
    }
}

/// `a(theta)[m] = exp(j 2 pi spacing m sin(theta))`, `m = 0..n`.
pub fn steering_vector(angle_deg: f64, n: usize, spacing: f64) -> CVector {
    let k = 2.0 * std::f64::consts::PI * spacing * angle_deg.to_radians().sin();
    CVector::from_fn(n, |m, _| cis(k * m as f64))
}

/// Columns are steering vectors for each angle.
pub fn steering_matrix(angles_deg: &[f64], n: usize, spacing: f64) -> CMatrix {
    let mut a = CMatrix::zeros(n, angles_deg.len());
    for (c, &th) in angles_deg.iter().enumerate() {
        a.set_column(c, &steering_vector(th, n, spacing));
    }
    a
}

/// Targets seen by the BS plus the UE-side angles of the communication paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub target_angles_deg: Vec<f64>,
    pub target_gains: Vec<Complex64>,
    pub comm_path_count: usize,
    /// Angles of arrival at the UE, one per communication path.
    pub ue_aoas_deg: Vec<f64>,
    pub comm_gains: Vec<Complex64>,
}

impl Scene {
    pub fn k(&self) -> usize {
        self.target_angles_deg.len()
    }

    pub fn l(&self) -> usize {
        self.comm_path_count
    }

    /// BS-side angles of the communication paths.
    pub fn comm_aods_deg(&self) -> &[f64] {
        &self.target_angles_deg[..self.comm_path_count]
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        let l = self.comm_path_count;
        let bad = |m: String| Err(Error::SceneFile(m));
        if k == 0 {
            return bad("scene has no targets".into());
        }
        if self.target_gains.len() != k {
            return bad(format!("{} angles but {} gains", k, self.target_gains.len()));
        }
        if l == 0 || l > k {
            return bad(format!("comm_path_count {l} outside 1..={k}"));
        }
        if self.ue_aoas_deg.len() != l || self.comm_gains.len() != l {
            return bad(format!(
                "need {l} UE angles and comm gains, got {} and {}",
                self.ue_aoas_deg.len(),
                self.comm_gains.len()
            ));
        }
        for &a in self.target_angles_deg.iter().chain(&self.ue_aoas_deg) {
            if !(a.is_finite() && (-90.0..=90.0).contains(&a)) {
                return bad(format!("angle {a} outside [-90, 90] deg"));
            }
        }
        if self.target_gains.iter().chain(&self.comm_gains).any(|g| !g.is_finite()) {
            return bad("non-finite gain".into());
        }
        Ok(())
    }

    /// Keeps the first `k` targets; the comm paths must remain inside.
    pub fn truncated(&self, k: usize) -> Result<Scene> {
        if k < self.comm_path_count || k > self.k() {
            return Err(Error::InvalidConfig(format!(
                "cannot keep {k} of {} targets with {} comm paths",
                self.k(),
                self.comm_path_count
            )));
        }
        Ok(Scene {
            target_angles_deg: self.target_angles_deg[..k].to_vec(),
            target_gains: self.target_gains[..k].to_vec(),
            ..self.clone()
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(&SceneFile::from(self)).map_err(|e| Error::SceneFile(e.to_string()))
    }

    pub fn from_toml_str(s: &str) -> Result<Scene> {
        let file: SceneFile = toml::from_str(s).map_err(|e| Error::SceneFile(e.to_string()))?;
        file.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Scene> {
        Scene::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// On-disk form: complex gains split into real and imaginary arrays.
#[derive(Debug, Serialize, Deserialize)]
struct SceneFile {
    angles_deg: Vec<f64>,
    gains_re: Vec<f64>,
    gains_im: Vec<f64>,
    comm_path_count: usize,
    ue_aoas_deg: Vec<f64>,
    comm_gains_re: Vec<f64>,
    comm_gains_im: Vec<f64>,
}

impl From<&Scene> for SceneFile {
    fn from(s: &Scene) -> Self {
        SceneFile {
            angles_deg: s.target_angles_deg.clone(),
            gains_re: s.target_gains.iter().map(|g| g.re).collect(),
            gains_im: s.target_gains.iter().map(|g| g.im).collect(),
            comm_path_count: s.comm_path_count,
            ue_aoas_deg: s.ue_aoas_deg.clone(),
            comm_gains_re: s.comm_gains.iter().map(|g| g.re).collect(),
            comm_gains_im: s.comm_gains.iter().map(|g| g.im).collect(),
        }
    }
}

impl TryFrom<SceneFile> for Scene {
    type Error = Error;

    fn try_from(f: SceneFile) -> Result<Scene> {
        let zip = |re: &[f64], im: &[f64], what: &str| -> Result<Vec<Complex64>> {
            if re.len() != im.len() {
                return Err(Error::SceneFile(format!("{what}: re/im lengths differ")));
            }
            Ok(re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect())
        };
        let scene = Scene {
            target_gains: zip(&f.gains_re, &f.gains_im, "gains")?,
            comm_gains: zip(&f.comm_gains_re, &f.comm_gains_im, "comm_gains")?,
            target_angles_deg: f.angles_deg,
            comm_path_count: f.comm_path_count,
            ue_aoas_deg: f.ue_aoas_deg,
        };
        scene.validate()?;
        Ok(scene)
    }
}

/// Noise variances per link. SNR is `P / sigma2` with transmit power `P`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub sigma2_radar: f64,
    pub sigma2_dl: f64,
    pub sigma2_ul: f64,
}

impl NoiseConfig {
    /// Same SNR (in dB) on every link for transmit power `power`.
    pub fn from_snr_db(snr_db: f64, power: f64) -> Self {
        let s = power / 10f64.powf(snr_db / 10.0);
        Self { sigma2_radar: s, sigma2_dl: s, sigma2_ul: s }
    }

    pub fn noiseless() -> Self {
        Self { sigma2_radar: 0.0, sigma2_dl: 0.0, sigma2_ul: 0.0 }
    }
}

/// Center of slice `i` when [-90, 90] is cut into `slices` equal parts.
pub fn slice_center(i: usize, slices: usize) -> f64 {
    -90.0 + (i as f64 + 0.5) * 180.0 / slices as f64
}

/// Draws `k` distinct target angles from the slice centers of a uniform
/// partition of [-90, 90] deg, with CN(0, 1) gains. The first `l` targets
/// are the communication paths; their UE-side angles are drawn the same way.
pub fn generate_scene<R: Rng + ?Sized>(
    k: usize,
    l: usize,
    grid_slices: usize,
    rng: &mut R,
) -> Result<Scene> {
    if l == 0 || l > k || k > grid_slices {
        return Err(Error::InvalidConfig(format!(
            "need 1 <= L <= K <= slices, got L={l} K={k} slices={grid_slices}"
        )));
    }
    let angles = sample(rng, grid_slices, k)
        .into_iter()
        .map(|i| slice_center(i, grid_slices))
        .collect();
    let gains = complex_gaussian_vec(k, 1.0, rng);
    let ue = sample(rng, grid_slices, l)
        .into_iter()
        .map(|i| slice_center(i, grid_slices))
        .collect();
    let comm = complex_gaussian_vec(l, 1.0, rng);
    Ok(Scene {
        target_angles_deg: angles,
        target_gains: gains,
        comm_path_count: l,
        ue_aoas_deg: ue,
        comm_gains: comm,
    })
}

/// Like [`generate_scene`] but with some target angles pinned.
///
/// The pinned angles are placed first, the remaining targets are drawn from
/// slice centers at least `min_gap_deg` away from every pinned angle, and the
/// whole list is then shuffled so the comm paths land on random targets.
pub fn generate_scene_with_pinned<R: Rng + ?Sized>(
    k: usize,
    l: usize,
    grid_slices: usize,
    pinned_deg: &[f64],
    min_gap_deg: f64,
    rng: &mut R,
) -> Result<Scene> {
    if pinned_deg.len() > k {
        return Err(Error::InvalidConfig(format!("{} pinned angles for K={k}", pinned_deg.len())));
    }
    let mut base = generate_scene(k, l, grid_slices, rng)?;
    let free: Vec<f64> = (0..grid_slices)
        .map(|i| slice_center(i, grid_slices))
        .filter(|c| pinned_deg.iter().all(|p| (c - p).abs() >= min_gap_deg))
        .collect();
    let need = k - pinned_deg.len();
    if free.len() < need {
        return Err(Error::InvalidConfig("not enough free slices around pinned angles".into()));
    }
    let mut angles: Vec<f64> = pinned_deg.to_vec();
    angles.extend(sample(rng, free.len(), need).into_iter().map(|i| free[i]));
    let perm = sample(rng, k, k).into_vec();
    base.target_angles_deg = perm.iter().map(|&i| angles[i]).collect();
    Ok(base)
}

/// Round-trip radar channel `A diag(alpha) A^T`.
pub fn radar_channel(scene: &Scene, arrays: &ArrayConfig) -> CMatrix {
    let a = arrays.tx_matrix(&scene.target_angles_deg);
    &a * diag(&scene.target_gains) * a.transpose()
}

/// Noiseless echo `A diag(alpha) A^T X`.
pub fn echo_signal(scene: &Scene, arrays: &ArrayConfig, x: &CMatrix) -> Result<CMatrix> {
    check_dims("radar waveform rows", (arrays.n_tx, x.ncols()), (x.nrows(), x.ncols()))?;
    let a = arrays.tx_matrix(&scene.target_angles_deg);
    let ax = a.transpose() * x;
    Ok(&a * (diag(&scene.target_gains) * ax))
}

/// Echo plus CN(0, sigma2) receiver noise.
pub fn radar_echo<R: Rng + ?Sized>(
    scene: &Scene,
    arrays: &ArrayConfig,
    x: &CMatrix,
    sigma2: f64,
    rng: &mut R,
) -> Result<CMatrix> {
    let y = echo_signal(scene, arrays, x)?;
    let z = complex_gaussian(y.nrows(), y.ncols(), sigma2, rng);
    Ok(y + z)
}

/// DL channel `H = B(Phi) diag(beta) A^T(Theta_1)`, shape `n_rx x n_tx`.
pub fn dl_channel(scene: &Scene, arrays: &ArrayConfig) -> CMatrix {
    let b = arrays.rx_matrix(&scene.ue_aoas_deg);
    let a1 = arrays.tx_matrix(scene.comm_aods_deg());
    b * diag(&scene.comm_gains) * a1.transpose()
}

/// UL channel, the transpose of the DL channel (`n_tx x n_rx`).
pub fn ul_channel(scene: &Scene, arrays: &ArrayConfig) -> CMatrix {
    dl_channel(scene, arrays).transpose()
}

/// UE received signal `H X + N`.
pub fn dl_received<R: Rng + ?Sized>(
    scene: &Scene,
    arrays: &ArrayConfig,
    x: &CMatrix,
    sigma2: f64,
    rng: &mut R,
) -> Result<CMatrix> {
    check_dims("DL waveform rows", (arrays.n_tx, x.ncols()), (x.nrows(), x.ncols()))?;
    let y = dl_channel(scene, arrays) * x;
    let z = complex_gaussian(y.nrows(), y.ncols(), sigma2, rng);
    Ok(y + z)
}

/// BS received UL signal `H^T X_ul + N`.
pub fn ul_received<R: Rng + ?Sized>(
    scene: &Scene,
    arrays: &ArrayConfig,
    x_ul: &CMatrix,
    sigma2: f64,
    rng: &mut R,
) -> Result<CMatrix> {
    check_dims("UL waveform rows", (arrays.n_rx, x_ul.ncols()), (x_ul.nrows(), x_ul.ncols()))?;
    let y = ul_channel(scene, arrays) * x_ul;
    let z = complex_gaussian(y.nrows(), y.ncols(), sigma2, rng);
    Ok(y + z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn steering_entries_match_closed_form() {
        let a = steering_vector(30.0, 8, 0.5);
        // sin(30 deg) = 1/2, so consecutive elements advance by pi/2.
        for m in 0..8 {
            let want = Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_2 * m as f64);
            assert!((a[m] - want).norm() < 1e-12);
        }
        assert!((a.norm_squared() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn scene_generation_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = generate_scene(8, 4, 180, &mut rng).unwrap();
        s.validate().unwrap();
        let mut sorted = s.target_angles_deg.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        assert_eq!(sorted.len(), 8);
        for a in &s.target_angles_deg {
            assert!(((a + 90.0) - 0.5).rem_euclid(1.0).abs() < 1e-9);
        }
        let single = generate_scene(1, 1, 180, &mut rng).unwrap();
        assert_eq!(single.comm_aods_deg(), &single.target_angles_deg[..]);
        assert!(generate_scene(3, 4, 180, &mut rng).is_err());
        assert!(generate_scene(181, 4, 180, &mut rng).is_err());
    }

    #[test]
    fn pinned_scene_keeps_pins() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pins = [-26.0, -24.0, 25.0, 27.0];
        let s = generate_scene_with_pinned(8, 4, 180, &pins, 2.0, &mut rng).unwrap();
        for p in pins {
            assert!(s.target_angles_deg.contains(&p));
        }
        for a in &s.target_angles_deg {
            if !pins.contains(a) {
                assert!(pins.iter().all(|p| (a - p).abs() >= 2.0));
            }
        }
    }

    #[test]
    fn echo_oracle_sum_of_rank_one_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let arrays = ArrayConfig { n_tx: 6, n_rx: 3, n_rf: 4, spacing: 0.5 };
        let s = generate_scene(3, 2, 180, &mut rng).unwrap();
        let x = complex_gaussian(6, 5, 1.0, &mut rng);
        let mut want = CMatrix::zeros(6, 5);
        for k in 0..3 {
            let a = arrays.tx_steering(s.target_angles_deg[k]);
            want += (&a * a.transpose() * &x) * s.target_gains[k];
        }
        let got = echo_signal(&s, &arrays, &x).unwrap();
        assert!(max_abs_diff(&got, &want) < 1e-12);
    }

    #[test]
    fn noise_is_added_to_the_clean_echo() {
        let arrays = ArrayConfig { n_tx: 5, n_rx: 3, n_rf: 4, spacing: 0.5 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = generate_scene(2, 1, 180, &mut rng).unwrap();
        let x = complex_gaussian(5, 7, 1.0, &mut rng);
        let clean = echo_signal(&s, &arrays, &x).unwrap();
        let noisy = radar_echo(&s, &arrays, &x, 0.3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let z = complex_gaussian(5, 7, 0.3, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(noisy, clean + z);
    }

    #[test]
    fn ul_is_transpose_of_dl() {
        let arrays = ArrayConfig { n_tx: 7, n_rx: 4, n_rf: 5, spacing: 0.5 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = generate_scene(3, 2, 180, &mut rng).unwrap();
        let h = dl_channel(&s, &arrays);
        assert_eq!(h.shape(), (4, 7));
        assert_eq!(ul_channel(&s, &arrays), h.transpose());
    }

    #[test]
    fn scene_toml_round_trip_and_rejects_garbage() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = generate_scene(5, 2, 180, &mut rng).unwrap();
        let text = s.to_toml_string().unwrap();
        assert_eq!(Scene::from_toml_str(&text).unwrap(), s);
        let broken = text.replace("comm_path_count = 2", "comm_path_count = 9");
        assert!(Scene::from_toml_str(&broken).is_err());
        assert!(Scene::from_toml_str("angles_deg = [1.0]").is_err());
    }

    proptest! {
        #[test]
        fn steering_has_unit_modulus(angle in -90.0f64..=90.0, n in 1usize..40) {
            let a = steering_vector(angle, n, 0.5);
            for z in a.iter() {
                prop_assert!((z.norm() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn steering_is_periodic_in_sine(angle in -60.0f64..60.0) {
            // With half-wavelength spacing, a shift of 2 in sin(theta) is invisible.
            let s = angle.to_radians().sin();
            let n = 9;
            let a = steering_vector(angle, n, 0.5);
            let b = CVector::from_fn(n, |m, _| cis(std::f64::consts::PI * m as f64 * (s + 2.0)));
            prop_assert!((a - b).norm() < 1e-9);
        }

        #[test]
        fn echo_is_linear_in_waveform(seed in 0u64..1000, c in -3.0f64..3.0) {
            let arrays = ArrayConfig { n_tx: 6, n_rx: 3, n_rf: 4, spacing: 0.5 };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = generate_scene(3, 1, 180, &mut rng).unwrap();
            let x1 = complex_gaussian(6, 4, 1.0, &mut rng);
            let x2 = complex_gaussian(6, 4, 1.0, &mut rng);
            let lhs = echo_signal(&s, &arrays, &(&x1 * Complex64::new(c, 0.0) + &x2)).unwrap();
            let rhs = echo_signal(&s, &arrays, &x1).unwrap() * Complex64::new(c, 0.0)
                + echo_signal(&s, &arrays, &x2).unwrap();
            prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-10);
        }
    }
}
