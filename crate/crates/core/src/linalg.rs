//! Dense complex linear algebra helpers built on nalgebra.
//!
//! Everything here works on `DMatrix<Complex64>`. Eigen and singular value
//! decompositions are returned sorted in descending order so callers can
//! slice signal and noise subspaces directly.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Unit-modulus phasor `exp(j*phase)`.
#[inline]
pub fn cis(phase: f64) -> Complex64 {
    let (s, c) = phase.sin_cos();
    Complex64::new(c, s)
}

/// Draws a matrix of i.i.d. CN(0, variance) entries.
pub fn complex_gaussian<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    variance: f64,
    rng: &mut R,
) -> CMatrix {
    let scale = (variance / 2.0).sqrt();
    // Column-major fill keeps the draw order fixed for a given shape.
    DMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(scale * re, scale * im)
    })
}

/// Draws `n` i.i.d. CN(0, variance) scalars.
pub fn complex_gaussian_vec<R: Rng + ?Sized>(n: usize, variance: f64, rng: &mut R) -> Vec<Complex64> {
    complex_gaussian(n, 1, variance, rng).iter().copied().collect()
}

pub fn frob_sq(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn diag(values: &[Complex64]) -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_column_slice(values))
}

/// Averages `m` with its conjugate transpose to remove rounding asymmetry.
pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues descending.
pub fn hermitian_eigen_desc(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = hermitian_part(m).symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Thin SVD `m = U diag(s) V^H` with singular values descending.
///
/// Each right singular vector is rotated so its largest-magnitude entry is
/// real and positive; the matching left vector gets the same rotation, so
/// the product is unchanged.
pub struct Svd {
    pub u: CMatrix,
    pub singular_values: Vec<f64>,
    pub v: CMatrix,
}

pub fn svd_sorted(m: &CMatrix) -> Svd {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let r = svd.singular_values.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let mut uu = CMatrix::zeros(m.nrows(), r);
    let mut vv = CMatrix::zeros(m.ncols(), r);
    for (c, &i) in order.iter().enumerate() {
        let v_col: CVector = v_t.row(i).adjoint();
        let phase = phase_of_largest(&v_col);
        vv.set_column(c, &(v_col * phase.conj()));
        uu.set_column(c, &(u.column(i) * phase.conj()));
    }
    Svd {
        u: uu,
        singular_values: order.iter().map(|&i| svd.singular_values[i]).collect(),
        v: vv,
    }
}

fn phase_of_largest(v: &CVector) -> Complex64 {
    let mut best = ZERO;
    for z in v.iter() {
        if z.norm() > best.norm() * (1.0 + 1e-12) {
            best = *z;
        }
    }
    if best.norm() == 0.0 {
        ONE
    } else {
        best / best.norm()
    }
}

/// Full set of right singular vectors (`ncols x ncols`), sorted descending.
///
/// The thin SVD only yields `min(rows, cols)` vectors; padding with zero
/// rows exposes the whole right space, including the null space.
pub fn svd_full_right(m: &CMatrix) -> Svd {
    let n = m.ncols();
    if m.nrows() >= n {
        return svd_sorted(m);
    }
    let mut padded = CMatrix::zeros(n, n);
    padded.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
    let mut svd = svd_sorted(&padded);
    svd.u = svd.u.rows(0, m.nrows()).into_owned();
    svd
}

/// Orthonormal basis of the right null space of `m` as columns.
pub fn null_space(m: &CMatrix, rel_tol: f64) -> CMatrix {
    let svd = svd_full_right(m);
    let smax = svd.singular_values.first().copied().unwrap_or(0.0);
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > rel_tol * smax && s > 0.0)
        .count();
    let n = m.ncols();
    svd.v.columns(rank, n - rank).into_owned()
}

pub fn numerical_rank(m: &CMatrix, rel_tol: f64) -> usize {
    let s = svd_sorted(m).singular_values;
    let smax = s.first().copied().unwrap_or(0.0);
    s.iter().filter(|&&x| x > rel_tol * smax && x > 0.0).count()
}

pub fn condition_number(m: &CMatrix) -> f64 {
    let s = svd_sorted(m).singular_values;
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Moore-Penrose pseudo-inverse that refuses rank-deficient input.
pub fn pinv_full_rank(m: &CMatrix, name: &'static str) -> Result<CMatrix> {
    let svd = svd_sorted(m);
    let smax = svd.singular_values.first().copied().unwrap_or(0.0);
    let tol = 1e-10 * smax;
    if smax == 0.0 || svd.singular_values.iter().any(|&s| s <= tol) {
        return Err(Error::RankDeficient(name));
    }
    let inv_s: Vec<Complex64> = svd
        .singular_values
        .iter()
        .map(|&s| Complex64::new(1.0 / s, 0.0))
        .collect();
    Ok(&svd.v * diag(&inv_s) * svd.u.adjoint())
}

/// Inverse of a square matrix via LU; rejects near-singular input.
pub fn inverse(m: &CMatrix, name: &'static str) -> Result<CMatrix> {
    if condition_number(m) > 1e13 {
        return Err(Error::RankDeficient(name));
    }
    m.clone().try_inverse().ok_or(Error::RankDeficient(name))
}

/// Solves `Q x = b` for Hermitian positive definite `Q`.
pub fn solve_hpd(q: &CMatrix, b: &CMatrix, name: &'static str) -> Result<CMatrix> {
    let chol = hermitian_part(q)
        .cholesky()
        .ok_or(Error::NotPositiveDefinite(name))?;
    Ok(chol.solve(b))
}

/// `ln det` of a Hermitian positive definite matrix.
pub fn hpd_logdet(m: &CMatrix, name: &'static str) -> Result<f64> {
    let chol = hermitian_part(m)
        .cholesky()
        .ok_or(Error::NotPositiveDefinite(name))?;
    let l = chol.l();
    Ok(2.0 * l.diagonal().iter().map(|z| z.re.ln()).sum::<f64>())
}

/// Ratio of extreme eigenvalues of a Hermitian matrix.
pub fn hermitian_condition(m: &CMatrix) -> f64 {
    let (vals, _) = hermitian_eigen_desc(m);
    let hi = vals.first().copied().unwrap_or(0.0);
    let lo = vals.last().copied().unwrap_or(0.0);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(r: usize, c: usize, seed: u64) -> CMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        complex_gaussian(r, c, 1.0, &mut rng)
    }

    #[test]
    fn eigen_reconstructs_and_sorts() {
        let a = rand_mat(6, 6, 1);
        let h = &a * a.adjoint();
        let (vals, vecs) = hermitian_eigen_desc(&h);
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        let d = diag(&vals.iter().map(|&v| Complex64::new(v, 0.0)).collect::<Vec<_>>());
        let back = &vecs * d * vecs.adjoint();
        assert!(max_abs_diff(&back, &h) < 1e-10);
    }

    #[test]
    fn svd_phase_convention() {
        let a = rand_mat(4, 7, 2);
        let svd = svd_sorted(&a);
        let s: Vec<Complex64> = svd.singular_values.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        let back = &svd.u * diag(&s) * svd.v.adjoint();
        assert!(max_abs_diff(&back, &a) < 1e-10);
        for c in 0..svd.v.ncols() {
            let col: CVector = svd.v.column(c).into_owned();
            let p = phase_of_largest(&col);
            assert!((p - ONE).norm() < 1e-12);
        }
    }

    #[test]
    fn null_space_is_annihilated() {
        let a = rand_mat(3, 8, 3);
        let ns = null_space(&a, 1e-10);
        assert_eq!(ns.ncols(), 5);
        assert!((&a * &ns).norm() < 1e-10);
        let gram = ns.adjoint() * &ns;
        assert!(max_abs_diff(&gram, &CMatrix::identity(5, 5)) < 1e-10);
    }

    #[test]
    fn pinv_rejects_rank_deficiency() {
        let a = rand_mat(5, 2, 4);
        let mut b = CMatrix::zeros(5, 3);
        b.columns_mut(0, 2).copy_from(&a);
        b.set_column(2, &a.column(0).into_owned());
        assert!(matches!(pinv_full_rank(&b, "b"), Err(Error::RankDeficient("b"))));
        let p = pinv_full_rank(&a, "a").unwrap();
        assert!(max_abs_diff(&(p * &a), &CMatrix::identity(2, 2)) < 1e-10);
    }

    #[test]
    fn logdet_matches_eigenvalues() {
        let a = rand_mat(5, 5, 5);
        let h = &a * a.adjoint() + CMatrix::identity(5, 5);
        let (vals, _) = hermitian_eigen_desc(&h);
        let want: f64 = vals.iter().map(|v| v.ln()).sum();
        assert!((hpd_logdet(&h, "h").unwrap() - want).abs() < 1e-10);
    }
}
