//! Chirp (LFM) pilot for the target search stage and its hybrid factorization.
//!
//! Row `n` (1-based) at slot `t` is
//! `sqrt(P/N_t) exp(j 2 pi n (t-1)/T) exp(j pi (t-1)^2 / T)`.
//! The rows are orthogonal over `T >= N_t` slots, so the radiated pattern is
//! flat in angle. The same matrix is produced by a phase-shifter network
//! whose analog precoder is updated by a diagonal phase ramp each slot.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{cis, CMatrix, CVector};

const TAU: f64 = 2.0 * std::f64::consts::PI;

/// Phase `2 pi num / den` with the numerator reduced modulo `den` first,
/// which keeps large slot indices exact.
fn frac_turn(num: u64, den: u64) -> f64 {
    TAU * (num % den) as f64 / den as f64
}

/// Fully digital LFM pilot, `n_tx x t_slots`. Requires `t_slots >= n_tx`.
pub fn lfm_pilot(n_tx: usize, t_slots: usize, power: f64) -> Result<CMatrix> {
    if t_slots < n_tx {
        return Err(Error::PilotTooShort { n_tx, t_slots });
    }
    Ok(lfm_pilot_unchecked(n_tx, t_slots, power))
}

/// Same waveform without the orthogonality precondition, for short-pilot sweeps.
pub fn lfm_pilot_unchecked(n_tx: usize, t_slots: usize, power: f64) -> CMatrix {
    let amp = (power / n_tx as f64).sqrt();
    let t = t_slots as u64;
    CMatrix::from_fn(n_tx, t_slots, |i, j| {
        let n = i as u64 + 1;
        let j = j as u64;
        // exp(j pi j^2 / T) = exp(j 2 pi (j^2 mod 2T) / 2T)
        let phase = frac_turn(n * j, t) + frac_turn(j * j, 2 * t);
        cis(phase) * amp
    })
}

/// Hybrid realization of the LFM pilot.
///
/// The analog precoder of slot `t` (0-based) is `diag(u)^t * F1` with `F1`
/// the all-ones matrix, so only `u` is stored.
#[derive(Debug, Clone)]
pub struct HybridPilot {
    pub n_tx: usize,
    pub n_rf: usize,
    pub t_slots: usize,
    pub power: f64,
    /// Per-slot phase ramp, `u_n = exp(j 2 pi n / T)`.
    pub u: CVector,
    /// Digital pilots, one column per slot.
    pub s_bb: CMatrix,
}

impl HybridPilot {
    /// Analog precoder of slot `t` (0-based), materialized.
    pub fn analog(&self, t: usize) -> CMatrix {
        let tt = self.t_slots as u64;
        let ramp = CVector::from_fn(self.n_tx, |i, _| cis(frac_turn((i as u64 + 1) * t as u64, tt)));
        CMatrix::from_fn(self.n_tx, self.n_rf, |r, _| ramp[r])
    }

    /// Transmitted matrix, slot by slot, following the diagonal recursion.
    pub fn transmitted(&self) -> CMatrix {
        let mut out = CMatrix::zeros(self.n_tx, self.t_slots);
        let mut f_rf = CMatrix::from_element(self.n_tx, self.n_rf, Complex64::new(1.0, 0.0));
        for t in 0..self.t_slots {
            if t > 0 {
                for r in 0..self.n_tx {
                    let u = self.u[r];
                    f_rf.row_mut(r).apply(|z| *z *= u);
                }
            }
            out.set_column(t, &(&f_rf * self.s_bb.column(t)));
        }
        out
    }

    /// Largest entry-wise deviation from the fully digital pilot.
    pub fn factorization_error(&self, s_dp: &CMatrix) -> f64 {
        let x = self.transmitted();
        x.iter().zip(s_dp.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }
}

/// Builds the hybrid pilot whose output equals [`lfm_pilot`] at every slot.
pub fn had_factorize(n_tx: usize, n_rf: usize, t_slots: usize, power: f64) -> Result<HybridPilot> {
    if n_rf == 0 || n_rf > n_tx {
        return Err(Error::InvalidConfig(format!("need 1 <= n_rf <= n_tx, got {n_rf} / {n_tx}")));
    }
    if t_slots < n_tx {
        return Err(Error::PilotTooShort { n_tx, t_slots });
    }
    let tt = t_slots as u64;
    let u = CVector::from_fn(n_tx, |i, _| cis(frac_turn(i as u64 + 1, tt)));
    let amp = (power / (n_rf * n_rf * n_tx) as f64).sqrt();
    let mut s_bb = CMatrix::zeros(n_rf, t_slots);
    let mut cur = CVector::from_element(n_rf, Complex64::new(amp, 0.0));
    for t in 0..t_slots {
        if t > 0 {
            // v_t = exp(j pi (2t - 1) / T) with 1-based t
            cur *= cis(frac_turn(2 * t as u64 - 1, 2 * tt));
        }
        s_bb.set_column(t, &cur);
    }
    Ok(HybridPilot { n_tx, n_rf, t_slots, power, u, s_bb })
}
