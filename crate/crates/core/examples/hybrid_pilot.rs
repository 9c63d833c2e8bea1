//! Factorizes an LFM pilot into analog phase ramps and a baseband block.

use dfrc::pilot::{had_factorize, lfm_pilot};

fn main() -> dfrc::Result<()> {
    let (n_tx, n_rf, t) = (64, 16, 100);
    let s = lfm_pilot(n_tx, t, 1.0)?;
    let hp = had_factorize(n_tx, n_rf, t, 1.0)?;
    let gram = (&s * s.adjoint()).unscale(t as f64);
    let off = (&gram - nalgebra::DMatrix::identity(n_tx, n_tx).scale(1.0 / n_tx as f64)).norm();
    println!("pilot {n_tx}x{t}, ||SS^H/T - I/N||_F = {off:.2e}");
    println!("baseband block {}x{}", hp.s_bb.nrows(), hp.s_bb.ncols());
    println!("factorization error {:.2e}", hp.factorization_error(&s));
    Ok(())
}
