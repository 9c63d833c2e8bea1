//! Designs the hybrid DL precoder and compares it with fully digital ZF.

use dfrc::harness::figures::{beampatterns, dl_se_for_belief, draw_scene};
use dfrc::harness::metrics::strong_lobes;
use dfrc::harness::{ExperimentConfig, ExperimentId};

fn main() -> dfrc::Result<()> {
    let cfg = ExperimentConfig::for_experiment(ExperimentId::Fig8);
    let bp = beampatterns(&cfg)?;
    let mut targets = bp.scene.target_angles_deg.clone();
    targets.sort_by(f64::total_cmp);
    println!("targets   {targets:.1?}");
    println!("DFRC lobes {:.1?}", strong_lobes(&bp.angles_deg, &bp.dfrc, 3.0));
    println!("ZF lobes   {:.1?}", strong_lobes(&bp.angles_deg, &bp.zf, 3.0));

    let scene = draw_scene(&cfg, 8, 0)?;
    let se = dl_se_for_belief(&cfg, &scene, &scene, 0.01)?;
    for (v, s) in cfg.variant_set.iter().zip(se) {
        println!("{:<9} DL SE at 20 dB, perfect CSI: {s:.2} bits/s/Hz", v.tag());
    }
    Ok(())
}
