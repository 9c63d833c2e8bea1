//! Runs the initial search: MUSIC + APES at the BS, MUSIC + LS at the UE.

use dfrc::array::{ArrayConfig, NoiseConfig};
use dfrc::harness::figures::match_stage1;
use dfrc::harness::trial_rng;
use dfrc::stage1::{run_stage1, Stage1Config};

fn main() -> dfrc::Result<()> {
    let snr_db: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10.0);
    let arrays = ArrayConfig::default();
    let scene = dfrc::array::generate_scene(8, 4, 180, &mut trial_rng(3, 0, 0))?;
    let cfg = Stage1Config { noise: NoiseConfig::from_snr_db(snr_db, 1.0), ..Stage1Config::default() };
    let rep = run_stage1(&scene, &arrays, &cfg, &mut trial_rng(3, 0, 1))?;

    let (bs, ue) = match_stage1(&scene, &rep);
    println!("SNR {snr_db} dB");
    for m in &bs {
        println!("BS  {:>7.2} -> {:>7.2}  |a| {:.3} -> {:.3}", m.true_angle_deg, m.est_angle_deg, m.true_gain.norm(), m.est_gain.norm());
    }
    for m in &ue {
        println!("UE  {:>7.2} -> {:>7.2}  |b| {:.3} -> {:.3}", m.true_angle_deg, m.est_angle_deg, m.true_gain.norm(), m.est_gain.norm());
    }
    println!("comm paths identified as targets {:?}", rep.comm_path_indices);
    Ok(())
}
