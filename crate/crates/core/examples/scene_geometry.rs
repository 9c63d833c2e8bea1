//! Draws a scene, prints it and checks the steering vectors it is built from.

use dfrc::array::{generate_scene, radar_channel, steering_vector, ArrayConfig};
use dfrc::harness::trial_rng;

fn main() -> dfrc::Result<()> {
    let arrays = ArrayConfig::default();
    let scene = generate_scene(8, 4, 180, &mut trial_rng(7, 0, 0))?;
    print!("{}", scene.to_toml_string()?);

    let a = steering_vector(30.0, arrays.n_tx, arrays.spacing);
    println!("|a(30)|^2 = {:.3} (expect {})", a.norm_squared(), arrays.n_tx);

    let g = radar_channel(&scene, &arrays);
    println!("radar channel {}x{}, rank {}", g.nrows(), g.ncols(), dfrc::linalg::numerical_rank(&g, 1e-9));
    Ok(())
}
