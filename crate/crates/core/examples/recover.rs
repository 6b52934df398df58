//! Recovers one planted signal with each solver and prints the error.
//!
//!     cargo run --release --example recover -- [m] [seed]

use phasegen::numerics::{norm, sub};
use phasegen::*;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let m: usize = args.next().map_or(Ok(64), |s| s.parse()).expect("m must be an integer");
    let seed: u64 = args.next().map_or(Ok(0), |s| s.parse()).expect("seed must be an integer");

    let root = RngStream::new(seed);
    let g = random_generator(8, &[32], 128, &mut root.split(0))?;
    let x_star = g.forward(&root.split(1).unit_sphere(8))?;
    let sensing = make_sensing(m, 128, &mut root.split(2))?;
    let obs = observe(&sensing, &x_star)?;

    // Start inside the 0.5·‖x*‖ ball.
    let mut init = root.split(3);
    let z0 = loop {
        let z = init.unit_sphere(8);
        if norm(&sub(&g.forward(&z)?, &x_star)) <= 0.5 * norm(&x_star) {
            break z;
        }
    };

    let problem = Problem::new(&sensing, &obs, &g)?.with_truth(&x_star)?;
    let cfg = SolverConfig {
        inner_iters: 300,
        eta_in: 0.003,
        z_init: LatentInit::WarmStart,
        total_steps: Some(2500),
        ..SolverConfig::default()
    };
    for kind in SolverKind::ALL {
        let r = kind.run(&problem, &cfg, &z0, &mut root.split(4))?;
        let rel = dist_up_to_sign(&r.x_hat, &x_star)? / norm(&x_star);
        println!("{kind:<6} m={m:<4} relative error {rel:.3e}");
    }
    Ok(())
}
