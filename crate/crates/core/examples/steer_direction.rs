// Steering a single latent. Among unit vectors, theta/|theta| maximises a
// probe's output; adding the raw parameter vector moves a sample deep
// into the probe's positive side.

use fairgen::classifier::{LinearModel, Space};
use fairgen::latent::{sample_latent, LatentVector, RngHandle};
use fairgen::steering::{best_unit_latent, direction_from_model, steer, SteerPolicy};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let probe = LinearModel::new(Space::Latent, 0, vec![3.0, 4.0, 0.0, 0.0], -2.0)?;
    let best = best_unit_latent(&probe)?;
    println!("best unit latent: {:?}", best.as_slice());
    assert_eq!(best.as_slice(), &[0.6, 0.8, 0.0, 0.0]);

    // no random unit vector beats it
    let mut rng = RngHandle::from_seed(9);
    let top = probe.probability(best.as_slice())?;
    for _ in 0..1_000 {
        let u = fairgen::latent::normalize(&sample_latent(&mut rng, 4)?)?;
        assert!(probe.probability(u.as_slice())? <= top + 1e-12);
    }

    let dir = direction_from_model(&probe)?;
    let z = LatentVector::new(vec![-0.5, -0.5, 1.0, 0.0])?;
    for policy in [SteerPolicy::raw_theta(), SteerPolicy::unit_scaled(2.0)] {
        let moved = steer(&z, &dir, &policy)?;
        println!(
            "{:?}: p {:.3} -> {:.3}",
            policy.mode,
            probe.probability(z.as_slice())?,
            probe.probability(moved.as_slice())?
        );
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
