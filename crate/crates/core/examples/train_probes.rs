// Linear probes over the latent space. Each one-vs-rest probe's weight
// vector should point roughly along the oracle's hidden group direction.

use fairgen::classifier::{train_ovr, GroupSet, Space, TrainConfig};
use fairgen::generator::{Oracle, OracleConfig};
use fairgen::latent::{cosine_similarity, RngHandle};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let oracle = Oracle::new(OracleConfig::desk())?;
    let groups = GroupSet::default_for(5);
    let mut rng = RngHandle::from_seed(3);
    let data = oracle.labeled_latents(5_000, &mut rng)?;

    let probes = train_ovr(&data, &groups, Space::Latent, &TrainConfig::default())?;
    for (probe, name) in probes.iter().zip(groups.names()) {
        let truth = &oracle.ground_truth().group_directions[probe.positive_class];
        let cos = cosine_similarity(&probe.weights, truth)?;
        let meta = probe.training_meta.as_ref().unwrap();
        println!(
            "{name:>7}: cos(theta, w) = {cos:.3}  epochs {} (best {})",
            meta.epochs_run, meta.best_epoch
        );
        assert!(cos > 0.8);
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
