//! Train the device-conditioned species model on a small synthetic campaign
//! and report held-out accuracy.
//!
//!     cargo run --release --example train_species

use pestsim::cmmformer::{accuracy, evaluate, train, Ablation, SpeciesData, TrainConfig};
use pestsim::config::RunConfig;
use pestsim::curation::build_dataset;
use pestsim::dropsim::simulate_campaign;

fn main() {
    let mut cfg = RunConfig::default();
    cfg.seed = 11;
    cfg.n_events = 400;
    cfg.n_devices = 2;
    cfg.reference_drops = 20;
    cfg.k_ref = 6;
    cfg.species_mix = [0.2; 5];
    cfg.scenario_mix = [0.80, 0.05, 0.04, 0.06, 0.05];
    let campaign = simulate_campaign(&cfg.campaign()).unwrap();
    let ds = build_dataset(campaign.records, &cfg.curation()).unwrap();
    let species = SpeciesData::from_dataset(&ds).unwrap();
    println!(
        "{} train / {} val / {} test examples",
        species.train.len(),
        species.val.len(),
        species.test.len()
    );
    let tc = TrainConfig {
        model: cfg.model(),
        max_epochs: 10,
        patience: 10,
        seed: cfg.seed,
        ..Default::default()
    };
    let (model, history) = train(&species, &tc).unwrap();
    for e in &history.epochs {
        println!("epoch {:>2}  loss {:.4}  val accuracy {:.4}", e.epoch, e.train_loss, e.val_accuracy);
    }
    let pairs = evaluate(&model, &species.test, &species.pools, cfg.seed, Ablation::None).unwrap();
    println!("test accuracy {:.4}", accuracy(&pairs));
}
