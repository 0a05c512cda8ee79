//! Device-conditioning comparison: per-device test accuracy of the species
//! model with the conditional modification active vs knocked out to an
//! identity projection, on a two-device campaign.
//!
//!     cargo run --release --example cross_device

use pestsim::cmmformer::{accuracy, evaluate, train, Ablation, SpeciesData, TrainConfig};
use pestsim::config::RunConfig;
use pestsim::curation::build_dataset;
use pestsim::dropsim::simulate_campaign;
use std::collections::BTreeMap;

fn main() {
    let mut cfg = RunConfig::default();
    cfg.seed = 21;
    cfg.n_events = 600;
    cfg.n_devices = 2;
    cfg.reference_drops = 30;
    cfg.gain_sigma = 0.30;
    cfg.offset_sd_v = 0.25;
    cfg.species_mix = [0.2; 5];
    cfg.scenario_mix = [0.80, 0.05, 0.04, 0.06, 0.05];
    let campaign = simulate_campaign(&cfg.campaign()).unwrap();
    let ds = build_dataset(campaign.records, &cfg.curation()).unwrap();
    let species = SpeciesData::from_dataset(&ds).unwrap();

    for ablation in [Ablation::None, Ablation::Cmm] {
        let tc = TrainConfig {
            model: cfg.model(),
            max_epochs: 8,
            patience: 8,
            seed: cfg.seed,
            ablation,
            ..Default::default()
        };
        let (model, _) = train(&species, &tc).unwrap();
        let mut by_dev: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
        for ex in &species.test {
            let pairs =
                evaluate(&model, std::slice::from_ref(ex), &species.pools, cfg.seed, ablation)
                    .unwrap();
            by_dev.entry(ex.device_id.clone()).or_default().extend(pairs);
        }
        let label = match ablation {
            Ablation::None => "conditioned",
            _ => "identity   ",
        };
        let mut mean = 0.0;
        for (dev, pairs) in &by_dev {
            let acc = accuracy(pairs);
            println!("{label}  {dev}: accuracy {acc:.4}");
            mean += acc / by_dev.len() as f64;
        }
        println!("{label}  mean per-device accuracy {mean:.4}");
    }
}
