//! Run the curation pipeline on a simulated campaign: low-sum filter,
//! consecutive merge, double-peak extraction, debris outliers, splits.
//!
//!     cargo run --release --example curate_dataset

use pestsim::curation::{build_dataset, CurationConfig};
use pestsim::dropsim::{simulate_campaign, CampaignConfig};

fn main() {
    let campaign = CampaignConfig {
        n_events: 400,
        n_devices: 2,
        reference_drops: 20,
        seed: 9,
        scenario_mix: [0.72, 0.08, 0.06, 0.08, 0.06],
        ..Default::default()
    };
    let out = simulate_campaign(&campaign).unwrap();
    let ds = build_dataset(out.records, &CurationConfig::default()).unwrap();
    println!("dispositions:");
    for (name, count) in ds.disposition_counts() {
        println!("  {name:<18} {count}");
    }
    println!(
        "counting task: {} train (oversampled) / {} val / {} test",
        ds.counting.train.len(),
        ds.counting.val.len(),
        ds.counting.test.len()
    );
    println!(
        "species task:  {} train / {} val / {} test",
        ds.species.train.len(),
        ds.species.val.len(),
        ds.species.test.len()
    );
    println!("reference pools: {:?}", ds.reference_pools.iter().map(|(d, v)| (d.clone(), v.len())).collect::<Vec<_>>());
}
