//! Counting-task features and the feed-forward counting head, trained and
//! evaluated on a curated synthetic campaign.
//!
//!     cargo run --release --example counting_features

use pestsim::curation::{build_dataset, CurationConfig};
use pestsim::dropsim::{simulate_campaign, CampaignConfig};
use pestsim::features::{counting_train, CountingFeatures, CountingTrainConfig};

fn main() {
    let campaign = CampaignConfig {
        n_events: 500,
        n_devices: 2,
        reference_drops: 10,
        seed: 3,
        scenario_mix: [0.72, 0.08, 0.06, 0.08, 0.06],
        ..Default::default()
    };
    let out = simulate_campaign(&campaign).unwrap();
    let ds = build_dataset(out.records, &CurationConfig::default()).unwrap();
    let examples = |ids: &[String]| -> Vec<(Vec<f64>, usize)> {
        ids.iter()
            .map(|id| {
                let rec = ds.record(id).unwrap();
                let label = ds.entry(id).unwrap().counting_label.unwrap() as usize;
                (CountingFeatures::from_record(rec, 16).unwrap().to_vec(), label)
            })
            .collect()
    };
    let train_set = examples(&ds.counting.train);
    let test_set = examples(&ds.counting.test);
    println!("feature dimension: {}", train_set[0].0.len());
    let cfg = CountingTrainConfig { epochs: 40, ..Default::default() };
    let (net, history) = counting_train(&train_set, &cfg).unwrap();
    let correct = test_set.iter().filter(|(x, l)| net.predict(x).unwrap() == *l).count();
    println!("train accuracy {:.4}", history.train_accuracy);
    println!("test accuracy  {:.4} ({} / {})", correct as f64 / test_set.len() as f64, correct, test_set.len());
}
