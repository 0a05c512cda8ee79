//! Simulate a labeled drop campaign across devices and summarize the truth
//! table against the captured records.
//!
//!     cargo run --release --example campaign

use pestsim::dropsim::{simulate_campaign, CampaignConfig};
use std::collections::BTreeMap;

fn main() {
    let cfg = CampaignConfig {
        n_events: 200,
        n_devices: 2,
        reference_drops: 10,
        seed: 5,
        scenario_mix: [0.80, 0.06, 0.04, 0.06, 0.04],
        ..Default::default()
    };
    let out = simulate_campaign(&cfg).unwrap();
    let mut by_scenario: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for t in &out.truth {
        let e = by_scenario.entry(t.scenario.as_str()).or_default();
        e.0 += 1;
        e.1 += t.record_ids.len();
    }
    println!("{} events -> {} records", out.truth.len(), out.records.len());
    for (scenario, (events, records)) in by_scenario {
        println!("  {scenario:<22} {events:>4} events, {records:>4} records");
    }
}
