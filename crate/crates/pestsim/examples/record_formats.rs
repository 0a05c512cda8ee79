//! Record wire formats: JSONL and the packed binary container round-trip.
//!
//!     cargo run --release --example record_formats

use pestsim::dropsim::{simulate_campaign, CampaignConfig};
use pestsim::io;

fn main() {
    let cfg = CampaignConfig { n_events: 5, n_devices: 1, reference_drops: 2, seed: 2, ..Default::default() };
    let out = simulate_campaign(&cfg).unwrap();
    let jsonl = io::records_to_jsonl(&out.records).unwrap();
    let binary = io::records_to_binary(&out.records).unwrap();
    println!("{} records", out.records.len());
    println!("jsonl:  {} bytes, first line:", jsonl.len());
    let first = jsonl.lines().next().unwrap();
    println!("  {}...", &first[..first.len().min(120)]);
    println!("binary: {} bytes, magic {:?}", binary.len(), std::str::from_utf8(&binary[..4]).unwrap());
    let back = io::records_from_binary(&binary).unwrap();
    assert_eq!(back, out.records);
    println!("binary round-trip: identical");
}
