//! Sensitivity bench of the three layout/circuit combinations on the
//! hardest-to-detect species, reported as the harmonic-mean channel
//! sensitivity in millivolts.
//!
//!     cargo run --release --example bench_layout

use pestsim::cli::bench_layout;
use pestsim::config::RunConfig;

fn main() {
    let cfg = RunConfig::default();
    let report = bench_layout(&cfg).unwrap();
    println!("{:<26} {:>8} {:>12} {:>10}", "combination", "device", "mean eta mV", "sd mV");
    for row in &report.rows {
        println!(
            "{:<26} {:>8} {:>12.2} {:>10.2}",
            row.combination, row.device, row.mean_eta_mv, row.sd_eta_mv
        );
    }
    println!();
    for (name, mean, sd) in &report.averages {
        println!("{name:<26} {:>8} {mean:>12.2} {sd:>10.2}", "average");
    }
}
