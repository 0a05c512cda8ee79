//! Synthesize one drop per species and sketch the captured channel-1 pulse.
//!
//!     cargo run --release --example drop_waveform

use pestsim::dropsim::{synth_event, DeviceConfig, DropEvent, Scenario, SpeciesClass, SpeciesProfile};

fn main() {
    let device = DeviceConfig::standard("demo", 42);
    for class in [
        SpeciesClass::Sz,
        SpeciesClass::Rd,
        SpeciesClass::Tc,
        SpeciesClass::Os,
        SpeciesClass::Cp,
        SpeciesClass::BlackSphere,
    ] {
        let profile = SpeciesProfile::standard(class);
        let event = DropEvent {
            profile,
            entry_t: 0.4,
            entry_r: -0.3,
            speed: profile.fall_speed_mean,
            scenario: Scenario::NormalSingle,
            seed: 7,
        };
        let out = synth_event(&event, &device).unwrap();
        let baseline = out.ch1[0] as i64;
        let peak = out.ch1.iter().map(|&c| c as i64 - baseline).max().unwrap();
        let width = out.ch1.iter().filter(|&&c| (c as i64 - baseline) > peak / 5).count();
        let bar = "#".repeat((peak / 25).max(1) as usize);
        println!("{:<12} peak {:>5} counts, width {:>3} samples  {bar}", format!("{class:?}"), peak, width);
    }
}
