//! Component selection: pick the receiver resistor against the response-time
//! budget, then the emitter resistor against the linearity margin.
//!
//!     cargo run --release --example tune_circuit

use pestsim::circuit::{
    emitter_intensity, receiver_voltage, received_intensity, step_response_time, tune_components,
    CircuitParams, ResistorLadder, TuneConstraints,
};

fn main() {
    let base = CircuitParams::default();
    let ladder = ResistorLadder::e12(50.0, 1_000_000.0);
    for (label, max_rt, margin) in
        [("fast response", 1e-4, 0.5), ("balanced", 1e-3, 1.0), ("max gain", 1e-2, 0.2)]
    {
        match tune_components(&base, &TuneConstraints { max_response_time: max_rt, linearity_margin: margin }, &ladder) {
            Ok((r_r, r_e)) => {
                let mut tuned = base;
                tuned.r_r = r_r;
                tuned.r_e = r_e;
                let op = receiver_voltage(received_intensity(emitter_intensity(&tuned), 0.0, &tuned), &tuned);
                println!(
                    "{label:<14} r_r = {r_r:>9.0} ohm, r_e = {r_e:>7.0} ohm, 10-90% = {:.1} us, operating point {:.2} V",
                    step_response_time(r_r, &tuned) * 1e6,
                    op.volts
                );
            }
            Err(e) => println!("{label:<14} {e}"),
        }
    }
}
