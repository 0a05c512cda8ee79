//! The on-device acquisition loop: adaptive thresholds, jump triggering, and
//! full-ring capture, demonstrated on a stream with two injected pulses.
//!
//!     cargo run --release --example acquisition

use pestsim::firmware::{run_acquisition, TriggerConfig};

fn main() {
    let cfg = TriggerConfig::default();
    let mut ch1 = vec![2000u16; 2000];
    let mut ch2 = vec![1980u16; 2000];
    for (at, width, amp) in [(400usize, 14usize, 420u16), (1300, 9, 250)] {
        for k in 0..width {
            ch1[at + k] += amp;
            ch2[at + k] += amp - 40;
        }
    }
    let out = run_acquisition("demo", &ch1, &ch2, &cfg).unwrap();
    println!("{} pulses injected, {} records captured", 2, out.records.len());
    for (rec, meta) in out.records.iter().zip(&out.captures) {
        println!(
            "  seq {} trigger at ring index {:?} (tick {}), captured at tick {}",
            rec.seq,
            rec.trigger_pos,
            meta.trigger_tick,
            meta.capture_tick
        );
        let apex = rec.ch1.iter().max().unwrap();
        println!("    channel-1 apex {apex} counts, {} samples/channel", rec.ch1.len());
    }
}
