//! Beam-gate optics: radial intensity profile, relative shaded range, and
//! drop-zone coverage of the symmetric vs asymmetric-orthogonal layouts.
//!
//!     cargo run --release --example coverage_map

use pestsim::optics::{coverage_map, rri_radial, rsr, BeamGeometry, Layout};

fn main() {
    println!("radial intensity profile (percent of on-axis):");
    for r in [0.0, 1.0, 1.5, 2.0, 3.0] {
        println!("  r = {r:>4} mm -> {:7.3} %", rri_radial(r).unwrap());
    }

    let geom = BeamGeometry::default();
    println!("\nrelative shaded range across the zone (reference at t = -R):");
    for t in [-2.0, -1.0, 0.0, 1.0, 2.0] {
        println!("  t = {t:>4} mm -> {:.4}", rsr(t, &geom).unwrap());
    }

    println!("\ndrop-zone coverage on a 0.05 mm grid:");
    for layout in [Layout::Symmetric, Layout::AsymmetricOrthogonal] {
        let rep = coverage_map(&BeamGeometry::new(layout), 0.05).unwrap();
        println!(
            "  {layout:?}: both pairs {:.3}, one pair {:.3}, blind {:.3}",
            rep.both_pairs, rep.one_pair, rep.blind
        );
    }
}
