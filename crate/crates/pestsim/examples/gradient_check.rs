//! Central-difference verification of the hand-derived gradients of both
//! learned models.
//!
//!     cargo run --release --example gradient_check

use pestsim::cmmformer::{CmmModel, ModelConfig};
use pestsim::features::CountingNet;
use pestsim::nn::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let mut net = CountingNet::new(24, 16, 2);
    let batch: Vec<(Vec<f64>, usize)> = (0..5)
        .map(|_| ((0..24).map(|_| rng.gen_range(-1.0..1.0)).collect(), rng.gen_range(0..3usize)))
        .collect();
    let err = net.grad_check(&batch, 500, 3).unwrap();
    println!("counting head    max relative error {err:.3e}");

    let cfg = ModelConfig::default();
    let mut model = CmmModel::new(cfg.clone(), 4).unwrap();
    let batch: Vec<(Mat, Vec<f64>, usize)> = (0..2)
        .map(|_| {
            let mut x = Mat::zeros(cfg.seq_len, cfg.channels);
            for v in &mut x.data {
                *v = 2000.0 + rng.gen_range(-300.0..300.0);
            }
            let stats = (0..2 * cfg.channels).map(|_| rng.gen_range(0.0..0.8)).collect();
            (x, stats, rng.gen_range(0..cfg.classes))
        })
        .collect();
    let err = model.grad_check(&batch, 250, 1e-5, 5).unwrap();
    println!("species model    max relative error {err:.3e} (250 sampled parameters)");
}
