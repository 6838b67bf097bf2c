//! Gaussiank on spike-and-slab gradients: the fitted normal undershoots k,
//! and the rescaling loop lowers the threshold until more than 3k/4 pass.

use oklab::baselines::{gaussiank_select, GaussiankOptions};
use oklab::trainer::synthetic;
use oklab::DenseGrad;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> oklab::Result<()> {
    let (n, k) = (10_000, 100);
    let raw = GaussiankOptions {
        rescale: false,
        ..Default::default()
    };
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DenseGrad::new(synthetic::laplace_tailed(&mut rng, n, 0.01))?;
        let plain = gaussiank_select(&g, k, raw)?;
        let scaled = gaussiank_select(&g, k, GaussiankOptions::default())?;
        println!(
            "seed {seed}: {:>3} selected unscaled, {:>3} after {} rescale steps (k = {k})",
            plain.selected.nnz(),
            scaled.selected.nnz(),
            scaled.rescale_steps
        );
    }
    Ok(())
}
