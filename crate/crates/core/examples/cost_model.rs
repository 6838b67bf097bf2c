//! Alpha-beta predictions for every algorithm at one problem size.

use oklab::baselines::Algorithm;
use oklab::harness::{cost_predict, CostModelParams};

fn main() -> oklab::Result<()> {
    let (n, k, p) = (25_000_000, 250_000, 32);
    let params = CostModelParams::default();
    println!(
        "n={n} k={k} P={p} alpha={}s beta={}s",
        params.alpha, params.beta
    );
    println!("{:<10} {:>22} {:>26}", "algorithm", "words/rank", "seconds");
    for alg in Algorithm::ALL {
        let c = cost_predict(alg, n, k, p, params)?;
        println!(
            "{:<10} {:>10.0} .. {:>9.0} {:>12.3e} .. {:>10.3e}",
            alg.as_str(),
            c.words.lo,
            c.words.hi,
            c.total_s.lo,
            c.total_s.hi
        );
    }
    Ok(())
}
