//! Every baseline collective on the same inputs: output size and the
//! words each rank sent.

use oklab::baselines::{run_baseline, Algorithm, GaussiankOptions};
use oklab::trainer::synthetic;
use oklab::transport::{run_inproc, InProcOptions};
use oklab::DenseGrad;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> oklab::Result<()> {
    let (p, n, k) = (8, 10_000, 100);
    let inputs: Vec<DenseGrad> = (0..p)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(r as u64);
            DenseGrad::new(synthetic::normal(&mut rng, n, 1.0)).unwrap()
        })
        .collect();

    println!("P={p} n={n} k={k}");
    println!(
        "{:<10} {:>8} {:>12} {:>12}",
        "algorithm", "nnz", "mean words", "max words"
    );
    for alg in Algorithm::ALL
        .into_iter()
        .filter(|a| *a != Algorithm::OkTopk)
    {
        let (out, _) = run_inproc(p, InProcOptions::default(), |ctx| {
            run_baseline(
                ctx,
                alg,
                &inputs[ctx.rank()],
                k,
                GaussiankOptions::default(),
            )
        })?;
        let words: Vec<u64> = out
            .iter()
            .map(|r| r.traffic.0.iter().map(|t| t.words_sent).sum())
            .collect();
        let mean = words.iter().sum::<u64>() as f64 / p as f64;
        println!(
            "{:<10} {:>8} {:>12.1} {:>12}",
            alg.as_str(),
            out[0].accumulated.nnz(),
            mean,
            words.iter().max().unwrap()
        );
    }
    Ok(())
}
