//! One O(k) sparse allreduce compared against the centralized oracle
//! `Topk(sum of local Topk)`, with the per-phase traffic it caused.

use oklab::oktopk::{ok_sparse_allreduce, OkConfig, OkState};
use oklab::sparse::{butterfly_sum, topk_exact, topk_sparse};
use oklab::trainer::synthetic;
use oklab::transport::{run_inproc, InProcOptions, Phase};
use oklab::{DenseGrad, SparseGrad};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> oklab::Result<()> {
    let (p, n, k) = (8, 1000, 32);
    let inputs: Vec<DenseGrad> = (0..p)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(10 + r as u64);
            DenseGrad::new(synthetic::normal(&mut rng, n, 1.0)).unwrap()
        })
        .collect();

    let (out, ledger) = run_inproc(p, InProcOptions::default(), |ctx| {
        let mut state = OkState::new(OkConfig::default())?;
        ok_sparse_allreduce(ctx, &mut state, &inputs[ctx.rank()], 1, k)
    })?;

    let locals: Vec<SparseGrad> = inputs.iter().map(|g| topk_exact(g, k).unwrap().0).collect();
    let oracle = topk_sparse(&butterfly_sum(n, &locals)?, k);
    println!(
        "output nnz {} (k = {k}), matches oracle: {}",
        out[0].u.nnz(),
        out[0].u == oracle
    );
    println!("rank 0 kept {} of its own selections", out[0].indexes.len());

    for phase in Phase::ALL {
        let words: Vec<u64> = (0..p).map(|r| ledger.get(r, phase).words_sent).collect();
        if words.iter().any(|&w| w > 0) {
            println!("{:<11} words sent per rank {words:?}", phase.as_str());
        }
    }
    Ok(())
}
