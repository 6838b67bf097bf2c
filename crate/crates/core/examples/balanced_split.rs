//! Split-and-reduce on skewed selections: equal-width regions pile the work
//! onto one rank, repartitioned regions spread it.

use oklab::oktopk::{space_repartition, split_and_reduce, RegionBoundaries};
use oklab::sparse::topk_exact;
use oklab::transport::{run_inproc, Bucket, InProcOptions, Phase};
use oklab::{DenseGrad, WorkerCtx};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn received(ctx: &WorkerCtx) -> u64 {
    ctx.ledger()
        .rank_snapshot(ctx.rank())
        .phase(Phase::Split)
        .words_recv
}

fn main() -> oklab::Result<()> {
    let (p, n, k) = (4, 4000, 100);
    let (out, _) = run_inproc(p, InProcOptions::default(), |ctx| {
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.rank() as u64);
        // most of the large entries land in the first quarter
        let v: Vec<f64> = (0..n)
            .map(|j| {
                let heavy = if j < n / p { 0.08 } else { 0.007 };
                if rng.random::<f64>() < heavy {
                    rng.random_range(1.0..2.0)
                } else {
                    rng.random_range(-0.01..0.01)
                }
            })
            .collect();
        let g = DenseGrad::new(v)?;
        let (_, th) = topk_exact(&g, k)?;
        let bucket = Bucket::new(4, p)?;

        let before = received(ctx);
        split_and_reduce(ctx, &g, th, &RegionBoundaries::equal_width(n, p), bucket)?;
        let naive = received(ctx) - before;

        let cuts = space_repartition(ctx, &g, th)?;
        let before = received(ctx);
        split_and_reduce(ctx, &g, th, &cuts, bucket)?;
        Ok((naive, received(ctx) - before, cuts))
    })?;

    println!("repartitioned cuts {:?}", out[0].2.cuts());
    for (rank, (naive, balanced, _)) in out.iter().enumerate() {
        println!("rank {rank}: received {naive:>4} words equal-width, {balanced:>4} repartitioned");
    }
    Ok(())
}
