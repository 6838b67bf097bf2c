//! Point-to-point messages between in-process workers, with the traffic
//! ledger counting payload words per phase.

use oklab::transport::{allreduce_sum, run_inproc, InProcOptions, Payload, Phase};

fn main() -> oklab::Result<()> {
    let (sums, ledger) = run_inproc(4, InProcOptions::default(), |ctx| {
        let me = ctx.rank();
        let next = (me + 1) % ctx.world_size();
        let prev = (me + 3) % ctx.world_size();
        ctx.send(next, Phase::Split, Payload::reals(vec![me as f64; 3]))?;
        let got = ctx.recv(prev, Phase::Split)?;
        assert_eq!(got.reals, vec![prev as f64; 3]);
        allreduce_sum(ctx, &[1.0, me as f64], Phase::Consensus)
    })?;

    println!("allreduce on every rank: {:?}", sums[0]);
    for rank in 0..4 {
        let ring = ledger.get(rank, Phase::Split);
        let sum = ledger.get(rank, Phase::Consensus);
        println!(
            "rank {rank}: split sent {} words in {} msgs; consensus sent {} words",
            ring.words_sent, ring.msgs_sent, sum.words_sent
        );
    }
    assert!(ledger.is_conserved());
    Ok(())
}
