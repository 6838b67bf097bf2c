//! The same collective over loopback TCP sockets.
//!
//! With a rank map file (`rank host:port` per line) the ports are fixed:
//!
//!     cargo run --example tcp_transport -- ranks.txt

use oklab::oktopk::{ok_sparse_allreduce, OkConfig, OkState};
use oklab::transport::tcp::{bind_loopback, run_tcp, run_tcp_with, RankMap};
use oklab::transport::Phase;
use oklab::DenseGrad;

fn main() -> oklab::Result<()> {
    let n = 64;
    let job = |ctx: &mut oklab::WorkerCtx| {
        let me = ctx.rank() as f64;
        let g: Vec<f64> = (0..n).map(|j| ((j * 7) % 11) as f64 - me).collect();
        let mut state = OkState::new(OkConfig::default())?;
        ok_sparse_allreduce(ctx, &mut state, &DenseGrad::new(g)?, 1, 8)
    };

    let (out, ledger) = match std::env::args().nth(1) {
        Some(path) => run_tcp(&RankMap::load(path)?, job)?,
        None => {
            let (listeners, map) = bind_loopback(4)?;
            for r in 0..map.len() {
                println!("rank {r} at {}", map.addr(r));
            }
            run_tcp_with(&map, listeners, job)?
        }
    };
    println!("u = {:?}", out[0].u.iter().collect::<Vec<_>>());
    assert!(out.iter().all(|o| o.u == out[0].u));
    println!(
        "rank 0 split words sent: {}",
        ledger.get(0, Phase::Split).words_sent
    );
    Ok(())
}
