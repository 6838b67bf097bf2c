//! TopkDSA output density: disjoint selections fill in to P*k entries,
//! identical selections stay at k.

use oklab::baselines::topkdsa_allreduce;
use oklab::transport::{run_inproc, InProcOptions};
use oklab::DenseGrad;

fn density(shared: bool) -> oklab::Result<f64> {
    let (p, k, n) = (4, 10, 1000);
    let (out, _) = run_inproc(p, InProcOptions::default(), |ctx| {
        let mut v = vec![0.0; n];
        for j in 0..k {
            let at = if shared {
                j * 100
            } else {
                ctx.rank() * 250 + j
            };
            v[at] = 1.0;
        }
        topkdsa_allreduce(ctx, &DenseGrad::new(v)?, k)
    })?;
    Ok(out[0].density())
}

fn main() -> oklab::Result<()> {
    println!("disjoint selections:  density {}", density(false)?);
    println!("identical selections: density {}", density(true)?);
    Ok(())
}
