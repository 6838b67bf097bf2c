//! Reusing a stale top-k threshold on the drifting gradient process: how far
//! the selected count strays from k as the threshold ages.

use oklab::sparse::{select_by_threshold, topk_exact};
use oklab::trainer::DriftingProcess;

fn main() -> oklab::Result<()> {
    let (n, k) = (100_000, 1000);
    let process = DriftingProcess::new(3, n);
    for start in [1u64, 257, 1025] {
        let (_, th) = topk_exact(&process.gradient(0, start), k)?;
        print!("threshold from t={start:<5}");
        for age in [0u64, 8, 16, 31] {
            let count = select_by_threshold(&process.gradient(0, start + age), th).nnz();
            print!("  +{age:<2} -> {count:>4}");
        }
        println!();
    }
    Ok(())
}
