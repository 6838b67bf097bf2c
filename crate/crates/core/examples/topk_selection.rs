//! Exact top-k, threshold selection and the sparse wire format.

use oklab::sparse::{select_by_threshold, topk_exact, wire_decode, wire_encode};
use oklab::DenseGrad;

fn main() -> oklab::Result<()> {
    let g = DenseGrad::new(vec![0.5, -2.0, 0.1, 1.0, -1.0, 0.25, 3.0, 1.0])?;

    let (top, th) = topk_exact(&g, 3)?;
    println!(
        "top-3 indices {:?} values {:?}",
        top.indices(),
        top.values()
    );
    println!("threshold {th}");

    // the cut ties with index 4, so threshold selection picks one more
    let again = select_by_threshold(&g, th);
    println!("|v| >= {th}: {:?}", again.indices());

    let words = wire_encode(&top);
    println!("wire: {} words ({} payload)", words.len(), 2 * top.nnz());
    let back = wire_decode(&words, g.len())?;
    assert_eq!(back, top);
    Ok(())
}
