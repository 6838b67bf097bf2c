//! Bit-exact interchange format for sparse gradients.
//!
//! Layout, all little-endian 32-bit words:
//!
//! ```text
//! [nnz] [index_0 .. index_{nnz-1}] [value_0 .. value_{nnz-1}]
//! ```
//!
//! Indices are `u32`, values are IEEE-754 `f32`. The single `nnz` word is the
//! header; the `2 * nnz` words after it are payload. Values are narrowed to
//! `f32` on encode, so only `f32`-representable values survive a round trip
//! unchanged.

use super::SparseGrad;
use crate::error::{Error, Result};

pub const HEADER_WORDS: usize = 1;

pub fn payload_words(s: &SparseGrad) -> usize {
    2 * s.nnz()
}

pub fn wire_encode(s: &SparseGrad) -> Vec<u32> {
    let mut words = Vec::with_capacity(HEADER_WORDS + payload_words(s));
    words.push(s.nnz() as u32);
    words.extend_from_slice(s.indices());
    words.extend(s.values().iter().map(|&v| (v as f32).to_bits()));
    words
}

pub fn wire_decode(words: &[u32], n: usize) -> Result<SparseGrad> {
    let (&nnz, rest) = words
        .split_first()
        .ok_or_else(|| Error::Decode("missing nnz header".into()))?;
    let nnz = nnz as usize;
    if rest.len() != 2 * nnz {
        return Err(Error::Decode(format!(
            "header says {nnz} entries but {} payload words follow",
            rest.len()
        )));
    }
    let (indices, values) = rest.split_at(nnz);
    let values: Vec<f64> = values.iter().map(|&w| f32::from_bits(w) as f64).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Decode("non-finite value".into()));
    }
    SparseGrad::new(n, indices.to_vec(), values).map_err(|e| Error::Decode(e.to_string()))
}

pub fn encode_bytes(s: &SparseGrad) -> Vec<u8> {
    wire_encode(s)
        .iter()
        .flat_map(|w| w.to_le_bytes())
        .collect()
}

pub fn decode_bytes(bytes: &[u8], n: usize) -> Result<SparseGrad> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Decode(format!(
            "buffer length {} is not a multiple of 4",
            bytes.len()
        )));
    }
    let words: Vec<u32> = bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    wire_decode(&words, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_entries_take_four_payload_words() {
        let s = SparseGrad::new(8, vec![1, 4], vec![3.0, 4.0]).unwrap();
        let words = wire_encode(&s);
        assert_eq!(words.len() - HEADER_WORDS, 4);
        assert_eq!(payload_words(&s), 4);
        assert_eq!(wire_decode(&words, 8).unwrap(), s);
    }

    #[test]
    fn byte_layout_is_little_endian() {
        let s = SparseGrad::new(8, vec![1, 4], vec![3.0, 4.0]).unwrap();
        let bytes = encode_bytes(&s);
        let mut expect = Vec::new();
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&4u32.to_le_bytes());
        expect.extend_from_slice(&3.0f32.to_le_bytes());
        expect.extend_from_slice(&4.0f32.to_le_bytes());
        assert_eq!(bytes, expect);
        assert_eq!(decode_bytes(&bytes, 8).unwrap(), s);
    }

    #[test]
    fn empty_has_no_payload() {
        let s = SparseGrad::empty(5);
        let words = wire_encode(&s);
        assert_eq!(words, vec![0]);
        assert_eq!(wire_decode(&words, 5).unwrap(), s);
    }

    #[test]
    fn malformed_buffers_are_rejected() {
        assert!(matches!(wire_decode(&[], 4), Err(Error::Decode(_))));
        assert!(matches!(wire_decode(&[2, 1, 0], 4), Err(Error::Decode(_))));
        let unsorted = [2, 3, 1, 1.0f32.to_bits(), 2.0f32.to_bits()];
        assert!(matches!(wire_decode(&unsorted, 4), Err(Error::Decode(_))));
        let out_of_range = [1, 9, 1.0f32.to_bits()];
        assert!(matches!(
            wire_decode(&out_of_range, 4),
            Err(Error::Decode(_))
        ));
        assert!(matches!(
            wire_decode(&[1, 0, f32::NAN.to_bits()], 4),
            Err(Error::Decode(_))
        ));
        assert!(matches!(decode_bytes(&[0, 0, 0], 4), Err(Error::Decode(_))));
    }

    proptest! {
        #[test]
        fn round_trip(
            entries in proptest::collection::btree_map(0u32..100_000, -1e6f32..1e6f32, 0..1000)
        ) {
            let s = SparseGrad::from_pairs(100_000, entries.into_iter().map(|(i, v)| (i, v as f64))).unwrap();
            prop_assert_eq!(wire_decode(&wire_encode(&s), 100_000).unwrap(), s.clone());
            prop_assert_eq!(decode_bytes(&encode_bytes(&s), 100_000).unwrap(), s);
        }
    }
}
