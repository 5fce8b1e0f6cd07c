//! Uncompressed COCO-style run-length encoding of binary masks.
//!
//! Counts alternate between runs of zeros and runs of ones in row-major
//! pixel order, starting with a (possibly empty) run of zeros. The canonical
//! form has no zero-length runs other than the leading one.

use crate::error::{Error, Result};
use crate::raster::Mask;

pub fn encode_rle(mask: &Mask) -> Vec<u32> {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for &bit in mask.as_slice() {
        if bit != current {
            counts.push(run);
            run = 0;
            current = bit;
        }
        run += 1;
    }
    if run > 0 || counts.is_empty() {
        counts.push(run);
    }
    counts
}

pub fn decode_rle(counts: &[u32], width: usize, height: usize) -> Result<Mask> {
    let expected = (width * height) as u64;
    let sum: u64 = counts.iter().map(|&c| c as u64).sum();
    if sum != expected {
        return Err(Error::RleSumMismatch { sum, expected });
    }
    let mut data = Vec::with_capacity(width * height);
    let mut bit = false;
    for &c in counts {
        data.extend(std::iter::repeat_n(bit, c as usize));
        bit = !bit;
    }
    Mask::from_vec(width, height, data)
}

/// Linear indices of the set pixels, ascending, without materializing the mask.
pub fn rle_pixels(counts: &[u32], width: usize, height: usize) -> Result<Vec<u32>> {
    let expected = (width * height) as u64;
    let sum: u64 = counts.iter().map(|&c| c as u64).sum();
    if sum != expected {
        return Err(Error::RleSumMismatch { sum, expected });
    }
    let mut out = Vec::new();
    let mut pos = 0u32;
    for (i, &c) in counts.iter().enumerate() {
        if i % 2 == 1 {
            out.extend(pos..pos + c);
        }
        pos += c;
    }
    Ok(out)
}

/// Encodes a sorted list of set-pixel indices.
pub fn encode_pixels(pixels: &[u32], len: usize) -> Vec<u32> {
    let mut counts = Vec::new();
    let mut pos = 0u32;
    let mut i = 0;
    while i < pixels.len() {
        let start = pixels[i];
        let mut end = start + 1;
        i += 1;
        while i < pixels.len() && pixels[i] == end {
            end += 1;
            i += 1;
        }
        counts.push(start - pos);
        counts.push(end - start);
        pos = end;
    }
    let tail = len as u32 - pos;
    if tail > 0 || counts.is_empty() {
        counts.push(tail);
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encodes_by_definition() {
        let m = Mask::from_vec(4, 1, vec![false, true, true, false]).unwrap();
        assert_eq!(encode_rle(&m), vec![1, 2, 1]);
        let ones = Mask::filled(2, 2, true);
        assert_eq!(encode_rle(&ones), vec![0, 4]);
        let zeros = Mask::filled(2, 2, false);
        assert_eq!(encode_rle(&zeros), vec![4]);
    }

    #[test]
    fn sum_mismatch_rejected() {
        assert!(matches!(
            decode_rle(&[1, 2], 2, 2),
            Err(Error::RleSumMismatch { sum: 3, expected: 4 })
        ));
    }

    #[test]
    fn non_canonical_decodes() {
        // Interior zero-length runs are accepted and dropped on re-encode.
        let m = decode_rle(&[1, 1, 0, 1, 1], 4, 1).unwrap();
        assert_eq!(m.as_slice(), &[false, true, true, false]);
        assert_eq!(encode_rle(&m), vec![1, 2, 1]);
    }

    proptest! {
        #[test]
        fn roundtrip_random_masks(bits in proptest::collection::vec(any::<bool>(), 64 * 64)) {
            let m = Mask::from_vec(64, 64, bits).unwrap();
            let counts = encode_rle(&m);
            prop_assert_eq!(counts.iter().map(|&c| c as usize).sum::<usize>(), 64 * 64);
            prop_assert!(counts.iter().skip(1).all(|&c| c > 0));
            prop_assert_eq!(&decode_rle(&counts, 64, 64).unwrap(), &m);
            let pixels: Vec<u32> = (0..m.len() as u32).filter(|&i| m.as_slice()[i as usize]).collect();
            prop_assert_eq!(&rle_pixels(&counts, 64, 64).unwrap(), &pixels);
            prop_assert_eq!(encode_pixels(&pixels, m.len()), counts);
        }
    }
}
