//! Syndrome reconciliation by exhaustive coset search.

use bitvec::prelude::*;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::toeplitz::{toeplitz_hash, Bits, HashSeed};
use crate::error::{Error, Result};

/// Longest block the coset search accepts.
pub const MAX_RECONCILE_BITS: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reconciliation {
    /// Bob's corrected string `y'`.
    pub corrected: Bits,
    /// `y' == x`.
    pub success: bool,
    /// Hamming distance from `y` to `y'`.
    pub distance: u32,
    /// Coset members at that distance.
    pub ties: u64,
    pub coset_size: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub word: Bits,
    pub distance: u32,
    pub ties: u64,
    pub coset_size: u64,
}

/// Alice's message: the hash of her string.
pub fn syndrome(x: &BitSlice<u64, Lsb0>, seed: &HashSeed) -> Result<Bits> {
    toeplitz_hash(seed, x)
}

/// Bob's side: the member of `{z : T z = syndrome}` closest to `y`, with
/// ties broken uniformly using `rng`.
pub fn decode(
    y: &BitSlice<u64, Lsb0>,
    syndrome: &BitSlice<u64, Lsb0>,
    seed: &HashSeed,
    rng: &mut impl Rng,
) -> Result<Decoded> {
    let n = seed.input_len();
    if n > MAX_RECONCILE_BITS {
        return Err(Error::InvalidParameter(format!(
            "coset search is limited to {MAX_RECONCILE_BITS} bits, got {n}"
        )));
    }
    if y.len() != n {
        return Err(Error::LengthMismatch(y.len(), n));
    }
    if syndrome.len() != seed.output_len() {
        return Err(Error::LengthMismatch(syndrome.len(), seed.output_len()));
    }
    let mut rows: Vec<(u32, bool)> = (0..seed.output_len())
        .map(|j| {
            let mask = (0..n).fold(0u32, |m, i| m | ((seed.entry(j, i) as u32) << i));
            (mask, syndrome[j])
        })
        .collect();

    // Reduced row echelon form; `pivots[r]` is the column of row r.
    let mut pivots = Vec::new();
    let mut r = 0;
    for col in 0..n {
        let bit = 1u32 << col;
        let Some(p) = (r..rows.len()).find(|&i| rows[i].0 & bit != 0) else {
            continue;
        };
        rows.swap(r, p);
        let (pm, pb) = rows[r];
        for (i, row) in rows.iter_mut().enumerate() {
            if i != r && row.0 & bit != 0 {
                row.0 ^= pm;
                row.1 ^= pb;
            }
        }
        pivots.push(col);
        r += 1;
    }
    if rows[r..].iter().any(|&(_, b)| b) {
        return Err(Error::InvalidParameter("syndrome is not in the image of the hash".into()));
    }

    let pivot_mask = pivots.iter().fold(0u32, |m, &c| m | (1 << c));
    let mut z = pivots
        .iter()
        .enumerate()
        .fold(0u32, |m, (i, &c)| m | ((rows[i].1 as u32) << c));
    let kernel: Vec<u32> = (0..n)
        .filter(|c| pivot_mask & (1 << c) == 0)
        .map(|f| {
            pivots
                .iter()
                .enumerate()
                .fold(1u32 << f, |m, (i, &c)| m | (((rows[i].0 >> f) & 1) << c))
        })
        .collect();

    let target = to_mask(y);
    let mut best = z;
    let mut best_d = (z ^ target).count_ones();
    let mut ties = 1u64;
    let size = 1u64 << kernel.len();
    // Gray-code walk over the coset.
    for g in 1..size {
        z ^= kernel[g.trailing_zeros() as usize];
        let d = (z ^ target).count_ones();
        if d < best_d {
            best_d = d;
            best = z;
            ties = 1;
        } else if d == best_d {
            ties += 1;
            if rng.gen_range(0..ties) == 0 {
                best = z;
            }
        }
    }
    Ok(Decoded {
        word: from_mask(best, n),
        distance: best_d,
        ties,
        coset_size: size,
    })
}

/// One reconciliation: Alice sends `T x`, Bob decodes from `y`.
pub fn reconcile(
    x: &BitSlice<u64, Lsb0>,
    y: &BitSlice<u64, Lsb0>,
    seed: &HashSeed,
    rng: &mut impl Rng,
) -> Result<Reconciliation> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let s = syndrome(x, seed)?;
    let d = decode(y, &s, seed, rng)?;
    Ok(Reconciliation {
        success: d.word.as_bitslice() == x,
        corrected: d.word,
        distance: d.distance,
        ties: d.ties,
        coset_size: d.coset_size,
    })
}

fn to_mask(b: &BitSlice<u64, Lsb0>) -> u32 {
    b.iter().by_vals().enumerate().fold(0, |m, (i, v)| m | ((v as u32) << i))
}

fn from_mask(mask: u32, n: usize) -> Bits {
    (0..n).map(|i| mask >> i & 1 == 1).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn decoded_word_has_the_syndrome() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let seed = HashSeed::random(12, 7, &mut rng).unwrap();
            let x: Bits = (0..12).map(|_| rng.gen::<bool>()).collect();
            let y: Bits = x.iter().by_vals().map(|b| b ^ rng.gen_bool(0.2)).collect();
            let r = reconcile(&x, &y, &seed, &mut rng).unwrap();
            assert_eq!(syndrome(&r.corrected, &seed).unwrap(), syndrome(&x, &seed).unwrap());
            let dxy = (to_mask(&x) ^ to_mask(&y)).count_ones();
            assert!(r.distance <= dxy);
        }
    }
}
