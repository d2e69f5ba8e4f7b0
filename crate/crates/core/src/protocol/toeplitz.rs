//! Toeplitz hashing over GF(2).

use bitvec::prelude::*;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Bits = BitVec<u64, Lsb0>;

/// `n + m - 1` bits fixing an `m x n` Toeplitz matrix; entry `(j, i)` is
/// bit `j + n - 1 - i`, constant along diagonals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashSeed {
    input_len: usize,
    output_len: usize,
    bits: Bits,
}

impl HashSeed {
    pub fn new(input_len: usize, output_len: usize, bits: Bits) -> Result<Self> {
        if input_len == 0 {
            return Err(Error::InvalidParameter("hash input length must be positive".into()));
        }
        let want = input_len + output_len - 1;
        if bits.len() != want {
            return Err(Error::LengthMismatch(bits.len(), want));
        }
        Ok(HashSeed {
            input_len,
            output_len,
            bits,
        })
    }

    pub fn random(input_len: usize, output_len: usize, rng: &mut impl RngCore) -> Result<Self> {
        let len = (input_len + output_len).saturating_sub(1);
        let mut bits = Bits::with_capacity(len);
        while bits.len() < len {
            let w = rng.next_u64();
            let take = (len - bits.len()).min(64);
            bits.extend_from_bitslice(&w.view_bits::<Lsb0>()[..take]);
        }
        Self::new(input_len, output_len, bits)
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn output_len(&self) -> usize {
        self.output_len
    }

    pub fn bits(&self) -> &BitSlice<u64, Lsb0> {
        &self.bits
    }

    /// Matrix entry at row `j`, column `i`.
    pub fn entry(&self, j: usize, i: usize) -> bool {
        self.bits[j + self.input_len - 1 - i]
    }
}

/// `T x` over GF(2): output bit `j` is the parity of row `j` AND `x`.
pub fn toeplitz_hash(seed: &HashSeed, x: &BitSlice<u64, Lsb0>) -> Result<Bits> {
    let n = seed.input_len;
    if x.len() != n {
        return Err(Error::LengthMismatch(x.len(), n));
    }
    // Row j against x is the window seed[j..j+n] against x reversed.
    let mut rev = Bits::with_capacity(n);
    rev.extend(x.iter().by_vals().rev());
    let chunks: Vec<(usize, usize, u64)> = (0..n)
        .step_by(64)
        .map(|c| {
            let len = (n - c).min(64);
            (c, len, rev[c..c + len].load_le::<u64>())
        })
        .collect();
    let mut out = Bits::with_capacity(seed.output_len);
    for j in 0..seed.output_len {
        let mut acc = 0u64;
        for &(c, len, xr) in &chunks {
            if xr != 0 {
                acc ^= seed.bits[j + c..j + c + len].load_le::<u64>() & xr;
            }
        }
        out.push(acc.count_ones() & 1 == 1);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(n, m) in &[(1, 1), (5, 3), (70, 9), (130, 66)] {
            let seed = HashSeed::random(n, m, &mut rng).unwrap();
            let x = HashSeed::random(n, 1, &mut rng).unwrap().bits()[..n].to_bitvec();
            let h = toeplitz_hash(&seed, &x).unwrap();
            for j in 0..m {
                let mut b = false;
                for i in 0..n {
                    b ^= seed.entry(j, i) & x[i];
                }
                assert_eq!(h[j], b, "n={n} m={m} j={j}");
            }
        }
    }
}
