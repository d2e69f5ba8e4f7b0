//! Tensor products of dual certificates.
//!
//! A certificate `lambda_i` for each of several systems gives the
//! certificate `lambda_1 ⊗ ... ⊗ lambda_n` for the systems used side by
//! side. Products of guessing certificates bound the joint guessing
//! probability; products of bit-distance certificates bound the distance
//! from uniform of the XOR of the bits. The product vector is never
//! stored: evaluation walks the joint table and multiplies factor entries.

use serde::{Deserialize, Serialize};

use crate::behavior::{Alphabets, Behavior};
use crate::error::{Error, Result};
use crate::guess::{CertificateKind, DualCertificate};

/// Largest factor count for which [`ComposedCertificate::materialize`]
/// will build the product vector.
pub const MAX_MATERIALIZED_FACTORS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositionKind {
    GuessProduct,
    Xor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposedCertificate {
    kind: CompositionKind,
    factors: Vec<DualCertificate>,
    alphabets: Alphabets,
}

impl ComposedCertificate {
    /// Product of guessing certificates, in the order given.
    pub fn guess_product(factors: Vec<DualCertificate>) -> Result<Self> {
        Self::build(CompositionKind::GuessProduct, CertificateKind::Guess, factors)
    }

    /// XOR of the bits certified by bit-distance certificates.
    pub fn xor(factors: Vec<DualCertificate>) -> Result<Self> {
        Self::build(CompositionKind::Xor, CertificateKind::BitDistance, factors)
    }

    fn build(kind: CompositionKind, want: CertificateKind, factors: Vec<DualCertificate>) -> Result<Self> {
        let Some(first) = factors.first() else {
            return Err(Error::InvalidParameter("composition of no certificates".into()));
        };
        let mut alphabets = first.alphabets;
        for (i, c) in factors.iter().enumerate() {
            if c.kind != want {
                return Err(Error::CertificateKind {
                    expected: want.name(),
                    got: c.kind.name(),
                });
            }
            if c.lambda.len() != c.alphabets.table_len() {
                return Err(Error::ShapeMismatch {
                    expected: c.alphabets.table_len(),
                    got: c.lambda.len(),
                });
            }
            if i > 0 {
                alphabets = alphabets.product(&c.alphabets);
            }
        }
        Ok(ComposedCertificate {
            kind,
            factors,
            alphabets,
        })
    }

    pub fn kind(&self) -> CompositionKind {
        self.kind
    }

    pub fn factors(&self) -> &[DualCertificate] {
        &self.factors
    }

    /// The product alphabet; the first factor is the most significant digit.
    pub fn alphabets(&self) -> Alphabets {
        self.alphabets
    }

    /// Entry of the product vector at a joint table index.
    pub fn lambda_at(&self, index: usize) -> f64 {
        let (u, v, x, y) = self.alphabets.unindex(index);
        self.entry(u, v, x, y)
    }

    fn entry(&self, mut u: usize, mut v: usize, mut x: usize, mut y: usize) -> f64 {
        let mut prod = 1.0;
        // Peel digits off the least significant (last) factor first.
        for c in self.factors.iter().rev() {
            let a = c.alphabets;
            let i = a.index(u % a.nu, v % a.nv, x % a.nx, y % a.ny);
            prod *= c.lambda[i];
            if prod == 0.0 {
                return 0.0;
            }
            u /= a.nu;
            v /= a.nv;
            x /= a.nx;
            y /= a.ny;
        }
        prod
    }

    /// `P . (lambda_1 ⊗ ... ⊗ lambda_n)`, accumulated in table order.
    pub fn raw_value(&self, b: &Behavior) -> Result<f64> {
        if b.alphabets() != self.alphabets {
            return Err(Error::AlphabetMismatch(self.alphabets, b.alphabets()));
        }
        let mut acc = 0.0;
        for (t, &p) in b.table().iter().enumerate() {
            if p != 0.0 {
                acc += p * self.lambda_at(t);
            }
        }
        Ok(acc)
    }

    /// The bound for `b`: a joint guessing probability, or the distance
    /// from uniform of the XOR of the bits.
    ///
    /// Valid for every behavior over the product alphabet, including ones
    /// that do not factorize.
    pub fn evaluate(&self, b: &Behavior) -> Result<f64> {
        let raw = self.raw_value(b)?;
        Ok(match self.kind {
            CompositionKind::GuessProduct => raw,
            CompositionKind::Xor => 0.5 * raw,
        })
    }

    /// The product vector itself, refused beyond a few factors.
    pub fn materialize(&self) -> Result<Vec<f64>> {
        if self.factors.len() > MAX_MATERIALIZED_FACTORS {
            return Err(Error::InvalidParameter(format!(
                "refusing to materialize a product of {} certificates",
                self.factors.len()
            )));
        }
        Ok((0..self.alphabets.table_len()).map(|t| self.lambda_at(t)).collect())
    }
}

/// Bound on the joint guessing probability of all factors' key symbols.
pub fn tensor_guess_bound(factors: &[DualCertificate], b: &Behavior) -> Result<f64> {
    ComposedCertificate::guess_product(factors.to_vec())?.evaluate(b)
}

/// Bound on the distance from uniform of `f(X1) xor g(X2)`.
pub fn xor_bound(c1: &DualCertificate, c2: &DualCertificate, b: &Behavior) -> Result<f64> {
    xor_bound_n(&[c1.clone(), c2.clone()], b)
}

/// The two-system XOR bound applied repeatedly: `½ P . (⊗ lambda_i)`.
pub fn xor_bound_n(factors: &[DualCertificate], b: &Behavior) -> Result<f64> {
    ComposedCertificate::xor(factors.to_vec())?.evaluate(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NFoldEntropy {
    /// Certified min-entropy of the `n` raw-key symbols.
    pub bits: f64,
    pub copies: u64,
    /// Single-copy guessing bound.
    pub single_guess: f64,
    /// The single-copy bound reached 1 and the entropy was set to 0.
    pub saturated: bool,
}

/// `n * (-log2 evaluate(c, b_single))`, the min-entropy of `n` independent
/// copies by additivity of the product bound.
pub fn nfold_key_entropy(c: &DualCertificate, b_single: &Behavior, n: u64) -> Result<NFoldEntropy> {
    if n == 0 {
        return Err(Error::InvalidParameter("copy count must be at least 1".into()));
    }
    if c.kind != CertificateKind::Guess {
        return Err(Error::CertificateKind {
            expected: CertificateKind::Guess.name(),
            got: c.kind.name(),
        });
    }
    let p = c.raw_value(b_single)?;
    if !(p > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "guessing bound {p} is not positive"
        )));
    }
    let saturated = p >= 1.0;
    let bits = if saturated { 0.0 } else { n as f64 * -p.log2() };
    Ok(NFoldEntropy {
        bits,
        copies: n,
        single_guess: p,
        saturated,
    })
}
