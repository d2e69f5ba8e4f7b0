//! Closed-form error terms of the finite-key analysis.
//!
//! Every term is carried as its base-2 logarithm; the linear value is
//! derived from it and underflows to zero long before the logarithm loses
//! precision.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use super::params::ProtocolParams;
use crate::behavior::Alphabets;
use crate::error::{Error, Result};
use crate::guess::DualCertificate;

/// A non-negative error term, `linear = 2^log2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Epsilon {
    pub log2: f64,
    pub linear: f64,
}

impl Epsilon {
    pub fn from_log2(log2: f64) -> Self {
        Epsilon {
            log2,
            linear: log2.exp2(),
        }
    }

    pub fn from_ln(ln: f64) -> Self {
        Self::from_log2(ln / LN_2)
    }

    pub fn zero() -> Self {
        Epsilon {
            log2: f64::NEG_INFINITY,
            linear: 0.0,
        }
    }

    /// Sum of terms, combined in the log domain.
    pub fn sum(terms: &[Epsilon]) -> Self {
        let max = terms
            .iter()
            .map(|e| e.log2)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Self::zero();
        }
        if max.is_infinite() {
            return Self::from_log2(max);
        }
        let s: f64 = terms.iter().map(|e| (e.log2 - max).exp2()).sum();
        Self::from_log2(max + s.log2())
    }

    /// The term multiplied by `2^log2_factor`.
    pub fn scaled(self, log2_factor: f64) -> Self {
        Self::from_log2(self.log2 + log2_factor)
    }

    /// True when the term says nothing, i.e. it is at least 1.
    pub fn is_vacuous(&self) -> bool {
        self.log2 >= 0.0
    }
}

/// `h(p) = -p log2 p - (1-p) log2 (1-p)`, with `h(0) = h(1) = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

/// Probability that the filter passes a system whose statistics are more
/// than `eta` away from the accept set:
/// `|X||Y||U||V| exp(-t' eta^2 / (8 |X||Y|))` with `t' = k^2 p n / (|U||V|)`.
pub fn eps_filter(params: &ProtocolParams, a: &Alphabets) -> Result<Epsilon> {
    params.check_rates()?;
    let xy = (a.nx * a.ny) as f64;
    let uv = a.cells() as f64;
    let t = params.k * params.k * params.p * params.n as f64 / uv;
    Ok(Epsilon::from_ln(
        (xy * uv).ln() - t * params.eta * params.eta / (8.0 * xy),
    ))
}

/// [`eps_filter`] plus the two Chernoff terms bounding the chance that an
/// honest run misses the count floors.
pub fn eps_robust(params: &ProtocolParams, a: &Alphabets) -> Result<Epsilon> {
    let filter = eps_filter(params, a)?;
    let n = params.n as f64;
    let uv = a.cells() as f64;
    let q = 1.0 - params.p;
    let key = q * (1.0 - params.k).powi(2);
    let test = q * params.k * params.k / uv;
    Ok(Epsilon::sum(&[
        filter,
        Epsilon::from_ln(-2.0 * n * key * key),
        Epsilon::from_ln(uv.ln() - 2.0 * n * test * test),
    ]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenalizedGuess {
    pub value: f64,
    /// `|U||V| eta ||lambda||_1`.
    pub penalty: f64,
    /// The unclamped value exceeded 1.
    pub clamped: bool,
}

/// Worst per-round guessing probability among behaviors the filter
/// accepts: `p_guess_ref + |U||V| eta ||lambda||_1`, capped at 1.
pub fn penalized_guess(
    c: &DualCertificate,
    p_guess_ref: f64,
    eta: f64,
    a: &Alphabets,
) -> Result<PenalizedGuess> {
    if c.alphabets != *a {
        return Err(Error::AlphabetMismatch(c.alphabets, *a));
    }
    if !(eta >= 0.0) {
        return Err(Error::InvalidParameter(format!("eta must be non-negative, got {eta}")));
    }
    let penalty = a.cells() as f64 * eta * c.l1_norm;
    let raw = p_guess_ref + penalty;
    Ok(PenalizedGuess {
        value: raw.min(1.0),
        penalty,
        clamped: raw > 1.0,
    })
}

/// Failure probability of hashed-syndrome reconciliation on `n` bits:
/// `exp(-2 kappa^2 n) + 2^(n h(delta + kappa) - m)`.
pub fn ir_error_bound(n: u64, delta: f64, kappa: f64, m: u64) -> Result<Epsilon> {
    if !(kappa > 0.0) {
        return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
    }
    if !(delta >= 0.0 && delta + kappa < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "need delta >= 0 and delta + kappa < 1/2, got delta = {delta}, kappa = {kappa}"
        )));
    }
    let n = n as f64;
    Ok(Epsilon::sum(&[
        Epsilon::from_ln(-2.0 * kappa * kappa * n),
        Epsilon::from_log2(n * binary_entropy(delta + kappa) - m as f64),
    ]))
}

/// Distance from uniform of an `s`-bit hash of a source with min-entropy
/// `h_min`: `min(1, 2^(-(h_min - s)/2))`.
pub fn pa_distance(h_min: f64, s: u64) -> Epsilon {
    Epsilon::from_log2((-(h_min - s as f64) / 2.0).min(0.0))
}

/// Min-entropy left after `m` bits of public communication.
pub fn chain_rule(h_min: f64, m: u64) -> f64 {
    h_min - m as f64
}

/// Asymptotic key rate `-log2 p_guess - h(delta)`.
pub fn key_rate(p_guess: f64, delta: f64) -> Result<f64> {
    if !(p_guess > 0.0 && p_guess <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "guessing probability must lie in (0,1], got {p_guess}"
        )));
    }
    if !(0.0..=0.5).contains(&delta) {
        return Err(Error::InvalidParameter(format!(
            "delta must lie in [0,1/2], got {delta}"
        )));
    }
    Ok(-p_guess.log2() - binary_entropy(delta))
}

fn symmetric_dimension(a: &Alphabets) -> f64 {
    let d = (a.nx * a.ny * a.cells()) as f64;
    d * d - 1.0
}

/// `log2 (n+1)^(d^2-1)` with `d = |X||Y||U||V|`.
pub fn post_selection_factor(n: u64, a: &Alphabets) -> f64 {
    symmetric_dimension(a) * ((n as f64) + 1.0).log2()
}

/// `log2 binom(n + d^2 - 1, n)`, the tighter form of the same factor.
pub fn post_selection_factor_exact(n: u64, a: &Alphabets) -> f64 {
    let r = symmetric_dimension(a) as u64;
    let n = n as f64;
    (1..=r).map(|i| ((n + i as f64) / i as f64).log2()).sum()
}
