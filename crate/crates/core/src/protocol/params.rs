use serde::{Deserialize, Serialize};

use crate::behavior::Alphabets;
use crate::error::{Error, Result};
use crate::npa::Level;

/// Knobs of one protocol run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Number of rounds.
    pub n: u64,
    /// Probability that a party picks its input uniformly instead of the key input.
    pub k: f64,
    /// Fraction of the expected counts below which the run aborts.
    pub p: f64,
    pub eta: f64,
    pub delta_max: f64,
    pub kappa: f64,
    /// Reconciliation message length in bits.
    pub m: u64,
    /// Final key length in bits.
    pub s: u64,
    pub level: Level,
    pub seed: u64,
    /// Alice's key input `ū`.
    pub key_alice: usize,
    /// Bob's key input `v̄`.
    pub key_bob: usize,
    /// Guessing threshold of the accept set. `None` uses the reference
    /// certificate's bound at its own behavior.
    pub guess_threshold: Option<f64>,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            n: 100_000,
            k: 0.2,
            p: 0.9,
            eta: 0.01,
            delta_max: 0.02,
            kappa: 0.05,
            m: 0,
            s: 0,
            level: Level::Two,
            seed: 0,
            key_alice: 0,
            key_bob: 2,
            guess_threshold: None,
        }
    }
}

impl ProtocolParams {
    /// Checks the invariants that do not depend on the alphabets.
    pub fn validate(&self) -> Result<()> {
        self.check_rates()?;
        if !(self.eta > 0.0) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.kappa > 0.0) {
            return bad(format!("kappa must be positive, got {}", self.kappa));
        }
        if !(0.0..=1.0).contains(&self.delta_max) {
            return bad(format!("delta_max must lie in [0,1], got {}", self.delta_max));
        }
        if self.m > self.n {
            return bad(format!("m = {} exceeds n = {}", self.m, self.n));
        }
        if let Some(t) = self.guess_threshold {
            if !t.is_finite() {
                return bad("guess threshold must be finite".into());
            }
        }
        Ok(())
    }

    /// The subset of checks the closed-form epsilons need.
    pub(crate) fn check_rates(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k < 1.0) {
            return bad(format!("k must lie in (0,1), got {}", self.k));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return bad(format!("p must lie in (0,1), got {}", self.p));
        }
        if !(self.eta >= 0.0) {
            return bad(format!("eta must be non-negative, got {}", self.eta));
        }
        Ok(())
    }

    pub fn validate_for(&self, a: &Alphabets) -> Result<()> {
        self.validate()?;
        if self.key_alice >= a.nu {
            return Err(Error::IndexOutOfRange {
                what: "Alice key input",
                index: self.key_alice,
                bound: a.nu,
            });
        }
        if self.key_bob >= a.nv {
            return Err(Error::IndexOutOfRange {
                what: "Bob key input",
                index: self.key_bob,
                bound: a.nv,
            });
        }
        Ok(())
    }

    /// `(1-k)^2 p n`: the least number of key rounds accepted.
    pub fn key_round_floor(&self) -> f64 {
        (1.0 - self.k).powi(2) * self.p * self.n as f64
    }

    /// `k^2 p n / (|U||V|)`: the least number of test rounds accepted per input pair.
    pub fn test_cell_floor(&self, a: &Alphabets) -> f64 {
        self.k * self.k * self.p * self.n as f64 / a.cells() as f64
    }
}

fn bad<T>(msg: String) -> Result<T> {
    Err(Error::InvalidParameter(msg))
}
