use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::ProtocolParams;
use super::toeplitz::Bits;
use crate::behavior::{Alphabets, Behavior, BehaviorEstimate};
use crate::error::{Error, Result};

/// Which inputs the parties drew from their key setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundTag {
    /// Both used the key input.
    Key,
    /// Both drew uniformly.
    Test,
    /// One of each; discarded.
    Mixed,
}

/// Public record of a run. Round `i` is `[u, v, x, y]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub alphabets: Alphabets,
    pub key_alice: usize,
    pub key_bob: usize,
    pub seed: u64,
    pub rounds: Vec<[u16; 4]>,
    pub tags: Vec<RoundTag>,
}

impl Transcript {
    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.alphabets;
        a.check()?;
        if self.rounds.len() != self.tags.len() {
            return Err(Error::LengthMismatch(self.rounds.len(), self.tags.len()));
        }
        if self.key_alice >= a.nu || self.key_bob >= a.nv {
            return Err(Error::InvalidParameter("key inputs outside the alphabets".into()));
        }
        let bounds = [a.nu, a.nv, a.nx, a.ny];
        for (i, (r, t)) in self.rounds.iter().zip(&self.tags).enumerate() {
            if r.iter().zip(bounds).any(|(&s, b)| s as usize >= b) {
                return Err(Error::InvalidParameter(format!("round {i} has a symbol out of range")));
            }
            if *t == RoundTag::Key && (r[0] as usize != self.key_alice || r[1] as usize != self.key_bob) {
                return Err(Error::InvalidParameter(format!("key round {i} does not use the key inputs")));
            }
        }
        Ok(())
    }

    pub fn count(&self, tag: RoundTag) -> u64 {
        self.tags.iter().filter(|&&t| t == tag).count() as u64
    }

    /// Outcome counts over the rounds carrying `tag`.
    pub fn counts(&self, tag: RoundTag) -> BehaviorEstimate {
        let mut e = BehaviorEstimate::new(self.alphabets);
        for (r, _) in self.rounds.iter().zip(&self.tags).filter(|(_, &t)| t == tag) {
            e.record(r[0] as usize, r[1] as usize, r[2] as usize, r[3] as usize);
        }
        e
    }

    /// Alice's and Bob's raw keys, the outputs of the key rounds. Needs
    /// binary outputs.
    pub fn raw_keys(&self) -> Result<(Bits, Bits)> {
        if self.alphabets.nx != 2 || self.alphabets.ny != 2 {
            return Err(Error::InvalidParameter("raw keys need binary outputs".into()));
        }
        let key = self.rounds.iter().zip(&self.tags).filter(|(_, &t)| t == RoundTag::Key);
        let alice = key.clone().map(|(r, _)| r[2] == 1).collect();
        let bob = key.map(|(r, _)| r[3] == 1).collect();
        Ok((alice, bob))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: Transcript = serde_json::from_str(s)?;
        t.validate()?;
        Ok(t)
    }
}

/// Plays `params.n` rounds against the device `b`.
///
/// Each party keeps its key input with probability `1 - k` and otherwise
/// draws uniformly; outcomes are drawn from `b` at the chosen inputs. One
/// ChaCha8 stream seeded from `params.seed` drives everything.
pub fn simulate_rounds(b: &Behavior, params: &ProtocolParams) -> Result<Transcript> {
    let a = b.alphabets();
    params.validate_for(&a)?;
    if [a.nu, a.nv, a.nx, a.ny].iter().any(|&s| s > u16::MAX as usize + 1) {
        return Err(Error::InvalidParameter("alphabets too large for a transcript".into()));
    }
    let report = b.validate();
    if !report.is_valid() {
        return Err(Error::InvalidBehavior(report.to_string()));
    }
    let n = usize::try_from(params.n)
        .map_err(|_| Error::InvalidParameter("round count does not fit in memory".into()))?;

    let block = a.nx * a.ny;
    let cumulative: Vec<Vec<f64>> = (0..a.cells())
        .map(|c| {
            let cell = &b.table()[c * block..(c + 1) * block];
            cell.iter()
                .scan(0.0, |acc, &p| {
                    *acc += p;
                    Some(*acc)
                })
                .collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut rounds = Vec::with_capacity(n);
    let mut tags = Vec::with_capacity(n);
    for _ in 0..n {
        let alice_test = rng.gen::<f64>() < params.k;
        let u = if alice_test { rng.gen_range(0..a.nu) } else { params.key_alice };
        let bob_test = rng.gen::<f64>() < params.k;
        let v = if bob_test { rng.gen_range(0..a.nv) } else { params.key_bob };
        let cdf = &cumulative[u * a.nv + v];
        let r = rng.gen::<f64>() * cdf[block - 1];
        let o = cdf.partition_point(|&c| c <= r).min(block - 1);
        rounds.push([u as u16, v as u16, (o / a.ny) as u16, (o % a.ny) as u16]);
        tags.push(match (alice_test, bob_test) {
            (false, false) => RoundTag::Key,
            (true, true) => RoundTag::Test,
            _ => RoundTag::Mixed,
        });
    }
    Ok(Transcript {
        alphabets: a,
        key_alice: params.key_alice,
        key_bob: params.key_bob,
        seed: params.seed,
        rounds,
        tags,
    })
}
