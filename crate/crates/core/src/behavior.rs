//! Bipartite conditional distributions `P(x,y|u,v)` over finite alphabets.
//!
//! Tables are stored flat in `(u, v, x, y)` row-major order. Joint
//! distributions weight every input pair uniformly, `P(x,y,u,v) =
//! P(x,y|u,v) / (nu * nv)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Entries this far below zero are treated as rounding noise and clamped.
pub const CLAMP_TOLERANCE: f64 = 1e-12;
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;
pub const SIGNALLING_TOLERANCE: f64 = 1e-9;

/// Outcome and input counts for Alice (`nx`, `nu`) and Bob (`ny`, `nv`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Alphabets {
    pub nx: usize,
    pub ny: usize,
    pub nu: usize,
    pub nv: usize,
}

impl Alphabets {
    pub fn new(nx: usize, ny: usize, nu: usize, nv: usize) -> Result<Self> {
        let a = Alphabets { nx, ny, nu, nv };
        a.check()?;
        Ok(a)
    }

    /// Two binary-outcome inputs per party.
    pub const CHSH: Alphabets = Alphabets {
        nx: 2,
        ny: 2,
        nu: 2,
        nv: 2,
    };

    /// Binary outcomes, Alice {U0, U1}, Bob {V0, V1, V2}.
    pub const EKERT: Alphabets = Alphabets {
        nx: 2,
        ny: 2,
        nu: 2,
        nv: 3,
    };

    pub fn check(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nu == 0 || self.nv == 0 {
            return Err(Error::InvalidAlphabets(*self));
        }
        Ok(())
    }

    pub fn table_len(&self) -> usize {
        self.nu * self.nv * self.nx * self.ny
    }

    /// Number of input pairs.
    pub fn cells(&self) -> usize {
        self.nu * self.nv
    }

    /// Product of all four counts, the `d` of the post-selection factor.
    pub fn dimension(&self) -> usize {
        self.table_len()
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize, x: usize, y: usize) -> usize {
        ((u * self.nv + v) * self.nx + x) * self.ny + y
    }

    /// Inverse of [`Alphabets::index`].
    #[inline]
    pub fn unindex(&self, i: usize) -> (usize, usize, usize, usize) {
        let y = i % self.ny;
        let r = i / self.ny;
        let x = r % self.nx;
        let r = r / self.nx;
        let v = r % self.nv;
        (r / self.nv, v, x, y)
    }

    /// Alphabet of two systems used side by side; the first factor is the
    /// most significant digit of every combined symbol.
    pub fn product(&self, other: &Alphabets) -> Alphabets {
        Alphabets {
            nx: self.nx * other.nx,
            ny: self.ny * other.ny,
            nu: self.nu * other.nu,
            nv: self.nv * other.nv,
        }
    }

    pub fn check_inputs(&self, u: usize, v: usize) -> Result<()> {
        if u >= self.nu {
            return Err(Error::IndexOutOfRange {
                what: "alice input",
                index: u,
                bound: self.nu,
            });
        }
        if v >= self.nv {
            return Err(Error::IndexOutOfRange {
                what: "bob input",
                index: v,
                bound: self.nv,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Behavior {
    alphabets: Alphabets,
    table: Vec<f64>,
    /// Free-form provenance (generator, rho, angles).
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl Behavior {
    /// Wraps a flat `(u,v,x,y)` table. Only shape and finiteness are checked
    /// here; use [`Behavior::validate`] for the probabilistic invariants.
    pub fn new(alphabets: Alphabets, mut table: Vec<f64>) -> Result<Self> {
        alphabets.check()?;
        if table.len() != alphabets.table_len() {
            return Err(Error::ShapeMismatch {
                expected: alphabets.table_len(),
                got: table.len(),
            });
        }
        for p in table.iter_mut() {
            if !p.is_finite() {
                return Err(Error::InvalidBehavior("non-finite entry".into()));
            }
            if *p < 0.0 && *p >= -CLAMP_TOLERANCE {
                *p = 0.0;
            }
        }
        Ok(Behavior {
            alphabets,
            table,
            meta: BTreeMap::new(),
        })
    }

    pub fn from_fn(
        alphabets: Alphabets,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        alphabets.check()?;
        let table = (0..alphabets.table_len())
            .map(|i| {
                let (u, v, x, y) = alphabets.unindex(i);
                f(u, v, x, y)
            })
            .collect();
        Behavior::new(alphabets, table)
    }

    /// Independent uniformly random outcomes for every input pair.
    pub fn uniform(alphabets: Alphabets) -> Result<Self> {
        let w = 1.0 / (alphabets.nx * alphabets.ny) as f64;
        Behavior::from_fn(alphabets, |_, _, _, _| w)
    }

    /// Local deterministic strategy: Alice answers `fa[u]`, Bob `fb[v]`.
    pub fn deterministic(alphabets: Alphabets, fa: &[usize], fb: &[usize]) -> Result<Self> {
        if fa.len() != alphabets.nu || fb.len() != alphabets.nv {
            return Err(Error::InvalidParameter(
                "one deterministic answer per input is required".into(),
            ));
        }
        if fa.iter().any(|&x| x >= alphabets.nx) || fb.iter().any(|&y| y >= alphabets.ny) {
            return Err(Error::InvalidParameter("deterministic answer out of range".into()));
        }
        Behavior::from_fn(alphabets, |u, v, x, y| {
            if fa[u] == x && fb[v] == y {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn alphabets(&self) -> Alphabets {
        self.alphabets
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize, x: usize, y: usize) -> f64 {
        self.table[self.alphabets.index(u, v, x, y)]
    }

    /// Joint distribution with uniform input weights.
    pub fn joint(&self) -> Vec<f64> {
        let w = 1.0 / self.alphabets.cells() as f64;
        self.table.iter().map(|p| p * w).collect()
    }

    pub fn validate(&self) -> ValidationReport {
        let a = self.alphabets;
        let mut normalization: f64 = 0.0;
        for u in 0..a.nu {
            for v in 0..a.nv {
                let start = a.index(u, v, 0, 0);
                let s: f64 = self.table[start..start + a.nx * a.ny].iter().sum();
                normalization = normalization.max((s - 1.0).abs());
            }
        }
        let negativity = self
            .table
            .iter()
            .fold(0.0f64, |acc, &p| if p < 0.0 { acc.max(-p) } else { acc });

        // Alice's marginal must not depend on Bob's input, and vice versa.
        let mut alice_signalling: f64 = 0.0;
        for u in 0..a.nu {
            for x in 0..a.nx {
                let marg: Vec<f64> = (0..a.nv)
                    .map(|v| (0..a.ny).map(|y| self.get(u, v, x, y)).sum())
                    .collect();
                alice_signalling = alice_signalling.max(spread(&marg));
            }
        }
        let mut bob_signalling: f64 = 0.0;
        for v in 0..a.nv {
            for y in 0..a.ny {
                let marg: Vec<f64> = (0..a.nu)
                    .map(|u| (0..a.nx).map(|x| self.get(u, v, x, y)).sum())
                    .collect();
                bob_signalling = bob_signalling.max(spread(&marg));
            }
        }

        let mut violations = Vec::new();
        if normalization > NORMALIZATION_TOLERANCE {
            violations.push(Violation::Normalization);
        }
        if negativity > CLAMP_TOLERANCE {
            violations.push(Violation::Negativity);
        }
        if alice_signalling > SIGNALLING_TOLERANCE || bob_signalling > SIGNALLING_TOLERANCE {
            violations.push(Violation::Signalling);
        }
        ValidationReport {
            normalization,
            negativity,
            alice_signalling,
            bob_signalling,
            violations,
        }
    }

    /// Raw-key disagreement `P(x != y | u_key, v_key)`.
    pub fn qber(&self, u_key: usize, v_key: usize) -> Result<f64> {
        self.alphabets.check_inputs(u_key, v_key)?;
        let a = self.alphabets;
        let mut q = 0.0;
        for x in 0..a.nx {
            for y in 0..a.ny {
                if x != y {
                    q += self.get(u_key, v_key, x, y);
                }
            }
        }
        Ok(q)
    }

    /// CHSH expression `E00 + E01 + E10 - E11` on the selected inputs, with
    /// outcome 0 mapped to +1 and outcome 1 to -1.
    pub fn chsh_value(&self, alice: [usize; 2], bob: [usize; 2]) -> Result<f64> {
        if self.alphabets.nx != 2 || self.alphabets.ny != 2 {
            return Err(Error::InvalidParameter(
                "CHSH needs binary outcomes on both sides".into(),
            ));
        }
        for &u in &alice {
            for &v in &bob {
                self.alphabets.check_inputs(u, v)?;
            }
        }
        let corr = |u: usize, v: usize| {
            self.get(u, v, 0, 0) + self.get(u, v, 1, 1) - self.get(u, v, 0, 1) - self.get(u, v, 1, 0)
        };
        Ok(corr(alice[0], bob[0]) + corr(alice[0], bob[1]) + corr(alice[1], bob[0])
            - corr(alice[1], bob[1]))
    }

    /// Sub-behavior on the listed inputs, in the given order.
    pub fn restrict_inputs(&self, alice: &[usize], bob: &[usize]) -> Result<Behavior> {
        for &u in alice {
            for &v in bob {
                self.alphabets.check_inputs(u, v)?;
            }
        }
        let a = Alphabets::new(self.alphabets.nx, self.alphabets.ny, alice.len(), bob.len())?;
        let mut b = Behavior::from_fn(a, |u, v, x, y| self.get(alice[u], bob[v], x, y))?;
        b.meta = self.meta.clone();
        Ok(b)
    }

    /// Two devices used independently; symbols combine as in
    /// [`Alphabets::product`].
    pub fn tensor(&self, other: &Behavior) -> Result<Behavior> {
        let (a, b) = (self.alphabets, other.alphabets);
        let p = a.product(&b);
        Behavior::from_fn(p, |u, v, x, y| {
            self.get(u / b.nu, v / b.nv, x / b.nx, y / b.ny)
                * other.get(u % b.nu, v % b.nv, x % b.nx, y % b.ny)
        })
    }

    /// SHA-256 over the alphabets and the exact bit patterns of the table.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        let a = self.alphabets;
        for n in [a.nx, a.ny, a.nu, a.nv] {
            h.update((n as u64).to_le_bytes());
        }
        for p in &self.table {
            h.update(p.to_bits().to_le_bytes());
        }
        let mut out = String::with_capacity(64);
        for byte in h.finalize() {
            let _ = write!(out, "{byte:02x}");
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and validates; rejects tables that fail any invariant.
    pub fn from_json(s: &str) -> Result<Behavior> {
        let b: Behavior = serde_json::from_str(s)?;
        let report = b.validate();
        if !report.is_valid() {
            return Err(Error::InvalidBehavior(format!("{report}")));
        }
        Ok(b)
    }
}

fn spread(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}

#[derive(Serialize, Deserialize)]
struct BehaviorJson {
    alphabets: Alphabets,
    table: Vec<Vec<Vec<Vec<f64>>>>,
    #[serde(default)]
    meta: BTreeMap<String, serde_json::Value>,
}

impl Serialize for Behavior {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let a = self.alphabets;
        let table = (0..a.nu)
            .map(|u| {
                (0..a.nv)
                    .map(|v| {
                        (0..a.nx)
                            .map(|x| (0..a.ny).map(|y| self.get(u, v, x, y)).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        BehaviorJson {
            alphabets: a,
            table,
            meta: self.meta.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Behavior {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = BehaviorJson::deserialize(d)?;
        let a = raw.alphabets;
        a.check().map_err(D::Error::custom)?;
        let shape_ok = raw.table.len() == a.nu
            && raw.table.iter().all(|tv| {
                tv.len() == a.nv
                    && tv
                        .iter()
                        .all(|tx| tx.len() == a.nx && tx.iter().all(|ty| ty.len() == a.ny))
            });
        if !shape_ok {
            return Err(D::Error::custom("table nesting does not match alphabets"));
        }
        let flat = raw.table.into_iter().flatten().flatten().flatten().collect();
        let mut b = Behavior::new(a, flat).map_err(D::Error::custom)?;
        b.meta = raw.meta;
        Ok(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Violation {
    Normalization,
    Negativity,
    Signalling,
}

/// Largest residual of each invariant plus the list of those exceeding
/// their tolerance.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub normalization: f64,
    pub negativity: f64,
    pub alice_signalling: f64,
    pub bob_signalling: f64,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "normalization {:.3e}, negativity {:.3e}, signalling {:.3e}/{:.3e}, violations {:?}",
            self.normalization,
            self.negativity,
            self.alice_signalling,
            self.bob_signalling,
            self.violations
        )
    }
}

/// Outcome tallies per `(u,v,x,y)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorEstimate {
    pub alphabets: Alphabets,
    pub counts: Vec<u64>,
}

impl BehaviorEstimate {
    pub fn new(alphabets: Alphabets) -> Self {
        BehaviorEstimate {
            alphabets,
            counts: vec![0; alphabets.table_len()],
        }
    }

    pub fn from_counts(alphabets: Alphabets, counts: Vec<u64>) -> Result<Self> {
        alphabets.check()?;
        if counts.len() != alphabets.table_len() {
            return Err(Error::ShapeMismatch {
                expected: alphabets.table_len(),
                got: counts.len(),
            });
        }
        Ok(BehaviorEstimate { alphabets, counts })
    }

    #[inline]
    pub fn record(&mut self, u: usize, v: usize, x: usize, y: usize) {
        let i = self.alphabets.index(u, v, x, y);
        self.counts[i] += 1;
    }

    pub fn total(&self, u: usize, v: usize) -> u64 {
        let a = self.alphabets;
        let start = a.index(u, v, 0, 0);
        self.counts[start..start + a.nx * a.ny].iter().sum()
    }

    pub fn totals(&self) -> Vec<u64> {
        let a = self.alphabets;
        (0..a.cells())
            .map(|c| self.total(c / a.nv, c % a.nv))
            .collect()
    }
}

/// Relative frequencies per input pair. Every pair must have been sampled.
pub fn estimate_from_counts(counts: &BehaviorEstimate) -> Result<Behavior> {
    let a = counts.alphabets;
    let totals = counts.totals();
    if let Some(c) = totals.iter().position(|&t| t == 0) {
        return Err(Error::EmptyCell {
            u: c / a.nv,
            v: c % a.nv,
        });
    }
    Behavior::from_fn(a, |u, v, x, y| {
        counts.counts[a.index(u, v, x, y)] as f64 / totals[u * a.nv + v] as f64
    })
}

/// Half the L1 distance between the joint distributions.
pub fn statistical_distance(p: &Behavior, q: &Behavior) -> Result<f64> {
    if p.alphabets != q.alphabets {
        return Err(Error::AlphabetMismatch(p.alphabets, q.alphabets));
    }
    let w = 1.0 / p.alphabets.cells() as f64;
    Ok(0.5
        * w
        * p.table
            .iter()
            .zip(&q.table)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>())
}

/// Polarizer orientations in degrees, one per input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementAngles {
    pub alice: Vec<f64>,
    pub bob: Vec<f64>,
    /// Bob relabels his outcome so equal angles give equal bits.
    pub bob_flip: bool,
}

impl MeasurementAngles {
    /// Alice {U0, U1} = {45, 0}; Bob {V0, V1, V2} = {22.5, 67.5, 45}.
    pub fn ekert() -> Self {
        MeasurementAngles {
            alice: vec![45.0, 0.0],
            bob: vec![22.5, 67.5, 45.0],
            bob_flip: true,
        }
    }

    /// The CHSH part of [`MeasurementAngles::ekert`]: U0, U1 against V0, V1.
    pub fn ekert_chsh() -> Self {
        MeasurementAngles {
            alice: vec![45.0, 0.0],
            bob: vec![22.5, 67.5],
            bob_flip: true,
        }
    }

    pub fn without_flip(mut self) -> Self {
        self.bob_flip = false;
        self
    }

    pub fn alphabets(&self) -> Result<Alphabets> {
        Alphabets::new(2, 2, self.alice.len(), self.bob.len())
    }
}

/// `(1 - rho)` singlet statistics plus `rho` white noise.
///
/// On the singlet, polarizers at `a` and `b` give equal raw outcomes with
/// probability `sin^2(a - b)`; with `bob_flip` Bob's bit is inverted, so the
/// equal-outcome probability becomes `cos^2(a - b)`.
pub fn singlet_behavior(rho: f64, angles: &MeasurementAngles) -> Result<Behavior> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidParameter(format!("rho = {rho} outside [0, 1]")));
    }
    if angles.alice.iter().chain(&angles.bob).any(|t| !t.is_finite()) {
        return Err(Error::InvalidParameter("non-finite angle".into()));
    }
    let a = angles.alphabets()?;
    let mut b = Behavior::from_fn(a, |u, v, x, y| {
        let d = (angles.alice[u] - angles.bob[v]).to_radians();
        let (s2, c2) = (d.sin().powi(2), d.cos().powi(2));
        let equal = (x == y) != angles.bob_flip;
        let ideal = if equal { s2 / 2.0 } else { c2 / 2.0 };
        (1.0 - rho) * ideal + rho * 0.25
    })?;
    b.meta.insert("generator".into(), "singlet".into());
    b.meta.insert("rho".into(), rho.into());
    b.meta.insert(
        "angles".into(),
        serde_json::to_value(angles).unwrap_or(serde_json::Value::Null),
    );
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let a = Alphabets::new(2, 3, 2, 3).unwrap();
        for i in 0..a.table_len() {
            let (u, v, x, y) = a.unindex(i);
            assert_eq!(a.index(u, v, x, y), i);
        }
    }

    #[test]
    fn zero_alphabet_rejected() {
        assert!(Alphabets::new(2, 2, 0, 2).is_err());
    }

    #[test]
    fn tiny_negatives_clamped_large_kept() {
        let mut t = vec![0.25; 4];
        t[0] = -1e-13;
        let b = Behavior::new(Alphabets::new(2, 2, 1, 1).unwrap(), t).unwrap();
        assert_eq!(b.get(0, 0, 0, 0), 0.0);

        let t = vec![-0.1, 0.6, 0.25, 0.25];
        let b = Behavior::new(Alphabets::new(2, 2, 1, 1).unwrap(), t).unwrap();
        assert!(b.validate().violations.contains(&Violation::Negativity));
    }

    #[test]
    fn four_equal_counts() {
        let a = Alphabets::new(2, 2, 1, 1).unwrap();
        let e = BehaviorEstimate::from_counts(a, vec![10, 10, 10, 10]).unwrap();
        let b = estimate_from_counts(&e).unwrap();
        assert!(b.table().iter().all(|&p| p == 0.25));
    }

    #[test]
    fn empty_cell_is_an_error() {
        let a = Alphabets::new(2, 2, 1, 2).unwrap();
        let e = BehaviorEstimate::from_counts(a, vec![1, 2, 3, 4, 0, 0, 0, 0]).unwrap();
        assert!(matches!(
            estimate_from_counts(&e),
            Err(Error::EmptyCell { u: 0, v: 1 })
        ));
    }

    #[test]
    fn rho_out_of_range() {
        assert!(singlet_behavior(-0.1, &MeasurementAngles::ekert()).is_err());
        assert!(singlet_behavior(1.5, &MeasurementAngles::ekert()).is_err());
    }
}
