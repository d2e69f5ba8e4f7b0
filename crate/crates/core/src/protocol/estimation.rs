//! Count floors and the distance of the observed statistics to the accept set.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use serde::Serialize;

use super::params::ProtocolParams;
use super::simulate::{RoundTag, Transcript};
use crate::behavior::{estimate_from_counts, Behavior, BehaviorEstimate};
use crate::error::{Error, Result};
use crate::guess::{CertificateKind, DualCertificate};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum AbortReason {
    TooFewKeyRounds { got: u64, need: f64 },
    TooFewTestRounds { u: usize, v: usize, got: u64, need: f64 },
    OutsideAcceptSet { distance: f64, eta: f64 },
    /// No table meets both the guessing threshold and the QBER bound.
    EmptyAcceptSet,
}

#[derive(Debug, Clone, Serialize)]
pub struct Estimation {
    pub accepted: bool,
    pub abort: Option<AbortReason>,
    pub key_rounds: u64,
    pub test_rounds: u64,
    /// Outcome counts of the test rounds.
    pub counts: BehaviorEstimate,
    pub estimate: Option<Behavior>,
    /// `P_est . lambda` for the reference certificate.
    pub estimated_bound: Option<f64>,
    pub estimated_qber: Option<f64>,
    /// Statistical distance from the estimate to the accept set.
    pub distance: Option<f64>,
    pub threshold: f64,
    pub delta_max: f64,
    pub reference_hash: String,
}

/// Runs the abort checks of the protocol on a transcript.
///
/// The accept set is `{P : P . lambda <= threshold, QBER(P) <= delta_max}`
/// for the reference certificate `lambda`; the threshold defaults to the
/// certificate's bound at its own behavior.
pub fn parameter_estimation(
    t: &Transcript,
    params: &ProtocolParams,
    reference: &DualCertificate,
) -> Result<Estimation> {
    t.validate()?;
    let a = t.alphabets;
    params.validate_for(&a)?;
    if reference.kind != CertificateKind::Guess {
        return Err(Error::CertificateKind {
            expected: CertificateKind::Guess.name(),
            got: reference.kind.name(),
        });
    }
    if reference.alphabets != a {
        return Err(Error::AlphabetMismatch(reference.alphabets, a));
    }
    if (t.key_alice, t.key_bob) != (params.key_alice, params.key_bob) {
        return Err(Error::InvalidParameter(
            "transcript key inputs differ from the parameters".into(),
        ));
    }

    let counts = t.counts(RoundTag::Test);
    let mut out = Estimation {
        accepted: false,
        abort: None,
        key_rounds: t.count(RoundTag::Key),
        test_rounds: t.count(RoundTag::Test),
        counts,
        estimate: None,
        estimated_bound: None,
        estimated_qber: None,
        distance: None,
        threshold: params.guess_threshold.unwrap_or(reference.bound_at_origin),
        delta_max: params.delta_max,
        reference_hash: reference.meta.behavior_hash.clone(),
    };

    let need = params.key_round_floor();
    if (out.key_rounds as f64) < need {
        out.abort = Some(AbortReason::TooFewKeyRounds {
            got: out.key_rounds,
            need,
        });
        return Ok(out);
    }
    let need = params.test_cell_floor(&a);
    for u in 0..a.nu {
        for v in 0..a.nv {
            let got = out.counts.total(u, v);
            if (got as f64) < need || got == 0 {
                out.abort = Some(AbortReason::TooFewTestRounds { u, v, got, need });
                return Ok(out);
            }
        }
    }

    let est = estimate_from_counts(&out.counts)?;
    out.estimated_bound = Some(reference.raw_value(&est)?);
    out.estimated_qber = Some(est.qber(params.key_alice, params.key_bob)?);
    let distance = accept_set_distance(
        &est,
        reference,
        out.threshold,
        params.delta_max,
        (params.key_alice, params.key_bob),
    )?;
    out.estimate = Some(est);
    match distance {
        None => out.abort = Some(AbortReason::EmptyAcceptSet),
        Some(d) => {
            out.distance = Some(d);
            if d > params.eta {
                out.abort = Some(AbortReason::OutsideAcceptSet {
                    distance: d,
                    eta: params.eta,
                });
            } else {
                out.accepted = true;
            }
        }
    }
    Ok(out)
}

/// Least [`statistical_distance`](crate::behavior::statistical_distance)
/// from `p` to a normalized table `q` with `q . lambda <= threshold` and
/// `QBER(q) <= delta_max` at `key`. `None` when no such table exists.
///
/// `q` ranges over all normalized tables, not only quantum ones, since the
/// certificate bound holds for every table.
pub fn accept_set_distance(
    p: &Behavior,
    c: &DualCertificate,
    threshold: f64,
    delta_max: f64,
    key: (usize, usize),
) -> Result<Option<f64>> {
    let a = p.alphabets();
    if c.alphabets != a {
        return Err(Error::AlphabetMismatch(c.alphabets, a));
    }
    a.check_inputs(key.0, key.1)?;
    let w = 0.5 / a.cells() as f64;
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let q: Vec<_> = (0..a.table_len())
        .map(|_| lp.add_var(0.0, (0.0, 1.0)))
        .collect();
    for (t, &qt) in q.iter().enumerate() {
        // e >= |q - p|
        let e = lp.add_var(w, (0.0, f64::INFINITY));
        let pt = p.table()[t];
        lp.add_constraint(&[(e, 1.0), (qt, -1.0)], ComparisonOp::Ge, -pt);
        lp.add_constraint(&[(e, 1.0), (qt, 1.0)], ComparisonOp::Ge, pt);
    }
    for cell in q.chunks(a.nx * a.ny) {
        let row: Vec<_> = cell.iter().map(|&v| (v, 1.0)).collect();
        lp.add_constraint(row.as_slice(), ComparisonOp::Eq, 1.0);
    }
    let bound: Vec<_> = q
        .iter()
        .zip(&c.lambda)
        .filter(|(_, &l)| l != 0.0)
        .map(|(&v, &l)| (v, l))
        .collect();
    lp.add_constraint(bound.as_slice(), ComparisonOp::Le, threshold);
    let mut errors = Vec::new();
    for x in 0..a.nx {
        for y in 0..a.ny {
            if x != y {
                errors.push((q[a.index(key.0, key.1, x, y)], 1.0));
            }
        }
    }
    if !errors.is_empty() {
        lp.add_constraint(errors.as_slice(), ComparisonOp::Le, delta_max);
    }
    match lp.solve() {
        Ok(s) => Ok(Some(s.objective().max(0.0))),
        Err(minilp::Error::Infeasible) => Ok(None),
        Err(e) => Err(Error::MalformedProblem(format!("accept-set distance: {e}"))),
    }
}
