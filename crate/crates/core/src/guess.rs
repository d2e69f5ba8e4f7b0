//! Guessing-probability and bit distance-from-uniform programs.
//!
//! Eve's attack is modelled by one moment matrix `G_z` per guess `z`, each
//! satisfying the NPA structure, summing to the marginal moment matrix
//! whose probability entries are the observed behavior. The multipliers of
//! the probability constraints form a vector `lambda` over `(u,v,x,y)`;
//! for every behavior `P`, `P . lambda` bounds the guessing probability.

use serde::{Deserialize, Serialize};

use crate::behavior::{Alphabets, Behavior};
use crate::error::{Error, Result};
use crate::npa::{Letter, Level, NpaStructure, WordBasis};
use crate::sdp::{self, SdpProblem, SolveError, SolverOptions, Term};

/// Slack-eigenvalue tolerance for exported certificates.
pub const CERTIFICATE_MARGIN: f64 = 1e-8;
/// Largest relative gap at which a stalled solve still yields a bound.
/// The bound is the verified dual value either way; the gap is reported.
pub const ACCEPT_RELATIVE_GAP: f64 = 1e-3;

/// `f(x)` applied to Alice's outcome on one announced input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyFunction {
    pub input: usize,
    pub map: Vec<usize>,
    pub range: usize,
}

impl KeyFunction {
    pub fn new(input: usize, map: Vec<usize>) -> Result<Self> {
        if map.is_empty() {
            return Err(Error::InvalidParameter("key function over no outcomes".into()));
        }
        let range = map.iter().max().map_or(0, |m| m + 1);
        Ok(KeyFunction { input, map, range })
    }

    /// The outcome itself.
    pub fn identity(input: usize, nx: usize) -> Self {
        KeyFunction {
            input,
            map: (0..nx).collect(),
            range: nx,
        }
    }

    pub fn is_bit(&self) -> bool {
        self.range == 2
    }

    fn check(&self, a: &Alphabets) -> Result<()> {
        if self.input >= a.nu {
            return Err(Error::IndexOutOfRange {
                what: "key input",
                index: self.input,
                bound: a.nu,
            });
        }
        if self.map.len() != a.nx {
            return Err(Error::InvalidParameter(format!(
                "key function covers {} outcomes, alphabet has {}",
                self.map.len(),
                a.nx
            )));
        }
        if self.range == 0 {
            return Err(Error::InvalidParameter("empty key range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    Guess,
    BitDistance,
}

impl CertificateKind {
    pub fn name(&self) -> &'static str {
        match self {
            CertificateKind::Guess => "guess",
            CertificateKind::BitDistance => "bit_distance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateMeta {
    pub behavior_hash: String,
    /// Smallest eigenvalue of the recomputed dual slack.
    pub slack_min_eigenvalue: f64,
    pub margin: f64,
    pub duality_gap: f64,
    pub basis: WordBasis,
    /// How the target was read: a function of Alice's outcome on one
    /// announced input, with Bob's inputs not part of Eve's side
    /// information.
    pub target_convention: String,
}

/// Multipliers `lambda` over `(u,v,x,y)` in table order.
///
/// For [`CertificateKind::Guess`], `P . lambda` bounds the guessing
/// probability of every behavior `P`. For [`CertificateKind::BitDistance`],
/// `P . lambda` bounds twice the distance from uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualCertificate {
    pub kind: CertificateKind,
    pub level: Level,
    pub alphabets: Alphabets,
    pub lambda: Vec<f64>,
    pub l1_norm: f64,
    pub target: KeyFunction,
    /// The bound at the behavior the certificate was solved for.
    pub bound_at_origin: f64,
    pub meta: CertificateMeta,
}

impl DualCertificate {
    /// `P . lambda` on the conditional table.
    pub fn raw_value(&self, b: &Behavior) -> Result<f64> {
        if b.alphabets() != self.alphabets {
            return Err(Error::AlphabetMismatch(self.alphabets, b.alphabets()));
        }
        Ok(b.table().iter().zip(&self.lambda).map(|(p, l)| p * l).sum())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: DualCertificate = serde_json::from_str(s)?;
        if c.lambda.len() != c.alphabets.table_len() {
            return Err(Error::ShapeMismatch {
                expected: c.alphabets.table_len(),
                got: c.lambda.len(),
            });
        }
        Ok(c)
    }
}

/// The bound a certificate gives for `b`: a guessing probability, or a
/// distance from uniform for bit certificates.
pub fn evaluate_certificate(c: &DualCertificate, b: &Behavior) -> Result<f64> {
    let raw = c.raw_value(b)?;
    Ok(match c.kind {
        CertificateKind::Guess => raw,
        CertificateKind::BitDistance => 0.5 * raw,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundDiagnostics {
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
    pub relative_gap: f64,
    pub slack_min_eigenvalue: f64,
    pub margin: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The certified value was moved into its admissible range.
    pub clamped: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuessBound {
    pub p_guess: f64,
    pub min_entropy: f64,
    pub certificate: DualCertificate,
    pub level: Level,
    pub diagnostics: BoundDiagnostics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistanceBound {
    pub distance: f64,
    pub certificate: DualCertificate,
    pub level: Level,
    pub diagnostics: BoundDiagnostics,
}

/// An assembled program plus the bookkeeping needed to read a certificate
/// off its multipliers.
#[derive(Debug, Clone)]
pub struct GuessProgram {
    pub problem: SdpProblem,
    /// `(constraint index, table index)` of every probability constraint.
    pub prob_constraints: Vec<(usize, usize)>,
    pub identity_constraint: usize,
    pub range: usize,
    pub alphabets: Alphabets,
}

fn check_inputs(b: &Behavior, f: &KeyFunction, s: &NpaStructure) -> Result<()> {
    if b.alphabets() != s.alphabets {
        return Err(Error::AlphabetMismatch(b.alphabets(), s.alphabets));
    }
    f.check(&s.alphabets)
}

fn rep_terms(s: &NpaStructure, block: usize, functional: &[(usize, f64)], scale: f64) -> Vec<Term> {
    functional
        .iter()
        .map(|&(c, coef)| {
            let (i, j) = s.representative(c);
            (block, i, j, coef * scale)
        })
        .collect()
}

/// Class equalities, forced zeros and completeness relations on one block.
fn structural_constraints(p: &mut SdpProblem, s: &NpaStructure, block: usize) {
    for class in &s.classes {
        let (ri, rj) = class.entries[0];
        for &(i, j) in &class.entries[1..] {
            p.add_constraint(vec![(block, i, j, 1.0), (block, ri, rj, -1.0)], 0.0);
        }
    }
    for &(i, j) in &s.zero_entries {
        p.add_constraint(vec![(block, i, j, 1.0)], 0.0);
    }
    for rel in &s.completeness {
        let terms = rel
            .terms
            .iter()
            .map(|&(c, coef)| {
                let (i, j) = s.representative(c);
                (block, i, j, coef as f64)
            })
            .collect();
        p.add_constraint(terms, 0.0);
    }
}

/// Probability constraints on `blocks` (each weighted), then the
/// normalization of the identity moment.
fn observation_constraints(
    p: &mut SdpProblem,
    b: &Behavior,
    s: &NpaStructure,
    blocks: &[(usize, f64)],
) -> Result<(Vec<(usize, usize)>, usize)> {
    let a = s.alphabets;
    let mut prob = Vec::with_capacity(a.table_len());
    for t in 0..a.table_len() {
        let (u, v, x, y) = a.unindex(t);
        let f = s.probability_functional(u, v, x, y)?;
        let mut terms = Vec::new();
        for &(blk, w) in blocks {
            terms.extend(rep_terms(s, blk, &f, w));
        }
        prob.push((p.add_constraint(terms, b.table()[t]), t));
    }
    let (ii, jj) = s
        .identity_entry
        .ok_or_else(|| Error::MissingMoment("identity".into()))?;
    let id_terms = blocks.iter().map(|&(blk, w)| (blk, ii, jj, w)).collect();
    let id = p.add_constraint(id_terms, 1.0);
    Ok((prob, id))
}

pub fn build_guess_program(b: &Behavior, f: &KeyFunction, s: &NpaStructure) -> Result<GuessProgram> {
    guess_program(b, f, s, true, 0.0)
}

/// The guessing program with `G_marg` substituted by `sum_z G_z`. Its cone
/// is implied by the others, so dropping it changes neither the optimum nor
/// the probability multipliers, and removes a degenerate slack block.
pub fn build_guess_program_compact(
    b: &Behavior,
    f: &KeyFunction,
    s: &NpaStructure,
) -> Result<GuessProgram> {
    guess_program(b, f, s, false, 0.0)
}

/// The compact program with every observed probability relaxed to the
/// interval `[P_t - radius, P_t + radius]`. Its dual optimum is
/// `min P . lambda + radius ||lambda||_1` over certificates, up to how the
/// identity multiplier is spread.
pub fn build_robust_guess_program(
    b: &Behavior,
    f: &KeyFunction,
    s: &NpaStructure,
    radius: f64,
) -> Result<GuessProgram> {
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::InvalidParameter(format!("box radius must be non-negative, got {radius}")));
    }
    guess_program(b, f, s, false, radius)
}

fn guess_program(
    b: &Behavior,
    f: &KeyFunction,
    s: &NpaStructure,
    with_marginal: bool,
    radius: f64,
) -> Result<GuessProgram> {
    check_inputs(b, f, s)?;
    let range = f.range;
    let blocks = if with_marginal { range + 1 } else { range };
    let mut p = SdpProblem::new(vec![s.dim; blocks]);
    for blk in 0..blocks {
        structural_constraints(&mut p, s, blk);
    }
    let observed: Vec<(usize, f64)> = if with_marginal {
        let marg = range;
        for c in 0..s.classes.len() {
            let (i, j) = s.representative(c);
            let mut terms: Vec<Term> = (0..range).map(|z| (z, i, j, 1.0)).collect();
            terms.push((marg, i, j, -1.0));
            p.add_constraint(terms, 0.0);
        }
        vec![(marg, 1.0)]
    } else {
        (0..range).map(|z| (z, 1.0)).collect()
    };
    let (prob_constraints, identity_constraint) = observation_constraints(&mut p, b, s, &observed)?;
    if radius > 0.0 {
        // Q_t + w_t = P_t + r and w_t + w'_t = 2r with w, w' >= 0.
        for &(k, _) in &prob_constraints {
            let w = p.add_block(1);
            let w2 = p.add_block(1);
            p.constraints[k].functional.add(w, 0, 0, 1.0);
            p.constraints[k].rhs += radius;
            p.add_constraint(vec![(w, 0, 0, 1.0), (w2, 0, 0, 1.0)], 2.0 * radius);
        }
    }
    for x in 0..s.alphabets.nx {
        let z = f.map[x];
        let mom = s.moment_functional(&[Letter::alice(f.input, x)])?;
        p.objective.terms.extend(rep_terms(s, z, &mom, 1.0));
    }
    Ok(GuessProgram {
        problem: p,
        prob_constraints,
        identity_constraint,
        range,
        alphabets: s.alphabets,
    })
}

/// Blocks `S+ = G_marg + G_delta` and `S- = G_marg - G_delta`, both
/// semidefinite. The optimum is twice the distance from uniform.
pub fn build_bit_distance_program(
    b: &Behavior,
    f: &KeyFunction,
    s: &NpaStructure,
) -> Result<GuessProgram> {
    check_inputs(b, f, s)?;
    if !f.is_bit() {
        return Err(Error::InvalidParameter(format!(
            "bit distance needs a binary range, got {}",
            f.range
        )));
    }
    let mut p = SdpProblem::new(vec![s.dim; 2]);
    structural_constraints(&mut p, s, 0);
    structural_constraints(&mut p, s, 1);
    let (prob_constraints, identity_constraint) =
        observation_constraints(&mut p, b, s, &[(0, 0.5), (1, 0.5)])?;
    for x in 0..s.alphabets.nx {
        let sign = if f.map[x] == 0 { 1.0 } else { -1.0 };
        let mom = s.moment_functional(&[Letter::alice(f.input, x)])?;
        p.objective.terms.extend(rep_terms(s, 0, &mom, 0.5 * sign));
        p.objective.terms.extend(rep_terms(s, 1, &mom, -0.5 * sign));
    }
    Ok(GuessProgram {
        problem: p,
        prob_constraints,
        identity_constraint,
        range: 2,
        alphabets: s.alphabets,
    })
}

/// Reduced word basis at `level`, the form used for solving.
pub fn solver_structure(alphabets: &Alphabets, level: Level) -> Result<NpaStructure> {
    NpaStructure::for_level(alphabets, level, WordBasis::Reduced)
}

struct Solved {
    lambda: Vec<f64>,
    bound: f64,
    diagnostics: BoundDiagnostics,
}

fn solve_program(prog: &GuessProgram, opts: &SolverOptions) -> Result<Solved> {
    let (sol, converged) = match sdp::solve_with(&prog.problem, opts) {
        Ok(s) => (s, true),
        // A non-converged iterate still yields a sound bound if its
        // multipliers pass verification; the gap is reported.
        Err(SolveError::MaxIterations { best, .. }) if best.diagnostics.relative_gap < ACCEPT_RELATIVE_GAP => {
            (*best, false)
        }
        Err(e) => return Err(e.into()),
    };
    let y = &sol.dual_multipliers;
    let check = sdp::verify_dual_certificate(&prog.problem, y, CERTIFICATE_MARGIN)?;
    let Some(bound) = check.certified_bound else {
        return Err(Error::CertificateRejected {
            min_eigenvalue: check.min_eigenvalue,
            margin: CERTIFICATE_MARGIN,
        });
    };
    let n = prog.prob_constraints.len();
    let mut lambda = vec![0.0; n];
    for &(k, t) in &prog.prob_constraints {
        lambda[t] = y[k];
    }
    // The identity multiplier moves onto the first input pair, whose
    // probabilities sum to one for every normalized behavior.
    let yid = y[prog.identity_constraint];
    if yid != 0.0 {
        let first_cell = prog.alphabets.nx * prog.alphabets.ny;
        for l in lambda.iter_mut().take(first_cell) {
            *l += yid;
        }
    }
    Ok(Solved {
        lambda,
        bound,
        diagnostics: BoundDiagnostics {
            primal_value: sol.primal_value,
            dual_value: check.dual_value,
            gap: sol.gap,
            relative_gap: sol.diagnostics.relative_gap,
            slack_min_eigenvalue: check.min_eigenvalue,
            margin: CERTIFICATE_MARGIN,
            iterations: sol.diagnostics.iterations,
            converged,
            clamped: false,
        },
    })
}

fn clamp_into(value: f64, lo: f64, hi: f64, diag: &mut BoundDiagnostics) -> f64 {
    if value < lo || value > hi {
        diag.clamped = true;
    }
    value.clamp(lo, hi)
}

fn make_certificate(
    kind: CertificateKind,
    level: Level,
    b: &Behavior,
    f: &KeyFunction,
    s: &NpaStructure,
    solved: &Solved,
    bound_at_origin: f64,
) -> DualCertificate {
    DualCertificate {
        kind,
        level,
        alphabets: b.alphabets(),
        l1_norm: solved.lambda.iter().map(|l| l.abs()).sum(),
        lambda: solved.lambda.clone(),
        target: f.clone(),
        bound_at_origin,
        meta: CertificateMeta {
            behavior_hash: b.content_hash(),
            slack_min_eigenvalue: solved.diagnostics.slack_min_eigenvalue,
            margin: solved.diagnostics.margin,
            duality_gap: solved.diagnostics.gap,
            basis: s.basis,
            target_convention: format!(
                "f(x) on Alice input {}; Bob inputs not in Eve's side information",
                f.input
            ),
        },
    }
}

pub fn solve_guess(b: &Behavior, f: &KeyFunction, level: Level) -> Result<GuessBound> {
    let s = solver_structure(&b.alphabets(), level)?;
    solve_guess_with(b, f, &s, &SolverOptions::default())
}

pub fn solve_guess_with(
    b: &Behavior,
    f: &KeyFunction,
    s: &NpaStructure,
    opts: &SolverOptions,
) -> Result<GuessBound> {
    let level = s.level.unwrap_or(Level::Two);
    let prog = build_guess_program_compact(b, f, s)?;
    let mut solved = solve_program(&prog, opts)?;
    let lo = 1.0 / f.range as f64;
    let p_guess = clamp_into(solved.bound, lo, 1.0, &mut solved.diagnostics);
    // Noise within this band is silently clamped; beyond it the flag stays.
    if (solved.bound - p_guess).abs() <= 1e-6 {
        solved.diagnostics.clamped = false;
    }
    let certificate = make_certificate(CertificateKind::Guess, level, b, f, s, &solved, solved.bound);
    Ok(GuessBound {
        p_guess,
        min_entropy: -p_guess.log2(),
        certificate,
        level,
        diagnostics: solved.diagnostics,
    })
}

/// A guessing certificate chosen for use under statistical uncertainty:
/// it minimizes `P . lambda + radius ||lambda||_1` rather than `P . lambda`.
///
/// `p_guess` is that penalized value; the certificate's `bound_at_origin`
/// is `P . lambda` alone. Near self-testing points the plain certificate
/// has a very large norm, which makes any penalty proportional to it
/// useless.
pub fn solve_guess_robust(b: &Behavior, f: &KeyFunction, level: Level, radius: f64) -> Result<GuessBound> {
    let s = solver_structure(&b.alphabets(), level)?;
    let prog = build_robust_guess_program(b, f, &s, radius)?;
    let mut solved = solve_program(&prog, &SolverOptions::default())?;
    solved.lambda = rebalance_cells(&solved.lambda, &b.alphabets())?;
    let at_origin: f64 = b.table().iter().zip(&solved.lambda).map(|(p, l)| p * l).sum();
    let l1: f64 = solved.lambda.iter().map(|l| l.abs()).sum();
    let penalized = at_origin + radius * l1;
    let p_guess = clamp_into(penalized, 1.0 / f.range as f64, 1.0, &mut solved.diagnostics);
    if (penalized - p_guess).abs() <= 1e-6 {
        solved.diagnostics.clamped = false;
    }
    let certificate = make_certificate(CertificateKind::Guess, level, b, f, &s, &solved, at_origin);
    Ok(GuessBound {
        p_guess,
        min_entropy: -p_guess.log2(),
        certificate,
        level,
        diagnostics: solved.diagnostics,
    })
}

/// Adds a constant to each input pair's entries, the constants summing to
/// zero, so that `||lambda||_1` is least. `P . lambda` is unchanged for
/// every normalized `P`.
pub fn rebalance_cells(lambda: &[f64], a: &Alphabets) -> Result<Vec<f64>> {
    use minilp::{ComparisonOp, OptimizationDirection, Problem};
    if lambda.len() != a.table_len() {
        return Err(Error::ShapeMismatch {
            expected: a.table_len(),
            got: lambda.len(),
        });
    }
    let block = a.nx * a.ny;
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let shifts: Vec<_> = (0..a.cells())
        .map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    for (t, &l) in lambda.iter().enumerate() {
        let c = shifts[t / block];
        let e = lp.add_var(1.0, (0.0, f64::INFINITY));
        lp.add_constraint(&[(e, 1.0), (c, 1.0)], ComparisonOp::Ge, l);
        lp.add_constraint(&[(e, 1.0), (c, -1.0)], ComparisonOp::Ge, -l);
    }
    let all: Vec<_> = shifts.iter().map(|&c| (c, 1.0)).collect();
    lp.add_constraint(all.as_slice(), ComparisonOp::Eq, 0.0);
    let sol = lp
        .solve()
        .map_err(|e| Error::MalformedProblem(format!("rebalancing: {e}")))?;
    let out: Vec<f64> = lambda
        .iter()
        .enumerate()
        .map(|(t, &l)| l - sol[shifts[t / block]])
        .collect();
    // Keep the original if the LP did not help.
    let norm = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
    Ok(if norm(&out) < norm(lambda) { out } else { lambda.to_vec() })
}

pub fn solve_bit_distance(b: &Behavior, f: &KeyFunction, level: Level) -> Result<DistanceBound> {
    let s = solver_structure(&b.alphabets(), level)?;
    solve_bit_distance_with(b, f, &s, &SolverOptions::default())
}

pub fn solve_bit_distance_with(
    b: &Behavior,
    f: &KeyFunction,
    s: &NpaStructure,
    opts: &SolverOptions,
) -> Result<DistanceBound> {
    let level = s.level.unwrap_or(Level::Two);
    let prog = build_bit_distance_program(b, f, s)?;
    let mut solved = solve_program(&prog, opts)?;
    let raw = 0.5 * solved.bound;
    let distance = clamp_into(raw, 0.0, 0.5, &mut solved.diagnostics);
    if (raw - distance).abs() <= 1e-6 {
        solved.diagnostics.clamped = false;
    }
    let certificate = make_certificate(CertificateKind::BitDistance, level, b, f, s, &solved, raw);
    Ok(DistanceBound {
        distance,
        certificate,
        level,
        diagnostics: solved.diagnostics,
    })
}
