//! Reference implementations used as oracles by the integration tests.
//! Nothing here calls into the crate's generators or canonicalizer.
#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use diqkd::behavior::Alphabets;
use diqkd::guess::{CertificateKind, DualCertificate};
use diqkd::npa::{Letter, NpaStructure, OperatorWord, ALICE};
use diqkd::sdp::{solve, LinearFunctional, SdpProblem, SolveError};
use nalgebra::{DMatrix, Matrix2, Matrix4, Vector2, Vector4};

pub const ALICE_DEG: [f64; 2] = [45.0, 0.0];
pub const BOB_DEG: [f64; 3] = [22.5, 67.5, 45.0];

/// Projector of a polarizer at `deg` onto outcome 0 (pass) or 1 (block).
pub fn polarizer(deg: f64, outcome: usize) -> Matrix2<f64> {
    let t = deg.to_radians();
    let v = match outcome {
        0 => Vector2::new(t.cos(), t.sin()),
        _ => Vector2::new(-t.sin(), t.cos()),
    };
    v * v.transpose()
}

/// `(1 - rho) |psi-><psi-| + rho I/4`.
pub fn werner(rho: f64) -> Matrix4<f64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let psi = Vector4::new(0.0, s, -s, 0.0);
    (psi * psi.transpose()) * (1.0 - rho) + Matrix4::identity() * (rho / 4.0)
}

pub fn kron(a: &Matrix2<f64>, b: &Matrix2<f64>) -> Matrix4<f64> {
    let mut out = Matrix4::zeros();
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    out[(2 * i + k, 2 * j + l)] = a[(i, j)] * b[(k, l)];
                }
            }
        }
    }
    out
}

/// `tr(rho (Pi_a^x ⊗ Pi_b^y'))` in `(u,v,x,y)` order, where `y'` is Bob's
/// raw outcome (inverted when `flip` is set).
pub fn density_behavior(rho: f64, alice: &[f64], bob: &[f64], flip: bool) -> Vec<f64> {
    let state = werner(rho);
    let mut out = Vec::new();
    for &a in alice {
        for &b in bob {
            for x in 0..2 {
                for y in 0..2 {
                    let raw = if flip { 1 - y } else { y };
                    let op = kron(&polarizer(a, x), &polarizer(b, raw));
                    out.push((state * op).trace());
                }
            }
        }
    }
    out
}

/// The operator a letter stands for on the two-qubit space.
pub fn letter_operator(l: &Letter, alice: &[f64], bob: &[f64], flip: bool) -> Matrix4<f64> {
    let id = Matrix2::identity();
    if l.party == ALICE {
        kron(&polarizer(alice[l.input as usize], l.outcome as usize), &id)
    } else {
        let raw = if flip { 1 - l.outcome as usize } else { l.outcome as usize };
        kron(&id, &polarizer(bob[l.input as usize], raw))
    }
}

pub fn word_operator(w: &OperatorWord, alice: &[f64], bob: &[f64], flip: bool) -> Matrix4<f64> {
    w.letters()
        .iter()
        .fold(Matrix4::identity(), |acc, l| acc * letter_operator(l, alice, bob, flip))
}

/// `Gamma_ij = tr(rho O_i^T O_j)` computed by explicit matrix products.
pub fn moment_matrix(words: &[OperatorWord], rho: f64, alice: &[f64], bob: &[f64], flip: bool) -> DMatrix<f64> {
    let state = werner(rho);
    let ops: Vec<Matrix4<f64>> = words.iter().map(|w| word_operator(w, alice, bob, flip)).collect();
    let n = words.len();
    DMatrix::from_fn(n, n, |i, j| (state * ops[i].transpose() * ops[j]).trace())
}

fn annihilates(w: &[Letter]) -> bool {
    w.windows(2)
        .any(|p| p[0].party == p[1].party && p[0].input == p[1].input && p[0].outcome != p[1].outcome)
}

fn key(w: &[Letter]) -> (usize, Vec<Letter>) {
    (w.len(), w.to_vec())
}

/// Explores every word reachable by swapping neighbours of different
/// parties and merging equal neighbours. Returns `None` when some
/// reachable word has two orthogonal projectors side by side, else the
/// shortest, then lexicographically least, reachable word.
pub fn brute_canonical(w: &[Letter]) -> Option<Vec<Letter>> {
    let mut seen: BTreeSet<Vec<Letter>> = BTreeSet::new();
    let mut queue = VecDeque::new();
    seen.insert(w.to_vec());
    queue.push_back(w.to_vec());
    while let Some(cur) = queue.pop_front() {
        if annihilates(&cur) {
            return None;
        }
        let mut next = Vec::new();
        for i in 0..cur.len().saturating_sub(1) {
            if cur[i].party != cur[i + 1].party {
                let mut s = cur.clone();
                s.swap(i, i + 1);
                next.push(s);
            } else if cur[i] == cur[i + 1] {
                let mut s = cur.clone();
                s.remove(i);
                next.push(s);
            }
        }
        for s in next {
            if seen.insert(s.clone()) {
                queue.push_back(s);
            }
        }
    }
    seen.into_iter().min_by_key(|s| key(s))
}

/// Moment identity of `O_i^dag O_j`: the brute-force normal form, merged
/// with that of its adjoint.
pub fn brute_moment_key(wi: &OperatorWord, wj: &OperatorWord) -> Option<Vec<Letter>> {
    let mut prod: Vec<Letter> = wi.letters().iter().rev().cloned().collect();
    prod.extend_from_slice(wj.letters());
    let nf = brute_canonical(&prod)?;
    let rev: Vec<Letter> = nf.iter().rev().cloned().collect();
    let adj = brute_canonical(&rev).expect("adjoint of a nonzero word is nonzero");
    Some(std::cmp::min_by_key(nf, adj, |s| key(s)))
}

/// Every letter of the alphabets with all outcomes explicit.
pub fn all_letters(a: &Alphabets) -> Vec<Letter> {
    let mut out = Vec::new();
    for u in 0..a.nu {
        for x in 0..a.nx {
            out.push(Letter::alice(u, x));
        }
    }
    for v in 0..a.nv {
        for y in 0..a.ny {
            out.push(Letter::bob(v, y));
        }
    }
    out
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Largest value of `target(Gamma) - lambda . P(Gamma)` over the relaxation
/// of the certificate's level. Returns the dual value of a fresh solve, an
/// upper bound on that maximum. A valid certificate gives a value at most
/// zero, up to solver tolerance.
///
/// Guessing certificates get one block per key value; bit certificates get
/// `S+ = G + D` and `S- = G - D`, with target `P . sign(f) D`.
pub fn certificate_excess(c: &DualCertificate) -> f64 {
    let s = NpaStructure::for_level(&c.alphabets, c.level, c.meta.basis).unwrap();
    let a = c.alphabets;
    let blocks = match c.kind {
        CertificateKind::Guess => c.target.range,
        CertificateKind::BitDistance => 2,
    };
    let mut p = SdpProblem::new(vec![s.dim; blocks]);
    for blk in 0..blocks {
        for class in &s.classes {
            let (ri, rj) = class.entries[0];
            for &(i, j) in &class.entries[1..] {
                p.add_constraint(vec![(blk, i, j, 1.0), (blk, ri, rj, -1.0)], 0.0);
            }
        }
        for &(i, j) in &s.zero_entries {
            p.add_constraint(vec![(blk, i, j, 1.0)], 0.0);
        }
        for rel in &s.completeness {
            let terms = rel
                .terms
                .iter()
                .map(|&(cl, coef)| {
                    let (i, j) = s.representative(cl);
                    (blk, i, j, coef as f64)
                })
                .collect();
            p.add_constraint(terms, 0.0);
        }
    }
    // Weight of each block in the observed marginal.
    let w = match c.kind {
        CertificateKind::Guess => 1.0,
        CertificateKind::BitDistance => 0.5,
    };
    let (ii, jj) = s.identity_entry.unwrap();
    p.add_constraint((0..blocks).map(|b| (b, ii, jj, w)).collect(), 1.0);
    let mut obj = Vec::new();
    for t in 0..a.table_len() {
        let (u, v, x, y) = a.unindex(t);
        for (cl, coef) in s.probability_functional(u, v, x, y).unwrap() {
            let (i, j) = s.representative(cl);
            for b in 0..blocks {
                obj.push((b, i, j, -c.lambda[t] * coef * w));
            }
        }
    }
    for x in 0..a.nx {
        let z = c.target.map[x];
        for (cl, coef) in s.moment_functional(&[Letter::alice(c.target.input, x)]).unwrap() {
            let (i, j) = s.representative(cl);
            match c.kind {
                CertificateKind::Guess => obj.push((z, i, j, coef)),
                CertificateKind::BitDistance => {
                    let sign = if z == 0 { 1.0 } else { -1.0 };
                    // D = (S+ - S-)/2.
                    obj.push((0, i, j, 0.5 * sign * coef));
                    obj.push((1, i, j, -0.5 * sign * coef));
                }
            }
        }
    }
    p.objective = LinearFunctional::from_terms(obj);
    match solve(&p, 1e-8) {
        Ok(sol) => sol.dual_value,
        Err(SolveError::MaxIterations { best, .. }) => best.dual_value,
        Err(e) => panic!("excess program: {e}"),
    }
}
