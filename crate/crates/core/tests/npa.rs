mod common;

use std::collections::BTreeSet;

use common::{all_letters, brute_canonical, brute_moment_key, min_eigenvalue, moment_matrix, ALICE_DEG, BOB_DEG};
use diqkd::behavior::{singlet_behavior, Alphabets, MeasurementAngles};
use diqkd::npa::*;
use diqkd::sdp::{solve, SdpProblem};
use proptest::prelude::*;

fn chsh() -> Alphabets {
    Alphabets::new(2, 2, 2, 2).unwrap()
}

fn ekert() -> Alphabets {
    Alphabets::new(2, 2, 2, 3).unwrap()
}

const LEVELS: [Level; 3] = [Level::One, Level::OneAB, Level::Two];

/// All words of length at most `len` over `letters`.
fn all_words(letters: &[Letter], len: usize) -> Vec<Vec<Letter>> {
    let mut out = vec![Vec::new()];
    let mut layer = vec![Vec::new()];
    for _ in 0..len {
        let mut next = Vec::new();
        for w in &layer {
            for &l in letters {
                let mut w2: Vec<Letter> = w.clone();
                w2.push(l);
                next.push(w2);
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

/// Nonzero normal forms of every letter product of length at most 2, or
/// of single letters and Alice-Bob pairs for the intermediate level.
fn brute_word_count(a: &Alphabets, level: Level) -> usize {
    let letters = all_letters(a);
    let candidates: Vec<Vec<Letter>> = match level {
        Level::One => all_words(&letters, 1),
        Level::Two => all_words(&letters, 2),
        Level::OneAB => {
            let mut c = all_words(&letters, 1);
            for &x in letters.iter().filter(|l| l.party == ALICE) {
                for &y in letters.iter().filter(|l| l.party == BOB) {
                    c.push(vec![x, y]);
                }
            }
            c
        }
    };
    candidates
        .iter()
        .filter_map(|w| brute_canonical(w))
        .collect::<BTreeSet<_>>()
        .len()
}

#[test]
fn word_counts() {
    assert_eq!(build_words(&chsh(), Level::One).unwrap().len(), 9);
    assert_eq!(build_words(&ekert(), Level::One).unwrap().len(), 11);
    assert_eq!(build_words(&chsh(), Level::OneAB).unwrap().len(), 25);
    for a in [chsh(), ekert()] {
        for level in LEVELS {
            assert_eq!(build_words(&a, level).unwrap().len(), brute_word_count(&a, level), "{level:?}");
        }
    }
}

#[test]
fn words_are_ordered_and_canonical() {
    for level in LEVELS {
        let words = build_words(&ekert(), level).unwrap();
        assert!(words[0].is_empty());
        for pair in words.windows(2) {
            assert!(pair[0] < pair[1]);
            assert!(pair[0].len() <= pair[1].len());
        }
        for w in &words {
            assert_eq!(brute_canonical(w.letters()).as_deref(), Some(w.letters()));
        }
    }
}

#[test]
fn canonicalizer_agrees_with_brute_force() {
    let letters = all_letters(&chsh());
    for w in all_words(&letters, 4) {
        let ours = canonicalize(&w).map(|c| c.0);
        assert_eq!(ours, brute_canonical(&w), "{w:?}");
    }
}

#[test]
fn classes_agree_with_brute_force() {
    for a in [chsh(), ekert()] {
        for level in LEVELS {
            for basis in [WordBasis::Full, WordBasis::Reduced] {
                let s = NpaStructure::for_level(&a, level, basis).unwrap();
                let mut keys = BTreeSet::new();
                let mut zeros = 0;
                for i in 0..s.dim {
                    for j in i..s.dim {
                        match brute_moment_key(&s.words[i], &s.words[j]) {
                            Some(k) => {
                                keys.insert(k);
                            }
                            None => zeros += 1,
                        }
                    }
                }
                assert_eq!(s.classes.len(), keys.len(), "{level:?} {basis:?}");
                assert_eq!(s.zero_entries.len(), zeros, "{level:?} {basis:?}");
                let report = hermitian_closure_check(&s);
                assert!(report.is_consistent(), "{:?}", report.issues);
                assert_eq!(report.class_count, keys.len());
            }
        }
    }
}

#[test]
fn orthogonal_entries_are_zero() {
    let s = NpaStructure::for_level(&chsh(), Level::One, WordBasis::Full).unwrap();
    let pos = |w: OperatorWord| s.words.iter().position(|x| *x == w).unwrap();
    for u in 0..2 {
        let i = pos(OperatorWord(vec![Letter::alice(u, 0)]));
        let j = pos(OperatorWord(vec![Letter::alice(u, 1)]));
        assert!(s.zero_entries.contains(&(i.min(j), i.max(j))));
        assert_eq!(s.class_of(i, j), None);
    }
}

#[test]
fn structure_is_symmetric() {
    let s = NpaStructure::for_level(&ekert(), Level::Two, WordBasis::Full).unwrap();
    for i in 0..s.dim {
        for j in 0..s.dim {
            assert_eq!(s.class_of(i, j), s.class_of(j, i));
        }
    }
    let pos = |w: OperatorWord| s.words.iter().position(|x| *x == w).unwrap();
    let e = pos(OperatorWord(vec![Letter::alice(1, 0)]));
    let f = pos(OperatorWord(vec![Letter::bob(2, 1)]));
    assert!(s.class_of(e, f).is_some());
    assert_eq!(s.class_of(e, f), s.class_of(f, e));
}

#[test]
fn probability_entries() {
    let s = NpaStructure::for_level(&ekert(), Level::OneAB, WordBasis::Full).unwrap();
    assert_eq!(s.prob_entries.len(), 24);
    for (&[u, v, x, y], &(i, j)) in &s.prob_entries {
        assert_eq!(s.words[i].letters(), &[Letter::alice(u, x)]);
        assert_eq!(s.words[j].letters(), &[Letter::bob(v, y)]);
    }
    let reduced = NpaStructure::for_level(&ekert(), Level::OneAB, WordBasis::Reduced).unwrap();
    assert_eq!(reduced.prob_entries.len(), 6);
}

#[test]
fn dimension_matches_word_count() {
    let s = NpaStructure::for_level(&chsh(), Level::One, WordBasis::Full).unwrap();
    assert_eq!(s.dim, 9);
    assert_eq!(s.dim, s.words.len());
}

/// The explicit moment matrix of a two-qubit realization satisfies every
/// constraint of the structure and is positive semidefinite.
#[test]
fn density_matrix_moments_satisfy_structure() {
    for level in LEVELS {
        for basis in [WordBasis::Full, WordBasis::Reduced] {
            let s = NpaStructure::for_level(&ekert(), level, basis).unwrap();
            for rho in [0.0, 0.1, 0.6] {
                let b = singlet_behavior(rho, &MeasurementAngles::ekert()).unwrap();
                let g = moment_matrix(&s.words, rho, &ALICE_DEG, &BOB_DEG, true);
                for class in &s.classes {
                    let (ri, rj) = class.entries[0];
                    for &(i, j) in &class.entries {
                        assert!((g[(i, j)] - g[(ri, rj)]).abs() < 1e-10);
                        assert!((g[(j, i)] - g[(ri, rj)]).abs() < 1e-10);
                    }
                }
                for &(i, j) in &s.zero_entries {
                    assert!(g[(i, j)].abs() < 1e-10);
                }
                for rel in &s.completeness {
                    let sum: f64 = rel
                        .terms
                        .iter()
                        .map(|&(c, coef)| {
                            let (i, j) = s.representative(c);
                            coef as f64 * g[(i, j)]
                        })
                        .sum();
                    assert!(sum.abs() < 1e-10);
                }
                for (&[u, v, x, y], &(i, j)) in &s.prob_entries {
                    assert!((g[(i, j)] - b.get(u, v, x, y)).abs() < 1e-10);
                }
                // Every table entry, explicit or not, through the functional.
                let a = b.alphabets();
                for t in 0..a.table_len() {
                    let (u, v, x, y) = a.unindex(t);
                    let val: f64 = s
                        .probability_functional(u, v, x, y)
                        .unwrap()
                        .iter()
                        .map(|&(c, coef)| {
                            let (i, j) = s.representative(c);
                            coef * g[(i, j)]
                        })
                        .sum();
                    assert!((val - b.table()[t]).abs() < 1e-10);
                }
                let (ii, jj) = s.identity_entry.unwrap();
                assert!((g[(ii, jj)] - 1.0).abs() < 1e-12);
                assert!(min_eigenvalue(&g) >= -1e-10);
            }
        }
    }
}

/// Feeds the structure and the Tsirelson table to the solver with a zero
/// objective; a solution is a positive semidefinite completion.
#[test]
fn tsirelson_table_has_a_completion() {
    let a = chsh();
    let s = NpaStructure::for_level(&a, Level::One, WordBasis::Full).unwrap();
    let b = singlet_behavior(0.0, &MeasurementAngles::ekert_chsh()).unwrap();
    let mut p = SdpProblem::new(vec![s.dim]);
    for class in &s.classes {
        let (ri, rj) = class.entries[0];
        for &(i, j) in &class.entries[1..] {
            p.add_constraint(vec![(0, i, j, 1.0), (0, ri, rj, -1.0)], 0.0);
        }
    }
    for &(i, j) in &s.zero_entries {
        p.add_constraint(vec![(0, i, j, 1.0)], 0.0);
    }
    for rel in &s.completeness {
        let terms = rel
            .terms
            .iter()
            .map(|&(c, coef)| {
                let (i, j) = s.representative(c);
                (0, i, j, coef as f64)
            })
            .collect();
        p.add_constraint(terms, 0.0);
    }
    for (&[u, v, x, y], &(i, j)) in &s.prob_entries {
        p.add_constraint(vec![(0, i, j, 1.0)], b.get(u, v, x, y));
    }
    let (ii, jj) = s.identity_entry.unwrap();
    p.add_constraint(vec![(0, ii, jj, 1.0)], 1.0);
    let sol = solve(&p, 1e-8).unwrap();
    assert!(sol.residuals < 1e-7);
    assert!(sol.min_eigenvalues[0] >= -1e-8);
    for (&[u, v, x, y], &(i, j)) in &s.prob_entries {
        assert!((sol.primal_blocks[0][(i, j)] - b.get(u, v, x, y)).abs() < 1e-7);
    }
}

#[test]
fn empty_word_list_is_flagged() {
    match build_structure(&[], &chsh()) {
        Err(_) => {}
        Ok(s) => assert!(!hermitian_closure_check(&s).is_consistent()),
    }
}

#[test]
fn non_canonical_words_are_rejected() {
    let unsorted = OperatorWord(vec![Letter::bob(0, 0), Letter::alice(0, 0)]);
    assert!(build_structure(&[OperatorWord::identity(), unsorted], &chsh()).is_err());
    let dup = vec![OperatorWord::identity(), OperatorWord::identity()];
    assert!(build_structure(&dup, &chsh()).is_err());
    let outside = OperatorWord(vec![Letter::alice(5, 0)]);
    assert!(build_structure(&[OperatorWord::identity(), outside], &chsh()).is_err());
}

#[test]
fn unsupported_level() {
    assert!(Level::parse("3").is_err());
    assert_eq!(Level::parse("1+AB").unwrap(), Level::OneAB);
}

#[test]
fn generation_is_deterministic() {
    for level in LEVELS {
        let a = NpaStructure::for_level(&ekert(), level, WordBasis::Full).unwrap();
        let b = NpaStructure::for_level(&ekert(), level, WordBasis::Full).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }
}

fn letter() -> impl Strategy<Value = Letter> {
    (0u8..2, 0usize..3, 0usize..2).prop_map(|(p, i, o)| {
        if p == 0 {
            Letter::alice(i, o)
        } else {
            Letter::bob(i, o)
        }
    })
}

proptest! {
    #[test]
    fn canonicalization_is_idempotent(w in prop::collection::vec(letter(), 0..8)) {
        if let Some(c) = canonicalize(&w) {
            prop_assert_eq!(canonicalize(&c.0), Some(c.clone()));
            prop_assert_eq!(c.canonical(), Some(c));
        }
    }

    #[test]
    fn canonicalization_agrees_with_brute_force(w in prop::collection::vec(letter(), 0..7)) {
        prop_assert_eq!(canonicalize(&w).map(|c| c.0), brute_canonical(&w));
    }
}
