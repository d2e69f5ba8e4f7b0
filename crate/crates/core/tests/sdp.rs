mod common;

use common::min_eigenvalue;
use diqkd::sdp::*;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

/// `max tr X` over 2x2 `X` with `X ⪯ I`.
fn trace_problem() -> SdpProblem {
    let mut p = SdpProblem::new(vec![2]);
    p.set_shift(0, PsdShift::upper(DMatrix::identity(2, 2)));
    p.objective = LinearFunctional::from_terms(vec![(0, 0, 0, 1.0), (0, 1, 1, 1.0)]);
    p
}

/// `max x1 + x2` with `x1 <= 1`, `x2 <= 2`, `x >= 0`, slacks as blocks 2, 3.
fn lp_problem() -> SdpProblem {
    let mut p = SdpProblem::new(vec![1, 1, 1, 1]);
    p.objective = LinearFunctional::from_terms(vec![(0, 0, 0, 1.0), (1, 0, 0, 1.0)]);
    p.add_constraint(vec![(0, 0, 0, 1.0), (2, 0, 0, 1.0)], 1.0);
    p.add_constraint(vec![(1, 0, 0, 1.0), (3, 0, 0, 1.0)], 2.0);
    p
}

#[derive(Deserialize)]
struct Reference {
    n: usize,
    c: Vec<Vec<f64>>,
    a: Vec<Vec<Vec<f64>>>,
    b: Vec<f64>,
    value: f64,
}

fn upper_terms(m: &[Vec<f64>]) -> Vec<(usize, usize, usize, f64)> {
    let mut t = Vec::new();
    for i in 0..m.len() {
        t.push((0, i, i, m[i][i]));
        for j in i + 1..m.len() {
            t.push((0, i, j, 2.0 * m[i][j]));
        }
    }
    t
}

fn reference() -> (SdpProblem, f64) {
    let text = include_str!("data/random_sdp5.json");
    let r: Reference = serde_json::from_str(text).unwrap();
    let mut p = SdpProblem::new(vec![r.n]);
    p.objective = LinearFunctional::from_terms(upper_terms(&r.c));
    for (a, b) in r.a.iter().zip(&r.b) {
        p.add_constraint(upper_terms(a), *b);
    }
    (p, r.value)
}

/// `A*(y) - C` assembled entry by entry, for problems without shifts.
fn slack(p: &SdpProblem, y: &[f64]) -> Vec<DMatrix<f64>> {
    let mut s: Vec<DMatrix<f64>> = p.blocks.iter().map(|&n| DMatrix::zeros(n, n)).collect();
    let mut add = |terms: &[(usize, usize, usize, f64)], w: f64| {
        for &(b, i, j, c) in terms {
            if i == j {
                s[b][(i, i)] += w * c;
            } else {
                s[b][(i, j)] += w * c / 2.0;
                s[b][(j, i)] += w * c / 2.0;
            }
        }
    };
    add(&p.objective.terms, -1.0);
    for (con, &yk) in p.constraints.iter().zip(y) {
        add(&con.functional.terms, yk);
    }
    s
}

#[test]
fn trace_bounded_by_identity() {
    let p = trace_problem();
    let sol = solve(&p, 1e-8).unwrap();
    assert!((sol.primal_value - 2.0).abs() < 1e-6);
    assert!(sol.gap <= 1e-7);
    let v = verify_dual_certificate(&p, &sol.dual_multipliers, 1e-9).unwrap();
    assert!(v.is_certified());
    assert!((v.certified_bound.unwrap() - 2.0).abs() < 1e-6);
    assert!(v.min_eigenvalue >= -1e-9);
}

#[test]
fn diagonal_lp() {
    let p = lp_problem();
    let sol = solve(&p, 1e-8).unwrap();
    assert!((sol.primal_value - 3.0).abs() < 1e-6);
    assert!((sol.dual_value - 3.0).abs() < 1e-6);
    assert!(sol.residuals < 1e-8);
    assert!(sol.min_eigenvalues.iter().all(|&e| e >= -1e-8));
    assert!((sol.gap - (sol.primal_value - sol.dual_value).abs()).abs() < 1e-15);
}

#[test]
fn random_problem_matches_reference_solver() {
    let (p, value) = reference();
    let sol = solve(&p, 1e-9).unwrap();
    assert!((sol.primal_value - value).abs() < 1e-6, "{} vs {value}", sol.primal_value);
    let v = verify_dual_certificate(&p, &sol.dual_multipliers, 1e-8).unwrap();
    assert!((v.certified_bound.unwrap() - value).abs() < 1e-6);
}

#[test]
fn zero_multipliers_are_rejected() {
    let p = lp_problem();
    let v = verify_dual_certificate(&p, &[0.0, 0.0], 1e-9).unwrap();
    assert!(!v.is_certified());
    assert!(v.min_eigenvalue < -0.5);
}

#[test]
fn wrong_multiplier_count() {
    assert!(verify_dual_certificate(&lp_problem(), &[1.0], 1e-9).is_err());
}

#[test]
fn perturbed_multipliers_follow_eigenvalue_sign() {
    let (p, _) = reference();
    let sol = solve(&p, 1e-9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut seen = (false, false);
    for _ in 0..40 {
        let y: Vec<f64> = sol
            .dual_multipliers
            .iter()
            .map(|y| y + rng.gen_range(-1e-3..1e-3))
            .collect();
        let v = verify_dual_certificate(&p, &y, 1e-9).unwrap();
        let own = min_eigenvalue(&slack(&p, &y)[0]);
        assert!((own - v.min_eigenvalue).abs() < 1e-9);
        assert_eq!(v.is_certified(), own >= -1e-9);
        if v.is_certified() {
            let bound: f64 = p.constraints.iter().zip(&y).map(|(c, y)| c.rhs * y).sum();
            assert!((v.certified_bound.unwrap() - bound).abs() < 1e-9);
            assert!(bound >= sol.primal_value - 1e-7);
            seen.0 = true;
        } else {
            seen.1 = true;
        }
    }
    // Optimal multipliers sit on the cone boundary, so both outcomes occur.
    assert!(seen.0 && seen.1, "{seen:?}");
}

#[test]
fn weak_duality_and_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..10 {
        let n = 3 + trial % 3;
        let sym = |rng: &mut ChaCha8Rng| {
            let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            (&m + m.transpose()) * 0.5
        };
        // Strictly feasible by construction: b = A(X0) with X0 positive definite.
        let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let x0 = &g * g.transpose() + DMatrix::identity(n, n);
        let mut p = SdpProblem::new(vec![n]);
        let to_rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..n).map(|i| (0..n).map(|j| m[(i, j)]).collect()).collect()
        };
        // Trace normalization keeps the primal bounded.
        p.add_constraint((0..n).map(|i| (0, i, i, 1.0)).collect(), x0.trace());
        for _ in 0..3 {
            let a = sym(&mut rng);
            p.add_constraint(upper_terms(&to_rows(&a)), (&a * &x0).trace());
        }
        p.objective = LinearFunctional::from_terms(upper_terms(&to_rows(&sym(&mut rng))));
        let s1 = solve(&p, 1e-8).unwrap();
        let s2 = solve(&p, 1e-8).unwrap();
        assert!(s1.dual_value >= s1.primal_value - 1e-7);
        assert_eq!(s1.primal_value.to_bits(), s2.primal_value.to_bits());
        assert_eq!(s1.dual_multipliers, s2.dual_multipliers);
        let own = min_eigenvalue(&slack(&p, &s1.dual_multipliers)[0]);
        assert!(own >= -1e-7);
    }
}

#[test]
fn infeasible_problem_fails() {
    let mut p = SdpProblem::new(vec![1]);
    p.objective = LinearFunctional::from_terms(vec![(0, 0, 0, 1.0)]);
    p.add_constraint(vec![(0, 0, 0, 1.0)], -1.0);
    assert!(solve(&p, 1e-8).is_err());
}

#[test]
fn malformed_problem_is_rejected() {
    let mut p = SdpProblem::new(vec![2]);
    p.add_constraint(vec![(0, 2, 0, 1.0)], 1.0);
    assert!(matches!(solve(&p, 1e-8), Err(SolveError::Malformed(_))));
    let mut q = SdpProblem::new(vec![2]);
    q.add_constraint(vec![(1, 0, 0, 1.0)], 1.0);
    assert!(q.check().is_err());
}

#[test]
fn problem_json_round_trip() {
    let (p, _) = reference();
    let back: SdpProblem = serde_json::from_str(&p.to_json().unwrap()).unwrap();
    assert_eq!(back, p);
}
