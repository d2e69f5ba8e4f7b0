use serde::Serialize;

use super::epsilon::{
    chain_rule, eps_filter, eps_robust, ir_error_bound, key_rate, pa_distance, penalized_guess,
    post_selection_factor, post_selection_factor_exact, Epsilon, PenalizedGuess,
};
use super::params::ProtocolParams;
use crate::behavior::Behavior;
use crate::error::{Error, Result};
use crate::guess::{evaluate_certificate, CertificateKind, DualCertificate};

/// Finite-key security figures of one parameter set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecurityReport {
    pub seed: u64,
    pub n: u64,
    /// `(1-k)^2 p n`, rounded down.
    pub n_key: u64,
    /// Per-round guessing bound at the reference behavior.
    pub p_guess_ref: f64,
    pub p_guess_penalized: PenalizedGuess,
    pub h_min_certified: f64,
    /// Min-entropy after the reconciliation message.
    pub h_residual: f64,
    pub m: u64,
    pub key_length: u64,
    /// Largest key length with a non-negative residual entropy margin.
    pub s_max: u64,
    pub no_key: bool,
    /// `key_length / n`.
    pub key_rate: f64,
    /// `-log2 p_guess_ref - h(delta_max)`.
    pub asymptotic_rate: Option<f64>,
    pub eps_pe: Epsilon,
    pub eps_robust: Epsilon,
    pub eps_ir: Epsilon,
    pub d_pa: Epsilon,
    /// `d_pa + eps_ir + eps_pe` against collective attacks.
    pub eps_iid: Epsilon,
    /// `log2 (n+1)^(d^2-1)`.
    pub g_factor_log2: f64,
    /// `log2 binom(n+d^2-1, n)`.
    pub g_factor_exact_log2: f64,
    /// `eps_iid` times the post-selection factor.
    pub eps_total: Epsilon,
    pub reference_hash: String,
}

/// Assembles the error terms for a run accepted against `certificate`,
/// with `b` the reference behavior defining the accept set.
pub fn security_report(
    b: &Behavior,
    params: &ProtocolParams,
    certificate: &DualCertificate,
) -> Result<SecurityReport> {
    let a = b.alphabets();
    params.validate_for(&a)?;
    if certificate.kind != CertificateKind::Guess {
        return Err(Error::CertificateKind {
            expected: CertificateKind::Guess.name(),
            got: certificate.kind.name(),
        });
    }
    let p_ref = evaluate_certificate(certificate, b)?;
    let penalized = penalized_guess(certificate, p_ref, params.eta, &a)?;
    let n_key = params.key_round_floor().floor() as u64;
    let h_min = if penalized.value >= 1.0 {
        0.0
    } else {
        -(n_key as f64) * penalized.value.log2()
    };
    let h_residual = chain_rule(h_min, params.m);
    let s_max = if h_residual > 0.0 { h_residual.floor() as u64 } else { 0 };

    let eps_pe = eps_filter(params, &a)?;
    let eps_ir = ir_error_bound(n_key, params.delta_max, params.kappa, params.m)?;
    let d_pa = pa_distance(h_residual, params.s);
    let eps_iid = Epsilon::sum(&[d_pa, eps_ir, eps_pe]);
    let g = post_selection_factor(params.n, &a);
    let asymptotic_rate = if params.delta_max <= 0.5 && p_ref > 0.0 {
        key_rate(p_ref.min(1.0), params.delta_max).ok()
    } else {
        None
    };
    Ok(SecurityReport {
        seed: params.seed,
        n: params.n,
        n_key,
        p_guess_ref: p_ref,
        p_guess_penalized: penalized,
        h_min_certified: h_min,
        h_residual,
        m: params.m,
        key_length: params.s,
        s_max,
        no_key: s_max == 0,
        key_rate: if params.n == 0 { 0.0 } else { params.s as f64 / params.n as f64 },
        asymptotic_rate,
        eps_pe,
        eps_robust: eps_robust(params, &a)?,
        eps_ir,
        d_pa,
        eps_iid,
        g_factor_log2: g,
        g_factor_exact_log2: post_selection_factor_exact(params.n, &a),
        eps_total: eps_iid.scaled(g),
        reference_hash: certificate.meta.behavior_hash.clone(),
    })
}
