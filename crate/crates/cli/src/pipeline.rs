//! The `simulate` command: rounds, estimation, reconciliation, hashing.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Args;
use diqkd::guess::KeyFunction;
use diqkd::npa::Level;
use diqkd::protocol::{
    binary_entropy, parameter_estimation, reconcile, security_report, simulate_rounds,
    toeplitz_hash, Bits, HashSeed, ProtocolParams, MAX_RECONCILE_BITS,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::cache::CertCache;
use crate::{emit, read_behavior, SourceArgs};

/// Largest simulated round count.
const MAX_ROUNDS: u64 = 10_000_000;
/// Largest `key bits x output bits` product for which the final hash is computed.
const MAX_HASH_WORK: f64 = 4e9;
/// Security margin, in bits, behind the default `m` and `s`.
const DEFAULT_MARGIN_BITS: f64 = 40.0;
/// Keeps the reconciliation stream apart from the round stream.
const RECONCILE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Args)]
pub struct SimulateArgs {
    /// Behavior JSON file of the devices; a preset is used without it.
    #[arg(long)]
    behavior: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0, conflicts_with = "behavior")]
    rho: f64,
    #[command(flatten)]
    source: SourceArgs,
    /// Behavior defining the accept set; defaults to the device behavior.
    #[arg(long, conflicts_with = "reference_rho")]
    reference: Option<PathBuf>,
    /// Preset noise level of the reference behavior.
    #[arg(long)]
    reference_rho: Option<f64>,
    /// Box radius of the robust reference certificate; defaults to
    /// `|U||V| eta`, the radius the entropy penalty charges.
    #[arg(long)]
    cert_radius: Option<f64>,
    #[arg(long, default_value_t = 100_000)]
    n: u64,
    #[arg(long, default_value_t = 0.2)]
    k: f64,
    #[arg(long, default_value_t = 0.9)]
    p: f64,
    #[arg(long, default_value_t = 0.01)]
    eta: f64,
    #[arg(long, default_value_t = 0.02)]
    delta_max: f64,
    #[arg(long, default_value_t = 0.05)]
    kappa: f64,
    /// Reconciliation bits; defaults to `n_key h(delta_max + kappa)` plus a margin.
    #[arg(long)]
    m: Option<u64>,
    /// Final key bits; defaults to the residual entropy less twice the margin.
    #[arg(long)]
    s: Option<u64>,
    #[arg(long)]
    guess_threshold: Option<f64>,
    #[arg(long, default_value_t = 0)]
    key_alice: usize,
    /// Bob's key input; defaults to his third input when he has one.
    #[arg(long)]
    key_bob: Option<usize>,
    #[arg(long, default_value = "2", value_parser = crate::parse_level)]
    level: Level,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Block length of the coset-search reconciliation.
    #[arg(long, default_value_t = 16)]
    block_bits: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the transcript here.
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[arg(long, env = "DIQKD_CERT_DIR")]
    cert_dir: Option<PathBuf>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn key_digest(bits: &Bits) -> String {
    let bytes: Vec<u8> = bits
        .chunks(8)
        .map(|c| c.iter().by_vals().enumerate().fold(0u8, |a, (i, b)| a | ((b as u8) << i)))
        .collect();
    hex(&Sha256::digest(&bytes))
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<ExitCode> {
    if args.n > MAX_ROUNDS {
        bail!("simulation is limited to {MAX_ROUNDS} rounds");
    }
    if args.block_bits == 0 || args.block_bits > MAX_RECONCILE_BITS {
        bail!("block length must lie in 1..={MAX_RECONCILE_BITS}");
    }
    let device = match &args.behavior {
        Some(p) => read_behavior(p)?,
        None => args.source.behavior(args.rho)?,
    };
    let reference = match (&args.reference, args.reference_rho) {
        (Some(p), _) => read_behavior(p)?,
        (None, Some(r)) => args.source.behavior(r)?,
        (None, None) => device.clone(),
    };
    let a = device.alphabets();
    if reference.alphabets() != a {
        bail!("reference and device behaviors have different alphabets");
    }

    let mut params = ProtocolParams {
        n: args.n,
        k: args.k,
        p: args.p,
        eta: args.eta,
        delta_max: args.delta_max,
        kappa: args.kappa,
        m: 0,
        s: 0,
        level: args.level,
        seed: args.seed,
        key_alice: args.key_alice,
        key_bob: args.key_bob.unwrap_or(if a.nv > 2 { 2 } else { 0 }),
        guess_threshold: args.guess_threshold,
    };
    params.validate_for(&a)?;

    let cache = CertCache::new(args.cert_dir.clone())?;
    let f = KeyFunction::identity(params.key_alice, a.nx);
    let radius = args.cert_radius.unwrap_or(a.cells() as f64 * params.eta);
    let cert = cache.guess(&reference, &f, args.level, radius)?.certificate;

    let transcript = simulate_rounds(&device, &params)?;
    if let Some(p) = &args.transcript {
        fs::write(p, transcript.to_json()?).with_context(|| format!("writing {}", p.display()))?;
    }
    let estimation = parameter_estimation(&transcript, &params, &cert)?;
    let head = json!({
        "seed": params.seed,
        "device_hash": device.content_hash(),
        "reference_hash": reference.content_hash(),
        "certificate_radius": radius,
        "certificate_l1_norm": cert.l1_norm,
    });
    if !estimation.accepted {
        let out = json!({
            "outcome": "abort",
            "run": head,
            "params": params,
            "estimation": estimation,
        });
        emit(args.out.as_deref(), &(serde_json::to_string_pretty(&out)? + "\n"))?;
        return Ok(ExitCode::from(2));
    }

    let n_key = params.key_round_floor().floor();
    params.m = match args.m {
        Some(m) => m,
        None => (n_key * binary_entropy(params.delta_max + params.kappa) + DEFAULT_MARGIN_BITS)
            .ceil()
            .min(params.n as f64) as u64,
    };
    params.s = match args.s {
        Some(s) => s,
        None => {
            let probe = security_report(&reference, &params, &cert)?;
            (probe.h_residual - 2.0 * DEFAULT_MARGIN_BITS).max(0.0).floor() as u64
        }
    };
    let report = security_report(&reference, &params, &cert)?;

    // Reconciliation runs block by block on the raw keys.
    let (alice, bob) = transcript.raw_keys()?;
    let block = args.block_bits;
    let syndrome_bits = ((block as f64 * binary_entropy(params.delta_max + params.kappa)).ceil() as usize + 2)
        .min(block);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ RECONCILE_STREAM);
    let mut corrected = Bits::with_capacity(alice.len());
    let (mut blocks, mut failures, mut raw_errors) = (0u64, 0u64, 0u64);
    for (xa, yb) in alice.chunks(block).zip(bob.chunks(block)) {
        let hs = HashSeed::random(xa.len(), syndrome_bits.min(xa.len()), &mut rng)?;
        let r = reconcile(xa, yb, &hs, &mut rng)?;
        blocks += 1;
        failures += u64::from(!r.success);
        raw_errors += xa.iter().by_vals().zip(yb.iter().by_vals()).filter(|(x, y)| x != y).count() as u64;
        corrected.extend_from_bitslice(&r.corrected);
    }

    let s = params.s as usize;
    let pa = if s == 0 || alice.is_empty() {
        json!({ "computed": false, "reason": "no key requested" })
    } else if alice.len() as f64 * s as f64 > MAX_HASH_WORK {
        json!({ "computed": false, "reason": "key too long to hash here" })
    } else {
        let hs = HashSeed::random(alice.len(), s, &mut rng)?;
        let ka = toeplitz_hash(&hs, &alice)?;
        let kb = toeplitz_hash(&hs, &corrected)?;
        json!({
            "computed": true,
            "key_bits": s,
            "keys_match": ka == kb,
            "key_sha256": key_digest(&ka),
        })
    };

    let out = json!({
        "outcome": "accept",
        "run": head,
        "params": params,
        "estimation": estimation,
        "report": report,
        "reconciliation": {
            "block_bits": block,
            "syndrome_bits": syndrome_bits,
            "raw_key_bits": alice.len(),
            "blocks": blocks,
            "failures": failures,
            "syndrome_bits_total": blocks * syndrome_bits as u64,
            "raw_errors": raw_errors,
        },
        "privacy_amplification": pa,
    });
    emit(args.out.as_deref(), &(serde_json::to_string_pretty(&out)? + "\n"))?;
    Ok(ExitCode::SUCCESS)
}
