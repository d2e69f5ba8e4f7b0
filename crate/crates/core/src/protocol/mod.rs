//! Round simulation, parameter estimation, reconciliation, privacy
//! amplification and the finite-key error budget.

pub mod epsilon;
pub mod estimation;
pub mod params;
pub mod reconcile;
pub mod report;
pub mod simulate;
pub mod toeplitz;

pub use epsilon::{
    binary_entropy, chain_rule, eps_filter, eps_robust, ir_error_bound, key_rate, pa_distance,
    penalized_guess, post_selection_factor, post_selection_factor_exact, Epsilon, PenalizedGuess,
};
pub use estimation::{accept_set_distance, parameter_estimation, AbortReason, Estimation};
pub use params::ProtocolParams;
pub use reconcile::{decode, reconcile, syndrome, Decoded, Reconciliation, MAX_RECONCILE_BITS};
pub use report::{security_report, SecurityReport};
pub use simulate::{simulate_rounds, RoundTag, Transcript};
pub use toeplitz::{toeplitz_hash, Bits, HashSeed};
