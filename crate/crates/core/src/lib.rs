//! Budget-constrained rollout control for RL with verifiable rewards.
//!
//! One shared per-step token budget drives two decisions:
//!
//! * **how many** rollouts each prompt receives, via a cost-weighted Neyman
//!   allocation whose budget dual is closed by bisection ([`allocator`]), fed
//!   by online per-prompt informativeness and length estimates ([`surrogate`]);
//! * **how long** each rollout runs, via a marker-gated abort with ε-keep
//!   importance reweighting ([`abortgate`]), aggregated into an
//!   importance-corrected, stratification-weighted update ([`estimator`]).
//!
//! [`simenv`] is a synthetic rollout environment with known ground truth,
//! [`oracle`] holds brute-force and Monte-Carlo verifiers that share no code
//! with the modules they check, and [`campaign`] runs the full per-step
//! controller over a prompt pool and writes per-step metrics. [`verify`] is
//! the acceptance check suite behind the `verify` subcommand.

pub mod abortgate;
pub mod allocator;
pub mod campaign;
pub mod error;
pub mod estimator;
pub mod oracle;
pub mod simenv;
pub mod stats;
pub mod stream;
pub mod surrogate;
pub mod types;
pub mod verify;

pub use error::{Error, Result};
pub use stream::{derive_stream, RolloutStream};
pub use types::{
    AllocationPlan, GateDecisionKind, PromptId, PromptState, RolloutOutcome, StepMetrics,
};
