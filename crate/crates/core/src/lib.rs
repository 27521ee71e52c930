//! Uncertainty market simulator.
//!
//! Agents hold decomposed epistemic uncertainty along perceptual, semantic and
//! inferential dimensions and trade it toward whoever resolves it cheapest. A
//! Thompson-sampling broker picks the handler for each task, and the harness
//! runs whole episodes against Agora or one of the baseline routing strategies.

pub mod agents;
pub mod baselines;
pub mod broker;
pub mod gateway;
pub mod harness;
pub mod market;
pub mod rng;
pub mod uncertainty;
