//! Double-oracle training of adversarial models.
//!
//! Two players (generator vs discriminator, or attacker vs classifier) take
//! turns producing best responses through a small differentiable
//! architecture search. Their pure strategies populate a restricted
//! zero-sum meta-game whose mixed equilibrium is solved exactly.

pub mod at;
pub mod diffnet;
pub mod double_oracle;
pub mod error;
pub mod gan;
pub mod harness;
pub mod metagame;
pub mod metrics;
pub mod rng;
pub mod supernet;
pub mod tensor;

pub use error::{Error, Result};
