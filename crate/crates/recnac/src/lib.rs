//! Recurrent natural actor-critic for finite partially observable MDPs.
//!
//! The crate implements the full stack needed to study recurrent policy
//! evaluation and policy optimization on small POMDPs:
//!
//! * [`pomdp`]: finite POMDP model, histories, trajectory sampling, and
//!   reference behavior policies (uniform, fixed-sequence, epsilon-greedy);
//! * [`features`]: embeddings of (observation, action) pairs into the unit
//!   ball of `R^d`;
//! * [`indrnn`]: independently-recurrent network `F_t` with exact
//!   forward-mode gradients, symmetric initialization, max-norm projection,
//!   linearization, and recurrent tangent features;
//! * [`oracle`]: exact belief-space values `Q_t`, `V_t`, advantages, and a
//!   performance-difference check, by enumeration or backward induction;
//! * [`rectd`]: recurrent temporal-difference policy evaluation with
//!   discounted semi-gradients, plus its exact mean-path variant;
//! * [`policy`]: softmax recurrent policies with shared prefix computation
//!   and score-function gradients;
//! * [`recnpg`]: natural policy gradient steps driven by a compatible
//!   function approximation fit to critic advantages;
//! * [`harness`]: experiment configs, sweeps, CSV emission, aggregation;
//! * [`verify`]: self-contained invariant checks runnable from the CLI.

pub mod error;
pub mod features;
pub mod harness;
pub mod indrnn;
pub mod oracle;
pub mod policy;
pub mod pomdp;
pub mod recnpg;
pub mod rectd;
pub mod verify;

pub use error::{Error, Result};
