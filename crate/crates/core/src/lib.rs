//! Causal strategic linear regression.
//!
//! Agents with features `x` best-respond to a published linear rule `ω` by
//! moving to `x + Gω` (with `G = MMᵀV`); outcomes follow `y = ω*ᵀx_g + η`. The
//! decision-maker only ever publishes rules and observes `(V x_g, ωᵀ V x_g, y)`
//! through [`RoundProtocol`]. On top of that protocol this crate provides
//!
//! * [`outcomes`]: probing for the outcome-maximizing rule,
//! * [`risk`]: risk decomposition, the relaxed risk oracle and a zeroth-order
//!   minimizer,
//! * [`recovery`]: experiment design for recovering `ω*` by least squares.

pub mod error;
pub mod estimators;
pub mod fixtures;
pub mod model;
pub mod outcomes;
pub mod recovery;
pub mod risk;
pub mod rng;
pub mod scenario_file;

pub use error::{Error, Result};
pub use model::{
    DecisionRule, EnvHandle, FeatureDistribution, MixtureAtom, RoundBatch, RoundProtocol,
    ScenarioSpec,
};
