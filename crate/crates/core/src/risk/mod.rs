//! Prediction-risk minimization under gaming.
//!
//! [`decomposition`] splits the exact risk into its static and gaming parts,
//! [`oracle`] implements the relaxed risk oracle (which swaps in the ungamed
//! risk whenever a rule underestimates outcomes), and [`zo`] drives a
//! zeroth-order minimizer against that oracle.

pub mod decomposition;
pub mod oracle;
pub mod zo;

pub use decomposition::{
    relaxed_risk_exact, risk_decomposition, ungamed_optimal_rule, ungamed_risk_exact,
    RiskDecomposition,
};
pub use oracle::{
    relaxed_risk_oracle, weighted_objective_oracle, Branch, OracleQuery, WeightedQuery,
};
pub use zo::{minimize_risk, QueryRole, RiskMinimization, TraceEntry, ZoOptConfig};
